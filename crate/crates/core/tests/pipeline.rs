use std::collections::BTreeMap;

use pathosynth::phantom::{phantom_subject, PhantomOptions};
use pathosynth::pipeline::{
    cotraining_iterator, generate_batch, generate_sample, plan_batch, severity_schedule, CotrainingSampler, GenConfig,
};

fn subject(anat: bool, pathol: bool) -> pathosynth::pipeline::LabeledSubject {
    let opts = PhantomOptions {
        dims: [20; 3],
        anat,
        pathol,
        ..PhantomOptions::default()
    };
    phantom_subject("s", "d", &opts).unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn same_seed_same_sample() {
    let s = subject(true, true);
    let cfg = GenConfig::default();
    let a = generate_sample(&s, 0.6, 99, &cfg).unwrap();
    let b = generate_sample(&s, 0.6, 99, &cfg).unwrap();
    assert_eq!(bits(a.image.data()), bits(b.image.data()));
    assert_eq!(a.labels, b.labels);
    assert_eq!(bits(a.pathology.data()), bits(b.pathology.data()));
    assert_eq!(a.draw, b.draw);
    let c = generate_sample(&s, 0.6, 100, &cfg).unwrap();
    assert_ne!(bits(a.image.data()), bits(c.image.data()));
}

#[test]
fn outputs_are_in_range_and_aligned() {
    let s = subject(true, true);
    let g = generate_sample(&s, 1.0, 3, &GenConfig::default()).unwrap();
    assert!(g.image.data().iter().all(|x| (0.0..=1.0).contains(x)));
    assert!(g.pathology.data().iter().all(|x| (0.0..=1.0).contains(x)));
    assert_eq!(g.labels.grid(), g.image.grid());
    assert_eq!(g.target_anat.as_ref().unwrap().grid(), g.image.grid());
    assert_eq!(g.target_pathol.as_ref().unwrap().grid(), g.image.grid());
}

#[test]
fn sample_size_controls_output_grid() {
    let s = subject(true, false);
    let cfg = GenConfig {
        sample_size: Some([16, 12, 8]),
        ..GenConfig::default()
    };
    let g = generate_sample(&s, 0.3, 1, &cfg).unwrap();
    assert_eq!(g.image.dims(), [16, 12, 8]);
    assert_eq!(g.target_anat.unwrap().dims(), [16, 12, 8]);
    assert!(g.target_pathol.is_none());
}

#[test]
fn batches_run_mild_to_severe() {
    for seed in 0..50 {
        let s = severity_schedule(6, seed);
        assert!(s.windows(2).all(|w| w[0] <= w[1]), "{s:?}");
        assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
    }
    let batch = generate_batch(&subject(true, true), 4, 17, &GenConfig::default()).unwrap();
    let sev: Vec<f64> = batch.samples.iter().map(|s| s.severity).collect();
    assert!(sev.windows(2).all(|w| w[0] <= w[1]), "{sev:?}");
}

#[test]
fn shared_deformation_reuses_one_field() {
    let plans = plan_batch(4, 5, true);
    assert!(plans.iter().all(|p| p.seeds.deformation == plans[0].seeds.deformation));
    assert!(plans.windows(2).all(|w| w[0].seeds.corruption != w[1].seeds.corruption));
    let own = plan_batch(4, 5, false);
    assert!(own.windows(2).all(|w| w[0].seeds.deformation != w[1].seeds.deformation));
}

#[test]
fn availability_follows_targets() {
    let g = generate_sample(&subject(true, false), 0.5, 1, &GenConfig::default()).unwrap();
    assert!(g.availability.anat && !g.availability.pathol);
    let g = generate_sample(&subject(false, true), 0.5, 1, &GenConfig::default()).unwrap();
    assert!(!g.availability.anat && g.availability.pathol);
}

#[test]
fn cotraining_follows_dataset_weights() {
    let tags = ["a", "a", "b", "b", "b"];
    let weights: BTreeMap<String, f64> = [("a".to_string(), 3.0), ("b".to_string(), 1.0)].into();
    let sampler = CotrainingSampler::new(&tags, &weights, 42).unwrap();
    let n = 20_000;
    let hits = (0..n).filter(|&s| tags[sampler.draw(s).subject] == "a").count();
    let freq = hits as f64 / n as f64;
    assert!((freq - 0.75).abs() <= 0.02, "{freq}");
    assert_eq!(sampler.draw(123), sampler.draw(123));
}

#[test]
fn zero_weight_dataset_is_never_drawn() {
    let weights: BTreeMap<String, f64> = [("b".to_string(), 0.0)].into();
    let sampler = CotrainingSampler::new(&["a", "b"], &weights, 1).unwrap();
    assert!((0..500).all(|s| sampler.draw(s).subject == 0));
    let none: BTreeMap<String, f64> = [("a".to_string(), 0.0), ("b".to_string(), 0.0)].into();
    assert!(CotrainingSampler::new(&["a", "b"], &none, 1).is_err());
}

#[test]
fn cotraining_iterator_yields_batches() {
    let subjects = vec![subject(true, true), subject(true, false)];
    let mut it = cotraining_iterator(&subjects, &BTreeMap::new(), 8, 2, &GenConfig::default()).unwrap();
    for _ in 0..3 {
        let b = it.next().unwrap().unwrap();
        assert_eq!(b.samples.len(), 2);
    }
}
