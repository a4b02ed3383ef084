use pathosynth::deformation::{sample_deformation, DeformationConfig};
use pathosynth::objectives::{
    seg_loss_with, synthesis_loss, Availability, Reduction, SegLossConfig, SynthPrediction, SynthTargets,
};
use pathosynth::volume::trilinear_sample;
use pathosynth::{Border, Grid, LabelVolume, ProbVolume, Volume};
use proptest::prelude::*;

const DIMS: [usize; 3] = [6, 5, 4];

fn grid() -> Grid {
    Grid::new(DIMS, [1.0; 3]).unwrap()
}

fn unit_values() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0.0f32..=1.0, 120)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trilinear_is_exact_at_nodes(data in unit_values(), i in 0usize..6, j in 0usize..5, k in 0usize..4) {
        let v = Volume::new(grid(), data).unwrap();
        let s = trilinear_sample(&v, [i as f64, j as f64, k as f64], Border::Replicate).unwrap();
        prop_assert_eq!(s, v.get(i, j, k));
    }

    #[test]
    fn warping_preserves_constants(c in 0.0f32..=1.0, seed in any::<u64>()) {
        let field = sample_deformation(DIMS, [1.0; 3], &DeformationConfig::default(), seed).unwrap();
        let map = field.sampling_map();
        let v = Volume::filled(grid(), c);
        // Constant-zero fill outside the grid: only interior points are checked.
        let w = map.warp_volume(&v).unwrap();
        for (x, p) in w.data().iter().zip(map.points()) {
            let inside = (0..3).all(|a| p[a] >= 0.0 && p[a] <= (DIMS[a] - 1) as f64);
            if inside {
                prop_assert!((x - c).abs() <= 1e-6, "{} vs {}", x, c);
            }
        }
    }

    #[test]
    fn warped_labels_come_from_the_source(labels in prop::collection::vec(prop::sample::select(vec![0u32, 2, 3, 4, 41]), 120), seed in any::<u64>()) {
        let l = LabelVolume::with_freesurfer_table(grid(), labels).unwrap();
        let field = sample_deformation(DIMS, [1.0; 3], &DeformationConfig::default(), seed).unwrap();
        let w = field.sampling_map().warp_labels(&l).unwrap();
        let mut allowed = l.labels_present();
        allowed.insert(0);
        prop_assert!(w.labels_present().is_subset(&allowed));
    }

    #[test]
    fn warped_probabilities_stay_in_range(data in unit_values(), seed in any::<u64>()) {
        let p = ProbVolume::new(grid(), data).unwrap();
        let field = sample_deformation(DIMS, [1.0; 3], &DeformationConfig::default(), seed).unwrap();
        let w = field.sampling_map().warp_prob(&p).unwrap();
        prop_assert!(w.data().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn warping_is_linear(a in unit_values(), b in unit_values(), s in 0.0f32..1.0, seed in any::<u64>()) {
        let map = sample_deformation(DIMS, [1.0; 3], &DeformationConfig::default(), seed).unwrap().sampling_map();
        let va = Volume::new(grid(), a.clone()).unwrap();
        let vb = Volume::new(grid(), b.clone()).unwrap();
        let mix: Vec<f32> = a.iter().zip(&b).map(|(x, y)| s * x + (1.0 - s) * y).collect();
        let wm = map.warp_volume(&Volume::new(grid(), mix).unwrap()).unwrap();
        let (wa, wb) = (map.warp_volume(&va).unwrap(), map.warp_volume(&vb).unwrap());
        for ((m, x), y) in wm.data().iter().zip(wa.data()).zip(wb.data()) {
            prop_assert!((m - (s * x + (1.0 - s) * y)).abs() <= 1e-5);
        }
    }

    #[test]
    fn synthesis_loss_decomposes_and_masks(
        pa in unit_values(), pp in unit_values(), ta in unit_values(), tp in unit_values(), noise in unit_values(),
        anat in any::<bool>(), lambda in 0.0f64..2.0,
    ) {
        let avail = Availability { anat, pathol: !anat };
        let vol = |d: &Vec<f32>| Volume::new(grid(), d.clone()).unwrap();
        let (ta, tp) = (vol(&ta), vol(&tp));
        let targets = [SynthTargets { anat: Some(&ta), pathol: Some(&tp) }];
        let pred = [SynthPrediction { anat: vol(&pa), pathol: vol(&pp) }];
        let loss = synthesis_loss(&pred, &targets, avail, lambda, Reduction::Mean).unwrap();
        prop_assert!(loss.total >= 0.0);
        let term = loss.per_sample[0].anat.or(loss.per_sample[0].pathol).unwrap();
        prop_assert!(term.l1 >= 0.0 && term.grad >= 0.0);
        prop_assert!((term.loss - (term.l1 + lambda * term.grad)).abs() <= 1e-12);
        prop_assert_eq!(loss.total, term.loss);

        // The unused modality may be anything.
        let other = if anat {
            [SynthPrediction { anat: vol(&pa), pathol: vol(&noise) }]
        } else {
            [SynthPrediction { anat: vol(&noise), pathol: vol(&pp) }]
        };
        let again = synthesis_loss(&other, &targets, avail, lambda, Reduction::Mean).unwrap();
        prop_assert_eq!(again.total.to_bits(), loss.total.to_bits());
    }

    #[test]
    fn seg_loss_is_bounded_below(p in unit_values(), q in unit_values()) {
        let (p, q) = (ProbVolume::new(grid(), p).unwrap(), ProbVolume::new(grid(), q).unwrap());
        let l = seg_loss_with(&p, &q, &SegLossConfig::default()).unwrap();
        prop_assert!(l.dice >= 0.0 && l.dice <= 1.0 && l.bce >= 0.0);
        prop_assert!((l.total - 0.5 * (l.dice + l.bce)).abs() <= 1e-12);
    }
}
