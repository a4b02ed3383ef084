//! End-to-end sample generation.
//!
//! One sample: random deformation → warp labels, anomaly map and available
//! ground truths → Gaussian contrast on the warped labels → pathology
//! enhancement → corruption at the requested severity. A batch holds `n`
//! samples of one subject with ascending severities, each with its own field.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt, CorruptionCaps, CorruptionSpec};
use crate::deformation::{sample_deformation_between, DeformationConfig, DeformationField};
use crate::error::{Error, Result};
use crate::objectives::{Availability, SynthTargets};
use crate::pathology::{
    anomaly_probability, enhance_pathology_with, sample_anomaly_free, ContrastPrior, ContrastSpec, DeltaMode,
    ModalityClass, PathologyDraw,
};
use crate::rng::{child_seed, stage_rng, Stage};
use crate::volume::{LabelVolume, Mask, ProbVolume, Volume};

/// One training subject. At least one ground-truth image must be present.
#[derive(Clone, Debug)]
pub struct LabeledSubject {
    pub id: String,
    pub dataset: String,
    pub labels: LabelVolume,
    pub pathology: ProbVolume,
    /// MP-RAGE-like anatomy target.
    pub gt_anat: Option<Volume>,
    /// FLAIR-like pathology target.
    pub gt_pathol: Option<Volume>,
}

impl LabeledSubject {
    pub fn new(
        id: impl Into<String>,
        dataset: impl Into<String>,
        labels: LabelVolume,
        pathology: ProbVolume,
        gt_anat: Option<Volume>,
        gt_pathol: Option<Volume>,
    ) -> Result<Self> {
        let subject = LabeledSubject {
            id: id.into(),
            dataset: dataset.into(),
            labels,
            pathology,
            gt_anat,
            gt_pathol,
        };
        subject.validate()?;
        Ok(subject)
    }

    /// Builds the anomaly map from a binary lesion mask and the intensities of
    /// the pathology target (FLAIR-like) or, failing that, the anatomy target
    /// (T1-like).
    pub fn from_mask(
        id: impl Into<String>,
        dataset: impl Into<String>,
        labels: LabelVolume,
        lesion: &Mask,
        gt_anat: Option<Volume>,
        gt_pathol: Option<Volume>,
    ) -> Result<Self> {
        let pathology = match (&gt_pathol, &gt_anat) {
            (Some(img), _) => anomaly_probability(img, lesion, ModalityClass::T2wFlairLike)?,
            (None, Some(img)) => anomaly_probability(img, lesion, ModalityClass::T1wLike)?,
            (None, None) => return Err(Error::MissingTarget("anatomy or pathology")),
        };
        Self::new(id, dataset, labels, pathology, gt_anat, gt_pathol)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.labels.grid();
        grid.check_same(self.pathology.grid(), "subject pathology")?;
        if let Some(v) = &self.gt_anat {
            grid.check_same(v.grid(), "subject anatomy target")?;
        }
        if let Some(v) = &self.gt_pathol {
            grid.check_same(v.grid(), "subject pathology target")?;
        }
        if self.gt_anat.is_none() && self.gt_pathol.is_none() {
            return Err(Error::InvalidValue(format!(
                "subject {} has neither an anatomy nor a pathology target",
                self.id
            )));
        }
        Ok(())
    }

    pub fn availability(&self) -> Availability {
        Availability {
            anat: self.gt_anat.is_some(),
            pathol: self.gt_pathol.is_some(),
        }
    }

    pub fn alpha(&self) -> u8 {
        self.gt_anat.is_some() as u8
    }

    pub fn beta(&self) -> u8 {
        self.gt_pathol.is_some() as u8
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Output grid, centered in the subject grid. `None` keeps the subject grid.
    pub sample_size: Option<[usize; 3]>,
    pub deformation: DeformationConfig,
    pub corruption: CorruptionCaps,
    pub contrast: ContrastPrior,
    pub delta_mode: DeltaMode,
    /// Reuse one deformation for every sample of a batch.
    pub shared_deformation: bool,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sample_size {
            if s.contains(&0) {
                return Err(Error::Config(format!("sample_size must be positive, got {s:?}")));
            }
        }
        self.deformation.validate()?;
        self.corruption.validate()?;
        self.contrast.validate()
    }
}

/// Seeds of the four stochastic stages of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSeeds {
    pub deformation: u64,
    pub contrast: u64,
    pub pathology: u64,
    pub corruption: u64,
}

impl SampleSeeds {
    pub fn derive(master: u64) -> Self {
        SampleSeeds {
            deformation: child_seed(master, Stage::Deformation, 0),
            contrast: child_seed(master, Stage::Contrast, 0),
            pathology: child_seed(master, Stage::Pathology, 0),
            corruption: child_seed(master, Stage::Corruption, 0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenSample {
    pub subject_id: String,
    pub dataset: String,
    pub severity: f64,
    pub seeds: SampleSeeds,
    /// Corrupted pathology-encoded image.
    pub image: Volume,
    pub labels: LabelVolume,
    pub pathology: ProbVolume,
    pub target_anat: Option<Volume>,
    pub target_pathol: Option<Volume>,
    pub availability: Availability,
    pub deformation: DeformationField,
    pub contrast: ContrastSpec,
    pub draw: PathologyDraw,
    pub corruption: CorruptionSpec,
}

impl GenSample {
    pub fn targets(&self) -> SynthTargets<'_> {
        SynthTargets {
            anat: self.target_anat.as_ref(),
            pathol: self.target_pathol.as_ref(),
        }
    }
}

/// Intermediate images of one generated sample.
#[derive(Clone, Debug)]
pub struct Trace {
    pub anomaly_free: Volume,
    pub enhanced: Volume,
}

pub fn generate_sample(
    subject: &LabeledSubject,
    severity: f64,
    master_seed: u64,
    cfg: &GenConfig,
) -> Result<GenSample> {
    generate_sample_with_seeds(subject, severity, SampleSeeds::derive(master_seed), cfg)
}

pub fn generate_sample_with_seeds(
    subject: &LabeledSubject,
    severity: f64,
    seeds: SampleSeeds,
    cfg: &GenConfig,
) -> Result<GenSample> {
    generate_sample_traced(subject, severity, seeds, cfg).map(|(s, _)| s)
}

pub fn generate_sample_traced(
    subject: &LabeledSubject,
    severity: f64,
    seeds: SampleSeeds,
    cfg: &GenConfig,
) -> Result<(GenSample, Trace)> {
    subject.validate()?;
    cfg.validate()?;
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::InvalidValue(format!("severity {severity} outside [0, 1]")));
    }
    let src = subject.labels.grid();
    let out_dims = cfg.sample_size.unwrap_or(src.dims);

    let field = sample_deformation_between(src.dims, out_dims, src.spacing, &cfg.deformation, seeds.deformation)
        .map_err(|e| e.in_stage("deformation"))?;
    let map = field.sampling_map();
    let warp = |e: Error| e.in_stage("warp");
    let labels = map.warp_labels(&subject.labels).map_err(warp)?;
    let pathology = map.warp_prob(&subject.pathology).map_err(warp)?;
    let target_anat = subject
        .gt_anat
        .as_ref()
        .map(|v| map.warp_volume(v))
        .transpose()
        .map_err(warp)?;
    let target_pathol = subject
        .gt_pathol
        .as_ref()
        .map(|v| map.warp_volume(v))
        .transpose()
        .map_err(warp)?;
    drop(map);

    let contrast = ContrastSpec::sample(&labels, &cfg.contrast, seeds.contrast).map_err(|e| e.in_stage("contrast"))?;
    let anomaly_free = sample_anomaly_free(&labels, &contrast).map_err(|e| e.in_stage("contrast"))?;
    let (enhanced, draw) = enhance_pathology_with(&anomaly_free, &pathology, &labels, seeds.pathology, cfg.delta_mode)
        .map_err(|e| e.in_stage("pathology enhancement"))?;
    let corruption = CorruptionSpec::from_severity(severity, &cfg.corruption, labels.grid().spacing, seeds.corruption)
        .map_err(|e| e.in_stage("corruption"))?;
    let image = corrupt(&enhanced, &corruption).map_err(|e| e.in_stage("corruption"))?;

    let sample = GenSample {
        subject_id: subject.id.clone(),
        dataset: subject.dataset.clone(),
        severity,
        seeds,
        image,
        labels,
        pathology,
        target_anat,
        target_pathol,
        availability: subject.availability(),
        deformation: field,
        contrast,
        draw,
        corruption,
    };
    Ok((sample, Trace { anomaly_free, enhanced }))
}

/// Stratified ascending severities: sample `i` of `n` is uniform in `[i/n, (i+1)/n]`.
pub fn severity_schedule(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stage_rng(seed, Stage::Severity, 0);
    let nf = n as f64;
    let mut s: Vec<f64> = (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            ((i as f64 + 0.5) / nf + (2.0 * u - 1.0) / (2.0 * nf)).clamp(0.0, 1.0)
        })
        .collect();
    s.sort_by(f64::total_cmp);
    s
}

/// Severity and seeds of one sample of a batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub index: usize,
    pub severity: f64,
    pub seeds: SampleSeeds,
}

pub fn plan_batch(n: usize, batch_seed: u64, shared_deformation: bool) -> Vec<SamplePlan> {
    let severities = severity_schedule(n, batch_seed);
    let shared = child_seed(batch_seed, Stage::Deformation, 0);
    severities
        .into_iter()
        .enumerate()
        .map(|(index, severity)| {
            let mut seeds = SampleSeeds::derive(child_seed(batch_seed, Stage::Sample, index as u64));
            if shared_deformation {
                seeds.deformation = shared;
            }
            SamplePlan { index, severity, seeds }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub subject_id: String,
    pub batch_seed: u64,
    pub samples: Vec<GenSample>,
}

/// `n` samples of one subject, mild to severe.
pub fn generate_batch(subject: &LabeledSubject, n: usize, master_seed: u64, cfg: &GenConfig) -> Result<Batch> {
    if n == 0 {
        return Err(Error::InvalidValue("batch size must be positive".into()));
    }
    let samples = plan_batch(n, master_seed, cfg.shared_deformation)
        .into_iter()
        .map(|p| generate_sample_with_seeds(subject, p.severity, p.seeds, cfg))
        .collect::<Result<_>>()?;
    Ok(Batch {
        subject_id: subject.id.clone(),
        batch_seed: master_seed,
        samples,
    })
}

/// Which subject a co-training step uses, and the seed of its batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchDraw {
    pub step: u64,
    pub subject: usize,
    pub batch_seed: u64,
}

/// Picks a dataset by weight, then a subject uniformly within it.
#[derive(Clone, Debug)]
pub struct CotrainingSampler {
    datasets: Vec<(String, f64, Vec<usize>)>,
    total: f64,
    master_seed: u64,
    step: u64,
}

impl CotrainingSampler {
    /// `tags[i]` is the dataset of subject `i`. Datasets missing from `weights` get weight 1.
    pub fn new<S: AsRef<str>>(tags: &[S], weights: &BTreeMap<String, f64>, master_seed: u64) -> Result<Self> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, t) in tags.iter().enumerate() {
            groups.entry(t.as_ref().to_string()).or_default().push(i);
        }
        if groups.is_empty() {
            return Err(Error::InvalidValue("no subjects to sample from".into()));
        }
        let mut datasets = Vec::with_capacity(groups.len());
        for (tag, members) in groups {
            let w = weights.get(&tag).copied().unwrap_or(1.0);
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("dataset {tag}: weight {w} must be >= 0")));
            }
            datasets.push((tag, w, members));
        }
        let total: f64 = datasets.iter().map(|d| d.1).sum();
        if total <= 0.0 {
            return Err(Error::Config("all dataset weights are zero".into()));
        }
        Ok(CotrainingSampler {
            datasets,
            total,
            master_seed,
            step: 0,
        })
    }

    /// The draw for `step`, independent of any other step.
    pub fn draw(&self, step: u64) -> BatchDraw {
        let mut rng = stage_rng(self.master_seed, Stage::Cotraining, step);
        let u: f64 = rng.random::<f64>() * self.total;
        let mut cum = 0.0;
        let mut chosen = None;
        for d in &self.datasets {
            cum += d.1;
            if d.1 > 0.0 && u < cum {
                chosen = Some(d);
                break;
            }
        }
        // Rounding can leave u == total; fall back to the last weighted dataset.
        let d = chosen.unwrap_or_else(|| self.datasets.iter().rev().find(|d| d.1 > 0.0).expect("positive total"));
        let subject = d.2[rng.random_range(0..d.2.len())];
        BatchDraw {
            step,
            subject,
            batch_seed: child_seed(self.master_seed, Stage::Batch, step),
        }
    }
}

impl Iterator for CotrainingSampler {
    type Item = BatchDraw;

    fn next(&mut self) -> Option<BatchDraw> {
        let d = self.draw(self.step);
        self.step += 1;
        Some(d)
    }
}

/// Endless stream of batches across datasets.
pub struct CotrainingIterator<'a> {
    subjects: &'a [LabeledSubject],
    sampler: CotrainingSampler,
    batch_size: usize,
    cfg: GenConfig,
}

impl Iterator for CotrainingIterator<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        let d = self.sampler.next()?;
        Some(generate_batch(
            &self.subjects[d.subject],
            self.batch_size,
            d.batch_seed,
            &self.cfg,
        ))
    }
}

pub fn cotraining_iterator<'a>(
    subjects: &'a [LabeledSubject],
    weights: &BTreeMap<String, f64>,
    master_seed: u64,
    batch_size: usize,
    cfg: &GenConfig,
) -> Result<CotrainingIterator<'a>> {
    let tags: Vec<&str> = subjects.iter().map(|s| s.dataset.as_str()).collect();
    Ok(CotrainingIterator {
        subjects,
        sampler: CotrainingSampler::new(&tags, weights, master_seed)?,
        batch_size,
        cfg: cfg.clone(),
    })
}
