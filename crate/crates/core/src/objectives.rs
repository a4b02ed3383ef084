//! Training objectives.
//!
//! * synthesis loss: L1 plus λ-weighted gradient L1 between each predicted
//!   image and its target, per available modality (anatomy / pathology);
//! * implicit pathology loss: segmentation loss (soft Dice + BCE) between the
//!   anomaly maps a frozen reference segmenter finds in the prediction and in
//!   the target;
//! * total: `synthesis + ω(iteration) · pathology`.
//!
//! Availability flags gate whole modalities: an inactive modality's prediction
//! is never read. Accumulation is in `f64` with a fixed summation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::volume::{ProbVolume, Volume};

/// Forward differences along x, y, z; zero on the last slice of each axis.
pub fn spatial_gradient(v: &Volume) -> [Volume; 3] {
    let grid = v.grid();
    let d = v.data();
    let strides = [1, grid.dims[0], grid.dims[0] * grid.dims[1]];
    std::array::from_fn(|axis| {
        let n = grid.dims[axis];
        let stride = strides[axis];
        let data = (0..d.len())
            .map(|idx| {
                let c = grid.coords(idx)[axis];
                if c + 1 < n {
                    d[idx + stride] - d[idx]
                } else {
                    0.0
                }
            })
            .collect();
        Volume::new_unchecked(grid.clone(), data)
    })
}

/// How voxelwise errors are reduced inside each loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Per-voxel mean; magnitudes independent of grid size.
    #[default]
    Mean,
    /// Raw sums.
    Sum,
}

/// Which ground-truth modalities a subject has (α for anatomy, β for pathology).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Availability {
    pub anat: bool,
    pub pathol: bool,
}

impl Availability {
    pub fn alpha(self) -> f64 {
        if self.anat {
            1.0
        } else {
            0.0
        }
    }

    pub fn beta(self) -> f64 {
        if self.pathol {
            1.0
        } else {
            0.0
        }
    }
}

/// Outputs of the two synthesis heads for one sample.
#[derive(Clone, Debug)]
pub struct SynthPrediction {
    pub anat: Volume,
    pub pathol: Volume,
}

/// Ground-truth images for one sample, already deformed with the sample's field.
#[derive(Clone, Copy, Debug)]
pub struct SynthTargets<'a> {
    pub anat: Option<&'a Volume>,
    pub pathol: Option<&'a Volume>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTerm {
    pub l1: f64,
    pub grad: f64,
    /// `l1 + λ · grad`
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSynthLoss {
    pub anat: Option<SynthTerm>,
    pub pathol: Option<SynthTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthLoss {
    pub l_anat: f64,
    pub l_pathol: f64,
    pub total: f64,
    pub per_sample: Vec<SampleSynthLoss>,
}

fn l1_and_grad(pred: &Volume, target: &Volume, reduction: Reduction) -> Result<(f64, f64)> {
    pred.grid().check_same(target.grid(), "prediction vs target")?;
    let grid = pred.grid();
    let [nx, ny, nz] = grid.dims;
    let p = pred.data();
    let t = target.data();
    let mut l1 = 0.0f64;
    let mut grad = 0.0f64;
    let mut idx = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let pv = p[idx] as f64;
                let tv = t[idx] as f64;
                l1 += (pv - tv).abs();
                let steps = [(i + 1 < nx, 1), (j + 1 < ny, nx), (k + 1 < nz, nx * ny)];
                for (has_next, stride) in steps {
                    if has_next {
                        let dp = p[idx + stride] as f64 - pv;
                        let dt = t[idx + stride] as f64 - tv;
                        grad += (dp - dt).abs();
                    }
                }
                idx += 1;
            }
        }
    }
    Ok(match reduction {
        Reduction::Mean => {
            let n = p.len() as f64;
            (l1 / n, grad / (3.0 * n))
        }
        Reduction::Sum => (l1, grad),
    })
}

/// Synthesis loss summed over the samples of a batch.
pub fn synthesis_loss(
    preds: &[SynthPrediction],
    targets: &[SynthTargets<'_>],
    avail: Availability,
    lambda: f64,
    reduction: Reduction,
) -> Result<SynthLoss> {
    if preds.len() != targets.len() {
        return Err(Error::InvalidValue(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(preds.len());
    let (mut l_anat, mut l_pathol) = (0.0, 0.0);
    for (pred, target) in preds.iter().zip(targets) {
        let mut s = SampleSynthLoss::default();
        if avail.anat {
            let t = target.anat.ok_or(Error::MissingTarget("anatomy"))?;
            let (l1, grad) = l1_and_grad(&pred.anat, t, reduction)?;
            let loss = l1 + lambda * grad;
            l_anat += loss;
            s.anat = Some(SynthTerm { l1, grad, loss });
        }
        if avail.pathol {
            let t = target.pathol.ok_or(Error::MissingTarget("pathology"))?;
            let (l1, grad) = l1_and_grad(&pred.pathol, t, reduction)?;
            let loss = l1 + lambda * grad;
            l_pathol += loss;
            s.pathol = Some(SynthTerm { l1, grad, loss });
        }
        per_sample.push(s);
    }
    Ok(SynthLoss {
        l_anat,
        l_pathol,
        total: avail.alpha() * l_anat + avail.beta() * l_pathol,
        per_sample,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegLossConfig {
    pub dice_weight: f64,
    pub bce_weight: f64,
    pub eps: f64,
    /// Probabilities are clamped to `[clamp, 1 - clamp]` inside the log.
    pub clamp: f64,
}

impl Default for SegLossConfig {
    fn default() -> Self {
        SegLossConfig {
            dice_weight: 0.5,
            bce_weight: 0.5,
            eps: 1e-6,
            clamp: 1e-7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegLoss {
    pub dice: f64,
    pub bce: f64,
    pub total: f64,
}

/// Soft Dice + binary cross-entropy of `pred` against `reference`.
///
/// BCE treats `reference` as the soft label, so the loss is not symmetric.
pub fn seg_loss_with(pred: &ProbVolume, reference: &ProbVolume, cfg: &SegLossConfig) -> Result<SegLoss> {
    pred.grid().check_same(reference.grid(), "segmentation maps")?;
    let (mut inter, mut sp, mut sq, mut ce) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (lo, hi) = (cfg.clamp, 1.0 - cfg.clamp);
    for (&p, &q) in pred.data().iter().zip(reference.data()) {
        let (p, q) = (p as f64, q as f64);
        inter += p * q;
        sp += p;
        sq += q;
        let pc = p.clamp(lo, hi);
        ce -= q * pc.ln() + (1.0 - q) * (1.0 - pc).ln();
    }
    let dice = 1.0 - (2.0 * inter + cfg.eps) / (sp + sq + cfg.eps);
    let bce = ce / pred.data().len() as f64;
    Ok(SegLoss {
        dice,
        bce,
        total: cfg.dice_weight * dice + cfg.bce_weight * bce,
    })
}

pub fn seg_loss(pred: &ProbVolume, reference: &ProbVolume) -> Result<f64> {
    Ok(seg_loss_with(pred, reference, &SegLossConfig::default())?.total)
}

/// A frozen model estimating an anomaly map from an image.
pub trait ReferenceSegmenter: Send + Sync {
    fn segment(&self, image: &Volume) -> Result<ProbVolume>;
}

/// Robust outlier detector: voxels of the brain (intensity above
/// `brain_threshold`) whose distance to the brain median exceeds `k` median
/// absolute deviations, Gaussian-smoothed and restricted to the brain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdSegmenter {
    pub k: f64,
    pub brain_threshold: f32,
    pub smoothing_sigma: f64,
}

impl Default for ThresholdSegmenter {
    fn default() -> Self {
        ThresholdSegmenter {
            k: 3.0,
            brain_threshold: 1e-3,
            smoothing_sigma: 1.0,
        }
    }
}

fn median(values: &mut [f32]) -> f32 {
    let mid = values.len() / 2;
    *values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
}

impl ReferenceSegmenter for ThresholdSegmenter {
    fn segment(&self, image: &Volume) -> Result<ProbVolume> {
        let grid = image.grid().clone();
        let data = image.data();
        let brain: Vec<bool> = data.iter().map(|&v| v > self.brain_threshold).collect();
        let mut inside: Vec<f32> = data.iter().zip(&brain).filter(|(_, &b)| b).map(|(&v, _)| v).collect();
        if inside.is_empty() {
            return Ok(ProbVolume::zeros(grid));
        }
        let med = median(&mut inside);
        let mut dev: Vec<f32> = inside.iter().map(|&v| (v - med).abs()).collect();
        let mad = median(&mut dev) as f64;
        let cut = self.k * mad;
        let mut map: Vec<f32> = data
            .iter()
            .zip(&brain)
            .map(|(&v, &b)| if b && ((v - med).abs() as f64) > cut { 1.0 } else { 0.0 })
            .collect();
        gaussian_blur(&mut map, grid.dims, [self.smoothing_sigma; 3]);
        for (m, &b) in map.iter_mut().zip(&brain) {
            *m = if b { m.clamp(0.0, 1.0) } else { 0.0 };
        }
        Ok(ProbVolume::new_unchecked(grid, map))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplePathologyLoss {
    pub anat: Option<SegLoss>,
    pub pathol: Option<SegLoss>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyLoss {
    pub l_seg_anat: f64,
    pub l_seg_pathol: f64,
    pub total: f64,
    pub per_sample: Vec<SamplePathologyLoss>,
}

/// Reference maps of target images, computed once per distinct target.
struct MapCache<'a> {
    entries: Vec<(*const Volume, ProbVolume)>,
    segmenter: &'a dyn ReferenceSegmenter,
}

impl MapCache<'_> {
    fn get(&mut self, v: &Volume) -> Result<&ProbVolume> {
        let key = v as *const Volume;
        let pos = match self.entries.iter().position(|(k, _)| *k == key) {
            Some(pos) => pos,
            None => {
                let map = self.segmenter.segment(v)?;
                self.entries.push((key, map));
                self.entries.len() - 1
            }
        };
        Ok(&self.entries[pos].1)
    }
}

/// Implicit pathology loss summed over the samples of a batch.
pub fn implicit_pathology_loss(
    preds: &[SynthPrediction],
    targets: &[SynthTargets<'_>],
    seg_anat: &dyn ReferenceSegmenter,
    seg_pathol: &dyn ReferenceSegmenter,
    avail: Availability,
    cfg: &SegLossConfig,
) -> Result<PathologyLoss> {
    if preds.len() != targets.len() {
        return Err(Error::InvalidValue(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut anat_cache = MapCache {
        entries: Vec::new(),
        segmenter: seg_anat,
    };
    let mut pathol_cache = MapCache {
        entries: Vec::new(),
        segmenter: seg_pathol,
    };
    let (mut l_anat, mut l_pathol) = (0.0, 0.0);
    let mut per_sample = Vec::with_capacity(preds.len());
    for (pred, target) in preds.iter().zip(targets) {
        let mut s = SamplePathologyLoss::default();
        if avail.anat {
            let t = target.anat.ok_or(Error::MissingTarget("anatomy"))?;
            pred.anat.grid().check_same(t.grid(), "anatomy prediction vs target")?;
            let reference = anat_cache.get(t)?;
            let l = seg_loss_with(&seg_anat.segment(&pred.anat)?, reference, cfg)?;
            l_anat += l.total;
            s.anat = Some(l);
        }
        if avail.pathol {
            let t = target.pathol.ok_or(Error::MissingTarget("pathology"))?;
            pred.pathol
                .grid()
                .check_same(t.grid(), "pathology prediction vs target")?;
            let reference = pathol_cache.get(t)?;
            let l = seg_loss_with(&seg_pathol.segment(&pred.pathol)?, reference, cfg)?;
            l_pathol += l.total;
            s.pathol = Some(l);
        }
        per_sample.push(s);
    }
    Ok(PathologyLoss {
        l_seg_anat: l_anat,
        l_seg_pathol: l_pathol,
        total: avail.alpha() * l_anat + avail.beta() * l_pathol,
        per_sample,
    })
}

/// λ and the ω schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda: f64,
    pub omega_initial: f64,
    pub omega_final: f64,
    /// First iteration using `omega_final`.
    pub omega_switch_iteration: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1.0,
            omega_initial: 0.1,
            omega_final: 1.0,
            omega_switch_iteration: 100_000,
        }
    }
}

impl LossWeights {
    pub fn omega(&self, iteration: u64) -> f64 {
        if iteration < self.omega_switch_iteration {
            self.omega_initial
        } else {
            self.omega_final
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda, self.omega_initial, self.omega_final]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be >= 0: {self:?}")))
        }
    }
}

pub fn total_loss(l_synth: f64, l_pathol: f64, weights: &LossWeights, iteration: u64) -> f64 {
    l_synth + weights.omega(iteration) * l_pathol
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub reduction: Reduction,
    pub seg: SegLossConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub anat: Option<SynthTerm>,
    pub pathol: Option<SynthTerm>,
    pub seg_anat: Option<SegLoss>,
    pub seg_pathol: Option<SegLoss>,
}

/// Every loss term of one batch; serialized as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: u64,
    pub alpha: u8,
    pub beta: u8,
    pub lambda: f64,
    pub omega: f64,
    pub l_anat: f64,
    pub l_pathol: f64,
    pub l_synth: f64,
    pub l_seg_anat: f64,
    pub l_seg_pathol: f64,
    pub l_pathol_total: f64,
    pub total: f64,
    pub per_sample: Vec<SampleLoss>,
}

impl LossReport {
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        preds: &[SynthPrediction],
        targets: &[SynthTargets<'_>],
        avail: Availability,
        seg_anat: &dyn ReferenceSegmenter,
        seg_pathol: &dyn ReferenceSegmenter,
        cfg: &LossConfig,
        iteration: u64,
    ) -> Result<LossReport> {
        cfg.weights.validate()?;
        let synth = synthesis_loss(preds, targets, avail, cfg.weights.lambda, cfg.reduction)?;
        let pathol = implicit_pathology_loss(preds, targets, seg_anat, seg_pathol, avail, &cfg.seg)?;
        let omega = cfg.weights.omega(iteration);
        let per_sample = synth
            .per_sample
            .iter()
            .zip(&pathol.per_sample)
            .map(|(s, p)| SampleLoss {
                anat: s.anat,
                pathol: s.pathol,
                seg_anat: p.anat,
                seg_pathol: p.pathol,
            })
            .collect();
        Ok(LossReport {
            iteration,
            alpha: avail.anat as u8,
            beta: avail.pathol as u8,
            lambda: cfg.weights.lambda,
            omega,
            l_anat: synth.l_anat,
            l_pathol: synth.l_pathol,
            l_synth: synth.total,
            l_seg_anat: pathol.l_seg_anat,
            l_seg_pathol: pathol.l_seg_pathol,
            l_pathol_total: pathol.total,
            total: total_loss(synth.total, pathol.total, &cfg.weights, iteration),
            per_sample,
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loss report serializes")
    }
}
