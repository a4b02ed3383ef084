//! Anomaly probabilities and pathology-encoded contrast.
//!
//! An annotated lesion region is turned into a soft anomaly map from the
//! intensities of a real image: in T1-weighted contrast lesions are dark, so
//! the darkest voxel of the region gets probability 1; in T2/FLAIR contrast the
//! brightest one does. Synthetic images are painted by drawing every voxel from
//! its label's Gaussian, then shifted inside the (deformed) anomaly map by one
//! random offset whose sign follows the white/gray matter ordering of the
//! painted image.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_seed, rng_from_seed, stage_rng, Stage};
use crate::volume::{LabelVolume, Mask, ProbVolume, TissueClass, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModalityClass {
    #[serde(rename = "t1w", alias = "T1w", alias = "t1w-like")]
    T1wLike,
    #[serde(
        rename = "flair",
        alias = "t2w",
        alias = "FLAIR",
        alias = "T2w",
        alias = "t2w-flair-like"
    )]
    T2wFlairLike,
}

/// Soft anomaly map from the intensities of `image` inside `region`.
///
/// Zero outside the region. Inside, intensities are min-max normalized over
/// the region and inverted for T1-like contrast. A flat region (all voxels
/// equal) maps to 1 everywhere inside it.
pub fn anomaly_probability(image: &Volume, region: &Mask, modality: ModalityClass) -> Result<ProbVolume> {
    image.grid().check_same(region.grid(), "anomaly region")?;
    let (lo, hi) = image
        .data()
        .iter()
        .zip(region.data())
        .filter(|(_, &m)| m)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v), hi.max(v))
        });
    let (lo, hi) = (lo as f64, hi as f64);
    let range = hi - lo;
    let data = image
        .data()
        .iter()
        .zip(region.data())
        .map(|(&v, &m)| {
            if !m {
                return 0.0;
            }
            if range <= 0.0 {
                return 1.0;
            }
            let t = (v as f64 - lo) / range;
            let p = match modality {
                ModalityClass::T1wLike => 1.0 - t,
                ModalityClass::T2wFlairLike => t,
            };
            p.clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(ProbVolume::new_unchecked(image.grid().clone(), data))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelIntensity {
    pub mean: f64,
    pub std: f64,
}

/// Per-label Gaussian intensity model plus the seed of the voxel draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub labels: BTreeMap<u32, LabelIntensity>,
    pub seed: u64,
}

impl ContrastSpec {
    pub fn new(labels: BTreeMap<u32, LabelIntensity>, seed: u64) -> Result<Self> {
        for (l, g) in &labels {
            if !(0.0..=1.0).contains(&g.mean) || !(g.std >= 0.0 && g.std.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "label {l}: mean {} must be in [0, 1] and std {} non-negative",
                    g.mean, g.std
                )));
            }
        }
        Ok(ContrastSpec { labels, seed })
    }

    /// Draws one Gaussian per label of `labels` from `prior`.
    pub fn sample(labels: &LabelVolume, prior: &ContrastPrior, seed: u64) -> Result<Self> {
        let mut rng = stage_rng(seed, Stage::Contrast, 0);
        let mut out = BTreeMap::new();
        for (&label, &class) in labels.table() {
            let range = prior.for_class(class);
            let mean = uniform(&mut rng, range.mean);
            let std = uniform(&mut rng, range.std);
            out.insert(label, LabelIntensity { mean, std });
        }
        ContrastSpec::new(out, child_seed(seed, Stage::Contrast, 1))
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityRange {
    pub mean: (f64, f64),
    pub std: (f64, f64),
}

/// Ranges the per-label Gaussians are drawn from, by tissue class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastPrior {
    pub tissue: IntensityRange,
    pub background: IntensityRange,
}

impl Default for ContrastPrior {
    fn default() -> Self {
        ContrastPrior {
            tissue: IntensityRange {
                mean: (0.0, 1.0),
                std: (0.0, 0.05),
            },
            background: IntensityRange {
                mean: (0.0, 0.0),
                std: (0.0, 0.0),
            },
        }
    }
}

impl ContrastPrior {
    pub fn validate(&self) -> Result<()> {
        for r in [&self.tissue, &self.background] {
            let ok = 0.0 <= r.mean.0
                && r.mean.0 <= r.mean.1
                && r.mean.1 <= 1.0
                && 0.0 <= r.std.0
                && r.std.0 <= r.std.1
                && r.std.1.is_finite();
            if !ok {
                return Err(Error::Config(format!("bad contrast prior range {r:?}")));
            }
        }
        Ok(())
    }

    fn for_class(&self, class: TissueClass) -> IntensityRange {
        match class {
            TissueClass::Background => self.background,
            _ => self.tissue,
        }
    }
}

/// Anomaly-free image: every voxel drawn from its label's Gaussian, clamped to `[0, 1]`.
pub fn sample_anomaly_free(labels: &LabelVolume, spec: &ContrastSpec) -> Result<Volume> {
    let present = labels.labels_present();
    if let Some(&missing) = present.iter().find(|l| !spec.labels.contains_key(l)) {
        return Err(Error::MissingLabel(missing));
    }
    // Dense lookup keeps the per-voxel loop free of map searches.
    let max_label = present.iter().next_back().copied().unwrap_or(0) as usize;
    let mut table = vec![(0.0f64, 0.0f64); max_label + 1];
    for &l in &present {
        let g = spec.labels[&l];
        table[l as usize] = (g.mean, g.std);
    }
    let mut rng = rng_from_seed(spec.seed);
    let data = labels
        .data()
        .iter()
        .map(|&l| {
            let (mean, std) = table[l as usize];
            let z: f64 = rng.sample(StandardNormal);
            (mean + std * z).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(Volume::new_unchecked(labels.grid().clone(), data))
}

/// Mean intensity over white matter and over gray matter.
pub fn white_gray_means(s0: &Volume, labels: &LabelVolume) -> Result<(f64, f64)> {
    s0.grid().check_same(labels.grid(), "white/gray means")?;
    let max_label = labels.table().keys().next_back().copied().unwrap_or(0) as usize;
    let mut class = vec![None; max_label + 1];
    for (&l, &c) in labels.table() {
        class[l as usize] = Some(c);
    }
    let (mut sw, mut nw, mut sg, mut ng) = (0.0f64, 0usize, 0.0f64, 0usize);
    for (&v, &l) in s0.data().iter().zip(labels.data()) {
        match class[l as usize] {
            Some(TissueClass::WhiteMatter) => {
                sw += v as f64;
                nw += 1;
            }
            Some(TissueClass::GrayMatter) => {
                sg += v as f64;
                ng += 1;
            }
            _ => {}
        }
    }
    if nw == 0 {
        return Err(Error::MissingTissueClass("white-matter"));
    }
    if ng == 0 {
        return Err(Error::MissingTissueClass("gray-matter"));
    }
    Ok((sw / nw as f64, sg / ng as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftDirection {
    Darken,
    Brighten,
}

/// How many intensity offsets are drawn per image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaMode {
    /// One offset shared by every lesion voxel.
    #[default]
    PerImage,
    /// One offset per 6-connected component of the anomaly map's support.
    PerComponent,
}

/// The random offset applied inside the anomaly map, with the statistics it was conditioned on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyDraw {
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub component_deltas: Vec<f64>,
    pub direction: ShiftDirection,
    pub mu_w: f64,
    pub mu_g: f64,
}

impl PathologyDraw {
    /// Offset distribution: `N(∓mu_w/2, (mu_w/2)²)`, darkening when white matter is brighter.
    pub fn sample(mu_w: f64, mu_g: f64, seed: u64, components: usize) -> PathologyDraw {
        let direction = if mu_w > mu_g {
            ShiftDirection::Darken
        } else {
            ShiftDirection::Brighten
        };
        let half = mu_w / 2.0;
        let mean = match direction {
            ShiftDirection::Darken => -half,
            ShiftDirection::Brighten => half,
        };
        let std = half.abs();
        let mut rng = rng_from_seed(seed);
        let mut draw = || {
            let z: f64 = rng.sample(StandardNormal);
            mean + std * z
        };
        let delta = draw();
        let component_deltas = (0..components).map(|_| draw()).collect();
        PathologyDraw {
            delta,
            component_deltas,
            direction,
            mu_w,
            mu_g,
        }
    }
}

/// Pathology enhancement with one offset per image.
pub fn enhance_pathology(
    s0: &Volume,
    p: &ProbVolume,
    labels: &LabelVolume,
    seed: u64,
) -> Result<(Volume, PathologyDraw)> {
    enhance_pathology_with(s0, p, labels, seed, DeltaMode::PerImage)
}

/// `S = clamp(S0 + delta · p, 0, 1)`; voxels with `p = 0` are copied unchanged.
pub fn enhance_pathology_with(
    s0: &Volume,
    p: &ProbVolume,
    labels: &LabelVolume,
    seed: u64,
    mode: DeltaMode,
) -> Result<(Volume, PathologyDraw)> {
    s0.grid().check_same(p.grid(), "pathology enhancement")?;
    let (mu_w, mu_g) = white_gray_means(s0, labels)?;
    let (components, count) = match mode {
        DeltaMode::PerImage => (None, 0),
        DeltaMode::PerComponent => {
            let (ids, n) = connected_components(p);
            (Some(ids), n)
        }
    };
    let draw = PathologyDraw::sample(mu_w, mu_g, seed, count);
    let data = s0
        .data()
        .iter()
        .zip(p.data())
        .enumerate()
        .map(|(idx, (&s, &pv))| {
            if pv == 0.0 {
                return s;
            }
            let delta = match &components {
                None => draw.delta,
                Some(ids) => draw.component_deltas[ids[idx] as usize],
            };
            (s as f64 + delta * pv as f64).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok((Volume::new_unchecked(s0.grid().clone(), data), draw))
}

/// 6-connected components of `p > 0`, numbered in scan order. Background gets `u32::MAX`.
pub fn connected_components(p: &ProbVolume) -> (Vec<u32>, usize) {
    let dims = p.dims();
    let grid = p.grid();
    let mut ids = vec![u32::MAX; grid.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..grid.len() {
        if p.data()[start] == 0.0 || ids[start] != u32::MAX {
            continue;
        }
        ids[start] = next;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let [i, j, k] = grid.coords(idx);
            let mut visit = |ii: usize, jj: usize, kk: usize| {
                let n = grid.index(ii, jj, kk);
                if p.data()[n] > 0.0 && ids[n] == u32::MAX {
                    ids[n] = next;
                    queue.push_back(n);
                }
            };
            if i > 0 {
                visit(i - 1, j, k);
            }
            if i + 1 < dims[0] {
                visit(i + 1, j, k);
            }
            if j > 0 {
                visit(i, j - 1, k);
            }
            if j + 1 < dims[1] {
                visit(i, j + 1, k);
            }
            if k > 0 {
                visit(i, j, k - 1);
            }
            if k + 1 < dims[2] {
                visit(i, j, k + 1);
            }
        }
        next += 1;
    }
    (ids, next as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn wm_gm_labels(n: usize) -> LabelVolume {
        // Left half white matter (2), right half cortex (3).
        let g = Grid::cubic(n);
        let data = (0..g.len())
            .map(|i| if g.coords(i)[0] < n / 2 { 2 } else { 3 })
            .collect();
        LabelVolume::with_freesurfer_table(g, data).unwrap()
    }

    #[test]
    fn anomaly_probability_endpoints() {
        let g = Grid::new([4, 1, 1], [1.0; 3]).unwrap();
        let img = Volume::new(g.clone(), vec![0.25, 0.5, 0.75, 0.9]).unwrap();
        let region = Mask::new(g, vec![true, true, true, false]).unwrap();
        let t1 = anomaly_probability(&img, &region, ModalityClass::T1wLike).unwrap();
        assert_eq!(t1.data(), &[1.0, 0.5, 0.0, 0.0]);
        let fl = anomaly_probability(&img, &region, ModalityClass::T2wFlairLike).unwrap();
        assert_eq!(fl.data(), &[0.0, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn flat_region_is_fully_anomalous() {
        let g = Grid::new([3, 1, 1], [1.0; 3]).unwrap();
        let img = Volume::filled(g.clone(), 0.3);
        let region = Mask::new(g, vec![true, false, true]).unwrap();
        let p = anomaly_probability(&img, &region, ModalityClass::T1wLike).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_region_gives_zero_map() {
        let g = Grid::cubic(2);
        let img = Volume::filled(g.clone(), 0.3);
        let region = Mask::new(g, vec![false; 8]).unwrap();
        let p = anomaly_probability(&img, &region, ModalityClass::T2wFlairLike).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_gaussian_gives_constant() {
        let g = Grid::cubic(4);
        let labels = LabelVolume::with_freesurfer_table(g, vec![2; 64]).unwrap();
        let mut m = BTreeMap::new();
        m.insert(0, LabelIntensity { mean: 0.0, std: 0.0 });
        m.insert(2, LabelIntensity { mean: 0.5, std: 0.0 });
        let spec = ContrastSpec::new(m, 9).unwrap();
        let s0 = sample_anomaly_free(&labels, &spec).unwrap();
        assert!(s0.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn missing_label_is_named() {
        let labels = wm_gm_labels(2);
        let mut m = BTreeMap::new();
        m.insert(2, LabelIntensity { mean: 0.5, std: 0.0 });
        let err = sample_anomaly_free(&labels, &ContrastSpec::new(m, 0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::MissingLabel(3)));
        assert!(err.to_string().contains('3'));
    }

    #[test]
    fn same_seed_same_image() {
        let labels = wm_gm_labels(8);
        let spec = ContrastSpec::sample(&labels, &ContrastPrior::default(), 77).unwrap();
        let a = sample_anomaly_free(&labels, &spec).unwrap();
        let b = sample_anomaly_free(&labels, &spec).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn white_gray_means_simple() {
        let labels = wm_gm_labels(4);
        let s0 = Volume::from_fn(labels.grid().clone(), |i, _, _| if i < 2 { 0.8 } else { 0.4 }).unwrap();
        let (w, g) = white_gray_means(&s0, &labels).unwrap();
        assert!((w - 0.8).abs() < 1e-7 && (g - 0.4).abs() < 1e-7);
        let c = Volume::filled(labels.grid().clone(), 0.7);
        let (w, g) = white_gray_means(&c, &labels).unwrap();
        assert!((w - 0.7).abs() < 1e-7 && (g - 0.7).abs() < 1e-7);
    }

    #[test]
    fn missing_tissue_class_is_an_error() {
        let g = Grid::cubic(2);
        let labels = LabelVolume::with_freesurfer_table(g.clone(), vec![2; 8]).unwrap();
        let err = white_gray_means(&Volume::filled(g, 0.1), &labels).unwrap_err();
        assert!(err.to_string().contains("missing tissue class"));
    }

    #[test]
    fn zero_map_leaves_image_untouched() {
        let labels = wm_gm_labels(6);
        let spec = ContrastSpec::sample(&labels, &ContrastPrior::default(), 3).unwrap();
        let s0 = sample_anomaly_free(&labels, &spec).unwrap();
        let p = ProbVolume::zeros(labels.grid().clone());
        let (s, _) = enhance_pathology(&s0, &p, &labels, 5).unwrap();
        assert_eq!(s, s0);
    }

    #[test]
    fn direction_follows_white_gray_order() {
        let labels = wm_gm_labels(4);
        let bright_wm = Volume::from_fn(labels.grid().clone(), |i, _, _| if i < 2 { 0.8 } else { 0.4 }).unwrap();
        let p = ProbVolume::new(labels.grid().clone(), vec![1.0; 64]).unwrap();
        let (_, d) = enhance_pathology(&bright_wm, &p, &labels, 1).unwrap();
        assert_eq!(d.direction, ShiftDirection::Darken);
        let dark_wm = Volume::from_fn(labels.grid().clone(), |i, _, _| if i < 2 { 0.3 } else { 0.5 }).unwrap();
        let (_, d) = enhance_pathology(&dark_wm, &p, &labels, 1).unwrap();
        assert_eq!(d.direction, ShiftDirection::Brighten);
    }

    #[test]
    fn per_component_mode_uses_one_offset_per_blob() {
        let labels = wm_gm_labels(6);
        let s0 = Volume::filled(labels.grid().clone(), 0.5);
        let g = labels.grid().clone();
        let data = (0..g.len())
            .map(|idx| {
                let [i, j, k] = g.coords(idx);
                if (i == 1 || i == 4) && j == 2 && k == 2 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let p = ProbVolume::new(g.clone(), data).unwrap();
        let (ids, n) = connected_components(&p);
        assert_eq!(n, 2);
        assert_eq!(ids[g.index(1, 2, 2)], 0);
        assert_eq!(ids[g.index(4, 2, 2)], 1);
        let (s, d) = enhance_pathology_with(&s0, &p, &labels, 11, DeltaMode::PerComponent).unwrap();
        assert_eq!(d.component_deltas.len(), 2);
        let expect = |c: usize| (0.5f64 + d.component_deltas[c]).clamp(0.0, 1.0) as f32;
        assert_eq!(s.get(1, 2, 2), expect(0));
        assert_eq!(s.get(4, 2, 2), expect(1));
    }
}
