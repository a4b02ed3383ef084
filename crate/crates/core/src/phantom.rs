//! Ellipsoidal head phantoms for tests and demos.
//!
//! Nested ellipsoids give CSF (24), cortex (3), white matter (2) and a
//! ventricle (4), with one spherical lesion in the white matter.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::Result;
use crate::io::{write_labels, write_nifti, write_prob, Datatype};
use crate::pipeline::LabeledSubject;
use crate::rng::rng_from_seed;
use crate::volume::{Grid, LabelVolume, Mask, Volume};

pub const WM: u32 = 2;
pub const GM: u32 = 3;
pub const VENTRICLE: u32 = 4;
pub const CSF: u32 = 24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomOptions {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Lesion radius as a fraction of the smallest half-extent; 0 disables it.
    pub lesion_radius: f64,
    pub anat: bool,
    pub pathol: bool,
    /// Half-width of the uniform jitter added to the target images.
    pub texture: f64,
    pub seed: u64,
}

impl Default for PhantomOptions {
    fn default() -> Self {
        PhantomOptions {
            dims: [32; 3],
            spacing: [1.0; 3],
            lesion_radius: 0.15,
            anat: true,
            pathol: true,
            texture: 0.02,
            seed: 0,
        }
    }
}

/// Label map and lesion mask of the phantom.
pub fn phantom_labels(opts: &PhantomOptions) -> Result<(LabelVolume, Mask)> {
    let grid = Grid::new(opts.dims, opts.spacing)?;
    let c: [f64; 3] = std::array::from_fn(|a| (opts.dims[a] as f64 - 1.0) / 2.0);
    let h: [f64; 3] = std::array::from_fn(|a| opts.dims[a] as f64 / 2.0);
    let r_min = h.iter().cloned().fold(f64::INFINITY, f64::min);
    let lesion_c = [c[0] + 0.35 * h[0], c[1], c[2] + 0.1 * h[2]];
    let mut labels = Vec::with_capacity(grid.len());
    let mut lesion = Vec::with_capacity(grid.len());
    for k in 0..opts.dims[2] {
        for j in 0..opts.dims[1] {
            for i in 0..opts.dims[0] {
                let p = [i as f64, j as f64, k as f64];
                let r = (0..3).map(|a| ((p[a] - c[a]) / h[a]).powi(2)).sum::<f64>().sqrt();
                let l = if r > 0.9 {
                    0
                } else if r > 0.8 {
                    CSF
                } else if r > 0.62 {
                    GM
                } else if r < 0.15 {
                    VENTRICLE
                } else {
                    WM
                };
                let d = (0..3).map(|a| (p[a] - lesion_c[a]).powi(2)).sum::<f64>().sqrt();
                let in_lesion = l == WM && opts.lesion_radius > 0.0 && d <= opts.lesion_radius * r_min;
                labels.push(l);
                lesion.push(in_lesion);
            }
        }
    }
    Ok((
        LabelVolume::with_freesurfer_table(grid.clone(), labels)?,
        Mask::new(grid, lesion)?,
    ))
}

fn render(labels: &LabelVolume, lesion: &Mask, table: [f32; 5], texture: f64, seed: u64) -> Result<Volume> {
    let mut rng = rng_from_seed(seed);
    let data = labels
        .data()
        .iter()
        .zip(lesion.data())
        .map(|(&l, &m)| {
            let base = match (l, m) {
                (_, true) => table[4],
                (WM, _) => table[0],
                (GM, _) => table[1],
                (CSF | VENTRICLE, _) => table[2],
                _ => table[3],
            };
            if base == 0.0 {
                return 0.0;
            }
            let jitter = texture * (2.0 * rng.random::<f64>() - 1.0);
            (base as f64 + jitter).clamp(0.0, 1.0) as f32
        })
        .collect();
    Volume::new(labels.grid().clone(), data)
}

/// Phantom subject with T1-like and/or FLAIR-like targets in `[0, 1]`.
pub fn phantom_subject(id: &str, dataset: &str, opts: &PhantomOptions) -> Result<LabeledSubject> {
    let (labels, lesion) = phantom_labels(opts)?;
    //                                 WM   GM   CSF  bg   lesion
    let t1 = [0.80, 0.55, 0.20, 0.0, 0.40];
    let flair = [0.45, 0.55, 0.10, 0.0, 0.90];
    let anat = opts
        .anat
        .then(|| render(&labels, &lesion, t1, opts.texture, opts.seed))
        .transpose()?;
    let pathol = opts
        .pathol
        .then(|| render(&labels, &lesion, flair, opts.texture, opts.seed ^ 0xF1A1))
        .transpose()?;
    LabeledSubject::from_mask(id, dataset, labels, &lesion, anat, pathol)
}

/// Writes three phantom subjects (both targets, T1-only, FLAIR-only) of
/// `size`³ voxels under `dir`, plus `dir/manifest.toml`. Returns the manifest path.
pub fn write_phantom_dataset(dir: &Path, size: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let subjects = [
        ("sub-01", "both", true, true),
        ("sub-02", "t1only", true, false),
        ("sub-03", "flaironly", false, true),
    ];
    let mut manifest = String::from("schema_version = 1\n");
    for (n, (id, dataset, anat, pathol)) in subjects.into_iter().enumerate() {
        let opts = PhantomOptions {
            dims: [size; 3],
            anat,
            pathol,
            seed: n as u64,
            ..PhantomOptions::default()
        };
        let s = phantom_subject(id, dataset, &opts)?;
        let sub = dir.join(id);
        std::fs::create_dir_all(&sub)?;
        write_labels(&s.labels, sub.join("labels.nii.gz"), Datatype::U8)?;
        write_prob(&s.pathology, sub.join("pathology.nii.gz"), Datatype::F32)?;
        manifest += &format!(
            "\n[[subjects]]\nid = \"{id}\"\ndataset = \"{dataset}\"\nlabels = \"{id}/labels.nii.gz\"\n\
             pathology = \"{id}/pathology.nii.gz\"\npathology_kind = \"probability\"\n"
        );
        if let Some(v) = &s.gt_anat {
            write_nifti(v, sub.join("t1w.nii.gz"), Datatype::F32)?;
            manifest += &format!("gt_anat = \"{id}/t1w.nii.gz\"\n");
        }
        if let Some(v) = &s.gt_pathol {
            write_nifti(v, sub.join("flair.nii.gz"), Datatype::F32)?;
            manifest += &format!("gt_pathol = \"{id}/flair.nii.gz\"\n");
        }
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::TissueClass;

    #[test]
    fn phantom_has_all_tissues_and_a_lesion() {
        let s = phantom_subject("p", "d", &PhantomOptions::default()).unwrap();
        let present = s.labels.labels_present();
        for l in [0, WM, GM, VENTRICLE, CSF] {
            assert!(present.contains(&l), "missing label {l}");
        }
        assert_eq!(s.labels.class_of(WM), TissueClass::WhiteMatter);
        assert!(s.pathology.data().iter().any(|&p| p > 0.5));
        assert_eq!((s.alpha(), s.beta()), (1, 1));
    }
}
