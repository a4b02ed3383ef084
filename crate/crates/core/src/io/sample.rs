//! On-disk layout of generated samples.
//!
//! ```text
//! out_dir/<subject>/<sample_index:06>/
//!     image.nii.gz
//!     target_anat.nii.gz     (when the subject has an anatomy target)
//!     target_pathol.nii.gz   (when the subject has a pathology target)
//!     pathology.nii.gz
//!     meta.json
//! ```
//!
//! `meta.json` holds everything needed to regenerate the sample bit-for-bit
//! from its source subject.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corruption::CorruptionSpec;
use crate::deformation::AffineParams;
use crate::error::{Error, Result};
use crate::io::nifti::{write_nifti, write_prob, Datatype};
use crate::pathology::{ContrastSpec, PathologyDraw};
use crate::pipeline::{generate_sample_with_seeds, GenConfig, GenSample, LabeledSubject, SampleSeeds};

pub const META_FILE: &str = "meta.json";
pub const IMAGE_FILE: &str = "image.nii.gz";
pub const TARGET_ANAT_FILE: &str = "target_anat.nii.gz";
pub const TARGET_PATHOL_FILE: &str = "target_pathol.nii.gz";
pub const PATHOLOGY_FILE: &str = "pathology.nii.gz";
pub const META_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub meta_version: u32,
    pub subject_id: String,
    pub dataset: String,
    pub sample_index: u64,
    pub batch_seed: u64,
    pub severity: f64,
    pub seeds: SampleSeeds,
    pub alpha: u8,
    pub beta: u8,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub affine: AffineParams,
    pub max_control_displacement_mm: f64,
    pub contrast: ContrastSpec,
    pub draw: PathologyDraw,
    pub corruption: CorruptionSpec,
    pub config: GenConfig,
}

impl SampleMeta {
    pub fn new(sample: &GenSample, sample_index: u64, batch_seed: u64, config: &GenConfig) -> Self {
        let grid = sample.image.grid();
        SampleMeta {
            meta_version: META_VERSION,
            subject_id: sample.subject_id.clone(),
            dataset: sample.dataset.clone(),
            sample_index,
            batch_seed,
            severity: sample.severity,
            seeds: sample.seeds,
            alpha: sample.availability.anat as u8,
            beta: sample.availability.pathol as u8,
            dims: grid.dims,
            spacing: grid.spacing,
            affine: sample.deformation.affine.clone(),
            max_control_displacement_mm: sample.deformation.max_control_displacement_mm(),
            contrast: sample.contrast.clone(),
            draw: sample.draw.clone(),
            corruption: sample.corruption.clone(),
            config: config.clone(),
        }
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(META_FILE);
        let inner = || -> Result<Self> {
            let meta: SampleMeta = serde_json::from_slice(&fs::read(&path)?)?;
            if meta.meta_version != META_VERSION {
                return Err(Error::Config(format!("unsupported meta_version {}", meta.meta_version)));
            }
            Ok(meta)
        };
        inner().map_err(|e| e.at_path(&path))
    }
}

pub fn sample_dir(out_dir: &Path, subject_id: &str, sample_index: u64) -> PathBuf {
    out_dir.join(subject_id).join(format!("{sample_index:06}"))
}

/// Writes one sample and returns its directory.
pub fn write_sample(
    sample: &GenSample,
    out_dir: impl AsRef<Path>,
    sample_index: u64,
    batch_seed: u64,
    config: &GenConfig,
) -> Result<PathBuf> {
    let dir = sample_dir(out_dir.as_ref(), &sample.subject_id, sample_index);
    fs::create_dir_all(&dir).map_err(|e| Error::from(e).at_path(&dir))?;
    write_nifti(&sample.image, dir.join(IMAGE_FILE), Datatype::F32)?;
    if let Some(v) = &sample.target_anat {
        write_nifti(v, dir.join(TARGET_ANAT_FILE), Datatype::F32)?;
    }
    if let Some(v) = &sample.target_pathol {
        write_nifti(v, dir.join(TARGET_PATHOL_FILE), Datatype::F32)?;
    }
    write_prob(&sample.pathology, dir.join(PATHOLOGY_FILE), Datatype::F32)?;
    let meta = SampleMeta::new(sample, sample_index, batch_seed, config);
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    let path = dir.join(META_FILE);
    fs::write(&path, json).map_err(|e| Error::from(e).at_path(&path))?;
    Ok(dir)
}

/// Regenerates a sample from its metadata record and source subject.
pub fn regenerate(meta: &SampleMeta, subject: &LabeledSubject) -> Result<GenSample> {
    if meta.subject_id != subject.id {
        return Err(Error::InvalidValue(format!(
            "metadata is for subject {}, got {}",
            meta.subject_id, subject.id
        )));
    }
    generate_sample_with_seeds(subject, meta.severity, meta.seeds, &meta.config)
}
