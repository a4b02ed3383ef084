//! TOML dataset manifests.
//!
//! ```toml
//! schema_version = 1
//!
//! [datasets.adni]
//! weight = 2.0
//!
//! [[subjects]]
//! id = "sub-001"
//! dataset = "adni"
//! labels = "sub-001/labels.nii.gz"
//! pathology = "sub-001/lesion.nii.gz"
//! pathology_kind = "mask"        # or "probability"
//! gt_anat = "sub-001/t1w.nii.gz"
//! gt_anat_modality = "t1w"       # default
//! gt_pathol = "sub-001/flair.nii.gz"
//! gt_pathol_modality = "flair"   # default
//! ```
//!
//! Relative paths resolve against the manifest's directory. An optional
//! `[label_table]` (top level or per subject) maps label values to tissue
//! classes; otherwise FreeSurfer conventions apply.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::nifti::{read_labels, read_nifti, read_prob, read_volume};
use crate::pathology::{anomaly_probability, ModalityClass};
use crate::pipeline::LabeledSubject;
use crate::volume::{Mask, TissueClass};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathologyKind {
    /// Binary lesion mask; the anomaly map is derived from target intensities.
    #[default]
    Mask,
    /// Ready-made anomaly probability map in `[0, 1]`.
    Probability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub dataset: String,
    pub labels: PathBuf,
    pub pathology: PathBuf,
    #[serde(default)]
    pub pathology_kind: PathologyKind,
    pub gt_anat: Option<PathBuf>,
    #[serde(default = "default_anat_modality")]
    pub gt_anat_modality: ModalityClass,
    pub gt_pathol: Option<PathBuf>,
    #[serde(default = "default_pathol_modality")]
    pub gt_pathol_modality: ModalityClass,
    pub label_table: Option<BTreeMap<String, TissueClass>>,
}

fn default_anat_modality() -> ModalityClass {
    ModalityClass::T1wLike
}

fn default_pathol_modality() -> ModalityClass {
    ModalityClass::T2wFlairLike
}

impl SubjectEntry {
    pub fn alpha(&self) -> u8 {
        self.gt_anat.is_some() as u8
    }

    pub fn beta(&self) -> u8 {
        self.gt_pathol.is_some() as u8
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetEntry>,
    #[serde(default)]
    pub label_table: Option<BTreeMap<String, TissueClass>>,
    pub subjects: Vec<SubjectEntry>,
}

fn manifest_err(subject: &str, field: &'static str, message: impl Into<String>) -> Error {
    Error::Manifest {
        subject: subject.to_string(),
        field,
        message: message.into(),
    }
}

fn parse_table(subject: &str, raw: &BTreeMap<String, TissueClass>) -> Result<BTreeMap<u32, TissueClass>> {
    raw.iter()
        .map(|(k, &c)| {
            k.trim()
                .parse::<u32>()
                .map(|l| (l, c))
                .map_err(|_| manifest_err(subject, "label_table", format!("`{k}` is not a label value")))
        })
        .collect()
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m: Manifest = toml::from_str(text)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest schema_version {} (expected {SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        if m.subjects.is_empty() {
            return Err(Error::Config("manifest lists no subjects".into()));
        }
        for (tag, d) in &m.datasets {
            if !(d.weight.is_finite() && d.weight >= 0.0) {
                return Err(Error::Config(format!(
                    "dataset {tag}: weight {} must be >= 0",
                    d.weight
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &mut m.subjects {
            if !seen.insert(s.id.clone()) {
                return Err(manifest_err(&s.id, "id", "duplicate subject id"));
            }
            if s.gt_anat.is_none() && s.gt_pathol.is_none() {
                return Err(manifest_err(
                    &s.id,
                    "gt_anat",
                    "subject needs gt_anat, gt_pathol or both",
                ));
            }
            let resolve = |p: &mut PathBuf, field: &'static str| -> Result<()> {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.is_file() {
                    return Err(manifest_err(&s.id, field, format!("file not found: {}", p.display())));
                }
                Ok(())
            };
            resolve(&mut s.labels, "labels")?;
            resolve(&mut s.pathology, "pathology")?;
            if let Some(p) = s.gt_anat.as_mut() {
                resolve(p, "gt_anat")?;
            }
            if let Some(p) = s.gt_pathol.as_mut() {
                resolve(p, "gt_pathol")?;
            }
            if let Some(t) = &s.label_table {
                parse_table(&s.id, t)?;
            }
        }
        if let Some(t) = &m.label_table {
            parse_table("<manifest>", t)?;
        }
        Ok(m)
    }

    /// Dataset weights; tags without an entry weigh 1.
    pub fn weights(&self) -> BTreeMap<String, f64> {
        self.datasets.iter().map(|(k, d)| (k.clone(), d.weight)).collect()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectEntry> {
        self.subjects.iter().find(|s| s.id == id)
    }

    /// Reads the subject's volumes and builds its anomaly map.
    pub fn load_subject(&self, entry: &SubjectEntry) -> Result<LabeledSubject> {
        let id = entry.id.as_str();
        let wrap = |field: &'static str| move |e: Error| manifest_err(id, field, e.to_string());
        let table = match (&entry.label_table, &self.label_table) {
            (Some(t), _) | (None, Some(t)) => Some(parse_table(id, t)?),
            (None, None) => None,
        };
        let labels = read_labels(&entry.labels, table.as_ref()).map_err(wrap("labels"))?;
        let gt_anat = entry
            .gt_anat
            .as_ref()
            .map(read_volume)
            .transpose()
            .map_err(wrap("gt_anat"))?;
        let gt_pathol = entry
            .gt_pathol
            .as_ref()
            .map(read_volume)
            .transpose()
            .map_err(wrap("gt_pathol"))?;
        let pathology = match entry.pathology_kind {
            PathologyKind::Probability => read_prob(&entry.pathology).map_err(wrap("pathology"))?,
            PathologyKind::Mask => {
                let img = read_nifti(&entry.pathology).map_err(wrap("pathology"))?;
                let values: Vec<f32> = img.data.iter().map(|&v| v as f32).collect();
                let mask = Mask::from_values(img.grid, &values, 0.0).map_err(wrap("pathology"))?;
                let (reference, modality) = match (&gt_pathol, &gt_anat) {
                    (Some(v), _) => (v, entry.gt_pathol_modality),
                    (None, Some(v)) => (v, entry.gt_anat_modality),
                    (None, None) => unreachable!("checked at parse time"),
                };
                anomaly_probability(reference, &mask, modality).map_err(wrap("pathology"))?
            }
        };
        LabeledSubject::new(id, entry.dataset.clone(), labels, pathology, gt_anat, gt_pathol).map_err(wrap("labels"))
    }

    pub fn load_subjects(&self) -> Result<Vec<LabeledSubject>> {
        self.subjects.iter().map(|s| self.load_subject(s)).collect()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Manifest::parse(&text, base)
}
