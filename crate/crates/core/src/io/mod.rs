//! Reading subjects and writing generated samples.

pub mod manifest;
pub mod nifti;
pub mod sample;

pub use manifest::{load_manifest, Manifest, PathologyKind, SubjectEntry};
pub use nifti::{
    decode_nifti, encode_nifti, read_labels, read_nifti, read_prob, read_volume, write_labels, write_nifti, write_prob,
    Datatype, NiftiImage,
};
pub use sample::{regenerate, sample_dir, write_sample, SampleMeta};
