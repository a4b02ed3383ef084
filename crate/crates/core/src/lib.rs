//! Pathology-encoded synthetic brain MRI generation.
//!
//! The crate turns anatomy label maps and lesion annotations into randomized
//! training volumes: a random deformation warps labels and anomaly maps, a
//! Gaussian intensity model paints an anomaly-free image, a direction-aware
//! shift encodes the lesions, and an acquisition-corruption pipeline degrades
//! the result. Batches follow a mild-to-severe corruption schedule within one
//! subject.
//!
//! Alongside the generator live the training objectives (dual-target synthesis
//! loss, implicit pathology loss through a frozen reference segmenter) and the
//! evaluation metrics (L1, PSNR, SSIM, Dice) as pure kernels, plus NIfTI-1 I/O
//! and dataset manifests.

pub mod corruption;
pub mod deformation;
pub mod error;
pub mod filter;
pub mod io;
pub mod metrics;
pub mod objectives;
pub mod pathology;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Border, Grid, Interp, LabelVolume, Mask, ProbVolume, TissueClass, Volume};
