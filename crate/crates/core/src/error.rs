use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate ({0}, {1}, {2})")]
    InvalidCoordinate(f64, f64, f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("contrast spec has no entry for label {0}")]
    MissingLabel(u32),

    #[error("missing tissue class: no {0} voxels")]
    MissingTissueClass(&'static str),

    #[error("{0} target is flagged available but was not provided")]
    MissingTarget(&'static str),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("unexpected end of file at byte offset {offset}")]
    UnexpectedEof { offset: u64 },

    #[error("not a NIfTI-1 file: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("unsupported dimensions: {0}")]
    BadDimensions(String),

    #[error("probability map value {value} at voxel {index} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },

    #[error("non-integral label value {value} at voxel {index}")]
    NonIntegralLabel { index: usize, value: f64 },

    #[error("subject {subject}: field `{field}`: {message}")]
    Manifest {
        subject: String,
        field: &'static str,
        message: String,
    },

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::Path {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage and path context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Path { source, .. } => source.root(),
            other => other,
        }
    }
}
