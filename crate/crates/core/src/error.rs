use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown name: {0}")]
    Name(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("insufficient data: n = {n} must exceed df = {df}")]
    InsufficientData { n: usize, df: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("polarity error: {0}")]
    Polarity(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("no voxel has across-subject variance above var_min = {var_min}; lower var_min")]
    EmptySelection { var_min: f64 },

    #[error("at voxel ({}, {}, {}): {source}", voxel[0], voxel[1], voxel[2])]
    AtVoxel {
        voxel: [usize; 3],
        #[source]
        source: Box<Error>,
    },

    #[error("in grid combination {combo}: {source}")]
    InCombo {
        combo: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Strips voxel/combo context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtVoxel { source, .. } | Error::InCombo { source, .. } => source.root(),
            other => other,
        }
    }
}
