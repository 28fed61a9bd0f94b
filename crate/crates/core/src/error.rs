use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("symmetric eigensolver did not converge on a {dim}x{dim} matrix")]
    NonConvergence { dim: usize },

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eig:e} < -{tol:e}")]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("matrix is not symmetric: |a_ij - a_ji| = {deviation:e} exceeds {tol:e}")]
    NotSymmetric { deviation: f64, tol: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("source covariance is singular (smallest eigenvalue {min_eig:e}); use the singular transport map")]
    SourceSingular { min_eig: f64 },

    #[error("covariances do not commute: ||AB - BA||_F = {residual:e}")]
    NotCommuting { residual: f64 },

    #[error("bad parameter: {0}")]
    BadParameter(String),

    #[error("negative input: {name} = {value}")]
    NegativeInput { name: &'static str, value: f64 },

    #[error("perception {p} is outside [0, G*] with G* = {g_star}")]
    PerceptionOutOfRange { p: f64, g_star: f64 },

    #[error("matrix does not satisfy the family conditions: {0}")]
    InvalidFamilyMatrix(String),

    #[error("problem too large: {n} x {m} transport cells exceeds {limit}")]
    SizeLimit { n: usize, m: usize, limit: usize },

    #[error("need at least 2 patches, got {0}")]
    TooFewPatches(usize),

    #[error("patch side {k} does not fit in a {width}x{height} image")]
    PatchTooLarge { k: usize, width: usize, height: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },

    #[error("invalid model ({block}): {msg}")]
    InvalidModel { block: String, msg: String },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonConvergence { .. } => "NonConvergence",
            Error::NotPsd { .. } => "NotPSD",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::SourceSingular { .. } => "SourceSingular",
            Error::NotCommuting { .. } => "NotCommuting",
            Error::BadParameter(_) => "BadParameter",
            Error::NegativeInput { .. } => "NegativeInput",
            Error::PerceptionOutOfRange { .. } => "PerceptionOutOfRange",
            Error::InvalidFamilyMatrix(_) => "InvalidFamilyMatrix",
            Error::SizeLimit { .. } => "SizeLimit",
            Error::TooFewPatches(_) => "TooFewPatches",
            Error::PatchTooLarge { .. } => "PatchTooLarge",
            Error::EmptyInput(_) => "EmptyInput",
            Error::Parse { .. } => "ParseError",
            Error::InvalidModel { .. } => "InvalidModel",
            Error::CheckFailed(_) => "CheckFailed",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            msg: msg.into(),
        }
    }
}
