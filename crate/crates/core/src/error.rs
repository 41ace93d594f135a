use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The sphere touches or contains the camera center, so it has no
    /// well-defined elliptical image.
    #[error("degenerate projection: depth {depth} does not exceed radius {radius}")]
    DegenerateProjection { depth: f64, radius: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid scale anchor: {0}")]
    InvalidAnchor(String),

    #[error("unknown scale anchor `{0}`")]
    UnknownAnchor(String),

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid camera `{id}`: {reason}")]
    InvalidCamera { id: String, reason: String },

    #[error("invalid ellipse `{id}`: {reason}")]
    InvalidEllipse { id: String, reason: String },

    #[error("views `{0}` and `{1}` share no tie points")]
    NoSharedPoints(String, String),

    #[error("no image pair exceeds the convergence floor (largest angle found: {max_angle_deg:.3} deg)")]
    NoAdmissiblePair { max_angle_deg: f64 },

    #[error("unknown image `{0}`")]
    UnknownImage(String),

    #[error("infeasible scene: {0}")]
    ConfigInfeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl Error {
    /// Process exit status for the command line tool: 2 for unreadable or
    /// invalid input, 3 for degenerate geometry, 4 when nothing admissible
    /// was found.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateProjection { .. } | Error::DegenerateGeometry(_) | Error::NoSharedPoints(..) => 3,
            Error::NoAdmissiblePair { .. } => 4,
            _ => 2,
        }
    }
}
