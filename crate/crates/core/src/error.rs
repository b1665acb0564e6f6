use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate point: |x| = {0:e} is below the eigenframe tolerance")]
    DegeneratePoint(f64),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("mass drift {drift:e} exceeds {limit:e} at t = {time}")]
    MassDrift { drift: f64, limit: f64, time: f64 },
    #[error("no crossing: min |x| = {0:e} stays above the stop radius")]
    NoCrossing(f64),
    #[error("non-transversal crossing: |xi*| = {0:e}")]
    NonTransversal(f64),
    #[error("caustic: {0}")]
    Caustic(String),
    #[error("non-plateau: stripped amplitudes drift by {0:e} over the averaging window")]
    NonPlateau(f64),
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("non-convergence: {0}")]
    NonConvergence(String),
    #[error("mass loss {lost:e} exceeds {limit:e}")]
    MassLoss { lost: f64, limit: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}
