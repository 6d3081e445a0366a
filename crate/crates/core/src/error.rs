use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    Dimension(String),
    #[error("basis mismatch: {0}")]
    BasisMismatch(String),
    #[error("operator is not hermitian (defect {defect:.3e})")]
    NotHermitian { defect: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("resonant part still present: max entry {0:.3e}")]
    ResonantPart(f64),
    #[error("spectral projection vanishes (mass {mass:.3e}); seed has no weight in [{lo}, {hi}]")]
    ZeroProjection { mass: f64, lo: f64, hi: f64 },
    #[error("unitarity drift {drift:.3e} at t = {t}")]
    UnitarityDrift { t: f64, drift: f64 },
    #[error("boundary mass {mass:.3e} at t = {t}: increase N")]
    BoundaryMass { t: f64, mass: f64 },
    #[error("fit rejected: {0}")]
    Fit(String),
    #[error("uncertified window: {0}")]
    Uncertified(String),
    #[error("eigensolver failed")]
    Eigen,
    #[error("singular pivot in banded solve at row {0}")]
    SingularPivot(usize),
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}
