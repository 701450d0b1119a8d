use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 2")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("inconsistent POVM: {0}")]
    InconsistentPovm(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("SIC search did not converge: best max overlap deviation {best_deviation:e}")]
    SicNotConverged { best_deviation: f64 },

    #[error("no real solution for corrected width (w = {w}, w_f = {w_f}); need w_f > w")]
    NoRealSolution { w: f64, w_f: f64 },

    #[error("quadrature did not converge: relative change {0:e}")]
    IntegrationFailure(f64),

    #[error("KL divergence is infinite: predicted probability 0 where target is {0}")]
    DivergenceInfinite(f64),

    #[error("probes and POVM are not informationally complete for process tomography (rank {rank}, need {needed})")]
    ProbesNotComplete { rank: usize, needed: usize },

    #[error("phase undefined: diagonal entry {index} has modulus {modulus:e}")]
    PhaseUndefined { index: usize, modulus: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self.root(),
            Error::Io(_) | Error::Json(_) | Error::Csv(_)
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::SicNotConverged { .. }
                | Error::IntegrationFailure(_)
                | Error::DivergenceInfinite(_)
                | Error::Numerical(_)
                | Error::PhaseUndefined { .. }
        )
    }
}
