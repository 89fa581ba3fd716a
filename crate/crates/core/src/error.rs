use thiserror::Error;

/// Errors raised anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("diffusion is negative at x = {x}: a(x) = {value}")]
    NegativeDiffusion { x: f64, value: f64 },

    #[error("simulation diverged in trajectory {traj} at step {step} (x = {value})")]
    BlowUp { traj: usize, step: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("library column {index} ({label}) is identically zero; the kernel grid does not cover the data")]
    DeadColumn { index: usize, label: String },

    #[error("empty support: no dynamics identified")]
    EmptySupport,

    #[error("rank-deficient design: columns {columns:?} are collinear with the rest of the support")]
    RankDeficient { columns: Vec<usize> },

    #[error("every coefficient was thresholded away: empty model")]
    EmptyModel,

    #[error("stationary density cannot be normalized: {0}")]
    NotNormalizable(String),

    #[error("density grids differ")]
    GridMismatch,

    #[error("trajectory has zero variance")]
    ZeroVariance,

    #[error("malformed input: {0}")]
    Format(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("config: {0}")]
    ConfigWrite(#[from] toml::ser::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numeric(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_numeric();
        }
        matches!(
            self,
            Error::NegativeDiffusion { .. }
                | Error::BlowUp { .. }
                | Error::DeadColumn { .. }
                | Error::EmptySupport
                | Error::RankDeficient { .. }
                | Error::EmptyModel
                | Error::NotNormalizable(_)
                | Error::ZeroVariance
        )
    }

    /// True for rejected configuration or parameters.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_config(),
            Error::InvalidParameter(_) | Error::ConfigParse(_) | Error::ConfigWrite(_) => true,
            _ => false,
        }
    }

    /// Wraps `self` with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
