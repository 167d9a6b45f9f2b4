use thiserror::Error;

use crate::subnet::SubnetParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("saturation {0} outside [0, 1]")]
    SaturationOutOfRange(f64),

    #[error("non-finite value for {0}")]
    NonFinite(&'static str),

    #[error("invalid mobility ratio {0}: must be finite and positive")]
    InvalidMobilityRatio(f64),

    #[error("no sign change bracketed for the Welge tangency on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("non-finite activation in layer {layer}{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFiniteForward { layer: usize, epoch: Option<usize> },

    #[error("non-finite PDE residual at (x = {x}, t = {t})")]
    NonFiniteResidual { x: f64, t: f64 },

    #[error("could only place {placed} of {requested} {region} points within {draws} rejection draws")]
    Sampling {
        region: &'static str,
        requested: usize,
        placed: usize,
        draws: usize,
    },

    #[error("mode {mode} needs {expected} subnet(s), got {got}")]
    ModeMismatch {
        mode: String,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        /// Parameters from the last epoch whose loss was finite.
        last_good: Box<Vec<SubnetParams>>,
    },

    #[error("unfair comparison budget: {0}")]
    BudgetMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
