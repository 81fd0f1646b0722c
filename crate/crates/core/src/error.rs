use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("corrupted latent: non-finite value at index {index}")]
    CorruptedLatent { index: usize },

    #[error("UNCONSTRAINED: stiffness matrix is singular (pivot {pivot:e} at dof {dof})")]
    Unconstrained { dof: usize, pivot: f64 },

    #[error("linear solver did not converge: relative residual {residual:e}")]
    SolverDiverged { residual: f64 },

    #[error("optimality-criteria bisection failed to bracket the volume target (multiplier bounds [{lo:e}, {hi:e}])")]
    BisectionFailed { lo: f64, hi: f64 },

    #[error("warp violates the contraction bound |delta| < sigma*sqrt(e): {0}")]
    ContractionBound(String),

    #[error("warp point iteration did not converge: residual {residual:e} after {iters} iterations")]
    WarpNonConvergence { residual: f64, iters: usize },

    #[error("training diverged: non-finite loss at step {step} (lr {lr:e})")]
    NonFiniteLoss { step: usize, lr: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidField(_) => "invalid_field",
            Error::Parse { .. } => "parse_error",
            Error::CorruptedLatent { .. } => "corrupted_latent",
            Error::Unconstrained { .. } => "unconstrained",
            Error::SolverDiverged { .. } => "solver_diverged",
            Error::BisectionFailed { .. } => "bisection_failed",
            Error::ContractionBound(_) => "contraction_bound",
            Error::WarpNonConvergence { .. } => "warp_non_convergence",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Checkpoint(_) => "checkpoint",
            Error::InvalidRequest(_) => "invalid_request",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn parse(field: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Parse { field: field.into(), message: message.to_string() }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        // serde_json names missing/unknown keys in its message ("missing field `x`").
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .map(str::to_owned)
            .unwrap_or_else(|| "document".to_owned());
        Error::Parse { field, message: msg }
    }
}
