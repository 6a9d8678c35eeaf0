use thiserror::Error;

/// Errors raised by the solver, the oracles and the instance loader.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SidarError {
    /// A matrix has the wrong shape. `field` names the offending input.
    #[error("dimension mismatch in {field}: {reason}")]
    Dimension { field: String, reason: String },

    /// The instance violates a structural invariant (symmetry, definiteness,
    /// horizon, budget).
    #[error("invalid instance field {field}: {reason}")]
    InvalidInstance { field: String, reason: String },

    /// The stage block matrix is numerically singular, usually because the
    /// multiplier sits too close to a feasibility boundary.
    #[error("singular block matrix{} (condition {condition:.3e})", stage_suffix(*.stage))]
    SingularBlock {
        stage: Option<usize>,
        condition: f64,
    },

    /// `I + (B R^-1 B' - G G'/lambda) Pi` could not be inverted.
    #[error("singular inner matrix in the closed-form recursion (condition {condition:.3e})")]
    SingularInner { condition: f64 },

    /// A bracket search for a scalar root ran past its upper limit.
    #[error("bracket search for {what} exceeded {limit:e} without a sign change")]
    BracketFailure { what: &'static str, limit: f64 },

    /// A disturbance grid became empty after applying the budget.
    #[error("empty disturbance grid at stage {stage}")]
    EmptyGrid { stage: usize },

    /// The request is outside what the routine supports.
    #[error("unsupported request: {0}")]
    Unsupported(String),

    /// Malformed input file.
    #[error("parse error: {0}")]
    Parse(String),
}

fn stage_suffix(stage: Option<usize>) -> String {
    match stage {
        Some(k) => format!(" at stage {k}"),
        None => String::new(),
    }
}

impl SidarError {
    pub(crate) fn dimension(field: &str, reason: impl Into<String>) -> Self {
        SidarError::Dimension {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        SidarError::InvalidInstance {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Attaches a stage index to a `SingularBlock` raised by a single step.
    pub(crate) fn at_stage(self, k: usize) -> Self {
        match self {
            SidarError::SingularBlock { stage: None, condition } => SidarError::SingularBlock {
                stage: Some(k),
                condition,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, SidarError>;
