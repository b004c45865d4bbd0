use thiserror::Error;

/// Errors produced by estimation, selection, effects and simulation routines.
#[derive(Debug, Error)]
pub enum KnpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("truncation level {requested} outside 1..={max}")]
    TruncationOutOfRange { requested: usize, max: usize },

    #[error("requested {requested} eigenvectors but the effective rank of the gram matrix is {effective}")]
    RankExceeded { requested: usize, effective: usize },

    #[error(
        "optimizer did not converge on any of {restarts} restarts \
         (best objective {best_objective:.6e}, projected gradient {best_projected_gradient:.3e}, {iterations} iterations)"
    )]
    NotConverged {
        restarts: usize,
        best_objective: f64,
        best_projected_gradient: f64,
        iterations: usize,
    },

    #[error("no observation satisfies region `{0}`")]
    EmptyRegion(String),

    #[error("{failed} of {total} bootstrap refits failed (limit 5%)")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("symmetric eigendecomposition failed")]
    Eigendecomposition,
}

impl KnpError {
    /// True for failures of the numerical machinery, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            KnpError::NotConverged { .. }
                | KnpError::BootstrapFailures { .. }
                | KnpError::Eigendecomposition
        )
    }
}

pub type Result<T> = std::result::Result<T, KnpError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(KnpError::DimensionMismatch { expected, got })
    }
}
