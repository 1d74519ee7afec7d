use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid polytope: {0}")]
    InvalidPolytope(String),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("degenerate point cloud: affine rank {rank} < dimension {dim}")]
    DegenerateCloud { rank: usize, dim: usize },

    #[error("convex hull unsupported in dimension {0} (supported: 1 to 4)")]
    UnsupportedDimension(usize),

    #[error("polytope is empty")]
    EmptySet,

    #[error("polytope is unbounded in the requested direction")]
    Unbounded,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("disturbance support is not an axis-aligned box")]
    UnsupportedDistribution,

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("LP solver failed: {0}")]
    LpFailure(String),

    #[error("training data contains a single class ({0})")]
    SingleClass(&'static str),

    #[error("SVM training did not reach KKT tolerance after {0} iterations")]
    SvmNotConverged(usize),

    #[error("trained classifier places the origin on the infeasible side (decision = {0})")]
    OriginInfeasible(f64),

    #[error("Riccati iteration did not converge (residual {0:e})")]
    RiccatiNotConverged(f64),

    #[error("MPC problem infeasible at t = {t}")]
    MpcInfeasible { t: usize },

    #[error("QP solver stopped without convergence at t = {t}")]
    MpcNotConverged { t: usize },

    #[error("iteration {iteration}: MPC infeasible after constraint scaling")]
    UnrecoverableInfeasibility { iteration: usize },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidPolytope(_) => "invalid_polytope",
            Error::EmptyCloud => "empty_cloud",
            Error::DegenerateCloud { .. } => "degenerate_cloud",
            Error::UnsupportedDimension(_) => "unsupported_dimension",
            Error::EmptySet => "empty_set",
            Error::Unbounded => "unbounded",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnsupportedDistribution => "unsupported_distribution",
            Error::InvalidTask(_) => "invalid_task",
            Error::LpFailure(_) => "lp_failure",
            Error::SingleClass(_) => "single_class",
            Error::SvmNotConverged(_) => "svm_not_converged",
            Error::OriginInfeasible(_) => "origin_infeasible",
            Error::RiccatiNotConverged(_) => "riccati_not_converged",
            Error::MpcInfeasible { .. } => "mpc_infeasible",
            Error::MpcNotConverged { .. } => "mpc_not_converged",
            Error::UnrecoverableInfeasibility { .. } => "unrecoverable_infeasibility",
            Error::Scenario(_) => "scenario",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
