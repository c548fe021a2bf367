use thiserror::Error;

pub type Result<T, E = SolverError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("field contains a non-finite value at node ({i}, {j})")]
    NonFiniteField { i: usize, j: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("parity mismatch: {0}")]
    ParityMismatch(String),

    #[error("dilation factor must be positive, got {0}")]
    InvalidDilation(f64),

    #[error("invalid nonlinearity: {0}")]
    InvalidModel(String),

    #[error("iterative solve did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("seed is infeasible: integral of G over the seed is {integral:.6e}; enlarge seed.R or seed.amplitude")]
    SeedInfeasible { integral: f64 },

    #[error("computational box too small: {0}")]
    DomainTooSmall(String),

    #[error("iterate left the feasible cone: integral of G is {integral:.6e}")]
    ConstraintInfeasible { integral: f64 },

    #[error("constraint normal g(u) vanishes in L2")]
    DegenerateConstraintNormal,

    #[error("line search exhausted after {backtracks} backtracks (step {step:.3e})")]
    StallDetected { backtracks: usize, step: f64 },

    #[error("Lagrange multiplier is not positive: {0:.6e}")]
    NegativeMultiplier(f64),

    #[error("solution contract violated: {0}")]
    ContractViolated(String),
    #[error("surgery preconditions violated: {0}")]
    SurgeryInfeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SolverError {
    /// Short machine-readable tag used in run summaries.
    pub fn tag(&self) -> &'static str {
        match self {
            SolverError::NonFiniteField { .. } => "non_finite_field",
            SolverError::InvalidGrid(_) => "invalid_grid",
            SolverError::GridMismatch => "grid_mismatch",
            SolverError::ParityMismatch(_) => "parity_mismatch",
            SolverError::InvalidDilation(_) => "invalid_dilation",
            SolverError::InvalidModel(_) => "invalid_model",
            SolverError::NoConvergence { .. } => "no_convergence",
            SolverError::SeedInfeasible { .. } => "seed_infeasible",
            SolverError::DomainTooSmall(_) => "domain_too_small",
            SolverError::ConstraintInfeasible { .. } => "constraint_infeasible",
            SolverError::DegenerateConstraintNormal => "degenerate_constraint_normal",
            SolverError::StallDetected { .. } => "stall_detected",
            SolverError::NegativeMultiplier(_) => "negative_multiplier",
            SolverError::ContractViolated(_) => "contract_violated",
            SolverError::SurgeryInfeasible(_) => "surgery_infeasible",
            SolverError::Config(_) => "config",
            SolverError::Parse(_) => "parse",
            SolverError::Io(_) => "io",
        }
    }
}
