//! Crate-wide error type with process exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no feasible epsilon: condition (loglog(1/eps))^-d * M1 < eta/10 fails even at the f64 floor (M1 = {m1}, eta = {eta})")]
    NoFeasibleEpsilon { m1: f64, eta: f64 },

    #[error("empty truncation set: upper cutoff {cutoff} admits no lattice points (L = {lattice_l})")]
    EmptySet { cutoff: f64, lattice_l: f64 },

    #[error("bump support [{support}] exceeds the coefficient window [-pi*L/2, pi*L/2] = [{window}]")]
    SupportViolation { support: f64, window: f64 },

    #[error("quadrature did not converge after {levels} refinements (last relative change {last_change:e})")]
    QuadratureNonConvergence { levels: usize, last_change: f64 },

    #[error("frame error {measured:.6e} exceeds eta = {eta} (relative L2 over the domain)")]
    FrameErrorExceeded { measured: f64, eta: f64 },

    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),

    #[error("point lies outside the domain")]
    PointOutsideDomain,

    #[error("initial data does not vanish on boundary cells (boundary mass {ratio:e} of max)")]
    BoundaryViolation { ratio: f64 },

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("bound violated for index {index}: lower {lower:.6e} <= value {value:.6e} <= upper {upper:.6e} fails")]
    BoundViolation {
        index: String,
        lower: f64,
        value: f64,
        upper: f64,
    },

    #[error("pencil degenerate: H failed Cholesky (shrink the index set or T)")]
    PencilDegenerate,

    #[error("infeasible measure: requested mass {requested} exceeds |domain| = {available}")]
    InfeasibleMeasure { requested: f64, available: f64 },

    #[error("saddle solver did not converge: gap {gap:e} after {iters} iterations")]
    NoConvergence { gap: f64, iters: usize },

    #[error("sandwich violated on trial {trial}: ratio {ratio:.6e} outside [{lo:.6e}, {hi:.6e}]")]
    SandwichViolation {
        trial: usize,
        ratio: f64,
        lo: f64,
        hi: f64,
    },

    #[error("assertion failed: {0}")]
    AssertionFailure(String),

    #[error("negative argument: {0}")]
    NegativeArgument(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 2 precondition violation, 3 numerical nonconvergence,
    /// 4 invariant failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoFeasibleEpsilon { .. }
            | Error::EmptySet { .. }
            | Error::SupportViolation { .. }
            | Error::NonpositiveTime(_)
            | Error::PointOutsideDomain
            | Error::BoundaryViolation { .. }
            | Error::PreconditionViolation(_)
            | Error::HypothesisViolation(_)
            | Error::InfeasibleMeasure { .. }
            | Error::Config(_)
            | Error::Format(_)
            | Error::Io(_) => 2,
            Error::QuadratureNonConvergence { .. } | Error::NoConvergence { .. } => 3,
            Error::FrameErrorExceeded { .. }
            | Error::BoundViolation { .. }
            | Error::PencilDegenerate
            | Error::SandwichViolation { .. }
            | Error::AssertionFailure(_)
            | Error::NegativeArgument(_) => 4,
        }
    }
}
