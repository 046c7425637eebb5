//! Shared error type for the whole crate.

/// Everything that can go wrong across the library.
///
/// Variants carry the concrete numbers that triggered the rejection so that
/// callers (and test failures) can see the actual violation, not just a name.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("spatial dimension must be 1 or 2, got {0}")]
    Dimension(usize),

    #[error("domain lengths must be positive and finite, got {0}")]
    Length(f64),

    #[error("need at least 4 interior grid points per axis, got {0}")]
    Grid(usize),

    #[error(
        "requested {requested} modes but the grid caps the basis at {capacity} \
         (anti-aliasing needs n >= 2j+2 interior points per axis)"
    )]
    BandExceedsGrid { requested: usize, capacity: usize },

    #[error("fields live on incompatible bases")]
    BasisMismatch,

    #[error("mode {0:?} is not present in the target basis")]
    ModeNotInBasis(Vec<usize>),

    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },

    #[error("{name} = {value} outside the required range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error(
        "beta = {beta} is inadmissible: stability requires 0 < beta < 1 - exp(-M*T*lambda_1) = {bound}; \
         raise M*T or the rule exponent c"
    )]
    BetaInadmissible { beta: f64, bound: f64 },

    #[error("Sobolev order must be >= 0, got {0}")]
    SobolevOrder(f64),

    #[error("Gevrey width must be > 0, got {0}")]
    GevreyWidth(f64),

    #[error("observation needs {requested} coefficients but the basis holds only {capacity} modes")]
    ObservationBand { requested: usize, capacity: usize },

    #[error("backward factor exp({exponent:.3}) on mode {mode} overflows f64; log-magnitude {exponent:.3}")]
    PropagationOverflow { mode: usize, exponent: f64 },

    #[error("field has non-finite values (first at index {0})")]
    NonFiniteField(usize),

    #[error("pointwise evaluation is undefined for a purely spectral source")]
    NonPointwiseSource,

    #[error("clip radius must be positive and finite, got {0}")]
    ClipRadius(f64),

    #[error("source '{0}' has no finite Lipschitz constant on bounded sets; clipping does not apply")]
    NotLocallyLipschitz(String),

    #[error(
        "forward solve diverged at step {step} (t = {time:.6}): norm {norm:.3e} exceeded \
         {guard:.1e} x the initial norm"
    )]
    Divergence {
        step: usize,
        time: f64,
        norm: f64,
        guard: f64,
    },

    #[error("linear step solve failed at step {step}: {reason}")]
    StepSolve { step: usize, reason: String },

    #[error(
        "fixed-point iteration is not contracting: successive-distance ratio {ratio:.3} > 1 \
         for 3 consecutive iterations (iteration {iteration}, relaxation {relaxed})"
    )]
    NonContraction {
        ratio: f64,
        iteration: usize,
        relaxed: bool,
    },

    #[error("fixed-point iteration did not reach tolerance {tolerance:.1e} within {max_iterations} iterations (last distance {last_distance:.3e})")]
    NoConvergence {
        tolerance: f64,
        max_iterations: usize,
        last_distance: f64,
    },

    #[error(
        "parameter-rule exponents violate the vanishing conditions: {detail}"
    )]
    ExponentConstraint { detail: String },

    #[error("perturbed coefficient leaves (0, M): min {min:.6}, max {max:.6}, M = {m_cap}")]
    CoefficientRange { min: f64, max: f64, m_cap: f64 },

    #[error("time grid needs at least 2 nodes, got {0}")]
    TimeGrid(usize),

    #[error("requested output time {t} is not a node of the trajectory (spacing {dt:.3e})")]
    TimeNotOnGrid { t: f64, dt: f64 },

    #[error("rate fit needs at least {needed} points, got {got}")]
    FitTooFewPoints { needed: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("report parse error at line {line}: {reason}")]
    ReportParse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
