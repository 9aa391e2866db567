use alloc::string::String;
use thiserror::Error;

/// Everything the numerical core can reject. Construction errors name the
/// offending parameter so callers can surface them verbatim.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("grid size n = {n} must be a power of two with n >= 8")]
    BadGridSize { n: usize },
    #[error("dimension d = {d} unsupported (this crate handles d = 1, 2, 3)")]
    BadDimension { d: usize },
    #[error("box length {len} must be positive and finite")]
    BadBoxLength { len: f64 },
    #[error("time horizon {horizon} must be positive and finite")]
    BadHorizon { horizon: f64 },
    #[error("time grid needs at least one step")]
    NoTimeSteps,
    #[error("fields live on different grids ({context})")]
    GridMismatch { context: &'static str },
    #[error("non-finite value at node {index} ({context})")]
    NonFinite { context: &'static str, index: usize },
    #[error("data length {got} does not match grid ({want} nodes expected) ({context})")]
    BadDataLength {
        context: &'static str,
        got: usize,
        want: usize,
    },
    #[error("matrix field not symmetric: |a[{i}{j}] - a[{j}{i}]| = {dev:e} at node {node}")]
    NotSymmetric {
        i: usize,
        j: usize,
        node: usize,
        dev: f64,
    },
    #[error("mollifier width delta = {delta:e} under-resolved at spacing h = {h:e} (need delta >= 2h)")]
    KernelUnderResolved { delta: f64, h: f64 },
    #[error("mollifier support (radius {support:e}) does not fit in half the box (L = {len:e})")]
    KernelTooWide { support: f64, len: f64 },
    #[error("Lebesgue exponent p = {p} invalid (need p >= 1 or infinity)")]
    BadExponent { p: f64 },
    #[error("norm ladder invalid: {msg}")]
    BadReport { msg: &'static str },
    #[error("rate fit needs at least 3 points, got {got}")]
    TooFewPoints { got: usize },
    #[error("singularity exponent gamma = {gamma} outside admissible interval ({lo}, {hi})")]
    GammaOutOfRange { gamma: f64, lo: f64, hi: f64 },
    #[error("coefficient class `{class}` requires d = {needs}, grid has d = {d}")]
    ClassNeedsDim {
        class: &'static str,
        needs: usize,
        d: usize,
    },
    #[error("coefficient set has no time slices")]
    NoSlices,
    #[error("diffusion matrix not positive definite at node {node} (pivot {pivot:e})")]
    NotPositiveDefinite { node: usize, pivot: f64 },
    #[error("advective CFL violated: dt = {dt:e} exceeds h/(2 d max|b|) = {dt_max:e}")]
    CflViolation { dt: f64, dt_max: f64 },
    #[error("linear solve stalled after {iters} iterations (relative residual {residual:e})")]
    LinearSolveFailed { iters: usize, residual: f64 },
    #[error("integrability hypothesis violated: 1/p + 1/q = {sum} exceeds {limit}")]
    HypothesisViolation { sum: f64, limit: f64 },
    #[error("renormalization profile invalid: saturation level M = {m} and width eps = {eps} (need M > 0, 0 < eps <= 1)")]
    BadRenormParams { m: f64, eps: f64 },
    #[error("initial density has negative mass fraction {fraction:e} (limit 1e-6)")]
    NegativeInitialMass { fraction: f64 },
    #[error("empty particle ensemble")]
    NoParticles,
    #[error("invalid configuration: {msg}")]
    BadConfig { msg: String },
}
