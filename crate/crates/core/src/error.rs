use thiserror::Error;

use crate::evolution::ModelState;
use crate::spectral::TorusGrid;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("grid mismatch: {0} vs {1}")]
    GridMismatch(TorusGrid, TorusGrid),

    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("axis {axis} out of range for a {dims}-dimensional grid")]
    Axis { axis: usize, dims: usize },

    #[error("unsupported derivative order {0} (expected 1 or 2)")]
    DerivativeOrder(usize),

    #[error("invalid exponent q = {0} (need q >= 1)")]
    Exponent(f64),

    #[error("rank mismatch: {0}")]
    Rank(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("angle-averaged density exceeds 1 + {floor:e} on a fraction {fraction:.3e} of the grid (max rho = {max_rho})")]
    DensityOverflow { fraction: f64, max_rho: f64, floor: f64 },

    #[error("u + eps = {value:e} <= 0 at grid point ({ix}, {iy})")]
    Degenerate { value: f64, ix: usize, iy: usize },

    #[error("invalid barrier function: {0}")]
    Barrier(String),

    #[error("insufficient samples: {0}")]
    Samples(String),

    #[error("misaligned trajectories: {0}")]
    Misaligned(String),

    #[error("test function is not band-limited to the dealiasing cutoff (out-of-band energy fraction {0:e})")]
    NotBandLimited(f64),

    #[error("missing time-derivative input: {0}")]
    MissingDerivative(&'static str),

    #[error("tensor order {order} exceeds configured maximum {max}")]
    TensorOrder { order: usize, max: usize },

    #[error("gradient norm diverges for q = {0} (requires 1 <= q < 4/3)")]
    KernelExponent(f64),

    #[error("time t = {0} must be positive")]
    NonPositiveTime(f64),

    #[error("numerical abort at t = {t} (step {step}): {reason}")]
    Abort {
        t: f64,
        step: u64,
        reason: String,
        last_good: Box<ModelState>,
    },
}
