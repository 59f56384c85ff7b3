//! Initial data presets. All are projected onto the dealiasing band.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taf_core::{ModelState, Result, TorusGrid};

use crate::config::{RunConfig, Scenario};

const TWO_PI: f64 = 2.0 * PI;

/// Positive, band-limited, `ρ ∈ [0.25, 0.55]`.
pub fn smooth(grid: TorusGrid) -> Result<ModelState> {
    ModelState::band_limited(grid, smooth_fn)
}

fn smooth_fn([x, y, th]: [f64; 3]) -> f64 {
    (0.4 + 0.15 * x.cos() * y.cos()) / TWO_PI + 0.02 * (th - x).cos() + 0.008 * (2.0 * y + th).sin()
}

/// `ρ₀ = 0.6 + 0.35 cos x cos y` (maximum 0.95) with a θ-profile that leaves ρ₀ unchanged.
pub fn near_degenerate(grid: TorusGrid) -> Result<ModelState> {
    ModelState::band_limited(grid, |[x, y, th]| {
        (0.6 + 0.35 * x.cos() * y.cos()) / TWO_PI * (1.0 + 0.5 * (th - x).cos())
    })
}

/// θ-independent data `ρ₀ = ½ + 0.4 cos x`.
pub fn pure_heat(grid: TorusGrid) -> Result<ModelState> {
    ModelState::band_limited(grid, |[x, _, _]| (0.5 + 0.4 * x.cos()) / TWO_PI)
}

pub fn constant(grid: TorusGrid, rho: f64) -> Result<ModelState> {
    ModelState::band_limited(grid, move |_| rho / TWO_PI)
}

/// The smooth state multiplied by `1 + a·N`, with `N` a seeded random trigonometric
/// polynomial (wavenumbers up to 3 per axis) normalized to `max |N| = 1`.
pub fn noise(grid: TorusGrid, amplitude: f64, seed: u64) -> Result<ModelState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::new();
    for kx in -3i32..=3 {
        for ky in -3i32..=3 {
            for kt in 0i32..=3 {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let phase: f64 = rng.gen_range(0.0..TWO_PI);
                modes.push((kx as f64, ky as f64, kt as f64, a, phase));
            }
        }
    }
    let eval = |[x, y, th]: [f64; 3]| -> f64 {
        modes
            .iter()
            .map(|&(a, b, c, amp, ph)| amp * (a * x + b * y + c * th + ph).cos())
            .sum()
    };
    let peak = (0..grid.len())
        .map(|i| eval(grid.coords(i)).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    ModelState::band_limited(grid, |x| smooth_fn(x) * (1.0 + amplitude * eval(x) / peak))
}

pub fn initial_state(config: &RunConfig) -> Result<ModelState> {
    let grid = config.grid();
    match config.scenario {
        Scenario::Constant => constant(grid, config.rho),
        Scenario::NearDegenerate => near_degenerate(grid),
        Scenario::Smooth | Scenario::UniquenessPair => smooth(grid),
        Scenario::PureHeat => pure_heat(grid),
        Scenario::Noise => noise(grid, config.amplitude, config.seed),
    }
}
