//! Pseudo-spectral simulation and verification toolkit for a kinetic model of
//! self-propelled particles with volume exclusion on the periodic domain
//! Υ = (0,2π)² × (0,2π):
//!
//! ```text
//! ∂t f + div((1−ρ) f e(θ)) = div((1−ρ)∇f + f∇ρ) + ∂²θ f,   ρ = ∫ f dθ,   e(θ) = (cos θ, sin θ).
//! ```
//!
//! Modules:
//!
//! * [`spectral`] — grids, transforms, derivatives, dealiasing, norms.
//! * [`moments`] — angular moments ρ, p, ℙ, πⁿ, the sources π̃ⁿ, and the entropy.
//! * [`evolution`] — right-hand sides, barrier functions, Galerkin projection, time stepping.
//! * [`diagnostics`] — truncations, energy ladders, monitors and residuals.
//! * [`heatkernel`] — the periodic heat kernel, gradient norms and Duhamel convolution.
//! * [`uniqueness`] — paired trajectories and difference-system diagnostics.

pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod heatkernel;
pub mod moments;
pub mod spectral;
pub mod uniqueness;

pub use error::{Error, Result};
pub use evolution::{HFunction, ModelState, SolverConfig};
pub use moments::MomentSet;
pub use spectral::{Domain, Rank, RealField, SpectralField, TorusGrid};
