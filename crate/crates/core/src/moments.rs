//! Angular moments of a distribution `f(x, θ)` and the entropy functional.
//!
//! An order-`n` tensor has `2ⁿ` components. Component `c` holds the entry with
//! indices `(i₁, …, iₙ)`, `iₘ ∈ {0, 1}`, where `c = Σₘ iₘ 2^{n−m}` (first index most
//! significant). Divergences of tensors act on the last index.
//!
//! θ-integrals use the uniform trapezoid rule, which is exact for trigonometric
//! integrands of bandwidth below `nθ`.

use crate::error::{Error, Result};
use crate::spectral::{Rank, RealField, TorusGrid};

/// Default largest tensor order.
pub const DEFAULT_MAX_ORDER: usize = 3;

/// Default tolerance for `f ≥ 0` and `ρ ≤ 1` in the entropy.
pub const DEFAULT_ENTROPY_FLOOR: f64 = 1e-12;

/// Exponents `(a, b)` of `cos^a θ sin^b θ` for tensor component `c` of order `n`.
pub fn component_exponents(n: usize, c: usize) -> (i32, i32) {
    let b = c.count_ones() as i32;
    (n as i32 - b, b)
}

/// `e(θ)⊗…⊗e(θ)` entry for component `c` of an order-`n` tensor.
pub fn kernel(n: usize, c: usize, theta: f64) -> f64 {
    let (a, b) = component_exponents(n, c);
    theta.cos().powi(a) * theta.sin().powi(b)
}

/// `∂²θ` of [`kernel`]:
/// `a(a−1)cos^{a−2}sin^{b+2} + b(b−1)cos^{a+2}sin^{b−2} − (a+b+2ab)cos^a sin^b`.
pub fn kernel_dd(n: usize, c: usize, theta: f64) -> f64 {
    let (a, b) = component_exponents(n, c);
    let (co, si) = (theta.cos(), theta.sin());
    let mono = |p: i32, q: i32| co.powi(p) * si.powi(q);
    let mut v = -((a + b + 2 * a * b) as f64) * mono(a, b);
    if a >= 2 {
        v += (a * (a - 1)) as f64 * mono(a - 2, b + 2);
    }
    if b >= 2 {
        v += (b * (b - 1)) as f64 * mono(a + 2, b - 2);
    }
    v
}

fn require_upsilon(f: &RealField) -> Result<TorusGrid> {
    let g = f.grid();
    if g.dims() != 3 {
        return Err(Error::Grid(format!("moments need a field on Υ, got {g}")));
    }
    if f.rank() != Rank::SCALAR {
        return Err(Error::Rank("moments need a scalar distribution".into()));
    }
    Ok(g)
}

/// `∫ f(x,θ) w(θ) dθ` for a scalar field on Υ, one result per weight vector.
fn weighted_theta_sums(f: &RealField, weights: &[Vec<f64>]) -> Result<Vec<f64>> {
    let g = require_upsilon(f)?;
    let n2 = g.nx() * g.ny();
    let dth = g.spacing(2);
    let vals = f.values();
    let mut out = vec![0.0; n2 * weights.len()];
    for (c, w) in weights.iter().enumerate() {
        let dst = &mut out[c * n2..(c + 1) * n2];
        for (it, &wt) in w.iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            let plane = &vals[it * n2..(it + 1) * n2];
            for (d, &v) in dst.iter_mut().zip(plane) {
                *d += wt * v;
            }
        }
        for d in dst.iter_mut() {
            *d *= dth;
        }
    }
    Ok(out)
}

fn theta_nodes(g: TorusGrid) -> impl Iterator<Item = f64> {
    let h = g.spacing(2);
    (0..g.ntheta()).map(move |i| i as f64 * h)
}

/// `∫₀^{2π} F(x,θ) dθ` for a (possibly multi-component) field on Υ.
pub fn theta_integral(field: &RealField) -> Result<RealField> {
    let g = field.grid();
    if g.dims() != 3 {
        return Err(Error::Grid(format!("θ-integral of a field on {g}")));
    }
    let planar = g.planar();
    let n2 = planar.len();
    let dth = g.spacing(2);
    let mut out = Vec::with_capacity(n2 * field.rank().components());
    for c in 0..field.rank().components() {
        let comp = field.component_slice(c);
        let mut acc = vec![0.0; n2];
        for plane in comp.chunks_exact(n2) {
            for (a, v) in acc.iter_mut().zip(plane) {
                *a += v;
            }
        }
        out.extend(acc.into_iter().map(|a| a * dth));
    }
    RealField::from_values(planar, field.rank(), out)
}

/// The order-`n` moment `πⁿ = ∫ f e(θ)^{⊗n} dθ`; `n = 0, 1, 2` give ρ, **p**, ℙ.
pub fn moment_tensor(f: &RealField, n: usize) -> Result<RealField> {
    moment_tensor_with_max(f, n, DEFAULT_MAX_ORDER)
}

pub fn moment_tensor_with_max(f: &RealField, n: usize, max: usize) -> Result<RealField> {
    if n > max {
        return Err(Error::TensorOrder { order: n, max });
    }
    let g = require_upsilon(f)?;
    let weights: Vec<Vec<f64>> = (0..1usize << n)
        .map(|c| theta_nodes(g).map(|t| kernel(n, c, t)).collect())
        .collect();
    let values = weighted_theta_sums(f, &weights)?;
    Ok(RealField::from_raw(g.planar(), Rank::tensor(n), values))
}

/// The source `π̃ⁿ = ∫ f ∂²θ(e(θ)^{⊗n}) dθ`. For `n = 0` the kernel vanishes and the
/// zero scalar field is returned.
pub fn moment_source(f: &RealField, n: usize) -> Result<RealField> {
    moment_source_with_max(f, n, DEFAULT_MAX_ORDER)
}

pub fn moment_source_with_max(f: &RealField, n: usize, max: usize) -> Result<RealField> {
    if n > max {
        return Err(Error::TensorOrder { order: n, max });
    }
    let g = require_upsilon(f)?;
    if n == 0 {
        return Ok(RealField::zeros(g.planar(), Rank::SCALAR));
    }
    let weights: Vec<Vec<f64>> = (0..1usize << n)
        .map(|c| theta_nodes(g).map(|t| kernel_dd(n, c, t)).collect())
        .collect();
    let values = weighted_theta_sums(f, &weights)?;
    Ok(RealField::from_raw(g.planar(), Rank::tensor(n), values))
}

/// Pointwise max-entry magnitude of a tensor field (the norm used for `|πⁿ| ≤ n²ρ`).
pub fn max_entry(t: &RealField) -> RealField {
    let g = t.grid();
    let n = g.len();
    let comps = t.rank().components();
    let values = (0..n)
        .map(|i| {
            (0..comps)
                .map(|c| t.values()[c * n + i].abs())
                .fold(0.0, f64::max)
        })
        .collect();
    RealField::from_raw(g, Rank::SCALAR, values)
}

/// Pointwise trace of a 2×2 matrix field.
pub fn trace(m: &RealField) -> Result<RealField> {
    if m.rank() != Rank::MATRIX {
        return Err(Error::Rank("trace of a non-matrix field".into()));
    }
    m.component(0).add(&m.component(3))
}

/// Moments up to a fixed order, computed together from one distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSet {
    tensors: Vec<RealField>,
}

impl MomentSet {
    /// ρ, **p**, ℙ and optionally higher tensors up to `max_order` (at least 2).
    pub fn compute(f: &RealField, max_order: usize) -> Result<Self> {
        let top = max_order.max(2);
        let tensors = (0..=top)
            .map(|n| moment_tensor_with_max(f, n, top))
            .collect::<Result<_>>()?;
        Ok(Self { tensors })
    }

    pub fn rho(&self) -> &RealField {
        &self.tensors[0]
    }

    pub fn p(&self) -> &RealField {
        &self.tensors[1]
    }

    /// The second moment ℙ.
    pub fn pmat(&self) -> &RealField {
        &self.tensors[2]
    }

    pub fn tensor(&self, n: usize) -> Option<&RealField> {
        self.tensors.get(n)
    }

    pub fn max_order(&self) -> usize {
        self.tensors.len() - 1
    }

    /// `1 − ρ`.
    pub fn one_minus_rho(&self) -> RealField {
        self.rho().map(|r| 1.0 - r)
    }
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `E[f] = ∫_Υ f log f + ∫_Ω (1−ρ) log(1−ρ)` with the default floor.
pub fn entropy(f: &RealField) -> Result<f64> {
    entropy_with_floor(f, DEFAULT_ENTROPY_FLOOR)
}

/// Entropy with an explicit floor: negative `f` values and `1−ρ ∈ [−floor, 0)` are clamped
/// to 0; `ρ > 1 + floor` anywhere is an error carrying the violating fraction.
pub fn entropy_with_floor(f: &RealField, floor: f64) -> Result<f64> {
    let g = require_upsilon(f)?;
    let rho = moment_tensor(f, 0)?;
    let over: Vec<f64> = rho
        .values()
        .iter()
        .copied()
        .filter(|&r| r > 1.0 + floor)
        .collect();
    if !over.is_empty() {
        return Err(Error::DensityOverflow {
            fraction: over.len() as f64 / rho.values().len() as f64,
            max_rho: over.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            floor,
        });
    }
    let kinetic: f64 = f.values().iter().map(|&v| xlogx(v)).sum::<f64>() * g.cell_volume();
    let exclusion: f64 =
        rho.values().iter().map(|&r| xlogx(1.0 - r)).sum::<f64>() * g.planar().cell_volume();
    Ok(kinetic + exclusion)
}
