//! The heat kernel on the torus Ω = (0,2π)²,
//!
//! ```text
//! Φ(t,x) = Σ_{n∈ℤ²} Ψ(t, x + 2πn),   Ψ(t,x) = e^{−|x|²/4t} / (4πt),
//! ```
//!
//! its gradient, space-time `Lᑫ` norms of the gradient, and Duhamel convolution.
//!
//! Φ factorizes as `θ(t,x₁) θ(t,x₂)` with the one-dimensional periodic kernel
//! `θ(t,x) = Σₙ (4πt)^{−1/2} e^{−(x+2πn)²/4t} = (2π)^{−1} Σₖ e^{−k²t} e^{ikx}`.
//! The image sum converges fast for small `t`, the Fourier series for large `t`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{forward_raw, inverse_raw, Rank, RealField};

/// Evaluator for the periodic heat kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodicHeatKernel {
    /// Minimum image-sum radius: images `|nᵢ| ≤ R` per axis.
    pub radius: usize,
    /// Image sum for `t ≤ t_switch`, Fourier series above.
    pub t_switch: f64,
    pub tolerance: f64,
}

impl Default for PeriodicHeatKernel {
    fn default() -> Self {
        Self {
            radius: 6,
            t_switch: 1.0,
            tolerance: 1e-12,
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::NonPositiveTime(t));
    }
    Ok(())
}

/// Reduce `x` to `(−π, π]`.
fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

impl PeriodicHeatKernel {
    /// Image radius used at time `t`: at least `radius`, and large enough that the Gaussian tail
    /// `e^{−π²(R−1)²/t}` is below the tolerance.
    pub fn effective_radius(&self, t: f64) -> usize {
        let need = 1.0 + (t * (1.0 / self.tolerance).ln()).sqrt() / PI;
        self.radius.max(need.ceil() as usize)
    }

    /// Fourier modes kept at time `t`: `e^{−K²t}` below `tolerance · 1e−3`.
    fn series_modes(&self, t: f64) -> usize {
        ((1e3 / self.tolerance).ln() / t).sqrt().ceil() as usize + 1
    }

    /// `(θ, ∂ₓθ)` by the image sum.
    pub fn theta_lattice(&self, t: f64, x: f64) -> (f64, f64) {
        let x = wrap(x);
        let r = self.effective_radius(t) as i64;
        let norm = 1.0 / (4.0 * PI * t).sqrt();
        let (mut v, mut d) = (0.0, 0.0);
        for n in -r..=r {
            let y = x + 2.0 * PI * n as f64;
            let g = norm * (-y * y / (4.0 * t)).exp();
            v += g;
            d -= y / (2.0 * t) * g;
        }
        (v, d)
    }

    /// `(θ, ∂ₓθ)` by the Fourier series.
    pub fn theta_series(&self, t: f64, x: f64) -> (f64, f64) {
        let kmax = self.series_modes(t);
        let (mut v, mut d) = (1.0, 0.0);
        for k in 1..=kmax {
            let kf = k as f64;
            let w = (-kf * kf * t).exp();
            if w == 0.0 {
                break;
            }
            v += 2.0 * w * (kf * x).cos();
            d -= 2.0 * kf * w * (kf * x).sin();
        }
        (v / (2.0 * PI), d / (2.0 * PI))
    }

    fn theta(&self, t: f64, x: f64) -> (f64, f64) {
        if t <= self.t_switch {
            self.theta_lattice(t, x)
        } else {
            self.theta_series(t, x)
        }
    }

    /// Φ(t, x).
    pub fn phi(&self, t: f64, x: [f64; 2]) -> Result<f64> {
        check_time(t)?;
        Ok(self.theta(t, x[0]).0 * self.theta(t, x[1]).0)
    }

    /// ∇Φ(t, x).
    pub fn grad_phi(&self, t: f64, x: [f64; 2]) -> Result<[f64; 2]> {
        check_time(t)?;
        let (a, da) = self.theta(t, x[0]);
        let (b, db) = self.theta(t, x[1]);
        Ok([da * b, a * db])
    }

    /// Φ by the image sum regardless of `t_switch`.
    pub fn phi_lattice(&self, t: f64, x: [f64; 2]) -> Result<f64> {
        check_time(t)?;
        Ok(self.theta_lattice(t, x[0]).0 * self.theta_lattice(t, x[1]).0)
    }

    /// Φ by the Fourier series regardless of `t_switch`.
    pub fn phi_series(&self, t: f64, x: [f64; 2]) -> Result<f64> {
        check_time(t)?;
        Ok(self.theta_series(t, x[0]).0 * self.theta_series(t, x[1]).0)
    }

    /// `∫_Ω Φ(t,·)` by the rectangle rule on an `n × n` grid.
    pub fn mass(&self, t: f64, n: usize) -> Result<f64> {
        check_time(t)?;
        let h = 2.0 * PI / n as f64;
        let line: f64 = (0..n).map(|i| self.theta(t, i as f64 * h).0).sum::<f64>() * h;
        Ok(line * line)
    }

    /// `∫_Ω |∇Φ(s,x)|^q dx`, by tensor Gauss–Legendre panels on `[0,π]²` (Φ is even in each
    /// coordinate) graded geometrically toward the origin on the scale `√s`.
    pub fn grad_lq_norm_at(&self, q: f64, s: f64) -> Result<f64> {
        check_time(s)?;
        if !(q >= 1.0) {
            return Err(Error::Exponent(q));
        }
        let (nodes, weights) = graded_nodes(s.sqrt());
        let vals: Vec<(f64, f64)> = nodes.iter().map(|&x| self.theta(s, x)).collect();
        let mut acc = 0.0;
        for (i, &(a, da)) in vals.iter().enumerate() {
            let mut row = 0.0;
            for (j, &(b, db)) in vals.iter().enumerate() {
                let gx = da * b;
                let gy = a * db;
                row += weights[j] * (gx * gx + gy * gy).powf(0.5 * q);
            }
            acc += weights[i] * row;
        }
        Ok(4.0 * acc)
    }

    /// `‖∇Φ‖_{Lᑫ((0,t)×Ω)}` for `1 ≤ q < 4/3`.
    ///
    /// Since `∫_Ω|∇Φ(s)|^q ~ s^α` with `α = 1 − 3q/2` as `s → 0`, the substitution
    /// `s = t u^β`, `β = 1/(α+1)`, turns the integrable singularity into a bounded integrand,
    /// which is then integrated by Gauss–Legendre panels in `u`.
    pub fn grad_lq_spacetime_norm(&self, q: f64, t: f64) -> Result<f64> {
        if !(q >= 1.0 && q < 4.0 / 3.0) {
            return Err(Error::KernelExponent(q));
        }
        check_time(t)?;
        let alpha = 1.0 - 1.5 * q;
        let beta = 1.0 / (alpha + 1.0);
        let (gx, gw) = gauss_legendre(16);
        let panels = 8;
        let mut acc = 0.0;
        for p in 0..panels {
            let (a, b) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
            for (x, w) in gx.iter().zip(&gw) {
                let u = 0.5 * (a + b) + 0.5 * (b - a) * x;
                let s = t * u.powf(beta);
                let jac = t * beta * u.powf(beta - 1.0);
                acc += 0.5 * (b - a) * w * jac * self.grad_lq_norm_at(q, s)?;
            }
        }
        Ok(acc.powf(1.0 / q))
    }
}

/// The predicted scaling exponent `(4 − 3q)/(2q)`.
pub fn scaling_exponent(q: f64) -> f64 {
    (4.0 - 3.0 * q) / (2.0 * q)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Gauss–Legendre nodes and weights on [−1, 1] (Newton iteration on Pₙ).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // (Pₙ(z), Pₙ'(z)) by the three-term recurrence.
    let legendre = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(z);
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Panel nodes on [0, π] with breakpoints `scale·2^j` for `j ≥ −6`.
fn graded_nodes(scale: f64) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(20);
    let mut breaks = vec![0.0];
    let mut b = scale / 64.0;
    while b < PI {
        breaks.push(b);
        b *= 2.0;
    }
    breaks.push(PI);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (x, wt) in gx.iter().zip(&gw) {
            nodes.push(0.5 * (a + b) + 0.5 * (b - a) * x);
            weights.push(0.5 * (b - a) * wt);
        }
    }
    (nodes, weights)
}

/// Fourier-coefficient form of Φ: `Φ(t,x) = (2π)^{−2} Σₖ e^{−|k|²t} e^{ik·x}`.
pub fn phi_coefficient(t: f64, k: [i64; 2]) -> f64 {
    let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
    (-k2 * t).exp() / (4.0 * PI * PI)
}

/// Default number of graded quadrature nodes in [`duhamel`].
pub const DEFAULT_DUHAMEL_NODES: usize = 2000;

/// `ρ̄(t) = −∫₀^t ∫_Ω ∇Φ(s,y)·G(t−s, x−y) dy ds`, the solution of
/// `∂tρ̄ − Δρ̄ = −div G`, `ρ̄(0) = 0`.
///
/// `series` holds `(τ, G(τ))` samples of a vector field on Ω covering `[0, t]`; `G` is
/// interpolated linearly in time. The space convolution is a multiplication by
/// `ik e^{−|k|²s}` in coefficient space; the time integral uses the trapezoid rule on nodes
/// `s_j = t (j/J)²`.
pub fn duhamel(series: &[(f64, RealField)], t: f64, nodes: usize) -> Result<RealField> {
    check_time(t)?;
    let Some((t_first, first)) = series.first() else {
        return Err(Error::Samples("empty G series".into()));
    };
    let t_last = series.last().map(|s| s.0).unwrap_or(*t_first);
    let slack = 1e-9 * t.max(1.0);
    if *t_first > slack || t_last < t - slack {
        return Err(Error::Samples(format!(
            "G samples cover [{t_first}, {t_last}] but [0, {t}] is required"
        )));
    }
    if series.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Samples("G sample times must increase".into()));
    }
    let g = first.grid();
    if g.dims() != 2 || first.rank() != Rank::VECTOR {
        return Err(Error::Rank("G must be a vector field on Ω".into()));
    }
    let n = g.len();
    let mut hats = Vec::with_capacity(series.len());
    for (_, field) in series {
        if field.grid() != g || field.rank() != Rank::VECTOR {
            return Err(Error::GridMismatch(g, field.grid()));
        }
        hats.push(forward_raw(g, field.values(), 2));
    }
    // Per-mode `i k·Ĝ` is linear in Ĝ, so interpolate the divergence coefficients directly.
    let kx: Vec<f64> = (0..n).map(|i| d1(g, 0, i)).collect();
    let ky: Vec<f64> = (0..n).map(|i| d1(g, 1, i)).collect();
    let ksq: Vec<f64> = (0..n).map(|i| g.wavenumber_sq(i)).collect();
    let divs: Vec<Vec<Complex64>> = hats
        .iter()
        .map(|h| {
            (0..n)
                .map(|i| {
                    let s = h[i] * kx[i] + h[n + i] * ky[i];
                    Complex64::new(-s.im, s.re)
                })
                .collect()
        })
        .collect();
    let times: Vec<f64> = series.iter().map(|s| s.0).collect();
    let j_nodes = nodes.max(2);
    let s_nodes: Vec<f64> = (0..=j_nodes)
        .map(|j| t * (j as f64 / j_nodes as f64).powi(2))
        .collect();
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    for (j, &s) in s_nodes.iter().enumerate() {
        let w = match j {
            0 => 0.5 * (s_nodes[1] - s_nodes[0]),
            j if j == j_nodes => 0.5 * (s_nodes[j] - s_nodes[j - 1]),
            j => 0.5 * (s_nodes[j + 1] - s_nodes[j - 1]),
        };
        let tau = (t - s).max(times[0]);
        let idx = match times.partition_point(|&x| x <= tau) {
            0 => 0,
            k => (k - 1).min(times.len().saturating_sub(2)),
        };
        let (a, b, lam) = if times.len() == 1 {
            (0, 0, 0.0)
        } else {
            let lam = ((tau - times[idx]) / (times[idx + 1] - times[idx])).clamp(0.0, 1.0);
            (idx, idx + 1, lam)
        };
        for i in 0..n {
            let d = divs[a][i] * (1.0 - lam) + divs[b][i] * lam;
            acc[i] -= d * (w * (-ksq[i] * s).exp());
        }
    }
    Ok(RealField::from_raw(g, Rank::SCALAR, inverse_raw(g, &acc, 1)))
}

fn d1(g: crate::spectral::TorusGrid, axis: usize, i: usize) -> f64 {
    let ijk = g.unravel(i);
    if g.is_nyquist(axis, ijk[axis]) {
        0.0
    } else {
        g.wavenumber(axis, ijk[axis]) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TorusGrid;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn even_and_zero_gradient_at_origin() {
        let k = PeriodicHeatKernel::default();
        for &t in &[0.01, 0.3, 2.0] {
            let x = [0.7, -1.9];
            assert!((k.phi(t, x).unwrap() - k.phi(t, [-0.7, 1.9]).unwrap()).abs() < 1e-15);
            let g = k.grad_phi(t, [0.0, 0.0]).unwrap();
            assert!(g[0].abs() < 1e-15 && g[1].abs() < 1e-15);
        }
        assert!(matches!(k.phi(0.0, [0.0, 0.0]), Err(Error::NonPositiveTime(_))));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let k = PeriodicHeatKernel::default();
        let (t, x, h) = (0.2, [0.4, 1.1], 1e-5);
        let g = k.grad_phi(t, x).unwrap();
        let fd = (k.phi(t, [x[0] + h, x[1]]).unwrap() - k.phi(t, [x[0] - h, x[1]]).unwrap()) / (2.0 * h);
        assert!((g[0] - fd).abs() < 1e-8);
    }

    #[test]
    fn radius_grows_with_time() {
        let k = PeriodicHeatKernel::default();
        assert_eq!(k.effective_radius(0.1), 6);
        assert!(k.effective_radius(50.0) > 6);
    }

    #[test]
    fn duhamel_rejects_bad_series() {
        assert!(duhamel(&[], 0.1, 10).is_err());
        let g = TorusGrid::omega(8, 8).unwrap();
        let z = RealField::zeros(g, Rank::VECTOR);
        assert!(duhamel(&[(0.0, z.clone()), (0.05, z)], 0.1, 10).is_err());
    }
}
