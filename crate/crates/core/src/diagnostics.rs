//! Monitors for a computed trajectory: norms, truncation energies, lower bounds on `1−ρ`,
//! the interpolation ratio, weak-form residuals and entropy dissipation.
//!
//! "Essential supremum in time" is realized as the maximum over stored samples, and time
//! integrals use the trapezoid rule over the same samples, so results depend on the
//! sampling cadence.

use crate::error::{Error, Result};
use crate::evolution::ModelState;
use crate::moments;
use crate::spectral::{self, trapezoid, Domain, Rank, RealField};

/// Nested times `Tₙ = t0(1 − 2^{−n−1})` and levels `κₙ = 1 − 2^{−n}`, with scale `L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationLadder {
    pub t0: f64,
    pub n_max: usize,
    pub scale: f64,
}

impl TruncationLadder {
    pub fn new(t0: f64, n_max: usize, scale: f64) -> Result<Self> {
        if !(t0 > 0.0) || !t0.is_finite() {
            return Err(Error::Parameter(format!("ladder time t0 = {t0} must be positive")));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Parameter(format!("ladder scale L = {scale} must be positive")));
        }
        Ok(Self { t0, n_max, scale })
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 * (1.0 - 0.5f64.powi(n as i32 + 1))
    }

    pub fn level(&self, n: usize) -> f64 {
        1.0 - 0.5f64.powi(n as i32)
    }
}

/// `(w − k)₊` pointwise.
pub fn stampacchia(field: &RealField, k: f64) -> RealField {
    field.map(|w| (w - k).max(0.0))
}

/// Which energy of the ladder to form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// `w = v/L` on Ω with the spatial gradient.
    W,
    /// `g = f/L` on Υ with the full gradient `∇_ξ = (∂x, ∂y, ∂θ)`.
    G,
}

impl Variant {
    fn domain(self) -> Domain {
        match self {
            Variant::W => Domain::Omega,
            Variant::G => Domain::Upsilon,
        }
    }
}

/// Gradient over every axis of the field's grid, one component per axis.
fn full_gradient(field: &RealField) -> Result<Vec<RealField>> {
    let hat = spectral::transform(field)?;
    (0..field.grid().dims())
        .map(|a| Ok(spectral::inverse(&hat.derivative(a, 1)?)))
        .collect()
}

struct Prepared {
    t: f64,
    w: RealField,
    grad: Vec<RealField>,
}

fn prepare(samples: &[(f64, RealField)], scale: f64, variant: Variant) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|(t, field)| {
            if field.grid().dims() != variant.domain().dims() || field.rank() != Rank::SCALAR {
                return Err(Error::Grid(format!(
                    "{variant:?} energies need scalar fields on {:?}, got {}",
                    variant.domain(),
                    field.grid()
                )));
            }
            let w = field.scale(1.0 / scale);
            let grad = full_gradient(&w)?;
            Ok(Prepared { t: *t, w, grad })
        })
        .collect()
}

fn truncated_energy(p: &[Prepared], ladder: &TruncationLadder, n: usize) -> Result<f64> {
    let tn = ladder.time(n);
    let window: Vec<&Prepared> = p.iter().filter(|s| s.t >= tn - 1e-12).collect();
    if window.len() < 2 {
        return Err(Error::Samples(format!(
            "{} sample(s) in [T_{n} = {tn}, T]; at least 2 needed",
            window.len()
        )));
    }
    let k = ladder.level(n);
    let mut sup: f64 = 0.0;
    let mut grad_series = Vec::with_capacity(window.len());
    for s in &window {
        let cell = s.w.grid().cell_volume();
        let mut l2 = 0.0;
        let mut g2 = 0.0;
        for (i, &w) in s.w.values().iter().enumerate() {
            if w > k {
                l2 += (w - k) * (w - k);
                g2 += s.grad.iter().map(|g| g.values()[i].powi(2)).sum::<f64>();
            }
        }
        sup = sup.max(l2 * cell);
        grad_series.push((s.t, g2 * cell));
    }
    Ok(sup + trapezoid(grad_series))
}

/// `max_{t ∈ [Tₙ,T]} ∫|(w−κₙ)₊|² + ∫_{Tₙ}^T ∫|1_{w>κₙ}∇w|²` with `w = field/L`, over the
/// samples `(t, field)`; `T` is the last sample time.
pub fn ladder_energy(
    samples: &[(f64, RealField)],
    ladder: &TruncationLadder,
    n: usize,
    variant: Variant,
) -> Result<f64> {
    let p = prepare(samples, ladder.scale, variant)?;
    truncated_energy(&p, ladder, n)
}

/// Energies for `n = 0..=n_max`.
pub fn energy_ledger(
    samples: &[(f64, RealField)],
    ladder: &TruncationLadder,
    variant: Variant,
) -> Result<Vec<f64>> {
    let p = prepare(samples, ladder.scale, variant)?;
    (0..=ladder.n_max).map(|n| truncated_energy(&p, ladder, n)).collect()
}

/// `2 (‖f‖_{L∞L²} + ‖∇_ξ f‖_{L²L²})²` over the samples in `[t0/2, T]`.
pub fn default_ladder_scale(samples: &[(f64, RealField)], t0: f64) -> Result<f64> {
    let window: Vec<&(f64, RealField)> = samples.iter().filter(|s| s.0 >= 0.5 * t0 - 1e-12).collect();
    if window.len() < 2 {
        return Err(Error::Samples("fewer than 2 samples in [t0/2, T]".into()));
    }
    let mut sup: f64 = 0.0;
    let mut grads = Vec::new();
    for (t, f) in window {
        let d = f.grid().domain();
        sup = sup.max(spectral::lq_norm(f, 2.0, d)?);
        let g2: f64 = full_gradient(f)?
            .iter()
            .map(|g| spectral::lq_norm(g, 2.0, d).map(|v| v * v))
            .sum::<Result<f64>>()?;
        grads.push((*t, g2));
    }
    let l2h1 = trapezoid(grads).sqrt();
    Ok(2.0 * (sup + l2h1).powi(2))
}

/// Outcome of [`recursion_decay_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    /// Non-increasing, with the last entry below `1e−10 · 𝒲₀` (or exactly 0).
    pub decays_to_zero: bool,
    /// First index with an exact zero.
    pub first_zero: Option<usize>,
    /// Fitted `β` in `𝒲ₙ ≈ Cⁿ 𝒲_{n−1}^β`; `None` when fewer than two positive pairs exist.
    pub exponent: Option<f64>,
    pub log_c: Option<f64>,
}

/// Decay test and least-squares fit of `log 𝒲ₙ = n log C + β log 𝒲_{n−1}`.
pub fn recursion_decay_check(ledger: &[f64]) -> Result<DecayReport> {
    if ledger.len() < 4 {
        return Err(Error::Samples(format!("ledger has {} entries; at least 4 needed", ledger.len())));
    }
    if let Some(bad) = ledger.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Parameter(format!("ledger entry {bad} is not a finite nonnegative number")));
    }
    let w0 = ledger[0];
    let monotone = ledger.windows(2).all(|w| w[1] <= w[0]);
    let last = *ledger.last().unwrap_or(&0.0);
    let decays = monotone && (last == 0.0 || last < 1e-10 * w0);
    let first_zero = ledger.iter().position(|&v| v == 0.0);

    // Normal (non-subnormal) positive pairs only.
    let usable = |v: f64| v >= f64::MIN_POSITIVE;
    let pairs: Vec<(f64, f64, f64)> = (1..ledger.len())
        .filter(|&n| usable(ledger[n]) && usable(ledger[n - 1]))
        .map(|n| (n as f64, ledger[n - 1].ln(), ledger[n].ln()))
        .collect();
    let (exponent, log_c) = if pairs.len() >= 2 {
        // Normal equations for y = a·n + β·x.
        let (mut snn, mut snx, mut sxx, mut sny, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(n, x, y) in &pairs {
            snn += n * n;
            snx += n * x;
            sxx += x * x;
            sny += n * y;
            sxy += x * y;
        }
        let det = snn * sxx - snx * snx;
        if det.abs() <= 1e-12 * (snn * sxx).abs().max(f64::MIN_POSITIVE) {
            (None, None)
        } else {
            let a = (sny * sxx - sxy * snx) / det;
            let b = (snn * sxy - snx * sny) / det;
            (Some(b), Some(a))
        }
    } else {
        (None, None)
    };
    Ok(DecayReport {
        decays_to_zero: decays,
        first_zero,
        exponent,
        log_c,
    })
}

/// One entry of [`lower_bound_track`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerBound {
    pub t: f64,
    /// `min_Ω (1 − ρ(t))`.
    pub min_one_minus_rho: f64,
    /// `min` of the above over samples in `[t, T]`.
    pub running_inf: f64,
}

/// `c(t) = min_Ω (1−ρ)` per sample together with the infimum over later samples.
pub fn lower_bound_track(states: &[ModelState]) -> Vec<LowerBound> {
    let mut out: Vec<LowerBound> = states
        .iter()
        .map(|s| LowerBound {
            t: s.time(),
            min_one_minus_rho: s.min_one_minus_rho(),
            running_inf: f64::INFINITY,
        })
        .collect();
    let mut inf = f64::INFINITY;
    for lb in out.iter_mut().rev() {
        inf = inf.min(lb.min_one_minus_rho);
        lb.running_inf = inf;
    }
    out
}

/// Terms of the interpolation inequality `‖v‖_{Lᑫ} ≲ ‖v‖_{L∞Lᵐ} + ‖v‖_{LᵖW^{1,p}}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolationReport {
    /// `q = p(1 + m/2)`.
    pub q: f64,
    pub lq: f64,
    pub linf_lm: f64,
    pub lp_w1p: f64,
    pub ratio: f64,
}

/// Evaluate the interpolation ratio for samples of a scalar field on Ω over a time window.
pub fn interpolation_monitor(window: &[(f64, RealField)], p: f64, m: f64) -> Result<InterpolationReport> {
    if window.len() < 2 {
        return Err(Error::Samples("interpolation window needs at least 2 samples".into()));
    }
    if !(p >= 1.0) || !(m >= 1.0) {
        return Err(Error::Exponent(p.min(m)));
    }
    let q = p * (1.0 + m / 2.0);
    let mut lq_series = Vec::new();
    let mut w1p_series = Vec::new();
    let mut linf_lm: f64 = 0.0;
    for (t, v) in window {
        if v.grid().dims() != 2 || v.rank() != Rank::SCALAR {
            return Err(Error::Grid("interpolation monitor needs scalar fields on Ω".into()));
        }
        lq_series.push((*t, spectral::lq_norm(v, q, Domain::Omega)?.powf(q)));
        linf_lm = linf_lm.max(spectral::lq_norm(v, m, Domain::Omega)?);
        let grad = spectral::gradient(v)?;
        let w1p = spectral::lq_norm(v, p, Domain::Omega)?.powf(p) + spectral::lq_norm(&grad, p, Domain::Omega)?.powf(p);
        w1p_series.push((*t, w1p));
    }
    let lq = trapezoid(lq_series).powf(1.0 / q);
    let lp_w1p = trapezoid(w1p_series).powf(1.0 / p);
    let denom = linf_lm + lp_w1p;
    Ok(InterpolationReport {
        q,
        lq,
        linf_lm,
        lp_w1p,
        ratio: if denom > 0.0 { lq / denom } else { f64::NAN },
    })
}

/// Weak-form defect over a slice of states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakResidual {
    /// `∫f(t₂)φ − ∫f(t₁)φ`.
    pub lhs: f64,
    /// Trapezoid-in-time integral of the weak right-hand side.
    pub rhs: f64,
    pub defect: f64,
}

impl WeakResidual {
    /// `|defect| / max(|lhs|, |rhs|)`, or `|defect|` when both vanish.
    pub fn relative(&self) -> f64 {
        let s = self.lhs.abs().max(self.rhs.abs());
        if s > 0.0 {
            self.defect.abs() / s
        } else {
            self.defect.abs()
        }
    }
}

/// Largest out-of-band energy fraction accepted for a test function.
pub const BAND_TOLERANCE: f64 = 1e-24;

/// Weak form with a time-independent test function φ on Υ:
///
/// ```text
/// ∫f(t₂)φ − ∫f(t₁)φ = ∫_{t₁}^{t₂} ∫_Υ [(1−ρ) f e·∇φ − ((1−ρ)∇f + f∇ρ)·∇φ + f ∂²θφ]
/// ```
///
/// with the time integral by the trapezoid rule over `states`. φ must be band-limited to the
/// dealiasing band so the grid quadrature of every integrand is exact.
pub fn weak_residual(states: &[ModelState], phi: &RealField) -> Result<WeakResidual> {
    if states.len() < 2 {
        return Err(Error::Samples("weak residual needs at least 2 states".into()));
    }
    let g = states[0].grid();
    if phi.grid() != g || phi.rank() != Rank::SCALAR {
        return Err(Error::GridMismatch(g, phi.grid()));
    }
    let hat = spectral::transform(phi)?;
    let oob = hat.out_of_band_fraction();
    if oob > BAND_TOLERANCE {
        return Err(Error::NotBandLimited(oob));
    }
    let phx = spectral::inverse(&hat.derivative(0, 1)?);
    let phy = spectral::inverse(&hat.derivative(1, 1)?);
    let phtt = spectral::inverse(&hat.derivative(2, 2)?);
    let n = g.len();
    let n2 = g.nx() * g.ny();
    let cell = g.cell_volume();
    let dth = g.spacing(2);

    let mut series = Vec::with_capacity(states.len());
    for s in states {
        if s.grid() != g {
            return Err(Error::GridMismatch(g, s.grid()));
        }
        let f = s.f();
        let fgrad = spectral::gradient(f)?;
        let rgrad = spectral::gradient(s.rho())?;
        let rho = s.rho().values();
        let mut acc = 0.0;
        for i in 0..n {
            let j = i % n2;
            let th = (i / n2) as f64 * dth;
            let u = 1.0 - rho[j];
            let fv = f.values()[i];
            let (gx, gy) = (phx.values()[i], phy.values()[i]);
            let drift = u * fv * (th.cos() * gx + th.sin() * gy);
            let cross_x = u * fgrad.values()[i] + fv * rgrad.values()[j];
            let cross_y = u * fgrad.values()[n + i] + fv * rgrad.values()[n2 + j];
            acc += drift - (cross_x * gx + cross_y * gy) + fv * phtt.values()[i];
        }
        series.push((s.time(), acc * cell));
    }
    let first = spectral::inner_product(states[0].f(), phi)?;
    let last = spectral::inner_product(states[states.len() - 1].f(), phi)?;
    let lhs = last - first;
    let rhs = trapezoid(series);
    Ok(WeakResidual {
        lhs,
        rhs,
        defect: lhs - rhs,
    })
}

/// Finite-difference entropy production.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    /// `(t, E(t))` per sample.
    pub entropy: Vec<(f64, f64)>,
    /// `(t, dE/dt)`: centered differences inside, one-sided at the ends.
    pub rate: Vec<(f64, f64)>,
    /// Samples with `dE/dt > tolerance`; only collected when drift is disabled.
    pub violations: Vec<(f64, f64)>,
}

/// Tolerance on positive entropy production for drift-free runs.
pub const ENTROPY_TOLERANCE: f64 = 1e-8;

pub fn entropy_dissipation_check(states: &[ModelState], drift_enabled: bool) -> Result<EntropyReport> {
    if states.len() < 2 {
        return Err(Error::Samples("entropy rate needs at least 2 states".into()));
    }
    let entropy: Vec<(f64, f64)> = states
        .iter()
        .map(|s| Ok((s.time(), moments::entropy(s.f())?)))
        .collect::<Result<_>>()?;
    let m = entropy.len();
    let rate: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == m - 1 => (m - 2, m - 1),
                i => (i - 1, i + 1),
            };
            let d = (entropy[b].1 - entropy[a].1) / (entropy[b].0 - entropy[a].0);
            (entropy[i].0, d)
        })
        .collect();
    let violations = if drift_enabled {
        Vec::new()
    } else {
        rate.iter().copied().filter(|r| r.1 > ENTROPY_TOLERANCE).collect()
    };
    Ok(EntropyReport {
        entropy,
        rate,
        violations,
    })
}

/// Per-sample quantities written to diagnostics tables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateNorms {
    pub t: f64,
    pub step: u64,
    pub mass: f64,
    pub min_f: f64,
    pub min_one_minus_rho: f64,
    /// `None` when the entropy is undefined (ρ > 1 somewhere).
    pub entropy: Option<f64>,
    pub l2_f: f64,
    /// `(‖f‖² + ‖∇_ξ f‖²)^{1/2}` on Υ.
    pub h1_f: f64,
    pub l2_rho: f64,
}

pub fn state_norms(state: &ModelState) -> Result<StateNorms> {
    let f = state.f();
    let l2_f = spectral::lq_norm(f, 2.0, Domain::Upsilon)?;
    let grad2: f64 = full_gradient(f)?
        .iter()
        .map(|g| spectral::lq_norm(g, 2.0, Domain::Upsilon).map(|v| v * v))
        .sum::<Result<f64>>()?;
    Ok(StateNorms {
        t: state.time(),
        step: state.step(),
        mass: state.mass(),
        min_f: f.min(),
        min_one_minus_rho: state.min_one_minus_rho(),
        entropy: moments::entropy(f).ok(),
        l2_f,
        h1_f: (l2_f * l2_f + grad2).sqrt(),
        l2_rho: spectral::lq_norm(state.rho(), 2.0, Domain::Omega)?,
    })
}

/// Window norms of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormReport {
    /// `‖f‖_{L∞L²(Υ)}`.
    pub linf_l2_f: f64,
    /// `‖∇_ξ f‖_{L²L²(Υ)}`.
    pub l2_h1_f: f64,
    /// `‖∇ρ‖²_{L∞L²} + ‖Δρ‖²_{L²L²}` on Ω.
    pub h2_rho: f64,
    pub min_one_minus_rho: f64,
    pub min_f: f64,
    pub final_entropy: Option<f64>,
}

pub fn norm_report(states: &[ModelState]) -> Result<NormReport> {
    if states.is_empty() {
        return Err(Error::Samples("no states".into()));
    }
    let mut linf_l2_f: f64 = 0.0;
    let mut grad_series = Vec::new();
    let mut grad_rho_sup: f64 = 0.0;
    let mut lap_series = Vec::new();
    let mut min_f = f64::INFINITY;
    let mut min_u = f64::INFINITY;
    for s in states {
        let f = s.f();
        linf_l2_f = linf_l2_f.max(spectral::lq_norm(f, 2.0, Domain::Upsilon)?);
        let g2: f64 = full_gradient(f)?
            .iter()
            .map(|g| spectral::lq_norm(g, 2.0, Domain::Upsilon).map(|v| v * v))
            .sum::<Result<f64>>()?;
        grad_series.push((s.time(), g2));
        let gr = spectral::gradient(s.rho())?;
        grad_rho_sup = grad_rho_sup.max(spectral::lq_norm(&gr, 2.0, Domain::Omega)?.powi(2));
        let lap = spectral::laplacian(s.rho())?;
        lap_series.push((s.time(), spectral::lq_norm(&lap, 2.0, Domain::Omega)?.powi(2)));
        min_f = min_f.min(f.min());
        min_u = min_u.min(s.min_one_minus_rho());
    }
    Ok(NormReport {
        linf_l2_f,
        l2_h1_f: trapezoid(grad_series).sqrt(),
        h2_rho: grad_rho_sup + trapezoid(lap_series),
        min_one_minus_rho: min_u,
        min_f,
        final_entropy: moments::entropy(states[states.len() - 1].f()).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TorusGrid;

    #[test]
    fn ladder_sequences() {
        let l = TruncationLadder::new(0.4, 40, 1.0).unwrap();
        assert_eq!(l.time(0), 0.2);
        assert_eq!(l.level(0), 0.0);
        for n in 0..40 {
            assert!(l.time(n + 1) > l.time(n) && l.time(n + 1) < 0.4);
            assert!(l.level(n + 1) > l.level(n) && l.level(n + 1) < 1.0);
        }
        assert!(TruncationLadder::new(0.0, 3, 1.0).is_err());
    }

    #[test]
    fn stampacchia_cases() {
        let g = TorusGrid::omega(64, 4).unwrap();
        let x = RealField::from_fn(g, |x| x[0]);
        assert_eq!(stampacchia(&x, 0.0), x);
        assert_eq!(stampacchia(&x, 10.0).max_abs(), 0.0);
        // Nodes jh with j = 33..63 exceed π: the line sum is h²·Σ(j−32).
        let ramp = stampacchia(&x, std::f64::consts::PI);
        let h = g.spacing(0);
        let line: f64 = ramp.values()[..64].iter().sum::<f64>() * h;
        assert!((line - h * h * 496.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_constant_ledger() {
        let g = TorusGrid::omega(8, 8).unwrap();
        let samples: Vec<(f64, RealField)> =
            (0..=10).map(|i| (0.1 * i as f64, RealField::constant(g, 1.5))).collect();
        let ladder = TruncationLadder::new(0.5, 5, 1.0).unwrap();
        let ledger = energy_ledger(&samples, &ladder, Variant::W).unwrap();
        let area = (2.0 * std::f64::consts::PI).powi(2);
        for (n, w) in ledger.iter().enumerate() {
            let expect = (1.5 - ladder.level(n)).powi(2) * area;
            assert!((w - expect).abs() < 1e-8 * expect);
        }
    }

    #[test]
    fn recursion_fit() {
        let ledger: Vec<f64> = (0..8).map(|n| 4f64.powf(-(2f64.powi(n)))).collect();
        let r = recursion_decay_check(&ledger).unwrap();
        assert!(r.decays_to_zero);
        assert!((r.exponent.unwrap() - 2.0).abs() < 1e-10);
        let flat = recursion_decay_check(&[1.0; 6]).unwrap();
        assert!(!flat.decays_to_zero);
        let zeros = recursion_decay_check(&[0.0; 5]).unwrap();
        assert!(zeros.decays_to_zero && zeros.exponent.is_none());
        assert!(recursion_decay_check(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn interpolation_constants() {
        let g = TorusGrid::omega(16, 16).unwrap();
        let one: Vec<(f64, RealField)> = (0..=4).map(|i| (0.25 * i as f64, RealField::constant(g, 1.0))).collect();
        let r = interpolation_monitor(&one, 2.0, 2.0).unwrap();
        let pi = std::f64::consts::PI;
        assert_eq!(r.q, 4.0);
        assert!((r.ratio - (2.0 * pi).sqrt() / (4.0 * pi)).abs() < 1e-12);
        assert!(interpolation_monitor(&one[..1], 2.0, 2.0).is_err());
    }
}
