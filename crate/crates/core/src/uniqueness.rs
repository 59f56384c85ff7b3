//! Paired runs from the same or perturbed data and the analysis of their difference
//! `f̄ = f₁ − f₂`: moment differences, the `L∞`-vs-`L²` ratio for `ρ̄`, a Duhamel
//! reconstruction of `ρ̄` and a Grönwall fit of `‖f̄(t)‖²`.

use std::thread;

use crate::error::{Error, Result};
use crate::evolution::{self, ModelState, SolverConfig, TrajectorySink};
use crate::heatkernel;
use crate::moments::MomentSet;
use crate::spectral::{self, Domain, Rank, RealField};

/// Shape of the initial perturbation added to the second run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    /// `cos x₁ cos θ`: zero θ-average, so both runs start from the same `ρ₀`.
    CosXCosTheta,
    /// `cos x₁`: perturbs `ρ₀` as well.
    CosX,
}

impl Pattern {
    pub fn eval(self, x: [f64; 3]) -> f64 {
        match self {
            Pattern::CosXCosTheta => x[0].cos() * x[2].cos(),
            Pattern::CosX => x[0].cos(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pattern::CosXCosTheta => "cos(x1)cos(theta)",
            Pattern::CosX => "cos(x1)",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub amplitude: f64,
    pub pattern: Pattern,
}

impl Perturbation {
    pub fn new(amplitude: f64, pattern: Pattern) -> Self {
        Self { amplitude, pattern }
    }

    pub fn none() -> Self {
        Self::new(0.0, Pattern::CosXCosTheta)
    }

    pub fn field(&self, grid: spectral::TorusGrid) -> RealField {
        let (d, p) = (self.amplitude, self.pattern);
        RealField::from_fn(grid, move |x| d * p.eval(x))
    }
}

/// Two sampled trajectories on a common grid and common sample times.
#[derive(Clone, Debug)]
pub struct PairedTrajectory {
    first: Vec<ModelState>,
    second: Vec<ModelState>,
    perturbation: Perturbation,
}

fn times_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

impl PairedTrajectory {
    /// Evolve `base` and `base + perturbation` under the same configuration, one thread each.
    pub fn run(base: &ModelState, perturbation: Perturbation, config: &SolverConfig) -> Result<Self> {
        let shifted = base.f().add(&perturbation.field(base.grid()))?;
        let other = ModelState::new(shifted, base.time(), base.step())?;
        let (a, b) = thread::scope(|s| {
            let ha = s.spawn(|| trajectory(base, config));
            let hb = s.spawn(|| trajectory(&other, config));
            (join(ha), join(hb))
        });
        Self::from_trajectories(a?, b?, perturbation)
    }

    pub fn from_trajectories(first: Vec<ModelState>, second: Vec<ModelState>, perturbation: Perturbation) -> Result<Self> {
        if first.is_empty() || first.len() != second.len() {
            return Err(Error::Misaligned(format!(
                "trajectories have {} and {} samples",
                first.len(),
                second.len()
            )));
        }
        let g = first[0].grid();
        for (a, b) in first.iter().zip(&second) {
            if a.grid() != g || b.grid() != g {
                return Err(Error::GridMismatch(a.grid(), b.grid()));
            }
            if !times_match(a.time(), b.time()) {
                return Err(Error::Misaligned(format!("sample times {} and {} differ", a.time(), b.time())));
            }
        }
        Ok(Self {
            first,
            second,
            perturbation,
        })
    }

    pub fn first(&self) -> &[ModelState] {
        &self.first
    }

    pub fn second(&self) -> &[ModelState] {
        &self.second
    }

    pub fn perturbation(&self) -> Perturbation {
        self.perturbation
    }

    pub fn times(&self) -> Vec<f64> {
        self.first.iter().map(ModelState::time).collect()
    }

    /// The pair with the roles of the two runs exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            first: self.second.clone(),
            second: self.first.clone(),
            perturbation: Perturbation::new(-self.perturbation.amplitude, self.perturbation.pattern),
        }
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        self.first
            .iter()
            .position(|s| times_match(s.time(), t))
            .ok_or_else(|| Error::Misaligned(format!("no common sample at t = {t}")))
    }
}

fn trajectory(state: &ModelState, config: &SolverConfig) -> Result<Vec<ModelState>> {
    let mut sink = TrajectorySink::default();
    evolution::run(state, config, &mut sink)?;
    Ok(sink.states)
}

fn join<T>(h: thread::ScopedJoinHandle<'_, Result<T>>) -> Result<T> {
    h.join().unwrap_or_else(|p| std::panic::resume_unwind(p))
}

/// `f̄` and its moments at one sample.
#[derive(Clone, Debug)]
pub struct DifferenceFields {
    pub t: f64,
    pub f_bar: RealField,
    pub rho_bar: RealField,
    pub p_bar: RealField,
    pub pmat_bar: RealField,
}

pub fn difference_fields(pair: &PairedTrajectory, t: f64) -> Result<DifferenceFields> {
    let i = pair.index_of(t)?;
    difference_at(pair, i)
}

fn difference_at(pair: &PairedTrajectory, i: usize) -> Result<DifferenceFields> {
    let (a, b) = (&pair.first[i], &pair.second[i]);
    let f_bar = a.f().sub(b.f())?;
    let m = MomentSet::compute(&f_bar, 2)?;
    Ok(DifferenceFields {
        t: a.time(),
        rho_bar: m.rho().clone(),
        p_bar: m.p().clone(),
        pmat_bar: m.pmat().clone(),
        f_bar,
    })
}

/// `‖ρ̄‖_{L∞(Ω_t)} / ‖f̄‖_{L²(Υ_t)}` over `[0, t]`; `value` is `None` when `f̄` vanishes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioSample {
    pub t: f64,
    pub rho_linf: f64,
    pub f_l2: f64,
    pub value: Option<f64>,
}

pub fn linfty_l2_ratio(pair: &PairedTrajectory, t: f64) -> Result<RatioSample> {
    let end = pair.index_of(t)?;
    let mut rho_linf: f64 = 0.0;
    let mut series = Vec::with_capacity(end + 1);
    for i in 0..=end {
        let d = difference_at(pair, i)?;
        rho_linf = rho_linf.max(d.rho_bar.max_abs());
        series.push((d.t, spectral::lq_norm(&d.f_bar, 2.0, Domain::Upsilon)?.powi(2)));
    }
    let f_l2 = spectral::trapezoid(series).sqrt();
    Ok(RatioSample {
        t,
        rho_linf,
        f_l2,
        value: (f_l2 > 0.0).then(|| rho_linf / f_l2),
    })
}

/// Largest sample time `t*` such that the ratio stays `≤ bound` on every sample in `(0, t*]`.
pub fn ratio_horizon(pair: &PairedTrajectory, bound: f64) -> Result<Option<f64>> {
    let mut horizon = None;
    for s in pair.first.iter().skip(1) {
        match linfty_l2_ratio(pair, s.time())?.value {
            Some(r) if r <= bound => horizon = Some(s.time()),
            _ => break,
        }
    }
    Ok(horizon)
}

/// `ρ̄(t)` rebuilt from `G = (1−ρ₁)p̄ − ρ̄p₂` and the heat semigroup, against the direct value.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub t: f64,
    pub reconstructed: RealField,
    pub direct: RealField,
    /// `max |reconstructed − direct|`.
    pub defect: f64,
}

impl Reconstruction {
    /// Defect relative to `‖ρ̄‖∞`, or the raw defect when `ρ̄ ≡ 0`.
    pub fn relative_defect(&self) -> f64 {
        let s = self.direct.max_abs();
        if s > 0.0 {
            self.defect / s
        } else {
            self.defect
        }
    }
}

/// Fewest `G` samples on `[0, t]` accepted for the time quadrature.
pub const MIN_G_SAMPLES: usize = 8;

/// The flux difference `G = (1−ρ₁)p̄ − ρ̄p₂` at sample `i`.
pub fn flux_difference(pair: &PairedTrajectory, i: usize) -> Result<RealField> {
    let (a, b) = (&pair.first[i], &pair.second[i]);
    let rho1 = a.rho().values();
    let rho_bar = a.rho().sub(b.rho())?;
    let p_bar = a.moments().p().sub(b.moments().p())?;
    let p2 = b.moments().p().values();
    let n = rho1.len();
    let mut out = vec![0.0; 2 * n];
    for c in 0..2 {
        for j in 0..n {
            out[c * n + j] = (1.0 - rho1[j]) * p_bar.values()[c * n + j] - rho_bar.values()[j] * p2[c * n + j];
        }
    }
    RealField::from_values(a.rho().grid(), Rank::VECTOR, out)
}

pub fn duhamel_reconstruction(pair: &PairedTrajectory, t: f64, nodes: usize) -> Result<Reconstruction> {
    let end = pair.index_of(t)?;
    let direct = difference_at(pair, end)?.rho_bar;
    let t0 = pair.first[0].time();
    let span = t - t0;
    if span <= 0.0 {
        return Ok(Reconstruction {
            t,
            reconstructed: direct.clone(),
            direct,
            defect: 0.0,
        });
    }
    if end + 1 < MIN_G_SAMPLES {
        return Err(Error::Samples(format!(
            "{} G sample(s) on [{t0}, {t}]; at least {MIN_G_SAMPLES} needed to resolve the time integral",
            end + 1
        )));
    }
    let series: Vec<(f64, RealField)> = (0..=end)
        .map(|i| Ok((pair.first[i].time() - t0, flux_difference(pair, i)?)))
        .collect::<Result<_>>()?;
    let forced = heatkernel::duhamel(&series, span, nodes)?;
    let initial = heat_semigroup(&difference_at(pair, 0)?.rho_bar, span)?;
    let reconstructed = forced.add(&initial)?;
    let defect = reconstructed.sub(&direct)?.max_abs();
    Ok(Reconstruction {
        t,
        reconstructed,
        direct,
        defect,
    })
}

/// `e^{tΔ} u` on Ω.
fn heat_semigroup(u: &RealField, t: f64) -> Result<RealField> {
    let mut hat = spectral::transform(u)?;
    let g = hat.grid();
    for (i, c) in hat.coeffs_mut().iter_mut().enumerate() {
        *c *= (-g.wavenumber_sq(i) * t).exp();
    }
    Ok(spectral::inverse(&hat))
}

/// Least-squares fit `log‖f̄(t)‖² ≈ a + Ĉ t` and the envelope `‖f̄(0)‖² e^{Ĉt}(1+tol)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GronwallFit {
    /// `None` when `f̄ ≡ 0` (identical runs).
    pub c_hat: Option<f64>,
    pub intercept: Option<f64>,
    /// Largest `‖f̄(t)‖² / (‖f̄(0)‖² e^{Ĉt})` over the window.
    pub worst_ratio: f64,
    pub tolerance: f64,
    pub envelope_holds: bool,
    /// `(t, ‖f̄(t)‖²)` samples used.
    pub samples: Vec<(f64, f64)>,
}

pub fn gronwall_fit(pair: &PairedTrajectory, t_max: f64, tolerance: f64) -> Result<GronwallFit> {
    let mut samples = Vec::new();
    for (i, s) in pair.first.iter().enumerate() {
        if s.time() > t_max + 1e-12 {
            break;
        }
        let d = difference_at(pair, i)?;
        samples.push((d.t, spectral::lq_norm(&d.f_bar, 2.0, Domain::Upsilon)?.powi(2)));
    }
    if samples.iter().all(|s| s.1 == 0.0) {
        return Ok(GronwallFit {
            c_hat: None,
            intercept: None,
            worst_ratio: f64::NAN,
            tolerance,
            envelope_holds: false,
            samples,
        });
    }
    if let Some(bad) = samples.iter().find(|s| !(s.1 > 0.0) || !s.1.is_finite()) {
        return Err(Error::Parameter(format!("‖f̄‖² = {} at t = {} is not positive", bad.1, bad.0)));
    }
    if samples.len() < 2 {
        return Err(Error::Samples("Grönwall fit needs at least 2 samples".into()));
    }
    let m = samples.len() as f64;
    let tm = samples.iter().map(|s| s.0).sum::<f64>() / m;
    let ym = samples.iter().map(|s| s.1.ln()).sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, v) in &samples {
        sxy += (t - tm) * (v.ln() - ym);
        sxx += (t - tm) * (t - tm);
    }
    let c = sxy / sxx;
    let a = ym - c * tm;
    let (t0, n0) = samples[0];
    let worst = samples
        .iter()
        .map(|&(t, v)| v / (n0 * (c * (t - t0)).exp()))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(GronwallFit {
        c_hat: Some(c),
        intercept: Some(a),
        worst_ratio: worst,
        tolerance,
        envelope_holds: worst <= 1.0 + tolerance,
        samples,
    })
}

/// One row of the pair table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRow {
    pub t: f64,
    pub f_bar_l2: f64,
    pub rho_bar_linf: f64,
    pub ratio: Option<f64>,
    pub reconstruction_defect: Option<f64>,
    pub envelope: Option<f64>,
}

/// Per-sample summary. Reconstruction is attempted where enough `G` samples exist.
pub fn pair_table(pair: &PairedTrajectory, fit: &GronwallFit, nodes: usize) -> Result<Vec<PairRow>> {
    let t0 = pair.first[0].time();
    let n0 = fit.samples.first().map(|s| s.1);
    pair.first
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = s.time();
            let d = difference_at(pair, i)?;
            let ratio = linfty_l2_ratio(pair, t)?.value;
            let reconstruction_defect = if i + 1 >= MIN_G_SAMPLES {
                Some(duhamel_reconstruction(pair, t, nodes)?.defect)
            } else {
                None
            };
            let envelope = match (fit.c_hat, n0) {
                (Some(c), Some(n0)) => Some(n0 * (c * (t - t0)).exp()),
                _ => None,
            };
            Ok(PairRow {
                t,
                f_bar_l2: spectral::lq_norm(&d.f_bar, 2.0, Domain::Upsilon)?,
                rho_bar_linf: d.rho_bar.max_abs(),
                ratio,
                reconstruction_defect,
                envelope,
            })
        })
        .collect()
}
