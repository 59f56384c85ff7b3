//! Right-hand sides of the kinetic equation and its moment hierarchy, barrier functions,
//! Galerkin truncation and the IMEX time stepper.
//!
//! Every right-hand side is evaluated on the 2/3-band-limited part of its inputs:
//! products are formed pointwise from band-limited factors and projected back onto the
//! band once, then differentiated spectrally. For band-limited data the projected
//! products are exact, so algebraic identities such as
//! `div((1−ρ)∇f + f∇ρ) = (1−ρ)Δf + fΔρ` and the moment relations hold to roundoff.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::moments::{self, MomentSet, DEFAULT_MAX_ORDER};
use crate::spectral::{
    self, dealias_mask, forward_raw, inverse_raw, Rank, RealField, SpectralField, TorusGrid,
};

/// Tolerance on `ρ ≤ 1` before a run is aborted.
pub const DEFAULT_RHO_ABORT: f64 = 1e-6;

/// Threshold on `min(1−ρ)` below which `rhs_v` regularizes with ε.
pub const DEFAULT_V_EPSILON: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Cached wavenumber tables.

struct Tables {
    /// First-derivative wavenumbers per flat index (0 at Nyquist).
    kx: Vec<f64>,
    ky: Vec<f64>,
    /// `−(kx² + ky²)` and `−kθ²`.
    lap_x: Vec<f64>,
    lap_th: Vec<f64>,
    band: Vec<bool>,
}

thread_local! {
    static TABLES: RefCell<HashMap<TorusGrid, Rc<Tables>>> = RefCell::new(HashMap::new());
}

fn tables(grid: TorusGrid) -> Rc<Tables> {
    TABLES.with(|t| {
        t.borrow_mut()
            .entry(grid)
            .or_insert_with(|| {
                let n = grid.len();
                let mut tb = Tables {
                    kx: Vec::with_capacity(n),
                    ky: Vec::with_capacity(n),
                    lap_x: Vec::with_capacity(n),
                    lap_th: Vec::with_capacity(n),
                    band: dealias_mask(grid),
                };
                for i in 0..n {
                    let ijk = grid.unravel(i);
                    let k = |a: usize| grid.wavenumber(a, ijk[a]) as f64;
                    let d1 = |a: usize| if grid.is_nyquist(a, ijk[a]) { 0.0 } else { k(a) };
                    tb.kx.push(d1(0));
                    tb.ky.push(d1(1));
                    tb.lap_x.push(-(k(0) * k(0) + k(1) * k(1)));
                    tb.lap_th.push(if grid.dims() == 3 { -k(2) * k(2) } else { 0.0 });
                }
                Rc::new(tb)
            })
            .clone()
    })
}

fn project(hat: &mut [Complex64], band: &[bool]) {
    let n = band.len();
    for (i, c) in hat.iter_mut().enumerate() {
        if !band[i % n] {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}

fn times_ik(hat: &[Complex64], k: &[f64]) -> Vec<Complex64> {
    hat.iter()
        .zip(k)
        .map(|(c, &k)| Complex64::new(-c.im * k, c.re * k))
        .collect()
}

fn times_real(hat: &[Complex64], m: &[f64]) -> Vec<Complex64> {
    hat.iter().zip(m).map(|(c, &m)| c * m).collect()
}

/// Band-limited copy of a field.
fn band_limit(field: &RealField) -> RealField {
    let g = field.grid();
    let comps = field.rank().components();
    let mut hat = forward_raw(g, field.values(), comps);
    project(&mut hat, &tables(g).band);
    RealField::from_raw(g, field.rank(), inverse_raw(g, &hat, comps))
}

/// `div P(F)` for a field on Ω whose last index is the derivative direction
/// (order `n+1` in, order `n` out).
fn div_last_index(flux: &RealField) -> RealField {
    let g = flux.grid();
    let comps = flux.rank().components();
    let tb = tables(g);
    let n = g.len();
    let mut hat = forward_raw(g, flux.values(), comps);
    project(&mut hat, &tb.band);
    let out_comps = comps / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); n * out_comps];
    for c in 0..out_comps {
        let hx = &hat[(2 * c) * n..(2 * c + 1) * n];
        let hy = &hat[(2 * c + 1) * n..(2 * c + 2) * n];
        for i in 0..n {
            let s = hx[i] * tb.kx[i] + hy[i] * tb.ky[i];
            out[c * n + i] = Complex64::new(-s.im, s.re);
        }
    }
    let rank = Rank::tensor(flux.rank().order() - 1);
    RealField::from_raw(g, rank, inverse_raw(g, &out, out_comps))
}

fn grad_and_laplacian(field: &RealField) -> (RealField, RealField, RealField) {
    let g = field.grid();
    let tb = tables(g);
    let hat = forward_raw(g, field.values(), 1);
    let dx = inverse_raw(g, &times_ik(&hat, &tb.kx), 1);
    let dy = inverse_raw(g, &times_ik(&hat, &tb.ky), 1);
    let lap = inverse_raw(g, &times_real(&hat, &tb.lap_x), 1);
    (
        RealField::from_raw(g, Rank::SCALAR, dx),
        RealField::from_raw(g, Rank::SCALAR, dy),
        RealField::from_raw(g, Rank::SCALAR, lap),
    )
}

// ---------------------------------------------------------------------------
// State.

/// A distribution `f` on Υ at time `t`, with its moments ρ, **p**, ℙ cached.
#[derive(Clone, PartialEq)]
pub struct ModelState {
    f: RealField,
    time: f64,
    step: u64,
    moments: MomentSet,
}

impl fmt::Debug for ModelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelState")
            .field("grid", &self.grid().to_string())
            .field("time", &self.time)
            .field("step", &self.step)
            .field("mass", &self.mass())
            .finish_non_exhaustive()
    }
}

impl ModelState {
    pub fn new(f: RealField, time: f64, step: u64) -> Result<Self> {
        if f.grid().dims() != 3 {
            return Err(Error::Grid(format!("state must live on Υ, got {}", f.grid())));
        }
        if let Some(index) = f.first_non_finite() {
            return Err(Error::NonFinite {
                what: "distribution",
                index,
            });
        }
        if !time.is_finite() || time < 0.0 {
            return Err(Error::Parameter(format!("state time {time} must be finite and >= 0")));
        }
        let moments = MomentSet::compute(&f, 2)?;
        Ok(Self {
            f,
            time,
            step,
            moments,
        })
    }

    /// Sample `f` at the grid points and project it onto the dealiasing band.
    pub fn band_limited(grid: TorusGrid, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let raw = RealField::from_fn(grid, f);
        if let Some(index) = raw.first_non_finite() {
            return Err(Error::NonFinite {
                what: "initial data",
                index,
            });
        }
        Self::new(band_limit(&raw), 0.0, 0)
    }

    pub fn f(&self) -> &RealField {
        &self.f
    }

    pub fn into_f(self) -> RealField {
        self.f
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn grid(&self) -> TorusGrid {
        self.f.grid()
    }

    pub fn moments(&self) -> &MomentSet {
        &self.moments
    }

    pub fn rho(&self) -> &RealField {
        self.moments.rho()
    }

    pub fn mass(&self) -> f64 {
        self.f.integral()
    }

    /// `min (1 − ρ)` over Ω.
    pub fn min_one_minus_rho(&self) -> f64 {
        1.0 - self.rho().max()
    }
}

// ---------------------------------------------------------------------------
// Right-hand sides.

/// Which way the cross-diffusion term is written.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Form {
    /// `div((1−ρ)∇f + f∇ρ)`.
    #[default]
    Divergence,
    /// `(1−ρ)Δf + fΔρ`.
    NonDivergence,
}

#[derive(Clone, Copy, PartialEq)]
enum Cross {
    None,
    /// `(1−ρ)∇f + f∇ρ`: the full term.
    Full,
    /// `−ρ∇f + f∇ρ`: the full term minus the linear `∇f` part.
    Excess,
}

#[derive(Clone, Copy)]
struct Terms {
    form: Form,
    drift: bool,
    cross: Cross,
    theta_diffusion: bool,
    dealias: bool,
}

/// Assemble the selected terms in coefficient space from the coefficients of `f`.
fn assemble(grid: TorusGrid, f_hat: &[Complex64], terms: Terms) -> Vec<Complex64> {
    let tb = tables(grid);
    let n = grid.len();
    let n2 = grid.nx() * grid.ny();
    let mut fh = f_hat.to_vec();
    if terms.dealias {
        project(&mut fh, &tb.band);
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n];

    if terms.drift || terms.cross != Cross::None {
        let fb = inverse_raw(grid, &fh, 1);
        let planar = grid.planar();
        let dth = grid.spacing(2);
        let mut rho = vec![0.0; n2];
        for plane in fb.chunks_exact(n2) {
            for (r, v) in rho.iter_mut().zip(plane) {
                *r += v;
            }
        }
        rho.iter_mut().for_each(|r| *r *= dth);
        let (rx, ry, rlap) = grad_and_laplacian(&RealField::from_raw(planar, Rank::SCALAR, rho.clone()));
        let cos: Vec<f64> = (0..grid.ntheta()).map(|i| (i as f64 * dth).cos()).collect();
        let sin: Vec<f64> = (0..grid.ntheta()).map(|i| (i as f64 * dth).sin()).collect();

        let mut flux_x = vec![0.0; n];
        let mut flux_y = vec![0.0; n];
        let mut scalar = vec![0.0; n];
        let need_grad = terms.cross != Cross::None && terms.form == Form::Divergence;
        let need_lap = terms.cross != Cross::None && terms.form == Form::NonDivergence;
        let (fx, fy) = if need_grad {
            (
                inverse_raw(grid, &times_ik(&fh, &tb.kx), 1),
                inverse_raw(grid, &times_ik(&fh, &tb.ky), 1),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let flap = if need_lap {
            inverse_raw(grid, &times_real(&fh, &tb.lap_x), 1)
        } else {
            Vec::new()
        };
        for i in 0..n {
            let j = i % n2;
            let it = i / n2;
            let r = rho[j];
            let u = 1.0 - r;
            let f = fb[i];
            if terms.drift {
                flux_x[i] -= u * f * cos[it];
                flux_y[i] -= u * f * sin[it];
            }
            let coef = match terms.cross {
                Cross::None => continue,
                Cross::Full => u,
                Cross::Excess => -r,
            };
            match terms.form {
                Form::Divergence => {
                    flux_x[i] += coef * fx[i] + f * rx.values()[j];
                    flux_y[i] += coef * fy[i] + f * ry.values()[j];
                }
                Form::NonDivergence => {
                    scalar[i] = coef * flap[i] + f * rlap.values()[j];
                }
            }
        }
        let mut hx = forward_raw(grid, &flux_x, 1);
        let mut hy = forward_raw(grid, &flux_y, 1);
        if terms.dealias {
            project(&mut hx, &tb.band);
            project(&mut hy, &tb.band);
        }
        for i in 0..n {
            let s = hx[i] * tb.kx[i] + hy[i] * tb.ky[i];
            out[i] = Complex64::new(-s.im, s.re);
        }
        if need_lap {
            let mut hs = forward_raw(grid, &scalar, 1);
            if terms.dealias {
                project(&mut hs, &tb.band);
            }
            for (o, s) in out.iter_mut().zip(&hs) {
                *o += s;
            }
        }
    }
    if terms.theta_diffusion {
        for i in 0..n {
            out[i] += fh[i] * tb.lap_th[i];
        }
    }
    out
}

/// Right-hand side of the kinetic equation for `f` in the chosen form.
pub fn rhs_f(state: &ModelState, form: Form) -> Result<RealField> {
    let g = state.grid();
    let hat = forward_raw(g, state.f.values(), 1);
    let out = assemble(
        g,
        &hat,
        Terms {
            form,
            drift: true,
            cross: Cross::Full,
            theta_diffusion: true,
            dealias: true,
        },
    );
    finite_field(g, Rank::SCALAR, inverse_raw(g, &out, 1), "rhs_f")
}

fn finite_field(g: TorusGrid, rank: Rank, values: Vec<f64>, what: &'static str) -> Result<RealField> {
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what, index });
    }
    Ok(RealField::from_raw(g, rank, values))
}

/// Right-hand side of the order-`n` moment equation on Ω:
/// `−div P((1−ρ)π^{n+1}) + div P((1−ρ)∇πⁿ + πⁿ⊗∇ρ) + π̃ⁿ` with divergences on the last index.
fn tensor_rhs(rho: &RealField, pin: &RealField, pnext: &RealField, source: Option<&RealField>) -> RealField {
    let g = rho.grid();
    let n = g.len();
    let rho = band_limit(rho);
    let pin = band_limit(pin);
    let pnext = band_limit(pnext);
    let (rx, ry, _) = grad_and_laplacian(&rho);
    let in_comps = pin.rank().components();
    let mut flux = vec![0.0; 2 * in_comps * n];
    for c in 0..in_comps {
        let comp = pin.component(c);
        let (cx, cy, _) = grad_and_laplacian(&comp);
        let base = comp.values();
        for (j, (dj, rj)) in [(&cx, &rx), (&cy, &ry)].into_iter().enumerate() {
            let dst = &mut flux[(2 * c + j) * n..(2 * c + j + 1) * n];
            let next = pnext.component_slice(2 * c + j);
            for i in 0..n {
                let u = 1.0 - rho.values()[i];
                dst[i] = -u * next[i] + u * dj.values()[i] + base[i] * rj.values()[i];
            }
        }
    }
    let out = div_last_index(&RealField::from_raw(g, Rank::tensor(pin.rank().order() + 1), flux));
    match source {
        Some(s) => out.add(&band_limit(s)).expect("matching tensor ranks"),
        None => out,
    }
}

/// `−div((1−ρ)**p**) + Δρ`.
pub fn rhs_rho(moments: &MomentSet) -> Result<RealField> {
    Ok(tensor_rhs(moments.rho(), moments.rho(), moments.p(), None))
}

/// Right-hand side of the polarisation equation, including the `−**p**` damping.
pub fn rhs_p(state: &ModelState) -> Result<RealField> {
    let m = state.moments();
    let damping = m.p().scale(-1.0);
    Ok(tensor_rhs(m.rho(), m.p(), m.pmat(), Some(&damping)))
}

/// Right-hand side of the order-`n` tensor equation (`n ≤` [`DEFAULT_MAX_ORDER`]),
/// with source `π̃ⁿ`.
pub fn rhs_tensor(state: &ModelState, n: usize) -> Result<RealField> {
    rhs_tensor_with_max(state, n, DEFAULT_MAX_ORDER)
}

pub fn rhs_tensor_with_max(state: &ModelState, n: usize, max: usize) -> Result<RealField> {
    if n > max {
        return Err(Error::TensorOrder { order: n, max });
    }
    let f = state.f();
    let pin = moments::moment_tensor_with_max(f, n, n)?;
    let pnext = moments::moment_tensor_with_max(f, n + 1, n + 1)?;
    let source = moments::moment_source_with_max(f, n, n)?;
    let src = if n == 0 { None } else { Some(&source) };
    Ok(tensor_rhs(state.rho(), &pin, &pnext, src))
}

/// Time derivatives supplied to the linearized (first-derivative) system.
#[derive(Clone, Debug, Default)]
pub struct TimeDerivatives {
    pub fdot: Option<RealField>,
    pub rhodot: Option<RealField>,
    pub pdot: Option<RealField>,
}

impl TimeDerivatives {
    /// All three derivatives from `ḟ` alone.
    pub fn from_fdot(fdot: RealField) -> Result<Self> {
        let rhodot = moments::moment_tensor(&fdot, 0)?;
        let pdot = moments::moment_tensor(&fdot, 1)?;
        Ok(Self {
            fdot: Some(fdot),
            rhodot: Some(rhodot),
            pdot: Some(pdot),
        })
    }

    /// Second-order centered difference `(f(t+h) − f(t−h)) / 2h` of two stored states.
    pub fn centered(before: &ModelState, after: &ModelState) -> Result<Self> {
        let h2 = after.time() - before.time();
        if h2 <= 0.0 {
            return Err(Error::Samples("centered difference needs increasing times".into()));
        }
        Self::from_fdot(after.f().sub(before.f())?.scale(1.0 / h2))
    }
}

/// Right-hand side for `ḟ`:
/// `−div[((1−ρ)ḟ − ρ̇f)e] + div[(1−ρ)∇ḟ − ρ̇∇f + ḟ∇ρ + f∇ρ̇] + ∂²θḟ`.
pub fn rhs_fdot(state: &ModelState, d: &TimeDerivatives) -> Result<RealField> {
    let fdot = d.fdot.as_ref().ok_or(Error::MissingDerivative("fdot"))?;
    let rhodot = d.rhodot.as_ref().ok_or(Error::MissingDerivative("rhodot"))?;
    let g = state.grid();
    if fdot.grid() != g {
        return Err(Error::GridMismatch(g, fdot.grid()));
    }
    if rhodot.grid() != g.planar() {
        return Err(Error::GridMismatch(g.planar(), rhodot.grid()));
    }
    let tb = tables(g);
    let n = g.len();
    let n2 = g.nx() * g.ny();
    let dth = g.spacing(2);

    let f = band_limit(state.f());
    let rho = band_limit(state.rho());
    let rhodot = band_limit(rhodot);
    let mut fd_hat = forward_raw(g, fdot.values(), 1);
    project(&mut fd_hat, &tb.band);
    let fd = inverse_raw(g, &fd_hat, 1);
    let f_hat = forward_raw(g, f.values(), 1);
    let (fx, fy) = (
        inverse_raw(g, &times_ik(&f_hat, &tb.kx), 1),
        inverse_raw(g, &times_ik(&f_hat, &tb.ky), 1),
    );
    let (fdx, fdy) = (
        inverse_raw(g, &times_ik(&fd_hat, &tb.kx), 1),
        inverse_raw(g, &times_ik(&fd_hat, &tb.ky), 1),
    );
    let (rx, ry, _) = grad_and_laplacian(&rho);
    let (rdx, rdy, _) = grad_and_laplacian(&rhodot);

    let mut flux_x = vec![0.0; n];
    let mut flux_y = vec![0.0; n];
    for i in 0..n {
        let j = i % n2;
        let th = (i / n2) as f64 * dth;
        let u = 1.0 - rho.values()[j];
        let rd = rhodot.values()[j];
        let drift = u * fd[i] - rd * f.values()[i];
        flux_x[i] = -drift * th.cos() + u * fdx[i] - rd * fx[i]
            + fd[i] * rx.values()[j]
            + f.values()[i] * rdx.values()[j];
        flux_y[i] = -drift * th.sin() + u * fdy[i] - rd * fy[i]
            + fd[i] * ry.values()[j]
            + f.values()[i] * rdy.values()[j];
    }
    let mut hx = forward_raw(g, &flux_x, 1);
    let mut hy = forward_raw(g, &flux_y, 1);
    project(&mut hx, &tb.band);
    project(&mut hy, &tb.band);
    let out: Vec<Complex64> = (0..n)
        .map(|i| {
            let s = hx[i] * tb.kx[i] + hy[i] * tb.ky[i];
            Complex64::new(-s.im, s.re) + fd_hat[i] * tb.lap_th[i]
        })
        .collect();
    finite_field(g, Rank::SCALAR, inverse_raw(g, &out, 1), "rhs_fdot")
}

/// Right-hand side for `ρ̇`: `−div[(1−ρ)ṗ − ρ̇**p**] + Δρ̇`.
pub fn rhs_rhodot(state: &ModelState, d: &TimeDerivatives) -> Result<RealField> {
    let rhodot = d.rhodot.as_ref().ok_or(Error::MissingDerivative("rhodot"))?;
    let pdot = d.pdot.as_ref().ok_or(Error::MissingDerivative("pdot"))?;
    let g = state.grid().planar();
    if rhodot.grid() != g || pdot.grid() != g {
        return Err(Error::GridMismatch(g, rhodot.grid()));
    }
    let n = g.len();
    let rho = band_limit(state.rho());
    let p = band_limit(state.moments().p());
    let rhodot = band_limit(rhodot);
    let pdot = band_limit(pdot);
    let (rdx, rdy, _) = grad_and_laplacian(&rhodot);
    let mut flux = vec![0.0; 2 * n];
    for i in 0..n {
        let u = 1.0 - rho.values()[i];
        let rd = rhodot.values()[i];
        flux[i] = -(u * pdot.values()[i] - rd * p.values()[i]) + rdx.values()[i];
        flux[n + i] = -(u * pdot.values()[n + i] - rd * p.values()[n + i]) + rdy.values()[i];
    }
    Ok(div_last_index(&RealField::from_raw(g, Rank::VECTOR, flux)))
}

// ---------------------------------------------------------------------------
// Barrier functions.

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Family {
    Power { q: f64 },
    LogLog,
    Custom { name: String, h: ScalarFn, dh: ScalarFn, ddh: ScalarFn },
}

/// Breakpoint of the log-log barrier: `e^{−2}`.
pub const LOGLOG_BREAK: f64 = 0.135_335_283_236_612_7;

/// Results of validating a barrier function on the mesh `[1e−8, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HCertificate {
    pub validated: bool,
    /// `sup (s|h'(s)| − h(s))₊` on the mesh.
    pub m_estimate: f64,
    /// False when that supremum is attained at the smallest mesh point (it grows as s → 0).
    pub m_bounded: bool,
    /// Range of `s h''(s)/h'(s)` on the mesh.
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// `h(1e−8)`.
    pub h_at_tiny: f64,
    /// Blow-up at 0 follows from the closed form rather than the numerical probe.
    pub symbolic_divergence: bool,
}

/// A barrier `h` with `h ≥ 0`, `h' < 0 < h''` on (0,1] and `h(0⁺) = ∞`.
#[derive(Clone)]
pub struct HFunction {
    family: Family,
    certificate: HCertificate,
}

impl fmt::Debug for HFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HFunction")
            .field("family", &self.describe())
            .field("certificate", &self.certificate)
            .finish()
    }
}

const BARRIER_RULE: &str = "requires h' < 0 < h'' on (0,1], h >= 0 and h(s) -> infinity as s -> 0+";

impl HFunction {
    /// `h(s) = s^{−q}`, `q > 0`.
    pub fn power(q: f64) -> Result<Self> {
        if !q.is_finite() {
            return Err(Error::Barrier(format!("power exponent {q} is not finite")));
        }
        Self::validate(Family::Power { q })
    }

    /// `h(s) = log(−log s) + 1` on `(0, e^{−2}]`, continued for `s > e^{−2}` by the C² tail
    /// `log 2 + e^{−λ(s−e^{−2})}`, `λ = e²/2`, which keeps `h' < 0 < h''` and `h > log 2`.
    pub fn loglog() -> Result<Self> {
        Self::validate(Family::LogLog)
    }

    /// A user-supplied barrier with explicit derivatives, validated on the mesh.
    pub fn custom(
        name: impl Into<String>,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dh: impl Fn(f64) -> f64 + Send + Sync + 'static,
        ddh: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::validate(Family::Custom {
            name: name.into(),
            h: Arc::new(h),
            dh: Arc::new(dh),
            ddh: Arc::new(ddh),
        })
    }

    pub fn describe(&self) -> String {
        match &self.family {
            Family::Power { q } => format!("power(q={q})"),
            Family::LogLog => "loglog".into(),
            Family::Custom { name, .. } => format!("custom({name})"),
        }
    }

    pub fn certificate(&self) -> &HCertificate {
        &self.certificate
    }

    pub fn h(&self, s: f64) -> f64 {
        eval(&self.family, s, 0)
    }

    pub fn dh(&self, s: f64) -> f64 {
        eval(&self.family, s, 1)
    }

    pub fn ddh(&self, s: f64) -> f64 {
        eval(&self.family, s, 2)
    }

    fn validate(family: Family) -> Result<Self> {
        let mesh: Vec<f64> = (0..=400).map(|i| 10f64.powf(-8.0 + 8.0 * i as f64 / 400.0)).collect();
        let mut cert = HCertificate {
            validated: false,
            m_estimate: 0.0,
            m_bounded: true,
            ratio_min: f64::INFINITY,
            ratio_max: f64::NEG_INFINITY,
            h_at_tiny: eval(&family, 1e-8, 0),
            symbolic_divergence: matches!(family, Family::LogLog),
        };
        let mut m_arg = 0;
        for (i, &s) in mesh.iter().enumerate() {
            let (h, d, dd) = (eval(&family, s, 0), eval(&family, s, 1), eval(&family, s, 2));
            if !(h.is_finite() && d.is_finite() && dd.is_finite()) {
                return Err(Error::Barrier(format!("non-finite value at s = {s:e}; {BARRIER_RULE}")));
            }
            if h < 0.0 || d >= 0.0 || dd <= 0.0 {
                return Err(Error::Barrier(format!(
                    "at s = {s:e}: h = {h:e}, h' = {d:e}, h'' = {dd:e}; {BARRIER_RULE}"
                )));
            }
            let ratio = s * dd / d;
            cert.ratio_min = cert.ratio_min.min(ratio);
            cert.ratio_max = cert.ratio_max.max(ratio);
            let m = s * d.abs() - h;
            if m > cert.m_estimate {
                cert.m_estimate = m;
                m_arg = i;
            }
        }
        cert.m_bounded = cert.m_estimate == 0.0 || m_arg > 0;
        let (a, b, c) = (eval(&family, 1e-8, 0), eval(&family, 1e-4, 0), eval(&family, 1e-2, 0));
        let monotone_blowup = a > b && b > c;
        if !monotone_blowup || !(a > 1e3 || cert.symbolic_divergence) {
            return Err(Error::Barrier(format!(
                "no blow-up at 0 (h(1e-8) = {a:e}, h(1e-4) = {b:e}, h(1e-2) = {c:e}); {BARRIER_RULE}"
            )));
        }
        if !cert.ratio_min.is_finite() || !cert.ratio_max.is_finite() {
            return Err(Error::Barrier("s h''/h' is unbounded on the mesh".into()));
        }
        cert.validated = true;
        Ok(Self {
            family,
            certificate: cert,
        })
    }
}

fn eval(family: &Family, s: f64, order: usize) -> f64 {
    match family {
        Family::Power { q } => {
            let q = *q;
            match order {
                0 => s.powf(-q),
                1 => -q * s.powf(-q - 1.0),
                _ => q * (q + 1.0) * s.powf(-q - 2.0),
            }
        }
        Family::LogLog => {
            if s <= LOGLOG_BREAK {
                let l = s.ln();
                match order {
                    0 => (-l).ln() + 1.0,
                    1 => 1.0 / (s * l),
                    _ => -(l + 1.0) / (s * l).powi(2),
                }
            } else {
                let lam = std::f64::consts::E.powi(2) / 2.0;
                let e = (-lam * (s - LOGLOG_BREAK)).exp();
                match order {
                    0 => std::f64::consts::LN_2 + e,
                    1 => -lam * e,
                    _ => lam * lam * e,
                }
            }
        }
        Family::Custom { h, dh, ddh, .. } => match order {
            0 => h(s),
            1 => dh(s),
            _ => ddh(s),
        },
    }
}

/// Regularization used by [`rhs_v`] when none is given: 0 if `min(1−ρ) > 1e−6`, else `1e−6`.
pub fn default_v_epsilon(state: &ModelState) -> f64 {
    if state.min_one_minus_rho() > DEFAULT_V_EPSILON {
        0.0
    } else {
        DEFAULT_V_EPSILON
    }
}

/// `v_ε = h(1 − ρ + ε)` on Ω.
pub fn transformed_density(state: &ModelState, h: &HFunction, epsilon: f64) -> Result<RealField> {
    let s = shifted_u(state, epsilon)?;
    Ok(s.map(|x| h.h(x)))
}

fn shifted_u(state: &ModelState, epsilon: f64) -> Result<RealField> {
    if !(epsilon >= 0.0) {
        return Err(Error::Parameter(format!("epsilon = {epsilon} must be >= 0")));
    }
    let s = state.rho().map(|r| 1.0 - r + epsilon);
    if let Some((i, &value)) = s
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0))
    {
        let [ix, iy, _] = s.grid().unravel(i);
        return Err(Error::Degenerate { value, ix, iy });
    }
    Ok(s)
}

/// Right-hand side for `v_ε = h(u+ε)`, `u = 1−ρ`:
/// `div(**p** u h'(u+ε)) − (u h''/h')(u+ε) **p**·∇v_ε + Δv_ε − (h''/h'²)(u+ε)|∇v_ε|²`.
///
/// `v_ε` is not band-limited, so products here are collocated (no dealiasing).
/// `epsilon = None` selects [`default_v_epsilon`].
pub fn rhs_v(state: &ModelState, h: &HFunction, epsilon: Option<f64>) -> Result<RealField> {
    let eps = epsilon.unwrap_or_else(|| default_v_epsilon(state));
    let s = shifted_u(state, eps)?;
    let g = s.grid();
    let n = g.len();
    let p = state.moments().p();
    let v = s.map(|x| h.h(x));
    let (vx, vy, vlap) = grad_and_laplacian(&v);
    let mut flux = vec![0.0; 2 * n];
    let mut rest = vec![0.0; n];
    for i in 0..n {
        let si = s.values()[i];
        let u = si - eps;
        let (d, dd) = (h.dh(si), h.ddh(si));
        let (px, py) = (p.values()[i], p.values()[n + i]);
        flux[i] = px * u * d;
        flux[n + i] = py * u * d;
        let (gx, gy) = (vx.values()[i], vy.values()[i]);
        rest[i] = -(u * dd / d) * (px * gx + py * gy) + vlap.values()[i] - dd / (d * d) * (gx * gx + gy * gy);
    }
    let tb = tables(g);
    let hat = forward_raw(g, &flux, 2);
    let div: Vec<Complex64> = (0..n)
        .map(|i| {
            let s = hat[i] * tb.kx[i] + hat[n + i] * tb.ky[i];
            Complex64::new(-s.im, s.re)
        })
        .collect();
    let div = inverse_raw(g, &div, 1);
    let out = div.iter().zip(&rest).map(|(a, b)| a + b).collect();
    finite_field(g, Rank::SCALAR, out, "rhs_v")
}

// ---------------------------------------------------------------------------
// Galerkin truncation.

/// Keep exactly the Fourier modes with `|k|² ≤ λ_N²`, where `λ_N²` is the `N`-th smallest
/// eigenvalue of `−Δ` on the grid (constant mode included, multiplicities counted) and `|k|²`
/// sums over every axis of the field's grid. `N = 0` gives the zero field.
pub fn galerkin_project(field: &RealField, n_modes: usize) -> RealField {
    let g = field.grid();
    let mask = galerkin_mask(g, n_modes);
    let comps = field.rank().components();
    let mut hat = forward_raw(g, field.values(), comps);
    project(&mut hat, &mask);
    RealField::from_raw(g, field.rank(), inverse_raw(g, &hat, comps))
}

/// `λ_N²` for the grid.
pub fn galerkin_eigenvalue(grid: TorusGrid, n_modes: usize) -> Option<f64> {
    if n_modes == 0 {
        return None;
    }
    let mut ksq: Vec<f64> = (0..grid.len()).map(|i| grid.wavenumber_sq(i)).collect();
    ksq.sort_by(f64::total_cmp);
    Some(ksq[n_modes.min(ksq.len()) - 1])
}

fn galerkin_mask(grid: TorusGrid, n_modes: usize) -> Vec<bool> {
    match galerkin_eigenvalue(grid, n_modes) {
        None => vec![false; grid.len()],
        Some(l2) => (0..grid.len()).map(|i| grid.wavenumber_sq(i) <= l2).collect(),
    }
}

// ---------------------------------------------------------------------------
// Time stepping.

/// Time-integration settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Step size; `None` selects [`SolverConfig::stability_bound`] of the initial state.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub form: Form,
    /// Galerkin truncation applied after every step.
    pub galerkin_cutoff: Option<usize>,
    /// Emit a diagnostic sample every `cadence` steps (and at the end).
    pub cadence: usize,
    /// Abort when `ρ > 1 + rho_floor`. Not checked for the linear heat reduction
    /// (`drift` and `cross_diffusion` both off), where ρ carries no occupancy meaning.
    pub rho_floor: f64,
    pub dealias: bool,
    /// Transport term `−div((1−ρ)f e)`.
    pub drift: bool,
    /// Nonlinear cross-diffusion `div(−ρ∇f + f∇ρ)`; with `drift` off this leaves the heat equation.
    pub cross_diffusion: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: 1.0,
            form: Form::Divergence,
            galerkin_cutoff: None,
            cadence: 1,
            rho_floor: DEFAULT_RHO_ABORT,
            dealias: true,
            drift: true,
            cross_diffusion: true,
        }
    }
}

impl SolverConfig {
    /// `0.25 min(h)² / max(1, ‖∇ρ‖∞)`.
    pub fn stability_bound(state: &ModelState) -> f64 {
        let h = state.grid().min_spacing();
        let grad = spectral::gradient(state.rho())
            .ok()
            .and_then(|g| spectral::lq_norm(&g, f64::INFINITY, spectral::Domain::Omega).ok())
            .unwrap_or(0.0);
        0.25 * h * h / grad.max(1.0)
    }

    pub fn resolve_dt(&self, state: &ModelState) -> Result<f64> {
        let bound = Self::stability_bound(state);
        match self.dt {
            None => Ok(bound),
            Some(dt) if !(dt > 0.0) || !dt.is_finite() => {
                Err(Error::Parameter(format!("dt = {dt} must be positive")))
            }
            Some(dt) if dt > bound => Err(Error::Parameter(format!(
                "dt = {dt} exceeds the stability bound {bound:e}"
            ))),
            Some(dt) => Ok(dt),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::Parameter(format!("t_end = {} must be >= 0", self.t_end)));
        }
        if self.cadence == 0 {
            return Err(Error::Parameter("cadence must be >= 1".into()));
        }
        if !(self.rho_floor >= 0.0) {
            return Err(Error::Parameter("rho_floor must be >= 0".into()));
        }
        Ok(())
    }

    fn checks_density(&self) -> bool {
        self.drift || self.cross_diffusion
    }

    fn terms(&self) -> Terms {
        Terms {
            form: self.form,
            drift: self.drift,
            cross: if self.cross_diffusion { Cross::Excess } else { Cross::None },
            theta_diffusion: false,
            dealias: self.dealias,
        }
    }
}

/// Integrating-factor SSP-RK2 for `∂t f = Δ_ξ f + N(f)`:
/// `f₁ = E(f₀ + dt N(f₀))`, `f⁺ = ½E f₀ + ½(f₁ + dt N(f₁))`, `E = e^{−|k|² dt}`.
struct Stepper {
    grid: TorusGrid,
    dt: f64,
    decay: Vec<f64>,
    galerkin: Option<Vec<bool>>,
    terms: Terms,
}

impl Stepper {
    fn new(grid: TorusGrid, dt: f64, config: &SolverConfig) -> Self {
        let tb = tables(grid);
        let decay = tb
            .lap_x
            .iter()
            .zip(&tb.lap_th)
            .map(|(a, b)| ((a + b) * dt).exp())
            .collect();
        Self {
            grid,
            dt,
            decay,
            galerkin: config.galerkin_cutoff.map(|n| galerkin_mask(grid, n)),
            terms: config.terms(),
        }
    }

    fn advance(&self, f: &RealField) -> RealField {
        let g = self.grid;
        let dt = self.dt;
        let f0 = forward_raw(g, f.values(), 1);
        let n0 = assemble(g, &f0, self.terms);
        let f1: Vec<Complex64> = (0..f0.len())
            .map(|i| (f0[i] + n0[i] * dt) * self.decay[i])
            .collect();
        let n1 = assemble(g, &f1, self.terms);
        let mut out: Vec<Complex64> = (0..f0.len())
            .map(|i| 0.5 * f0[i] * self.decay[i] + 0.5 * (f1[i] + n1[i] * dt))
            .collect();
        if let Some(mask) = &self.galerkin {
            project(&mut out, mask);
        }
        RealField::from_raw(g, Rank::SCALAR, inverse_raw(g, &out, 1))
    }

    fn step(&self, state: &ModelState, time: f64) -> Result<ModelState> {
        let f = self.advance(state.f());
        let next_step = state.step() + 1;
        if let Some(index) = f.first_non_finite() {
            return Err(Error::Abort {
                t: time,
                step: next_step,
                reason: format!("non-finite value at flat index {index}"),
                last_good: Box::new(state.clone()),
            });
        }
        ModelState::new(f, time, next_step)
    }
}

/// One step of size `config.dt` (or the stability bound).
pub fn step(state: &ModelState, config: &SolverConfig) -> Result<ModelState> {
    let dt = config.resolve_dt(state)?;
    let stepper = Stepper::new(state.grid(), dt, config);
    let next = stepper.step(state, state.time() + dt)?;
    if config.checks_density() {
        check_density(state, &next, config.rho_floor)?;
    }
    Ok(next)
}

fn check_density(prev: &ModelState, next: &ModelState, floor: f64) -> Result<()> {
    let max_rho = next.rho().max();
    if max_rho > 1.0 + floor {
        return Err(Error::Abort {
            t: next.time(),
            step: next.step(),
            reason: format!("max rho = {max_rho} exceeds 1 + {floor:e}"),
            last_good: Box::new(prev.clone()),
        });
    }
    Ok(())
}

/// Notable run events.
#[derive(Clone, Debug, PartialEq)]
pub enum RunEvent {
    Started { t: f64, dt: f64, steps: u64 },
    /// `min f < 0` first observed (positivity is monitored, not enforced).
    NegativeF { t: f64, step: u64, min_f: f64 },
    Aborted { t: f64, step: u64, reason: String },
    Finished { t: f64, step: u64 },
}

/// Receiver of trajectory samples and events.
pub trait DiagnosticSink {
    fn sample(&mut self, state: &ModelState) -> Result<()>;

    fn event(&mut self, _event: &RunEvent) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl DiagnosticSink for NullSink {
    fn sample(&mut self, _state: &ModelState) -> Result<()> {
        Ok(())
    }
}

/// Keeps every sampled state and event in memory.
#[derive(Default)]
pub struct TrajectorySink {
    pub states: Vec<ModelState>,
    pub events: Vec<RunEvent>,
}

impl DiagnosticSink for TrajectorySink {
    fn sample(&mut self, state: &ModelState) -> Result<()> {
        self.states.push(state.clone());
        Ok(())
    }

    fn event(&mut self, event: &RunEvent) -> Result<()> {
        self.events.push(event.clone());
        Ok(())
    }
}

/// Outcome of [`run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub final_state: ModelState,
    pub dt: f64,
    pub steps: u64,
    pub samples: usize,
    pub initial_mass: f64,
    /// Largest `|mass(t) − mass(0)| / |mass(0)|` over all steps.
    pub max_mass_drift: f64,
    /// Smallest `min(1−ρ)` over all steps.
    pub min_one_minus_rho: f64,
    pub min_f: f64,
}

/// Advance from `state` to `config.t_end`. The step count is `⌈(t_end − t)/dt⌉` and the step
/// is shrunk uniformly so the run lands on `t_end`; sample times are `t₀ + k·dt`.
pub fn run(state: &ModelState, config: &SolverConfig, sink: &mut dyn DiagnosticSink) -> Result<RunSummary> {
    config.validate()?;
    let dt_req = config.resolve_dt(state)?;
    let t0 = state.time();
    let span = (config.t_end - t0).max(0.0);
    let steps = if span == 0.0 { 0 } else { ((span / dt_req) - 1e-9).ceil().max(1.0) as u64 };
    let dt = if steps == 0 { dt_req } else { span / steps as f64 };
    let stepper = Stepper::new(state.grid(), dt, config);

    sink.event(&RunEvent::Started { t: t0, dt, steps })?;
    sink.sample(state)?;
    let initial_mass = state.mass();
    let mut summary = RunSummary {
        final_state: state.clone(),
        dt,
        steps: 0,
        samples: 1,
        initial_mass,
        max_mass_drift: 0.0,
        min_one_minus_rho: state.min_one_minus_rho(),
        min_f: state.f().min(),
    };
    let mut negative_reported = summary.min_f < 0.0;
    if negative_reported {
        sink.event(&RunEvent::NegativeF {
            t: t0,
            step: state.step(),
            min_f: summary.min_f,
        })?;
    }
    let mut current = state.clone();
    for k in 1..=steps {
        let t = if k == steps { config.t_end } else { t0 + k as f64 * dt };
        let next = stepper
            .step(&current, t)
            .and_then(|next| {
                if config.checks_density() {
                    check_density(&current, &next, config.rho_floor)?;
                }
                Ok(next)
            });
        let next = match next {
            Ok(n) => n,
            Err(e) => {
                if let Error::Abort { t, step, reason, .. } = &e {
                    sink.event(&RunEvent::Aborted {
                        t: *t,
                        step: *step,
                        reason: reason.clone(),
                    })?;
                }
                return Err(e);
            }
        };
        let scale = if initial_mass == 0.0 { 1.0 } else { initial_mass.abs() };
        summary.max_mass_drift = summary.max_mass_drift.max((next.mass() - initial_mass).abs() / scale);
        summary.min_one_minus_rho = summary.min_one_minus_rho.min(next.min_one_minus_rho());
        let mf = next.f().min();
        summary.min_f = summary.min_f.min(mf);
        if mf < 0.0 && !negative_reported {
            negative_reported = true;
            sink.event(&RunEvent::NegativeF {
                t,
                step: next.step(),
                min_f: mf,
            })?;
        }
        if k % config.cadence as u64 == 0 || k == steps {
            sink.sample(&next)?;
            summary.samples += 1;
        }
        summary.steps = k;
        current = next;
    }
    sink.event(&RunEvent::Finished {
        t: current.time(),
        step: current.step(),
    })?;
    summary.final_state = current;
    Ok(summary)
}

/// Coefficients of a real field; convenience for spectral comparisons.
pub fn coefficients(field: &RealField) -> Result<SpectralField> {
    spectral::transform(field)
}
