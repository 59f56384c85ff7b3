//! Periodic collocation grids on Ω = (0,2π)² and Υ = (0,2π)³, discrete Fourier
//! transforms, spectral differentiation, 2/3-rule dealiasing and grid quadrature.
//!
//! Conventions:
//!
//! * Point `(ix, iy, iθ)` sits at `(2π ix/nx, 2π iy/ny, 2π iθ/nθ)` and is stored at
//!   flat index `ix + nx (iy + ny iθ)` (x fastest).
//! * Multi-component fields store components contiguously, component-major.
//! * The forward transform is unnormalized, `c(k) = Σ_j F(x_j) e^{-i k·x_j}`; the
//!   inverse carries the `1/N` factor. With this convention
//!   `‖F‖²_{L²} = (|domain|/N²) Σ_k |c(k)|²`.
//! * The Nyquist wavenumber `n/2` is treated as `+n/2`. Odd-order derivatives zero it,
//!   the second derivative multiplies it by `-(n/2)²`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Which periodic domain a grid (or a norm) refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// Ω = (0,2π)², the spatial torus.
    Omega,
    /// Υ = Ω × (0,2π), space and orientation angle.
    Upsilon,
}

impl Domain {
    pub fn dims(self) -> usize {
        match self {
            Domain::Omega => 2,
            Domain::Upsilon => 3,
        }
    }

    pub fn volume(self) -> f64 {
        TWO_PI.powi(self.dims() as i32)
    }
}

/// Uniform periodic grid. For Ω grids the θ extent is stored as 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    shape: [usize; 3],
    dims: usize,
}

impl fmt::Display for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dims {
            2 => write!(f, "Ω[{}x{}]", self.shape[0], self.shape[1]),
            _ => write!(
                f,
                "Υ[{}x{}x{}]",
                self.shape[0], self.shape[1], self.shape[2]
            ),
        }
    }
}

fn check_axis_size(n: usize, name: &str) -> Result<()> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Grid(format!(
            "{name} = {n}: axis sizes must be even and at least 4"
        )));
    }
    Ok(())
}

impl TorusGrid {
    pub fn omega(nx: usize, ny: usize) -> Result<Self> {
        check_axis_size(nx, "nx")?;
        check_axis_size(ny, "ny")?;
        Ok(Self {
            shape: [nx, ny, 1],
            dims: 2,
        })
    }

    pub fn upsilon(nx: usize, ny: usize, ntheta: usize) -> Result<Self> {
        check_axis_size(nx, "nx")?;
        check_axis_size(ny, "ny")?;
        check_axis_size(ntheta, "ntheta")?;
        Ok(Self {
            shape: [nx, ny, ntheta],
            dims: 3,
        })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::upsilon(n, n, n)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn domain(&self) -> Domain {
        if self.dims == 2 {
            Domain::Omega
        } else {
            Domain::Upsilon
        }
    }

    /// `[nx, ny, nθ]`, with `nθ = 1` on Ω.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn nx(&self) -> usize {
        self.shape[0]
    }

    pub fn ny(&self) -> usize {
        self.shape[1]
    }

    pub fn ntheta(&self) -> usize {
        self.shape[2]
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        TWO_PI / self.shape[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dims)
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dims).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        self.domain().volume()
    }

    /// The spatial grid Ω underlying this grid.
    pub fn planar(&self) -> TorusGrid {
        TorusGrid {
            shape: [self.shape[0], self.shape[1], 1],
            dims: 2,
        }
    }

    /// Lift a spatial grid to Υ with `ntheta` angle points.
    pub fn with_theta(&self, ntheta: usize) -> Result<TorusGrid> {
        TorusGrid::upsilon(self.shape[0], self.shape[1], ntheta)
    }

    pub fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dims {
            return Err(Error::Axis {
                axis,
                dims: self.dims,
            });
        }
        Ok(())
    }

    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        ix + self.shape[0] * (iy + self.shape[1] * it)
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let ix = idx % self.shape[0];
        let rest = idx / self.shape[0];
        [ix, rest % self.shape[1], rest / self.shape[1]]
    }

    /// Coordinates of a flat index (θ = 0 on Ω).
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let [ix, iy, it] = self.unravel(idx);
        [
            ix as f64 * self.spacing(0),
            iy as f64 * self.spacing(1),
            if self.dims == 3 {
                it as f64 * self.spacing(2)
            } else {
                0.0
            },
        ]
    }

    /// Signed wavenumber of DFT index `i` along `axis` (Nyquist reported as `+n/2`).
    pub fn wavenumber(&self, axis: usize, i: usize) -> i64 {
        let n = self.shape[axis];
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    pub fn is_nyquist(&self, axis: usize, i: usize) -> bool {
        i == self.shape[axis] / 2
    }

    /// Largest `k` kept by the 2/3 rule: `3k < n`, so quadratic aliases land outside the band.
    pub fn dealias_cutoff(&self, axis: usize) -> usize {
        (self.shape[axis] - 1) / 3
    }

    /// `|k|²` summed over all axes of the grid for a flat spectral index.
    pub fn wavenumber_sq(&self, idx: usize) -> f64 {
        let ijk = self.unravel(idx);
        (0..self.dims)
            .map(|a| {
                let k = self.wavenumber(a, ijk[a]) as f64;
                k * k
            })
            .sum()
    }
}

/// Tensor rank of a field over the two spatial directions; `2^order` components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rank(usize);

impl Rank {
    pub const SCALAR: Rank = Rank(0);
    pub const VECTOR: Rank = Rank(1);
    pub const MATRIX: Rank = Rank(2);

    pub fn tensor(order: usize) -> Rank {
        Rank(order)
    }

    pub fn order(self) -> usize {
        self.0
    }

    pub fn components(self) -> usize {
        1 << self.0
    }
}

/// Sampled values of a (possibly tensor-valued) periodic function.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    grid: TorusGrid,
    rank: Rank,
    values: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: TorusGrid, rank: Rank) -> Self {
        Self {
            grid,
            rank,
            values: vec![0.0; grid.len() * rank.components()],
        }
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            rank: Rank::SCALAR,
            values: vec![value; grid.len()],
        }
    }

    /// Scalar field from a function of `(x, y, θ)`.
    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self {
            grid,
            rank: Rank::SCALAR,
            values,
        }
    }

    pub fn from_values(grid: TorusGrid, rank: Rank, values: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * rank.components();
        if values.len() != expected {
            return Err(Error::Rank(format!(
                "expected {expected} values for {grid} with {} components, got {}",
                rank.components(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "field values",
                index,
            });
        }
        Ok(Self { grid, rank, values })
    }

    /// Stack scalar fields into one multi-component field.
    pub fn from_components(rank: Rank, parts: Vec<RealField>) -> Result<Self> {
        if parts.len() != rank.components() {
            return Err(Error::Rank(format!(
                "{} components supplied for rank {}",
                parts.len(),
                rank.order()
            )));
        }
        let grid = parts[0].grid;
        let mut values = Vec::with_capacity(grid.len() * parts.len());
        for p in &parts {
            if p.grid != grid {
                return Err(Error::GridMismatch(grid, p.grid));
            }
            if p.rank != Rank::SCALAR {
                return Err(Error::Rank("components must be scalar fields".into()));
            }
            values.extend_from_slice(&p.values);
        }
        Ok(Self { grid, rank, values })
    }

    pub(crate) fn from_raw(grid: TorusGrid, rank: Rank, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len() * rank.components());
        Self { grid, rank, values }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component_slice(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn component(&self, c: usize) -> RealField {
        RealField::from_raw(self.grid, Rank::SCALAR, self.component_slice(c).to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        RealField::from_raw(self.grid, self.rank, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &RealField, f: impl Fn(f64, f64) -> f64) -> Result<RealField> {
        self.check_same(other)?;
        Ok(RealField::from_raw(
            self.grid,
            self.rank,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &RealField) -> Result<RealField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &RealField) -> Result<RealField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> RealField {
        self.map(|v| v * s)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Grid quadrature of a scalar field (rectangle rule).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Broadcast a field on Ω to Υ (constant in θ).
    pub fn lift(&self, target: TorusGrid) -> Result<RealField> {
        if self.grid.dims() != 2 || target.dims() != 3 || target.planar() != self.grid {
            return Err(Error::GridMismatch(self.grid, target));
        }
        let n2 = self.grid.len();
        let nt = target.ntheta();
        let mut values = Vec::with_capacity(target.len() * self.rank.components());
        for c in 0..self.rank.components() {
            let comp = &self.values[c * n2..(c + 1) * n2];
            for _ in 0..nt {
                values.extend_from_slice(comp);
            }
        }
        Ok(RealField::from_raw(target, self.rank, values))
    }

    pub(crate) fn check_same(&self, other: &RealField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(self.grid, other.grid));
        }
        if self.rank != other.rank {
            return Err(Error::Rank(format!(
                "rank {} vs rank {}",
                self.rank.order(),
                other.rank.order()
            )));
        }
        Ok(())
    }
}

/// Fourier coefficients of a field, same layout as [`RealField`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: TorusGrid,
    rank: Rank,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: TorusGrid, rank: Rank) -> Self {
        Self {
            grid,
            rank,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len() * rank.components()],
        }
    }

    pub(crate) fn from_raw(grid: TorusGrid, rank: Rank, coeffs: Vec<Complex64>) -> Self {
        debug_assert_eq!(coeffs.len(), grid.len() * rank.components());
        Self {
            grid,
            rank,
            coeffs,
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient at signed wavenumber `k` (axes beyond the grid's dims ignored).
    pub fn at(&self, component: usize, k: [i64; 3]) -> Complex64 {
        let s = self.grid.shape();
        let wrap = |k: i64, n: usize| k.rem_euclid(n as i64) as usize;
        let idx = self.grid.index(
            wrap(k[0], s[0]),
            wrap(k[1], s[1]),
            if self.grid.dims() == 3 { wrap(k[2], s[2]) } else { 0 },
        );
        self.coeffs[component * self.grid.len() + idx]
    }

    /// Multiply by `(ik)^order` along `axis`.
    pub fn derivative(&self, axis: usize, order: usize) -> Result<SpectralField> {
        self.grid.check_axis(axis)?;
        let mult = derivative_multipliers(self.grid, axis, order)?;
        let n = self.grid.len();
        let shape = self.grid.shape();
        let stride = match axis {
            0 => 1,
            1 => shape[0],
            _ => shape[0] * shape[1],
        };
        let mut out = self.coeffs.clone();
        for (i, c) in out.iter_mut().enumerate() {
            let local = i % n;
            let along = (local / stride) % shape[axis];
            *c *= mult[along];
        }
        Ok(SpectralField::from_raw(self.grid, self.rank, out))
    }

    /// Full Laplacian over every axis of the grid.
    pub fn laplacian(&self) -> SpectralField {
        let n = self.grid.len();
        let mut out = self.coeffs.clone();
        for (i, c) in out.iter_mut().enumerate() {
            *c *= -self.grid.wavenumber_sq(i % n);
        }
        SpectralField::from_raw(self.grid, self.rank, out)
    }

    /// 2/3-rule truncation: zero every mode with `|k_a| > dealias_cutoff(a)` on some axis.
    pub fn dealias(&self) -> SpectralField {
        let mut out = self.clone();
        out.dealias_in_place();
        out
    }

    pub fn dealias_in_place(&mut self) {
        let grid = self.grid;
        let n = grid.len();
        let mask = dealias_mask(grid);
        for (i, c) in self.coeffs.iter_mut().enumerate() {
            if !mask[i % n] {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Fraction of spectral energy outside the 2/3 band.
    pub fn out_of_band_fraction(&self) -> f64 {
        let n = self.grid.len();
        let mask = dealias_mask(self.grid);
        let (mut inside, mut outside) = (0.0, 0.0);
        for (i, c) in self.coeffs.iter().enumerate() {
            if mask[i % n] {
                inside += c.norm_sqr();
            } else {
                outside += c.norm_sqr();
            }
        }
        let total = inside + outside;
        if total == 0.0 {
            0.0
        } else {
            outside / total
        }
    }

    /// L² norm computed from the coefficients (Parseval).
    pub fn l2_norm(&self) -> f64 {
        let n = self.grid.len() as f64;
        let sum: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        (self.grid.volume() * sum).sqrt() / n
    }

    pub fn scale(&self, s: f64) -> SpectralField {
        SpectralField::from_raw(
            self.grid,
            self.rank,
            self.coeffs.iter().map(|c| c * s).collect(),
        )
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(self.grid, other.grid));
        }
        if self.rank != other.rank {
            return Err(Error::Rank("spectral add with different ranks".into()));
        }
        Ok(SpectralField::from_raw(
            self.grid,
            self.rank,
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }
}

pub(crate) fn dealias_mask(grid: TorusGrid) -> Vec<bool> {
    let cut: Vec<i64> = (0..3)
        .map(|a| {
            if a < grid.dims() {
                grid.dealias_cutoff(a) as i64
            } else {
                0
            }
        })
        .collect();
    (0..grid.len())
        .map(|i| {
            let ijk = grid.unravel(i);
            (0..grid.dims()).all(|a| grid.wavenumber(a, ijk[a]).abs() <= cut[a])
        })
        .collect()
}

fn derivative_multipliers(grid: TorusGrid, axis: usize, order: usize) -> Result<Vec<Complex64>> {
    let n = grid.shape()[axis];
    (0..n)
        .map(|i| {
            let k = grid.wavenumber(axis, i) as f64;
            match order {
                1 if grid.is_nyquist(axis, i) => Ok(Complex64::new(0.0, 0.0)),
                1 => Ok(Complex64::new(0.0, k)),
                2 => Ok(Complex64::new(-k * k, 0.0)),
                o => Err(Error::DerivativeOrder(o)),
            }
        })
        .collect()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// In-place unnormalized FFT over every axis of one component.
fn fft_component(grid: TorusGrid, data: &mut [Complex64], inverse: bool) {
    let [n0, n1, n2] = grid.shape();
    let fft0 = plan(n0, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft0.get_inplace_scratch_len()];
    fft0.process_with_scratch(data, &mut scratch);

    let mut line = Vec::new();
    let mut strided = |len: usize, stride: usize, outer: &mut dyn Iterator<Item = usize>| {
        let fft = plan(len, inverse);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        line.resize(len, Complex64::new(0.0, 0.0));
        for base in outer {
            for (j, l) in line.iter_mut().enumerate() {
                *l = data[base + j * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (j, l) in line.iter().enumerate() {
                data[base + j * stride] = *l;
            }
        }
    };
    strided(
        n1,
        n0,
        &mut (0..n2).flat_map(|iz| (0..n0).map(move |ix| ix + n0 * n1 * iz)),
    );
    if grid.dims() == 3 {
        strided(n2, n0 * n1, &mut (0..n0 * n1));
    }
}

pub(crate) fn forward_raw(grid: TorusGrid, values: &[f64], components: usize) -> Vec<Complex64> {
    let n = grid.len();
    let mut coeffs: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for c in 0..components {
        fft_component(grid, &mut coeffs[c * n..(c + 1) * n], false);
    }
    coeffs
}

pub(crate) fn inverse_raw(grid: TorusGrid, coeffs: &[Complex64], components: usize) -> Vec<f64> {
    let n = grid.len();
    let mut work = coeffs.to_vec();
    for c in 0..components {
        fft_component(grid, &mut work[c * n..(c + 1) * n], true);
    }
    let inv = 1.0 / n as f64;
    work.iter().map(|c| c.re * inv).collect()
}

/// Forward transform; rejects non-finite input.
pub fn transform(field: &RealField) -> Result<SpectralField> {
    if let Some(index) = field.first_non_finite() {
        return Err(Error::NonFinite {
            what: "transform input",
            index,
        });
    }
    Ok(transform_unchecked(field))
}

pub(crate) fn transform_unchecked(field: &RealField) -> SpectralField {
    SpectralField::from_raw(
        field.grid,
        field.rank,
        forward_raw(field.grid, &field.values, field.rank.components()),
    )
}

/// Inverse transform (real part; the imaginary part is roundoff for real fields).
pub fn inverse(field: &SpectralField) -> RealField {
    RealField::from_raw(
        field.grid,
        field.rank,
        inverse_raw(field.grid, &field.coeffs, field.rank.components()),
    )
}

/// Spectral derivative of order 1 or 2 along `axis`.
pub fn derivative(field: &RealField, axis: usize, order: usize) -> Result<RealField> {
    field.grid.check_axis(axis)?;
    if order != 1 && order != 2 {
        return Err(Error::DerivativeOrder(order));
    }
    Ok(inverse(&transform(field)?.derivative(axis, order)?))
}

/// Spatial gradient (x and y) of a scalar field as a vector field.
pub fn gradient(field: &RealField) -> Result<RealField> {
    if field.rank != Rank::SCALAR {
        return Err(Error::Rank("gradient of a non-scalar field".into()));
    }
    let hat = transform(field)?;
    let dx = inverse(&hat.derivative(0, 1)?);
    let dy = inverse(&hat.derivative(1, 1)?);
    RealField::from_components(Rank::VECTOR, vec![dx, dy])
}

/// Laplacian over every axis of the field's grid.
pub fn laplacian(field: &RealField) -> Result<RealField> {
    Ok(inverse(&transform(field)?.laplacian()))
}

/// Apply the 2/3 rule to a field.
pub fn dealias(field: &RealField) -> Result<RealField> {
    Ok(inverse(&transform(field)?.dealias()))
}

/// Pointwise product with 2/3-rule truncation of both factors and of the result.
///
/// `a` is scalar or has the same rank as `b`; a scalar `a` multiplies every component of `b`.
pub fn dealiased_product(a: &RealField, b: &RealField) -> Result<RealField> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch(a.grid, b.grid));
    }
    if a.rank != Rank::SCALAR && a.rank != b.rank {
        return Err(Error::Rank(
            "dealiased product needs a scalar factor or matching ranks".into(),
        ));
    }
    let af = dealias(a)?;
    let bf = dealias(b)?;
    let n = a.grid.len();
    let values = bf
        .values
        .iter()
        .enumerate()
        .map(|(i, &bv)| {
            let ai = if a.rank == Rank::SCALAR { i % n } else { i };
            af.values[ai] * bv
        })
        .collect();
    dealias(&RealField::from_raw(a.grid, b.rank, values))
}

/// `Lᑫ` norm over Ω or Υ by the rectangle rule; `q = ∞` gives the max norm.
///
/// Multi-component fields use the pointwise Euclidean (Frobenius) magnitude. A field on Ω
/// measured over Υ is treated as constant in θ.
pub fn lq_norm(field: &RealField, q: f64, domain: Domain) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::Exponent(q));
    }
    let grid = field.grid;
    if domain.dims() < grid.dims() {
        return Err(Error::Grid(format!(
            "cannot measure a field on {grid} over {domain:?}"
        )));
    }
    let n = grid.len();
    let comps = field.rank.components();
    let magnitude = |i: usize| -> f64 {
        if comps == 1 {
            field.values[i].abs()
        } else {
            (0..comps)
                .map(|c| field.values[c * n + i].powi(2))
                .sum::<f64>()
                .sqrt()
        }
    };
    if q.is_infinite() {
        return Ok((0..n).map(magnitude).fold(0.0, f64::max));
    }
    let extra = if domain.dims() > grid.dims() { TWO_PI } else { 1.0 };
    let sum: f64 = if q == 2.0 {
        (0..n).map(|i| magnitude(i).powi(2)).sum()
    } else {
        (0..n).map(|i| magnitude(i).powf(q)).sum()
    };
    Ok((sum * grid.cell_volume() * extra).powf(1.0 / q))
}

/// Mixed space-time norm `(∫ ‖F(t)‖^r dt)^{1/r}` from samples `(t, ‖F(t)‖)` by the trapezoid
/// rule; `r = ∞` returns the maximum.
pub fn lq_time_norm(samples: &[(f64, f64)], r: f64) -> Result<f64> {
    if r.is_nan() || r < 1.0 {
        return Err(Error::Exponent(r));
    }
    if samples.is_empty() {
        return Err(Error::Samples("no samples for a time norm".into()));
    }
    if r.is_infinite() {
        return Ok(samples.iter().fold(0.0, |m, s| m.max(s.1.abs())));
    }
    let integral = trapezoid(samples.iter().map(|&(t, v)| (t, v.abs().powf(r))));
    Ok(integral.powf(1.0 / r))
}

/// Trapezoid rule over (t, value) pairs in increasing t.
pub fn trapezoid(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut it = points.into_iter();
    let Some((mut t0, mut v0)) = it.next() else {
        return 0.0;
    };
    let mut acc = 0.0;
    for (t1, v1) in it {
        acc += 0.5 * (t1 - t0) * (v0 + v1);
        t0 = t1;
        v0 = v1;
    }
    acc
}

/// `∫ a·b` over the grid (componentwise sum for tensor fields).
pub fn inner_product(a: &RealField, b: &RealField) -> Result<f64> {
    a.check_same(b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>() * a.grid.cell_volume())
}

/// Spectral interpolation onto another grid of the same dimension: shared modes are copied,
/// the rest zero-padded or dropped. Nyquist modes are discarded.
pub fn resample(field: &RealField, target: TorusGrid) -> Result<RealField> {
    let src = field.grid;
    if src.dims() != target.dims() {
        return Err(Error::GridMismatch(src, target));
    }
    let hat = transform(field)?;
    let comps = field.rank.components();
    let (ns, nt) = (src.len(), target.len());
    let mut out = vec![Complex64::new(0.0, 0.0); nt * comps];
    let scale = nt as f64 / ns as f64;
    for i in 0..ns {
        let ijk = src.unravel(i);
        let mut tgt = [0usize; 3];
        let mut keep = true;
        for a in 0..src.dims() {
            let k = src.wavenumber(a, ijk[a]);
            let n = target.shape()[a] as i64;
            if src.is_nyquist(a, ijk[a]) || 2 * k.abs() >= n {
                keep = false;
                break;
            }
            tgt[a] = k.rem_euclid(n) as usize;
        }
        if !keep {
            continue;
        }
        let j = target.index(tgt[0], tgt[1], tgt[2]);
        for c in 0..comps {
            out[c * nt + j] = hat.coeffs[c * ns + i] * scale;
        }
    }
    Ok(inverse(&SpectralField::from_raw(target, field.rank, out)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn omega16() -> TorusGrid {
        TorusGrid::omega(16, 16).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::omega(3, 8).is_err());
        assert!(TorusGrid::omega(2, 8).is_err());
        assert!(TorusGrid::upsilon(8, 8, 7).is_err());
        let g = TorusGrid::upsilon(8, 6, 4).unwrap();
        assert_eq!(g.len(), 8 * 6 * 4);
        assert_eq!(g.dealias_cutoff(0), 2);
        assert_eq!(TorusGrid::cube(32).unwrap().dealias_cutoff(2), 10);
    }

    #[test]
    fn constant_has_only_mean_mode() {
        let g = omega16();
        let hat = transform(&RealField::constant(g, 3.0)).unwrap();
        assert!((hat.at(0, [0, 0, 0]).re - 3.0 * g.len() as f64).abs() < 1e-10);
        let rest: f64 = hat.coeffs()[1..].iter().map(|c| c.norm()).sum();
        assert!(rest < 1e-10);
    }

    #[test]
    fn cosine_occupies_unit_modes() {
        let g = omega16();
        let hat = transform(&RealField::from_fn(g, |x| x[0].cos())).unwrap();
        let half = g.len() as f64 / 2.0;
        assert!((hat.at(0, [1, 0, 0]).re - half).abs() < 1e-10);
        assert!((hat.at(0, [-1, 0, 0]).re - half).abs() < 1e-10);
        let total: f64 = hat.coeffs().iter().map(|c| c.norm()).sum();
        assert!((total - 2.0 * half).abs() < 1e-9);
    }

    #[test]
    fn non_finite_rejected() {
        let g = omega16();
        let mut v = vec![0.0; g.len()];
        v[5] = f64::NAN;
        assert!(RealField::from_values(g, Rank::SCALAR, v).is_err());
        let bad = RealField::from_raw(g, Rank::SCALAR, {
            let mut v = vec![0.0; g.len()];
            v[3] = f64::INFINITY;
            v
        });
        assert!(matches!(transform(&bad), Err(Error::NonFinite { index: 3, .. })));
    }

    #[test]
    fn derivatives() {
        let g = TorusGrid::upsilon(8, 8, 16).unwrap();
        let c = RealField::constant(g, 2.5);
        for axis in 0..3 {
            assert!(derivative(&c, axis, 1).unwrap().max_abs() < 1e-12);
        }
        let f = RealField::from_fn(g, |x| x[2].cos());
        let d2 = derivative(&f, 2, 2).unwrap();
        assert!(d2.add(&f).unwrap().max_abs() < 1e-12);
        assert!(matches!(derivative(&f, 3, 1), Err(Error::Axis { .. })));
        assert!(matches!(derivative(&f, 0, 3), Err(Error::DerivativeOrder(3))));

        let g2 = omega16();
        let h = RealField::from_fn(g2, |x| x[0].cos() * x[1].cos());
        let lap = laplacian(&h).unwrap();
        let expect = h.scale(-2.0);
        assert!(lap.sub(&expect).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn dealiased_products() {
        let g = TorusGrid::omega(16, 16).unwrap();
        let one = RealField::constant(g, 1.0);
        let b = RealField::from_fn(g, |x| (2.0 * x[0]).sin() + (3.0 * x[1]).cos());
        let p = dealiased_product(&one, &b).unwrap();
        assert!(p.sub(&b).unwrap().max_abs() < 1e-13);

        let c = RealField::from_fn(g, |x| x[0].cos());
        let sq = dealiased_product(&c, &c).unwrap();
        let expect = RealField::from_fn(g, |x| 0.5 + 0.5 * (2.0 * x[0]).cos());
        assert!(sq.sub(&expect).unwrap().max_abs() < 1e-13);

        let other = TorusGrid::omega(8, 8).unwrap();
        assert!(matches!(
            dealiased_product(&c, &RealField::constant(other, 1.0)),
            Err(Error::GridMismatch(..))
        ));
    }

    #[test]
    fn norms() {
        let g = omega16();
        let one = RealField::constant(g, 1.0);
        assert!((lq_norm(&one, 2.0, Domain::Omega).unwrap() - TWO_PI).abs() < 1e-12);
        let c = RealField::from_fn(g, |x| x[0].cos());
        let l2 = lq_norm(&c, 2.0, Domain::Omega).unwrap();
        assert!((l2 - PI * 2f64.sqrt()).abs() < 1e-12);
        let mut spike = vec![0.0; g.len()];
        spike[17] = -4.5;
        let s = RealField::from_values(g, Rank::SCALAR, spike).unwrap();
        assert_eq!(lq_norm(&s, f64::INFINITY, Domain::Omega).unwrap(), 4.5);
        assert!(matches!(lq_norm(&s, 0.5, Domain::Omega), Err(Error::Exponent(_))));
        // Ω field over Υ picks up the angle length.
        let up = lq_norm(&one, 1.0, Domain::Upsilon).unwrap();
        assert!((up - TWO_PI.powi(3)).abs() < 1e-9);
        let u3 = RealField::constant(TorusGrid::cube(8).unwrap(), 1.0);
        assert!(lq_norm(&u3, 2.0, Domain::Omega).is_err());
    }

    #[test]
    fn time_norms() {
        let samples: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64 * 0.01, 2.0)).collect();
        assert!((lq_time_norm(&samples, 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(lq_time_norm(&samples, f64::INFINITY).unwrap(), 2.0);
        assert!(lq_time_norm(&[], 2.0).is_err());
    }

    #[test]
    fn resample_preserves_band_limited() {
        let f = |x: [f64; 3]| (x[0] + 0.3).cos() * (2.0 * x[1]).sin() + 0.2;
        let g8 = TorusGrid::omega(8, 8).unwrap();
        let g16 = omega16();
        let up = resample(&RealField::from_fn(g8, f), g16).unwrap();
        assert!(up.sub(&RealField::from_fn(g16, f)).unwrap().max_abs() < 1e-13);
        let down = resample(&up, g8).unwrap();
        assert!(down.sub(&RealField::from_fn(g8, f)).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn lift_broadcasts() {
        let g = omega16();
        let r = RealField::from_fn(g, |x| x[0].sin());
        let up = TorusGrid::upsilon(16, 16, 8).unwrap();
        let l = r.lift(up).unwrap();
        for it in 0..8 {
            assert_eq!(l.values()[up.index(3, 4, it)], r.values()[g.index(3, 4, 0)]);
        }
    }
}
