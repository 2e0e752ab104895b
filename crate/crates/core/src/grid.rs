//! Uniform periodic grid on the flat torus `[0, extent)^d` with Fourier
//! differentiation, quadrature and Sobolev norms.
//!
//! Layout is row-major: axis 0 varies slowest, axis `d-1` is contiguous.
//!
//! Transform convention: the forward transform is unnormalized,
//! `F[k] = sum_x f[x] exp(-i k.x)`, and the inverse divides by `N^d`.
//!
//! All differential symbols use the wavenumber `k = 2 pi m / extent` with
//! `m` in `[-N/2, N/2)`, except that the Nyquist mode `m = -N/2` is given
//! derivative wavenumber zero on every axis. This keeps spectral derivatives
//! of real fields real, makes `divergence(gradient(f)) == laplacian(f)` hold
//! exactly and keeps the discrete gradient anti-adjoint.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

struct Tables {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Derivative wavenumber per flat mode index and axis, `len * d`.
    kvec: Vec<f64>,
    /// `|k|^2` of the derivative wavenumbers per flat mode index.
    ksq: Vec<f64>,
    /// 2/3-rule mask, present when dealiasing is enabled.
    mask: Option<Vec<f64>>,
}

/// Uniform periodic discretization of the d-torus.
#[derive(Clone)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    extent: f64,
    tables: Arc<Tables>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("extent", &self.extent)
            .field("dealias", &self.tables.mask.is_some())
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.tables, &other.tables)
            || (self.dim == other.dim
                && self.n == other.n
                && self.extent.to_bits() == other.extent.to_bits()
                && self.tables.mask.is_some() == other.tables.mask.is_some())
    }
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize, extent: f64) -> Result<Self> {
        Self::with_dealiasing(dim, n, extent, false)
    }

    /// Grid whose differential operators truncate modes with `|m| > N/3`.
    pub fn with_dealiasing(dim: usize, n: usize, extent: f64, dealias: bool) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and >= 4, got {n}"
            )));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidGrid(format!("extent must be positive, got {extent}")));
        }
        let len = n.pow(dim as u32);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);

        let axis_k: Vec<f64> = (0..n)
            .map(|m| {
                let mm = mode_number(m, n);
                if mm == -(n as i64) / 2 {
                    0.0
                } else {
                    2.0 * PI * mm as f64 / extent
                }
            })
            .collect();
        let mut kvec = vec![0.0; len * dim];
        let mut ksq = vec![0.0; len];
        let mut mask = dealias.then(|| vec![1.0; len]);
        let cutoff = n as i64 / 3;
        for idx in 0..len {
            let mut rest = idx;
            let mut sq = 0.0;
            for axis in (0..dim).rev() {
                let m = rest % n;
                rest /= n;
                let k = axis_k[m];
                kvec[idx * dim + axis] = k;
                sq += k * k;
                if let Some(mask) = mask.as_mut() {
                    if mode_number(m, n).abs() > cutoff {
                        mask[idx] = 0.0;
                    }
                }
            }
            ksq[idx] = sq;
        }
        Ok(Self {
            dim,
            n,
            extent,
            tables: Arc::new(Tables {
                forward,
                inverse,
                kvec,
                ksq,
                mask,
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.n as f64
    }

    /// Total number of cells, `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Torus volume, `extent^d`.
    pub fn volume(&self) -> f64 {
        self.extent.powi(self.dim as i32)
    }

    pub fn dealiased(&self) -> bool {
        self.tables.mask.is_some()
    }

    /// Per-axis integer indices of a flat index.
    pub fn indices(&self, flat: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    /// Physical coordinates of a grid point.
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let idx = self.indices(flat);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = idx[axis] as f64 * h;
        }
        x
    }

    /// Signed mode numbers `m` in `[-N/2, N/2)` of a flat spectral index.
    pub fn mode(&self, flat: usize) -> [i64; 3] {
        let idx = self.indices(flat);
        let mut m = [0; 3];
        for axis in 0..self.dim {
            m[axis] = mode_number(idx[axis], self.n);
        }
        m
    }

    /// Derivative wavenumber of spectral index `flat` along `axis`.
    pub fn k(&self, flat: usize, axis: usize) -> f64 {
        self.tables.kvec[flat * self.dim + axis]
    }

    /// `|k|^2` per spectral index (derivative wavenumbers).
    pub fn k_squared(&self) -> &[f64] {
        &self.tables.ksq
    }

    /// `|k|^2` as seen by the (possibly dealiased) gradient, i.e. the symbol
    /// of `-div grad`.
    pub fn operator_k_squared(&self) -> Vec<f64> {
        (0..self.len())
            .map(|idx| self.tables.ksq[idx] * self.masked(idx))
            .collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Unnormalized forward transform of real samples.
    pub fn forward_raw(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.len());
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, true);
        buf
    }

    /// Forward transforms of two real fields with a single complex transform.
    pub fn forward_pair(&self, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let len = self.len();
        let mut buf: Vec<Complex64> = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| Complex64::new(x, y))
            .collect();
        self.transform(&mut buf, true);
        let mut fa = vec![Complex64::new(0.0, 0.0); len];
        let mut fb = vec![Complex64::new(0.0, 0.0); len];
        for idx in 0..len {
            let z = buf[idx];
            let zc = buf[self.negate_index(idx)].conj();
            fa[idx] = (z + zc) * 0.5;
            fb[idx] = (z - zc) * Complex64::new(0.0, -0.5);
        }
        (fa, fb)
    }

    /// Inverse transform (divides by `N^d`), returning the real part.
    pub fn inverse_raw(&self, mut coeffs: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.len());
        self.transform(&mut coeffs, false);
        let scale = 1.0 / self.len() as f64;
        coeffs.into_iter().map(|c| c.re * scale).collect()
    }

    /// Inverse transforms of two Hermitian spectra with one complex transform.
    pub fn inverse_pair(&self, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::new(0.0, 1.0);
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| x + i * y).collect();
        self.transform(&mut buf, false);
        let scale = 1.0 / self.len() as f64;
        buf.into_iter().map(|c| (c.re * scale, c.im * scale)).unzip()
    }

    /// Forward transforms of a batch of real fields.
    pub fn forward_many(&self, fields: &[&[f64]]) -> Vec<Vec<Complex64>> {
        let mut out = Vec::with_capacity(fields.len());
        let mut chunks = fields.chunks_exact(2);
        for pair in &mut chunks {
            let (a, b) = self.forward_pair(pair[0], pair[1]);
            out.push(a);
            out.push(b);
        }
        if let [last] = chunks.remainder() {
            out.push(self.forward_raw(last));
        }
        out
    }

    /// Inverse transforms of a batch of Hermitian spectra.
    pub fn inverse_many(&self, spectra: Vec<Vec<Complex64>>) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(spectra.len());
        let mut it = spectra.into_iter();
        loop {
            match (it.next(), it.next()) {
                (Some(a), Some(b)) => {
                    let (ra, rb) = self.inverse_pair(&a, &b);
                    out.push(ra);
                    out.push(rb);
                }
                (Some(a), None) => {
                    out.push(self.inverse_raw(a));
                    break;
                }
                _ => break,
            }
        }
        out
    }

    /// Flat index of the mode `-m`.
    fn negate_index(&self, flat: usize) -> usize {
        let idx = self.indices(flat);
        let mut out = 0;
        for axis in 0..self.dim {
            out = out * self.n + (self.n - idx[axis]) % self.n;
        }
        out
    }

    fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let plan = if forward {
            &self.tables.forward
        } else {
            &self.tables.inverse
        };
        let n = self.n;
        let len = buf.len();
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // contiguous last axis: rustfft processes consecutive chunks of length n
        plan.process_with_scratch(buf, &mut scratch);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.dim.saturating_sub(1) {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = stride * n;
            for start in (0..len).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = buf[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        buf[base + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// Applies a real, even Fourier multiplier to a real field.
    pub fn apply_multiplier(&self, values: &[f64], symbol: &[f64]) -> Vec<f64> {
        let mut spectrum = self.forward_raw(values);
        for (c, s) in spectrum.iter_mut().zip(symbol) {
            *c *= *s;
        }
        self.inverse_raw(spectrum)
    }

    fn masked(&self, idx: usize) -> f64 {
        self.tables.mask.as_ref().map_or(1.0, |m| m[idx])
    }

    /// `i k_axis` applied to a spectrum (dealias mask included).
    pub fn derivative_spectrum(&self, spectrum: &[Complex64], axis: usize) -> Vec<Complex64> {
        spectrum.iter()
            .enumerate()
            .map(|(idx, c)| Complex64::new(-c.im, c.re) * (self.k(idx, axis) * self.masked(idx)))
            .collect()
    }

    /// Spectral gradient of raw samples.
    pub fn gradient_raw(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let spectrum = self.forward_raw(values);
        let parts: Vec<_> = (0..self.dim)
            .map(|axis| self.derivative_spectrum(&spectrum, axis))
            .collect();
        self.inverse_many(parts)
    }

    /// Spectral divergence of raw vector components.
    pub fn divergence_raw(&self, components: &[&[f64]]) -> Vec<f64> {
        let spectra = self.forward_many(components);
        let mut acc = vec![Complex64::new(0.0, 0.0); self.len()];
        for (axis, spectrum) in spectra.iter().enumerate() {
            for (idx, (a, c)) in acc.iter_mut().zip(spectrum).enumerate() {
                *a += Complex64::new(-c.im, c.re) * (self.k(idx, axis) * self.masked(idx));
            }
        }
        self.inverse_raw(acc)
    }

    /// Spectral Laplacian of raw samples.
    pub fn laplacian_raw(&self, values: &[f64]) -> Vec<f64> {
        let mut spectrum = self.forward_raw(values);
        for (idx, c) in spectrum.iter_mut().enumerate() {
            *c *= -self.tables.ksq[idx] * self.masked(idx);
        }
        self.inverse_raw(spectrum)
    }

    /// `h^d sum f`.
    pub fn integrate_raw(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_volume()
    }

    /// `h^d sum f g`.
    pub fn inner_raw(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * self.cell_volume()
    }

    /// Squared Sobolev norm with multiplier `sum_{j<=order} |k|^{2j}`.
    pub fn sobolev_sq_raw(&self, values: &[f64], order: usize) -> f64 {
        let spectrum = self.forward_raw(values);
        let sum: f64 = spectrum
            .iter()
            .zip(&self.tables.ksq)
            .map(|(c, &k2)| {
                let mut weight = 1.0;
                let mut pow = 1.0;
                for _ in 0..order {
                    pow *= k2;
                    weight += pow;
                }
                weight * c.norm_sqr()
            })
            .sum();
        sum * self.cell_volume() / self.len() as f64
    }

    /// The `H^2` multiplier `1 + |k|^2 + |k|^4` per spectral index.
    pub fn h2_symbol(&self) -> Vec<f64> {
        self.tables.ksq.iter().map(|&k2| 1.0 + k2 + k2 * k2).collect()
    }
}

fn mode_number(m: usize, n: usize) -> i64 {
    if m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// A real field sampled on a grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl ScalarField {
    pub fn new(grid: &TorusGrid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x)` at every grid point.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &ScalarField) -> Result<Self> {
        self.same_grid(other)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn forward_transform(&self) -> SpectralField {
        SpectralField {
            grid: self.grid.clone(),
            coeffs: self.grid.forward_raw(&self.values),
        }
    }

    pub fn gradient(&self) -> Vec<ScalarField> {
        self.grid
            .gradient_raw(&self.values)
            .into_iter()
            .map(|values| Self {
                grid: self.grid.clone(),
                values,
            })
            .collect()
    }

    pub fn laplacian(&self) -> ScalarField {
        Self {
            grid: self.grid.clone(),
            values: self.grid.laplacian_raw(&self.values),
        }
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate_raw(&self.values)
    }

    pub fn inner_l2(&self, other: &ScalarField) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.grid.inner_raw(&self.values, &other.values))
    }

    pub fn norm_l2(&self) -> f64 {
        self.grid.inner_raw(&self.values, &self.values).sqrt()
    }

    pub fn norm_h1(&self) -> f64 {
        self.grid.sobolev_sq_raw(&self.values, 1).sqrt()
    }

    pub fn norm_h2(&self) -> f64 {
        self.grid.sobolev_sq_raw(&self.values, 2).sqrt()
    }
}

/// Spectral divergence of a vector field given by its `d` components.
pub fn divergence(components: &[ScalarField]) -> Result<ScalarField> {
    let first = components
        .first()
        .ok_or_else(|| Error::InvalidGrid("divergence of an empty vector field".into()))?;
    let grid = first.grid();
    if components.len() != grid.dim() {
        return Err(Error::SizeMismatch {
            expected: grid.dim(),
            actual: components.len(),
        });
    }
    for c in components {
        first.same_grid(c)?;
    }
    let raw: Vec<&[f64]> = components.iter().map(|c| c.values()).collect();
    Ok(ScalarField {
        grid: grid.clone(),
        values: grid.divergence_raw(&raw),
    })
}

/// Complex Fourier coefficients of a field, in the unnormalized forward
/// convention.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: &TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        grid.check_len(coeffs.len())?;
        Ok(Self {
            grid: grid.clone(),
            coeffs,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Inverse transform; the imaginary residue of a Hermitian spectrum is dropped.
    pub fn inverse_transform(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.grid.inverse_raw(self.coeffs.clone()),
        }
    }

    /// Largest `|F[k] - conj(F[-k])|`, zero for spectra of real fields.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[i] - self.coeffs[self.grid.negate_index(i)].conj()).norm())
            .fold(0.0, f64::max)
    }
}
