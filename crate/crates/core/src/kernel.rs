//! Radial mollifier profiles, the kernels `K_eps(z) = rho_eps(|z|) / |z|^2`
//! and the nonlocal operator `B_eps(v) = (K_eps * 1) v - K_eps * v`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, SpectralField, TorusGrid};

/// Default support of the bump, in units of eps.
pub const DEFAULT_SUPPORT: (f64, f64) = (0.25, 0.75);

/// Default number of grid cells the annulus `[a eps, b eps]` must span.
pub const DEFAULT_MIN_ANNULUS_CELLS: f64 = 8.0;

const QUAD_TOL: f64 = 1e-13;

/// Target value of `int_0^inf rho(r) r^{d-1} dr`, i.e.
/// `2 / int_{S^{d-1}} |sigma . e_1| dH^{d-1}`.
pub fn sphere_factor(dim: usize) -> Result<f64> {
    match dim {
        // S^0 = {-1, 1} with counting measure
        1 => Ok(2.0 / 2.0),
        // int_0^{2 pi} |cos t| dt = 4
        2 => Ok(2.0 / 4.0),
        // int_{S^2} |cos theta| = 2 pi
        3 => Ok(2.0 / (2.0 * PI)),
        _ => Err(Error::InvalidProfile(format!("unsupported dimension {dim}"))),
    }
}

/// Surface measure of the unit sphere `S^{d-1}`.
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

/// Radial profile `rho(r) = A sigma(r)` with the C-infinity bump
/// `sigma(s) = exp(-1 / ((s - a)(b - s)))` on `(a, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelProfile {
    dim: usize,
    support: (f64, f64),
    amplitude: f64,
}

impl KernelProfile {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    fn bump(&self, s: f64) -> f64 {
        let (a, b) = self.support;
        if s <= a || s >= b {
            0.0
        } else {
            (-1.0 / ((s - a) * (b - s))).exp()
        }
    }

    /// `rho(r)`.
    pub fn rho(&self, r: f64) -> f64 {
        self.amplitude * self.bump(r)
    }

    /// `rho_eps(r) = eps^{-d} rho(r / eps)`.
    pub fn rho_eps(&self, r: f64, eps: f64) -> f64 {
        self.rho(r / eps) / eps.powi(self.dim as i32)
    }

    /// `int_0^inf rho(r) r^p dr`.
    pub fn moment(&self, p: i32) -> Result<f64> {
        let (a, b) = self.support;
        adaptive_simpson(|r| self.rho(r) * r.powi(p), a, b, QUAD_TOL)
    }

    /// `int_0^inf rho_eps(r) r^p dr`.
    pub fn scaled_moment(&self, p: i32, eps: f64) -> Result<f64> {
        let (a, b) = self.support;
        adaptive_simpson(|r| self.rho_eps(r, eps) * r.powi(p), a * eps, b * eps, QUAD_TOL)
    }

    /// Mass `int_{R^d} rho_eps(|z|) / |z|^2 dz` of the continuum kernel.
    pub fn continuum_mass(&self, eps: f64) -> Result<f64> {
        Ok(sphere_area(self.dim) * self.moment(self.dim as i32 - 3)? / (eps * eps))
    }
}

/// Builds the profile on `support = (a, b)`, choosing the amplitude so that
/// `int rho(r) r^{d-1} dr` equals [`sphere_factor`].
pub fn make_profile(dim: usize, support: (f64, f64)) -> Result<KernelProfile> {
    let target = sphere_factor(dim)?;
    let (a, b) = support;
    if !(a > 0.0 && a < b && b < 1.0) {
        return Err(Error::InvalidProfile(format!(
            "support must satisfy 0 < a < b < 1, got ({a}, {b})"
        )));
    }
    let mut profile = KernelProfile {
        dim,
        support,
        amplitude: 1.0,
    };
    let raw = profile.moment(dim as i32 - 1)?;
    if !(raw.is_finite() && raw > 0.0) {
        return Err(Error::Quadrature(format!("bump moment is {raw}")));
    }
    profile.amplitude = target / raw;
    Ok(profile)
}

/// Adaptive Simpson quadrature with absolute-or-relative tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_DEPTH: u32 = 60;
    // Seed with a coarse composite rule so the recursion sees the bump's shape.
    const PANELS: usize = 32;
    let width = (b - a) / PANELS as f64;
    let mut total = 0.0;
    let whole_scale = {
        let mut s = 0.0;
        for i in 0..=4 * PANELS {
            s += f(a + (b - a) * i as f64 / (4 * PANELS) as f64).abs();
        }
        s * (b - a) / (4 * PANELS) as f64
    };
    let abs_tol = tol * whole_scale.max(f64::MIN_POSITIVE);
    for i in 0..PANELS {
        let lo = a + width * i as f64;
        let hi = if i + 1 == PANELS { b } else { lo + width };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total += simpson_rec(&f, lo, hi, flo, fmid, fhi, whole, abs_tol / PANELS as f64, MAX_DEPTH)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive Simpson exhausted depth on [{a}, {b}] (error estimate {delta:e})"
        )));
    }
    Ok(simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// `B_eps` on one grid, stored as its (real, even) Fourier symbol.
#[derive(Clone, Debug)]
pub struct NonlocalOperator {
    grid: TorusGrid,
    eps: f64,
    profile: KernelProfile,
    samples: Vec<f64>,
    kernel_spectrum: SpectralField,
    mass: f64,
    symbol: Vec<f64>,
}

/// Kernel sampled at the minimum-image displacement of every grid point.
fn sample_kernel(grid: &TorusGrid, profile: &KernelProfile, eps: f64) -> Vec<f64> {
    let h = grid.spacing();
    let (a, b) = profile.support();
    (0..grid.len())
        .map(|idx| {
            let m = grid.mode(idx);
            let r2: f64 = (0..grid.dim()).map(|ax| (m[ax] as f64 * h).powi(2)).sum();
            let r = r2.sqrt();
            if r <= a * eps || r >= b * eps {
                0.0
            } else {
                profile.rho_eps(r, eps) / r2
            }
        })
        .collect()
}

impl NonlocalOperator {
    /// Builds `B_eps` with the default resolution guard of
    /// [`DEFAULT_MIN_ANNULUS_CELLS`] cells.
    pub fn build(grid: &TorusGrid, profile: &KernelProfile, eps: f64) -> Result<Self> {
        Self::build_with_guard(grid, profile, eps, DEFAULT_MIN_ANNULUS_CELLS)
    }

    /// Builds `B_eps`, requiring the annulus `[a eps, b eps]` to span at
    /// least `min_cells` grid spacings.
    pub fn build_with_guard(
        grid: &TorusGrid,
        profile: &KernelProfile,
        eps: f64,
        min_cells: f64,
    ) -> Result<Self> {
        if profile.dim() != grid.dim() {
            return Err(Error::InvalidProfile(format!(
                "profile built for d = {}, grid has d = {}",
                profile.dim(),
                grid.dim()
            )));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidParams(format!("eps must be positive, got {eps}")));
        }
        let limit = 0.5 * grid.extent();
        if eps >= limit {
            return Err(Error::EpsTooLarge { eps, limit });
        }
        let (a, b) = profile.support();
        let annulus = (b - a) * eps;
        let cells = annulus / grid.spacing();
        if cells < min_cells {
            let mut required_n = (min_cells * grid.extent() / annulus).ceil() as usize;
            required_n += required_n % 2;
            return Err(Error::ResolutionGuard {
                annulus,
                cells,
                min_cells,
                required_n,
            });
        }

        let samples = sample_kernel(grid, profile, eps);
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProfile("non-finite kernel sample".into()));
        }
        let dv = grid.cell_volume();
        let mass = samples.iter().sum::<f64>() * dv;
        let coeffs: Vec<Complex64> = grid.forward_raw(&samples).into_iter().map(|c| c * dv).collect();
        let zero_mode = coeffs[0].re;
        if (zero_mode - mass).abs() > 1e-10 * mass.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidProfile(format!(
                "kernel mass {mass} disagrees with zero mode {zero_mode}"
            )));
        }
        let mut symbol: Vec<f64> = coeffs.iter().map(|c| mass - c.re).collect();
        symbol[0] = 0.0;
        Ok(Self {
            grid: grid.clone(),
            eps,
            profile: profile.clone(),
            samples,
            kernel_spectrum: SpectralField::new(grid, coeffs)?,
            mass,
            symbol,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn profile(&self) -> &KernelProfile {
        &self.profile
    }

    /// `c_eps = (K_eps * 1)(x)` on the grid.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Kernel values at the minimum-image displacements, row-major.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn kernel_spectrum(&self) -> &SpectralField {
        &self.kernel_spectrum
    }

    /// Fourier symbol of `B_eps`, `c_eps - K_hat(k)`, per spectral index.
    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    /// Relative deviation of the grid mass from the continuum kernel mass.
    pub fn grid_mass_deviation(&self) -> Result<f64> {
        Ok(self.mass / self.profile.continuum_mass(self.eps)? - 1.0)
    }

    pub fn apply_raw(&self, values: &[f64]) -> Vec<f64> {
        self.grid.apply_multiplier(values, &self.symbol)
    }

    pub fn apply(&self, v: &ScalarField) -> Result<ScalarField> {
        if v.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        ScalarField::new(&self.grid, self.apply_raw(v.values()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{RngExt, SeedableRng};
    use rand_pcg::Pcg64;

    fn gauss_legendre_composite(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        // 5-point Gauss-Legendre on each panel
        const X: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let width = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = a + width * (p as f64 + 0.5);
            for (x, w) in X.iter().zip(W) {
                total += w * f(mid + 0.5 * width * x);
            }
        }
        total * 0.5 * width
    }

    #[test]
    fn sphere_factors() {
        assert_eq!(sphere_factor(1).unwrap(), 1.0);
        assert_eq!(sphere_factor(2).unwrap(), 0.5);
        assert!((sphere_factor(3).unwrap() - 1.0 / PI).abs() < 1e-16);
        assert!(sphere_factor(4).is_err());
    }

    #[test]
    fn profile_normalization_against_independent_quadrature() {
        for dim in 1..=3 {
            let p = make_profile(dim, DEFAULT_SUPPORT).unwrap();
            let gl = gauss_legendre_composite(|r| p.rho(r) * r.powi(dim as i32 - 1), 0.25, 0.75, 4000);
            let target = sphere_factor(dim).unwrap();
            assert!((gl - target).abs() <= 1e-10 * target, "d={dim}: {gl} vs {target}");
            // N1 is finite
            assert!(p.moment(dim as i32 - 3).unwrap().is_finite());
        }
    }

    #[test]
    fn scaled_profile_keeps_normalization() {
        let p = make_profile(2, DEFAULT_SUPPORT).unwrap();
        for eps in [0.1, 0.05] {
            let m = p.scaled_moment(1, eps).unwrap();
            assert!((m - 0.5).abs() <= 1e-10 * 0.5, "eps={eps}: {m}");
        }
    }

    #[test]
    fn invalid_support_rejected() {
        assert!(make_profile(2, (0.0, 0.5)).is_err());
        assert!(make_profile(2, (0.5, 0.4)).is_err());
        assert!(make_profile(2, (0.5, 1.0)).is_err());
    }

    #[test]
    fn construction_and_guard() {
        let p = make_profile(1, DEFAULT_SUPPORT).unwrap();
        let g = TorusGrid::new(1, 256, 1.0).unwrap();
        let op = NonlocalOperator::build(&g, &p, 0.1).unwrap();
        assert!(op.mass() > 0.0);
        let direct: f64 = op.samples().iter().sum::<f64>() * g.cell_volume();
        assert!((direct - op.mass()).abs() <= 1e-12 * direct);

        let small = TorusGrid::new(1, 8, 1.0).unwrap();
        match NonlocalOperator::build(&small, &p, 0.05) {
            Err(Error::ResolutionGuard { required_n, .. }) => assert_eq!(required_n, 320),
            other => panic!("expected guard error, got {other:?}"),
        }
        assert!(matches!(
            NonlocalOperator::build_with_guard(&g, &p, 0.6, 1.0),
            Err(Error::EpsTooLarge { .. })
        ));
    }

    #[test]
    fn kernel_samples_are_even() {
        let p = make_profile(2, DEFAULT_SUPPORT).unwrap();
        let g = TorusGrid::new(2, 32, 1.0).unwrap();
        let op = NonlocalOperator::build_with_guard(&g, &p, 0.3, 1.0).unwrap();
        let n = g.n();
        for idx in 0..g.len() {
            let [i, j, _] = g.indices(idx);
            let neg = ((n - i) % n) * n + (n - j) % n;
            assert_eq!(op.samples()[idx], op.samples()[neg]);
        }
    }

    #[test]
    fn matches_double_sum() {
        let p1 = make_profile(1, DEFAULT_SUPPORT).unwrap();
        let p2 = make_profile(2, DEFAULT_SUPPORT).unwrap();
        let mut rng = Pcg64::seed_from_u64(3);
        for (dim, n, p) in [(1, 16, &p1), (1, 8, &p1), (2, 16, &p2), (2, 8, &p2)] {
            let g = TorusGrid::new(dim, n, 1.0).unwrap();
            let op = NonlocalOperator::build_with_guard(&g, p, 0.45, 0.5).unwrap();
            let v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = op.apply_raw(&v);
            let slow = oracle::apply_b_double_sum(&g, p, 0.45, &v);
            let scale = slow.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-10 * scale, "d={dim} n={n}");
            }
        }
    }

    #[test]
    fn constants_in_kernel_symmetry_and_psd() {
        let p = make_profile(1, DEFAULT_SUPPORT).unwrap();
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        let op = NonlocalOperator::build_with_guard(&g, &p, 0.2, 3.0).unwrap();
        let c = ScalarField::constant(&g, -2.5);
        assert!(op.apply(&c).unwrap().max_abs() <= 1e-12 * op.mass() * 2.5);

        let mut rng = Pcg64::seed_from_u64(9);
        for _ in 0..100 {
            let v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bv = op.apply_raw(&v);
            let bw = op.apply_raw(&w);
            assert!(g.inner_raw(&bv, &v) >= -1e-12);
            let s1 = g.inner_raw(&bv, &w);
            let s2 = g.inner_raw(&v, &bw);
            assert!((s1 - s2).abs() <= 1e-12 * op.mass() * g.inner_raw(&v, &v).sqrt() * g.inner_raw(&w, &w).sqrt());
        }
    }

    #[test]
    fn dirichlet_form_two_ways() {
        let p = make_profile(1, DEFAULT_SUPPORT).unwrap();
        let g = TorusGrid::new(1, 8, 1.0).unwrap();
        let op = NonlocalOperator::build_with_guard(&g, &p, 0.45, 0.5).unwrap();
        let mut rng = Pcg64::seed_from_u64(4);
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let via_op = g.inner_raw(&op.apply_raw(&v), &v);
        let direct = oracle::dirichlet_form_double_sum(&g, &p, 0.45, &v);
        assert!((via_op - direct).abs() <= 1e-10 * direct);
    }

    #[test]
    fn approaches_negative_laplacian() {
        let p = make_profile(1, DEFAULT_SUPPORT).unwrap();
        let g = TorusGrid::new(1, 1024, 1.0).unwrap();
        let v = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let lap = v.laplacian();
        let mut last = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05] {
            let op = NonlocalOperator::build(&g, &p, eps).unwrap();
            let err = op.apply(&v).unwrap().axpy(1.0, &lap).unwrap().norm_l2() / lap.norm_l2();
            assert!(err < last, "eps={eps}: {err} !< {last}");
            last = err;
        }
        assert!(last < 1e-2);
    }
}
