//! Brute-force reference implementations.
//!
//! Everything here works from the definitions in physical space with
//! `O(N^{2d})` double sums or dense matrices, without touching the spectral
//! code paths. The self-test suite and the test targets compare the fast
//! implementations against these.

use crate::grid::TorusGrid;
use crate::kernel::KernelProfile;

/// Kernel value for the displacement between grid points `x` and `y`,
/// using the minimum image on each axis.
pub fn kernel_between(grid: &TorusGrid, profile: &KernelProfile, eps: f64, x: usize, y: usize) -> f64 {
    let xi = grid.indices(x);
    let yi = grid.indices(y);
    let h = grid.spacing();
    let n = grid.n() as i64;
    let mut r2 = 0.0;
    for axis in 0..grid.dim() {
        let mut d = xi[axis] as i64 - yi[axis] as i64;
        d = d.rem_euclid(n);
        if d >= n / 2 {
            d -= n;
        }
        r2 += (d as f64 * h).powi(2);
    }
    let r = r2.sqrt();
    let (a, b) = profile.support();
    if r <= a * eps || r >= b * eps {
        0.0
    } else {
        profile.rho_eps(r, eps) / r2
    }
}

/// Dense matrix `B[x][y]` of the nonlocal operator, `B v = sum_y B[x][y] v[y]`.
pub fn dense_b(grid: &TorusGrid, profile: &KernelProfile, eps: f64) -> Vec<Vec<f64>> {
    let len = grid.len();
    let dv = grid.cell_volume();
    let mut mat = vec![vec![0.0; len]; len];
    for x in 0..len {
        let mut row_sum = 0.0;
        for y in 0..len {
            let k = kernel_between(grid, profile, eps, x, y) * dv;
            mat[x][y] -= k;
            row_sum += k;
        }
        mat[x][x] += row_sum;
    }
    mat
}

/// `B(v)(x) = sum_y k(x - y) (v(x) - v(y)) h^d`.
pub fn apply_b_double_sum(grid: &TorusGrid, profile: &KernelProfile, eps: f64, v: &[f64]) -> Vec<f64> {
    let len = grid.len();
    let dv = grid.cell_volume();
    (0..len)
        .map(|x| {
            (0..len)
                .map(|y| kernel_between(grid, profile, eps, x, y) * (v[x] - v[y]))
                .sum::<f64>()
                * dv
        })
        .collect()
}

/// `1/2 sum_x sum_y k(x - y) (v(x) - v(y))^2 h^{2d}`.
pub fn dirichlet_form_double_sum(grid: &TorusGrid, profile: &KernelProfile, eps: f64, v: &[f64]) -> f64 {
    let len = grid.len();
    let dv = grid.cell_volume();
    let mut total = 0.0;
    for x in 0..len {
        for y in 0..len {
            total += kernel_between(grid, profile, eps, x, y) * (v[x] - v[y]).powi(2);
        }
    }
    0.5 * total * dv * dv
}

/// Nonlocal part of the energy as the quarter double integral
/// `1/4 sum_ij c_ij sum_x sum_y k (u_i(x) - u_i(y)) (u_j(x) - u_j(y))`.
pub fn nonlocal_energy_double_sum(
    grid: &TorusGrid,
    profile: &KernelProfile,
    eps: f64,
    c: &[Vec<f64>],
    u: &[Vec<f64>],
) -> f64 {
    let len = grid.len();
    let dv = grid.cell_volume();
    let species = u.len();
    let mut total = 0.0;
    for x in 0..len {
        for y in 0..len {
            let k = kernel_between(grid, profile, eps, x, y);
            if k == 0.0 {
                continue;
            }
            for i in 0..species {
                for j in 0..species {
                    total += c[i][j] * k * (u[i][x] - u[i][y]) * (u[j][x] - u[j][y]);
                }
            }
        }
    }
    0.25 * total * dv * dv
}

/// `mu_i(x) = ln u_i(x) + sum_j c_ij B(u_j)(x)` from double sums.
pub fn chemical_potential_double_sum(
    grid: &TorusGrid,
    profile: &KernelProfile,
    eps: f64,
    c: &[Vec<f64>],
    u: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let bu: Vec<Vec<f64>> = u.iter().map(|f| apply_b_double_sum(grid, profile, eps, f)).collect();
    (0..u.len())
        .map(|i| {
            (0..grid.len())
                .map(|x| u[i][x].ln() + (0..u.len()).map(|j| c[i][j] * bu[j][x]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// `1/2 c sum_x sum_y k |g(x) - g(y)|^2 h^{2d}` for a vector field `g`
/// given by its components.
pub fn gradient_form_double_sum(
    grid: &TorusGrid,
    profile: &KernelProfile,
    eps: f64,
    components: &[Vec<f64>],
) -> f64 {
    components
        .iter()
        .map(|g| dirichlet_form_double_sum(grid, profile, eps, g))
        .sum()
}

/// Euclidean projection of `v` onto `{w : w_i >= lo, sum w_i = 1}`.
pub fn project_simplex(v: &[f64], lo: f64) -> Vec<f64> {
    let k = v.len();
    let budget = 1.0 - lo * k as f64;
    let shifted: Vec<f64> = v.iter().map(|x| x - lo).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - budget) / (j + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    shifted.iter().map(|x| (x - theta).max(0.0) + lo).collect()
}

/// Minimizes `F_mu(w) = sum_i int w_i ln w_i + 1/2 sum_ik c_ik <B w_k, w_i> - <mu_i, w_i>`
/// over the pointwise simplex by projected gradient descent with Armijo
/// backtracking, using the dense operator `b`. Returns the minimizer and
/// the objective value.
pub fn projected_gradient_s2(
    b: &[Vec<f64>],
    c: &[Vec<f64>],
    mu: &[Vec<f64>],
    cell_volume: f64,
    tol: f64,
    max_iter: usize,
) -> (Vec<Vec<f64>>, f64) {
    let species = mu.len();
    let len = b.len();
    let lo = 1e-15;
    let mut w = vec![vec![1.0 / species as f64; len]; species];
    let mut f = s2_objective(b, c, mu, cell_volume, &w);
    let mut step = 1e-2;
    for _ in 0..max_iter {
        let grad = s2_gradient(b, c, mu, &w);
        let mut accepted = None;
        for _ in 0..80 {
            let trial = project_all(&w, &grad, step, lo);
            let ft = s2_objective(b, c, mu, cell_volume, &trial);
            let decrease: f64 = (0..species)
                .flat_map(|i| (0..len).map(move |x| (i, x)))
                .map(|(i, x)| grad[i][x] * (trial[i][x] - w[i][x]))
                .sum::<f64>()
                * cell_volume;
            if ft <= f + 1e-4 * decrease.min(0.0) {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            break;
        };
        let change = (0..species)
            .flat_map(|i| (0..len).map(move |x| (i, x)))
            .map(|(i, x)| (trial[i][x] - w[i][x]).abs())
            .fold(0.0, f64::max);
        w = trial;
        f = ft;
        step *= 2.0;
        if change < tol {
            break;
        }
    }
    (w, f)
}

fn project_all(w: &[Vec<f64>], grad: &[Vec<f64>], step: f64, lo: f64) -> Vec<Vec<f64>> {
    let species = w.len();
    let len = w[0].len();
    let mut out = vec![vec![0.0; len]; species];
    for x in 0..len {
        let point: Vec<f64> = (0..species).map(|i| w[i][x] - step * grad[i][x]).collect();
        let p = project_simplex(&point, lo);
        for i in 0..species {
            out[i][x] = p[i];
        }
    }
    out
}

fn dense_apply(b: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    b.iter()
        .map(|row| row.iter().zip(v).map(|(m, x)| m * x).sum())
        .collect()
}

/// Objective `F_mu(w)` with a dense `B`.
pub fn s2_objective(b: &[Vec<f64>], c: &[Vec<f64>], mu: &[Vec<f64>], cell_volume: f64, w: &[Vec<f64>]) -> f64 {
    let species = w.len();
    let bw: Vec<Vec<f64>> = w.iter().map(|f| dense_apply(b, f)).collect();
    let mut total = 0.0;
    for i in 0..species {
        for x in 0..w[i].len() {
            let wi = w[i][x];
            let ent = if wi > 0.0 { wi * wi.ln() } else { 0.0 };
            let quad: f64 = (0..species).map(|k| c[i][k] * bw[k][x]).sum::<f64>() * wi;
            total += ent + 0.5 * quad - mu[i][x] * wi;
        }
    }
    total * cell_volume
}

/// Pointwise gradient (per unit volume) of `F_mu`.
fn s2_gradient(b: &[Vec<f64>], c: &[Vec<f64>], mu: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let species = w.len();
    let bw: Vec<Vec<f64>> = w.iter().map(|f| dense_apply(b, f)).collect();
    (0..species)
        .map(|i| {
            (0..w[i].len())
                .map(|x| {
                    w[i][x].ln() + 1.0 + (0..species).map(|k| c[i][k] * bw[k][x]).sum::<f64>() - mu[i][x]
                })
                .collect()
        })
        .collect()
}
