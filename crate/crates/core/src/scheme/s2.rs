use super::cg::{dot, pcg};
use super::ops::{apply_hessian, flatten, project_tangent, species_slices, BlockPreconditioner};
use super::{S2Method, SchemeParams};
use crate::error::{Error, Result};
use crate::model::{ChemPotential, Model, State};

/// Fraction of the distance to the boundary of the simplex a step may cover.
const BOUNDARY_FRACTION: f64 = 0.995;

#[derive(Clone, Debug)]
pub struct S2Outcome {
    pub state: State,
    pub iterations: usize,
    pub cg_iterations: usize,
    /// `max_x (max_i g_i - min_i g_i)` with `g = ln w + C B w - mu`.
    pub residual: f64,
    /// The Picard solver needed its damping halved.
    pub retried: bool,
}

/// Numerically stable softmax of one point's scores.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn softmax_field(scores: &[f64], species: usize) -> Vec<f64> {
    let len = scores.len() / species;
    let mut out = vec![0.0; scores.len()];
    let mut point = vec![0.0; species];
    for x in 0..len {
        for i in 0..species {
            point[i] = scores[i * len + x];
        }
        for (i, v) in softmax(&point).into_iter().enumerate() {
            out[i * len + x] = v;
        }
    }
    out
}

fn renormalize(w: &mut [f64], species: usize) {
    let len = w.len() / species;
    for x in 0..len {
        let total: f64 = (0..species).map(|i| w[i * len + x]).sum();
        for i in 0..species {
            w[i * len + x] /= total;
        }
    }
}

/// `ln w + C B w - mu` and `C B w`.
fn gradient(model: &Model, mu: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let len = model.grid().len();
    let cbw = flatten(&model.coupled_apply_raw(&species_slices(w, len)));
    let g = (0..w.len()).map(|k| w[k].ln() + cbw[k] - mu[k]).collect();
    (g, cbw)
}

fn spread(g: &[f64], species: usize) -> f64 {
    let len = g.len() / species;
    (0..len)
        .map(|x| {
            let (lo, hi) = (0..species).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                let v = g[i * len + x];
                (lo.min(v), hi.max(v))
            });
            hi - lo
        })
        .fold(0.0, f64::max)
}

fn objective_flat(model: &Model, mu: &[f64], w: &[f64], cbw: &[f64]) -> f64 {
    let total: f64 = (0..w.len())
        .map(|k| {
            let wk = w[k];
            let ent = if wk > 0.0 { wk * wk.ln() } else { 0.0 };
            ent + 0.5 * cbw[k] * wk - mu[k] * wk
        })
        .sum();
    total * model.grid().cell_volume()
}

fn check_mu(model: &Model, mu: &ChemPotential) -> Result<Vec<f64>> {
    if mu.fields.len() != model.species() {
        return Err(Error::SizeMismatch {
            expected: model.species(),
            actual: mu.fields.len(),
        });
    }
    for f in &mu.fields {
        if f.grid() != model.grid() {
            return Err(Error::GridMismatch);
        }
        if f.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("non-finite chemical potential".into()));
        }
    }
    Ok(flatten(&mu.fields.iter().map(|f| f.values().to_vec()).collect::<Vec<_>>()))
}

/// `F_mu(w) = sum_i int w_i ln w_i + 1/2 sum_ik c_ik <B w_k, w_i> - <mu_i, w_i>`.
pub fn s2_objective(model: &Model, mu: &ChemPotential, w: &State) -> Result<f64> {
    let mu = check_mu(model, mu)?;
    let wf = flatten(&w.to_raw());
    let len = model.grid().len();
    let cbw = flatten(&model.coupled_apply_raw(&species_slices(&wf, len)));
    Ok(objective_flat(model, &mu, &wf, &cbw))
}

/// Spread across species of `ln w_i + sum_k c_ik B w_k - mu_i`, maximized
/// over the grid. Zero exactly when `w` satisfies the Euler-Lagrange
/// equation with a pointwise multiplier.
pub fn el_residual_spread(model: &Model, mu: &ChemPotential, w: &State) -> Result<f64> {
    let mu = check_mu(model, mu)?;
    let (g, _) = gradient(model, &mu, &flatten(&w.to_raw()));
    Ok(spread(&g, model.species()))
}

/// Minimizes `F_mu` over the pointwise simplex, starting from `warm` or
/// from `softmax(mu)`.
pub fn step_s2(model: &Model, scheme: &SchemeParams, mu: &ChemPotential, warm: Option<&State>) -> Result<S2Outcome> {
    let mu_flat = check_mu(model, mu)?;
    let s = model.species();
    let start = match warm {
        Some(w) => {
            if w.grid() != model.grid() {
                return Err(Error::GridMismatch);
            }
            flatten(&w.to_raw())
        }
        None => softmax_field(&mu_flat, s),
    };
    let (w, iterations, cg_iterations, residual, retried) = match scheme.s2_method {
        S2Method::Newton => {
            let (w, it, cg, res) = newton(model, scheme, &mu_flat, start)?;
            (w, it, cg, res, false)
        }
        S2Method::SoftmaxPicard => {
            match picard(model, scheme, &mu_flat, start.clone(), scheme.s2_damping) {
                Ok((w, it, res)) => (w, it, 0, res, false),
                Err(_) => {
                    let (w, it, res) = picard(model, scheme, &mu_flat, start, 0.5 * scheme.s2_damping)?;
                    (w, it, 0, res, true)
                }
            }
        }
    };
    let len = model.grid().len();
    let state = State::from_raw(model.grid(), w.chunks_exact(len).map(|c| c.to_vec()).collect(), 0.0)?;
    Ok(S2Outcome {
        state,
        iterations,
        cg_iterations,
        residual,
        retried,
    })
}

fn picard(
    model: &Model,
    scheme: &SchemeParams,
    mu: &[f64],
    mut w: Vec<f64>,
    theta: f64,
) -> Result<(Vec<f64>, usize, f64)> {
    let s = model.species();
    let len = model.grid().len();
    let mut change = f64::INFINITY;
    for it in 1..=scheme.s2_max {
        let cbw = flatten(&model.coupled_apply_raw(&species_slices(&w, len)));
        let scores: Vec<f64> = mu.iter().zip(&cbw).map(|(m, q)| m - q).collect();
        let target = softmax_field(&scores, s);
        change = 0.0;
        for (wk, tk) in w.iter_mut().zip(&target) {
            let next = (1.0 - theta) * *wk + theta * tk;
            change = f64::max(change, (next - *wk).abs());
            *wk = next;
        }
        if !change.is_finite() {
            break;
        }
        if change <= scheme.s2_tol {
            let (g, _) = gradient(model, mu, &w);
            return Ok((w, it, spread(&g, s)));
        }
    }
    Err(Error::S2NonConvergence {
        iterations: scheme.s2_max,
        residual: change,
    })
}

fn newton(model: &Model, scheme: &SchemeParams, mu: &[f64], mut w: Vec<f64>) -> Result<(Vec<f64>, usize, usize, f64)> {
    let s = model.species();
    let n = w.len();
    let len = n / s;
    let dv = model.grid().cell_volume();
    let mut cg_total = 0;
    let mut res = f64::INFINITY;
    for it in 0..scheme.s2_max {
        let (g, cbw) = gradient(model, mu, &w);
        res = spread(&g, s);
        if !res.is_finite() {
            break;
        }
        if res <= scheme.s2_tol {
            return Ok((w, it, cg_total, res));
        }
        let mut rhs = g.clone();
        project_tangent(&mut rhs, s);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let inv_w: Vec<f64> = w.iter().map(|v| 1.0 / v).collect();
        let hdiag: Vec<f64> = inv_w.chunks_exact(len).map(|c| c.iter().sum::<f64>() / len as f64).collect();
        let pre = BlockPreconditioner::tangent(model, &hdiag, None);
        let mut delta = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let forcing = (0.1 * res.min(1.0)).max(scheme.cg_tol);
        let out = pcg(
            |v, out| {
                tmp.copy_from_slice(v);
                project_tangent(&mut tmp, s);
                apply_hessian(model, &inv_w, &tmp, out);
                project_tangent(out, s);
            },
            |r, z| pre.apply(r, z),
            &rhs,
            &mut delta,
            forcing,
            scheme.cg_max,
        )?;
        cg_total += out.iterations;
        project_tangent(&mut delta, s);

        let slope = -dot(&rhs, &delta) * dv;
        let mut alpha: f64 = 1.0;
        for k in 0..n {
            if delta[k] < 0.0 {
                alpha = alpha.min(-BOUNDARY_FRACTION * w[k] / delta[k]);
            }
        }
        let f0 = objective_flat(model, mu, &w, &cbw);
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
            let cbt = flatten(&model.coupled_apply_raw(&species_slices(&trial, len)));
            let f1 = objective_flat(model, mu, &trial, &cbt);
            // below round-off the objective cannot discriminate; trust the Newton step
            let negligible = (alpha * slope).abs() <= 1e-13 * (1.0 + f0.abs());
            if f1 <= f0 + 1e-4 * alpha * slope || negligible {
                w = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        renormalize(&mut w, s);
    }
    Err(Error::S2NonConvergence {
        iterations: scheme.s2_max,
        residual: res,
    })
}
