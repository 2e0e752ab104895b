//! One implicit time step: the common fixed point of S1 and S2.
//!
//! At a fixed point `u = S2(S1(u))` the chemical potential is
//! `mu(u) = P_T(ln u + C B u)` (summing the S1 equations over species shows
//! `sum_i mu_i = 0`), so the step reduces to
//!
//! ```text
//! R(u) = A(u) mu(u) + (u - u_prev) / tau = 0,   A(u) = G^T M(u) G + tau H2.
//! ```
//!
//! Each outer iteration freezes the mobility at the current iterate and takes
//! one Newton step on `R`, solving `Q delta = -P_T H R` with the symmetric
//! positive definite `Q = H_T A H_T + H_T / tau` on the tangent space of the
//! simplex, `H = diag(1/u) + C (x) B` the entropy Hessian.

use super::cg::{norm, pcg};
use super::ops::{
    apply_hessian, flatten, mean_mobility, project_tangent, tangent_potential, BlockPreconditioner, S1Operator,
};
use super::{step_s1, step_s2, SchemeParams};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::model::{ChemPotential, Model, State};

const BOUNDARY_FRACTION: f64 = 0.995;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub outer_iterations: usize,
    pub cg_iterations: usize,
    pub s2_iterations: usize,
    /// Relative L2 size of the last outer update.
    pub outer_residual: f64,
    /// `|R(u)| / max(|A mu|, |(u - u_prev) / tau|)` at the accepted state.
    pub equation_residual: f64,
    /// Largest final relative residual over the CG solves.
    pub cg_residual: f64,
    /// Step actually taken.
    pub tau: f64,
    pub retried: bool,
    /// `|S2(S1(u)) - u| / |u|`, when verification is enabled.
    pub fixed_point_residual: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: State,
    pub mu: ChemPotential,
    pub stats: StepStats,
    /// `min_{i,x} u_i^{p+1}(x)`.
    pub positivity_floor: f64,
}

fn residual(model: &Model, u: &[f64], up: &[f64], tau: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let mu = tangent_potential(model, u);
    let op = S1Operator::new(model, u, tau);
    let mut r = vec![0.0; u.len()];
    op.apply(&mu, &mut r);
    let am = norm(&r);
    let mut rate = 0.0;
    for k in 0..u.len() {
        let d = (u[k] - up[k]) / tau;
        rate += d * d;
        r[k] += d;
    }
    let scale = am.max(rate.sqrt());
    let rel = if scale > 0.0 { norm(&r) / scale } else { 0.0 };
    (r, mu, rel)
}

fn newton_solve(model: &Model, scheme: &SchemeParams, up: &[f64], tau: f64, t0: f64) -> Result<(Vec<f64>, Vec<f64>, StepStats)> {
    let s = model.species();
    let n = up.len();
    let len = n / s;
    let mut u = up.to_vec();
    let mut stats = StepStats {
        tau,
        ..Default::default()
    };
    let mut converged = false;
    for it in 1..=scheme.outer_max {
        stats.outer_iterations = it;
        let (r, _, _) = residual(model, &u, up, tau);
        let inv_u: Vec<f64> = u.iter().map(|v| 1.0 / v).collect();
        let mut rhs = vec![0.0; n];
        apply_hessian(model, &inv_u, &r, &mut rhs);
        project_tangent(&mut rhs, s);
        rhs.iter_mut().for_each(|v| *v = -*v);

        let mbar = mean_mobility(model, &u);
        let hdiag: Vec<f64> = inv_u.chunks_exact(len).map(|c| c.iter().sum::<f64>() / len as f64).collect();
        let pre = BlockPreconditioner::tangent(model, &hdiag, Some((&mbar, tau)));
        let op = S1Operator::new(model, &u, tau);
        let mut t = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut delta = vec![0.0; n];
        let out = pcg(
            |v, out| {
                t.copy_from_slice(v);
                project_tangent(&mut t, s);
                apply_hessian(model, &inv_u, &t, &mut y);
                project_tangent(&mut y, s);
                op.apply(&y, &mut z);
                for k in 0..n {
                    z[k] += t[k] / tau;
                }
                project_tangent(&mut z, s);
                apply_hessian(model, &inv_u, &z, out);
                project_tangent(out, s);
            },
            |r, z| pre.apply(r, z),
            &rhs,
            &mut delta,
            scheme.cg_tol,
            scheme.cg_max,
        )?;
        stats.cg_iterations += out.iterations;
        stats.cg_residual = stats.cg_residual.max(out.residual);
        project_tangent(&mut delta, s);

        let mut alpha: f64 = 1.0;
        for k in 0..n {
            if delta[k] < 0.0 {
                alpha = alpha.min(-BOUNDARY_FRACTION * u[k] / delta[k]);
            }
        }
        for k in 0..n {
            u[k] += alpha * delta[k];
        }
        for x in 0..len {
            let total: f64 = (0..s).map(|i| u[i * len + x]).sum();
            for i in 0..s {
                u[i * len + x] /= total;
            }
        }
        stats.outer_residual = alpha * norm(&delta) / norm(&u);
        if !stats.outer_residual.is_finite() {
            break;
        }
        if stats.outer_residual <= scheme.outer_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::StepFailure {
            time: t0,
            reason: format!(
                "outer iteration stalled after {} iterations (last relative change {:e})",
                stats.outer_iterations, stats.outer_residual
            ),
        });
    }
    let (_, mu, rel) = residual(model, &u, up, tau);
    stats.equation_residual = rel;
    Ok((u, mu, stats))
}

fn to_fields(model: &Model, flat: &[f64]) -> Result<Vec<ScalarField>> {
    flat.chunks_exact(model.grid().len())
        .map(|c| ScalarField::new(model.grid(), c.to_vec()))
        .collect()
}

fn attempt(model: &Model, scheme: &SchemeParams, u_prev: &State, tau: f64) -> Result<StepResult> {
    let up = flatten(&u_prev.to_raw());
    let (u, mu, mut stats) = newton_solve(model, scheme, &up, tau, u_prev.time())?;
    let state = State::new(to_fields(model, &u)?, u_prev.time() + tau)?;
    let (species, index, floor) = state.argmin();
    if floor <= 0.0 {
        return Err(Error::PositivityFloor {
            species,
            index,
            value: floor,
        });
    }
    let mu = ChemPotential {
        fields: to_fields(model, &mu)?,
    };
    if scheme.verify_fixed_point {
        let local = scheme.with_tau(tau);
        let s1 = step_s1(model, &local, &state, u_prev)?;
        let s2 = step_s2(model, &local, &s1.mu, Some(&state))?;
        let size = state.distance_l2(&State::new_unchecked(
            (0..state.species()).map(|_| ScalarField::zeros(model.grid())).collect(),
            0.0,
        )?);
        stats.fixed_point_residual = Some(s2.state.distance_l2(&state) / size);
        stats.s2_iterations = s2.iterations;
        stats.cg_iterations += s1.cg.iterations + s2.cg_iterations;
    }
    Ok(StepResult {
        state,
        mu,
        stats,
        positivity_floor: floor,
    })
}

/// Advances `u_prev` by one implicit step of size `scheme.tau`; on solver
/// failure retries once with `tau / 2` when `scheme.retry` is set.
pub fn implicit_step(model: &Model, scheme: &SchemeParams, u_prev: &State) -> Result<StepResult> {
    implicit_step_with_tau(model, scheme, u_prev, scheme.tau)
}

pub(crate) fn implicit_step_with_tau(model: &Model, scheme: &SchemeParams, u_prev: &State, tau: f64) -> Result<StepResult> {
    scheme.validate()?;
    if u_prev.grid() != model.grid() {
        return Err(Error::GridMismatch);
    }
    if u_prev.species() != model.species() {
        return Err(Error::SizeMismatch {
            expected: model.species(),
            actual: u_prev.species(),
        });
    }
    u_prev.validate()?;
    match attempt(model, scheme, u_prev, tau) {
        Ok(r) => Ok(r),
        Err(first) if scheme.retry && first.is_solver_failure() => {
            match attempt(model, scheme, u_prev, 0.5 * tau) {
                Ok(mut r) => {
                    r.stats.retried = true;
                    Ok(r)
                }
                Err(second) => Err(Error::StepFailure {
                    time: u_prev.time(),
                    reason: format!("{first}; retry with tau/2: {second}"),
                }),
            }
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::kernel::{make_profile, DEFAULT_SUPPORT};
    use crate::model::{ModelKind, ModelParams};
    use nalgebra::DMatrix;

    fn model(dim: usize, n: usize, species: usize, c: f64) -> Model {
        let g = TorusGrid::new(dim, n, 1.0).unwrap();
        let kind = ModelKind::Nonlocal {
            eps: 0.1,
            profile: make_profile(dim, DEFAULT_SUPPORT).unwrap(),
            min_annulus_cells: 1.5,
        };
        Model::new(ModelParams::uniform(species, 1.0, c, kind).unwrap(), &g).unwrap()
    }

    fn wavy(grid: &TorusGrid, species: usize) -> State {
        let len = grid.len();
        let mut raw = vec![vec![0.0; len]; species];
        for x in 0..len {
            let c = grid.coords(x);
            let scores: Vec<f64> = (0..species)
                .map(|i| 0.4 * ((2.0 * std::f64::consts::PI * (c[0] + 0.3 * i as f64)).sin() + 0.3 * (4.0 * std::f64::consts::PI * c[1]).cos()))
                .collect();
            for (i, v) in super::super::softmax(&scores).into_iter().enumerate() {
                raw[i][x] = v;
            }
        }
        State::from_raw(grid, raw, 0.0).unwrap()
    }

    #[test]
    fn uniform_state_is_a_fixed_point() {
        let m = model(1, 64, 3, 1.0);
        let u = State::uniform(m.grid(), 3);
        let r = implicit_step(&m, &SchemeParams::new(1e-4), &u).unwrap();
        assert_eq!(r.stats.outer_iterations, 1);
        assert!(r.state.distance_l2(&u) < 1e-15);
        for f in &r.mu.fields {
            let v = f.values();
            assert!(v.iter().all(|x| (x - v[0]).abs() < 1e-15));
        }
        assert!((r.state.time() - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn solution_is_fixed_point_of_both_half_steps() {
        let m = model(1, 64, 2, 0.1);
        let u = wavy(m.grid(), 2);
        let mut scheme = SchemeParams::new(2e-4);
        scheme.verify_fixed_point = true;
        let r = implicit_step(&m, &scheme, &u).unwrap();
        assert!(r.stats.fixed_point_residual.unwrap() < 1e-8, "{:?}", r.stats);
        assert!(r.stats.equation_residual < 1e-7, "{:?}", r.stats);
    }

    #[test]
    fn energy_decreases_and_mass_drift_follows_regularizer() {
        let m = model(1, 128, 2, 0.1);
        let u = wavy(m.grid(), 2);
        let tau = 1e-4;
        let r = implicit_step(&m, &SchemeParams::new(tau), &u).unwrap();
        let e0 = m.energy(&u).unwrap().total;
        let e1 = m.energy(&r.state).unwrap().total;
        assert!(e1 < e0);
        let g = m.grid();
        for i in 0..2 {
            let drift = r.state.field(i).integrate() - u.field(i).integrate();
            let predicted = -tau * tau * g.integrate_raw(r.mu.fields[i].values());
            assert!((drift - predicted).abs() < 1e-12 + 1e-6 * predicted.abs(), "{drift} {predicted}");
        }
    }

    #[test]
    fn two_dimensional_three_species() {
        let m = model(2, 32, 3, 0.05);
        let u = wavy(m.grid(), 3);
        let r = implicit_step(&m, &SchemeParams::new(1e-4), &u).unwrap();
        assert!(r.state.simplex_deviation() < 1e-12);
        assert!(r.positivity_floor > 0.0);
    }

    #[test]
    fn local_model_step() {
        let g = TorusGrid::new(1, 64, 1.0).unwrap();
        let p = ModelParams::new(
            DMatrix::from_element(2, 2, 1.0),
            DMatrix::identity(2, 2) * 1e-3,
            ModelKind::Local,
        )
        .unwrap();
        let m = Model::new(p, &g).unwrap();
        let u = wavy(&g, 2);
        let mut scheme = SchemeParams::new(1e-4);
        scheme.verify_fixed_point = true;
        let r = implicit_step(&m, &scheme, &u).unwrap();
        assert!(r.stats.fixed_point_residual.unwrap() < 1e-8);
    }
}
