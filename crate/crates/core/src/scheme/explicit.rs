//! Forward-Euler reference stepper on the flux form of the equations.

use crate::error::Result;
use crate::model::{Model, State};

/// `u + tau_small * rhs(u)` without renormalization: the simplex deviation
/// of the result is what the caller measures. Stability is the caller's
/// responsibility; see [`stable_explicit_dt`].
pub fn explicit_oracle_step(model: &Model, state: &State, tau_small: f64) -> Result<State> {
    let rhs = model.rhs(state)?;
    let fields = state
        .fields()
        .iter()
        .zip(&rhs)
        .map(|(u, r)| u.axpy(tau_small, r))
        .collect::<Result<Vec<_>>>()?;
    State::new_unchecked(fields, state.time() + tau_small)
}

/// Heuristic forward-Euler step bound from the largest linearized decay rate
/// `L_max (s - 1) |k|^2 (1 + 1/4 |C| I_hat(k))` over the grid, with a factor
/// 2 safety margin. For the local model this scales like `h^4`.
pub fn stable_explicit_dt(model: &Model) -> f64 {
    let p = model.params();
    let s = p.species() as f64;
    let c_norm = p.c().symmetric_eigenvalues().amax();
    let ksq = model.grid().operator_k_squared();
    let symbol = model.interaction().symbol();
    let rate = ksq
        .iter()
        .zip(symbol)
        .map(|(k2, b)| k2 * (1.0 + 0.25 * c_norm * b))
        .fold(0.0, f64::max)
        * p.l_max()
        * (s - 1.0);
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

/// Integrates over `duration` with equal forward-Euler steps no longer than `dt_max`.
pub fn explicit_integrate(model: &Model, state: &State, duration: f64, dt_max: f64) -> Result<State> {
    let steps = (duration / dt_max).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    let t0 = state.time();
    let mut u = state.clone();
    for _ in 0..steps {
        u = explicit_oracle_step(model, &u, dt)?;
    }
    Ok(u.with_time(t0 + duration))
}
