//! Browser bindings: an interactive run driven by a config text, the
//! nonlocal symbol next to `|k|^2`, and the operator probe error.

use wasm_bindgen::prelude::*;

use nlch::config::{parse_config, RunConfig};
use nlch::diagnostics::operator_probe_error;
use nlch::grid::TorusGrid;
use nlch::kernel::{make_profile, NonlocalOperator, DEFAULT_SUPPORT};
use nlch::model::{Model, State};
use nlch::scheme::implicit_step;

fn js(e: nlch::error::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Simulation {
    config: RunConfig,
    model: Model,
    state: State,
    steps: usize,
    energy: f64,
    floor: f64,
}

#[wasm_bindgen]
impl Simulation {
    /// Parses a config in the CLI format and builds the initial state.
    #[wasm_bindgen(constructor)]
    pub fn new(config_text: &str) -> Result<Simulation, JsError> {
        let config = parse_config(config_text).map_err(js)?;
        let model = config.build_model().map_err(js)?;
        let state = config.initial_state().map_err(js)?;
        let energy = model.energy(&state).map_err(js)?.total;
        let floor = state.min_value();
        Ok(Simulation { config, model, state, steps: 0, energy, floor })
    }

    /// Takes up to `count` implicit steps, stopping at `t_final`.
    pub fn advance(&mut self, count: usize) -> Result<usize, JsError> {
        let mut taken = 0;
        while taken < count && self.state.time() < self.config.t_final * (1.0 - 1e-12) {
            let remaining = self.config.t_final - self.state.time();
            let scheme = self.config.scheme.with_tau(self.config.scheme.tau.min(remaining));
            let r = implicit_step(&self.model, &scheme, &self.state).map_err(js)?;
            self.state = r.state;
            self.floor = r.positivity_floor;
            taken += 1;
        }
        self.steps += taken;
        self.energy = self.model.energy(&self.state).map_err(js)?.total;
        Ok(taken)
    }

    pub fn time(&self) -> f64 {
        self.state.time()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn simplex_deviation(&self) -> f64 {
        self.state.simplex_deviation()
    }

    pub fn dim(&self) -> usize {
        self.state.grid().dim()
    }

    pub fn n(&self) -> usize {
        self.state.grid().n()
    }

    pub fn species(&self) -> usize {
        self.state.species()
    }

    /// Values of species `i`, row-major with the last axis fastest.
    pub fn field(&self, i: usize) -> Result<Vec<f64>, JsError> {
        if i >= self.state.species() {
            return Err(JsError::new(&format!("species {i} out of range")));
        }
        Ok(self.state.field(i).values().to_vec())
    }
}

/// Symbol of the nonlocal operator on a 1-D grid of `n` points and unit
/// length, for modes `0..=n/2`, interleaved as `[k^2, symbol, ...]`.
#[wasm_bindgen]
pub fn symbol_curve(n: usize, eps: f64) -> Result<Vec<f64>, JsError> {
    let grid = TorusGrid::new(1, n, 1.0).map_err(js)?;
    let profile = make_profile(1, DEFAULT_SUPPORT).map_err(js)?;
    let op = NonlocalOperator::build_with_guard(&grid, &profile, eps, 0.0).map_err(js)?;
    let mut out = Vec::with_capacity(n + 2);
    for m in 0..=n / 2 {
        out.push(grid.k_squared()[m]);
        out.push(op.symbol()[m]);
    }
    Ok(out)
}

/// Relative L2 error of the nonlocal operator against `-Laplacian` on
/// `sin(2 pi x)`, 1-D grid of `n` points.
#[wasm_bindgen]
pub fn probe_error(n: usize, eps: f64) -> Result<f64, JsError> {
    let grid = TorusGrid::new(1, n, 1.0).map_err(js)?;
    let profile = make_profile(1, DEFAULT_SUPPORT).map_err(js)?;
    operator_probe_error(&grid, &profile, eps, 0.0).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = "[grid]\nd = 1\nN = 32\n[model]\nn = 1\neps = 0.2\nmin_annulus_cells = 2\n\
        [scheme]\ntau = 1e-4\n[init]\npreset = perturbed_uniform\nseed = 1\n[run]\nt_final = 3e-4\n";

    #[test]
    fn simulation_stops_at_final_time() {
        let mut s = Simulation::new(CONFIG).unwrap();
        let e0 = s.energy();
        assert_eq!(s.advance(10).unwrap(), 3);
        assert!((s.time() - 3e-4).abs() < 1e-15);
        assert!(s.energy() <= e0 + 1e-9);
        assert!(s.simplex_deviation() < 1e-12);
        assert_eq!(s.field(1).unwrap().len(), 32);
    }

    #[test]
    fn symbol_tracks_laplacian_at_low_modes() {
        let c = symbol_curve(256, 0.05).unwrap();
        assert_eq!(c.len(), 2 * 129);
        assert_eq!(c[1], 0.0);
        assert!((c[3] / c[2] - 1.0).abs() < 1e-2);
        assert!(probe_error(256, 0.05).unwrap() < probe_error(256, 0.1).unwrap());
    }
}
