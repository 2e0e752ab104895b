//! Per-step estimate quantities and the parameter sweeps built on them.

mod sweep;

pub use sweep::{
    check_eps_convergence, check_tau_uniformity, l2l2_distance, operator_probe_error, oracle_order_study,
    PiecewiseConstant,
};

use crate::error::Result;
use crate::model::{ChemPotential, Model, State, LOG_FLOOR};
use crate::scheme::StepStats;

/// Floor on the Fisher-information denominator.
pub const FISHER_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub time: f64,
    pub tau: f64,
    pub energy_total: f64,
    pub energy_entropy: f64,
    /// Nonlocal interaction energy, or the Dirichlet energy for local runs.
    pub energy_interaction: f64,
    pub mass: Vec<f64>,
    /// `int u_i^{p} - int u_i^{p-1}`; zero for the initial record.
    pub mass_drift_step: Vec<f64>,
    pub min_u: f64,
    pub max_u: f64,
    pub simplex_dev: f64,
    /// `int |grad u_i|^2 / max(u_i, FISHER_FLOOR)`.
    pub fisher: Vec<f64>,
    /// `c_ii sum_a <B d_a u_i, d_a u_i>`.
    pub nonlocal_grad_form: Vec<f64>,
    /// `sum_{i != j} |J_ij|^2`.
    pub flux_norm: f64,
    /// `tau sum_i |mu_i|_{H2}^2`.
    pub mu_h2_sq: f64,
    /// `int |mu_i|`.
    pub mu_l1: Vec<f64>,
    pub outer_iterations: usize,
    pub s2_iterations: usize,
    pub cg_iterations: usize,
    pub outer_residual: f64,
    pub equation_residual: f64,
    pub cg_residual: f64,
    /// NaN when verification is off.
    pub fixed_point_residual: f64,
    pub retried: bool,
    pub fisher_floor_hits: usize,
    pub log_clamp_hits: usize,
}

/// Evaluates every estimate quantity for one state and its chemical
/// potential. Solver statistics are left at zero; see [`DiagnosticsRecord::with_step`].
pub fn estimates(model: &Model, state: &State, mu: &ChemPotential, tau: f64) -> Result<DiagnosticsRecord> {
    let grid = model.grid();
    let energy = model.energy(state)?;
    let c = model.params().c();
    let mut fisher = Vec::with_capacity(state.species());
    let mut grad_form = Vec::with_capacity(state.species());
    let mut fisher_floor_hits = 0;
    let mut log_clamp_hits = 0;
    for (i, f) in state.fields().iter().enumerate() {
        let u = f.values();
        let grads = grid.gradient_raw(u);
        let mut fi = 0.0;
        let mut gi = 0.0;
        for g in &grads {
            fi += g
                .iter()
                .zip(u)
                .map(|(d, &v)| d * d / v.max(FISHER_FLOOR))
                .sum::<f64>();
            gi += grid.inner_raw(&model.interaction().apply_raw(g), g);
        }
        fisher.push(fi * grid.cell_volume());
        grad_form.push(c[(i, i)] * gi);
        fisher_floor_hits += u.iter().filter(|&&v| v < FISHER_FLOOR).count();
        log_clamp_hits += u.iter().filter(|&&v| v < LOG_FLOOR).count();
    }
    let flux_norm = model.fluxes(state)?.norm_sq();
    let mu_h2_sq = tau * mu.fields.iter().map(|m| grid.sobolev_sq_raw(m.values(), 2)).sum::<f64>();
    let mu_l1 = mu
        .fields
        .iter()
        .map(|m| grid.integrate_raw(&m.values().iter().map(|v| v.abs()).collect::<Vec<_>>()))
        .collect();
    Ok(DiagnosticsRecord {
        step: 0,
        time: state.time(),
        tau,
        energy_total: energy.total,
        energy_entropy: energy.entropy,
        energy_interaction: energy.interaction,
        mass: state.masses(),
        mass_drift_step: vec![0.0; state.species()],
        min_u: state.min_value(),
        max_u: state.max_value(),
        simplex_dev: state.simplex_deviation(),
        fisher,
        nonlocal_grad_form: grad_form,
        flux_norm,
        mu_h2_sq,
        mu_l1,
        outer_iterations: 0,
        s2_iterations: 0,
        cg_iterations: 0,
        outer_residual: 0.0,
        equation_residual: 0.0,
        cg_residual: 0.0,
        fixed_point_residual: f64::NAN,
        retried: false,
        fisher_floor_hits,
        log_clamp_hits,
    })
}

impl DiagnosticsRecord {
    /// Attaches the step index, solver statistics and the mass change
    /// relative to the previous record.
    pub fn with_step(mut self, step: usize, stats: &StepStats, previous_mass: &[f64]) -> Self {
        self.step = step;
        self.outer_iterations = stats.outer_iterations;
        self.s2_iterations = stats.s2_iterations;
        self.cg_iterations = stats.cg_iterations;
        self.outer_residual = stats.outer_residual;
        self.equation_residual = stats.equation_residual;
        self.cg_residual = stats.cg_residual;
        self.fixed_point_residual = stats.fixed_point_residual.unwrap_or(f64::NAN);
        self.retried = stats.retried;
        self.mass_drift_step = self.mass.iter().zip(previous_mass).map(|(a, b)| a - b).collect();
        self
    }

    /// CSV column names; species-indexed fields are expanded.
    pub fn csv_header(species: usize, local: bool) -> Vec<String> {
        let per = |name: &'static str| (0..species).map(move |i| format!("{name}_{i}"));
        let mut h: Vec<String> = ["step", "time", "tau", "energy_total", "energy_entropy"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.push(if local { "energy_dirichlet" } else { "energy_nonlocal" }.to_string());
        h.extend(per("mass"));
        h.extend(per("mass_drift_step"));
        h.extend(["min_u", "max_u", "simplex_dev"].iter().map(|s| s.to_string()));
        h.extend(per("fisher"));
        h.extend(per("nonlocal_grad_form"));
        h.extend(["flux_norm", "mu_h2_sq"].iter().map(|s| s.to_string()));
        h.extend(per("mu_l1"));
        h.extend(
            [
                "outer_iterations",
                "s2_iterations",
                "cg_iterations",
                "outer_residual",
                "equation_residual",
                "cg_residual",
                "fixed_point_residual",
                "retried",
                "fisher_floor_hits",
                "log_clamp_hits",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:e}");
        let mut r = vec![self.step.to_string(), f(self.time), f(self.tau)];
        r.extend([self.energy_total, self.energy_entropy, self.energy_interaction].map(f));
        r.extend(self.mass.iter().map(|&v| f(v)));
        r.extend(self.mass_drift_step.iter().map(|&v| f(v)));
        r.extend([self.min_u, self.max_u, self.simplex_dev].map(f));
        r.extend(self.fisher.iter().map(|&v| f(v)));
        r.extend(self.nonlocal_grad_form.iter().map(|&v| f(v)));
        r.extend([self.flux_norm, self.mu_h2_sq].map(f));
        r.extend(self.mu_l1.iter().map(|&v| f(v)));
        r.extend([self.outer_iterations, self.s2_iterations, self.cg_iterations].map(|v| v.to_string()));
        r.extend([self.outer_residual, self.equation_residual, self.cg_residual, self.fixed_point_residual].map(f));
        r.push((self.retried as u8).to_string());
        r.push(self.fisher_floor_hits.to_string());
        r.push(self.log_clamp_hits.to_string());
        r
    }
}

/// First pair of consecutive records whose energy rose by more than the slack.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyViolation {
    /// Index of the later record of the offending pair.
    pub index: usize,
    pub previous: f64,
    pub current: f64,
    pub slack: f64,
}

/// Checks `E_{p+1} <= E_p + 10 outer_tol (1 + |E_p|)` for all consecutive records.
pub fn check_energy_monotone(records: &[DiagnosticsRecord], outer_tol: f64) -> std::result::Result<(), EnergyViolation> {
    check_energy_sequence(&records.iter().map(|r| r.energy_total).collect::<Vec<_>>(), outer_tol)
}

pub fn check_energy_sequence(energies: &[f64], outer_tol: f64) -> std::result::Result<(), EnergyViolation> {
    for (p, w) in energies.windows(2).enumerate() {
        let slack = 10.0 * outer_tol * (1.0 + w[0].abs());
        if !(w[1] <= w[0] + slack) {
            return Err(EnergyViolation {
                index: p + 1,
                previous: w[0],
                current: w[1],
                slack,
            });
        }
    }
    Ok(())
}

/// Time integrals with the piecewise-constant interpolant: each record after
/// the first covers the step that produced it, weighted by that step's `tau`.
pub fn time_integral(records: &[DiagnosticsRecord], quantity: impl Fn(&DiagnosticsRecord) -> f64) -> f64 {
    records.iter().skip(1).map(|r| r.tau * quantity(r)).sum()
}

/// Least-squares fit of `log err = order * log param + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderFit {
    pub order: f64,
    /// Root-mean-square residual of the fit in natural-log units.
    pub residual: f64,
}

pub fn fit_order(params: &[f64], errors: &[f64]) -> Option<OrderFit> {
    let pts: Vec<(f64, f64)> = params
        .iter()
        .zip(errors)
        .filter(|(p, e)| **p > 0.0 && **e > 0.0)
        .map(|(p, e)| (p.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let order = sxy / sxx;
    let b = my - order * mx;
    let residual = (pts.iter().map(|p| (p.1 - order * p.0 - b).powi(2)).sum::<f64>() / n).sqrt();
    Some(OrderFit { order, residual })
}

/// Central-difference errors `|(E(u + s d) - E(u - s d)) / 2s - <mu, d>|` for
/// each step `s`, with `d` projected onto the tangent space of the simplex.
pub fn energy_derivative_errors(model: &Model, state: &State, direction: &[Vec<f64>], steps: &[f64]) -> Result<Vec<f64>> {
    let grid = model.grid();
    let s = state.species();
    if direction.len() != s || direction.iter().any(|d| d.len() != grid.len()) {
        return Err(crate::error::Error::SizeMismatch {
            expected: s * grid.len(),
            actual: direction.iter().map(|d| d.len()).sum(),
        });
    }
    let mut d: Vec<Vec<f64>> = direction.to_vec();
    for x in 0..grid.len() {
        let mean = (0..s).map(|i| d[i][x]).sum::<f64>() / s as f64;
        for row in d.iter_mut() {
            row[x] -= mean;
        }
    }
    let mu = model.chemical_potential(state)?;
    let exact: f64 = mu.fields.iter().zip(&d).map(|(m, di)| grid.inner_raw(m.values(), di)).sum();
    let base = state.to_raw();
    let shifted = |sign: f64, h: f64| -> Result<f64> {
        let raw = base
            .iter()
            .zip(&d)
            .map(|(u, di)| u.iter().zip(di).map(|(a, b)| a + sign * h * b).collect())
            .collect();
        Ok(model.energy(&State::from_raw_unchecked(grid, raw, state.time())?)?.total)
    };
    steps
        .iter()
        .map(|&h| Ok(((shifted(1.0, h)? - shifted(-1.0, h)?) / (2.0 * h) - exact).abs()))
        .collect()
}

/// Results of a parameter sweep: one row of metrics per parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub parameter: String,
    pub values: Vec<f64>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Fitted orders of named columns against the parameter.
    pub orders: Vec<(String, OrderFit)>,
    /// Named pass/fail properties; empty when there is nothing to compare.
    pub flags: Vec<(String, bool)>,
}

impl SweepReport {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn flag(&self, name: &str) -> Option<bool> {
        self.flags.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn passed(&self) -> bool {
        self.flags.iter().all(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.parameter);
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (v, row) in self.values.iter().zip(&self.rows) {
            out.push_str(&format!("{v:e}"));
            for x in row {
                out.push_str(&format!(",{x:e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("sweep over {} = {:?}\n", self.parameter, self.values));
        for (name, fit) in &self.orders {
            out.push_str(&format!(
                "  order of {name}: {:.3} (fit residual {:.2e})\n",
                fit.order, fit.residual
            ));
        }
        for (name, ok) in &self.flags {
            out.push_str(&format!("  {}: {name}\n", if *ok { "PASS" } else { "FAIL" }));
        }
        out
    }
}

/// `max / min` of positive values; `f64::INFINITY` if any is nonpositive.
pub(crate) fn variation(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else if max == 0.0 && min == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

pub(crate) fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ScalarField, TorusGrid};
    use crate::kernel::{make_profile, DEFAULT_SUPPORT};
    use crate::model::{ModelKind, ModelParams};
    use crate::oracle;
    use crate::scheme::ops::tangent_potential;
    use std::f64::consts::PI;

    fn model(n: usize, eps: f64) -> Model {
        let g = TorusGrid::new(1, n, 1.0).unwrap();
        let kind = ModelKind::Nonlocal {
            eps,
            profile: make_profile(1, DEFAULT_SUPPORT).unwrap(),
            min_annulus_cells: 0.5,
        };
        Model::new(ModelParams::uniform(2, 1.0, 0.7, kind).unwrap(), &g).unwrap()
    }

    fn mu_of(m: &Model, s: &State) -> ChemPotential {
        let flat: Vec<f64> = s.to_raw().concat();
        let mu = tangent_potential(m, &flat);
        ChemPotential {
            fields: mu
                .chunks_exact(m.grid().len())
                .map(|c| ScalarField::new(m.grid(), c.to_vec()).unwrap())
                .collect(),
        }
    }

    fn wave(g: &TorusGrid) -> State {
        let a: Vec<f64> = (0..g.len())
            .map(|x| 0.5 + 0.3 * (2.0 * PI * g.coords(x)[0]).sin() + 0.1 * (6.0 * PI * g.coords(x)[0]).cos())
            .collect();
        let b = a.iter().map(|v| 1.0 - v).collect();
        State::from_raw(g, vec![a, b], 0.0).unwrap()
    }

    #[test]
    fn uniform_state_has_vanishing_estimates() {
        let m = model(32, 0.2);
        let u = State::uniform(m.grid(), 2);
        let r = estimates(&m, &u, &mu_of(&m, &u), 1e-3).unwrap();
        assert_eq!(r.fisher, vec![0.0, 0.0]);
        assert_eq!(r.nonlocal_grad_form, vec![0.0, 0.0]);
        assert!(r.flux_norm < 1e-28);
        assert_eq!(r.fisher_floor_hits, 0);
    }

    #[test]
    fn estimates_are_nonnegative_and_floor_inactive() {
        let m = model(64, 0.2);
        let u = wave(m.grid());
        assert!(u.min_value() > 1e-6);
        let r = estimates(&m, &u, &mu_of(&m, &u), 1e-3).unwrap();
        assert!(r.fisher.iter().chain(&r.nonlocal_grad_form).all(|&v| v >= -1e-12));
        assert!(r.flux_norm >= 0.0 && r.mu_h2_sq >= 0.0);
        assert_eq!(r.fisher_floor_hits, 0);
        assert_eq!(r.log_clamp_hits, 0);
    }

    #[test]
    fn gradient_form_matches_double_sum() {
        let m = model(8, 0.45);
        let g = m.grid();
        let u = wave(g);
        let r = estimates(&m, &u, &mu_of(&m, &u), 1e-3).unwrap();
        let profile = make_profile(1, DEFAULT_SUPPORT).unwrap();
        for i in 0..2 {
            let grads = g.gradient_raw(u.field(i).values());
            let direct = 0.7 * oracle::gradient_form_double_sum(g, &profile, 0.45, &grads);
            let got = r.nonlocal_grad_form[i];
            assert!((got - direct).abs() <= 1e-10 * direct.abs(), "{got} {direct}");
        }
    }

    #[test]
    fn energy_monotone_checks() {
        assert!(check_energy_sequence(&[1.0, 1.0, 1.0], 1e-9).is_ok());
        assert!(check_energy_sequence(&[3.0, 2.0, 1.0], 1e-9).is_ok());
        let slack = 10.0 * 1e-9 * 2.0;
        let err = check_energy_sequence(&[1.0, 0.5, 1.0 + 2.0 * slack, 0.0], 1e-9);
        // 0.5 -> 1.00000004 is the first rise beyond slack
        let v = err.unwrap_err();
        assert_eq!(v.index, 2);
        assert_eq!(v.previous, 0.5);
        let err = check_energy_sequence(&[1.0, 1.0 + 2.0 * slack], 1e-9).unwrap_err();
        assert_eq!(err.index, 1);
        assert!((err.slack - slack).abs() < 1e-24);
    }

    #[test]
    fn order_fit_recovers_power_law() {
        let p = [4e-4, 2e-4, 1e-4];
        let e: Vec<f64> = p.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        let fit = fit_order(&p, &e).unwrap();
        assert!((fit.order - 1.5).abs() < 1e-12 && fit.residual < 1e-12);
        assert!(fit_order(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn csv_row_matches_header() {
        let m = model(16, 0.3);
        let u = wave(m.grid());
        let r = estimates(&m, &u, &mu_of(&m, &u), 1e-3).unwrap();
        assert_eq!(r.csv_row().len(), DiagnosticsRecord::csv_header(2, false).len());
        assert!(DiagnosticsRecord::csv_header(2, true).contains(&"energy_dirichlet".to_string()));
    }
}
