use std::f64::consts::PI;

use super::{fit_order, strictly_decreasing, time_integral, variation, SweepReport};
use crate::config::{KindConfig, RunConfig};
use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::kernel::{KernelProfile, NonlocalOperator};
use crate::model::State;
use crate::scheme::{explicit_integrate, implicit_step, run, stable_explicit_dt, RunObserver, StepResult};

/// A trajectory held constant on each step interval: `states[p]` is the
/// value on `(times[p-1], times[p]]`, `states[0]` the value at `times[0]`.
#[derive(Clone, Debug)]
pub struct PiecewiseConstant {
    pub times: Vec<f64>,
    pub states: Vec<State>,
}

impl PiecewiseConstant {
    pub fn new(initial: State) -> Self {
        Self {
            times: vec![initial.time()],
            states: vec![initial],
        }
    }

    pub fn push(&mut self, state: State) {
        self.times.push(state.time());
        self.states.push(state);
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    /// Index of the state valid at `t`, with `t` in `(start, end]`.
    fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t).clamp(1, self.times.len() - 1)
    }
}

impl RunObserver for PiecewiseConstant {
    fn on_step(&mut self, result: &StepResult) -> Result<()> {
        self.push(result.state.clone());
        Ok(())
    }
}

/// Per-species `L2(0,T; L2)` distances between two trajectories on the same
/// grid and time interval, integrated exactly over the union of breakpoints.
pub fn l2l2_distance(a: &PiecewiseConstant, b: &PiecewiseConstant) -> Result<Vec<f64>> {
    let species = a.states[0].species();
    if b.states[0].species() != species || a.states[0].grid() != b.states[0].grid() {
        return Err(Error::GridMismatch);
    }
    let span = (a.end() - a.start()).abs().max(b.end() - b.start());
    if (a.start() - b.start()).abs() > 1e-9 * span.max(1e-300) || (a.end() - b.end()).abs() > 1e-9 * span.max(1e-300) {
        return Err(Error::InvalidState(format!(
            "trajectories cover [{}, {}] and [{}, {}]",
            a.start(),
            a.end(),
            b.start(),
            b.end()
        )));
    }
    let mut breaks: Vec<f64> = a.times.iter().chain(&b.times).cloned().collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * span);
    let grid = a.states[0].grid();
    let mut sums = vec![0.0; species];
    for w in breaks.windows(2) {
        let dt = w[1] - w[0];
        if dt <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let (ua, ub) = (&a.states[a.index_at(mid)], &b.states[b.index_at(mid)]);
        for (i, sum) in sums.iter_mut().enumerate() {
            let diff: Vec<f64> = ua
                .field(i)
                .values()
                .iter()
                .zip(ub.field(i).values())
                .map(|(x, y)| (x - y).powi(2))
                .collect();
            *sum += dt * grid.integrate_raw(&diff);
        }
    }
    Ok(sums.into_iter().map(f64::sqrt).collect())
}

/// `|B v + Lap v|_2 / |Lap v|_2` for the probe `v = sin(2 pi x_1 / extent)`.
pub fn operator_probe_error(grid: &TorusGrid, profile: &KernelProfile, eps: f64, min_cells: f64) -> Result<f64> {
    let op = NonlocalOperator::build_with_guard(grid, profile, eps, min_cells)?;
    let v: Vec<f64> = (0..grid.len())
        .map(|x| (2.0 * PI * grid.coords(x)[0] / grid.extent()).sin())
        .collect();
    let bv = op.apply_raw(&v);
    let lap = grid.laplacian_raw(&v);
    let diff: Vec<f64> = bv.iter().zip(&lap).map(|(b, l)| b + l).collect();
    Ok((grid.inner_raw(&diff, &diff) / grid.inner_raw(&lap, &lap)).sqrt())
}

/// Runs `job` over `items`, in parallel when more than one thread is allowed.
/// Results keep the input order.
fn map_jobs<T: Sync, R: Send>(threads: usize, items: &[T], job: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    #[cfg(feature = "parallel")]
    if threads > 1 && items.len() > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
        return pool.install(|| items.par_iter().map(&job).collect());
    }
    let _ = threads;
    items.iter().map(job).collect()
}

fn trajectory(config: &RunConfig) -> Result<PiecewiseConstant> {
    let model = config.build_model()?;
    let initial = config.initial_state()?;
    let mut traj = PiecewiseConstant::new(initial.clone());
    run(&model, &config.scheme, initial, config.t_final, 0, &mut traj)?;
    Ok(traj)
}

/// Time-integrated estimate quantities for each `tau`, with flags for
/// `< 2x` variation and for the `tau |mu|_{H2}^2` integral decreasing as
/// `tau` decreases. A single `tau` yields no flags.
pub fn check_tau_uniformity(config: &RunConfig, taus: &[f64]) -> Result<SweepReport> {
    if taus.is_empty() {
        return Err(Error::Validation("empty tau list".into()));
    }
    let rows = map_jobs(config.effective_threads(), taus, |&tau| {
        let cfg = config.with_tau(tau);
        cfg.validate()?;
        let model = cfg.build_model()?;
        let initial = cfg.initial_state()?;
        let out = run(&model, &cfg.scheme, initial, cfg.t_final, 0, &mut crate::scheme::NullObserver)?;
        let r = &out.records;
        Ok(vec![
            time_integral(r, |x| x.fisher.iter().sum()),
            time_integral(r, |x| x.nonlocal_grad_form.iter().sum()),
            time_integral(r, |x| x.flux_norm),
            time_integral(r, |x| x.mu_h2_sq),
            out.steps as f64,
        ])
    })?;
    let columns: Vec<String> = ["fisher_int", "nonlocal_grad_form_int", "flux_norm_int", "mu_h2_sq_int", "steps"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut report = SweepReport {
        parameter: "tau".into(),
        values: taus.to_vec(),
        columns,
        rows,
        orders: vec![],
        flags: vec![],
    };
    if taus.len() > 1 {
        for name in ["fisher_int", "nonlocal_grad_form_int", "flux_norm_int"] {
            let col = report.column(name).expect("column");
            report.flags.push((format!("{name} varies < 2x"), variation(&col) < 2.0));
        }
        let mut by_tau: Vec<(f64, f64)> = taus.iter().cloned().zip(report.column("mu_h2_sq_int").expect("column")).collect();
        by_tau.sort_by(|a, b| b.0.total_cmp(&a.0));
        let vals: Vec<f64> = by_tau.iter().map(|p| p.1).collect();
        report
            .flags
            .push(("mu_h2_sq_int decreases with tau".into(), strictly_decreasing(&vals)));
        if let Some(fit) = fit_order(taus, &report.column("mu_h2_sq_int").expect("column")) {
            report.orders.push(("mu_h2_sq_int".into(), fit));
        }
    }
    Ok(report)
}

/// Distances between nonlocal solutions for each `eps` and the local
/// solution from the same initial data, plus the operator probe error.
/// Flags strict decrease along the list when it has more than one entry.
pub fn check_eps_convergence(config: &RunConfig, eps_list: &[f64]) -> Result<SweepReport> {
    if eps_list.is_empty() {
        return Err(Error::Validation("empty eps list".into()));
    }
    let grid = config.build_grid()?;
    let profile = crate::kernel::make_profile(grid.dim(), config.model.support)?;
    // Fail on the guard before any time stepping.
    for &eps in eps_list {
        NonlocalOperator::build_with_guard(&grid, &profile, eps, config.model.min_annulus_cells)?;
    }
    let reference = trajectory(&config.with_kind(KindConfig::Local))?;
    let species = config.model.species;
    let rows = map_jobs(config.effective_threads(), eps_list, |&eps| {
        let traj = trajectory(&config.with_kind(KindConfig::Nonlocal { eps }))?;
        let d = l2l2_distance(&traj, &reference)?;
        let total = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut row = vec![total];
        row.extend(d);
        row.push(operator_probe_error(&grid, &profile, eps, config.model.min_annulus_cells)?);
        Ok(row)
    })?;
    let mut columns = vec!["l2l2_total".to_string()];
    columns.extend((0..species).map(|i| format!("l2l2_u{i}")));
    columns.push("probe_error".into());
    let mut report = SweepReport {
        parameter: "eps".into(),
        values: eps_list.to_vec(),
        columns,
        rows,
        orders: vec![],
        flags: vec![],
    };
    if eps_list.len() > 1 {
        for name in ["l2l2_total", "probe_error"] {
            let col = report.column(name).expect("column");
            report.flags.push((format!("{name} strictly decreasing"), strictly_decreasing(&col)));
            if let Some(fit) = fit_order(eps_list, &col) {
                report.orders.push((name.to_string(), fit));
            }
        }
    }
    Ok(report)
}

/// One implicit step of each `tau` against forward-Euler micro-stepping over
/// the same interval at the heuristic stable step, with the fitted order.
pub fn oracle_order_study(config: &RunConfig, taus: &[f64]) -> Result<SweepReport> {
    if taus.is_empty() {
        return Err(Error::Validation("empty tau list".into()));
    }
    let model = config.build_model()?;
    let initial = config.initial_state()?;
    let dt = stable_explicit_dt(&model);
    let rows = map_jobs(config.effective_threads(), taus, |&tau| {
        let implicit = implicit_step(&model, &config.scheme.with_tau(tau), &initial)?;
        let explicit = explicit_integrate(&model, &initial, tau, dt)?;
        Ok(vec![implicit.state.distance_l2(&explicit), (tau / dt).ceil()])
    })?;
    let mut report = SweepReport {
        parameter: "tau".into(),
        values: taus.to_vec(),
        columns: vec!["l2_difference".into(), "explicit_steps".into()],
        rows,
        orders: vec![],
        flags: vec![],
    };
    if let Some(fit) = fit_order(taus, &report.column("l2_difference").expect("column")) {
        report.orders.push(("l2_difference".into(), fit));
        report.flags.push(("observed order >= 0.9".into(), fit.order >= 0.9));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::kernel::{make_profile, DEFAULT_SUPPORT};

    fn state(g: &TorusGrid, a: f64, t: f64) -> State {
        let v: Vec<f64> = (0..g.len()).map(|_| a).collect();
        let w = v.iter().map(|x| 1.0 - x).collect();
        State::from_raw(g, vec![v, w], t).unwrap()
    }

    #[test]
    fn l2l2_of_offset_trajectories() {
        let g = TorusGrid::new(1, 8, 1.0).unwrap();
        let mut a = PiecewiseConstant::new(state(&g, 0.5, 0.0));
        a.push(state(&g, 0.6, 1.0));
        a.push(state(&g, 0.6, 2.0));
        let mut b = PiecewiseConstant::new(state(&g, 0.5, 0.0));
        b.push(state(&g, 0.5, 0.5));
        b.push(state(&g, 0.5, 2.0));
        let d = l2l2_distance(&a, &b).unwrap();
        let expect = (2.0f64 * 0.01).sqrt();
        assert!((d[0] - expect).abs() < 1e-14 && (d[1] - expect).abs() < 1e-14);
        assert_eq!(l2l2_distance(&a, &a).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn probe_error_decreases_with_eps() {
        let g = TorusGrid::new(1, 512, 1.0).unwrap();
        let p = make_profile(1, DEFAULT_SUPPORT).unwrap();
        let e: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&eps| operator_probe_error(&g, &p, eps, 3.0).unwrap())
            .collect();
        assert!(strictly_decreasing(&e), "{e:?}");
    }

    fn small_config() -> RunConfig {
        parse_config(
            "[grid]\nd = 1\nN = 64\n[model]\nn = 1\neps = 0.2\nmin_annulus_cells = 3\nC = 0.5\n\
             [scheme]\ntau = 2e-4\n[init]\npreset = perturbed_uniform\nseed = 3\namplitude = 0.2\nmodes = 1\n\
             [run]\nt_final = 1e-3\n",
        )
        .unwrap()
    }

    #[test]
    fn single_tau_has_no_flags() {
        let r = check_tau_uniformity(&small_config(), &[2e-4]).unwrap();
        assert!(r.flags.is_empty() && r.passed());
        assert_eq!(r.rows.len(), 1);
        assert!(r.rows[0].iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn repeated_eps_gives_identical_rows() {
        let r = check_eps_convergence(&small_config(), &[0.2, 0.2]).unwrap();
        assert_eq!(r.rows[0], r.rows[1]);
        assert_eq!(r.flag("l2l2_total strictly decreasing"), Some(false));
        assert!(r.rows[0][0] > 0.0);
    }

    #[test]
    fn oracle_difference_shrinks_with_tau() {
        let r = oracle_order_study(&small_config(), &[2e-4, 1e-4]).unwrap();
        let d = r.column("l2_difference").unwrap();
        assert!(d[1] < d[0], "{d:?}");
    }
}
