//! Acceptance criteria 1-11. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::fs;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use nlch::config::{parse_config, RunConfig};
use nlch::diagnostics::{
    check_energy_monotone, check_eps_convergence, check_tau_uniformity, energy_derivative_errors, operator_probe_error,
    oracle_order_study, DiagnosticsRecord,
};
use nlch::grid::{ScalarField, TorusGrid};
use nlch::io::{read_snapshot, write_snapshot, RunWriter};
use nlch::kernel::{make_profile, NonlocalOperator, DEFAULT_SUPPORT};
use nlch::model::{ChemPotential, Model, ModelKind, ModelParams, State};
use nlch::oracle;
use nlch::scheme::{run, s2_objective, step_s2, RunObserver, SchemeParams, StepResult};

type Outcome = Result<String, String>;

fn config(d: usize, n: usize, species_n: usize, extra_model: &str, tau: f64, init: &str, t_final: f64) -> RunConfig {
    parse_config(&format!(
        "[grid]\nd = {d}\nN = {n}\n[model]\nn = {species_n}\n{extra_model}\n[scheme]\ntau = {tau}\n\
         [init]\n{init}\n[run]\nt_final = {t_final}\n[output]\nsnapshot_every = 0\n"
    ))
    .expect("acceptance config")
}

#[derive(Default)]
struct Floors(Vec<f64>);

impl RunObserver for Floors {
    fn on_step(&mut self, r: &StepResult) -> nlch::error::Result<()> {
        self.0.push(r.positivity_floor);
        Ok(())
    }
}

struct InvariantRun {
    label: String,
    records: Vec<DiagnosticsRecord>,
    floors: Vec<f64>,
    outer_tol: f64,
    elapsed: Duration,
}

fn invariant_runs() -> Result<Vec<InvariantRun>, String> {
    let mut out = Vec::new();
    for d in [1, 2] {
        for n in [64, 128] {
            for species_n in [1, 2] {
                let cfg = config(
                    d,
                    n,
                    species_n,
                    "eps = 0.1\nmin_annulus_cells = 3",
                    1e-4,
                    "preset = perturbed_uniform\nseed = 42\namplitude = 0.3",
                    100.0 * 1e-4,
                );
                let label = format!("d={d} N={n} n={species_n}");
                let start = Instant::now();
                let model = cfg.build_model().map_err(|e| format!("{label}: {e}"))?;
                let mut floors = Floors::default();
                let summary = run(&model, &cfg.scheme, cfg.initial_state().map_err(|e| e.to_string())?, cfg.t_final, 0, &mut floors)
                    .map_err(|e| format!("{label}: {e}"))?;
                if summary.steps != 100 {
                    return Err(format!("{label}: {} steps", summary.steps));
                }
                out.push(InvariantRun {
                    label,
                    records: summary.records,
                    floors: floors.0,
                    outer_tol: cfg.scheme.outer_tol,
                    elapsed: start.elapsed(),
                });
            }
        }
    }
    Ok(out)
}

fn criterion_1(runs: &[InvariantRun]) -> Outcome {
    let mut worst_dev: f64 = 0.0;
    let mut worst_floor = f64::INFINITY;
    let mut slowest = Duration::ZERO;
    for r in runs {
        let dev = r.records.iter().map(|x| x.simplex_dev).fold(0.0, f64::max);
        let min_u = r.records.iter().map(|x| x.min_u).fold(f64::INFINITY, f64::min);
        let max_u = r.records.iter().map(|x| x.max_u).fold(0.0, f64::max);
        let floor = r.floors.iter().cloned().fold(f64::INFINITY, f64::min);
        if dev > 1e-10 || !(min_u > 0.0) || !(max_u < 1.0) || !(floor > 0.0) || r.floors.len() != 100 {
            return Err(format!("{}: simplex_dev {dev:e}, u in [{min_u:e}, {max_u}], floor {floor:e}", r.label));
        }
        if r.elapsed > Duration::from_secs(120) {
            return Err(format!("{}: {:.1} s > 120 s", r.label, r.elapsed.as_secs_f64()));
        }
        worst_dev = worst_dev.max(dev);
        worst_floor = worst_floor.min(floor);
        slowest = slowest.max(r.elapsed);
    }
    Ok(format!(
        "{} runs, max simplex_dev {worst_dev:.1e}, min floor {worst_floor:.3e}, slowest run {:.1} s",
        runs.len(),
        slowest.as_secs_f64()
    ))
}

fn criterion_2(runs: &[InvariantRun]) -> Outcome {
    let mut pairs = 0;
    for r in runs {
        if let Err(v) = check_energy_monotone(&r.records, r.outer_tol) {
            return Err(format!(
                "{}: E[{}] = {:e} > E[{}] = {:e} + {:e}",
                r.label,
                v.index,
                v.current,
                v.index - 1,
                v.previous,
                v.slack
            ));
        }
        pairs += r.records.len() - 1;
    }
    Ok(format!("{pairs} consecutive pairs, zero violations"))
}

fn criterion_3() -> Outcome {
    let mut mean = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for tau in [2e-4, 1e-4] {
        let cfg = config(
            1,
            64,
            1,
            "eps = 0.1\nmin_annulus_cells = 3",
            tau,
            "preset = perturbed_uniform\nseed = 7\namplitude = 0.3\nfractions = 0.7, 0.3",
            50.0 * tau,
        );
        let model = cfg.build_model().map_err(|e| e.to_string())?;
        let s = run(&model, &cfg.scheme, cfg.initial_state().map_err(|e| e.to_string())?, cfg.t_final, 0, &mut nlch::scheme::NullObserver)
            .map_err(|e| e.to_string())?;
        if s.steps != 50 {
            return Err(format!("tau {tau:e}: {} steps", s.steps));
        }
        let steps = &s.records[1..];
        for r in steps {
            for i in 0..2 {
                let bound = r.tau * r.tau * r.mu_l1[i] + 10.0 * cfg.scheme.cg_tol;
                worst_ratio = worst_ratio.max(r.mass_drift_step[i].abs() / bound);
                if r.mass_drift_step[i].abs() > bound {
                    return Err(format!(
                        "tau {tau:e} step {} species {i}: drift {:e} > {bound:e}",
                        r.step, r.mass_drift_step[i]
                    ));
                }
            }
        }
        mean.push(
            (0..2)
                .map(|i| steps.iter().map(|r| r.mass_drift_step[i].abs()).sum::<f64>() / steps.len() as f64)
                .collect::<Vec<_>>(),
        );
    }
    let ratios: Vec<f64> = (0..2).map(|i| mean[0][i] / mean[1][i]).collect();
    let msg = format!(
        "drift/bound <= {worst_ratio:.3}; mean drift ratio tau -> tau/2: {:.3}, {:.3}",
        ratios[0], ratios[1]
    );
    if ratios.iter().all(|r| (3.2..=4.8).contains(r)) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4() -> Outcome {
    let cfg = config(
        1,
        128,
        1,
        "eps = 0.1\nmin_annulus_cells = 3",
        1e-4,
        "preset = perturbed_uniform\nseed = 42\namplitude = 0.2\nmodes = 1",
        0.0,
    );
    let r = oracle_order_study(&cfg, &[4e-4, 2e-4, 1e-4]).map_err(|e| e.to_string())?;
    let diff = r.column("l2_difference").expect("column");
    let (_, fit) = r.orders.first().ok_or("no fit")?;
    let msg = format!(
        "L2 differences {:.3e}, {:.3e}, {:.3e}; observed order {:.3} (fit residual {:.1e})",
        diff[0], diff[1], diff[2], fit.order, fit.residual
    );
    if fit.order >= 0.9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_5() -> Outcome {
    let g = TorusGrid::new(1, 8, 1.0).map_err(|e| e.to_string())?;
    let eps = 0.45;
    let profile = make_profile(1, DEFAULT_SUPPORT).map_err(|e| e.to_string())?;
    let kind = ModelKind::Nonlocal {
        eps,
        profile: profile.clone(),
        min_annulus_cells: 0.5,
    };
    let c = [[1.0, 0.3], [0.3, 0.8]];
    let cm = DMatrix::from_fn(2, 2, |i, j| c[i][j]);
    let model = Model::new(
        ModelParams::new(DMatrix::from_element(2, 2, 1.0), cm, kind).map_err(|e| e.to_string())?,
        &g,
    )
    .map_err(|e| e.to_string())?;
    let b = oracle::dense_b(&g, &profile, eps);
    let cref: Vec<Vec<f64>> = c.iter().map(|r| r.to_vec()).collect();
    let mut rng = Pcg64::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut margin = f64::INFINITY;
    let instances = 5;
    for _ in 0..instances {
        let raw: Vec<Vec<f64>> = (0..2).map(|_| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mu = ChemPotential {
            fields: raw.iter().map(|v| ScalarField::new(&g, v.clone()).unwrap()).collect(),
        };
        let out = step_s2(&model, &SchemeParams::new(1e-3), &mu, None).map_err(|e| e.to_string())?;
        let (w_ref, _) = oracle::projected_gradient_s2(&b, &cref, &raw, g.cell_volume(), 1e-15, 500_000);
        for i in 0..2 {
            for x in 0..8 {
                worst = worst.max((out.state.field(i).values()[x] - w_ref[i][x]).abs());
            }
        }
        let f_star = s2_objective(&model, &mu, &out.state).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let mut raw_w = vec![vec![0.0; 8]; 2];
            for x in 0..8 {
                let a: f64 = rng.random_range(1e-6..1.0);
                raw_w[0][x] = a;
                raw_w[1][x] = 1.0 - a;
            }
            let w = State::from_raw(&g, raw_w, 0.0).map_err(|e| e.to_string())?;
            let f = s2_objective(&model, &mu, &w).map_err(|e| e.to_string())?;
            margin = margin.min(f - f_star);
        }
    }
    let msg = format!(
        "{instances} instances: max |w - w_ref| {worst:.2e}; min F(random) - F(w*) over 500 fields {margin:.3e}"
    );
    if worst <= 1e-6 && margin > 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut qmin = f64::INFINITY;
    let mut cmax: f64 = 0.0;
    let mut rng = Pcg64::seed_from_u64(6);
    for (d, n, eps) in [(1, 16, 0.45), (1, 8, 0.3), (2, 8, 0.45), (2, 16, 0.3)] {
        let g = TorusGrid::new(d, n, 1.0).map_err(|e| e.to_string())?;
        let p = make_profile(d, DEFAULT_SUPPORT).map_err(|e| e.to_string())?;
        let op = NonlocalOperator::build_with_guard(&g, &p, eps, 0.5).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = op.apply_raw(&v);
            let slow = oracle::apply_b_double_sum(&g, &p, eps, &v);
            let num: f64 = fast.iter().zip(&slow).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = slow.iter().map(|b| b * b).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
        for _ in 0..100 {
            let v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            qmin = qmin.min(g.inner_raw(&op.apply_raw(&v), &v));
        }
        let bc = op.apply_raw(&vec![3.7; g.len()]);
        cmax = cmax.max(bc.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let msg = format!("max relative error {worst:.2e}; min <Bv,v> {qmin:.3e}; max |B const| {cmax:.1e}");
    if worst <= 1e-10 && qmin >= -1e-12 && cmax <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let g = TorusGrid::new(1, 1024, 1.0).map_err(|e| e.to_string())?;
    let p = make_profile(1, DEFAULT_SUPPORT).map_err(|e| e.to_string())?;
    let e: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| operator_probe_error(&g, &p, eps, 8.0))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let msg = format!("probe errors {:.3e}, {:.3e}, {:.3e} in {elapsed:.2} s", e[0], e[1], e[2]);
    if e[1] < e[0] && e[2] < e[1] && elapsed <= 30.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = config(
        1,
        256,
        1,
        "eps = 0.2\nmin_annulus_cells = 3",
        1e-5,
        "preset = perturbed_uniform\nseed = 42\namplitude = 0.3",
        5e-3,
    );
    let r = check_eps_convergence(&cfg, &[0.2, 0.1, 0.05]).map_err(|e| e.to_string())?;
    let d = r.column("l2l2_total").expect("column");
    let elapsed = start.elapsed().as_secs_f64();
    let msg = format!(
        "L2(L2) distances {:.3e}, {:.3e}, {:.3e} in {elapsed:.1} s",
        d[0], d[1], d[2]
    );
    if d[1] < d[0] && d[2] < d[1] && elapsed <= 600.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_9() -> Outcome {
    let cfg = config(
        1,
        64,
        1,
        "eps = 0.1\nmin_annulus_cells = 3",
        1e-4,
        "preset = perturbed_uniform\nseed = 42\namplitude = 0.3\nmodes = 1",
        8e-3,
    );
    let r = check_tau_uniformity(&cfg, &[8e-4, 4e-4, 2e-4, 1e-4]).map_err(|e| e.to_string())?;
    let col = |n: &str| r.column(n).expect("column");
    let fmt = |v: Vec<f64>| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join("/");
    let msg = format!(
        "fisher {}; grad form {}; flux {}; tau|mu|^2 {}",
        fmt(col("fisher_int")),
        fmt(col("nonlocal_grad_form_int")),
        fmt(col("flux_norm_int")),
        fmt(col("mu_h2_sq_int"))
    );
    if r.passed() {
        Ok(msg)
    } else {
        let failed: Vec<&str> = r.flags.iter().filter(|f| !f.1).map(|f| f.0.as_str()).collect();
        Err(format!("{msg}; failed: {}", failed.join(", ")))
    }
}

fn criterion_10() -> Outcome {
    let mut slopes = Vec::new();
    for (d, n, species_n) in [(1, 64, 1), (2, 32, 2)] {
        let c = if species_n == 1 { "C = 1, 0.2; 0.2, 0.7" } else { "C = 1, 0.2, 0; 0.2, 1, 0.1; 0, 0.1, 0.5" };
        let cfg = config(
            d,
            n,
            species_n,
            &format!("eps = 0.2\nmin_annulus_cells = 3\n{c}"),
            1e-4,
            "preset = perturbed_uniform\nseed = 5\namplitude = 0.5",
            0.0,
        );
        let model = cfg.build_model().map_err(|e| e.to_string())?;
        let u = cfg.initial_state().map_err(|e| e.to_string())?;
        let mut rng = Pcg64::seed_from_u64(10);
        let dir: Vec<Vec<f64>> = (0..=species_n)
            .map(|_| (0..u.grid().len()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let steps = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
        let err = energy_derivative_errors(&model, &u, &dir, &steps).map_err(|e| e.to_string())?;
        for w in err.windows(2) {
            slopes.push((w[0] / w[1]).log2());
        }
    }
    let min = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let msg = format!(
        "halving slopes {}",
        slopes.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(", ")
    );
    if min >= 1.9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_11() -> Outcome {
    let cfg = config(
        2,
        32,
        2,
        "eps = 0.2\nmin_annulus_cells = 3",
        2e-4,
        "preset = dirichlet_random\nseed = 11\nalpha = 2",
        4e-3,
    );
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for k in 0..2 {
        let dir = tmp.path().join(format!("run{k}"));
        let model = cfg.build_model().map_err(|e| e.to_string())?;
        let mut w = RunWriter::create(&dir, 3, false, false).map_err(|e| e.to_string())?;
        run(&model, &cfg.scheme, cfg.initial_state().map_err(|e| e.to_string())?, cfg.t_final, 5, &mut w)
            .map_err(|e| e.to_string())?;
        let snaps = w.finish().map_err(|e| e.to_string())?;
        let mut bytes = fs::read(dir.join("diagnostics.csv")).map_err(|e| e.to_string())?;
        for s in &snaps {
            bytes.extend(fs::read(s).map_err(|e| e.to_string())?);
        }
        outputs.push((bytes, snaps));
    }
    if outputs[0].0 != outputs[1].0 {
        return Err("repeated runs differ".into());
    }
    let last = outputs[0].1.last().ok_or("no snapshots")?;
    let state = read_snapshot(last).map_err(|e| e.to_string())?;
    let again = tmp.path().join("again.bin");
    write_snapshot(&state, &again).map_err(|e| e.to_string())?;
    if fs::read(last).map_err(|e| e.to_string())? != fs::read(&again).map_err(|e| e.to_string())? {
        return Err("snapshot round trip changed bytes".into());
    }
    Ok(format!(
        "{} bytes of CSV + {} snapshots identical across runs; snapshot round trip bit-exact",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

fn report(id: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let r = f();
    let t = start.elapsed().as_secs_f64();
    match &r {
        Ok(m) => println!("PASS criterion {id:>2} ({title}): {m} [{t:.1} s]"),
        Err(m) => println!("FAIL criterion {id:>2} ({title}): {m} [{t:.1} s]"),
    }
    r.is_ok()
}

fn main() {
    let runs = invariant_runs();
    let mut ok = true;
    ok &= report(1, "simplex and box invariants", || criterion_1(runs.as_ref().map_err(|e| e.clone())?));
    ok &= report(2, "energy monotonicity", || criterion_2(runs.as_ref().map_err(|e| e.clone())?));
    ok &= report(3, "mass-drift law", criterion_3);
    ok &= report(4, "oracle equivalence", criterion_4);
    ok &= report(5, "S2 correctness", criterion_5);
    ok &= report(6, "operator correctness", criterion_6);
    ok &= report(7, "nonlocal-to-local, operator", criterion_7);
    ok &= report(8, "nonlocal-to-local, solution", criterion_8);
    ok &= report(9, "tau-uniformity of estimates", criterion_9);
    ok &= report(10, "energy variational derivative", criterion_10);
    ok &= report(11, "determinism and format", criterion_11);
    if !ok {
        std::process::exit(1);
    }
}
