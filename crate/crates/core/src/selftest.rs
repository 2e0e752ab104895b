//! Invariant and oracle checks on tiny grids, run by `nlch check`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use crate::config::parse_config;
use crate::diagnostics::{check_energy_monotone, energy_derivative_errors, estimates, fit_order};
use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::io::{decode_snapshot, diagnostics_csv, encode_snapshot};
use crate::kernel::{make_profile, NonlocalOperator, DEFAULT_SUPPORT};
use crate::model::{ChemPotential, Model, ModelKind, ModelParams, State};
use crate::oracle;
use crate::scheme::{implicit_step, run, s1_operator_dense, step_s1, step_s2, NullObserver, SchemeParams};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn kind(dim: usize, eps: f64, guard: f64) -> Result<ModelKind> {
    Ok(ModelKind::Nonlocal {
        eps,
        profile: make_profile(dim, DEFAULT_SUPPORT)?,
        min_annulus_cells: guard,
    })
}

fn random_field(rng: &mut Pcg64, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_state(grid: &TorusGrid, species: usize, rng: &mut Pcg64) -> Result<State> {
    let mut raw = vec![vec![0.0; grid.len()]; species];
    for x in 0..grid.len() {
        let w: Vec<f64> = (0..species).map(|_| rng.random_range(0.2..1.0)).collect();
        let t: f64 = w.iter().sum();
        for i in 0..species {
            raw[i][x] = w[i] / t;
        }
    }
    State::from_raw(grid, raw, 0.0)
}

fn smooth_state(grid: &TorusGrid, species: usize) -> Result<State> {
    let mut raw = vec![vec![0.0; grid.len()]; species];
    for x in 0..grid.len() {
        let c = grid.coords(x);
        let scores: Vec<f64> = (0..species)
            .map(|i| 0.4 * (2.0 * PI * (c[0] + 0.3 * i as f64)).sin() + 0.2 * (2.0 * PI * c[1]).cos() * i as f64)
            .collect();
        for (i, w) in crate::scheme::softmax(&scores).into_iter().enumerate() {
            raw[i][x] = w;
        }
    }
    State::from_raw(grid, raw, 0.0)
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("grid.spectral_derivative_exact", || {
            let g = TorusGrid::new(2, 16, 1.0)?;
            let v: Vec<f64> = (0..g.len()).map(|x| (2.0 * PI * 3.0 * g.coords(x)[0]).sin()).collect();
            let lap = g.laplacian_raw(&v);
            let expect: Vec<f64> = v.iter().map(|s| -(6.0 * PI).powi(2) * s).collect();
            let e = rel(&lap, &expect);
            Ok((e < 1e-12, format!("relative error {e:.2e}")))
        }),
        check("kernel.apply_matches_double_sum", || {
            let mut worst: f64 = 0.0;
            for (d, n, eps) in [(1, 16, 0.45), (2, 8, 0.45)] {
                let g = TorusGrid::new(d, n, 1.0)?;
                let p = make_profile(d, DEFAULT_SUPPORT)?;
                let op = NonlocalOperator::build_with_guard(&g, &p, eps, 0.5)?;
                let v = random_field(&mut Pcg64::seed_from_u64(1), g.len());
                worst = worst.max(rel(&op.apply_raw(&v), &oracle::apply_b_double_sum(&g, &p, eps, &v)));
            }
            Ok((worst < 1e-10, format!("max relative error {worst:.2e}")))
        }),
        check("kernel.constant_in_kernel_and_psd", || {
            let g = TorusGrid::new(1, 16, 1.0)?;
            let p = make_profile(1, DEFAULT_SUPPORT)?;
            let op = NonlocalOperator::build_with_guard(&g, &p, 0.45, 0.5)?;
            let bc = op.apply_raw(&vec![1.0; g.len()]);
            let cmax = bc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut rng = Pcg64::seed_from_u64(2);
            let mut qmin = f64::INFINITY;
            for _ in 0..100 {
                let v = random_field(&mut rng, g.len());
                qmin = qmin.min(g.inner_raw(&op.apply_raw(&v), &v));
            }
            Ok((cmax <= 1e-12 && qmin >= -1e-12, format!("|B 1| = {cmax:.1e}, min <Bv,v> = {qmin:.3e}")))
        }),
        check("model.chemical_potential_matches_double_sum", || {
            let g = TorusGrid::new(1, 8, 1.0)?;
            let p = make_profile(1, DEFAULT_SUPPORT)?;
            let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]);
            let m = Model::new(ModelParams::new(DMatrix::from_element(2, 2, 1.0), c, kind(1, 0.45, 0.5)?)?, &g)?;
            let u = random_state(&g, 2, &mut Pcg64::seed_from_u64(3))?;
            let mu = m.chemical_potential(&u)?;
            let cref = vec![vec![1.0, 0.2], vec![0.2, 0.8]];
            let reference = oracle::chemical_potential_double_sum(&g, &p, 0.45, &cref, &u.to_raw());
            let e = (0..2)
                .map(|i| rel(mu.fields[i].values(), &reference[i]))
                .fold(0.0, f64::max);
            Ok((e < 1e-10, format!("relative error {e:.2e}")))
        }),
        check("model.energy_variational_derivative", || {
            let g = TorusGrid::new(1, 32, 1.0)?;
            let m = Model::new(ModelParams::uniform(3, 1.0, 0.5, kind(1, 0.3, 1.0)?)?, &g)?;
            let u = smooth_state(&g, 3)?;
            let mut rng = Pcg64::seed_from_u64(4);
            let d: Vec<Vec<f64>> = (0..3).map(|_| random_field(&mut rng, g.len())).collect();
            let steps = [1e-2, 5e-3, 2.5e-3];
            let errs = energy_derivative_errors(&m, &u, &d, &steps)?;
            let fit = fit_order(&steps, &errs).ok_or_else(|| Error::Validation("degenerate fit".into()))?;
            Ok((fit.order >= 1.9, format!("slope {:.3}", fit.order)))
        }),
        check("scheme.s1_operator_symmetric_positive", || {
            let g = TorusGrid::new(1, 16, 1.0)?;
            let m = Model::new(ModelParams::uniform(2, 1.0, 1.0, kind(1, 0.3, 1.0)?)?, &g)?;
            let u = smooth_state(&g, 2)?;
            let a = s1_operator_dense(&m, &u, 1e-3);
            let asym = (&a - a.transpose()).amax() / a.amax();
            let emin = a.symmetric_eigenvalues().min();
            Ok((asym < 1e-10 && emin > 0.0, format!("asymmetry {asym:.1e}, min eigenvalue {emin:.3e}")))
        }),
        check("scheme.s1_cg_matches_dense_solve", || {
            let g = TorusGrid::new(1, 16, 1.0)?;
            let m = Model::new(ModelParams::uniform(2, 1.0, 1.0, kind(1, 0.3, 1.0)?)?, &g)?;
            let ut = smooth_state(&g, 2)?;
            let up = State::uniform(&g, 2);
            let scheme = SchemeParams::new(1e-3);
            let sol = step_s1(&m, &scheme, &ut, &up)?;
            let a = s1_operator_dense(&m, &ut, 1e-3);
            let rhs: Vec<f64> = ut
                .to_raw()
                .concat()
                .iter()
                .zip(up.to_raw().concat())
                .map(|(a, b)| -(a - b) / 1e-3)
                .collect();
            let x = a.lu().solve(&DVector::from_vec(rhs)).ok_or_else(|| Error::Validation("singular".into()))?;
            let got: Vec<f64> = sol.mu.fields.iter().flat_map(|f| f.values().to_vec()).collect();
            let e = rel(&got, x.as_slice());
            Ok((e < 1e-8, format!("relative difference {e:.2e}")))
        }),
        check("scheme.s2_matches_projected_gradient", || {
            let g = TorusGrid::new(1, 8, 1.0)?;
            let p = make_profile(1, DEFAULT_SUPPORT)?;
            let m = Model::new(ModelParams::uniform(2, 1.0, 1.0, kind(1, 0.45, 0.5)?)?, &g)?;
            let b = oracle::dense_b(&g, &p, 0.45);
            let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
            let mut rng = Pcg64::seed_from_u64(5);
            let raw: Vec<Vec<f64>> = (0..2).map(|_| random_field(&mut rng, 8).iter().map(|v| 1.5 * v).collect()).collect();
            let mu = ChemPotential {
                fields: raw
                    .iter()
                    .map(|v| crate::grid::ScalarField::new(&g, v.clone()))
                    .collect::<Result<Vec<_>>>()?,
            };
            let out = step_s2(&m, &SchemeParams::new(1e-3), &mu, None)?;
            let (w, _) = oracle::projected_gradient_s2(&b, &c, &raw, g.cell_volume(), 1e-15, 200_000);
            let e = (0..2)
                .flat_map(|i| {
                    let a = out.state.field(i).values().to_vec();
                    a.into_iter().zip(w[i].clone()).map(|(x, y)| (x - y).abs())
                })
                .fold(0.0, f64::max);
            Ok((e < 1e-6, format!("max difference {e:.2e}")))
        }),
        check("scheme.step_invariants", || {
            let g = TorusGrid::new(2, 16, 1.0)?;
            let m = Model::new(ModelParams::uniform(3, 1.0, 0.5, kind(2, 0.2, 1.0)?)?, &g)?;
            let u = smooth_state(&g, 3)?;
            let scheme = SchemeParams::new(1e-4);
            let r = implicit_step(&m, &scheme, &u)?;
            let e0 = m.energy(&u)?.total;
            let e1 = m.energy(&r.state)?.total;
            let ok = r.state.simplex_deviation() <= 1e-10 && r.positivity_floor > 0.0 && r.state.max_value() < 1.0 && e1 <= e0;
            Ok((ok, format!(
                "simplex {:.1e}, floor {:.3e}, energy {e0:.6} -> {e1:.6}",
                r.state.simplex_deviation(),
                r.positivity_floor
            )))
        }),
        check("scheme.mass_drift_law", || {
            let g = TorusGrid::new(1, 32, 1.0)?;
            let m = Model::new(ModelParams::uniform(2, 1.0, 1.0, kind(1, 0.2, 1.0)?)?, &g)?;
            let u = smooth_state(&g, 2)?;
            let tau = 1e-3;
            let scheme = SchemeParams::new(tau);
            let r = implicit_step(&m, &scheme, &u)?;
            let rec = estimates(&m, &r.state, &r.mu, tau)?;
            let worst = (0..2)
                .map(|i| {
                    let drift = r.state.field(i).integrate() - u.field(i).integrate();
                    drift.abs() - (tau * tau * rec.mu_l1[i] + 10.0 * scheme.cg_tol)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((worst <= 0.0, format!("max excess over bound {worst:.2e}")))
        }),
        check("scheme.run_energy_monotone_and_deterministic", || {
            let g = TorusGrid::new(1, 32, 1.0)?;
            let m = Model::new(ModelParams::uniform(2, 1.0, 1.0, kind(1, 0.2, 1.0)?)?, &g)?;
            let u = smooth_state(&g, 2)?;
            let scheme = SchemeParams::new(2e-4);
            let a = run(&m, &scheme, u.clone(), 2e-3, 0, &mut NullObserver)?;
            let b = run(&m, &scheme, u, 2e-3, 0, &mut NullObserver)?;
            let same = diagnostics_csv(&a.records, false) == diagnostics_csv(&b.records, false);
            let mono = check_energy_monotone(&a.records, scheme.outer_tol).is_ok();
            Ok((same && mono, format!("identical = {same}, monotone = {mono}")))
        }),
        check("io.snapshot_round_trip", || {
            let g = TorusGrid::new(2, 8, 1.5)?;
            let u = random_state(&g, 3, &mut Pcg64::seed_from_u64(6))?.with_time(0.25);
            let back = decode_snapshot(&encode_snapshot(&u), std::path::Path::new("memory"))?;
            let exact = back.time().to_bits() == u.time().to_bits()
                && u.fields().iter().zip(back.fields()).all(|(a, b)| {
                    a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
                });
            Ok((exact, "bit-exact".to_string()))
        }),
        check("config.rejects_indefinite_c", || {
            let text = "[grid]\nd = 1\nN = 64\n[model]\nn = 1\neps = 0.1\nC = 1, 3; 3, 1\n[scheme]\ntau = 1e-4\n\
                        [init]\npreset = uniform\n[run]\nt_final = 0\n";
            match parse_config(text) {
                Err(e) => {
                    let msg = e.to_string();
                    Ok((msg.contains("-2"), msg))
                }
                Ok(_) => Ok((false, "accepted".into())),
            }
        }),
    ]
}
