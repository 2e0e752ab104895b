use proptest::prelude::*;

use nlch::diagnostics::{check_energy_sequence, fit_order};
use nlch::grid::{ScalarField, TorusGrid};
use nlch::io::{decode_snapshot, encode_snapshot};
use nlch::kernel::{make_profile, NonlocalOperator, DEFAULT_SUPPORT};
use nlch::model::{ChemPotential, Model, ModelKind, ModelParams, State};
use nlch::scheme::{el_residual_spread, implicit_step, softmax, step_s2, SchemeParams};

fn simplex_state(grid: &TorusGrid, species: usize, weights: &[f64]) -> State {
    let len = grid.len();
    let mut raw = vec![vec![0.0; len]; species];
    for x in 0..len {
        let t: f64 = (0..species).map(|i| weights[x * species + i]).sum();
        for i in 0..species {
            raw[i][x] = weights[x * species + i] / t;
        }
    }
    State::from_raw(grid, raw, 0.0).unwrap()
}

fn model(grid: &TorusGrid, species: usize, c: f64, eps: f64) -> Model {
    let kind = ModelKind::Nonlocal {
        eps,
        profile: make_profile(grid.dim(), DEFAULT_SUPPORT).unwrap(),
        min_annulus_cells: 1.0,
    };
    Model::new(ModelParams::uniform(species, 1.0, c, kind).unwrap(), grid).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn operator_is_symmetric_and_psd(v in prop::collection::vec(-1.0f64..1.0, 32), w in prop::collection::vec(-1.0f64..1.0, 32), eps in 0.15f64..0.45) {
        let g = TorusGrid::new(1, 32, 1.0).unwrap();
        let op = NonlocalOperator::build_with_guard(&g, &make_profile(1, DEFAULT_SUPPORT).unwrap(), eps, 1.0).unwrap();
        let bv = op.apply_raw(&v);
        let bw = op.apply_raw(&w);
        let scale = 1.0 + op.mass();
        prop_assert!((g.inner_raw(&bv, &w) - g.inner_raw(&v, &bw)).abs() <= 1e-12 * scale);
        prop_assert!(g.inner_raw(&bv, &v) >= -1e-12 * scale);
    }

    #[test]
    fn softmax_lands_on_simplex(scores in prop::collection::vec(-50.0f64..50.0, 2..6)) {
        let w = softmax(&scores);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        prop_assert!(w.iter().all(|&x| x > 0.0 || scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - scores.iter().cloned().fold(f64::INFINITY, f64::min) > 700.0));
    }

    #[test]
    fn snapshot_round_trip(weights in prop::collection::vec(0.01f64..1.0, 3 * 64), time in 0.0f64..10.0, extent in 0.5f64..4.0) {
        let g = TorusGrid::new(2, 8, extent).unwrap();
        let s = simplex_state(&g, 3, &weights).with_time(time);
        let back = decode_snapshot(&encode_snapshot(&s), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(encode_snapshot(&back), encode_snapshot(&s));
    }

    #[test]
    fn s2_solution_satisfies_multiplier_form(mu in prop::collection::vec(-3.0f64..3.0, 3 * 16), c in 0.1f64..2.0) {
        let g = TorusGrid::new(1, 16, 1.0).unwrap();
        let m = model(&g, 3, c, 0.3);
        let mu = ChemPotential { fields: mu.chunks(16).map(|v| ScalarField::new(&g, v.to_vec()).unwrap()).collect() };
        let scheme = SchemeParams::new(1e-3);
        let out = step_s2(&m, &scheme, &mu, None).unwrap();
        prop_assert!(out.state.simplex_deviation() <= 1e-12);
        prop_assert!(out.state.min_value() > 0.0);
        prop_assert!(el_residual_spread(&m, &mu, &out.state).unwrap() <= scheme.s2_tol);
    }

    #[test]
    fn implicit_step_keeps_invariants(weights in prop::collection::vec(0.2f64..1.0, 2 * 32), tau in 1e-5f64..1e-3) {
        let g = TorusGrid::new(1, 32, 1.0).unwrap();
        let m = model(&g, 2, 1.0, 0.2);
        let u = simplex_state(&g, 2, &weights);
        let r = implicit_step(&m, &SchemeParams::new(tau), &u).unwrap();
        prop_assert!(r.state.simplex_deviation() <= 1e-10);
        prop_assert!(r.positivity_floor > 0.0 && r.state.max_value() < 1.0);
        let e0 = m.energy(&u).unwrap().total;
        let e1 = m.energy(&r.state).unwrap().total;
        prop_assert!(e1 <= e0 + 10.0 * 1e-9 * (1.0 + e0.abs()));
    }

    #[test]
    fn fit_recovers_power_laws(order in -3.0f64..3.0, scale in 1e-3f64..1e3) {
        let p = [0.4, 0.2, 0.1, 0.05];
        let e: Vec<f64> = p.iter().map(|x: &f64| scale * x.powf(order)).collect();
        let fit = fit_order(&p, &e).unwrap();
        prop_assert!((fit.order - order).abs() < 1e-10);
        prop_assert!(fit.residual < 1e-10);
    }

    #[test]
    fn nonincreasing_energies_pass(steps in prop::collection::vec(0.0f64..1.0, 1..50), start in -10.0f64..10.0) {
        let mut e = vec![start];
        for s in steps {
            let last = *e.last().unwrap();
            e.push(last - s);
        }
        prop_assert!(check_energy_sequence(&e, 1e-9).is_ok());
    }
}
