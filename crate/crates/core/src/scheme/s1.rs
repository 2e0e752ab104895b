use nalgebra::DMatrix;

use super::cg::{pcg, CgOutcome};
use super::ops::{flatten, mean_mobility, BlockPreconditioner, S1Operator};
use super::{S1Preconditioner, SchemeParams};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::model::{ChemPotential, Model, State};

#[derive(Clone, Debug)]
pub struct S1Solution {
    pub mu: ChemPotential,
    pub cg: CgOutcome,
}

fn check_pair(model: &Model, a: &State, b: &State) -> Result<()> {
    for st in [a, b] {
        if st.grid() != model.grid() {
            return Err(Error::GridMismatch);
        }
        if st.species() != model.species() {
            return Err(Error::SizeMismatch {
                expected: model.species(),
                actual: st.species(),
            });
        }
    }
    Ok(())
}

/// Solves `(G^T M(u~) G + tau H2) mu = -(u~ - u_prev) / tau` by preconditioned CG.
pub fn step_s1(model: &Model, scheme: &SchemeParams, u_tilde: &State, u_prev: &State) -> Result<S1Solution> {
    check_pair(model, u_tilde, u_prev)?;
    let grid = model.grid();
    let len = grid.len();
    let tau = scheme.tau;
    let ut = flatten(&u_tilde.to_raw());
    let up = flatten(&u_prev.to_raw());
    let b: Vec<f64> = ut.iter().zip(&up).map(|(a, p)| -(a - p) / tau).collect();
    let op = S1Operator::new(model, &ut, tau);
    let precond = match scheme.preconditioner {
        S1Preconditioner::MeanMobility => BlockPreconditioner::s1(model, Some(&mean_mobility(model, &ut)), tau),
        S1Preconditioner::H2Block => BlockPreconditioner::s1(model, None, tau),
    };
    let mut mu = vec![0.0; b.len()];
    let cg = pcg(
        |v, out| op.apply(v, out),
        |r, z| precond.apply(r, z),
        &b,
        &mut mu,
        scheme.cg_tol,
        scheme.cg_max,
    )?;
    let fields = mu
        .chunks_exact(len)
        .map(|c| ScalarField::new(grid, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(S1Solution {
        mu: ChemPotential { fields },
        cg,
    })
}

/// Dense matrix of the S1 operator at `u_tilde`, species-major ordering.
/// Intended for small grids.
pub fn s1_operator_dense(model: &Model, u_tilde: &State, tau: f64) -> DMatrix<f64> {
    let ut = flatten(&u_tilde.to_raw());
    let op = S1Operator::new(model, &ut, tau);
    let n = ut.len();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        for i in 0..n {
            m[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    m
}
