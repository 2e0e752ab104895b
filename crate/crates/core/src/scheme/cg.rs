//! Preconditioned conjugate gradients on flat vectors.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final relative residual `|b - A x| / |b|`.
    pub residual: f64,
    pub history: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` for symmetric positive definite `A`, starting from the
/// value already in `x`. `apply` and `precond` write their result into the
/// second argument. Reductions run sequentially, so results are
/// reproducible bit for bit.
pub fn pcg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome::default());
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut history = Vec::new();
    let mut rel = norm(&r) / bnorm;
    history.push(rel);
    let mut it = 0;
    while rel > tol {
        if it == max_iter {
            return Err(Error::CgNonConvergence {
                iterations: it,
                residual: rel,
                history,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CgNonConvergence {
                iterations: it,
                residual: rel,
                history,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        rel = norm(&r) / bnorm;
        history.push(rel);
    }
    Ok(CgOutcome {
        iterations: it,
        residual: rel,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let base = 1.0 / (1.0 + (i as f64 - j as f64).abs());
                        if i == j {
                            base + n as f64
                        } else {
                            base
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn solves_small_spd_system() {
        let a = spd(12);
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; 12];
        let out = pcg(
            |v, out| {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(&a[i], v);
                }
            },
            |r, z| z.copy_from_slice(r),
            &b,
            &mut x,
            1e-14,
            100,
        )
        .unwrap();
        assert!(out.residual <= 1e-14);
        for i in 0..12 {
            assert!((dot(&a[i], &x) - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_preconditioner_takes_one_step() {
        let d = [2.0, 5.0, 7.0];
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        let out = pcg(
            |v, o| (0..3).for_each(|i| o[i] = d[i] * v[i]),
            |r, z| (0..3).for_each(|i| z[i] = r[i] / d[i]),
            &b,
            &mut x,
            1e-14,
            10,
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn reports_history_on_failure() {
        let a = spd(30);
        let b = vec![1.0; 30];
        let mut x = vec![0.0; 30];
        let err = pcg(
            |v, out| (0..30).for_each(|i| out[i] = dot(&a[i], v)),
            |r, z| z.copy_from_slice(r),
            &b,
            &mut x,
            1e-30,
            3,
        )
        .unwrap_err();
        match err {
            Error::CgNonConvergence { iterations, history, .. } => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 4);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let mut x = [3.0, 4.0];
        let out = pcg(|v, o| o.copy_from_slice(v), |r, z| z.copy_from_slice(r), &[0.0, 0.0], &mut x, 1e-12, 5).unwrap();
        assert_eq!(x, [0.0, 0.0]);
        assert_eq!(out.iterations, 0);
    }
}
