//! The implicit time discretization: the regularized linear solve for the
//! chemical potential (S1), the entropy minimization recovering the volume
//! fractions (S2), their fixed point, the time loop and an explicit
//! reference stepper.

mod cg;
mod explicit;
mod implicit;
pub(crate) mod ops;
mod run;
mod s1;
mod s2;

pub use cg::{pcg, CgOutcome};
pub use explicit::{explicit_integrate, explicit_oracle_step, stable_explicit_dt};
pub use implicit::{implicit_step, StepResult, StepStats};
pub use run::{run, NullObserver, RunObserver, RunSummary};
pub use s1::{s1_operator_dense, step_s1, S1Solution};
pub use s2::{el_residual_spread, s2_objective, softmax, step_s2, S2Outcome};

use crate::error::{Error, Result};

/// Solver for the entropy minimization half step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum S2Method {
    /// Projected Newton-CG on the tangent space of the simplex.
    Newton,
    /// Damped fixed-point iteration of the softmax map.
    SoftmaxPicard,
}

/// Preconditioner for the S1 conjugate-gradient solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum S1Preconditioner {
    /// Inverse of `|k|^2 Mbar + tau H2(k)` with the spatially averaged mobility.
    MeanMobility,
    /// Inverse of the `tau H2(k)` block alone.
    H2Block,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeParams {
    pub tau: f64,
    pub outer_tol: f64,
    pub outer_max: usize,
    pub s2_tol: f64,
    pub s2_max: usize,
    pub s2_damping: f64,
    pub cg_tol: f64,
    pub cg_max: usize,
    pub s2_method: S2Method,
    pub preconditioner: S1Preconditioner,
    /// Retry a failed step once with `tau / 2`.
    pub retry: bool,
    /// After each step, run standalone S1 then S2 on the accepted state and
    /// record how far it moves.
    pub verify_fixed_point: bool,
}

impl SchemeParams {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            outer_tol: 1e-9,
            outer_max: 200,
            s2_tol: 1e-11,
            s2_max: 500,
            s2_damping: 0.7,
            cg_tol: 1e-10,
            cg_max: 2000,
            s2_method: S2Method::Newton,
            preconditioner: S1Preconditioner::MeanMobility,
            retry: true,
            verify_fixed_point: false,
        }
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("outer_tol", self.outer_tol),
            ("s2_tol", self.s2_tol),
            ("cg_tol", self.cg_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.s2_damping > 0.0 && self.s2_damping <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "s2_damping must lie in (0, 1], got {}",
                self.s2_damping
            )));
        }
        for (name, v) in [("outer_max", self.outer_max), ("s2_max", self.s2_max), ("cg_max", self.cg_max)] {
            if v == 0 {
                return Err(Error::InvalidParams(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let p = SchemeParams::new(1e-4);
        p.validate().unwrap();
        assert_eq!(p.outer_tol, 1e-9);
        assert_eq!(p.s2_max, 500);
    }

    #[test]
    fn rejects_bad_values() {
        let mut p = SchemeParams::new(1e-4);
        p.s2_damping = 1.5;
        assert!(p.validate().is_err());
        let mut p = SchemeParams::new(0.0);
        assert!(p.validate().is_err());
        p.tau = 1e-3;
        p.cg_max = 0;
        assert!(p.validate().is_err());
    }
}
