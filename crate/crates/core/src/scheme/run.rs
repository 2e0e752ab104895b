use super::implicit::{implicit_step_with_tau, StepResult};
use super::ops::{flatten, tangent_potential};
use super::SchemeParams;
use crate::diagnostics::{estimates, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::model::{ChemPotential, Model, State};

/// Receives diagnostics and snapshots while a run progresses.
pub trait RunObserver {
    fn on_record(&mut self, _record: &DiagnosticsRecord) -> Result<()> {
        Ok(())
    }

    fn on_snapshot(&mut self, _step: usize, _state: &State) -> Result<()> {
        Ok(())
    }

    fn on_step(&mut self, _result: &StepResult) -> Result<()> {
        Ok(())
    }
}

pub struct NullObserver;

impl RunObserver for NullObserver {}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub final_state: State,
    pub records: Vec<DiagnosticsRecord>,
    pub steps: usize,
    pub retries: usize,
}

fn potential(model: &Model, state: &State) -> Result<ChemPotential> {
    let mu = tangent_potential(model, &flatten(&state.to_raw()));
    let fields = mu
        .chunks_exact(model.grid().len())
        .map(|c| ScalarField::new(model.grid(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChemPotential { fields })
}

/// Iterates implicit steps from `initial` until `t_final`, emitting one
/// record per accepted state (the initial state included) and snapshots of
/// the initial state, every `snapshot_every` steps and the final state.
/// `snapshot_every = 0` keeps only the initial and final snapshots.
pub fn run(
    model: &Model,
    scheme: &SchemeParams,
    initial: State,
    t_final: f64,
    snapshot_every: usize,
    observer: &mut dyn RunObserver,
) -> Result<RunSummary> {
    scheme.validate()?;
    initial.validate()?;
    let (species, index, value) = initial.argmin();
    if value <= 0.0 {
        return Err(Error::PositivityFloor { species, index, value });
    }
    let record = estimates(model, &initial, &potential(model, &initial)?, scheme.tau)?;
    observer.on_record(&record)?;
    observer.on_snapshot(0, &initial)?;
    let mut records = vec![record];
    let mut u = initial;
    let mut steps = 0;
    let mut retries = 0;
    let tau = scheme.tau;
    loop {
        let remaining = t_final - u.time();
        if remaining <= 1e-9 * tau {
            break;
        }
        let step_tau = if remaining < tau * (1.0 + 1e-9) { remaining } else { tau };
        let result = implicit_step_with_tau(model, scheme, &u, step_tau)?;
        steps += 1;
        retries += result.stats.retried as usize;
        let previous_mass = &records.last().expect("initial record").mass;
        let record = estimates(model, &result.state, &result.mu, result.stats.tau)?.with_step(
            steps,
            &result.stats,
            previous_mass,
        );
        observer.on_step(&result)?;
        observer.on_record(&record)?;
        records.push(record);
        u = result.state;
        let done = t_final - u.time() <= 1e-9 * tau;
        if done || (snapshot_every > 0 && steps % snapshot_every == 0) {
            observer.on_snapshot(steps, &u)?;
        }
    }
    Ok(RunSummary {
        final_state: u,
        records,
        steps,
        retries,
    })
}
