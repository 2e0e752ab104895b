//! Initial data.
//!
//! Random presets draw from PCG-64 (`Lcg128Xsl64`: 128-bit LCG with the
//! XSL-RR output function) seeded with `state = seed` and a fixed stream per
//! preset, so a seed reproduces the same fields on every platform.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::RngExt;
use rand_distr::Gamma;
use rand_pcg::Pcg64;

use crate::config::{Preset, RunConfig};
use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::model::State;
use crate::scheme::softmax;

const PERTURBED_STREAM: u128 = 0x7065_7274_7572_6265;
const DIRICHLET_STREAM: u128 = 0x6469_7269_6368_6c65;

fn rng(seed: u64, stream: u128) -> Pcg64 {
    Pcg64::new(seed as u128, stream)
}

impl RunConfig {
    pub fn initial_state(&self) -> Result<State> {
        initial_state(self)
    }
}

pub fn initial_state(config: &RunConfig) -> Result<State> {
    config.validate()?;
    let grid = config.build_grid()?;
    let species = config.model.species;
    let init = &config.init;
    let fractions = init
        .fractions
        .clone()
        .unwrap_or_else(|| vec![1.0 / species as f64; species]);
    let state = match init.preset {
        Preset::Uniform => constant(&grid, &fractions)?,
        Preset::PerturbedUniform => {
            if init.amplitude == 0.0 {
                constant(&grid, &fractions)?
            } else {
                perturbed(&grid, &fractions, init.amplitude, init.modes, init.seed)?
            }
        }
        Preset::DirichletRandom => dirichlet(&grid, species, init.alpha, init.modes, init.seed)?,
        Preset::TanhInterface => tanh_interface(&grid, init.width, init.floor)?,
    };
    let min = state.min_value();
    if !(min > 0.0) {
        return Err(Error::InvalidState(format!(
            "preset {} produced min u = {min:e}",
            init.preset.name()
        )));
    }
    Ok(state)
}

fn constant(grid: &TorusGrid, fractions: &[f64]) -> Result<State> {
    let raw = fractions.iter().map(|&f| vec![f; grid.len()]).collect();
    State::from_raw(grid, raw, 0.0)
}

/// Half of the modes `m` with `1 <= max_a |m_a| <= band`, one of each `+-m` pair.
fn low_modes(dim: usize, band: usize) -> Vec<[i64; 3]> {
    let b = band as i64;
    let r = |on: bool| if on { -b..=b } else { 0..=0 };
    let mut out = Vec::new();
    for m0 in -b..=b {
        for m1 in r(dim > 1) {
            for m2 in r(dim > 2) {
                let m = [m0, m1, m2];
                let first = m.iter().find(|&&v| v != 0);
                if first.is_some_and(|&v| v > 0) {
                    out.push(m);
                }
            }
        }
    }
    out
}

/// Per-point softmax of per-species score fields.
fn softmax_fields(grid: &TorusGrid, scores: &[Vec<f64>]) -> Result<State> {
    let s = scores.len();
    let mut raw = vec![vec![0.0; grid.len()]; s];
    let mut point = vec![0.0; s];
    for x in 0..grid.len() {
        for i in 0..s {
            point[i] = scores[i][x];
        }
        for (i, w) in softmax(&point).into_iter().enumerate() {
            raw[i][x] = w;
        }
    }
    State::from_raw(grid, raw, 0.0)
}

fn perturbed(grid: &TorusGrid, fractions: &[f64], amplitude: f64, band: usize, seed: u64) -> Result<State> {
    let mut rng = rng(seed, PERTURBED_STREAM);
    let modes = low_modes(grid.dim(), band);
    let scale = 2.0 * PI / grid.extent();
    let mut scores = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let coeffs: Vec<(f64, f64)> = modes
            .iter()
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let q: Vec<f64> = (0..grid.len())
            .map(|x| {
                let c = grid.coords(x);
                modes
                    .iter()
                    .zip(&coeffs)
                    .map(|(m, (a, b))| {
                        let phase = scale * (0..grid.dim()).map(|ax| m[ax] as f64 * c[ax]).sum::<f64>();
                        a * phase.cos() + b * phase.sin()
                    })
                    .sum()
            })
            .collect();
        let peak = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let norm = if peak > 0.0 { amplitude / peak } else { 0.0 };
        scores.push(q.iter().map(|v| f.ln() + norm * v).collect());
    }
    softmax_fields(grid, &scores)
}

fn dirichlet(grid: &TorusGrid, species: usize, alpha: f64, band: usize, seed: u64) -> Result<State> {
    let mut rng = rng(seed, DIRICHLET_STREAM);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Validation(format!("init.alpha: {e}")))?;
    let mut logs = vec![vec![0.0; grid.len()]; species];
    let mut draw = vec![0.0; species];
    for x in 0..grid.len() {
        for g in draw.iter_mut() {
            *g = rng.sample(gamma);
        }
        let total: f64 = draw.iter().sum();
        for (i, g) in draw.iter().enumerate() {
            logs[i][x] = (g / total).max(1e-300).ln();
        }
    }
    let b = band as i64;
    let keep: Vec<bool> = (0..grid.len())
        .map(|k| grid.mode(k).iter().all(|m| m.abs() <= b))
        .collect();
    let scores = logs
        .iter()
        .map(|l| {
            let spectrum: Vec<Complex64> = grid
                .forward_raw(l)
                .into_iter()
                .zip(&keep)
                .map(|(c, &k)| if k { c } else { Complex64::new(0.0, 0.0) })
                .collect();
            grid.inverse_raw(spectrum)
        })
        .collect::<Vec<_>>();
    softmax_fields(grid, &scores)
}

/// Periodic slab: species 0 occupies the middle half along `x_1`, bounded by
/// two tanh interfaces of width `width`, and lies in `[floor, 1 - floor]`.
fn tanh_interface(grid: &TorusGrid, width: f64, floor: f64) -> Result<State> {
    let l = grid.extent();
    let u0: Vec<f64> = (0..grid.len())
        .map(|x| {
            let t = grid.coords(x)[0];
            let slab = 0.5 * (((t - 0.25 * l) / width).tanh() - ((t - 0.75 * l) / width).tanh());
            floor + (1.0 - 2.0 * floor) * slab
        })
        .collect();
    let u1 = u0.iter().map(|v| 1.0 - v).collect();
    State::from_raw(grid, vec![u0, u1], 0.0)
}
