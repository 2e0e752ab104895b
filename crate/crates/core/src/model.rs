//! Species state, parameter matrices, mobility, energies, chemical
//! potentials and fluxes of the cross-diffusion system.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};
use crate::kernel::{KernelProfile, NonlocalOperator};

/// Below this `ln` is clamped; accepted states never get there.
pub const LOG_FLOOR: f64 = 1e-300;

/// Tolerance on `0 <= u_i <= 1`.
pub const BOX_TOL: f64 = 1e-12;

/// Tolerance on `sum_i u_i = 1`.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Threshold on `(n-1) max_{i!=j} |c_ij| / min_i c_ii` above which a warning
/// is recorded.
pub const CROSS_COUPLING_WARN_RATIO: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Nonlocal {
        eps: f64,
        profile: KernelProfile,
        /// Resolution guard passed to [`NonlocalOperator::build_with_guard`].
        min_annulus_cells: f64,
    },
    Local,
}

/// `n + 1` species with mobility coefficients `L` and interaction matrix `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    l: DMatrix<f64>,
    c: DMatrix<f64>,
    kind: ModelKind,
    warnings: Vec<String>,
}

impl ModelParams {
    /// Validates `L` (symmetric, positive off the diagonal) and `C`
    /// (symmetric, positive semidefinite, positive diagonal).
    pub fn new(l: DMatrix<f64>, c: DMatrix<f64>, kind: ModelKind) -> Result<Self> {
        let species = l.nrows();
        if species < 2 || !l.is_square() || c.shape() != l.shape() {
            return Err(Error::InvalidParams(format!(
                "L and C must both be (n+1)x(n+1) with n >= 1, got {:?} and {:?}",
                l.shape(),
                c.shape()
            )));
        }
        for i in 0..species {
            for j in 0..species {
                if i == j {
                    continue;
                }
                if !(l[(i, j)] > 0.0 && l[(i, j)].is_finite()) {
                    return Err(Error::InvalidParams(format!("L[{i}][{j}] = {} must be > 0", l[(i, j)])));
                }
                if l[(i, j)] != l[(j, i)] {
                    return Err(Error::InvalidParams(format!("L not symmetric at ({i}, {j})")));
                }
            }
        }
        for i in 0..species {
            for j in 0..species {
                if !c[(i, j)].is_finite() {
                    return Err(Error::InvalidParams(format!("C[{i}][{j}] is not finite")));
                }
                if c[(i, j)] != c[(j, i)] {
                    return Err(Error::InvalidParams(format!("C not symmetric at ({i}, {j})")));
                }
            }
            if c[(i, i)] <= 0.0 {
                return Err(Error::InvalidParams(format!("C[{i}][{i}] = {} must be > 0", c[(i, i)])));
            }
        }
        let eig = SymmetricEigen::new(c.clone()).eigenvalues;
        let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(Error::InvalidParams(format!(
                "C is not positive semidefinite: negative eigenvalue {min_eig}"
            )));
        }
        let mut warnings = Vec::new();
        let ratio = cross_coupling_ratio(&c);
        if ratio >= CROSS_COUPLING_WARN_RATIO {
            warnings.push(format!(
                "(n-1) max|c_ij| / min c_ii = {ratio:.3} >= {CROSS_COUPLING_WARN_RATIO}: \
                 off-diagonal interactions are not small"
            ));
        }
        if let ModelKind::Nonlocal { eps, .. } = &kind {
            if !(*eps > 0.0) {
                return Err(Error::InvalidParams(format!("eps must be positive, got {eps}")));
            }
        }
        Ok(Self { l, c, kind, warnings })
    }

    /// Same `L_ij = l` for every pair and `C = c I`.
    pub fn uniform(species: usize, l: f64, c: f64, kind: ModelKind) -> Result<Self> {
        let lm = DMatrix::from_fn(species, species, |i, j| if i == j { 0.0 } else { l });
        Self::new(lm, DMatrix::identity(species, species) * c, kind)
    }

    /// `C = 0`: pure cross-diffusion without interaction. Bypasses the
    /// positive-diagonal requirement on `C`, which only the interacting
    /// model needs.
    pub fn non_interacting(l: DMatrix<f64>, kind: ModelKind) -> Result<Self> {
        let species = l.nrows();
        let mut p = Self::new(l, DMatrix::identity(species, species), kind)?;
        p.c.fill(0.0);
        p.warnings.clear();
        Ok(p)
    }

    /// Number of species, `n + 1`.
    pub fn species(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn is_local(&self) -> bool {
        matches!(self.kind, ModelKind::Local)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Copy with a different interaction kind.
    pub fn with_kind(&self, kind: ModelKind) -> Result<Self> {
        if self.c.iter().all(|&v| v == 0.0) {
            return Self::non_interacting(self.l.clone(), kind);
        }
        Self::new(self.l.clone(), self.c.clone(), kind)
    }

    /// `max_{i != j} L_ij`.
    pub fn l_max(&self) -> f64 {
        let s = self.species();
        let mut m: f64 = 0.0;
        for i in 0..s {
            for j in 0..s {
                if i != j {
                    m = m.max(self.l[(i, j)]);
                }
            }
        }
        m
    }
}

/// `(n-1) max_{i != j} |c_ij| / min_i c_ii`.
pub fn cross_coupling_ratio(c: &DMatrix<f64>) -> f64 {
    let s = c.nrows();
    let mut off: f64 = 0.0;
    let mut diag = f64::INFINITY;
    for i in 0..s {
        diag = diag.min(c[(i, i)]);
        for j in 0..s {
            if i != j {
                off = off.max(c[(i, j)].abs());
            }
        }
    }
    (s as f64 - 2.0) * off / diag
}

/// Degenerate mobility `M_ij = -L_ij u_i u_j`, `M_ii = sum_{j != i} L_ij u_i u_j`.
pub fn mobility_at(params: &ModelParams, u: &[f64]) -> Result<DMatrix<f64>> {
    let s = params.species();
    if u.len() != s {
        return Err(Error::SizeMismatch {
            expected: s,
            actual: u.len(),
        });
    }
    if let Some(v) = u.iter().find(|v| !(-BOX_TOL..=1.0 + BOX_TOL).contains(*v)) {
        return Err(Error::InvalidState(format!("volume fraction {v} outside [0, 1]")));
    }
    let l = params.l();
    let mut m = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            if i != j {
                let v = l[(i, j)] * u[i] * u[j];
                m[(i, j)] = -v;
                m[(i, i)] += v;
            }
        }
    }
    Ok(m)
}

/// The quadratic interaction operator: `B_eps` for nonlocal models, `-Laplacian` for local ones.
/// Both are diagonal in Fourier space.
#[derive(Clone, Debug)]
pub enum Interaction {
    Nonlocal(NonlocalOperator),
    Local { grid: TorusGrid, symbol: Vec<f64> },
}

impl Interaction {
    pub fn for_model(params: &ModelParams, grid: &TorusGrid) -> Result<Self> {
        match params.kind() {
            ModelKind::Nonlocal {
                eps,
                profile,
                min_annulus_cells,
            } => Ok(Interaction::Nonlocal(NonlocalOperator::build_with_guard(
                grid,
                profile,
                *eps,
                *min_annulus_cells,
            )?)),
            ModelKind::Local => Ok(Interaction::Local {
                grid: grid.clone(),
                symbol: grid.k_squared().to_vec(),
            }),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        match self {
            Interaction::Nonlocal(op) => op.grid(),
            Interaction::Local { grid, .. } => grid,
        }
    }

    /// Fourier symbol, nonnegative and zero at `k = 0`.
    pub fn symbol(&self) -> &[f64] {
        match self {
            Interaction::Nonlocal(op) => op.symbol(),
            Interaction::Local { symbol, .. } => symbol,
        }
    }

    pub fn nonlocal(&self) -> Option<&NonlocalOperator> {
        match self {
            Interaction::Nonlocal(op) => Some(op),
            Interaction::Local { .. } => None,
        }
    }

    pub fn apply_raw(&self, values: &[f64]) -> Vec<f64> {
        self.grid().apply_multiplier(values, self.symbol())
    }

    pub fn max_symbol(&self) -> f64 {
        self.symbol().iter().cloned().fold(0.0, f64::max)
    }
}

/// Volume fractions `u_0, ..., u_n` on one grid at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    fields: Vec<ScalarField>,
    time: f64,
}

impl State {
    /// Builds a state and checks the box and simplex constraints.
    pub fn new(fields: Vec<ScalarField>, time: f64) -> Result<Self> {
        let s = Self::new_unchecked(fields, time)?;
        s.validate()?;
        Ok(s)
    }

    /// Builds a state checking only shapes and finiteness.
    pub fn new_unchecked(fields: Vec<ScalarField>, time: f64) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidState("no species".into()))?;
        if fields.len() < 2 {
            return Err(Error::InvalidState("need at least two species".into()));
        }
        for f in &fields {
            if f.grid() != first.grid() {
                return Err(Error::GridMismatch);
            }
            if f.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidState("non-finite volume fraction".into()));
            }
        }
        Ok(Self { fields, time })
    }

    pub fn from_raw(grid: &TorusGrid, raw: Vec<Vec<f64>>, time: f64) -> Result<Self> {
        let fields = raw
            .into_iter()
            .map(|v| ScalarField::new(grid, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(fields, time)
    }

    pub fn from_raw_unchecked(grid: &TorusGrid, raw: Vec<Vec<f64>>, time: f64) -> Result<Self> {
        let fields = raw
            .into_iter()
            .map(|v| ScalarField::new(grid, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new_unchecked(fields, time)
    }

    /// `u_i = 1 / (n + 1)` everywhere.
    pub fn uniform(grid: &TorusGrid, species: usize) -> Self {
        let v = 1.0 / species as f64;
        Self {
            fields: (0..species).map(|_| ScalarField::constant(grid, v)).collect(),
            time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.fields.iter().enumerate() {
            for (x, &v) in f.values().iter().enumerate() {
                if !(-BOX_TOL..=1.0 + BOX_TOL).contains(&v) {
                    return Err(Error::InvalidState(format!(
                        "u_{i} = {v} outside [0, 1] at point {x}"
                    )));
                }
            }
        }
        let dev = self.simplex_deviation();
        if dev > SIMPLEX_TOL {
            return Err(Error::InvalidState(format!("max |sum_i u_i - 1| = {dev:e}")));
        }
        Ok(())
    }

    pub fn grid(&self) -> &TorusGrid {
        self.fields[0].grid()
    }

    pub fn species(&self) -> usize {
        self.fields.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &ScalarField {
        &self.fields[i]
    }

    pub fn raw(&self) -> Vec<&[f64]> {
        self.fields.iter().map(|f| f.values()).collect()
    }

    pub fn to_raw(&self) -> Vec<Vec<f64>> {
        self.fields.iter().map(|f| f.values().to_vec()).collect()
    }

    /// `max_x |sum_i u_i(x) - 1|`.
    pub fn simplex_deviation(&self) -> f64 {
        let len = self.grid().len();
        (0..len)
            .map(|x| (self.fields.iter().map(|f| f.values()[x]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.fields
            .iter()
            .flat_map(|f| f.values().iter().cloned())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.fields
            .iter()
            .flat_map(|f| f.values().iter().cloned())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn masses(&self) -> Vec<f64> {
        self.fields.iter().map(|f| f.integrate()).collect()
    }

    /// Location and value of the smallest volume fraction.
    pub fn argmin(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::INFINITY);
        for (i, f) in self.fields.iter().enumerate() {
            for (x, &v) in f.values().iter().enumerate() {
                if v < best.2 {
                    best = (i, x, v);
                }
            }
        }
        best
    }

    /// L2 norm over all species of `self - other`.
    pub fn distance_l2(&self, other: &State) -> f64 {
        let grid = self.grid();
        self.fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| {
                a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .mul_add(grid.cell_volume(), 0.0)
            .sqrt()
    }
}

/// Chemical potentials `mu_0, ..., mu_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChemPotential {
    pub fields: Vec<ScalarField>,
}

impl ChemPotential {
    pub fn raw(&self) -> Vec<&[f64]> {
        self.fields.iter().map(|f| f.values()).collect()
    }
}

/// Nonlocal flux parts `J_ij` for `i < j`; `J_ji = -J_ij`.
#[derive(Clone, Debug)]
pub struct Flux {
    species: usize,
    upper: Vec<Vec<ScalarField>>,
}

impl Flux {
    fn pair_index(&self, i: usize, j: usize) -> usize {
        // row-major index into the strict upper triangle
        i * (2 * self.species - i - 1) / 2 + (j - i - 1)
    }

    /// `J_ij` as `d` components; `None` for `i == j`.
    pub fn get(&self, i: usize, j: usize) -> Option<Vec<ScalarField>> {
        if i == j {
            return None;
        }
        if i < j {
            Some(self.upper[self.pair_index(i, j)].clone())
        } else {
            Some(
                self.upper[self.pair_index(j, i)]
                    .iter()
                    .map(|c| c.map(|v| -v))
                    .collect(),
            )
        }
    }

    /// `sum_{i != j} ||J_ij||^2`.
    pub fn norm_sq(&self) -> f64 {
        2.0 * self
            .upper
            .iter()
            .flat_map(|comps| comps.iter().map(|c| c.norm_l2().powi(2)))
            .sum::<f64>()
    }
}

/// Components of the energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub entropy: f64,
    /// `1/2 sum c_ij <B u_j, u_i>` (nonlocal) or `1/2 sum c_ij <grad u_i, grad u_j>` (local).
    pub interaction: f64,
    pub total: f64,
}

/// A model bound to a grid: parameters plus the precomputed interaction operator.
#[derive(Clone, Debug)]
pub struct Model {
    params: ModelParams,
    interaction: Interaction,
}

impl Model {
    pub fn new(params: ModelParams, grid: &TorusGrid) -> Result<Self> {
        let interaction = Interaction::for_model(&params, grid)?;
        Ok(Self { params, interaction })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn interaction(&self) -> &Interaction {
        &self.interaction
    }

    pub fn grid(&self) -> &TorusGrid {
        self.interaction.grid()
    }

    pub fn species(&self) -> usize {
        self.params.species()
    }

    fn check_state(&self, state: &State) -> Result<()> {
        if state.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        if state.species() != self.species() {
            return Err(Error::SizeMismatch {
                expected: self.species(),
                actual: state.species(),
            });
        }
        Ok(())
    }

    /// `sum_k c_ik I(v_k)` for every `i`, where `I` is the interaction operator.
    pub fn coupled_apply_raw(&self, v: &[&[f64]]) -> Vec<Vec<f64>> {
        let grid = self.grid();
        let spectra = grid.forward_many(v);
        let symbol = self.interaction.symbol();
        let c = self.params.c();
        let s = v.len();
        let mixed: Vec<Vec<Complex64>> = (0..s)
            .map(|i| {
                (0..grid.len())
                    .map(|k| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for j in 0..s {
                            acc += spectra[j][k] * c[(i, j)];
                        }
                        acc * symbol[k]
                    })
                    .collect()
            })
            .collect();
        grid.inverse_many(mixed)
    }

    /// `q_i = sum_k c_ik B(u_k)`; for local models `B` is replaced by `-Laplacian`.
    pub fn q_fields(&self, state: &State) -> Result<Vec<ScalarField>> {
        self.check_state(state)?;
        self.coupled_apply_raw(&state.raw())
            .into_iter()
            .map(|v| ScalarField::new(self.grid(), v))
            .collect()
    }

    /// `mu_i = ln u_i + q_i`.
    pub fn chemical_potential(&self, state: &State) -> Result<ChemPotential> {
        self.check_state(state)?;
        let (species, index, value) = state.argmin();
        if value <= 0.0 {
            return Err(Error::PositivityFloor { species, index, value });
        }
        let q = self.coupled_apply_raw(&state.raw());
        let fields = q
            .into_iter()
            .zip(state.fields())
            .map(|(qi, ui)| {
                let v = qi.iter().zip(ui.values()).map(|(q, u)| u.ln() + q).collect();
                ScalarField::new(self.grid(), v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChemPotential { fields })
    }

    /// Entropy plus interaction energy.
    pub fn energy(&self, state: &State) -> Result<Energy> {
        self.check_state(state)?;
        let entropy = entropy(state);
        let c = self.params.c();
        let s = self.species();
        let grid = self.grid();
        let interaction = match &self.interaction {
            Interaction::Nonlocal(op) => {
                let bu: Vec<Vec<f64>> = state.fields().iter().map(|f| op.apply_raw(f.values())).collect();
                let mut acc = 0.0;
                for i in 0..s {
                    for j in 0..s {
                        acc += c[(i, j)] * grid.inner_raw(&bu[j], state.field(i).values());
                    }
                }
                0.5 * acc
            }
            Interaction::Local { .. } => {
                let grads: Vec<Vec<Vec<f64>>> =
                    state.fields().iter().map(|f| grid.gradient_raw(f.values())).collect();
                let mut acc = 0.0;
                for i in 0..s {
                    for j in 0..s {
                        let dot: f64 = (0..grid.dim())
                            .map(|a| grid.inner_raw(&grads[i][a], &grads[j][a]))
                            .sum();
                        acc += c[(i, j)] * dot;
                    }
                }
                0.5 * acc
            }
        };
        Ok(Energy {
            entropy,
            interaction,
            total: entropy + interaction,
        })
    }

    /// Nonlocal flux parts `J_ij = u_i u_j grad(q_i - q_j)`.
    pub fn fluxes(&self, state: &State) -> Result<Flux> {
        self.check_state(state)?;
        let grid = self.grid();
        let s = self.species();
        let q = self.coupled_apply_raw(&state.raw());
        let mut upper = Vec::with_capacity(s * (s - 1) / 2);
        for i in 0..s {
            for j in i + 1..s {
                let diff: Vec<f64> = q[i].iter().zip(&q[j]).map(|(a, b)| a - b).collect();
                let grad = grid.gradient_raw(&diff);
                let ui = state.field(i).values();
                let uj = state.field(j).values();
                let comps = grad
                    .into_iter()
                    .map(|g| {
                        let v = g.iter().enumerate().map(|(x, gv)| ui[x] * uj[x] * gv).collect();
                        ScalarField::new(grid, v)
                    })
                    .collect::<Result<Vec<_>>>()?;
                upper.push(comps);
            }
        }
        Ok(Flux { species: s, upper })
    }

    /// Right-hand side `div(sum_{j != i} L_ij [u_j grad u_i - u_i grad u_j + J_ij])`.
    pub fn rhs(&self, state: &State) -> Result<Vec<ScalarField>> {
        self.check_state(state)?;
        let grid = self.grid();
        let s = self.species();
        let dim = grid.dim();
        let len = grid.len();
        let l = self.params.l();
        let q = self.coupled_apply_raw(&state.raw());
        let grad_u: Vec<Vec<Vec<f64>>> = state.fields().iter().map(|f| grid.gradient_raw(f.values())).collect();
        let grad_q: Vec<Vec<Vec<f64>>> = q.iter().map(|f| grid.gradient_raw(f)).collect();
        let u = state.raw();
        let mut out = Vec::with_capacity(s);
        for i in 0..s {
            let mut flux = vec![vec![0.0; len]; dim];
            for j in 0..s {
                if j == i {
                    continue;
                }
                let lij = l[(i, j)];
                for (a, fa) in flux.iter_mut().enumerate() {
                    for x in 0..len {
                        let (ui, uj) = (u[i][x], u[j][x]);
                        fa[x] += lij
                            * (uj * grad_u[i][a][x] - ui * grad_u[j][a][x]
                                + ui * uj * (grad_q[i][a][x] - grad_q[j][a][x]));
                    }
                }
            }
            let comps: Vec<&[f64]> = flux.iter().map(|f| f.as_slice()).collect();
            out.push(ScalarField::new(grid, grid.divergence_raw(&comps))?);
        }
        Ok(out)
    }
}

/// `sum_i int (u_i ln u_i - u_i + 1)` with `0 ln 0 = 0`.
pub fn entropy(state: &State) -> f64 {
    let grid = state.grid();
    state
        .fields()
        .iter()
        .map(|f| {
            grid.integrate_raw(
                &f.values()
                    .iter()
                    .map(|&u| entropy_density(u))
                    .collect::<Vec<_>>(),
            )
        })
        .sum()
}

pub(crate) fn entropy_density(u: f64) -> f64 {
    if u > 0.0 {
        u * u.ln() - u + 1.0
    } else {
        1.0
    }
}
