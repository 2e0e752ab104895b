//! Operators shared by the S1 solve, the S2 Newton solve and the implicit
//! step. Vectors are flat and species-major: species `i` occupies
//! `[i * len, (i + 1) * len)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::grid::TorusGrid;
use crate::model::Model;

pub(crate) fn species_slices(v: &[f64], len: usize) -> Vec<&[f64]> {
    v.chunks_exact(len).collect()
}

pub(crate) fn flatten(fields: &[Vec<f64>]) -> Vec<f64> {
    fields.iter().flat_map(|f| f.iter().cloned()).collect()
}

/// Removes the species mean at every point: the orthogonal projection onto
/// `{v : sum_i v_i = 0}`. A second pass removes the round-off left by the
/// first, which matters when the mean dwarfs the tangent part.
pub(crate) fn project_tangent(v: &mut [f64], species: usize) {
    let len = v.len() / species;
    let inv = 1.0 / species as f64;
    for x in 0..len {
        for _ in 0..2 {
            let mean = (0..species).map(|i| v[i * len + x]).sum::<f64>() * inv;
            for i in 0..species {
                v[i * len + x] -= mean;
            }
        }
    }
}

/// `ln u + C I(u)` for the interaction operator `I`, projected onto the
/// tangent space. This is the chemical potential consistent with both half
/// steps at a fixed point.
pub(crate) fn tangent_potential(model: &Model, u: &[f64]) -> Vec<f64> {
    let len = model.grid().len();
    let s = model.species();
    let cbu = model.coupled_apply_raw(&species_slices(u, len));
    let mut mu = vec![0.0; s * len];
    for i in 0..s {
        for x in 0..len {
            mu[i * len + x] = u[i * len + x].ln() + cbu[i][x];
        }
    }
    project_tangent(&mut mu, s);
    mu
}

/// The S1 operator `A = G^T M(u) G + tau H2` with the mobility frozen at `u`.
pub(crate) struct S1Operator<'a> {
    model: &'a Model,
    u: &'a [f64],
    tau: f64,
    h2: Vec<f64>,
}

impl<'a> S1Operator<'a> {
    pub fn new(model: &'a Model, u: &'a [f64], tau: f64) -> Self {
        Self {
            model,
            u,
            tau,
            h2: model.grid().h2_symbol(),
        }
    }

    pub fn apply(&self, mu: &[f64], out: &mut [f64]) {
        let grid = self.model.grid();
        let len = grid.len();
        let s = self.model.species();
        let dim = grid.dim();
        let l = self.model.params().l();
        let spectra = grid.forward_many(&species_slices(mu, len));
        let mut grads = Vec::with_capacity(s * dim);
        for spectrum in &spectra {
            for axis in 0..dim {
                grads.push(grid.derivative_spectrum(spectrum, axis));
            }
        }
        let grads = grid.inverse_many(grads);
        let u = self.u;
        // flux_i = sum_j M_ij grad mu_j = sum_{j != i} L_ij u_i u_j (grad mu_i - grad mu_j)
        let mut flux = vec![vec![0.0; len]; s * dim];
        for i in 0..s {
            for j in 0..s {
                if i == j {
                    continue;
                }
                let lij = l[(i, j)];
                for axis in 0..dim {
                    let gi = &grads[i * dim + axis];
                    let gj = &grads[j * dim + axis];
                    let f = &mut flux[i * dim + axis];
                    for x in 0..len {
                        f[x] += lij * u[i * len + x] * u[j * len + x] * (gi[x] - gj[x]);
                    }
                }
            }
        }
        let flux_refs: Vec<&[f64]> = flux.iter().map(|f| f.as_slice()).collect();
        let flux_spec = grid.forward_many(&flux_refs);
        let mut result = Vec::with_capacity(s);
        for i in 0..s {
            let mut acc: Vec<Complex64> = spectra[i]
                .iter()
                .zip(&self.h2)
                .map(|(c, h)| c * (self.tau * h))
                .collect();
            for axis in 0..dim {
                let d = grid.derivative_spectrum(&flux_spec[i * dim + axis], axis);
                for (a, v) in acc.iter_mut().zip(d) {
                    *a -= v;
                }
            }
            result.push(acc);
        }
        for (i, v) in grid.inverse_many(result).into_iter().enumerate() {
            out[i * len..(i + 1) * len].copy_from_slice(&v);
        }
    }
}

/// Spatial mean of the mobility matrix.
pub(crate) fn mean_mobility(model: &Model, u: &[f64]) -> DMatrix<f64> {
    let s = model.species();
    let len = model.grid().len();
    let l = model.params().l();
    let mut m = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            if i == j {
                continue;
            }
            let avg = (0..len).map(|x| u[i * len + x] * u[j * len + x]).sum::<f64>() / len as f64;
            let v = l[(i, j)] * avg;
            m[(i, j)] -= v;
            m[(i, i)] += v;
        }
    }
    m
}

/// Entropy Hessian `H v = v / u + C I(v)`.
pub(crate) fn apply_hessian(model: &Model, inv_u: &[f64], v: &[f64], out: &mut [f64]) {
    let len = model.grid().len();
    let cbv = model.coupled_apply_raw(&species_slices(v, len));
    for (i, row) in cbv.iter().enumerate() {
        for x in 0..len {
            let k = i * len + x;
            out[k] = v[k] * inv_u[k] + row[x];
        }
    }
}

/// Orthonormal basis of the complement of `(1, ..., 1)`, as columns.
pub(crate) fn helmert_basis(species: usize) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(species, species - 1);
    for j in 1..species {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            v[(i, j - 1)] = 1.0 / norm;
        }
        v[(j, j - 1)] = -(j as f64) / norm;
    }
    v
}

/// A real symmetric `s x s` matrix per wavenumber, applied in Fourier space.
pub(crate) struct BlockPreconditioner {
    grid: TorusGrid,
    species: usize,
    blocks: Vec<f64>,
}

impl BlockPreconditioner {
    fn from_fn(grid: &TorusGrid, species: usize, mut block: impl FnMut(usize) -> DMatrix<f64>) -> Self {
        let len = grid.len();
        let mut blocks = Vec::with_capacity(len * species * species);
        for k in 0..len {
            let b = block(k);
            for i in 0..species {
                for j in 0..species {
                    blocks.push(b[(i, j)]);
                }
            }
        }
        Self {
            grid: grid.clone(),
            species,
            blocks,
        }
    }

    /// Inverse of `|k|^2 Mbar + tau H2(k)`; with `mbar = None` only the `tau H2` part.
    pub fn s1(model: &Model, mbar: Option<&DMatrix<f64>>, tau: f64) -> Self {
        let grid = model.grid();
        let s = model.species();
        let ksq = grid.operator_k_squared();
        let h2 = grid.h2_symbol();
        Self::from_fn(grid, s, |k| {
            let mut p = DMatrix::identity(s, s) * (tau * h2[k]);
            if let Some(m) = mbar {
                p += m * ksq[k];
            }
            spd_inverse(p)
        })
    }

    /// `V (V^T Q V)^{-1} V^T` with `Q = Hbar` (`tau = None`) or
    /// `Q = Hbar Abar Hbar + Hbar / tau`, where `Hbar = diag(hdiag) + I_hat(k) C`
    /// and `Abar = |k|^2 Mbar + tau H2(k)`.
    pub fn tangent(model: &Model, hdiag: &[f64], implicit: Option<(&DMatrix<f64>, f64)>) -> Self {
        let grid = model.grid();
        let s = model.species();
        let c = model.params().c();
        let symbol = model.interaction().symbol();
        let ksq = grid.operator_k_squared();
        let h2 = grid.h2_symbol();
        let v = helmert_basis(s);
        let vt = v.transpose();
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(hdiag));
        Self::from_fn(grid, s, |k| {
            let hbar = &diag + c * symbol[k];
            let hr = &vt * &hbar * &v;
            let q = match implicit {
                None => hr,
                Some((mbar, tau)) => {
                    let abar = mbar * ksq[k] + DMatrix::identity(s, s) * (tau * h2[k]);
                    let ar = &vt * abar * &v;
                    &hr * ar * &hr + &hr / tau
                }
            };
            &v * spd_inverse(q) * &vt
        })
    }

    pub fn apply(&self, r: &[f64], out: &mut [f64]) {
        let len = self.grid.len();
        let s = self.species;
        let spectra = self.grid.forward_many(&species_slices(r, len));
        let mut mixed = vec![vec![Complex64::new(0.0, 0.0); len]; s];
        for k in 0..len {
            let b = &self.blocks[k * s * s..(k + 1) * s * s];
            for i in 0..s {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..s {
                    acc += spectra[j][k] * b[i * s + j];
                }
                mixed[i][k] = acc;
            }
        }
        for (i, v) in self.grid.inverse_many(mixed).into_iter().enumerate() {
            out[i * len..(i + 1) * len].copy_from_slice(&v);
        }
    }
}

fn spd_inverse(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    match sym.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => sym.try_inverse().unwrap_or_else(|| DMatrix::identity(m.nrows(), m.ncols())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn helmert_basis_is_orthonormal_and_tangent() {
        for s in 2..6 {
            let v = helmert_basis(s);
            let gram = v.transpose() * &v;
            assert!((gram - DMatrix::identity(s - 1, s - 1)).amax() < 1e-14);
            for j in 0..s - 1 {
                assert!(v.column(j).sum().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tangent_projection_removes_species_mean() {
        let mut v = vec![1.0, 2.0, 3.0, 5.0, 0.0, 1.0];
        project_tangent(&mut v, 3);
        assert!((v[0] + v[2] + v[4]).abs() < 1e-15);
        assert!((v[1] + v[3] + v[5]).abs() < 1e-15);
        assert!((v[0] - (1.0 - 4.0 / 3.0)).abs() < 1e-15);
    }
}
