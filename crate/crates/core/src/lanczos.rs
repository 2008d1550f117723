//! Lowest eigenpair of a Pauli-sum Hamiltonian by restarted Lanczos.
//!
//! Full reorthogonalization against the stored Krylov basis, Krylov dimension
//! `min(2^N, 200)`, seeded random start vector. A run converges when the true
//! residual `||H x - E x||` drops below `1e-10`; otherwise the best Ritz vector
//! seeds a restart.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::pauli::{apply_hamiltonian, HamiltonianSpec, MAX_QUBITS};
use crate::rng;
use crate::state::QuantumState;

pub const MAX_KRYLOV: usize = 200;
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const MAX_RESTARTS: usize = 20;

#[derive(Clone, Debug)]
pub struct GroundState {
    pub energy: f64,
    pub state: QuantumState,
    /// Total matrix-vector products used.
    pub matvecs: usize,
    pub restarts: usize,
    pub residual: f64,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn scale(a: &mut [Complex64], s: f64) {
    for x in a {
        *x *= s;
    }
}

/// Two passes of classical Gram-Schmidt against `basis`.
fn orthogonalize(w: &mut [Complex64], basis: &[Vec<Complex64>]) {
    for _ in 0..2 {
        for v in basis {
            let c = dot(v, w);
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= c * vi;
            }
        }
    }
}

fn lowest_ritz(alphas: &[f64], betas: &[f64]) -> (f64, Vec<f64>) {
    let k = alphas.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (idx, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty tridiagonal");
    (theta, eig.eigenvectors.column(idx).iter().copied().collect())
}

/// Fix the global phase: the largest-magnitude amplitude (first on ties)
/// becomes real and positive.
fn canonical_phase(v: &mut [Complex64]) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, a) in v.iter().enumerate() {
        let m = a.norm_sqr();
        if m > best_mag * (1.0 + 1e-9) {
            best = i;
            best_mag = m;
        }
    }
    let phase = v[best].conj() / v[best].norm();
    for a in v {
        *a *= phase;
    }
}

/// Ground energy and state. Deterministic for a fixed `seed`.
pub fn ground_state(h: &HamiltonianSpec, seed: u64) -> Result<GroundState> {
    let n = h.n_qubits();
    if n > MAX_QUBITS {
        return Err(invalid(format!("{n} qubits exceeds the sparse solver budget of {MAX_QUBITS}")));
    }
    let dim = h.dim();
    let krylov = dim.min(MAX_KRYLOV);

    let mut r = rng::seeded(seed);
    let mut start: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    let s = norm(&start);
    scale(&mut start, 1.0 / s);

    let mut matvecs = 0;
    let mut last_residual = f64::INFINITY;
    for restart in 0..=MAX_RESTARTS {
        let mut basis: Vec<Vec<Complex64>> = vec![start.clone()];
        let mut alphas: Vec<f64> = Vec::with_capacity(krylov);
        let mut betas: Vec<f64> = Vec::with_capacity(krylov);

        for j in 0..krylov {
            let mut w = apply_hamiltonian(h, &basis[j])?;
            matvecs += 1;
            let alpha = dot(&basis[j], &w).re;
            alphas.push(alpha);
            orthogonalize(&mut w, &basis);
            let beta = norm(&w);
            if j + 1 == krylov || beta < 1e-12 {
                break;
            }
            // Periodic early exit on the Ritz residual estimate beta * |s_k|.
            if (j + 1) % 10 == 0 {
                let (_, s) = lowest_ritz(&alphas, &betas);
                if beta * s[j].abs() < RESIDUAL_TOL * 0.1 {
                    break;
                }
            }
            betas.push(beta);
            scale(&mut w, 1.0 / beta);
            basis.push(w);
        }

        let k = alphas.len();
        let (_, coeffs) = lowest_ritz(&alphas, &betas[..k - 1]);
        let mut x = vec![Complex64::new(0.0, 0.0); dim];
        for (c, v) in coeffs.iter().zip(&basis) {
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += vi * *c;
            }
        }
        let nx = norm(&x);
        scale(&mut x, 1.0 / nx);

        let hx = apply_hamiltonian(h, &x)?;
        matvecs += 1;
        let energy = dot(&x, &hx).re;
        let residual = hx
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b * energy).norm_sqr())
            .sum::<f64>()
            .sqrt();
        last_residual = residual;
        if residual < RESIDUAL_TOL {
            canonical_phase(&mut x);
            let state = QuantumState::normalized(x)?;
            return Ok(GroundState { energy, state, matvecs, restarts: restart, residual });
        }
        start = x;
    }
    Err(Error::NumericalFailure(format!(
        "Lanczos did not converge for params {:?}: residual {last_residual:.3e} after {} restarts and {matvecs} matvecs",
        h.params(),
        MAX_RESTARTS
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{build_cluster_ising, build_xxz};

    #[test]
    fn two_site_singlet() {
        let gs = ground_state(&build_xxz(2, 1.0, 0.0).unwrap(), 7).unwrap();
        assert!((gs.energy + 3.0).abs() < 1e-10);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = gs.state.amplitudes();
        // singlet up to global phase
        let overlap = (amps[1] * s - amps[2] * s).norm();
        assert!((overlap - 1.0).abs() < 1e-10, "{amps:?}");
    }

    #[test]
    fn three_site_cluster() {
        let gs = ground_state(&build_cluster_ising(3, 0.0, 0.0).unwrap(), 1).unwrap();
        assert!((gs.energy + 1.0).abs() < 1e-10);
    }

    #[test]
    fn deterministic_for_seed() {
        let h = build_xxz(6, 0.8, 1.0).unwrap();
        let a = ground_state(&h, 3).unwrap();
        let b = ground_state(&h, 3).unwrap();
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn rejects_oversized_register() {
        let terms = vec![crate::pauli::PauliString::new(vec![crate::pauli::PauliAxis::Z; 17], 1.0).unwrap()];
        let h = HamiltonianSpec::new(17, terms, vec![]).unwrap();
        assert!(matches!(ground_state(&h, 0), Err(Error::InvalidArgument(_))));
    }
}
