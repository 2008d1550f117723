//! Pure states, subsystems, and exact (noise-free) properties.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pauli::{qubit_bit, PauliAxis, PauliString};

const NORM_TOL: f64 = 1e-10;

/// Largest subsystem for which a reduced density matrix is formed.
pub const MAX_SUBSYSTEM: usize = 12;

/// Normalized amplitude vector over `2^N` basis states.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    /// Wrap an amplitude vector that is already normalized to within 1e-10.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let n_qubits = register_size(amplitudes.len())?;
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("state has squared norm {norm}, expected 1")));
        }
        Ok(Self { n_qubits, amplitudes })
    }

    /// Normalize an arbitrary nonzero vector.
    pub fn normalized(mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let n_qubits = register_size(amplitudes.len())?;
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid("cannot normalize a zero or non-finite vector"));
        }
        for a in &mut amplitudes {
            *a /= norm;
        }
        Ok(Self { n_qubits, amplitudes })
    }

    /// Computational basis state `|index>`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 30 {
            return Err(invalid(format!("unsupported register size {n_qubits}")));
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(invalid(format!("basis index {index} out of range for {n_qubits} qubits")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// `<psi|P|psi>` for a Pauli string (coefficient included).
    pub fn expectation(&self, p: &PauliString) -> Result<f64> {
        if p.n_qubits() != self.n_qubits {
            return Err(invalid("Pauli string and state sizes differ"));
        }
        let m = p.masks();
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, a) in self.amplitudes.iter().enumerate() {
            acc += a.conj() * m.element(i) * self.amplitudes[i ^ m.flip];
        }
        Ok(acc.re)
    }
}

fn register_size(len: usize) -> Result<usize> {
    if len < 2 || !len.is_power_of_two() {
        return Err(invalid(format!("amplitude vector length {len} is not 2^N with N >= 1")));
    }
    Ok(len.trailing_zeros() as usize)
}

/// A nonempty, strictly increasing set of 1-based qubit labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsystemSpec {
    qubits: Vec<usize>,
}

impl SubsystemSpec {
    pub fn new(qubits: Vec<usize>, n_qubits: usize) -> Result<Self> {
        if qubits.is_empty() {
            return Err(invalid("subsystem must be nonempty"));
        }
        if qubits.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("subsystem {qubits:?} is not strictly increasing")));
        }
        if qubits[0] == 0 || *qubits.last().unwrap() > n_qubits {
            return Err(invalid(format!("subsystem {qubits:?} outside 1..={n_qubits}")));
        }
        Ok(Self { qubits })
    }

    /// `{1, ..., j}`.
    pub fn prefix(j: usize, n_qubits: usize) -> Result<Self> {
        Self::new((1..=j).collect(), n_qubits)
    }

    pub fn qubits(&self) -> &[usize] {
        &self.qubits
    }

    pub fn len(&self) -> usize {
        self.qubits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qubits.is_empty()
    }

    /// The remaining qubits; `None` when `self` covers the whole register.
    pub fn complement(&self, n_qubits: usize) -> Option<Self> {
        let rest: Vec<usize> = (1..=n_qubits).filter(|q| !self.qubits.contains(q)).collect();
        if rest.is_empty() {
            None
        } else {
            Some(Self { qubits: rest })
        }
    }
}

/// Split a basis index into (subsystem index, environment index); both keep
/// qubit-1-most-significant ordering.
fn split_index(i: usize, n: usize, in_a: &[bool]) -> (usize, usize) {
    let (mut a, mut b) = (0usize, 0usize);
    for q in 1..=n {
        let bit = (i >> qubit_bit(n, q)) & 1;
        if in_a[q - 1] {
            a = (a << 1) | bit;
        } else {
            b = (b << 1) | bit;
        }
    }
    (a, b)
}

fn check_subsystem(state: &QuantumState, sub: &SubsystemSpec) -> Result<()> {
    let n = state.n_qubits;
    if *sub.qubits.last().unwrap() > n {
        return Err(invalid(format!("subsystem {:?} outside a {n}-qubit state", sub.qubits)));
    }
    if sub.len() > MAX_SUBSYSTEM {
        return Err(invalid(format!("subsystem of {} qubits exceeds {MAX_SUBSYSTEM}", sub.len())));
    }
    Ok(())
}

/// Amplitudes reshaped to a `2^|A| x 2^|B|` matrix.
fn bipartition(state: &QuantumState, sub: &SubsystemSpec) -> DMatrix<Complex64> {
    let n = state.n_qubits;
    let mut in_a = vec![false; n];
    for &q in &sub.qubits {
        in_a[q - 1] = true;
    }
    let da = 1usize << sub.len();
    let db = state.dim() / da;
    let mut m = DMatrix::from_element(da, db, Complex64::new(0.0, 0.0));
    for (i, amp) in state.amplitudes.iter().enumerate() {
        let (a, b) = split_index(i, n, &in_a);
        m[(a, b)] = *amp;
    }
    m
}

/// `rho_A = Tr_B |psi><psi|`, indexed with the lowest-labelled qubit of `A`
/// as most significant bit.
pub fn reduced_density_matrix(state: &QuantumState, sub: &SubsystemSpec) -> Result<DMatrix<Complex64>> {
    check_subsystem(state, sub)?;
    let m = bipartition(state, sub);
    Ok(&m * m.adjoint())
}

/// `Tr(rho_A^2)`.
pub fn exact_purity(state: &QuantumState, sub: &SubsystemSpec) -> Result<f64> {
    check_subsystem(state, sub)?;
    let m = bipartition(state, sub);
    // Tr(rho_A^2) = Tr(rho_B^2); use the smaller Gram matrix.
    let gram = if m.nrows() <= m.ncols() { &m * m.adjoint() } else { m.adjoint() * &m };
    Ok(gram.iter().map(|z| z.norm_sqr()).sum())
}

/// Rényi-2 entropy `-log2 Tr(rho_A^2)` in bits.
pub fn exact_entropy(state: &QuantumState, sub: &SubsystemSpec) -> Result<f64> {
    let p = exact_purity(state, sub)?;
    Ok((-p.log2()).clamp(0.0, sub.len() as f64))
}

/// Axis of a two-point correlator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrAxis {
    X,
    Z,
}

impl CorrAxis {
    pub fn pauli(self) -> PauliAxis {
        match self {
            CorrAxis::X => PauliAxis::X,
            CorrAxis::Z => PauliAxis::Z,
        }
    }
}

/// `Tr(rho sigma_i^a sigma_j^a)` for 1-based qubits `i != j`.
pub fn exact_correlation(state: &QuantumState, i: usize, j: usize, axis: CorrAxis) -> Result<f64> {
    if i == j {
        return Err(invalid(format!("correlation needs distinct qubits, got {i} twice")));
    }
    let p = PauliString::from_sparse(state.n_qubits, &[(i, axis.pauli()), (j, axis.pauli())], 1.0)?;
    state.expectation(&p)
}
