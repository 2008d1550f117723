//! Pauli strings and parameterized spin Hamiltonians.
//!
//! Qubits carry 1-based labels throughout the crate. Qubit 1 is the most
//! significant bit of a computational-basis index, so for an `N`-qubit
//! register qubit `q` lives at bit `N - q`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par;

/// Largest register the sparse solver accepts.
pub const MAX_QUBITS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PauliAxis {
    I,
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub fn symbol(self) -> char {
        match self {
            PauliAxis::I => 'I',
            PauliAxis::X => 'X',
            PauliAxis::Y => 'Y',
            PauliAxis::Z => 'Z',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'I' => Some(PauliAxis::I),
            'X' => Some(PauliAxis::X),
            'Y' => Some(PauliAxis::Y),
            'Z' => Some(PauliAxis::Z),
            _ => None,
        }
    }
}

/// Bit offset of 1-based qubit `q` in an `n`-qubit basis index.
#[inline]
pub fn qubit_bit(n: usize, q: usize) -> usize {
    n - q
}

/// A weighted tensor product of single-qubit Paulis.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliString {
    axes: Vec<PauliAxis>,
    coefficient: f64,
}

impl PauliString {
    pub fn new(axes: Vec<PauliAxis>, coefficient: f64) -> Result<Self> {
        if axes.is_empty() {
            return Err(invalid("Pauli string must act on at least one qubit"));
        }
        if axes.len() > 63 {
            return Err(invalid("Pauli string longer than 63 qubits"));
        }
        if !coefficient.is_finite() {
            return Err(invalid(format!("non-finite coefficient {coefficient}")));
        }
        Ok(Self { axes, coefficient })
    }

    /// Identity everywhere except the listed `(qubit, axis)` factors.
    pub fn from_sparse(n: usize, factors: &[(usize, PauliAxis)], coefficient: f64) -> Result<Self> {
        let mut axes = vec![PauliAxis::I; n];
        for &(q, a) in factors {
            if q == 0 || q > n {
                return Err(invalid(format!("qubit {q} outside 1..={n}")));
            }
            if axes[q - 1] != PauliAxis::I {
                return Err(invalid(format!("qubit {q} listed twice")));
            }
            axes[q - 1] = a;
        }
        Self::new(axes, coefficient)
    }

    pub fn axes(&self) -> &[PauliAxis] {
        &self.axes
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn n_qubits(&self) -> usize {
        self.axes.len()
    }

    /// True when the string contains no X or Y factor.
    pub fn is_diagonal(&self) -> bool {
        self.axes.iter().all(|a| matches!(a, PauliAxis::I | PauliAxis::Z))
    }

    pub fn with_coefficient(&self, coefficient: f64) -> Self {
        Self { axes: self.axes.clone(), coefficient }
    }

    pub(crate) fn masks(&self) -> TermMasks {
        let n = self.axes.len();
        let mut flip = 0usize;
        let mut sign = 0usize;
        let mut n_y = 0u32;
        for (k, a) in self.axes.iter().enumerate() {
            let bit = 1usize << qubit_bit(n, k + 1);
            match a {
                PauliAxis::I => {}
                PauliAxis::X => flip |= bit,
                PauliAxis::Y => {
                    flip |= bit;
                    sign |= bit;
                    n_y += 1;
                }
                PauliAxis::Z => sign |= bit,
            }
        }
        // P|j> = i^{n_y} (-1)^{popcount(j & sign)} |j ^ flip>
        let phase = match n_y % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
        TermMasks { flip, sign, weight: phase * self.coefficient }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ", self.coefficient)?;
        for a in &self.axes {
            write!(f, "{}", a.symbol())?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TermMasks {
    pub flip: usize,
    pub sign: usize,
    pub weight: Complex64,
}

impl TermMasks {
    /// Matrix element <i|P|i ^ flip> times the coefficient.
    #[inline]
    pub fn element(&self, i: usize) -> Complex64 {
        let j = i ^ self.flip;
        if (j & self.sign).count_ones() % 2 == 1 {
            -self.weight
        } else {
            self.weight
        }
    }
}

/// A Hermitian operator written as a real-weighted Pauli sum, together with
/// the physical parameters that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    n_qubits: usize,
    terms: Vec<PauliString>,
    params: Vec<f64>,
}

impl HamiltonianSpec {
    /// Zero-coefficient terms are dropped.
    pub fn new(n_qubits: usize, terms: Vec<PauliString>, params: Vec<f64>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 63 {
            return Err(invalid(format!("unsupported register size {n_qubits}")));
        }
        if let Some(t) = terms.iter().find(|t| t.n_qubits() != n_qubits) {
            return Err(invalid(format!(
                "term of length {} in a {n_qubits}-qubit Hamiltonian",
                t.n_qubits()
            )));
        }
        let terms = terms.into_iter().filter(|t| t.coefficient != 0.0).collect();
        Ok(Self { n_qubits, terms, params })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn terms(&self) -> &[PauliString] {
        &self.terms
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        1usize << self.n_qubits
    }

    /// Parse the plain-text Pauli-sum format: one `<coefficient> <axes>` term
    /// per line, `#` starts a comment line, blank lines are ignored.
    pub fn parse_pauli_sum(text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let mut width: Option<usize> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |message: String| Error::Parse { line: line_no, message };
            let mut fields = line.split_whitespace();
            let coef_txt = fields.next().ok_or_else(|| perr("missing coefficient".into()))?;
            let axes_txt = fields.next().ok_or_else(|| perr("missing axes string".into()))?;
            if fields.next().is_some() {
                return Err(perr("trailing fields after axes string".into()));
            }
            let coefficient = f64::from_str(coef_txt)
                .map_err(|e| perr(format!("bad coefficient {coef_txt:?}: {e}")))?;
            let axes = axes_txt
                .chars()
                .map(|c| {
                    PauliAxis::from_symbol(c.to_ascii_uppercase())
                        .ok_or_else(|| perr(format!("unknown Pauli symbol {c:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            match width {
                None => width = Some(axes.len()),
                Some(w) if w != axes.len() => {
                    return Err(perr(format!("axes string has length {}, expected {w}", axes.len())))
                }
                _ => {}
            }
            terms.push(PauliString::new(axes, coefficient).map_err(|e| perr(e.to_string()))?);
        }
        let n = width.ok_or(Error::Parse { line: 0, message: "no terms found".into() })?;
        Self::new(n, terms, Vec::new())
    }

    pub fn load_pauli_sum(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_pauli_sum(&text)
    }

    /// Render in the ingestion format (round-trips through `parse_pauli_sum`).
    pub fn to_pauli_sum(&self) -> String {
        let mut out = String::new();
        for t in &self.terms {
            out.push_str(&t.to_string());
            out.push('\n');
        }
        out
    }

    /// `<v, H v>`; complex in general, real up to rounding for normalized `v`.
    pub fn expectation(&self, v: &[Complex64]) -> Result<Complex64> {
        let hv = apply_hamiltonian(self, v)?;
        Ok(v.iter().zip(&hv).map(|(a, b)| a.conj() * b).sum())
    }
}

/// Alternating-bond Heisenberg chain: couplings `j` on bonds (1,2),(3,4),...
/// and `j_prime` on bonds (2,3),(4,5),..., each bond contributing XX+YY+ZZ.
pub fn build_xxz(n: usize, j: f64, j_prime: f64) -> Result<HamiltonianSpec> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(invalid(format!("XXZ chain needs an even N >= 2, got {n}")));
    }
    let mut terms = Vec::with_capacity(3 * (n - 1));
    let bond = |a: usize, coef: f64, terms: &mut Vec<PauliString>| -> Result<()> {
        for axis in [PauliAxis::X, PauliAxis::Y, PauliAxis::Z] {
            terms.push(PauliString::from_sparse(n, &[(a, axis), (a + 1, axis)], coef)?);
        }
        Ok(())
    };
    for i in 1..=n / 2 {
        bond(2 * i - 1, j, &mut terms)?;
    }
    for i in 1..n / 2 {
        bond(2 * i, j_prime, &mut terms)?;
    }
    HamiltonianSpec::new(n, terms, vec![j, j_prime])
}

/// One-dimensional cluster-Ising chain:
/// `-sum Z_i X_{i+1} Z_{i+2} - h1 sum X_i - h2 sum X_i X_{i+1}`.
pub fn build_cluster_ising(n: usize, h1: f64, h2: f64) -> Result<HamiltonianSpec> {
    if n < 3 {
        return Err(invalid(format!("cluster-Ising chain needs N >= 3, got {n}")));
    }
    use PauliAxis::{X, Z};
    let mut terms = Vec::with_capacity(3 * n);
    for i in 1..=n - 2 {
        terms.push(PauliString::from_sparse(n, &[(i, Z), (i + 1, X), (i + 2, Z)], -1.0)?);
    }
    for i in 1..=n {
        terms.push(PauliString::from_sparse(n, &[(i, X)], -h1)?);
    }
    for i in 1..n {
        terms.push(PauliString::from_sparse(n, &[(i, X), (i + 1, X)], -h2)?);
    }
    HamiltonianSpec::new(n, terms, vec![h1, h2])
}

/// Output entries handled per parallel task in the matvec.
const MATVEC_CHUNK: usize = 1 << 10;

/// `H v` without forming the matrix. Each output entry gathers its terms in
/// a fixed order, so the result does not depend on the thread count.
pub fn apply_hamiltonian(h: &HamiltonianSpec, v: &[Complex64]) -> Result<Vec<Complex64>> {
    if v.len() != h.dim() {
        return Err(invalid(format!(
            "vector of length {} for a {}-qubit Hamiltonian (dim {})",
            v.len(),
            h.n_qubits,
            h.dim()
        )));
    }
    let masks: Vec<TermMasks> = h.terms.iter().map(PauliString::masks).collect();
    let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
    par::fill_indexed(&mut out, MATVEC_CHUNK, |i| {
        let mut acc = Complex64::new(0.0, 0.0);
        for m in &masks {
            acc += m.element(i) * v[i ^ m.flip];
        }
        acc
    });
    Ok(out)
}
