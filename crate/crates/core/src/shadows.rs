//! Random single-qubit Pauli measurements and classical-shadow estimators.
//!
//! A snapshot measures every qubit in an independently, uniformly chosen
//! basis from {X, Y, Z}. The single-qubit shadow of outcome `b` in basis `a`
//! is `3 U^† |b><b| U - I = (I + 3 (-1)^b sigma_a) / 2`, from which all the
//! estimators below follow.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par;
use crate::pauli::qubit_bit;
use crate::state::{exact_correlation, exact_entropy, CorrAxis, QuantumState, SubsystemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    pub fn index(self) -> u8 {
        match self {
            Basis::X => 0,
            Basis::Y => 1,
            Basis::Z => 2,
        }
    }

    pub fn from_index(i: u8) -> Self {
        Self::ALL[i as usize]
    }

    pub fn symbol(self) -> char {
        match self {
            Basis::X => 'X',
            Basis::Y => 'Y',
            Basis::Z => 'Z',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'X' => Some(Basis::X),
            'Y' => Some(Basis::Y),
            'Z' => Some(Basis::Z),
            _ => None,
        }
    }
}

impl From<CorrAxis> for Basis {
    fn from(a: CorrAxis) -> Self {
        match a {
            CorrAxis::X => Basis::X,
            CorrAxis::Z => Basis::Z,
        }
    }
}

/// `(basis, bit)` packed as `2 * basis + bit`, i.e. one of
/// (X,0),(X,1),(Y,0),(Y,1),(Z,0),(Z,1) in that order.
#[inline]
pub fn outcome_code(basis: Basis, bit: u8) -> u8 {
    basis.index() * 2 + (bit & 1)
}

/// Bases and outcomes of `m` snapshots on `N` qubits, stored snapshot-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasurementRecord {
    n_qubits: usize,
    codes: Vec<u8>,
}

impl MeasurementRecord {
    /// Build from per-snapshot basis and bit rows.
    pub fn new(n_qubits: usize, bases: &[Vec<Basis>], bits: &[Vec<u8>]) -> Result<Self> {
        if n_qubits == 0 {
            return Err(invalid("record needs at least one qubit"));
        }
        if bases.is_empty() || bases.len() != bits.len() {
            return Err(invalid(format!(
                "need matching nonempty basis/outcome rows, got {} and {}",
                bases.len(),
                bits.len()
            )));
        }
        let mut codes = Vec::with_capacity(bases.len() * n_qubits);
        for (row_b, row_o) in bases.iter().zip(bits) {
            if row_b.len() != n_qubits || row_o.len() != n_qubits {
                return Err(invalid("snapshot row length differs from qubit count"));
            }
            for (&b, &o) in row_b.iter().zip(row_o) {
                if o > 1 {
                    return Err(invalid(format!("outcome {o} is not a bit")));
                }
                codes.push(outcome_code(b, o));
            }
        }
        Ok(Self { n_qubits, codes })
    }

    /// Build from packed outcome codes (see [`outcome_code`]).
    pub fn from_codes(n_qubits: usize, codes: Vec<u8>) -> Result<Self> {
        if n_qubits == 0 || codes.is_empty() || !codes.len().is_multiple_of(n_qubits) {
            return Err(invalid("code buffer is not a nonempty multiple of the qubit count"));
        }
        if codes.iter().any(|&c| c > 5) {
            return Err(invalid("outcome code outside 0..6"));
        }
        Ok(Self { n_qubits, codes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Snapshot count.
    pub fn m(&self) -> usize {
        self.codes.len() / self.n_qubits
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Codes of snapshot `j` (0-based), qubit 1 first.
    pub fn snapshot(&self, j: usize) -> &[u8] {
        &self.codes[j * self.n_qubits..(j + 1) * self.n_qubits]
    }

    /// Code for snapshot `j` (0-based) and qubit `q` (1-based).
    #[inline]
    pub fn code(&self, j: usize, q: usize) -> u8 {
        self.codes[j * self.n_qubits + q - 1]
    }

    pub fn basis(&self, j: usize, q: usize) -> Basis {
        Basis::from_index(self.code(j, q) >> 1)
    }

    pub fn bit(&self, j: usize, q: usize) -> u8 {
        self.code(j, q) & 1
    }

    /// Keep the listed snapshot columns (0-based), in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("snapshot selection must be nonempty"));
        }
        let m = self.m();
        let mut codes = Vec::with_capacity(indices.len() * self.n_qubits);
        for &j in indices {
            if j >= m {
                return Err(invalid(format!("snapshot index {j} out of range for m = {m}")));
            }
            codes.extend_from_slice(self.snapshot(j));
        }
        Ok(Self { n_qubits: self.n_qubits, codes })
    }

    /// First `m` snapshots.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.m() {
            return Err(invalid(format!("cannot truncate a record of {} snapshots to {m}", self.m())));
        }
        Ok(Self { n_qubits: self.n_qubits, codes: self.codes[..m * self.n_qubits].to_vec() })
    }
}

/// Rotate qubit `q` so that a Z measurement realizes a measurement in `basis`.
fn rotate_into(amps: &mut [Complex64], n: usize, q: usize, basis: Basis) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mask = 1usize << qubit_bit(n, q);
    match basis {
        Basis::Z => {}
        Basis::X | Basis::Y => {
            for i in 0..amps.len() {
                if i & mask != 0 {
                    continue;
                }
                let a0 = amps[i];
                let mut a1 = amps[i | mask];
                if basis == Basis::Y {
                    // S^† before H maps |+i> to |0>.
                    a1 *= Complex64::new(0.0, -1.0);
                }
                amps[i] = (a0 + a1) * s;
                amps[i | mask] = (a0 - a1) * s;
            }
        }
    }
}

/// Draw one bit string from `|amps|^2`, qubit 1 first, by sequential
/// conditional sampling over halves of the index range.
fn sample_bits<R: Rng + ?Sized>(amps: &[Complex64], n: usize, rng: &mut R, out: &mut [u8]) {
    let mut lo = 0usize;
    let mut len = amps.len();
    let mut remaining: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    for slot in out.iter_mut().take(n) {
        let half = len / 2;
        let p0: f64 = amps[lo..lo + half].iter().map(|a| a.norm_sqr()).sum();
        let u: f64 = rng.random::<f64>() * remaining;
        if u < p0 {
            *slot = 0;
            remaining = p0;
        } else {
            *slot = 1;
            lo += half;
            remaining -= p0;
        }
        len = half;
    }
}

/// Simulate `m` random-Pauli snapshots of `state`.
pub fn sample_measurements<R: Rng + ?Sized>(state: &QuantumState, m: usize, rng: &mut R) -> Result<MeasurementRecord> {
    if m == 0 {
        return Err(invalid("snapshot count must be positive"));
    }
    let n = state.n_qubits();
    let mut bases = vec![Basis::Z; n];
    let mut bits = vec![0u8; n];
    let mut work = state.amplitudes().to_vec();
    let mut codes = Vec::with_capacity(m * n);
    for _ in 0..m {
        for b in bases.iter_mut() {
            *b = Basis::from_index(rng.random_range(0..3u8));
        }
        sample_snapshot(state, &bases, rng, &mut work, &mut bits);
        codes.extend(bases.iter().zip(&bits).map(|(&b, &o)| outcome_code(b, o)));
    }
    MeasurementRecord::from_codes(n, codes)
}

/// Measure `state` once in fixed per-qubit `bases`; returns the bit row.
pub fn measure_in_bases<R: Rng + ?Sized>(state: &QuantumState, bases: &[Basis], rng: &mut R) -> Result<Vec<u8>> {
    if bases.len() != state.n_qubits() {
        return Err(invalid("one basis per qubit required"));
    }
    let mut work = state.amplitudes().to_vec();
    let mut bits = vec![0u8; bases.len()];
    sample_snapshot(state, bases, rng, &mut work, &mut bits);
    Ok(bits)
}

fn sample_snapshot<R: Rng + ?Sized>(
    state: &QuantumState,
    bases: &[Basis],
    rng: &mut R,
    work: &mut [Complex64],
    bits: &mut [u8],
) {
    let n = state.n_qubits();
    work.copy_from_slice(state.amplitudes());
    for (k, &b) in bases.iter().enumerate() {
        rotate_into(work, n, k + 1, b);
    }
    sample_bits(work, n, rng, bits);
}

/// A Pauli product on a few qubits (identity elsewhere).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PauliObservable {
    support: Vec<(usize, Basis)>,
}

impl PauliObservable {
    pub fn new(support: Vec<(usize, Basis)>) -> Result<Self> {
        if support.is_empty() {
            return Err(invalid("observable support must be nonempty"));
        }
        let mut qs: Vec<usize> = support.iter().map(|s| s.0).collect();
        qs.sort_unstable();
        if qs[0] == 0 || qs.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid(format!("observable support {support:?} has repeated or zero qubits")));
        }
        Ok(Self { support })
    }

    pub fn support(&self) -> &[(usize, Basis)] {
        &self.support
    }

    pub fn locality(&self) -> usize {
        self.support.len()
    }
}

/// Shadow estimate of `Tr(rho O)`: mean over snapshots of
/// `prod 3 (-1)^bit [basis == axis]`. Unbiased and deliberately unclamped.
pub fn estimate_observable(rec: &MeasurementRecord, obs: &PauliObservable) -> Result<f64> {
    if let Some(&(q, _)) = obs.support.iter().find(|(q, _)| *q > rec.n_qubits()) {
        return Err(invalid(format!("observable qubit {q} outside a {}-qubit record", rec.n_qubits())));
    }
    let m = rec.m();
    let mut total = 0.0;
    for j in 0..m {
        let mut v = 1.0;
        for &(q, axis) in &obs.support {
            let code = rec.code(j, q);
            if code >> 1 != axis.index() {
                v = 0.0;
                break;
            }
            v *= if code & 1 == 0 { 3.0 } else { -3.0 };
        }
        total += v;
    }
    Ok(total / m as f64)
}

/// Shadow estimate of `Tr(rho sigma_i^a sigma_j^a)`.
pub fn estimate_correlation(rec: &MeasurementRecord, i: usize, j: usize, axis: CorrAxis) -> Result<f64> {
    if i == j {
        return Err(invalid(format!("correlation needs distinct qubits, got {i} twice")));
    }
    let b = Basis::from(axis);
    estimate_observable(rec, &PauliObservable::new(vec![(i, b), (j, b)])?)
}

/// `Tr(shadow_a shadow_b)` for two single-qubit snapshot shadows:
/// 5 for equal basis and bit, -4 for equal basis and different bit, 1/2
/// otherwise.
pub fn pair_factor(basis_a: Basis, bit_a: u8, basis_b: Basis, bit_b: u8) -> f64 {
    if basis_a != basis_b {
        0.5
    } else if bit_a == bit_b {
        5.0
    } else {
        -4.0
    }
}

/// `pair_factor` indexed by packed outcome codes.
pub fn pair_table() -> [[f64; 6]; 6] {
    let mut t = [[0.0; 6]; 6];
    for (a, row) in t.iter_mut().enumerate() {
        for (b, slot) in row.iter_mut().enumerate() {
            *slot = pair_factor(Basis::from_index(a as u8 >> 1), a as u8 & 1, Basis::from_index(b as u8 >> 1), b as u8 & 1);
        }
    }
    t
}

fn check_subsystem(rec: &MeasurementRecord, sub: &SubsystemSpec) -> Result<()> {
    if *sub.qubits().last().unwrap() > rec.n_qubits() {
        return Err(invalid(format!("subsystem {:?} outside a {}-qubit record", sub.qubits(), rec.n_qubits())));
    }
    if rec.m() < 2 {
        return Err(invalid(format!("purity estimation needs m >= 2 snapshots, got {}", rec.m())));
    }
    Ok(())
}

/// Unbiased U-statistic for `Tr(rho_A^2)` over all ordered snapshot pairs:
/// `1/(m(m-1)) sum_{j != j'} prod_{i in A} pair_factor(...)`.
///
/// The kernel is symmetric, so each unordered pair is visited once and
/// counted twice. Rows are summed independently and then reduced in row
/// order, which keeps the result identical across thread counts.
pub fn estimate_purity(rec: &MeasurementRecord, sub: &SubsystemSpec) -> Result<f64> {
    check_subsystem(rec, sub)?;
    let m = rec.m();
    let a = sub.len();
    let table = pair_table();
    let local: Vec<u8> = (0..m).flat_map(|j| sub.qubits().iter().map(move |&q| rec.code(j, q))).collect();
    let rows = par::map_range(m - 1, |j| {
        let cj = &local[j * a..(j + 1) * a];
        let mut acc = 0.0;
        for k in j + 1..m {
            let ck = &local[k * a..(k + 1) * a];
            let mut prod = 1.0;
            for (x, y) in cj.iter().zip(ck) {
                prod *= table[*x as usize][*y as usize];
            }
            acc += prod;
        }
        acc
    });
    let total: f64 = rows.iter().sum();
    Ok(2.0 * total / (m as f64 * (m - 1) as f64))
}

/// Purity estimates for every prefix `{1..j}`, `j = 1..=max_prefix`, from a
/// single pass over snapshot pairs. Entry `j-1` equals
/// `estimate_purity(rec, {1..j})` bit for bit.
pub fn estimate_prefix_purities(rec: &MeasurementRecord, max_prefix: usize) -> Result<Vec<f64>> {
    let order: Vec<usize> = (1..=max_prefix).collect();
    estimate_nested_purities(rec, &order)
}

/// Purity estimates for every suffix `{N-j+1..N}`, `j = 1..=max_suffix`.
pub fn estimate_suffix_purities(rec: &MeasurementRecord, max_suffix: usize) -> Result<Vec<f64>> {
    let n = rec.n_qubits();
    let order: Vec<usize> = (0..max_suffix.min(n)).map(|k| n - k).collect();
    if max_suffix > n {
        return Err(invalid(format!("suffix length {max_suffix} outside 1..={n}")));
    }
    estimate_nested_purities(rec, &order)
}

/// Purities of the nested subsystems `{order[0]}`, `{order[0], order[1]}`,
/// ... computed in one pass over snapshot pairs.
pub fn estimate_nested_purities(rec: &MeasurementRecord, order: &[usize]) -> Result<Vec<f64>> {
    let n = rec.n_qubits();
    if order.is_empty() || order.len() > n {
        return Err(invalid(format!("nested subsystem chain of length {} outside 1..={n}", order.len())));
    }
    let mut seen = vec![false; n + 1];
    for &q in order {
        if q == 0 || q > n || std::mem::replace(&mut seen[q], true) {
            return Err(invalid(format!("bad or repeated qubit {q} in subsystem chain")));
        }
    }
    let m = rec.m();
    if m < 2 {
        return Err(invalid(format!("purity estimation needs m >= 2 snapshots, got {m}")));
    }
    let depth = order.len();
    let table = pair_table();
    let rows = par::map_range(m - 1, |j| {
        let cj = rec.snapshot(j);
        let mut sums = vec![0.0; depth];
        let mut prods = vec![1.0; m - j - 1];
        for (level, &q) in order.iter().enumerate() {
            let row = &table[cj[q - 1] as usize];
            let mut acc = 0.0;
            for (off, p) in prods.iter_mut().enumerate() {
                *p *= row[rec.code(j + 1 + off, q) as usize];
                acc += *p;
            }
            sums[level] = acc;
        }
        sums
    });
    let norm = m as f64 * (m - 1) as f64;
    Ok((0..depth)
        .map(|q| 2.0 * rows.iter().map(|r| r[q]).sum::<f64>() / norm)
        .collect())
}

/// `-log2` of a purity estimate clamped to the physical range `[2^-a, 1]`.
pub fn entropy_from_purity(purity: f64, subsystem_size: usize) -> f64 {
    let floor = (-(subsystem_size as f64)).exp2();
    -purity.clamp(floor, 1.0).log2()
}

/// Rényi-2 entropy estimate in bits, always inside `[0, |A|]`.
pub fn estimate_entropy(rec: &MeasurementRecord, sub: &SubsystemSpec) -> Result<f64> {
    Ok(entropy_from_purity(estimate_purity(rec, sub)?, sub.len()))
}

/// Upper bound on the variance of the purity U-statistic:
/// `4 (2^a P / m) + 2 (2^{2a} / (m - 1))^2`.
pub fn purity_variance_bound(m: usize, subsystem_size: usize, purity: f64) -> f64 {
    let d = (subsystem_size as f64).exp2();
    let m = m as f64;
    4.0 * (d * purity / m) + 2.0 * (d * d / (m - 1.0)).powi(2)
}

/// Property family predicted per data point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Rényi-2 entropy of each prefix `{1..j}`, `j = 1..N-1`.
    Entropy,
    /// `<X_1 X_j>`, `j = 2..N`.
    CorrX,
    /// `<Z_1 Z_j>`, `j = 2..N`.
    CorrZ,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Entropy => "entropy",
            Task::CorrX => "corr_x",
            Task::CorrZ => "corr_z",
        }
    }

    pub fn axis(self) -> Option<CorrAxis> {
        match self {
            Task::Entropy => None,
            Task::CorrX => Some(CorrAxis::X),
            Task::CorrZ => Some(CorrAxis::Z),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(Task::Entropy),
            "corr_x" => Ok(Task::CorrX),
            "corr_z" => Ok(Task::CorrZ),
            other => Err(invalid(format!("unknown task {other:?} (expected entropy, corr_x or corr_z)"))),
        }
    }
}

/// Shadow-estimated label vector of length `N - 1`.
///
/// Entropy entry `j-1` targets the prefix `{1..j}`. Records come from pure
/// states, where a subsystem and its complement have equal entropy, so each
/// entry is estimated on whichever side has fewer qubits: prefixes up to
/// `N/2`, suffixes `{j+1..N}` beyond. This keeps every purity estimate on at
/// most `N/2` qubits.
pub fn label_vector(rec: &MeasurementRecord, task: Task) -> Result<Vec<f64>> {
    let n = rec.n_qubits();
    if n < 2 {
        return Err(invalid("label vectors need at least two qubits"));
    }
    match task.axis() {
        None => {
            let half = n / 2;
            let prefix = estimate_prefix_purities(rec, half)?;
            let suffix = if n - 1 > half { estimate_suffix_purities(rec, n - 1 - half)? } else { Vec::new() };
            Ok((1..n)
                .map(|j| {
                    if j <= half {
                        entropy_from_purity(prefix[j - 1], j)
                    } else {
                        entropy_from_purity(suffix[n - j - 1], n - j)
                    }
                })
                .collect())
        }
        Some(axis) => (2..=n).map(|j| estimate_correlation(rec, 1, j, axis)).collect(),
    }
}

/// Exact label vector of length `N - 1` from the state itself.
pub fn exact_label_vector(state: &QuantumState, task: Task) -> Result<Vec<f64>> {
    let n = state.n_qubits();
    if n < 2 {
        return Err(invalid("label vectors need at least two qubits"));
    }
    match task.axis() {
        None => (1..n).map(|j| exact_entropy(state, &SubsystemSpec::prefix(j, n)?)).collect(),
        Some(axis) => (2..=n).map(|j| exact_correlation(state, 1, j, axis)).collect(),
    }
}
