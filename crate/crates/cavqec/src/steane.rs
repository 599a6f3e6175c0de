//! Exact density-matrix checks of the cavity cat-state encoder and decoder on
//! the Steane code: the lossy collective phase map, its first-order error
//! expansion, perfect and faulty encode/decode cases, the Heisenberg
//! propagation identities of the decoder and the merging of two cat states.
//!
//! Qubit 0 is the most significant bit of a basis index. Spin convention:
//! |0⟩ is spin down, so J_z is diagonal with entries (#1 − #0)/2. Single-qubit
//! Paulis in Pauli strings are the usual computational ones (Z|0⟩ = |0⟩).
//!
//! In the Steane cases the register holds 4 ancillas (qubits 0..4, "ancilla
//! 1..4") followed by 7 data qubits ("data 1..7"). Ancilla i couples to data
//! 8 − i and the measured stabilizer is M = X₄X₅X₆X₇.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::merge_ghz_correction;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

pub const MAX_QUBITS: usize = 12;
/// Tolerance for Hermiticity, positivity and subspace checks.
pub const TOLERANCE: f64 = 1e-10;
/// Bound for identities that hold exactly in exact arithmetic.
pub const EXACT: f64 = 1e-12;

const ZERO: C64 = Complex { re: 0.0, im: 0.0 };
const ONE: C64 = Complex { re: 1.0, im: 0.0 };
const I: C64 = Complex { re: 0.0, im: 1.0 };

#[derive(Debug, Error, PartialEq)]
pub enum SteaneError {
    #[error("{0} qubits exceeds the dense limit of {MAX_QUBITS}")]
    TooManyQubits(usize),
    #[error("matrix is {rows}x{cols}, expected {expected}x{expected}")]
    Dimension { rows: usize, cols: usize, expected: usize },
    #[error("state is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("state has weight {0:e} outside the symmetric subspace")]
    NotSymmetric(f64),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, SteaneError>;

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn outer(psi: &[C64]) -> CMatrix {
    let n = psi.len();
    CMatrix::from_fn(n, n, |r, c| psi[r] * psi[c].conj())
}

fn normalize(psi: &mut [C64]) {
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    psi.iter_mut().for_each(|z| *z /= norm);
}

fn random_amplitudes(rng: &mut ChaCha8Rng, dim: usize) -> Vec<C64> {
    let mut psi: Vec<C64> = (0..dim).map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    normalize(&mut psi);
    psi
}

/// Density matrix on at most [`MAX_QUBITS`] qubits. The trace may be below 1
/// after a lossy map.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    qubits: usize,
    rho: CMatrix,
}

impl DenseState {
    pub fn from_matrix(qubits: usize, rho: CMatrix) -> Result<Self> {
        if qubits > MAX_QUBITS {
            return Err(SteaneError::TooManyQubits(qubits));
        }
        let dim = 1usize << qubits;
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(SteaneError::Dimension { rows: rho.nrows(), cols: rho.ncols(), expected: dim });
        }
        let dev = max_abs_diff(&rho, &rho.adjoint());
        if dev > TOLERANCE {
            return Err(SteaneError::NotHermitian(dev));
        }
        Ok(DenseState { qubits, rho })
    }

    pub fn pure(qubits: usize, psi: &[C64]) -> Result<Self> {
        if qubits > MAX_QUBITS {
            return Err(SteaneError::TooManyQubits(qubits));
        }
        if psi.len() != 1 << qubits {
            return Err(SteaneError::Dimension { rows: psi.len(), cols: 1, expected: 1 << qubits });
        }
        Ok(DenseState { qubits, rho: outer(psi) })
    }

    pub fn basis(qubits: usize, index: usize) -> Result<Self> {
        let mut psi = vec![ZERO; 1 << qubits.min(MAX_QUBITS + 1)];
        if index >= psi.len() {
            return Err(SteaneError::Invalid(format!("basis index {index} out of range")));
        }
        psi[index] = ONE;
        Self::pure(qubits, &psi)
    }

    pub fn qubit_count(&self) -> usize {
        self.qubits
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    /// Smallest eigenvalue; non-negative up to rounding for a valid state.
    pub fn min_eigenvalue(&self) -> f64 {
        self.rho.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// ⟨ψ|ρ|ψ⟩ / tr ρ for a normalised ψ.
    pub fn fidelity(&self, psi: &[C64]) -> f64 {
        let mut acc = ZERO;
        for r in 0..psi.len() {
            for c in 0..psi.len() {
                acc += psi[r].conj() * self.rho[(r, c)] * psi[c];
            }
        }
        acc.re / self.trace()
    }

    /// Tr(ρ·O).
    pub fn expectation(&self, op: &CMatrix) -> C64 {
        (&self.rho * op).trace()
    }

    pub fn kron(&self, other: &DenseState) -> Result<DenseState> {
        if self.qubits + other.qubits > MAX_QUBITS {
            return Err(SteaneError::TooManyQubits(self.qubits + other.qubits));
        }
        Ok(DenseState { qubits: self.qubits + other.qubits, rho: self.rho.kronecker(&other.rho) })
    }

    /// U ρ U†.
    pub fn conjugate(&self, u: &CMatrix) -> DenseState {
        DenseState { qubits: self.qubits, rho: u * &self.rho * u.adjoint() }
    }
}

/// Pauli string such as "ZIII"; the first character acts on qubit 0.
pub fn pauli(spec: &str) -> Result<CMatrix> {
    let mut out = CMatrix::from_element(1, 1, ONE);
    for ch in spec.chars() {
        let m = match ch {
            'I' => [ONE, ZERO, ZERO, ONE],
            'X' => [ZERO, ONE, ONE, ZERO],
            'Y' => [ZERO, -I, I, ZERO],
            'Z' => [ONE, ZERO, ZERO, -ONE],
            other => return Err(SteaneError::Invalid(format!("unknown Pauli {other:?}"))),
        };
        out = out.kronecker(&CMatrix::from_row_slice(2, 2, &m));
    }
    Ok(out)
}

/// Collective spin operators on `n` qubits.
#[derive(Clone, Debug)]
pub struct CollectiveOps {
    pub n: usize,
    pub jx: CMatrix,
    pub jy: CMatrix,
    pub jz: CMatrix,
}

impl CollectiveOps {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(SteaneError::Invalid(format!("collective operators need 1..={MAX_QUBITS} qubits, got {n}")));
        }
        let dim = 1usize << n;
        let (mut jx, mut jy, mut jz) = (CMatrix::zeros(dim, dim), CMatrix::zeros(dim, dim), CMatrix::zeros(dim, dim));
        for b in 0..dim {
            jz[(b, b)] = Complex::from(b.count_ones() as f64 - n as f64 / 2.0);
            for q in 0..n {
                let bit = 1 << (n - 1 - q);
                jx[(b ^ bit, b)] += 0.5;
                // J_y = (J₊ − J₋)/2i with J₊ = |1⟩⟨0|
                jy[(b ^ bit, b)] += if b & bit == 0 { -0.5 * I } else { 0.5 * I };
            }
        }
        Ok(CollectiveOps { n, jx, jy, jz })
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// e^{−i·angle·J_y}.
    pub fn rotation_y(&self, angle: f64) -> CMatrix {
        (&self.jy * Complex::new(0.0, -angle)).exp()
    }

    /// Mølmer–Sørensen unitary e^{−iθ·J_z²}.
    pub fn ms_unitary(&self, theta: f64) -> CMatrix {
        (&self.jz * &self.jz * Complex::new(0.0, -theta)).exp()
    }

    /// e^{−iθ·J_x²}.
    pub fn x_twist(&self, theta: f64) -> CMatrix {
        (&self.jx * &self.jx * Complex::new(0.0, -theta)).exp()
    }

    pub fn j_squared(&self) -> CMatrix {
        &self.jx * &self.jx + &self.jy * &self.jy + &self.jz * &self.jz
    }

    /// Normalised Dicke states, indexed by the number of excitations.
    pub fn dicke_states(&self) -> Vec<Vec<C64>> {
        (0..=self.n)
            .map(|k| {
                let mut psi: Vec<C64> = (0..self.dim()).map(|b| if b.count_ones() as usize == k { ONE } else { ZERO }).collect();
                normalize(&mut psi);
                psi
            })
            .collect()
    }

    /// Weight of ρ outside the J = N/2 subspace.
    pub fn asymmetric_weight(&self, rho: &CMatrix) -> f64 {
        let inside: f64 = self
            .dicke_states()
            .iter()
            .map(|d| {
                let mut acc = ZERO;
                for r in 0..d.len() {
                    if d[r] == ZERO {
                        continue;
                    }
                    for c in 0..d.len() {
                        acc += d[r].conj() * rho[(r, c)] * d[c];
                    }
                }
                acc.re
            })
            .sum();
        (rho.trace().re - inside).abs()
    }
}

/// Parameters of the lossy collective phase map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    pub theta: f64,
    /// `f64::INFINITY` gives the lossless unitary.
    pub cooperativity: f64,
    pub n: usize,
}

impl CavityParams {
    pub fn new(theta: f64, cooperativity: f64, n: usize) -> Result<Self> {
        if !(cooperativity > 0.0) {
            return Err(SteaneError::Invalid(format!("cooperativity must be positive, got {cooperativity}")));
        }
        if n == 0 || n > MAX_QUBITS || !theta.is_finite() {
            return Err(SteaneError::Invalid(format!("bad cavity parameters theta={theta} n={n}")));
        }
        Ok(CavityParams { theta, cooperativity, n })
    }

    /// Cat-state gate with θ = π/2.
    pub fn cat(cooperativity: f64, n: usize) -> Result<Self> {
        Self::new(FRAC_PI_2, cooperativity, n)
    }

    pub fn d_n(&self) -> f64 {
        (2.0 * (1.0 + 2f64.powi(-(self.n as i32)))).powf(-0.5)
    }

    /// |θ|/(√C·d_N); zero when lossless.
    pub fn alpha(&self) -> f64 {
        if self.cooperativity.is_infinite() {
            0.0
        } else {
            self.theta.abs() / (self.cooperativity.sqrt() * self.d_n())
        }
    }

    /// First-order bit-flip weight 2|θ|/(√C·d_N), summed over the N qubits.
    pub fn p_e(&self) -> f64 {
        2.0 * self.alpha()
    }

    pub fn lossless(&self) -> Self {
        CavityParams { cooperativity: f64::INFINITY, ..*self }
    }

    /// e^{iθ_{m,m'}}. The coherent part follows the sign of θ; the damping
    /// uses |θ|, so the inverse gate (θ < 0) also loses population.
    pub fn phase(&self, m: f64, mp: f64) -> C64 {
        let n = self.n as f64;
        let coherent = ((m * m - mp * mp) + (m - mp) * n) * self.theta;
        let damping = if self.cooperativity.is_infinite() {
            0.0
        } else {
            let (a, sc) = (self.theta.abs(), self.cooperativity.sqrt());
            (m - mp).powi(2) * a / (sc * self.d_n()) + (m + mp + n) * a * self.d_n() / (2.0 * sc)
        };
        Complex::new(-damping, coherent).exp()
    }

    /// Elementwise factors of the map in the computational basis.
    pub fn phase_factors(&self) -> CMatrix {
        let dim = 1usize << self.n;
        let m = |b: usize| b.count_ones() as f64 - self.n as f64 / 2.0;
        CMatrix::from_fn(dim, dim, |r, c| self.phase(m(r), m(c)))
    }
}

// Operators on the leading `k` qubits of a register act on row blocks of
// size dim/2^k. These helpers avoid building the full Kronecker product.

/// (U ⊗ 1)·ρ.
fn left_leading(rho: &CMatrix, u: &CMatrix) -> CMatrix {
    let n = rho.nrows();
    let lead = u.nrows();
    let d = n / lead;
    let mut out = CMatrix::zeros(n, n);
    let src = rho.as_slice();
    let dst = out.as_mut_slice();
    for c in 0..n {
        let col = &src[c * n..(c + 1) * n];
        let ocol = &mut dst[c * n..(c + 1) * n];
        for a in 0..lead {
            for b in 0..lead {
                let uab = u[(a, b)];
                if uab == ZERO {
                    continue;
                }
                let (o, s) = (&mut ocol[a * d..(a + 1) * d], &col[b * d..(b + 1) * d]);
                for x in 0..d {
                    o[x] += uab * s[x];
                }
            }
        }
    }
    out
}

/// (U ⊗ 1)·ρ·(U ⊗ 1)†.
fn conjugate_leading(rho: &CMatrix, u: &CMatrix) -> CMatrix {
    left_leading(&left_leading(rho, u).adjoint(), u).adjoint()
}

/// ρ_{(a,x),(a',x')} ↦ ρ_{(a,x),(a',x')}·h_{a,a'}.
fn hadamard_leading(rho: &CMatrix, h: &CMatrix) -> CMatrix {
    let d = rho.nrows() / h.nrows();
    CMatrix::from_fn(rho.nrows(), rho.ncols(), |r, c| rho[(r, c)] * h[(r / d, c / d)])
}

/// Relabels basis states: |i⟩ ↦ |perm[i]⟩.
fn permute(rho: &CMatrix, perm: &[usize]) -> CMatrix {
    let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
    for c in 0..rho.ncols() {
        for r in 0..rho.nrows() {
            out[(perm[r], perm[c])] = rho[(r, c)];
        }
    }
    out
}

/// (Σᵢ cᵢ·Pᵢ) ρ (Σⱼ cⱼ·Pⱼ) for X-type Pauli masks Pᵢ with a common weight `coef`.
fn x_sum_sandwich(rho: &CMatrix, masks: &[usize], coef: f64) -> CMatrix {
    let n = rho.nrows();
    let left = CMatrix::from_fn(n, n, |r, c| masks.iter().map(|&m| rho[(r ^ m, c)]).sum::<C64>() * coef);
    CMatrix::from_fn(n, n, |r, c| masks.iter().map(|&m| left[(r, c ^ m)]).sum::<C64>() * coef)
}

/// The cavity gate R†·E(R ρ R†)·R with R = e^{−iπ/2·J_y}, acting on the
/// leading `params.n` qubits of ρ without a symmetry check.
fn cavity_gate_leading(rho: &CMatrix, ops: &CollectiveOps, params: &CavityParams) -> CMatrix {
    let r = ops.rotation_y(FRAC_PI_2);
    let rotated = conjugate_leading(rho, &r);
    let mapped = hadamard_leading(&rotated, &params.phase_factors());
    conjugate_leading(&mapped, &r.adjoint())
}

fn check_ancilla(state: &DenseState, params: &CavityParams) -> Result<CollectiveOps> {
    if state.qubits != params.n {
        return Err(SteaneError::Invalid(format!("state has {} qubits, map acts on {}", state.qubits, params.n)));
    }
    CollectiveOps::new(params.n)
}

/// ρ_{m,m'} ↦ ρ_{m,m'}·e^{iθ_{m,m'}} in the collective J_z basis. The input
/// must lie in the symmetric subspace.
pub fn phase_map(state: &DenseState, params: &CavityParams) -> Result<DenseState> {
    let ops = check_ancilla(state, params)?;
    let outside = ops.asymmetric_weight(&state.rho);
    if outside > TOLERANCE {
        return Err(SteaneError::NotSymmetric(outside));
    }
    Ok(DenseState { qubits: state.qubits, rho: state.rho.component_mul(&params.phase_factors()) })
}

/// Cat-state encoder: rotate with e^{−iπ/2·J_y}, apply [`phase_map`], rotate back.
pub fn encoder(state: &DenseState, params: &CavityParams) -> Result<DenseState> {
    let ops = check_ancilla(state, params)?;
    let r = ops.rotation_y(FRAC_PI_2);
    let mapped = phase_map(&state.conjugate(&r), params)?;
    Ok(mapped.conjugate(&r.adjoint()))
}

/// Inverse of [`encoder`] in the lossless limit: the same gate with θ ↦ −θ.
pub fn decoder(state: &DenseState, params: &CavityParams) -> Result<DenseState> {
    encoder(state, &CavityParams { theta: -params.theta, ..*params })
}

/// τ + 2α·J_x τ J_x − α(J_x² τ + τ J_x²) with τ the lossless encoder output
/// and α = |θ|/(√C·d_N).
pub fn first_order_map(state: &DenseState, params: &CavityParams) -> Result<DenseState> {
    let ops = check_ancilla(state, params)?;
    let tau = encoder(state, &params.lossless())?.rho;
    let alpha = params.alpha();
    let jx2 = &ops.jx * &ops.jx;
    let rho = &tau + (&ops.jx * &tau * &ops.jx) * Complex::from(2.0 * alpha) - (&jx2 * &tau + &tau * &jx2) * Complex::from(alpha);
    Ok(DenseState { qubits: state.qubits, rho })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, deviation: f64, tolerance: f64) -> Self {
        Check { name: name.to_string(), deviation, tolerance, passed: deviation <= tolerance }
    }
}

/// One row of the first-order syndrome table: ancillas i and j flipped on
/// top of the all-`base` outcome, coupled to data p and q.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyndromeEntry {
    pub base: u8,
    pub i: usize,
    pub j: usize,
    pub p: usize,
    pub q: usize,
    pub left_partners: [usize; 3],
    pub right_partners: [usize; 3],
    pub deviation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    CavityMap,
    PerfectPerfect,
    FaultyEncode,
    FaultyDecode,
    Heisenberg,
    GhzMerge,
}

impl Case {
    pub const ALL: [Case; 6] =
        [Case::CavityMap, Case::PerfectPerfect, Case::FaultyEncode, Case::FaultyDecode, Case::Heisenberg, Case::GhzMerge];

    pub fn name(self) -> &'static str {
        match self {
            Case::CavityMap => "cavity_map",
            Case::PerfectPerfect => "perfect_perfect",
            Case::FaultyEncode => "faulty_encode",
            Case::FaultyDecode => "faulty_decode",
            Case::Heisenberg => "heisenberg",
            Case::GhzMerge => "ghz_merge",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = SteaneError;
    fn from_str(s: &str) -> Result<Self> {
        Case::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s.replace('-', "_"))
            .ok_or_else(|| SteaneError::Invalid(format!("unknown case {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: Case,
    pub checks: Vec<Check>,
    /// Measured quantities that are reported rather than asserted.
    pub values: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub syndrome_table: Vec<SyndromeEntry>,
}

impl CaseReport {
    fn new(case: Case) -> Self {
        CaseReport { case, checks: Vec::new(), values: BTreeMap::new(), syndrome_table: Vec::new() }
    }

    fn check(&mut self, name: &str, deviation: f64, tolerance: f64) {
        self.checks.push(Check::new(name, deviation, tolerance));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub cooperativity: f64,
    pub passed: bool,
    pub cases: Vec<CaseReport>,
}

/// Runs the given cases at one cooperativity.
pub fn verify(cases: &[Case], cooperativity: f64) -> Result<VerifierReport> {
    let cases = cases.iter().map(|&c| run_case(c, cooperativity)).collect::<Result<Vec<_>>>()?;
    Ok(VerifierReport { cooperativity, passed: cases.iter().all(CaseReport::passed), cases })
}

/// The lossy cases need a finite cooperativity; their first-order checks are
/// meaningful once α = π/2/(√C·d_N) is small, i.e. for C ≳ 10⁴.
pub fn run_case(case: Case, cooperativity: f64) -> Result<CaseReport> {
    match case {
        Case::CavityMap => cavity_map_case(cooperativity),
        Case::PerfectPerfect => Ok(perfect_perfect_case()),
        Case::FaultyEncode => faulty_encode_case(cooperativity),
        Case::FaultyDecode => faulty_decode_case(cooperativity),
        Case::Heisenberg => Ok(heisenberg_check()),
        Case::GhzMerge => Ok(ghz_merge_check()),
    }
}

fn finite(cooperativity: f64) -> Result<()> {
    if cooperativity.is_finite() && cooperativity > 0.0 {
        Ok(())
    } else {
        Err(SteaneError::Invalid(format!("lossy cases need a finite positive cooperativity, got {cooperativity}")))
    }
}

const SEED: u64 = 0x5eed;
const ANCILLAS: usize = 4;
const DATA: usize = 7;
const DATA_DIM: usize = 1 << DATA;
const STABILIZER: [usize; 4] = [4, 5, 6, 7];

/// Data qubit coupled to ancilla `i` (both 1-based).
pub fn partner(i: usize) -> usize {
    8 - i
}

fn ancilla_bit(i: usize) -> usize {
    1 << (ANCILLAS - i)
}

fn data_bit(j: usize) -> usize {
    1 << (DATA - j)
}

fn data_mask(qubits: &[usize]) -> usize {
    qubits.iter().map(|&j| data_bit(j)).fold(0, |a, b| a ^ b)
}

/// X on the listed data qubits (1-based) as a 128×128 matrix.
fn data_x(qubits: &[usize]) -> CMatrix {
    let mask = data_mask(qubits);
    CMatrix::from_fn(DATA_DIM, DATA_DIM, |r, c| if r == c ^ mask { ONE } else { ZERO })
}

fn coupling_permutation() -> Vec<usize> {
    (0..(1 << (ANCILLAS + DATA)))
        .map(|idx| {
            let (a, mut d) = (idx >> DATA, idx & (DATA_DIM - 1));
            for i in 1..=ANCILLAS {
                if a & ancilla_bit(i) != 0 {
                    d ^= data_bit(partner(i));
                }
            }
            (a << DATA) | d
        })
        .collect()
}

fn block(rho: &CMatrix, a: usize, b: usize) -> CMatrix {
    rho.view((a * DATA_DIM, b * DATA_DIM), (DATA_DIM, DATA_DIM)).into_owned()
}

fn outcome_probabilities(rho: &CMatrix) -> Vec<f64> {
    (0..1 << ANCILLAS).map(|a| (0..DATA_DIM).map(|x| rho[(a * DATA_DIM + x, a * DATA_DIM + x)].re).sum()).collect()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random data state, optionally projected onto the ±1 eigenspace of M.
fn data_state(rng: &mut ChaCha8Rng, sign: Option<f64>) -> Vec<C64> {
    let mut psi = random_amplitudes(rng, DATA_DIM);
    if let Some(s) = sign {
        let mask = data_mask(&STABILIZER);
        psi = (0..DATA_DIM).map(|x| psi[x] + psi[x ^ mask] * s).collect();
        normalize(&mut psi);
    }
    psi
}

/// Steane stabilizer measurement: encode the ancillas, couple to the data,
/// decode. `None` means a lossless gate. Returns (υ₂, υ₃).
fn steane_round(sigma: &CMatrix, encode_c: Option<f64>, decode_c: Option<f64>) -> (CMatrix, CMatrix) {
    let ops = CollectiveOps::new(ANCILLAS).expect("4 qubits");
    let params = |c: Option<f64>| CavityParams::cat(c.unwrap_or(f64::INFINITY), ANCILLAS).expect("valid cooperativity");
    let zero = DenseState::basis(ANCILLAS, 0).expect("basis state");
    let ancilla = encoder(&zero, &params(encode_c)).expect("|0000⟩ is symmetric");
    let u1 = ancilla.rho.kronecker(sigma);
    let u2 = permute(&u1, &coupling_permutation());
    let dec = params(decode_c);
    let u3 = cavity_gate_leading(&u2, &ops, &CavityParams { theta: -dec.theta, ..dec });
    (u2, u3)
}

fn ket(a: usize, b: usize) -> CMatrix {
    let mut m = CMatrix::zeros(1 << ANCILLAS, 1 << ANCILLAS);
    m[(a, b)] = ONE;
    m
}

/// Joint state after the coupling CNOTs, from the projector decomposition.
fn coupled_prediction(sigma: &CMatrix, cross_sign: f64) -> CMatrix {
    let m = data_x(&STABILIZER);
    let s = Complex::new(0.0, cross_sign);
    (ket(15, 15).kronecker(&(&m * sigma * &m))
        + ket(0, 0).kronecker(sigma)
        + ket(15, 0).kronecker(&(&m * sigma)) * s
        - ket(0, 15).kronecker(&(sigma * &m)) * s)
        * Complex::from(0.5)
}

/// Decoded joint state; `plus` is the ancilla outcome that carries (1 + M).
fn decoded_prediction(sigma: &CMatrix, plus: usize, cross_sign: f64) -> CMatrix {
    let minus = plus ^ 15;
    let id = CMatrix::identity(DATA_DIM, DATA_DIM);
    let m = data_x(&STABILIZER);
    let (p, n) = (&id + &m, &id - &m);
    let s = Complex::new(0.0, cross_sign);
    (ket(plus, plus).kronecker(&(&p * sigma * &p))
        + ket(minus, minus).kronecker(&(&n * sigma * &n))
        + ket(minus, plus).kronecker(&(-&n * sigma * &p)) * s
        + ket(plus, minus).kronecker(&(&p * sigma * &n)) * s)
        * Complex::from(0.25)
}

fn cavity_map_case(cooperativity: f64) -> Result<CaseReport> {
    finite(cooperativity)?;
    let mut rep = CaseReport::new(Case::CavityMap);
    let n = ANCILLAS;
    let ops = CollectiveOps::new(n)?;
    let lossless = CavityParams::cat(f64::INFINITY, n)?;
    let lossy = CavityParams::cat(cooperativity, n)?;

    let zero = DenseState::basis(n, 0)?;
    let cat = encoder(&zero, &lossless)?;
    let mut ghz = vec![ZERO; 16];
    ghz[0] = I * std::f64::consts::FRAC_1_SQRT_2;
    ghz[15] = ONE * std::f64::consts::FRAC_1_SQRT_2;
    rep.check("encoder_prepares_cat_state", (1.0 - cat.fidelity(&ghz)).abs(), EXACT);

    let plus = DenseState::pure(n, &vec![Complex::from(0.25); 16])?;
    let out = phase_map(&plus, &lossless)?;
    let twist = |t: f64| (&ops.jz * &ops.jz * Complex::new(0.0, t)).exp();
    rep.check("lossless_map_is_exp_plus_i_pi_2_jz2", max_abs_diff(&out.rho, &plus.conjugate(&twist(FRAC_PI_2)).rho), EXACT);
    rep.values.insert("lossless_map_vs_exp_minus_i_pi_2_jz2".into(), max_abs_diff(&out.rho, &plus.conjugate(&twist(-FRAC_PI_2)).rho));

    // random symmetric input: trace and collective-basis diagonal
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let dicke = ops.dicke_states();
    let coeffs = random_amplitudes(&mut rng, n + 1);
    let psi: Vec<C64> = (0..16).map(|b| (0..=n).map(|k| coeffs[k] * dicke[k][b]).sum()).collect();
    let sym = DenseState::pure(n, &psi)?;
    let unitary_out = phase_map(&sym, &lossless)?;
    rep.check("lossless_map_preserves_trace", (unitary_out.trace() - sym.trace()).abs(), EXACT);
    let lossy_out = phase_map(&sym, &lossy)?;
    rep.check("lossy_map_does_not_increase_trace", (lossy_out.trace() - sym.trace()).max(0.0), EXACT);
    rep.check("lossy_map_is_positive", (-lossy_out.min_eigenvalue()).max(0.0), TOLERANCE);
    let dicke_diag = |s: &DenseState, k: usize| DenseState { qubits: n, rho: s.rho.clone() }.fidelity(&dicke[k]) * s.trace();
    let mut worst = 0.0f64;
    for k in 0..=n {
        let m = k as f64 - n as f64 / 2.0;
        let want = (-(2.0 * m + n as f64) * lossy.theta * lossy.d_n() / (2.0 * cooperativity.sqrt())).exp();
        let got = dicke_diag(&lossy_out, k) / dicke_diag(&sym, k);
        worst = worst.max((got / want - 1.0).abs());
    }
    rep.check("diagonal_damping_factor", worst, EXACT);

    let identity = ops.rotation_y(-FRAC_PI_2) * ops.ms_unitary(FRAC_PI_2) * ops.rotation_y(FRAC_PI_2);
    rep.check("encoder_identity_jy_jz2_jx2", max_abs_diff(&identity, &ops.x_twist(FRAC_PI_2)), EXACT);

    // first-order expansion: normalised Z populations converge as 1/C
    let grid = [1e4, 1e5, 1e6];
    let devs: Vec<f64> = grid
        .iter()
        .map(|&c| {
            let p = CavityParams::cat(c, n).expect("positive cooperativity");
            let exact = encoder(&zero, &p).expect("symmetric");
            let approx = first_order_map(&zero, &p).expect("symmetric");
            let pops = |s: &DenseState| normalized(&(0..16).map(|b| s.rho[(b, b)].re).collect::<Vec<_>>());
            max_diff(&pops(&exact), &pops(&approx))
        })
        .collect();
    for (c, d) in grid.iter().zip(&devs) {
        rep.values.insert(format!("first_order_population_deviation_at_C_{c:e}"), *d);
    }
    let slope_error = devs.windows(2).map(|w| ((w[0] / w[1]).log10() - 1.0).abs()).fold(0.0, f64::max);
    rep.check("first_order_populations_converge_as_1_over_c", slope_error, 0.3);

    // J_x² term on the cat state only rescales the Z populations
    let tau = &cat.rho;
    let jx2 = &ops.jx * &ops.jx;
    let both = &jx2 * tau + tau * &jx2;
    let casimir = ops.j_squared() - &ops.jz * &ops.jz;
    let via_casimir = (&casimir * tau + tau * &casimir) * Complex::from(0.5);
    let j = n as f64 / 2.0;
    let scale = j * (j + 1.0) - j * j;
    let (mut d1, mut d2) = (0.0f64, 0.0f64);
    for b in 0..16 {
        d1 = d1.max((both[(b, b)] - via_casimir[(b, b)]).norm());
        d2 = d2.max((both[(b, b)] - tau[(b, b)] * scale).norm());
    }
    rep.check("jx2_populations_equal_casimir_form", d1, EXACT);
    rep.check("jx2_term_keeps_cat_populations", d2, EXACT);
    Ok(rep)
}

fn perfect_perfect_case() -> CaseReport {
    let mut rep = CaseReport::new(Case::PerfectPerfect);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let sigma = outer(&data_state(&mut rng, None));
    let (u2, u3) = steane_round(&sigma, None, None);
    rep.check("coupled_state_decomposition", max_abs_diff(&u2, &coupled_prediction(&sigma, -1.0)), EXACT);
    rep.check("decoded_state_decomposition", max_abs_diff(&u3, &decoded_prediction(&sigma, 0, -1.0)), EXACT);
    rep.values.insert("coupled_state_vs_flipped_cross_term_sign".into(), max_abs_diff(&u2, &coupled_prediction(&sigma, 1.0)));
    rep.values.insert("decoded_state_vs_swapped_outcome_labels".into(), max_abs_diff(&u3, &decoded_prediction(&sigma, 15, 1.0)));

    let m_exp = (data_x(&STABILIZER) * &sigma).trace().re;
    let probs = outcome_probabilities(&u3);
    rep.check("outcome_probabilities_follow_m", (probs[0] - (1.0 + m_exp) / 2.0).abs().max((probs[15] - (1.0 - m_exp) / 2.0).abs()), EXACT);

    for (sign, outcome, label) in [(1.0, 0usize, "plus"), (-1.0, 15, "minus")] {
        let psi = data_state(&mut rng, Some(sign));
        let (_, u3) = steane_round(&outer(&psi), None, None);
        rep.check(&format!("{label}_eigenstate_outcome_is_deterministic"), (1.0 - outcome_probabilities(&u3)[outcome]).abs(), EXACT);
        let data = DenseState { qubits: DATA, rho: block(&u3, outcome, outcome) };
        rep.check(&format!("{label}_eigenstate_data_unchanged"), (1.0 - data.fidelity(&psi)).abs(), EXACT);
    }
    rep
}

fn faulty_encode_case(cooperativity: f64) -> Result<CaseReport> {
    finite(cooperativity)?;
    let mut rep = CaseReport::new(Case::FaultyEncode);
    let params = CavityParams::cat(cooperativity, ANCILLAS)?;
    let (alpha, pe) = (params.alpha(), params.p_e());
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let sigma = outer(&data_state(&mut rng, None));
    let (_, perfect) = steane_round(&sigma, None, None);
    let (_, noisy) = steane_round(&sigma, Some(cooperativity), None);

    // first-order table: X_i|base⟩⟨base|X_j ⊗ (X'_p ± X'_αX'_βX'_γ) σ (X'_q ± X'_δX'_εX'_ζ)
    let others = |k: usize| -> [usize; 3] {
        let v: Vec<usize> = STABILIZER.iter().copied().filter(|&x| x != k).collect();
        [v[0], v[1], v[2]]
    };
    let mut worst = 0.0f64;
    for (base, sign) in [(0usize, 1.0), (15, -1.0)] {
        for i in 1..=ANCILLAS {
            for j in 1..=ANCILLAS {
                let (p, q) = (partner(i), partner(j));
                let (lp, rp) = (others(p), others(q));
                let left = data_x(&[p]) + data_x(&lp) * Complex::from(sign);
                let right = data_x(&[q]) + data_x(&rp) * Complex::from(sign);
                let want = &left * &sigma * &right * Complex::from(pe / 16.0);
                let got = block(&noisy, base ^ ancilla_bit(i), base ^ ancilla_bit(j));
                let deviation = max_abs_diff(&got, &want) / max_abs(&want);
                worst = worst.max(deviation);
                rep.syndrome_table.push(SyndromeEntry {
                    base: if base == 0 { 0 } else { 1 },
                    i,
                    j,
                    p,
                    q,
                    left_partners: lp,
                    right_partners: rp,
                    deviation,
                });
            }
        }
    }
    rep.check("syndrome_table_first_order", worst, 10.0 * alpha);

    // a flip on ancilla i alone flags data qubit 8 − i
    let psi = data_state(&mut rng, Some(1.0));
    let (_, noisy_plus) = steane_round(&outer(&psi), Some(cooperativity), None);
    let mut worst = 0.0f64;
    for i in 1..=ANCILLAS {
        let a = ancilla_bit(i);
        let flipped: Vec<C64> = (0..DATA_DIM).map(|x| psi[x ^ data_bit(partner(i))]).collect();
        let data = DenseState { qubits: DATA, rho: block(&noisy_plus, a, a) };
        worst = worst.max((1.0 - data.fidelity(&flipped)).abs());
    }
    rep.check("single_ancilla_flip_locates_data_qubit", worst, 10.0 * alpha);

    flip_weight_and_populations(&mut rep, &perfect, &noisy, &params, |rho| {
        let masks: Vec<usize> = (1..=ANCILLAS).map(|i| (ancilla_bit(i) << DATA) | data_bit(partner(i))).collect();
        x_sum_sandwich(rho, &masks, 0.5)
    });
    Ok(rep)
}

fn faulty_decode_case(cooperativity: f64) -> Result<CaseReport> {
    finite(cooperativity)?;
    let mut rep = CaseReport::new(Case::FaultyDecode);
    let params = CavityParams::cat(cooperativity, ANCILLAS)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let sigma = outer(&data_state(&mut rng, None));
    let (_, perfect) = steane_round(&sigma, None, None);
    let (_, noisy) = steane_round(&sigma, None, Some(cooperativity));

    let jx = |rho: &CMatrix| {
        let masks: Vec<usize> = (1..=ANCILLAS).map(|i| ancilla_bit(i) << DATA).collect();
        x_sum_sandwich(rho, &masks, 0.5)
    };
    let error_term = jx(&perfect) * Complex::from(params.p_e());
    let predicted = &perfect + &error_term;
    let mut worst = 0.0f64;
    for a in (0..16usize).filter(|a| a.count_ones() % 2 == 1) {
        for b in (0..16usize).filter(|b| b.count_ones() % 2 == 1) {
            worst = worst.max(max_abs_diff(&block(&noisy, a, b), &block(&predicted, a, b)));
        }
    }
    rep.check("flagged_blocks_match_first_order", worst / max_abs(&error_term), 10.0 * params.alpha());

    // an eigenstate of M is never touched by a decode fault
    let psi = data_state(&mut rng, Some(1.0));
    let (_, noisy_plus) = steane_round(&outer(&psi), None, Some(cooperativity));
    // each outcome block must be a multiple of |ψ⟩⟨ψ|
    let target = outer(&psi);
    let worst = (0..16)
        .map(|a| {
            let b = block(&noisy_plus, a, a);
            max_abs_diff(&b, &(&target * b.trace()))
        })
        .fold(0.0, f64::max);
    rep.check("data_unaffected_in_every_outcome", worst, EXACT);

    flip_weight_and_populations(&mut rep, &perfect, &noisy, &params, jx);
    Ok(rep)
}

/// Odd-weight outcome probability against p_e, and the normalised outcome
/// distribution against υ₃ + p_e·𝒳υ₃𝒳.
fn flip_weight_and_populations(
    rep: &mut CaseReport,
    perfect: &CMatrix,
    noisy: &CMatrix,
    params: &CavityParams,
    sandwich: impl Fn(&CMatrix) -> CMatrix,
) {
    let (alpha, pe) = (params.alpha(), params.p_e());
    let probs = normalized(&outcome_probabilities(noisy));
    let flagged: f64 = (0..16).filter(|a: &usize| a.count_ones() % 2 == 1).map(|a| probs[a]).sum();
    rep.values.insert("measured_flip_probability".into(), flagged);
    rep.values.insert("p_e".into(), pe);
    rep.values.insert("n_times_p_e".into(), ANCILLAS as f64 * pe);
    rep.values.insert("alpha".into(), alpha);
    rep.values.insert("trace".into(), noisy.trace().re);
    rep.check("flip_probability_equals_p_e", (flagged / pe - 1.0).abs(), 10.0 * alpha);

    let predicted = perfect + sandwich(perfect) * Complex::from(pe);
    let want = normalized(&outcome_probabilities(&predicted));
    rep.check("outcome_distribution_first_order", max_diff(&probs, &want), 10.0 * alpha * alpha);
}

/// Decoder propagation identities and commutation of bit flips with the
/// encoder, as 16×16 matrix identities.
pub fn heisenberg_check() -> CaseReport {
    let mut rep = CaseReport::new(Case::Heisenberg);
    let ops = CollectiveOps::new(ANCILLAS).expect("4 qubits");
    let ud = ops.x_twist(FRAC_PI_2);
    let ue = ud.adjoint();
    let p = |s: &str| pauli(s).expect("valid Pauli string");
    let heis = |o: &CMatrix| ud.adjoint() * o * &ud;
    rep.check("z1_to_minus_yxxx", max_abs_diff(&heis(&p("ZIII")), &-p("YXXX")), EXACT);
    rep.check("y1_to_zxxx", max_abs_diff(&heis(&p("YIII")), &p("ZXXX")), EXACT);
    rep.check("identity_to_identity", max_abs_diff(&heis(&p("IIII")), &p("IIII")), EXACT);
    let mut worst = 0.0f64;
    for i in 0..ANCILLAS {
        let s: String = (0..ANCILLAS).map(|k| if k == i { 'X' } else { 'I' }).collect();
        let x = p(&s);
        worst = worst.max(max_abs_diff(&(&ue * &x), &(&x * &ue)));
        worst = worst.max(max_abs_diff(&heis(&x), &x));
    }
    rep.check("bit_flips_commute_with_encoder", worst, EXACT);
    // Schrödinger-picture propagation through the decoder, for reference
    rep.values.insert("forward_z1_vs_plus_yxxx".into(), max_abs_diff(&(&ud * p("ZIII") * ud.adjoint()), &p("YXXX")));
    rep.values.insert("forward_y1_vs_minus_zxxx".into(), max_abs_diff(&(&ud * p("YIII") * ud.adjoint()), &-p("ZXXX")));
    rep
}

/// Merges two 3-qubit cats (h₁h₂h₃ = qubits 0..3, v₁v₂v₃ = qubits 3..6) by
/// projecting onto Z_{h₃}Z_{v₁} and applying the branch correction.
pub fn ghz_merge_check() -> CaseReport {
    let mut rep = CaseReport::new(Case::GhzMerge);
    const Q: usize = 6;
    let dim = 1usize << Q;
    let bit = |q: usize| 1usize << (Q - 1 - q);
    let h = [0usize, 1, 2];
    let v = [3usize, 4, 5];
    let cat = |qs: &[usize]| qs.iter().map(|&q| bit(q)).sum::<usize>();
    let mut psi = vec![ZERO; dim];
    for a in [0, cat(&h)] {
        for b in [0, cat(&v)] {
            psi[a | b] = Complex::from(0.5);
        }
    }
    let start = DenseState::pure(Q, &psi).expect("6 qubits");
    let ghz6 = {
        let mut g = vec![ZERO; dim];
        g[0] = Complex::from(std::f64::consts::FRAC_1_SQRT_2);
        g[dim - 1] = g[0];
        g
    };
    let flipped = {
        let mut g = vec![ZERO; dim];
        g[cat(&h)] = Complex::from(std::f64::consts::FRAC_1_SQRT_2);
        g[cat(&v)] = g[cat(&h)];
        g
    };
    let x_on = |qs: &[usize]| {
        let mask = qs.iter().map(|&q| bit(q)).fold(0, |a, b| a ^ b);
        CMatrix::from_fn(dim, dim, |r, c| if r == c ^ mask { ONE } else { ZERO })
    };
    let zz = |a: usize, b: usize| {
        CMatrix::from_fn(dim, dim, |r, c| {
            if r != c {
                ZERO
            } else if ((r & bit(a) != 0) ^ (r & bit(b) != 0)) as u8 == 0 {
                ONE
            } else {
                -ONE
            }
        })
    };
    let id = CMatrix::identity(dim, dim);
    let parity = zz(2, 3);
    for m in [false, true] {
        let s = if m { -1.0 } else { 1.0 };
        let proj = (&id + &parity * Complex::from(s)) * Complex::from(0.5);
        let projected = start.conjugate(&proj);
        let prob = projected.trace();
        rep.check(&format!("outcome_{}_probability_is_half", m as u8), (prob - 0.5).abs(), EXACT);
        for (label, branch) in [("horizontal", &h), ("vertical", &v)] {
            let fixed = projected.conjugate(&x_on(&merge_ghz_correction(m, branch)));
            rep.check(&format!("outcome_{}_{label}_correction_gives_ghz6", m as u8), (1.0 - fixed.fidelity(&ghz6)).abs(), EXACT);
            let mut stab = (fixed.expectation(&x_on(&[0, 1, 2, 3, 4, 5])).re / fixed.trace() - 1.0).abs();
            for q in 0..Q - 1 {
                stab = stab.max((fixed.expectation(&zz(q, q + 1)).re / fixed.trace() - 1.0).abs());
            }
            rep.check(&format!("outcome_{}_{label}_stabilizers", m as u8), stab, EXACT);
        }
        if m {
            rep.check("outcome_1_uncorrected_is_orthogonal_to_ghz6", projected.fidelity(&ghz6), EXACT);
            rep.check("outcome_1_uncorrected_is_flipped_branch", (1.0 - projected.fidelity(&flipped)).abs(), EXACT);
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collective_operators_obey_su2() {
        for n in 1..=5 {
            let ops = CollectiveOps::new(n).unwrap();
            let comm = &ops.jx * &ops.jy - &ops.jy * &ops.jx;
            assert!(max_abs_diff(&comm, &(&ops.jz * I)) < 1e-14);
            let j = n as f64 / 2.0;
            for d in ops.dicke_states() {
                let v = CMatrix::from_column_slice(d.len(), 1, &d);
                let j2v = ops.j_squared() * &v;
                assert!(max_abs_diff(&j2v, &(&v * Complex::from(j * (j + 1.0)))) < 1e-12);
            }
        }
    }

    #[test]
    fn d_n_for_four_qubits() {
        let p = CavityParams::cat(1e6, 4).unwrap();
        assert!((p.d_n() - (2.0f64 * 17.0 / 16.0).powf(-0.5)).abs() < 1e-15);
        assert!((p.p_e() - std::f64::consts::PI / (1e3 * p.d_n())).abs() < 1e-15);
        assert_eq!(p.lossless().alpha(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(CavityParams::cat(0.0, 4).is_err());
        assert!(CavityParams::cat(f64::NAN, 4).is_err());
        assert!(matches!(DenseState::from_matrix(13, CMatrix::zeros(1, 1)), Err(SteaneError::TooManyQubits(13))));
        let non_herm = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ZERO]);
        assert!(matches!(DenseState::from_matrix(1, non_herm), Err(SteaneError::NotHermitian(_))));
        assert!(pauli("XQ").is_err());
        assert!(run_case(Case::FaultyEncode, f64::INFINITY).is_err());
        assert_eq!("faulty-decode".parse::<Case>().unwrap(), Case::FaultyDecode);
    }

    #[test]
    fn singlet_is_rejected() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let singlet = DenseState::pure(2, &[ZERO, Complex::from(s), Complex::from(-s), ZERO]).unwrap();
        let params = CavityParams::cat(1e6, 2).unwrap();
        assert!(matches!(phase_map(&singlet, &params), Err(SteaneError::NotSymmetric(w)) if (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn leading_helpers_match_kronecker_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = random_amplitudes(&mut rng, 16);
        let rho = outer(&psi);
        let u = CollectiveOps::new(2).unwrap().rotation_y(0.7);
        let full = u.kronecker(&CMatrix::identity(4, 4));
        assert!(max_abs_diff(&conjugate_leading(&rho, &u), &(&full * &rho * full.adjoint())) < 1e-14);
        let h = CMatrix::from_fn(4, 4, |r, c| Complex::new(r as f64, c as f64));
        let hk = h.kronecker(&CMatrix::from_element(4, 4, ONE));
        assert!(max_abs_diff(&hadamard_leading(&rho, &h), &rho.component_mul(&hk)) < 1e-15);
    }

    #[test]
    fn decoder_inverts_lossless_encoder() {
        let p = CavityParams::cat(f64::INFINITY, 4).unwrap();
        let zero = DenseState::basis(4, 0).unwrap();
        let back = decoder(&encoder(&zero, &p).unwrap(), &p).unwrap();
        assert!((back.fidelity(&{
            let mut v = vec![ZERO; 16];
            v[0] = ONE;
            v
        }) - 1.0)
            .abs()
            < 1e-12);
    }
}
