//! Circulant classical codes and their hypergraph products.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::{self, BitMatrix, BitVector, Bits, RowSpace};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodeError {
    #[error("check polynomial has no terms")]
    EmptyPolynomial,
    #[error("exponent {exponent} does not fit lift {lift}")]
    ExponentTooLarge { exponent: usize, lift: usize },
    #[error("cannot delete {delete} rows from a matrix with {rows} rows")]
    TooManyDeleted { delete: usize, rows: usize },
    #[error("code has no logical qubits")]
    NoLogicals,
    #[error("w_max must be at least 1")]
    ZeroWeight,
    #[error("layout needs a hypergraph-product code")]
    NotHgp,
    #[error("check {check} of type {kind:?} leaves its row and column")]
    SpansGrid { kind: CheckType, check: usize },
    #[error(transparent)]
    Gf2(#[from] gf2::Gf2Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CheckType {
    X,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
}

/// Exponents of the nonzero terms of `h(x)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckPolynomial {
    exponents: Vec<usize>,
}

impl CheckPolynomial {
    pub fn new(exponents: &[usize]) -> Result<Self, CodeError> {
        let mut e = exponents.to_vec();
        e.sort_unstable();
        e.dedup();
        if e.is_empty() {
            return Err(CodeError::EmptyPolynomial);
        }
        Ok(CheckPolynomial { exponents: e })
    }

    /// From a coefficient list `a0,a1,...`, e.g. `[1,1,1]` for `1+x+x^2`.
    pub fn from_coefficients(coeffs: &[u8]) -> Result<Self, CodeError> {
        let e: Vec<usize> = coeffs.iter().enumerate().filter(|(_, &c)| c & 1 == 1).map(|(i, _)| i).collect();
        CheckPolynomial::new(&e)
    }

    pub fn exponents(&self) -> &[usize] {
        &self.exponents
    }

    pub fn degree(&self) -> usize {
        *self.exponents.last().expect("nonempty")
    }
}

/// Row `i` has ones at `(e + i) mod lift` for every exponent `e`.
pub fn circulant_from_polynomial(h: &CheckPolynomial, lift: usize) -> Result<BitMatrix, CodeError> {
    if h.degree() >= lift {
        return Err(CodeError::ExponentTooLarge { exponent: h.degree(), lift });
    }
    let rows = (0..lift).map(|i| h.exponents.iter().map(|e| (e + i) % lift).collect()).collect();
    Ok(BitMatrix::from_rows(lift, rows)?)
}

/// Drops the trailing `delete_rows` rows.
pub fn open_boundary(h: &BitMatrix, delete_rows: usize) -> Result<BitMatrix, CodeError> {
    if delete_rows >= h.rows() {
        return Err(CodeError::TooManyDeleted { delete: delete_rows, rows: h.rows() });
    }
    Ok(h.take_rows(h.rows() - delete_rows))
}

/// Classical dimensions of the two factors: `H1` is `r1 x n1`, `H2` is `r2 x n2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HgpDims {
    pub n1: usize,
    pub n2: usize,
    pub r1: usize,
    pub r2: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CssCode {
    pub g_x: BitMatrix,
    pub g_z: BitMatrix,
    pub n: usize,
    /// 1 for bit-by-bit qubits, 2 for check-by-check qubits
    pub sector_of: Vec<u8>,
    pub hgp: Option<HgpDims>,
    pub boundary: Boundary,
}

impl CssCode {
    /// A CSS code given directly by its generators, e.g. the Steane code.
    pub fn from_generators(g_x: BitMatrix, g_z: BitMatrix) -> Result<Self, CodeError> {
        let n = g_x.cols();
        if g_z.cols() != n {
            return Err(gf2::Gf2Error::Dimension { expected: n, got: g_z.cols() }.into());
        }
        Ok(CssCode { g_x, g_z, n, sector_of: vec![1; n], hgp: None, boundary: Boundary::Open })
    }

    pub fn checks(&self, kind: CheckType) -> &BitMatrix {
        match kind {
            CheckType::X => &self.g_x,
            CheckType::Z => &self.g_z,
        }
    }

    pub fn commutes(&self) -> bool {
        self.g_x.mul(&self.g_z.transpose()).expect("same width").is_zero()
    }

    pub fn max_check_weight(&self) -> usize {
        self.g_x.row_supports().iter().chain(self.g_z.row_supports()).map(Vec::len).max().unwrap_or(0)
    }
}

/// Sector-1 qubit `(i, j)` (bit i of H1, bit j of H2) sits at column `i*n2 + j`;
/// sector-2 qubit `(a, b)` (check a of H1, check b of H2) at `n1*n2 + a*r2 + b`.
/// X-check `(i, b)` is row `i*r2 + b` of `g_x`; Z-check `(a, j)` is row `a*n2 + j` of `g_z`.
pub fn hypergraph_product(h1: &BitMatrix, h2: &BitMatrix) -> CssCode {
    let (r1, n1, r2, n2) = (h1.rows(), h1.cols(), h2.rows(), h2.cols());
    let g_x = BitMatrix::identity(n1).kron(h2).hstack(&h1.transpose().kron(&BitMatrix::identity(r2)));
    let g_z = h1.kron(&BitMatrix::identity(n2)).hstack(&BitMatrix::identity(r1).kron(&h2.transpose()));
    let n = n1 * n2 + r1 * r2;
    let mut sector_of = vec![1u8; n1 * n2];
    sector_of.resize(n, 2);
    CssCode { g_x, g_z, n, sector_of, hgp: Some(HgpDims { n1, n2, r1, r2 }), boundary: Boundary::Periodic }
}

/// Self-product of the circulant code of `h`; open boundaries drop `deg h` rows.
pub fn hgp_from_polynomial(h: &CheckPolynomial, lift: usize, boundary: Boundary) -> Result<CssCode, CodeError> {
    let mut m = circulant_from_polynomial(h, lift)?;
    if boundary == Boundary::Open {
        m = open_boundary(&m, h.degree())?;
    }
    let mut code = hypergraph_product(&m, &m);
    code.boundary = boundary;
    Ok(code)
}

pub fn code_parameters(code: &CssCode) -> (usize, usize) {
    let k = code.n - gf2::rank(&code.g_x) - gf2::rank(&code.g_z);
    (code.n, k)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distance {
    Exact { d: usize, kind: CheckType, witness: Vec<usize> },
    LowerBound(usize),
}

impl Distance {
    pub fn exact(&self) -> Option<usize> {
        match self {
            Distance::Exact { d, .. } => Some(*d),
            Distance::LowerBound(_) => None,
        }
    }
}

/// Searches one logical type. `kind = X` means X-type operators: they must
/// commute with the Z-checks and lie outside the X-stabilizer row space.
struct LogicalSearch<'a> {
    cols: Vec<Vec<u64>>,
    stabilizers: &'a RowSpace,
    n: usize,
    words: usize,
}

impl<'a> LogicalSearch<'a> {
    fn new(commute_with: &BitMatrix, stabilizers: &'a RowSpace) -> Self {
        let words = commute_with.rows().div_ceil(64).max(1);
        let cols = commute_with
            .columns()
            .iter()
            .map(|c| {
                let mut w = vec![0u64; words];
                for &r in c {
                    w[r >> 6] ^= 1 << (r & 63);
                }
                w
            })
            .collect();
        LogicalSearch { cols, stabilizers, n: commute_with.cols(), words }
    }

    /// First weight-`w` logical in colexicographic order of supports.
    fn at_weight(&self, w: usize) -> Option<Vec<usize>> {
        let mut stack = vec![vec![0u64; self.words]; w + 1];
        let mut chosen = vec![0usize; w];
        self.descend(w, self.n, &mut stack, &mut chosen)
    }

    fn descend(&self, depth: usize, bound: usize, stack: &mut [Vec<u64>], chosen: &mut [usize]) -> Option<Vec<usize>> {
        if depth == 0 {
            if stack[0].iter().any(|&x| x != 0) {
                return None;
            }
            let mut support = chosen.to_vec();
            support.sort_unstable();
            let bits = Bits::from_support(self.n, &support);
            return (!self.stabilizers.contains_bits(&bits)).then_some(support);
        }
        for idx in depth - 1..bound {
            let (lo, hi) = stack.split_at_mut(depth);
            for ((d, s), c) in lo[depth - 1].iter_mut().zip(&hi[0]).zip(&self.cols[idx]) {
                *d = s ^ c;
            }
            chosen[depth - 1] = idx;
            if let Some(found) = self.descend(depth - 1, idx, stack, chosen) {
                return Some(found);
            }
        }
        None
    }
}

/// Exhaustive minimum-weight logical search up to `w_max`, sweeping each
/// weight level completely before moving on.
pub fn compute_distance(code: &CssCode, w_max: usize) -> Result<Distance, CodeError> {
    compute_distance_typed(code, w_max, &[CheckType::X, CheckType::Z])
}

pub fn compute_distance_typed(code: &CssCode, w_max: usize, kinds: &[CheckType]) -> Result<Distance, CodeError> {
    if w_max == 0 {
        return Err(CodeError::ZeroWeight);
    }
    let rs_x = RowSpace::new(&code.g_x);
    let rs_z = RowSpace::new(&code.g_z);
    let searches: Vec<(CheckType, LogicalSearch)> = kinds
        .iter()
        .map(|&k| match k {
            CheckType::X => (k, LogicalSearch::new(&code.g_z, &rs_x)),
            CheckType::Z => (k, LogicalSearch::new(&code.g_x, &rs_z)),
        })
        .collect();
    for w in 1..=w_max.min(code.n) {
        for (kind, s) in &searches {
            if let Some(witness) = s.at_weight(w) {
                return Ok(Distance::Exact { d: w, kind: *kind, witness });
            }
        }
    }
    Ok(Distance::LowerBound(w_max + 1))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalBasis {
    pub logical_x: BitMatrix,
    pub logical_z: BitMatrix,
}

impl LogicalBasis {
    pub fn k(&self) -> usize {
        self.logical_x.rows()
    }

    /// `logical_x * logical_z^T`, the identity for a paired basis.
    pub fn pairing(&self) -> BitMatrix {
        self.logical_x.mul(&self.logical_z.transpose()).expect("same width")
    }
}

/// Kernel vectors of `commute_with` that extend the row space of `stabilizers`.
/// Candidates supported on sector-1 alone are tried first.
fn independent_logicals(code: &CssCode, commute_with: &BitMatrix, stabilizers: &BitMatrix, k: usize) -> Vec<BitVector> {
    let mut space = RowSpace::new(stabilizers);
    let mut picked = Vec::new();
    let sector1: Vec<usize> = (0..code.n).filter(|&q| code.sector_of[q] == 1).collect();
    let restricted = gf2::kernel_basis(&commute_with.select_columns(&sector1));
    let lifted = (0..restricted.rows()).map(|r| {
        let sup: Vec<usize> = restricted.row(r).iter().map(|&c| sector1[c]).collect();
        BitVector::from_indices(code.n, &sup).expect("in range")
    });
    let full = gf2::kernel_basis(commute_with);
    let all = lifted.chain((0..full.rows()).map(|r| full.row_vector(r)));
    for v in all {
        if picked.len() == k {
            break;
        }
        if space.insert(&v) {
            picked.push(v);
        }
    }
    picked
}

/// Symplectically paired logical basis: `logical_x[i]` anticommutes with `logical_z[j]` iff `i == j`.
pub fn logical_operators(code: &CssCode) -> Result<LogicalBasis, CodeError> {
    let (_, k) = code_parameters(code);
    if k == 0 {
        return Err(CodeError::NoLogicals);
    }
    let lx = independent_logicals(code, &code.g_z, &code.g_x, k);
    let lz = independent_logicals(code, &code.g_x, &code.g_z, k);
    let lx = BitMatrix::from_bit_vectors(code.n, &lx);
    let lz = BitMatrix::from_bit_vectors(code.n, &lz);
    // Lx Lz^T = P; replacing Lz by (P^-1)^T Lz makes the pairing the identity.
    let p = lx.mul(&lz.transpose())?;
    let q = gf2::inverse(&p)?.transpose();
    let lz = q.mul(&lz)?;
    Ok(LogicalBasis { logical_x: lx, logical_z: lz })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
    /// (row, col) of every data qubit
    pub coordinate: Vec<(usize, usize)>,
    /// the row and the column each X-check is confined to
    pub x_checks: Vec<(usize, usize)>,
    pub z_checks: Vec<(usize, usize)>,
}

impl Layout {
    pub fn check(&self, kind: CheckType, index: usize) -> (usize, usize) {
        match kind {
            CheckType::X => self.x_checks[index],
            CheckType::Z => self.z_checks[index],
        }
    }
}

/// Grid position of bit `i` when `bits` bits interleave with `checks` checks.
fn bit_pos(i: usize, checks: usize) -> usize {
    if i < checks {
        2 * i
    } else {
        checks + i
    }
}

fn check_pos(a: usize, bits: usize) -> usize {
    if a < bits {
        2 * a + 1
    } else {
        bits + a
    }
}

/// Interleaved grid: bits and checks of H1 alternate along rows, those of H2 along columns.
pub fn layout(code: &CssCode) -> Result<Layout, CodeError> {
    let HgpDims { n1, n2, r1, r2 } = code.hgp.ok_or(CodeError::NotHgp)?;
    let mut coordinate = Vec::with_capacity(code.n);
    for i in 0..n1 {
        for j in 0..n2 {
            coordinate.push((bit_pos(i, r1), bit_pos(j, r2)));
        }
    }
    for a in 0..r1 {
        for b in 0..r2 {
            coordinate.push((check_pos(a, n1), check_pos(b, n2)));
        }
    }
    let x_checks: Vec<(usize, usize)> =
        (0..n1).flat_map(|i| (0..r2).map(move |b| (bit_pos(i, r1), check_pos(b, n2)))).collect();
    let z_checks: Vec<(usize, usize)> =
        (0..r1).flat_map(|a| (0..n2).map(move |j| (check_pos(a, n1), bit_pos(j, r2)))).collect();
    let out = Layout { rows: n1 + r1, cols: n2 + r2, coordinate, x_checks, z_checks };
    for kind in [CheckType::X, CheckType::Z] {
        let m = code.checks(kind);
        for c in 0..m.rows() {
            let (r, col) = out.check(kind, c);
            if m.row(c).iter().any(|&q| out.coordinate[q].0 != r && out.coordinate[q].1 != col) {
                return Err(CodeError::SpansGrid { kind, check: c });
            }
        }
    }
    Ok(out)
}

/// Serialized form used by the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CodeFile {
    pub n: usize,
    pub k: usize,
    pub boundary: Boundary,
    pub g_x: Vec<Vec<usize>>,
    pub g_z: Vec<Vec<usize>>,
    pub sectors: Vec<u8>,
    pub hgp: Option<HgpDims>,
    pub layout: Option<Vec<(usize, usize)>>,
}

impl CodeFile {
    pub fn from_code(code: &CssCode) -> Self {
        let (n, k) = code_parameters(code);
        CodeFile {
            n,
            k,
            boundary: code.boundary,
            g_x: code.g_x.row_supports().to_vec(),
            g_z: code.g_z.row_supports().to_vec(),
            sectors: code.sector_of.clone(),
            hgp: code.hgp,
            layout: layout(code).ok().map(|l| l.coordinate),
        }
    }

    pub fn to_code(&self) -> Result<CssCode, CodeError> {
        Ok(CssCode {
            g_x: BitMatrix::from_rows(self.n, self.g_x.clone())?,
            g_z: BitMatrix::from_rows(self.n, self.g_z.clone())?,
            n: self.n,
            sector_of: self.sectors.clone(),
            hgp: self.hgp,
            boundary: self.boundary,
        })
    }
}

/// The [[7,1,3]] Steane code; both check types use the Hamming parity checks.
pub fn steane_code() -> CssCode {
    let h = BitMatrix::from_rows(7, vec![vec![3, 4, 5, 6], vec![1, 2, 5, 6], vec![0, 2, 4, 6]]).expect("valid");
    CssCode::from_generators(h.clone(), h).expect("valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(lift: usize, open: bool) -> BitMatrix {
        let h = circulant_from_polynomial(&CheckPolynomial::new(&[0, 1]).unwrap(), lift).unwrap();
        if open {
            open_boundary(&h, 1).unwrap()
        } else {
            h
        }
    }

    #[test]
    fn circulant_matches_hand_written_matrix() {
        let h = rep(5, false);
        let expected = BitMatrix::from_dense(&[
            vec![1, 1, 0, 0, 0],
            vec![0, 1, 1, 0, 0],
            vec![0, 0, 1, 1, 0],
            vec![0, 0, 0, 1, 1],
            vec![1, 0, 0, 0, 1],
        ]);
        assert_eq!(h, expected);
        assert_eq!(rep(5, true), expected.take_rows(4));
        let id = circulant_from_polynomial(&CheckPolynomial::new(&[0]).unwrap(), 3).unwrap();
        assert_eq!(id, BitMatrix::identity(3));
        assert!(circulant_from_polynomial(&CheckPolynomial::new(&[0, 3]).unwrap(), 3).is_err());
    }

    #[test]
    fn open_boundary_edges() {
        let h = rep(3, false);
        assert_eq!(open_boundary(&h, 0).unwrap(), h);
        assert_eq!(open_boundary(&h, 1).unwrap(), BitMatrix::from_dense(&[vec![1, 1, 0], vec![0, 1, 1]]));
        assert!(open_boundary(&h, 3).is_err());
    }

    #[test]
    fn polynomial_from_coefficients() {
        let h = CheckPolynomial::from_coefficients(&[1, 1, 0, 1, 0, 0, 0, 1]).unwrap();
        assert_eq!(h.exponents(), &[0, 1, 3, 7]);
        assert_eq!(h.degree(), 7);
        assert!(CheckPolynomial::from_coefficients(&[0, 0]).is_err());
    }

    #[test]
    fn toric_code_from_periodic_rep2() {
        let code = hypergraph_product(&rep(2, false), &rep(2, false));
        assert!(code.commutes());
        assert_eq!(code_parameters(&code), (8, 2));
        assert_eq!(compute_distance(&code, 4).unwrap().exact(), Some(2));
        let l = logical_operators(&code).unwrap();
        assert_eq!(l.k(), 2);
        assert_eq!(l.pairing(), BitMatrix::identity(2));
    }

    #[test]
    fn trivial_product_is_one_cell() {
        let h = circulant_from_polynomial(&CheckPolynomial::new(&[0]).unwrap(), 1).unwrap();
        let code = hypergraph_product(&h, &h);
        assert_eq!(code_parameters(&code), (2, 0));
        let l = layout(&code).unwrap();
        assert_eq!((l.rows, l.cols), (2, 2));
        assert_eq!(l.coordinate, vec![(0, 0), (1, 1)]);
        assert_eq!(logical_operators(&code), Err(CodeError::NoLogicals));
    }

    #[test]
    fn full_rank_square_product_has_no_logicals() {
        let h = rep(5, false).take_rows(4).vstack(&BitMatrix::from_rows(5, vec![vec![4]]).unwrap());
        assert_eq!(gf2::rank(&h), 5);
        assert_eq!(code_parameters(&hypergraph_product(&h, &h)).1, 0);
    }

    #[test]
    fn steane_is_7_1_3() {
        let s = steane_code();
        assert!(s.commutes());
        assert_eq!(code_parameters(&s), (7, 1));
        assert_eq!(compute_distance(&s, 3).unwrap().exact(), Some(3));
        assert_eq!(layout(&s), Err(CodeError::NotHgp));
    }

    #[test]
    fn distance_needs_positive_budget() {
        assert_eq!(compute_distance(&steane_code(), 0), Err(CodeError::ZeroWeight));
        assert_eq!(compute_distance(&steane_code(), 2).unwrap(), Distance::LowerBound(3));
    }
}
