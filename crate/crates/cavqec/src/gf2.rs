//! Sparse linear algebra over GF(2).
//!
//! Matrices are stored as sorted row supports. Elimination converts to packed
//! `u64` rows internally, which is the only representation where Gaussian
//! elimination on a few thousand columns stays cheap.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("matrix is singular")]
    Singular,
    #[error("malformed matrix text: {0}")]
    Parse(String),
}

/// Packed bit row. Length is tracked by the owner.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bits {
    words: Vec<u64>,
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Bits { words: vec![0; len.div_ceil(64)] }
    }

    pub fn from_support(len: usize, support: &[usize]) -> Self {
        let mut b = Bits::zeros(len);
        for &i in support {
            b.flip(i);
        }
        b
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        let m = 1u64 << (i & 63);
        if v {
            self.words[i >> 6] |= m;
        } else {
            self.words[i >> 6] &= !m;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    #[inline]
    pub fn xor_with(&mut self, other: &Bits) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= *b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn first_one(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    /// Indices of set bits, ascending.
    pub fn ones(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (wi, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push(wi * 64 + w.trailing_zeros() as usize);
                w &= w - 1;
            }
        }
        out
    }
}

/// Sparse bit vector: a length and the sorted positions of its ones.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitVector {
    len: usize,
    support: Vec<usize>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector { len, support: Vec::new() }
    }

    /// Builds from an arbitrary index list; duplicates cancel in pairs.
    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self, Gf2Error> {
        let mut s = indices.to_vec();
        if let Some(&bad) = s.iter().find(|&&i| i >= len) {
            return Err(Gf2Error::IndexOutOfRange { index: bad, len });
        }
        s.sort_unstable();
        let mut support = Vec::with_capacity(s.len());
        let mut i = 0;
        while i < s.len() {
            let mut j = i;
            while j < s.len() && s[j] == s[i] {
                j += 1;
            }
            if (j - i) % 2 == 1 {
                support.push(s[i]);
            }
            i = j;
        }
        Ok(BitVector { len, support })
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let support = bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        BitVector { len: bits.len(), support }
    }

    pub fn from_bits(len: usize, bits: &Bits) -> Self {
        BitVector { len, support: bits.ones() }
    }

    pub fn to_bits(&self) -> Bits {
        Bits::from_support(self.len, &self.support)
    }

    pub fn to_bools(&self) -> Vec<bool> {
        let mut v = vec![false; self.len];
        for &i in &self.support {
            v[i] = true;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weight(&self) -> usize {
        self.support.len()
    }

    pub fn is_zero(&self) -> bool {
        self.support.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.support.binary_search(&i).is_ok()
    }

    pub fn xor(&self, other: &BitVector) -> BitVector {
        assert_eq!(self.len, other.len);
        let (a, b) = (&self.support, &other.support);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        BitVector { len: self.len, support: out }
    }

    /// Parity of the overlap with `other`.
    pub fn dot(&self, other: &BitVector) -> bool {
        let (a, b) = (&self.support, &other.support);
        let (mut i, mut j, mut acc) = (0, 0, false);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc = !acc;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    row_supports: Vec<Vec<usize>>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BitMatrix { rows, cols, row_supports: vec![Vec::new(); rows] }
    }

    pub fn identity(n: usize) -> Self {
        BitMatrix { rows: n, cols: n, row_supports: (0..n).map(|i| vec![i]).collect() }
    }

    pub fn from_rows(cols: usize, rows: Vec<Vec<usize>>) -> Result<Self, Gf2Error> {
        let mut out = Vec::with_capacity(rows.len());
        for r in rows {
            out.push(BitVector::from_indices(cols, &r)?.support);
        }
        Ok(BitMatrix { rows: out.len(), cols, row_supports: out })
    }

    pub fn from_dense(rows: &[Vec<u8>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let row_supports = rows
            .iter()
            .map(|r| {
                assert_eq!(r.len(), cols);
                r.iter().enumerate().filter(|(_, &b)| b & 1 == 1).map(|(i, _)| i).collect()
            })
            .collect();
        BitMatrix { rows: rows.len(), cols, row_supports }
    }

    pub fn from_bit_vectors(cols: usize, rows: &[BitVector]) -> Self {
        for r in rows {
            assert_eq!(r.len(), cols);
        }
        BitMatrix { rows: rows.len(), cols, row_supports: rows.iter().map(|r| r.support.clone()).collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.row_supports[i]
    }

    pub fn row_vector(&self, i: usize) -> BitVector {
        BitVector { len: self.cols, support: self.row_supports[i].clone() }
    }

    pub fn row_supports(&self) -> &[Vec<usize>] {
        &self.row_supports
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.row_supports[r].binary_search(&c).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.row_supports.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.row_supports
            .iter()
            .map(|r| {
                let mut v = vec![0u8; self.cols];
                for &c in r {
                    v[c] = 1;
                }
                v
            })
            .collect()
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = vec![Vec::new(); self.cols];
        for (r, sup) in self.row_supports.iter().enumerate() {
            for &c in sup {
                t[c].push(r);
            }
        }
        BitMatrix { rows: self.cols, cols: self.rows, row_supports: t }
    }

    /// Column supports, i.e. the rows of the transpose.
    pub fn columns(&self) -> Vec<Vec<usize>> {
        self.transpose().row_supports
    }

    pub fn mul_vec(&self, x: &BitVector) -> Result<BitVector, Gf2Error> {
        if x.len() != self.cols {
            return Err(Gf2Error::Dimension { expected: self.cols, got: x.len() });
        }
        let bits = x.to_bits();
        let support = self
            .row_supports
            .iter()
            .enumerate()
            .filter(|(_, r)| r.iter().filter(|&&c| bits.get(c)).count() % 2 == 1)
            .map(|(i, _)| i)
            .collect();
        Ok(BitVector { len: self.rows, support })
    }

    pub fn mul(&self, other: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if self.cols != other.rows {
            return Err(Gf2Error::Dimension { expected: self.cols, got: other.rows });
        }
        let other_rows: Vec<Bits> = other.row_supports.iter().map(|r| Bits::from_support(other.cols, r)).collect();
        let mut out = Vec::with_capacity(self.rows);
        for r in &self.row_supports {
            let mut acc = Bits::zeros(other.cols);
            for &k in r {
                acc.xor_with(&other_rows[k]);
            }
            out.push(acc.ones());
        }
        Ok(BitMatrix { rows: self.rows, cols: other.cols, row_supports: out })
    }

    pub fn kron(&self, other: &BitMatrix) -> BitMatrix {
        let mut rows = Vec::with_capacity(self.rows * other.rows);
        for a in &self.row_supports {
            for b in &other.row_supports {
                let mut r: Vec<usize> = Vec::with_capacity(a.len() * b.len());
                for &i in a {
                    for &j in b {
                        r.push(i * other.cols + j);
                    }
                }
                rows.push(r);
            }
        }
        BitMatrix { rows: self.rows * other.rows, cols: self.cols * other.cols, row_supports: rows }
    }

    pub fn hstack(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.rows, other.rows);
        let rows = self
            .row_supports
            .iter()
            .zip(&other.row_supports)
            .map(|(a, b)| a.iter().copied().chain(b.iter().map(|&c| c + self.cols)).collect())
            .collect();
        BitMatrix { rows: self.rows, cols: self.cols + other.cols, row_supports: rows }
    }

    pub fn vstack(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.cols, other.cols);
        let mut rows = self.row_supports.clone();
        rows.extend(other.row_supports.iter().cloned());
        BitMatrix { rows: self.rows + other.rows, cols: self.cols, row_supports: rows }
    }

    /// Keeps the first `n` rows.
    pub fn take_rows(&self, n: usize) -> BitMatrix {
        BitMatrix { rows: n, cols: self.cols, row_supports: self.row_supports[..n].to_vec() }
    }

    pub fn select_columns(&self, cols: &[usize]) -> BitMatrix {
        let mut map = vec![usize::MAX; self.cols];
        for (new, &old) in cols.iter().enumerate() {
            map[old] = new;
        }
        let rows = self
            .row_supports
            .iter()
            .map(|r| {
                let mut v: Vec<usize> = r.iter().filter(|&&c| map[c] != usize::MAX).map(|&c| map[c]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        BitMatrix { rows: self.rows, cols: cols.len(), row_supports: rows }
    }

    pub fn is_zero(&self) -> bool {
        self.row_supports.iter().all(Vec::is_empty)
    }

    fn packed(&self) -> Vec<Bits> {
        self.row_supports.iter().map(|r| Bits::from_support(self.cols, r)).collect()
    }
}

impl fmt::Display for BitMatrix {
    /// First line `rows cols`, then one line per row listing the positions of its ones.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.rows, self.cols)?;
        for r in &self.row_supports {
            let line: Vec<String> = r.iter().map(usize::to_string).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

impl FromStr for BitMatrix {
    type Err = Gf2Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines();
        let header = lines.next().ok_or_else(|| Gf2Error::Parse("empty input".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Gf2Error::Parse(format!("bad header `{header}`"))))
            .collect::<Result<_, _>>()?;
        let [rows, cols] = dims[..] else {
            return Err(Gf2Error::Parse(format!("bad header `{header}`")));
        };
        let mut out = Vec::with_capacity(rows);
        for _ in 0..rows {
            let line = lines.next().unwrap_or("");
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Gf2Error::Parse(format!("bad index `{t}`"))))
                .collect::<Result<_, _>>()?;
            out.push(idx);
        }
        BitMatrix::from_rows(cols, out)
    }
}

/// Reduced row echelon form of a packed matrix.
///
/// Pivots are chosen column by column. Among candidate rows the sparsest one
/// wins, ties going to the lowest row index.
struct Rref {
    rows: Vec<Bits>,
    /// pivot column of `rows[i]` for i < rank
    pivots: Vec<usize>,
}

fn rref(mut rows: Vec<Bits>, cols: usize) -> Rref {
    let mut pivots = Vec::new();
    let mut next = 0;
    for c in 0..cols {
        if next == rows.len() {
            break;
        }
        let mut best: Option<(usize, usize)> = None;
        for (r, row) in rows.iter().enumerate().skip(next) {
            if row.get(c) {
                let w = row.count_ones();
                if best.is_none_or(|(_, bw)| w < bw) {
                    best = Some((r, w));
                }
            }
        }
        let Some((p, _)) = best else { continue };
        rows.swap(next, p);
        let pivot_row = rows[next].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != next && row.get(c) {
                row.xor_with(&pivot_row);
            }
        }
        pivots.push(c);
        next += 1;
    }
    rows.truncate(pivots.len());
    Rref { rows, pivots }
}

pub fn rank(m: &BitMatrix) -> usize {
    rref(m.packed(), m.cols).pivots.len()
}

/// Basis of the null space `{v : M v = 0}`, one basis vector per row.
pub fn kernel_basis(m: &BitMatrix) -> BitMatrix {
    let e = rref(m.packed(), m.cols);
    let mut is_pivot = vec![false; m.cols];
    for &p in &e.pivots {
        is_pivot[p] = true;
    }
    let mut basis = Vec::new();
    for f in (0..m.cols).filter(|&c| !is_pivot[c]) {
        let mut v = vec![f];
        for (row, &p) in e.rows.iter().zip(&e.pivots) {
            if row.get(f) {
                v.push(p);
            }
        }
        v.sort_unstable();
        basis.push(v);
    }
    BitMatrix { rows: basis.len(), cols: m.cols, row_supports: basis }
}

/// Some `x` with `M x = s`, or `None` when `s` is outside the column space.
/// Free variables are set to zero.
pub fn solve(m: &BitMatrix, s: &BitVector) -> Result<Option<BitVector>, Gf2Error> {
    if s.len() != m.rows {
        return Err(Gf2Error::Dimension { expected: m.rows, got: s.len() });
    }
    let aug: Vec<Bits> = m
        .row_supports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut b = Bits::from_support(m.cols + 1, r);
            if s.get(i) {
                b.set(m.cols, true);
            }
            b
        })
        .collect();
    let e = rref(aug, m.cols + 1);
    if e.pivots.last() == Some(&m.cols) {
        return Ok(None);
    }
    let support: Vec<usize> = e
        .rows
        .iter()
        .zip(&e.pivots)
        .filter(|(row, _)| row.get(m.cols))
        .map(|(_, &p)| p)
        .collect();
    Ok(Some(BitVector::from_indices(m.cols, &support)?))
}

pub fn in_rowspace(m: &BitMatrix, v: &BitVector) -> Result<bool, Gf2Error> {
    if v.len() != m.cols {
        return Err(Gf2Error::Dimension { expected: m.cols, got: v.len() });
    }
    Ok(RowSpace::new(m).contains(v))
}

/// Square matrix inverse over GF(2).
pub fn inverse(m: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
    let n = m.rows;
    if m.cols != n {
        return Err(Gf2Error::Dimension { expected: n, got: m.cols });
    }
    let aug: Vec<Bits> = m
        .row_supports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut b = Bits::from_support(2 * n, r);
            b.set(n + i, true);
            b
        })
        .collect();
    let e = rref(aug, n);
    if e.pivots.len() < n {
        return Err(Gf2Error::Singular);
    }
    let rows = e.rows.iter().map(|r| r.ones().into_iter().filter(|&c| c >= n).map(|c| c - n).collect()).collect();
    Ok(BitMatrix { rows: n, cols: n, row_supports: rows })
}

/// Reusable membership oracle for the row space of a fixed matrix.
pub struct RowSpace {
    cols: usize,
    rows: Vec<Bits>,
    pivots: Vec<usize>,
}

impl RowSpace {
    pub fn new(m: &BitMatrix) -> Self {
        let e = rref(m.packed(), m.cols);
        RowSpace { cols: m.cols, rows: e.rows, pivots: e.pivots }
    }

    pub fn dim(&self) -> usize {
        self.pivots.len()
    }

    pub fn contains(&self, v: &BitVector) -> bool {
        self.contains_bits(&v.to_bits())
    }

    pub fn contains_bits(&self, v: &Bits) -> bool {
        let mut v = v.clone();
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            if v.get(p) {
                v.xor_with(row);
            }
        }
        v.is_zero()
    }

    /// Adds `v` to the space; returns false when it was already inside.
    pub fn insert(&mut self, v: &BitVector) -> bool {
        let mut v = v.to_bits();
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            if v.get(p) {
                v.xor_with(row);
            }
        }
        let Some(p) = v.first_one() else { return false };
        for row in &mut self.rows {
            if row.get(p) {
                row.xor_with(&v);
            }
        }
        self.rows.push(v);
        self.pivots.push(p);
        debug_assert!(self.cols > p);
        true
    }
}
