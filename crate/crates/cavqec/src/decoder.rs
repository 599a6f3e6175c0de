//! Belief propagation with ordered-statistics post-processing over a
//! detector error model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::{BitMatrix, BitVector};
use crate::sim::DetectorErrorModel;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("prior {value} of column {index} is outside (0, 0.5]")]
    Prior { index: usize, value: f64 },
    #[error("expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("syndrome is not in the column space of the check matrix")]
    Infeasible,
    #[error("invalid decoder configuration: {0}")]
    Config(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BpMethod {
    MinSum,
    /// Exact tanh-rule updates; used to check BP against brute-force marginals.
    ProductSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub max_iterations: usize,
    pub min_sum_scale: f64,
    pub osd_order: usize,
    pub osd_sweep_depth: usize,
    pub method: BpMethod,
    /// Stop as soon as the hard decision satisfies the syndrome.
    pub early_stop: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            max_iterations: 30,
            min_sum_scale: 0.625,
            osd_order: 0,
            osd_sweep_depth: 10,
            method: BpMethod::MinSum,
            early_stop: true,
        }
    }
}

impl DecoderConfig {
    fn validate(&self) -> Result<(), DecodeError> {
        if self.max_iterations == 0 {
            return Err(DecodeError::Config("max_iterations must be at least 1"));
        }
        if !(self.min_sum_scale > 0.0 && self.min_sum_scale <= 1.0) {
            return Err(DecodeError::Config("min_sum_scale must lie in (0, 1]"));
        }
        Ok(())
    }
}

const LLR_CLIP: f64 = 50.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BpOutput {
    /// Posterior flip probability per column.
    pub soft: Vec<f64>,
    pub hard: BitVector,
    pub converged: bool,
    pub iterations: usize,
}

/// Tanner graph in edge-list form.
#[derive(Clone, Debug)]
struct Tanner {
    rows: usize,
    cols: usize,
    /// Edges grouped by check: `check_start[c]..check_start[c+1]`.
    check_start: Vec<usize>,
    edge_var: Vec<u32>,
    /// Checks of each variable: `var_start[v]..var_start[v+1]`.
    var_start: Vec<usize>,
    var_checks: Vec<u32>,
}

impl Tanner {
    fn new(h: &BitMatrix) -> Self {
        let (rows, cols) = (h.rows(), h.cols());
        let mut check_start = Vec::with_capacity(rows + 1);
        let mut edge_var = Vec::with_capacity(h.nnz());
        let mut degree = vec![0usize; cols];
        check_start.push(0);
        for r in 0..rows {
            for &v in h.row(r) {
                edge_var.push(v as u32);
                degree[v] += 1;
            }
            check_start.push(edge_var.len());
        }
        let mut var_start = vec![0usize; cols + 1];
        for v in 0..cols {
            var_start[v + 1] = var_start[v] + degree[v];
        }
        let mut fill = var_start.clone();
        let mut var_checks = vec![0u32; edge_var.len()];
        for r in 0..rows {
            for &v in h.row(r) {
                var_checks[fill[v]] = r as u32;
                fill[v] += 1;
            }
        }
        Tanner { rows, cols, check_start, edge_var, var_start, var_checks }
    }
}

fn check_priors(priors: &[f64], cols: usize) -> Result<(), DecodeError> {
    if priors.len() != cols {
        return Err(DecodeError::Dimension { expected: cols, got: priors.len() });
    }
    for (index, &value) in priors.iter().enumerate() {
        if !(value > 0.0 && value <= 0.5) {
            return Err(DecodeError::Prior { index, value });
        }
    }
    Ok(())
}

fn prior_llrs(priors: &[f64]) -> Vec<f64> {
    priors.iter().map(|&p| ((1.0 - p) / p).ln().clamp(-LLR_CLIP, LLR_CLIP)).collect()
}

fn bp_run(g: &Tanner, lambda: &[f64], s: &[bool], cfg: &DecoderConfig) -> BpOutput {
    let edges = g.edge_var.len();
    let mut q: Vec<f64> = g.edge_var.iter().map(|&v| lambda[v as usize]).collect();
    let mut r = vec![0.0f64; edges];
    let mut total = lambda.to_vec();
    let mut hard = vec![false; g.cols];
    // parity of H·hard XOR s, maintained under hard-decision flips
    let mut mismatch = s.to_vec();
    let mut unsatisfied = s.iter().filter(|&&b| b).count();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iterations {
        iterations = it;
        total.copy_from_slice(lambda);
        for c in 0..g.rows {
            let (lo, hi) = (g.check_start[c], g.check_start[c + 1]);
            if lo == hi {
                continue;
            }
            match cfg.method {
                BpMethod::MinSum => {
                    let mut negative = s[c];
                    let (mut min1, mut min2, mut arg) = (f64::INFINITY, f64::INFINITY, lo);
                    for e in lo..hi {
                        let m = q[e];
                        negative ^= m < 0.0;
                        let a = m.abs();
                        if a < min1 {
                            min2 = min1;
                            min1 = a;
                            arg = e;
                        } else if a < min2 {
                            min2 = a;
                        }
                    }
                    for e in lo..hi {
                        let mag = if e == arg { min2 } else { min1 };
                        let neg = negative ^ (q[e] < 0.0);
                        let v = cfg.min_sum_scale * mag.min(LLR_CLIP);
                        r[e] = if neg { -v } else { v };
                    }
                }
                BpMethod::ProductSum => {
                    for e in lo..hi {
                        let mut prod = if s[c] { -1.0 } else { 1.0 };
                        for f in lo..hi {
                            if f != e {
                                prod *= (q[f] / 2.0).tanh();
                            }
                        }
                        let prod = prod.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                        r[e] = (2.0 * prod.atanh()).clamp(-LLR_CLIP, LLR_CLIP);
                    }
                }
            }
            for e in lo..hi {
                total[g.edge_var[e] as usize] += r[e];
            }
        }
        for e in 0..edges {
            q[e] = (total[g.edge_var[e] as usize] - r[e]).clamp(-LLR_CLIP, LLR_CLIP);
        }
        for v in 0..g.cols {
            let h = total[v] <= 0.0;
            if h != hard[v] {
                hard[v] = h;
                for &c in &g.var_checks[g.var_start[v]..g.var_start[v + 1]] {
                    let c = c as usize;
                    mismatch[c] ^= true;
                    if mismatch[c] {
                        unsatisfied += 1;
                    } else {
                        unsatisfied -= 1;
                    }
                }
            }
        }
        converged = unsatisfied == 0;
        if converged && cfg.early_stop {
            break;
        }
    }
    let soft = total.iter().map(|&l| 1.0 / (1.0 + l.exp())).collect();
    BpOutput { soft, hard: BitVector::from_bools(&hard), converged, iterations }
}

/// Flooding-schedule belief propagation. Bit `i` is set when its posterior
/// flip probability reaches 1/2.
pub fn bp_decode(h: &BitMatrix, priors: &[f64], s: &BitVector, cfg: &DecoderConfig) -> Result<BpOutput, DecodeError> {
    cfg.validate()?;
    check_priors(priors, h.cols())?;
    if s.len() != h.rows() {
        return Err(DecodeError::Dimension { expected: h.rows(), got: s.len() });
    }
    Ok(bp_run(&Tanner::new(h), &prior_llrs(priors), &s.to_bools(), cfg))
}

#[inline]
fn get_bit(v: &[u64], i: usize) -> bool {
    v[i / 64] >> (i % 64) & 1 == 1
}

#[inline]
fn xor_into(a: &mut [u64], b: &[u64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x ^= *y;
    }
}

/// Incremental column echelon form. Vector `k` equals column `selected[k]`
/// XOR the earlier vectors listed in `hits[k]`, and is zero at every earlier
/// pivot. `span[k]` is its range of nonzero words.
struct Echelon {
    words: usize,
    basis: Vec<Vec<u64>>,
    span: Vec<(usize, usize)>,
    pivot: Vec<usize>,
    hits: Vec<Vec<u32>>,
    selected: Vec<usize>,
    pivot_mask: Vec<u64>,
    pivot_of_row: Vec<u32>,
}

fn nonzero_span(v: &[u64]) -> Option<(usize, usize)> {
    let lo = v.iter().position(|&w| w != 0)?;
    let hi = v.iter().rposition(|&w| w != 0)? + 1;
    Some((lo, hi))
}

impl Echelon {
    fn new(rows: usize) -> Self {
        let words = rows.div_ceil(64).max(1);
        Echelon {
            words,
            pivot_mask: vec![0; words],
            pivot_of_row: vec![u32::MAX; words * 64],
            basis: vec![],
            span: vec![],
            pivot: vec![],
            hits: vec![],
            selected: vec![],
        }
    }

    fn column(&self, support: &[usize]) -> Vec<u64> {
        let mut v = vec![0u64; self.words];
        for &r in support {
            v[r / 64] ^= 1 << (r % 64);
        }
        v
    }

    /// Adds column `col`; returns the vectors it reduces to if it is dependent.
    fn insert(&mut self, col: usize, support: &[usize]) -> Option<Vec<u32>> {
        let mut v = self.column(support);
        let mut hits = Vec::new();
        if let Some((mut lo, mut hi)) = nonzero_span(&v) {
            // clearing the lowest-index vector first never touches earlier pivots
            loop {
                let mut next = u32::MAX;
                for w in lo..hi {
                    let mut m = v[w] & self.pivot_mask[w];
                    while m != 0 {
                        next = next.min(self.pivot_of_row[w * 64 + m.trailing_zeros() as usize]);
                        m &= m - 1;
                    }
                }
                if next == u32::MAX {
                    break;
                }
                let (blo, bhi) = self.span[next as usize];
                xor_into(&mut v[blo..bhi], &self.basis[next as usize][blo..bhi]);
                lo = lo.min(blo);
                hi = hi.max(bhi);
                hits.push(next);
            }
        }
        match nonzero_span(&v) {
            None => Some(hits),
            Some(span) => {
                let p = span.0 * 64 + v[span.0].trailing_zeros() as usize;
                self.pivot_mask[p / 64] |= 1 << (p % 64);
                self.pivot_of_row[p] = self.basis.len() as u32;
                self.basis.push(v);
                self.span.push(span);
                self.pivot.push(p);
                self.hits.push(hits);
                self.selected.push(col);
                None
            }
        }
    }

    /// Selected columns summing to the XOR of the listed basis vectors, by
    /// back-substitution through `hits`.
    fn express(&self, vectors: &[u32]) -> Vec<usize> {
        let mut x = vec![false; self.basis.len()];
        for &k in vectors {
            x[k as usize] ^= true;
        }
        for k in (0..x.len()).rev() {
            if x[k] {
                for &j in &self.hits[k] {
                    x[j as usize] ^= true;
                }
            }
        }
        (0..x.len()).filter(|&k| x[k]).map(|k| self.selected[k]).collect()
    }
}

/// Columns ordered most-likely-flipped first; ties by index.
fn ranking(soft: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..soft.len()).collect();
    order.sort_by(|&a, &b| soft[b].total_cmp(&soft[a]).then(a.cmp(&b)));
    order
}

struct OsdRun {
    solution: Vec<usize>,
    echelon: Echelon,
    /// Non-pivot columns in rank order with the basis vectors they reduce to.
    dependent: Vec<(usize, Vec<u32>)>,
}

/// Greedy independent-column selection in rank order. With `full` false the
/// sweep stops once the syndrome lies in the span of the selected columns;
/// the solution on an independent set is unique, so this matches solving on
/// a full basis.
fn osd_eliminate(cols: &[Vec<usize>], rows: usize, soft: &[f64], s: &[usize], full: bool) -> Result<OsdRun, DecodeError> {
    let mut ech = Echelon::new(rows);
    let mut residual = ech.column(s);
    let mut used = Vec::new();
    let mut dependent = Vec::new();
    let mut solved = nonzero_span(&residual).is_none();
    if solved && !full {
        return Ok(OsdRun { solution: vec![], echelon: ech, dependent });
    }
    for col in ranking(soft) {
        match ech.insert(col, &cols[col]) {
            Some(hits) => {
                if full {
                    dependent.push((col, hits));
                }
            }
            None => {
                let k = ech.basis.len() - 1;
                if !solved && get_bit(&residual, ech.pivot[k]) {
                    let (lo, hi) = ech.span[k];
                    xor_into(&mut residual[lo..hi], &ech.basis[k][lo..hi]);
                    used.push(k as u32);
                    if nonzero_span(&residual).is_none() {
                        solved = true;
                        if !full {
                            break;
                        }
                    }
                }
                if ech.basis.len() == rows && !full {
                    break;
                }
            }
        }
    }
    if !solved {
        return Err(DecodeError::Infeasible);
    }
    let mut solution = ech.express(&used);
    solution.sort_unstable();
    Ok(OsdRun { solution, echelon: ech, dependent })
}

fn validate_osd(h: &BitMatrix, soft: &[f64], s: &BitVector) -> Result<(), DecodeError> {
    if soft.len() != h.cols() {
        return Err(DecodeError::Dimension { expected: h.cols(), got: soft.len() });
    }
    if s.len() != h.rows() {
        return Err(DecodeError::Dimension { expected: h.rows(), got: s.len() });
    }
    Ok(())
}

/// Order-0 OSD: solve on the most reliable information set, zero elsewhere.
pub fn osd0(h: &BitMatrix, soft: &[f64], s: &BitVector) -> Result<BitVector, DecodeError> {
    validate_osd(h, soft, s)?;
    let run = osd_eliminate(&h.columns(), h.rows(), soft, s.support(), false)?;
    Ok(BitVector::from_indices(h.cols(), &run.solution).expect("indices in range"))
}

fn osd_sweep(cols: &[Vec<usize>], rows: usize, ncols: usize, soft: &[f64], s: &[usize], depth: usize) -> Result<Vec<usize>, DecodeError> {
    let run = osd_eliminate(cols, rows, soft, s, true)?;
    let words = ncols.div_ceil(64).max(1);
    let to_bits = |idx: &[usize]| {
        let mut v = vec![0u64; words];
        for &i in idx {
            v[i / 64] ^= 1 << (i % 64);
        }
        v
    };
    let base = to_bits(&run.solution);
    // flipping non-pivot column j also flips its pivot expansion
    let flips: Vec<Vec<u64>> = run
        .dependent
        .iter()
        .map(|(j, hits)| {
            let mut v = to_bits(&run.echelon.express(hits));
            v[j / 64] ^= 1 << (j % 64);
            v
        })
        .collect();
    let weight = |v: &[u64]| v.iter().map(|w| w.count_ones()).sum::<u32>();
    let mut best = base.clone();
    let mut best_w = weight(&base);
    let mut consider = |cand: Vec<u64>| {
        let w = weight(&cand);
        if w < best_w {
            best_w = w;
            best = cand;
        }
    };
    for f in &flips {
        let mut c = base.clone();
        xor_into(&mut c, f);
        consider(c);
    }
    let top = depth.min(flips.len());
    for a in 0..top {
        for b in a + 1..top {
            let mut c = base.clone();
            xor_into(&mut c, &flips[a]);
            xor_into(&mut c, &flips[b]);
            consider(c);
        }
    }
    let mut out = Vec::new();
    for (i, &w) in best.iter().enumerate() {
        let mut w = w;
        while w != 0 {
            out.push(i * 64 + w.trailing_zeros() as usize);
            w &= w - 1;
        }
    }
    Ok(out)
}

/// Higher-order OSD by combination sweep: every weight-1 flip of the
/// non-pivot block plus weight-2 flips among its `osd_sweep_depth` most likely
/// columns. Returns the lowest-weight solution, preferring OSD-0 on ties.
pub fn osd_w(h: &BitMatrix, soft: &[f64], s: &BitVector, cfg: &DecoderConfig) -> Result<BitVector, DecodeError> {
    validate_osd(h, soft, s)?;
    let sol = osd_sweep(&h.columns(), h.rows(), h.cols(), soft, s.support(), cfg.osd_sweep_depth)?;
    Ok(BitVector::from_indices(h.cols(), &sol).expect("indices in range"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub correction: BitVector,
    pub converged: bool,
    pub predicted_observables: BitVector,
    pub soft_outputs: Vec<f64>,
}

/// Decoder bound to one detector error model.
pub struct Decoder {
    h: BitMatrix,
    cols: Vec<Vec<usize>>,
    graph: Tanner,
    priors: Vec<f64>,
    llrs: Vec<f64>,
    observables: Vec<Vec<usize>>,
    observable_count: usize,
    cfg: DecoderConfig,
}

impl Decoder {
    pub fn new(dem: &DetectorErrorModel, cfg: DecoderConfig) -> Result<Self, DecodeError> {
        cfg.validate()?;
        let rows: Vec<Vec<usize>> = {
            let mut rows = vec![Vec::new(); dem.detector_count];
            for (j, m) in dem.mechanisms.iter().enumerate() {
                for &d in &m.detectors {
                    rows[d].push(j);
                }
            }
            rows
        };
        let h = BitMatrix::from_rows(dem.mechanisms.len(), rows).expect("mechanism indices in range");
        let priors: Vec<f64> = dem.mechanisms.iter().map(|m| m.probability).collect();
        check_priors(&priors, h.cols())?;
        Ok(Decoder {
            cols: h.columns(),
            graph: Tanner::new(&h),
            h,
            llrs: prior_llrs(&priors),
            priors,
            observables: dem.mechanisms.iter().map(|m| m.observables.clone()).collect(),
            observable_count: dem.observable_count,
            cfg,
        })
    }

    pub fn check_matrix(&self) -> &BitMatrix {
        &self.h
    }

    /// Decodes the fired detectors of one shot.
    pub fn decode(&self, fired: &[usize]) -> Result<DecodeResult, DecodeError> {
        let cols = self.h.cols();
        for &d in fired {
            if d >= self.h.rows() {
                return Err(DecodeError::Dimension { expected: self.h.rows(), got: d + 1 });
            }
        }
        if fired.is_empty() {
            return Ok(DecodeResult {
                correction: BitVector::zeros(cols),
                converged: true,
                predicted_observables: BitVector::zeros(self.observable_count),
                soft_outputs: self.priors.clone(),
            });
        }
        let mut s = vec![false; self.h.rows()];
        for &d in fired {
            s[d] ^= true;
        }
        let bp = bp_run(&self.graph, &self.llrs, &s, &self.cfg);
        let correction: Vec<usize> = if bp.converged {
            bp.hard.support().to_vec()
        } else {
            let support: Vec<usize> = (0..s.len()).filter(|&i| s[i]).collect();
            if self.cfg.osd_order == 0 {
                osd_eliminate(&self.cols, self.h.rows(), &bp.soft, &support, false)?.solution
            } else {
                osd_sweep(&self.cols, self.h.rows(), cols, &bp.soft, &support, self.cfg.osd_sweep_depth)?
            }
        };
        let correction = BitVector::from_indices(cols, &correction).expect("indices in range");
        debug_assert_eq!(self.h.mul_vec(&correction).expect("dimensions").to_bools(), s);
        let mut obs = vec![false; self.observable_count];
        for &j in correction.support() {
            for &o in &self.observables[j] {
                obs[o] ^= true;
            }
        }
        Ok(DecodeResult {
            correction,
            converged: bp.converged,
            predicted_observables: BitVector::from_bools(&obs),
            soft_outputs: bp.soft,
        })
    }
}

pub fn decode_shot(dem: &DetectorErrorModel, detectors: &BitVector, cfg: &DecoderConfig) -> Result<DecodeResult, DecodeError> {
    if detectors.len() != dem.detector_count {
        return Err(DecodeError::Dimension { expected: dem.detector_count, got: detectors.len() });
    }
    Decoder::new(dem, *cfg)?.decode(detectors.support())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep3() -> BitMatrix {
        BitMatrix::from_dense(&[vec![1, 1, 0], vec![0, 1, 1]])
    }

    fn bv(bits: &[u8]) -> BitVector {
        BitVector::from_bools(&bits.iter().map(|&b| b == 1).collect::<Vec<_>>())
    }

    #[test]
    fn zero_syndrome_converges_immediately() {
        let h = rep3();
        let out = bp_decode(&h, &[1e-3; 3], &bv(&[0, 0]), &DecoderConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert!(out.hard.is_zero());
    }

    #[test]
    fn rep3_end_flip() {
        let out = bp_decode(&rep3(), &[0.1; 3], &bv(&[1, 0]), &DecoderConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.hard, bv(&[1, 0, 0]));
    }

    #[test]
    fn conflicting_four_cycle_does_not_converge() {
        let h = BitMatrix::from_dense(&[vec![1, 1], vec![1, 1]]);
        let out = bp_decode(&h, &[0.1, 0.1], &bv(&[1, 0]), &DecoderConfig::default()).unwrap();
        assert!(!out.converged);
        assert_eq!(osd0(&h, &out.soft, &bv(&[1, 0])), Err(DecodeError::Infeasible));
    }

    #[test]
    fn priors_are_validated() {
        let cfg = DecoderConfig::default();
        assert!(matches!(bp_decode(&rep3(), &[0.0, 0.1, 0.1], &bv(&[0, 0]), &cfg), Err(DecodeError::Prior { index: 0, .. })));
        assert!(matches!(bp_decode(&rep3(), &[0.1, 0.6, 0.1], &bv(&[0, 0]), &cfg), Err(DecodeError::Prior { index: 1, .. })));
        assert!(bp_decode(&rep3(), &[0.5; 3], &bv(&[0, 0]), &cfg).is_ok());
    }

    #[test]
    fn osd0_examples() {
        let h = rep3();
        assert!(osd0(&h, &[0.1; 3], &bv(&[0, 0])).unwrap().is_zero());
        assert_eq!(osd0(&h, &[0.4, 0.01, 0.01], &bv(&[1, 0])).unwrap(), bv(&[1, 0, 0]));
    }

    #[test]
    fn osd_w_beats_osd0_when_the_error_is_off_basis() {
        let h = BitMatrix::from_dense(&[vec![1, 0, 0, 1], vec![0, 1, 0, 1], vec![0, 0, 1, 1]]);
        let soft = [0.4, 0.4, 0.4, 0.01];
        let s = bv(&[1, 1, 1]);
        let a = osd0(&h, &soft, &s).unwrap();
        let b = osd_w(&h, &soft, &s, &DecoderConfig { osd_order: 1, ..Default::default() }).unwrap();
        assert_eq!(a.weight(), 3);
        assert_eq!(b, bv(&[0, 0, 0, 1]));
        let same = osd_w(&h, &soft, &s, &DecoderConfig { osd_sweep_depth: 0, ..Default::default() }).unwrap();
        assert!(same.weight() <= a.weight());
    }
}
