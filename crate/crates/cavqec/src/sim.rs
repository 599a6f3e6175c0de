//! Pauli-frame sampling, detector error models and an exhaustive oracle.
//!
//! Frames are tracked relative to the noiseless reference, so explicit Pauli
//! gates count as flips and reported detector bits are deviations from a
//! Pauli-free reference whose detectors are all zero.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::circuit::{one_hot_stages, Channel, Circuit, Gate, Instruction};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("{0} is not a Clifford instruction")]
    NotClifford(String),
    #[error("detectors {detectors:?} and observables {observables:?} are random in the noiseless circuit")]
    NonDeterministic { detectors: Vec<usize>, observables: Vec<usize> },
    #[error("{0} elementary faults exceed the oracle limit of 20")]
    TooManyFaults(usize),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    pub x: Vec<bool>,
    pub z: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn from_code(c: usize) -> Self {
        [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][c]
    }

    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString { x: vec![false; n], z: vec![false; n] }
    }

    pub fn from_paulis(n: usize, ops: &[(usize, Pauli)]) -> Self {
        let mut p = Self::identity(n);
        for &(q, op) in ops {
            p.apply(q, op);
        }
        p
    }

    /// Multiplies in a single-qubit Pauli, ignoring phase.
    pub fn apply(&mut self, q: usize, op: Pauli) {
        let (x, z) = op.bits();
        self.x[q] ^= x;
        self.z[q] ^= z;
    }

    pub fn get(&self, q: usize) -> Pauli {
        match (self.x[q], self.z[q]) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.x.iter().chain(&self.z).any(|&b| b)
    }
}

/// Conjugates `p` through a unitary instruction. Annotations pass through.
pub fn propagate_pauli(p: &mut PauliString, inst: &Instruction) -> Result<(), SimError> {
    match inst {
        Instruction::Gate { gate, targets } => match gate {
            Gate::H => {
                for &q in targets {
                    std::mem::swap(&mut p.x[q], &mut p.z[q]);
                }
            }
            Gate::Cnot => {
                for pair in targets.chunks(2) {
                    let (c, t) = (pair[0], pair[1]);
                    p.x[t] ^= p.x[c];
                    p.z[c] ^= p.z[t];
                }
            }
            Gate::Cz => {
                for pair in targets.chunks(2) {
                    let (a, b) = (pair[0], pair[1]);
                    p.z[b] ^= p.x[a];
                    p.z[a] ^= p.x[b];
                }
            }
            Gate::X | Gate::Y | Gate::Z | Gate::CatPrep => {}
            Gate::ResetZ | Gate::ResetX | Gate::MeasureZ => {
                return Err(SimError::NotClifford(gate.name().to_string()))
            }
        },
        Instruction::Noise { channel, .. } => return Err(SimError::NotClifford(channel.name().to_string())),
        Instruction::Detector { .. } | Instruction::Observable { .. } | Instruction::Tick => {}
    }
    Ok(())
}

/// Circuit with measurement references resolved to absolute indices.
struct Compiled<'a> {
    circuit: &'a Circuit,
    detectors: Vec<Vec<usize>>,
    observables: Vec<Vec<usize>>,
    /// Measurement record index of the first target of each instruction.
    meas_offset: Vec<usize>,
}

impl<'a> Compiled<'a> {
    fn new(circuit: &'a Circuit) -> Self {
        let mut detectors = Vec::new();
        let mut observables = vec![Vec::new(); circuit.observable_count()];
        let mut meas_offset = Vec::with_capacity(circuit.instructions().len());
        let mut m = 0;
        for inst in circuit.instructions() {
            meas_offset.push(m);
            match inst {
                Instruction::Gate { gate: Gate::MeasureZ, targets } => m += targets.len(),
                Instruction::Detector { lookback } => detectors.push(lookback.iter().map(|k| m - k).collect()),
                Instruction::Observable { id, lookback } => {
                    // repeated includes of one record cancel
                    for k in lookback {
                        let r = m - k;
                        let v: &mut Vec<usize> = &mut observables[*id];
                        match v.iter().position(|&x| x == r) {
                            Some(i) => {
                                v.swap_remove(i);
                            }
                            None => v.push(r),
                        }
                    }
                }
                _ => {}
            }
        }
        Compiled { circuit, detectors, observables, meas_offset }
    }

    fn target_count(&self) -> usize {
        self.detectors.len() + self.observables.len()
    }

    /// Detectors and observables depending on each measurement, as one index
    /// space: detectors first, then observables.
    fn meas_sensitivity(&self) -> Vec<Vec<u32>> {
        let mut sens = vec![Vec::new(); self.circuit.measurement_count()];
        let d = self.detectors.len();
        for (i, refs) in self.detectors.iter().enumerate() {
            for &r in refs {
                xor_insert(&mut sens[r], i as u32);
            }
        }
        for (i, refs) in self.observables.iter().enumerate() {
            for &r in refs {
                xor_insert(&mut sens[r], (d + i) as u32);
            }
        }
        sens
    }
}

fn xor_insert(set: &mut Vec<u32>, x: u32) {
    match set.binary_search(&x) {
        Ok(i) => {
            set.remove(i);
        }
        Err(i) => set.insert(i, x),
    }
}

/// Symmetric difference of two sorted sets.
fn sym_diff(a: &[u32], b: &[u32]) -> Vec<u32> {
    if b.is_empty() {
        return a.to_vec();
    }
    if a.is_empty() {
        return b.to_vec();
    }
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len() + b.len());
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
    out
}

fn xor_assign(a: &mut Vec<u32>, b: &[u32]) {
    if !b.is_empty() {
        *a = sym_diff(a, b);
    }
}

/// One elementary fault and what it flips.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultOutcome {
    pub probability: f64,
    pub paulis: Vec<(usize, Pauli)>,
    /// Qubit whose next measurement is flipped.
    pub meas_flip: Option<usize>,
    /// Flipped detectors, then observables offset by the detector count.
    pub flips: Vec<u32>,
}

/// Mutually exclusive elementary faults of one independent channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultChannel {
    pub instruction: usize,
    pub outcomes: Vec<FaultOutcome>,
}

/// Elementary Pauli faults of a noise instruction, in a fixed order, each as
/// the list of single-qubit Paulis it applies plus a measurement-flip target.
fn elementary_faults(channel: Channel, p: f64, targets: &[usize]) -> Vec<(f64, Vec<(usize, Pauli)>, Option<usize>)> {
    let mut out = Vec::new();
    match channel {
        Channel::XError => {
            for &q in targets {
                out.push((p, vec![(q, Pauli::X)], None));
            }
        }
        Channel::MeasFlip => {
            for &q in targets {
                out.push((p, vec![], Some(q)));
            }
        }
        Channel::Depol1 => {
            for &q in targets {
                for c in 1..4 {
                    out.push((p / 3.0, vec![(q, Pauli::from_code(c))], None));
                }
            }
        }
        Channel::Depol2 => {
            for pair in targets.chunks(2) {
                for c in 1..16 {
                    out.push((p / 15.0, vec![(pair[0], Pauli::from_code(c >> 2)), (pair[1], Pauli::from_code(c & 3))], None));
                }
            }
        }
        Channel::OneHotX => {
            let n = targets.len() as f64;
            for &q in targets {
                out.push((p / n, vec![(q, Pauli::X)], None));
            }
        }
    }
    out
}

/// Number of independent channels an instruction stands for and the size of
/// each: one per target for single-qubit channels, one per pair for DEPOL2,
/// one overall for ONE_HOT_X.
fn channel_group_size(channel: Channel, targets: &[usize]) -> usize {
    match channel {
        Channel::XError | Channel::MeasFlip => 1,
        Channel::Depol1 => 3,
        Channel::Depol2 => 15,
        Channel::OneHotX => targets.len(),
    }
}

struct Backward {
    channels: Vec<FaultChannel>,
    random: Vec<u32>,
}

/// Backward sensitivity sweep: for every qubit and time, the set of
/// detectors/observables an X or Z there would flip.
fn backward(compiled: &Compiled) -> Backward {
    let c = compiled.circuit;
    let n = c.qubit_count();
    let meas_sens = compiled.meas_sensitivity();
    let mut sx: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut sz: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut next_meas: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut random: Vec<u32> = Vec::new();
    let mut channels = Vec::new();

    for (idx, inst) in c.instructions().iter().enumerate().rev() {
        match inst {
            Instruction::Gate { gate, targets } => match gate {
                Gate::H => {
                    for &q in targets {
                        std::mem::swap(&mut sx[q], &mut sz[q]);
                    }
                }
                Gate::Cnot => {
                    for pair in targets.chunks(2).rev() {
                        let (a, b) = (pair[0], pair[1]);
                        let t = sx[b].clone();
                        xor_assign(&mut sx[a], &t);
                        let t = sz[a].clone();
                        xor_assign(&mut sz[b], &t);
                    }
                }
                Gate::Cz => {
                    for pair in targets.chunks(2).rev() {
                        let (a, b) = (pair[0], pair[1]);
                        let (za, zb) = (sz[a].clone(), sz[b].clone());
                        xor_assign(&mut sx[a], &zb);
                        xor_assign(&mut sx[b], &za);
                    }
                }
                Gate::ResetZ | Gate::ResetX => {
                    for &q in targets.iter().rev() {
                        let hidden = if *gate == Gate::ResetZ { &sz[q] } else { &sx[q] };
                        random = sym_union(&random, hidden);
                        sx[q].clear();
                        sz[q].clear();
                    }
                }
                Gate::MeasureZ => {
                    let off = compiled.meas_offset[idx];
                    for (k, &q) in targets.iter().enumerate().rev() {
                        random = sym_union(&random, &sz[q]);
                        sz[q].clear();
                        let rec = &meas_sens[off + k];
                        xor_assign(&mut sx[q], rec);
                        next_meas[q] = rec.clone();
                    }
                }
                Gate::X | Gate::Y | Gate::Z | Gate::CatPrep => {}
            },
            Instruction::Noise { channel, p, targets } => {
                if *p == 0.0 {
                    continue;
                }
                let faults = elementary_faults(*channel, *p, targets);
                let size = channel_group_size(*channel, targets);
                let signature = |ops: &[(usize, Pauli)], flip: Option<usize>| -> Vec<u32> {
                    let mut s = Vec::new();
                    for &(q, op) in ops {
                        let (x, z) = op.bits();
                        if x {
                            xor_assign(&mut s, &sx[q]);
                        }
                        if z {
                            xor_assign(&mut s, &sz[q]);
                        }
                    }
                    if let Some(q) = flip {
                        xor_assign(&mut s, &next_meas[q]);
                    }
                    s
                };
                let mut group = Vec::with_capacity(size);
                let mut pending = Vec::new();
                for (probability, paulis, meas_flip) in faults {
                    let flips = signature(&paulis, meas_flip);
                    group.push(FaultOutcome { probability, paulis, meas_flip, flips });
                    if group.len() == size {
                        pending.push(FaultChannel { instruction: idx, outcomes: std::mem::take(&mut group) });
                    }
                }
                channels.extend(pending.into_iter().rev());
            }
            Instruction::Detector { .. } | Instruction::Observable { .. } | Instruction::Tick => {}
        }
    }
    for q in 0..n {
        random = sym_union(&random, &sz[q]);
    }
    channels.reverse();
    Backward { channels, random }
}

fn sym_union(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Detectors and observables whose value is random in the noiseless circuit.
pub fn nondeterministic_targets(c: &Circuit) -> (Vec<usize>, Vec<usize>) {
    let compiled = Compiled::new(c);
    let d = compiled.detectors.len();
    let bw = backward(&compiled);
    let dets = bw.random.iter().filter(|&&t| (t as usize) < d).map(|&t| t as usize).collect();
    let obs = bw.random.iter().filter(|&&t| (t as usize) >= d).map(|&t| t as usize - d).collect();
    (dets, obs)
}

fn require_deterministic(c: &Circuit) -> Result<(), SimError> {
    let (detectors, observables) = nondeterministic_targets(c);
    if detectors.is_empty() && observables.is_empty() {
        Ok(())
    } else {
        Err(SimError::NonDeterministic { detectors, observables })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mechanism {
    pub probability: f64,
    pub detectors: Vec<usize>,
    pub observables: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorErrorModel {
    pub mechanisms: Vec<Mechanism>,
    pub detector_count: usize,
    pub observable_count: usize,
    /// Unmerged channels; empty when parsed from text.
    pub channels: Vec<FaultChannel>,
}

impl DetectorErrorModel {
    /// Exact probability that each detector fires, from the unmerged channels.
    /// Falls back to treating merged mechanisms as independent when the model
    /// was read from text.
    pub fn detector_marginals(&self) -> Vec<f64> {
        let d = self.detector_count;
        let mut prod = vec![1.0f64; d];
        if self.channels.is_empty() {
            for m in &self.mechanisms {
                for &i in &m.detectors {
                    prod[i] *= 1.0 - 2.0 * m.probability;
                }
            }
        } else {
            let mut q: HashMap<u32, f64> = HashMap::new();
            for ch in &self.channels {
                q.clear();
                for o in &ch.outcomes {
                    for &t in &o.flips {
                        *q.entry(t).or_default() += o.probability;
                    }
                }
                for (&t, &p) in &q {
                    if (t as usize) < d {
                        prod[t as usize] *= 1.0 - 2.0 * p;
                    }
                }
            }
        }
        prod.into_iter().map(|x| (1.0 - x) / 2.0).collect()
    }
}

/// Merges every elementary fault with a nonempty signature into mechanisms,
/// combining equal signatures as independent XOR events.
pub fn build_dem(c: &Circuit) -> Result<DetectorErrorModel, SimError> {
    require_deterministic(c)?;
    let compiled = Compiled::new(c);
    let d = compiled.detectors.len();
    let bw = backward(&compiled);
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut merged: Vec<(Vec<u32>, f64)> = Vec::new();
    for ch in &bw.channels {
        for o in &ch.outcomes {
            let (p, sig) = (&o.probability, &o.flips);
            if sig.is_empty() || *p == 0.0 {
                continue;
            }
            match index.get(sig) {
                Some(&i) => {
                    let q = merged[i].1;
                    merged[i].1 = q * (1.0 - p) + p * (1.0 - q);
                }
                None => {
                    index.insert(sig.clone(), merged.len());
                    merged.push((sig.clone(), *p));
                }
            }
        }
    }
    let mechanisms = merged
        .into_iter()
        .map(|(sig, probability)| Mechanism {
            probability,
            detectors: sig.iter().filter(|&&t| (t as usize) < d).map(|&t| t as usize).collect(),
            observables: sig.iter().filter(|&&t| (t as usize) >= d).map(|&t| t as usize - d).collect(),
        })
        .collect();
    Ok(DetectorErrorModel {
        mechanisms,
        detector_count: d,
        observable_count: compiled.observables.len(),
        channels: bw.channels,
    })
}

impl fmt::Display for DetectorErrorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# detectors {} observables {}", self.detector_count, self.observable_count)?;
        for m in &self.mechanisms {
            write!(f, "error({})", m.probability)?;
            for d in &m.detectors {
                write!(f, " D{d}")?;
            }
            for o in &m.observables {
                write!(f, " L{o}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl FromStr for DetectorErrorModel {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut mechanisms = Vec::new();
        let (mut dmax, mut omax) = (0usize, 0usize);
        for (i, raw) in s.lines().enumerate() {
            let err = |msg: &str| SimError::Parse { line: i + 1, msg: msg.to_string() };
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix("# detectors ") {
                let mut w = rest.split_whitespace();
                dmax = dmax.max(w.next().and_then(|x| x.parse().ok()).ok_or_else(|| err("bad header"))?);
                if w.next() == Some("observables") {
                    omax = omax.max(w.next().and_then(|x| x.parse().ok()).ok_or_else(|| err("bad header"))?);
                }
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or("");
            let p: f64 = head
                .strip_prefix("error(")
                .and_then(|x| x.strip_suffix(')'))
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| err("expected error(p)"))?;
            let mut m = Mechanism { probability: p, detectors: vec![], observables: vec![] };
            for w in words {
                if let Some(x) = w.strip_prefix('D').and_then(|x| x.parse::<usize>().ok()) {
                    dmax = dmax.max(x + 1);
                    m.detectors.push(x);
                } else if let Some(x) = w.strip_prefix('L').and_then(|x| x.parse::<usize>().ok()) {
                    omax = omax.max(x + 1);
                    m.observables.push(x);
                } else {
                    return Err(err("bad target"));
                }
            }
            mechanisms.push(m);
        }
        Ok(DetectorErrorModel { mechanisms, detector_count: dmax, observable_count: omax, channels: vec![] })
    }
}

/// Row-major packed detector and observable bits, one row per shot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleBatch {
    pub shots: usize,
    pub detector_count: usize,
    pub observable_count: usize,
    pub seed: u64,
    detectors: Vec<u64>,
    observables: Vec<u64>,
}

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl SampleBatch {
    pub fn detector_words(&self, shot: usize) -> &[u64] {
        let w = words(self.detector_count);
        &self.detectors[shot * w..(shot + 1) * w]
    }

    pub fn observable_words(&self, shot: usize) -> &[u64] {
        let w = words(self.observable_count);
        &self.observables[shot * w..(shot + 1) * w]
    }

    pub fn detector(&self, shot: usize, d: usize) -> bool {
        self.detector_words(shot)[d / 64] >> (d % 64) & 1 == 1
    }

    pub fn observable(&self, shot: usize, o: usize) -> bool {
        self.observable_words(shot)[o / 64] >> (o % 64) & 1 == 1
    }

    pub fn fired_detectors(&self, shot: usize) -> Vec<usize> {
        ones(self.detector_words(shot))
    }

    pub fn flipped_observables(&self, shot: usize) -> Vec<usize> {
        ones(self.observable_words(shot))
    }

    /// Packed little-endian bytes per shot: detectors then observables.
    pub fn write_b8(&self, mut w: impl Write) -> std::io::Result<()> {
        let total = self.detector_count + self.observable_count;
        let mut row = vec![0u8; total.div_ceil(8)];
        for s in 0..self.shots {
            row.fill(0);
            for i in 0..total {
                if self.bit(s, i) {
                    row[i / 8] |= 1 << (i % 8);
                }
            }
            w.write_all(&row)?;
        }
        Ok(())
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let total = self.detector_count + self.observable_count;
        let mut line = String::with_capacity(2 * total);
        for s in 0..self.shots {
            line.clear();
            for i in 0..total {
                if i > 0 {
                    line.push(',');
                }
                line.push(if self.bit(s, i) { '1' } else { '0' });
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Inverse of [`write_b8`](Self::write_b8).
    pub fn read_b8(bytes: &[u8], detector_count: usize, observable_count: usize) -> Option<SampleBatch> {
        let total = detector_count + observable_count;
        let stride = total.div_ceil(8).max(1);
        if total == 0 || bytes.len() % stride != 0 {
            return None;
        }
        let shots = bytes.len() / stride;
        let (dw, ow) = (words(detector_count), words(observable_count));
        let mut b = SampleBatch {
            shots,
            detector_count,
            observable_count,
            seed: 0,
            detectors: vec![0; shots * dw],
            observables: vec![0; shots * ow],
        };
        for s in 0..shots {
            let row = &bytes[s * stride..(s + 1) * stride];
            for i in 0..total {
                if row[i / 8] >> (i % 8) & 1 == 1 {
                    if i < detector_count {
                        b.detectors[s * dw + i / 64] |= 1 << (i % 64);
                    } else {
                        let j = i - detector_count;
                        b.observables[s * ow + j / 64] |= 1 << (j % 64);
                    }
                }
            }
        }
        Some(b)
    }

    fn bit(&self, shot: usize, i: usize) -> bool {
        if i < self.detector_count {
            self.detector(shot, i)
        } else {
            self.observable(shot, i - self.detector_count)
        }
    }
}

fn ones(ws: &[u64]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, &w) in ws.iter().enumerate() {
        let mut w = w;
        while w != 0 {
            out.push(i * 64 + w.trailing_zeros() as usize);
            w &= w - 1;
        }
    }
    out
}

/// 64 independent Bernoulli(p) bits, drawn by geometric skipping.
fn bernoulli_mask(rng: &mut ChaCha8Rng, p: f64, ln_q: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return !0;
    }
    let mut mask = 0u64;
    let mut i: i64 = -1;
    loop {
        let u: f64 = rng.random();
        let skip = ((1.0 - u).ln() / ln_q).floor();
        if skip >= 64.0 {
            break;
        }
        i += skip as i64 + 1;
        if i >= 64 {
            break;
        }
        mask |= 1 << i;
    }
    mask
}

struct Sampler<'a> {
    compiled: Compiled<'a>,
    /// ln(1-p) per instruction, or one-hot stage data
    ln_q: Vec<f64>,
    stages: Vec<Vec<(f64, f64)>>,
}

impl<'a> Sampler<'a> {
    fn new(circuit: &'a Circuit) -> Self {
        let compiled = Compiled::new(circuit);
        let mut ln_q = Vec::with_capacity(circuit.instructions().len());
        let mut stages = Vec::with_capacity(circuit.instructions().len());
        for inst in circuit.instructions() {
            match inst {
                Instruction::Noise { channel, p, targets } => {
                    ln_q.push((1.0 - p).ln());
                    if *channel == Channel::OneHotX {
                        let s = one_hot_stages(targets.len(), *p).expect("validated circuit");
                        stages.push(s.into_iter().map(|q| (q, (1.0 - q).ln())).collect());
                    } else {
                        stages.push(Vec::new());
                    }
                }
                _ => {
                    ln_q.push(0.0);
                    stages.push(Vec::new());
                }
            }
        }
        Sampler { compiled, ln_q, stages }
    }

    /// Simulates 64 shots. Returns per-detector and per-observable words.
    fn run_block(&self, rng: &mut ChaCha8Rng) -> (Vec<u64>, Vec<u64>) {
        let c = self.compiled.circuit;
        let n = c.qubit_count();
        let mut x = vec![0u64; n];
        let mut z = vec![0u64; n];
        let mut flip = vec![0u64; n];
        let mut rec = vec![0u64; c.measurement_count()];
        let mut m = 0;
        for (idx, inst) in c.instructions().iter().enumerate() {
            match inst {
                Instruction::Gate { gate, targets } => match gate {
                    Gate::ResetZ | Gate::ResetX => {
                        for &q in targets {
                            x[q] = 0;
                            z[q] = 0;
                        }
                    }
                    Gate::H => {
                        for &q in targets {
                            std::mem::swap(&mut x[q], &mut z[q]);
                        }
                    }
                    Gate::Cnot => {
                        for pair in targets.chunks(2) {
                            let (a, b) = (pair[0], pair[1]);
                            x[b] ^= x[a];
                            z[a] ^= z[b];
                        }
                    }
                    Gate::Cz => {
                        for pair in targets.chunks(2) {
                            let (a, b) = (pair[0], pair[1]);
                            z[b] ^= x[a];
                            z[a] ^= x[b];
                        }
                    }
                    Gate::X => targets.iter().for_each(|&q| x[q] = !x[q]),
                    Gate::Z => targets.iter().for_each(|&q| z[q] = !z[q]),
                    Gate::Y => targets.iter().for_each(|&q| {
                        x[q] = !x[q];
                        z[q] = !z[q];
                    }),
                    Gate::MeasureZ => {
                        for &q in targets {
                            rec[m] = x[q] ^ flip[q];
                            flip[q] = 0;
                            m += 1;
                        }
                    }
                    Gate::CatPrep => {}
                },
                Instruction::Noise { channel, p, targets } => {
                    let ln_q = self.ln_q[idx];
                    match channel {
                        Channel::XError => {
                            for &q in targets {
                                x[q] ^= bernoulli_mask(rng, *p, ln_q);
                            }
                        }
                        Channel::MeasFlip => {
                            for &q in targets {
                                flip[q] ^= bernoulli_mask(rng, *p, ln_q);
                            }
                        }
                        Channel::Depol1 => {
                            for &q in targets {
                                let mut hit = bernoulli_mask(rng, *p, ln_q);
                                while hit != 0 {
                                    let bit = hit & hit.wrapping_neg();
                                    hit ^= bit;
                                    let (px, pz) = Pauli::from_code(rng.random_range(1..4)).bits();
                                    if px {
                                        x[q] ^= bit;
                                    }
                                    if pz {
                                        z[q] ^= bit;
                                    }
                                }
                            }
                        }
                        Channel::Depol2 => {
                            for pair in targets.chunks(2) {
                                let mut hit = bernoulli_mask(rng, *p, ln_q);
                                while hit != 0 {
                                    let bit = hit & hit.wrapping_neg();
                                    hit ^= bit;
                                    let code: usize = rng.random_range(1..16);
                                    for (q, c) in [(pair[0], code >> 2), (pair[1], code & 3)] {
                                        let (px, pz) = Pauli::from_code(c).bits();
                                        if px {
                                            x[q] ^= bit;
                                        }
                                        if pz {
                                            z[q] ^= bit;
                                        }
                                    }
                                }
                            }
                        }
                        Channel::OneHotX => {
                            let mut fired = 0u64;
                            for (&q, &(stage, ln_s)) in targets.iter().zip(&self.stages[idx]) {
                                let hit = bernoulli_mask(rng, stage, ln_s) & !fired;
                                x[q] ^= hit;
                                fired |= hit;
                            }
                        }
                    }
                }
                Instruction::Detector { .. } | Instruction::Observable { .. } | Instruction::Tick => {}
            }
        }
        let parity = |refs: &Vec<usize>| refs.iter().fold(0u64, |acc, &r| acc ^ rec[r]);
        (
            self.compiled.detectors.iter().map(parity).collect(),
            self.compiled.observables.iter().map(parity).collect(),
        )
    }
}

/// Samples `shots` shots. Shot block `b` (shots `64b..64b+63`) draws from
/// ChaCha8 seeded with `seed` on stream `b`, so results do not depend on the
/// thread count.
pub fn sample_frames(c: &Circuit, shots: usize, seed: u64) -> Result<SampleBatch, SimError> {
    require_deterministic(c)?;
    let sampler = Sampler::new(c);
    let (dc, oc) = (c.detector_count(), c.observable_count());
    let (dw, ow) = (words(dc), words(oc));
    let blocks = shots.div_ceil(64);
    let results: Vec<(Vec<u64>, Vec<u64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            sampler.run_block(&mut rng)
        })
        .collect();
    let mut batch = SampleBatch {
        shots,
        detector_count: dc,
        observable_count: oc,
        seed,
        detectors: vec![0; shots * dw],
        observables: vec![0; shots * ow],
    };
    for (b, (det, obs)) in results.into_iter().enumerate() {
        let base = b * 64;
        let live = (shots - base).min(64);
        let keep = if live == 64 { !0u64 } else { (1u64 << live) - 1 };
        for (i, w) in det.into_iter().enumerate() {
            let mut w = w & keep;
            while w != 0 {
                let s = base + w.trailing_zeros() as usize;
                batch.detectors[s * dw + i / 64] |= 1 << (i % 64);
                w &= w - 1;
            }
        }
        for (i, w) in obs.into_iter().enumerate() {
            let mut w = w & keep;
            while w != 0 {
                let s = base + w.trailing_zeros() as usize;
                batch.observables[s * ow + i / 64] |= 1 << (i % 64);
                w &= w - 1;
            }
        }
    }
    Ok(batch)
}

/// Exact distribution over (detector bits, observable bits), keyed by the
/// concatenated bit string.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleDistribution {
    pub detector_count: usize,
    pub observable_count: usize,
    pub probabilities: BTreeMap<Vec<bool>, f64>,
}

impl OracleDistribution {
    pub fn marginal(&self, index: usize) -> f64 {
        self.probabilities.iter().filter(|(k, _)| k[index]).map(|(_, p)| p).sum()
    }
}

/// Forward propagation of one elementary fault injected just after
/// instruction `at`, returning the flipped detectors and observables.
fn forward_signature(compiled: &Compiled, at: usize, ops: &[(usize, Pauli)], flip_q: Option<usize>) -> Vec<bool> {
    let c = compiled.circuit;
    let mut p = PauliString::from_paulis(c.qubit_count(), ops);
    let mut flip = vec![false; c.qubit_count()];
    if let Some(q) = flip_q {
        flip[q] = true;
    }
    let mut rec = vec![false; c.measurement_count()];
    for (idx, inst) in c.instructions().iter().enumerate().skip(at + 1) {
        match inst {
            Instruction::Gate { gate: Gate::ResetZ | Gate::ResetX, targets } => {
                for &q in targets {
                    p.x[q] = false;
                    p.z[q] = false;
                }
            }
            Instruction::Gate { gate: Gate::MeasureZ, targets } => {
                let off = compiled.meas_offset[idx];
                for (k, &q) in targets.iter().enumerate() {
                    rec[off + k] = p.x[q] ^ flip[q];
                    flip[q] = false;
                    p.z[q] = false;
                }
            }
            Instruction::Noise { .. } => {}
            other => propagate_pauli(&mut p, other).expect("unitary instruction"),
        }
    }
    let parity = |refs: &Vec<usize>| refs.iter().fold(false, |a, &r| a ^ rec[r]);
    compiled.detectors.iter().chain(&compiled.observables).map(parity).collect()
}

/// Exact outcome distribution by enumerating every combination of faults.
/// Independent of the sampler and of the backward sweep used by `build_dem`.
pub fn enumerate_oracle(c: &Circuit) -> Result<OracleDistribution, SimError> {
    let compiled = Compiled::new(c);
    let width = compiled.target_count();
    // (probability, signature) lists per independent channel
    let mut channels: Vec<Vec<(f64, Vec<bool>)>> = Vec::new();
    let mut total = 0;
    for (idx, inst) in c.instructions().iter().enumerate() {
        if let Instruction::Noise { channel, p, targets } = inst {
            if *p == 0.0 {
                continue;
            }
            let faults = elementary_faults(*channel, *p, targets);
            total += faults.len();
            if total > 20 {
                return Err(SimError::TooManyFaults(total));
            }
            let size = channel_group_size(*channel, targets);
            for chunk in faults.chunks(size) {
                channels.push(
                    chunk.iter().map(|(p, ops, fl)| (*p, forward_signature(&compiled, idx, ops, *fl))).collect(),
                );
            }
        }
    }
    let mut probabilities = BTreeMap::new();
    let mut stack = vec![(0usize, 1.0f64, vec![false; width])];
    while let Some((i, prob, bits)) = stack.pop() {
        if i == channels.len() {
            *probabilities.entry(bits).or_insert(0.0) += prob;
            continue;
        }
        let none: f64 = 1.0 - channels[i].iter().map(|(p, _)| p).sum::<f64>();
        stack.push((i + 1, prob * none, bits.clone()));
        for (p, sig) in &channels[i] {
            let next: Vec<bool> = bits.iter().zip(sig).map(|(a, b)| a ^ b).collect();
            stack.push((i + 1, prob * p, next));
        }
    }
    Ok(OracleDistribution {
        detector_count: compiled.detectors.len(),
        observable_count: compiled.observables.len(),
        probabilities,
    })
}

/// Detector and observable flips caused by one Pauli fault injected after
/// instruction `at`, by forward propagation.
pub fn fault_signature(c: &Circuit, at: usize, fault: &[(usize, Pauli)]) -> (Vec<usize>, Vec<usize>) {
    let compiled = Compiled::new(c);
    let d = compiled.detectors.len();
    let bits = forward_signature(&compiled, at, fault, None);
    let on = |r: std::ops::Range<usize>| r.filter(|&i| bits[i]).collect::<Vec<_>>();
    (on(0..d), on(d..bits.len()).into_iter().map(|i| i - d).collect())
}
