//! Noisy DiVincenzo–Aliferis syndrome-extraction circuits.
//!
//! Every check gets its own block of `2w` ancilla qubits: `w` primary qubits
//! holding the cat state and `w` redundant qubits used for the local decode.
//! Primary qubit `j` couples to the `j`-th support qubit in descending index
//! order. The last primary qubit is the root of the cat ladder.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{logical_operators, CheckType, CodeError, CssCode};
use crate::schedule::Schedule;

#[derive(Debug, Error, PartialEq)]
pub enum CircuitError {
    #[error("probability {name} = {value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("one-hot channel over {n} qubits cannot carry probability {p}")]
    OneHot { n: usize, p: f64 },
    #[error("{gate} needs an even number of targets, got {count}")]
    OddTargets { gate: &'static str, count: usize },
    #[error("instruction {line} references measurement rec[-{lookback}] but only {available} exist")]
    Lookback { line: usize, lookback: usize, available: usize },
    #[error("{0} has no targets")]
    NoTargets(&'static str),
    #[error("no {kind:?} check with index {index}")]
    NoSuchCheck { kind: CheckType, index: usize },
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("observables are not deterministic: {0:?}")]
    RandomObservable(Vec<usize>),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Code(#[from] CodeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Agnostic,
    Custom,
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "agnostic" => Ok(Self::Agnostic),
            "custom" => Ok(Self::Custom),
            other => Err(format!("unknown noise model {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p1: f64,
    pub p2: f64,
    pub p_in: f64,
    pub p_meas: f64,
    pub p_wait: f64,
    pub p_cavity: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { p1: 0.0, p2: 0.0, p_in: 0.0, p_meas: 0.0, p_wait: 0.0, p_cavity: 0.0 }
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let named = [
            ("p1", self.p1),
            ("p2", self.p2),
            ("p_in", self.p_in),
            ("p_meas", self.p_meas),
            ("p_wait", self.p_wait),
            ("p_cavity", self.p_cavity),
        ];
        for (name, value) in named {
            check_probability(name, value)?;
        }
        Ok(())
    }
}

fn check_probability(name: &'static str, value: f64) -> Result<(), CircuitError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(CircuitError::Probability { name, value })
    }
}

/// Agnostic: every gate, reset and measurement fails with `p`.
/// Custom: two-qubit gates at `p`, single-qubit gates at `p/10`, reset and
/// measurement at `2p`. Both set the cavity error to `m·p` and idle error to 0.
pub fn make_noise_model(kind: ModelKind, p: f64, m: f64) -> Result<NoiseModel, CircuitError> {
    check_probability("p", p)?;
    if !(m >= 0.0) {
        return Err(CircuitError::Probability { name: "m", value: m });
    }
    check_probability("p_cavity", m * p)?;
    let model = match kind {
        ModelKind::Agnostic => NoiseModel { p1: p, p2: p, p_in: p, p_meas: p, p_wait: 0.0, p_cavity: m * p },
        ModelKind::Custom => {
            NoiseModel { p1: p / 10.0, p2: p, p_in: 2.0 * p, p_meas: 2.0 * p, p_wait: 0.0, p_cavity: m * p }
        }
    };
    model.validate()?;
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    ResetZ,
    ResetX,
    H,
    Cnot,
    Cz,
    X,
    Y,
    Z,
    MeasureZ,
    /// Marks the qubits of a cat state; no action.
    CatPrep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Depol1,
    Depol2,
    XError,
    /// Flips the next measurement result of each target.
    MeasFlip,
    /// At most one target flips; each with probability p/N.
    OneHotX,
}

impl Gate {
    pub fn name(self) -> &'static str {
        match self {
            Gate::ResetZ => "RESET_Z",
            Gate::ResetX => "RESET_X",
            Gate::H => "H",
            Gate::Cnot => "CNOT",
            Gate::Cz => "CZ",
            Gate::X => "PAULI_X",
            Gate::Y => "PAULI_Y",
            Gate::Z => "PAULI_Z",
            Gate::MeasureZ => "MEASURE_Z",
            Gate::CatPrep => "CAT_PREP",
        }
    }

    pub fn is_two_qubit(self) -> bool {
        matches!(self, Gate::Cnot | Gate::Cz)
    }
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Depol1 => "DEPOL1",
            Channel::Depol2 => "DEPOL2",
            Channel::XError => "X_ERROR",
            Channel::MeasFlip => "MEAS_FLIP",
            Channel::OneHotX => "ONE_HOT_X",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Instruction {
    Gate { gate: Gate, targets: Vec<usize> },
    Noise { channel: Channel, p: f64, targets: Vec<usize> },
    /// Lookbacks are positive: `k` means `rec[-k]`.
    Detector { lookback: Vec<usize> },
    Observable { id: usize, lookback: Vec<usize> },
    Tick,
}

impl Instruction {
    pub fn gate(gate: Gate, targets: impl Into<Vec<usize>>) -> Self {
        Instruction::Gate { gate, targets: targets.into() }
    }

    pub fn noise(channel: Channel, p: f64, targets: impl Into<Vec<usize>>) -> Self {
        Instruction::Noise { channel, p, targets: targets.into() }
    }

    pub fn targets(&self) -> &[usize] {
        match self {
            Instruction::Gate { targets, .. } | Instruction::Noise { targets, .. } => targets,
            _ => &[],
        }
    }
}

/// Stage probabilities of the one-hot chain: stage `k` fires with
/// `p/(N - k·p)` provided no earlier stage fired.
pub fn one_hot_stages(n: usize, p: f64) -> Result<Vec<f64>, CircuitError> {
    if n == 0 {
        return Err(CircuitError::NoTargets("ONE_HOT_X"));
    }
    (0..n)
        .map(|k| {
            let q = p / (n as f64 - k as f64 * p);
            if (0.0..=1.0).contains(&q) && p >= 0.0 {
                Ok(q)
            } else {
                Err(CircuitError::OneHot { n, p })
            }
        })
        .collect()
}

pub fn one_hot_x_channel(qubits: &[usize], p: f64) -> Result<Vec<Instruction>, CircuitError> {
    one_hot_stages(qubits.len(), p)?;
    Ok(if qubits.len() == 1 {
        vec![Instruction::noise(Channel::XError, p, qubits)]
    } else {
        vec![Instruction::noise(Channel::OneHotX, p, qubits)]
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    instructions: Vec<Instruction>,
    qubit_count: usize,
    measurement_count: usize,
    detector_count: usize,
    observable_count: usize,
}

impl Circuit {
    pub fn new(instructions: Vec<Instruction>) -> Result<Self, CircuitError> {
        Self::with_qubits(0, instructions)
    }

    /// Validates and counts. `min_qubits` pads the qubit count for idle qubits.
    pub fn with_qubits(min_qubits: usize, instructions: Vec<Instruction>) -> Result<Self, CircuitError> {
        let mut qubits = min_qubits;
        let mut meas = 0usize;
        let mut dets = 0usize;
        let mut obs = 0usize;
        for (line, inst) in instructions.iter().enumerate() {
            if let Some(&m) = inst.targets().iter().max() {
                qubits = qubits.max(m + 1);
            }
            match inst {
                Instruction::Gate { gate, targets } => {
                    if gate.is_two_qubit() && targets.len() % 2 == 1 {
                        return Err(CircuitError::OddTargets { gate: gate.name(), count: targets.len() });
                    }
                    if *gate == Gate::MeasureZ {
                        meas += targets.len();
                    }
                }
                Instruction::Noise { channel, p, targets } => {
                    check_probability(channel.name(), *p)?;
                    match channel {
                        Channel::Depol2 if targets.len() % 2 == 1 => {
                            return Err(CircuitError::OddTargets { gate: "DEPOL2", count: targets.len() })
                        }
                        Channel::OneHotX => {
                            one_hot_stages(targets.len(), *p)?;
                        }
                        _ => {}
                    }
                }
                Instruction::Detector { lookback } | Instruction::Observable { lookback, .. } => {
                    for &k in lookback {
                        if k == 0 || k > meas {
                            return Err(CircuitError::Lookback { line, lookback: k, available: meas });
                        }
                    }
                    match inst {
                        Instruction::Detector { .. } => dets += 1,
                        Instruction::Observable { id, .. } => obs = obs.max(id + 1),
                        _ => unreachable!(),
                    }
                }
                Instruction::Tick => {}
            }
        }
        Ok(Circuit {
            instructions,
            qubit_count: qubits,
            measurement_count: meas,
            detector_count: dets,
            observable_count: obs,
        })
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn measurement_count(&self) -> usize {
        self.measurement_count
    }

    pub fn detector_count(&self) -> usize {
        self.detector_count
    }

    pub fn observable_count(&self) -> usize {
        self.observable_count
    }

    /// Same circuit with every noise channel removed.
    pub fn without_noise(&self) -> Circuit {
        let instructions =
            self.instructions.iter().filter(|i| !matches!(i, Instruction::Noise { .. })).cloned().collect();
        Circuit { instructions, ..self.clone() }
    }

    fn drop_detectors(&self, drop: &[usize]) -> Circuit {
        let mut idx = 0;
        let mut instructions = Vec::with_capacity(self.instructions.len());
        for inst in &self.instructions {
            if let Instruction::Detector { .. } = inst {
                idx += 1;
                if drop.binary_search(&(idx - 1)).is_ok() {
                    continue;
                }
            }
            instructions.push(inst.clone());
        }
        Circuit { instructions, detector_count: self.detector_count - drop.len(), ..self.clone() }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |xs: &[usize], f: &mut fmt::Formatter<'_>| -> fmt::Result {
            for x in xs {
                write!(f, " {x}")?;
            }
            Ok(())
        };
        let recs = |xs: &[usize], f: &mut fmt::Formatter<'_>| -> fmt::Result {
            for x in xs {
                write!(f, " rec[-{x}]")?;
            }
            Ok(())
        };
        match self {
            Instruction::Gate { gate, targets } => {
                f.write_str(gate.name())?;
                join(targets, f)
            }
            Instruction::Noise { channel, p, targets } => {
                write!(f, "{}({p})", channel.name())?;
                join(targets, f)
            }
            Instruction::Detector { lookback } => {
                f.write_str("DETECTOR")?;
                recs(lookback, f)
            }
            Instruction::Observable { id, lookback } => {
                write!(f, "OBSERVABLE_INCLUDE({id})")?;
                recs(lookback, f)
            }
            Instruction::Tick => f.write_str("TICK"),
        }
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for inst in &self.instructions {
            writeln!(f, "{inst}")?;
        }
        Ok(())
    }
}

fn parse_line(line: usize, text: &str) -> Result<Instruction, CircuitError> {
    let err = |msg: String| CircuitError::Parse { line, msg };
    let mut words = text.split_whitespace();
    let head = words.next().ok_or_else(|| err("empty".into()))?;
    let (name, arg) = match head.find('(') {
        Some(i) if head.ends_with(')') => (&head[..i], Some(&head[i + 1..head.len() - 1])),
        Some(_) => return Err(err(format!("bad argument in {head:?}"))),
        None => (head, None),
    };
    let rest: Vec<&str> = words.collect();
    let qubits = || -> Result<Vec<usize>, CircuitError> {
        rest.iter().map(|w| w.parse().map_err(|_| err(format!("bad target {w:?}")))).collect()
    };
    let recs = || -> Result<Vec<usize>, CircuitError> {
        rest.iter()
            .map(|w| {
                w.strip_prefix("rec[-")
                    .and_then(|s| s.strip_suffix(']'))
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(format!("bad record reference {w:?}")))
            })
            .collect()
    };
    let prob = || -> Result<f64, CircuitError> {
        arg.ok_or_else(|| err(format!("{name} needs a probability")))?
            .parse()
            .map_err(|_| err(format!("bad probability in {head:?}")))
    };
    let gate = match name {
        "RESET_Z" => Some(Gate::ResetZ),
        "RESET_X" => Some(Gate::ResetX),
        "H" => Some(Gate::H),
        "CNOT" => Some(Gate::Cnot),
        "CZ" => Some(Gate::Cz),
        "PAULI_X" => Some(Gate::X),
        "PAULI_Y" => Some(Gate::Y),
        "PAULI_Z" => Some(Gate::Z),
        "MEASURE_Z" => Some(Gate::MeasureZ),
        "CAT_PREP" => Some(Gate::CatPrep),
        _ => None,
    };
    if let Some(gate) = gate {
        return Ok(Instruction::Gate { gate, targets: qubits()? });
    }
    let channel = match name {
        "DEPOL1" => Some(Channel::Depol1),
        "DEPOL2" => Some(Channel::Depol2),
        "X_ERROR" => Some(Channel::XError),
        "MEAS_FLIP" => Some(Channel::MeasFlip),
        "ONE_HOT_X" => Some(Channel::OneHotX),
        _ => None,
    };
    if let Some(channel) = channel {
        return Ok(Instruction::Noise { channel, p: prob()?, targets: qubits()? });
    }
    match name {
        "DETECTOR" => Ok(Instruction::Detector { lookback: recs()? }),
        "OBSERVABLE_INCLUDE" => {
            let id = arg.and_then(|a| a.parse().ok()).ok_or_else(|| err("bad observable id".into()))?;
            Ok(Instruction::Observable { id, lookback: recs()? })
        }
        "TICK" => Ok(Instruction::Tick),
        other => Err(err(format!("unknown instruction {other:?}"))),
    }
}

impl FromStr for Circuit {
    type Err = CircuitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut instructions = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let text = raw.split('#').next().unwrap_or("").trim();
            if !text.is_empty() {
                instructions.push(parse_line(i + 1, text)?);
            }
        }
        Circuit::new(instructions)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorKind {
    /// Syndrome compared with the previous round.
    Time,
    /// Primary vs redundant ancilla comparison; `Some(j)` in per-qubit mode.
    Local(Option<usize>),
    /// Last syndrome compared with the final data measurement.
    Final,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorLabel {
    pub check_kind: CheckType,
    pub check: usize,
    pub round: usize,
    pub kind: DetectorKind,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExperimentOptions {
    /// One local detector per non-root ancilla pair instead of one parity detector.
    pub per_qubit_local: bool,
}

#[derive(Clone, Debug)]
pub struct MemoryExperiment {
    pub circuit: Circuit,
    pub labels: Vec<DetectorLabel>,
    /// Detectors dropped because they are random in the noiseless circuit.
    pub pruned: Vec<DetectorLabel>,
}

/// Ancilla block of one check.
#[derive(Clone, Debug)]
struct CheckBlock {
    kind: CheckType,
    support: Vec<usize>,
    primary: Vec<usize>,
    redundant: Vec<usize>,
}

impl CheckBlock {
    fn new(code: &CssCode, kind: CheckType, index: usize, base: usize) -> Result<Self, CircuitError> {
        let m = code.checks(kind);
        if index >= m.rows() {
            return Err(CircuitError::NoSuchCheck { kind, index });
        }
        let mut support = m.row(index).to_vec();
        support.sort_unstable_by(|a, b| b.cmp(a));
        let w = support.len();
        Ok(CheckBlock {
            kind,
            support,
            primary: (base..base + w).collect(),
            redundant: (base + w..base + 2 * w).collect(),
        })
    }

    fn root(set: &[usize]) -> usize {
        *set.last().expect("nonempty check")
    }

    fn ladder(set: &[usize], reverse: bool) -> Vec<usize> {
        let root = Self::root(set);
        let leaves = &set[..set.len() - 1];
        let mut pairs = Vec::with_capacity(2 * leaves.len());
        let mut push = |q: usize| pairs.extend([root, q]);
        if reverse {
            leaves.iter().rev().for_each(|&q| push(q));
        } else {
            leaves.iter().for_each(|&q| push(q));
        }
        pairs
    }

    fn emit(&self, noise: &NoiseModel, out: &mut Vec<Instruction>) -> Result<(), CircuitError> {
        let both: Vec<usize> = self.primary.iter().chain(&self.redundant).copied().collect();
        let noisy = |out: &mut Vec<Instruction>, ch: Channel, p: f64, t: Vec<usize>| {
            if p > 0.0 {
                out.push(Instruction::noise(ch, p, t));
            }
        };
        let cavity = |out: &mut Vec<Instruction>| -> Result<(), CircuitError> {
            if noise.p_cavity > 0.0 {
                out.extend(one_hot_x_channel(&self.primary, noise.p_cavity)?);
            }
            Ok(())
        };
        let pr = Self::root(&self.primary);
        let rr = Self::root(&self.redundant);

        out.push(Instruction::gate(Gate::ResetZ, both.clone()));
        noisy(out, Channel::XError, noise.p_in, both.clone());

        out.push(Instruction::gate(Gate::CatPrep, self.primary.clone()));
        out.push(Instruction::gate(Gate::H, [pr]));
        noisy(out, Channel::Depol1, noise.p1, vec![pr]);
        if self.primary.len() > 1 {
            out.push(Instruction::gate(Gate::Cnot, Self::ladder(&self.primary, false)));
        }
        cavity(out)?;

        let coupling = match self.kind {
            CheckType::X => Gate::Cnot,
            CheckType::Z => Gate::Cz,
        };
        let pairs: Vec<usize> = self.primary.iter().zip(&self.support).flat_map(|(&a, &s)| [a, s]).collect();
        out.push(Instruction::gate(coupling, pairs.clone()));
        noisy(out, Channel::Depol2, noise.p2, pairs);

        let copy: Vec<usize> = self.primary.iter().zip(&self.redundant).flat_map(|(&a, &r)| [a, r]).collect();
        out.push(Instruction::gate(Gate::Cnot, copy.clone()));
        noisy(out, Channel::Depol2, noise.p2, copy);

        cavity(out)?;
        for (set, root) in [(&self.primary, pr), (&self.redundant, rr)] {
            if set.len() > 1 {
                out.push(Instruction::gate(Gate::Cnot, Self::ladder(set, true)));
            }
            out.push(Instruction::gate(Gate::H, [root]));
            noisy(out, Channel::Depol1, noise.p1, vec![root]);
        }

        noisy(out, Channel::MeasFlip, noise.p_meas, both.clone());
        out.push(Instruction::gate(Gate::MeasureZ, both));
        Ok(())
    }
}

/// One DA round for a single check, with data on qubits `0..n` and the check's
/// ancilla block on `n..n+2w`.
pub fn build_da_round(
    code: &CssCode,
    kind: CheckType,
    index: usize,
    noise: &NoiseModel,
) -> Result<Vec<Instruction>, CircuitError> {
    noise.validate()?;
    let block = CheckBlock::new(code, kind, index, code.n)?;
    let mut out = Vec::new();
    block.emit(noise, &mut out)?;
    Ok(out)
}

pub fn build_memory_experiment(
    code: &CssCode,
    rounds: usize,
    noise: &NoiseModel,
    schedule: &Schedule,
) -> Result<Circuit, CircuitError> {
    Ok(build_memory_experiment_with(code, rounds, noise, schedule, ExperimentOptions::default())?.circuit)
}

pub fn build_memory_experiment_with(
    code: &CssCode,
    rounds: usize,
    noise: &NoiseModel,
    schedule: &Schedule,
    opts: ExperimentOptions,
) -> Result<MemoryExperiment, CircuitError> {
    if rounds == 0 {
        return Err(CircuitError::NoRounds);
    }
    noise.validate()?;
    let n = code.n;
    let mut blocks: Vec<Vec<CheckBlock>> = vec![Vec::new(), Vec::new()];
    let mut base = n;
    for (slot, kind) in [(0, CheckType::Z), (1, CheckType::X)] {
        for index in 0..code.checks(kind).rows() {
            let b = CheckBlock::new(code, kind, index, base)?;
            base += 2 * b.support.len();
            blocks[slot].push(b);
        }
    }
    let block = |kind: CheckType, i: usize| match kind {
        CheckType::Z => &blocks[0][i],
        CheckType::X => &blocks[1][i],
    };

    let data: Vec<usize> = (0..n).collect();
    let mut out = vec![Instruction::gate(Gate::ResetZ, data.clone())];
    if noise.p_in > 0.0 {
        out.push(Instruction::noise(Channel::XError, noise.p_in, data.clone()));
    }
    out.push(Instruction::Tick);

    let mut meas = 0usize;
    let mut labels = Vec::new();
    // absolute records of the two root measurements from the previous round
    let mut last: std::collections::HashMap<(CheckType, usize), [usize; 2]> = Default::default();
    let rec = |meas: usize, abs: &[usize]| -> Vec<usize> { abs.iter().map(|&a| meas - a).collect() };

    for round in 0..rounds {
        for step in &schedule.timesteps {
            for sc in &step.checks {
                let b = block(sc.kind, sc.index);
                b.emit(noise, &mut out)?;
                let w = b.support.len();
                let start = meas;
                meas += 2 * w;
                let roots = [start + w - 1, start + 2 * w - 1];
                let mut refs = roots.to_vec();
                if let Some(prev) = last.insert((sc.kind, sc.index), roots) {
                    refs.extend(prev);
                }
                out.push(Instruction::Detector { lookback: rec(meas, &refs) });
                labels.push(DetectorLabel { check_kind: sc.kind, check: sc.index, round, kind: DetectorKind::Time });
                if w > 1 {
                    let pair = |j: usize| [start + j, start + w + j];
                    if opts.per_qubit_local {
                        for j in 0..w - 1 {
                            out.push(Instruction::Detector { lookback: rec(meas, &pair(j)) });
                            labels.push(DetectorLabel {
                                check_kind: sc.kind,
                                check: sc.index,
                                round,
                                kind: DetectorKind::Local(Some(j)),
                            });
                        }
                    } else {
                        let all: Vec<usize> = (0..w - 1).flat_map(pair).collect();
                        out.push(Instruction::Detector { lookback: rec(meas, &all) });
                        labels.push(DetectorLabel {
                            check_kind: sc.kind,
                            check: sc.index,
                            round,
                            kind: DetectorKind::Local(None),
                        });
                    }
                }
            }
            if noise.p_wait > 0.0 {
                out.push(Instruction::noise(Channel::Depol1, noise.p_wait, data.clone()));
            }
            out.push(Instruction::Tick);
        }
    }

    if noise.p_meas > 0.0 {
        out.push(Instruction::noise(Channel::MeasFlip, noise.p_meas, data.clone()));
    }
    out.push(Instruction::gate(Gate::MeasureZ, data));
    let data_start = meas;
    meas += n;
    for (i, b) in blocks[0].iter().enumerate() {
        let mut refs: Vec<usize> = b.support.iter().map(|&q| data_start + q).collect();
        if let Some(prev) = last.get(&(CheckType::Z, i)) {
            refs.extend(prev);
        }
        out.push(Instruction::Detector { lookback: rec(meas, &refs) });
        labels.push(DetectorLabel { check_kind: CheckType::Z, check: i, round: rounds, kind: DetectorKind::Final });
    }
    let logicals = logical_operators(code)?;
    for (id, row) in logicals.logical_z.row_supports().iter().enumerate() {
        let refs: Vec<usize> = row.iter().map(|&q| data_start + q).collect();
        out.push(Instruction::Observable { id, lookback: rec(meas, &refs) });
    }

    let circuit = Circuit::with_qubits(base, out)?;
    let (random_dets, random_obs) = crate::sim::nondeterministic_targets(&circuit);
    if !random_obs.is_empty() {
        return Err(CircuitError::RandomObservable(random_obs));
    }
    let pruned: Vec<DetectorLabel> = random_dets.iter().map(|&d| labels[d]).collect();
    for &d in random_dets.iter().rev() {
        labels.remove(d);
    }
    Ok(MemoryExperiment { circuit: circuit.drop_detectors(&random_dets), labels, pruned })
}
