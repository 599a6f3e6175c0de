use cavqec::circuit::*;
use cavqec::code::*;
use cavqec::schedule::{diagonal_schedule, greedy_schedule};
use cavqec::sim::{build_dem, fault_signature, nondeterministic_targets, sample_frames, Pauli};

fn family(coeffs: &[u8], lift: usize) -> CssCode {
    hgp_from_polynomial(&CheckPolynomial::from_coefficients(coeffs).unwrap(), lift, Boundary::Periodic).unwrap()
}

fn surface41() -> CssCode {
    hgp_from_polynomial(&CheckPolynomial::new(&[0, 1]).unwrap(), 5, Boundary::Open).unwrap()
}

fn memory(code: &CssCode, rounds: usize, noise: &NoiseModel, opts: ExperimentOptions) -> MemoryExperiment {
    let schedule = match layout(code) {
        Ok(l) => diagonal_schedule(code, &l),
        Err(_) => greedy_schedule(code),
    };
    build_memory_experiment_with(code, rounds, noise, &schedule, opts).unwrap()
}

/// First ancilla qubit of a check's block, Z-checks first.
fn block_base(code: &CssCode, kind: CheckType, index: usize) -> usize {
    let mut base = code.n;
    for k in [CheckType::Z, CheckType::X] {
        for i in 0..code.checks(k).rows() {
            if (k, i) == (kind, index) {
                return base;
            }
            base += 2 * code.checks(k).row(i).len();
        }
    }
    unreachable!()
}

#[test]
fn noiseless_memory_experiments_are_silent() {
    for code in [steane_code(), surface41(), family(&[1, 1, 1], 6)] {
        let exp = memory(&code, 3, &NoiseModel::noiseless(), ExperimentOptions::default());
        let c = &exp.circuit;
        assert!(c.detector_count() > 0);
        assert_eq!(c.observable_count(), logical_operators(&code).unwrap().k());
        let b = sample_frames(c, 1000, 3).unwrap();
        assert!((0..1000).all(|s| b.fired_detectors(s).is_empty() && b.flipped_observables(s).is_empty()));
        // only the first-round X-check time detectors are random
        assert_eq!(exp.pruned.len(), code.g_x.rows());
        assert!(exp.pruned.iter().all(|l| l.check_kind == CheckType::X && l.round == 0 && l.kind == DetectorKind::Time));
        assert_eq!(exp.labels.len(), c.detector_count());
    }
}

#[test]
fn rounds_must_be_positive() {
    let code = surface41();
    let s = diagonal_schedule(&code, &layout(&code).unwrap());
    assert_eq!(build_memory_experiment(&code, 0, &NoiseModel::noiseless(), &s), Err(CircuitError::NoRounds));
}

#[test]
fn text_form_reparses_to_the_same_circuit() {
    let code = surface41();
    let noise = make_noise_model(ModelKind::Custom, 1e-3, 3.0).unwrap();
    let exp = memory(&code, 2, &noise, ExperimentOptions::default());
    let back: Circuit = exp.circuit.to_string().parse().unwrap();
    assert_eq!(back.instructions(), exp.circuit.instructions());
}

#[test]
fn each_check_round_has_two_cavity_channels() {
    let code = family(&[1, 1, 1], 6);
    let noise = make_noise_model(ModelKind::Agnostic, 1e-3, 1.0).unwrap();
    let round = build_da_round(&code, CheckType::Z, 4, &noise).unwrap();
    let one_hot: Vec<&Instruction> =
        round.iter().filter(|i| matches!(i, Instruction::Noise { channel: Channel::OneHotX, .. })).collect();
    assert_eq!(one_hot.len(), 2);
    let exp = memory(&code, 2, &noise, ExperimentOptions::default());
    let total = exp
        .circuit
        .instructions()
        .iter()
        .filter(|i| matches!(i, Instruction::Noise { channel: Channel::OneHotX, .. }))
        .count();
    assert_eq!(total, 2 * 2 * (code.g_x.rows() + code.g_z.rows()));
}

/// DA round for one check, followed by a detector on every ancilla measurement
/// and on the root pair.
fn probe_round(code: &CssCode, kind: CheckType, index: usize, body: Vec<Instruction>) -> (Circuit, usize) {
    let w = code.checks(kind).row(index).len();
    let mut inst = vec![Instruction::gate(Gate::ResetZ, (0..code.n).collect::<Vec<_>>())];
    inst.extend(body);
    for j in 0..w - 1 {
        inst.push(Instruction::Detector { lookback: vec![2 * w - j] });
        inst.push(Instruction::Detector { lookback: vec![w - j] });
    }
    inst.push(Instruction::Detector { lookback: vec![w + 1, 1] });
    (Circuit::new(inst).unwrap(), w)
}

#[test]
fn noiseless_z_round_gives_deterministic_ancillas() {
    // data in |0...0>, a +1 eigenstate of every Z-check
    let code = family(&[1, 1, 1], 6);
    let body = build_da_round(&code, CheckType::Z, 0, &NoiseModel::noiseless()).unwrap();
    let (c, w) = probe_round(&code, CheckType::Z, 0, body);
    assert_eq!(w, 6);
    assert_eq!(nondeterministic_targets(&c), (vec![], vec![]));
    let b = sample_frames(&c, 500, 1).unwrap();
    assert!((0..500).all(|s| b.fired_detectors(s).is_empty()));
}

/// Round for one check, then the data measured, with a detector on every
/// record (random ones included; only flips are inspected).
fn flip_probe(code: &CssCode, kind: CheckType, index: usize, noise: &NoiseModel) -> (Circuit, usize) {
    let mut inst = vec![Instruction::gate(Gate::ResetZ, (0..code.n).collect::<Vec<_>>())];
    inst.extend(build_da_round(code, kind, index, noise).unwrap());
    inst.push(Instruction::gate(Gate::MeasureZ, (0..code.n).collect::<Vec<_>>()));
    let total = code.n + 2 * code.checks(kind).row(index).len();
    for k in (1..=total).rev() {
        inst.push(Instruction::Detector { lookback: vec![k] });
    }
    let c = Circuit::new(inst).unwrap();
    let encode_hot =
        c.instructions().iter().position(|i| matches!(i, Instruction::Noise { channel: Channel::OneHotX, .. })).unwrap();
    (c, encode_hot)
}

#[test]
fn encode_cavity_fault_on_an_x_check() {
    let code = family(&[1, 1, 1], 6);
    let noise = NoiseModel { p_cavity: 1.0, ..NoiseModel::noiseless() };
    let (c, at) = flip_probe(&code, CheckType::X, 2, &noise);
    let Instruction::Noise { targets, .. } = &c.instructions()[at] else { unreachable!() };
    let w = targets.len();
    assert_eq!(w, 6);
    for (j, &a) in targets.iter().enumerate() {
        let (fired, _) = fault_signature(&c, at, &[(a, Pauli::X)]);
        // records: primary 0..w, redundant w..2w, data after
        let primary: Vec<usize> = fired.iter().copied().filter(|&d| d < w).collect();
        let redundant: Vec<usize> = fired.iter().filter(|&&d| d >= w && d < 2 * w).map(|&d| d - w).collect();
        let data: Vec<usize> = fired.iter().filter(|&&d| d >= 2 * w).map(|&d| d - 2 * w).collect();
        assert_eq!(data.len(), 1, "ancilla {j}");
        assert!(code.g_x.row(2).contains(&data[0]));
        assert_eq!(primary, redundant);
        if j < w - 1 {
            assert_eq!(primary, vec![j]);
        } else {
            // the root: same as a flip on every leaf
            assert_eq!(primary, (0..w - 1).collect::<Vec<_>>());
        }
    }
}

#[test]
fn steane_encode_fault_on_first_ancilla_hits_qubit_seven() {
    let code = steane_code();
    let noise = NoiseModel { p_cavity: 0.1, ..NoiseModel::noiseless() };
    let (c, at) = flip_probe(&code, CheckType::X, 0, &noise);
    // primary ancilla 1 is qubit 7, right after the encoder
    let (fired, _) = fault_signature(&c, at, &[(7, Pauli::X)]);
    // records a1..a4, r1..r4, d1..d7: pattern (-1,+1,+1,+1) on both sets, data qubit 7 flipped
    assert_eq!(fired, vec![0, 4, 14]);
}

#[test]
fn data_x_error_fires_incident_z_checks_next_round() {
    let code = family(&[1, 1, 1], 6);
    let l = layout(&code).unwrap();
    let schedule = diagonal_schedule(&code, &l);
    let exp = build_memory_experiment_with(&code, 3, &NoiseModel::noiseless(), &schedule, ExperimentOptions::default())
        .unwrap();
    let c = &exp.circuit;
    // the TICK closing round 0
    let ticks: Vec<usize> =
        c.instructions().iter().enumerate().filter(|(_, i)| matches!(i, Instruction::Tick)).map(|(k, _)| k).collect();
    let at = ticks[schedule.len()];
    for q in [0, 17, 40, 71] {
        let (dets, _) = fault_signature(c, at, &[(q, Pauli::X)]);
        let mut want: Vec<usize> = (0..exp.labels.len())
            .filter(|&d| {
                let lab = exp.labels[d];
                lab.kind == DetectorKind::Time
                    && lab.round == 1
                    && lab.check_kind == CheckType::Z
                    && code.g_z.row(lab.check).contains(&q)
            })
            .collect();
        want.sort();
        assert_eq!(dets, want, "qubit {q}");
        assert_eq!(want.len(), code.g_z.columns()[q].len());
    }
}

#[test]
fn ancilla_faults_after_coupling_stay_local() {
    let code = surface41();
    let noise = NoiseModel::noiseless();
    let l = layout(&code).unwrap();
    let schedule = diagonal_schedule(&code, &l);
    let exp = build_memory_experiment_with(&code, 3, &noise, &schedule, ExperimentOptions::default()).unwrap();
    let c = &exp.circuit;
    for (kind, index) in [(CheckType::X, 3), (CheckType::Z, 7)] {
        let base = block_base(&code, kind, index);
        let w = code.checks(kind).row(index).len();
        let gate = if kind == CheckType::X { Gate::Cnot } else { Gate::Cz };
        // coupling instruction of this check in the middle round
        let couplings: Vec<usize> = c
            .instructions()
            .iter()
            .enumerate()
            .filter(|(_, i)| matches!(i, Instruction::Gate { gate: g, targets } if *g == gate && targets[0] == base && targets[1] < code.n))
            .map(|(k, _)| k)
            .collect();
        assert_eq!(couplings.len(), 3);
        for j in 0..w {
            for p in [Pauli::X, Pauli::Y, Pauli::Z] {
                let (dets, obs) = fault_signature(c, couplings[1], &[(base + j, p)]);
                assert!(obs.is_empty());
                // a flipped syndrome bit also shows in the next time detector, like a measurement error
                for d in dets {
                    let lab = exp.labels[d];
                    assert_eq!((lab.check_kind, lab.check), (kind, index), "{p:?} on ancilla {j}");
                    assert!(lab.round == 1 || (lab.round == 2 && lab.kind == DetectorKind::Time));
                }
            }
        }
    }
}

#[test]
fn decode_cavity_faults_give_distinct_local_mechanisms() {
    let code = family(&[1, 1, 1], 6);
    let noise = NoiseModel { p_cavity: 0.01, ..NoiseModel::noiseless() };
    let exp = memory(&code, 2, &noise, ExperimentOptions { per_qubit_local: true });
    let dem = build_dem(&exp.circuit).unwrap();
    // one decode channel: a ONE_HOT_X followed by a CNOT ladder before the next
    // measurement; pick the first check's second channel
    let channels: Vec<_> =
        dem.channels.iter().filter(|ch| ch.outcomes.len() == 6 && ch.outcomes.iter().all(|o| o.paulis.len() == 1)).collect();
    let decode = channels[1];
    assert_eq!(decode.outcomes.len(), 6);
    let mut sigs: Vec<&Vec<u32>> = decode.outcomes.iter().map(|o| &o.flips).collect();
    for o in &decode.outcomes {
        assert!((o.probability - 0.01 / 6.0).abs() < 1e-15);
        assert!(!o.flips.is_empty());
        assert!(o.flips.iter().all(|&d| matches!(exp.labels[d as usize].kind, DetectorKind::Local(Some(_)))));
    }
    sigs.sort();
    sigs.dedup();
    assert_eq!(sigs.len(), 6);
}
