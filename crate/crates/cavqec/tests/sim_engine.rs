mod common;

use cavqec::circuit::{Circuit, Gate, Instruction};
use cavqec::sim::*;
use proptest::prelude::*;

fn pauli(c: u8) -> Pauli {
    [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][c as usize]
}

proptest! {
    #[test]
    fn conjugation_round_trips(a in 0u8..4, b in 0u8..4, which in 0usize..4) {
        let inst = match which {
            0 => Instruction::gate(Gate::Cnot, [0, 1]),
            1 => Instruction::gate(Gate::Cnot, [1, 0]),
            2 => Instruction::gate(Gate::Cz, [0, 1]),
            _ => Instruction::gate(Gate::H, [0, 1]),
        };
        let orig = PauliString::from_paulis(2, &[(0, pauli(a)), (1, pauli(b))]);
        let mut p = orig.clone();
        propagate_pauli(&mut p, &inst).unwrap();
        propagate_pauli(&mut p, &inst).unwrap();
        prop_assert_eq!(p, orig);
    }
}

#[test]
fn noiseless_circuit_oracle_is_a_point_mass() {
    let c: Circuit = "RESET_Z 0 1\nCNOT 0 1\nMEASURE_Z 0 1\nDETECTOR rec[-1] rec[-2]".parse().unwrap();
    let o = enumerate_oracle(&c).unwrap();
    assert_eq!(o.probabilities.len(), 1);
    assert_eq!(o.probabilities.get(&vec![false]), Some(&1.0));
    let c: Circuit = "RESET_Z 0\nX_ERROR(0.2) 0\nMEASURE_Z 0\nDETECTOR rec[-1]".parse().unwrap();
    let o = enumerate_oracle(&c).unwrap();
    assert!((o.probabilities[&vec![false]] - 0.8).abs() < 1e-15);
    assert!((o.probabilities[&vec![true]] - 0.2).abs() < 1e-15);
}

#[test]
fn oracle_rejects_large_circuits() {
    let c: Circuit = "RESET_Z 0 1\nDEPOL2(0.1) 0 1\nDEPOL1(0.1) 0 1\nMEASURE_Z 0 1\nDETECTOR rec[-1]".parse().unwrap();
    assert_eq!(enumerate_oracle(&c), Err(SimError::TooManyFaults(21)));
}

#[test]
fn three_channel_toy_matches_oracle() {
    let c: Circuit = "RESET_Z 0 1 2\nX_ERROR(0.1) 0\nX_ERROR(0.2) 1\nCNOT 0 1 1 2\nMEAS_FLIP(0.05) 2\nMEASURE_Z 0 1 2\n\
                      DETECTOR rec[-3]\nDETECTOR rec[-3] rec[-2]\nDETECTOR rec[-1]\nOBSERVABLE_INCLUDE(0) rec[-1]"
        .parse()
        .unwrap();
    let exact = enumerate_oracle(&c).unwrap();
    assert!(exact.probabilities.len() <= 8);
    let batch = sample_frames(&c, 1_000_000, 11).unwrap();
    assert!(common::chi2_sigma(&exact, &batch) < 3.0);
    let dem = build_dem(&c).unwrap();
    for (d, m) in dem.detector_marginals().iter().enumerate() {
        assert!((m - exact.marginal(d)).abs() < 1e-12);
    }
}

#[test]
fn dem_marginals_are_exact_on_random_circuits() {
    for seed in 0..40 {
        let c = common::random_small_circuit(seed, 20);
        let exact = enumerate_oracle(&c).unwrap();
        let dem = build_dem(&c).unwrap();
        for (d, m) in dem.detector_marginals().iter().enumerate() {
            assert!((m - exact.marginal(d)).abs() < 1e-12, "seed {seed} detector {d}: {m} vs {}", exact.marginal(d));
        }
    }
}

#[test]
fn dem_signatures_match_forward_propagation() {
    for seed in 100..130 {
        let c = common::random_small_circuit(seed, 20);
        let dem = build_dem(&c).unwrap();
        let d = dem.detector_count as u32;
        for ch in &dem.channels {
            for o in ch.outcomes.iter().filter(|o| o.meas_flip.is_none()) {
                let (dets, obs) = fault_signature(&c, ch.instruction, &o.paulis);
                let want: Vec<u32> = dets.iter().map(|&x| x as u32).chain(obs.iter().map(|&x| x as u32 + d)).collect();
                assert_eq!(o.flips, want, "seed {seed}, instruction {}", ch.instruction);
            }
        }
    }
}

#[test]
fn frame_linearity_on_random_fault_pairs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for seed in 200..230 {
        let c = common::random_small_circuit(seed, 20);
        let len = c.instructions().len();
        let nq = c.qubit_count();
        for _ in 0..5 {
            // two Pauli faults injected at random points, realised as explicit gates
            let picks: Vec<(usize, usize, Gate)> = (0..2)
                .map(|_| {
                    (rng.random_range(1..len), rng.random_range(0..nq), [Gate::X, Gate::Y, Gate::Z][rng.random_range(0..3)])
                })
                .collect();
            let mut sigs = Vec::new();
            for subset in [vec![0], vec![1], vec![0, 1]] {
                let mut inst = c.instructions().to_vec();
                let mut chosen: Vec<&(usize, usize, Gate)> = subset.iter().map(|&i| &picks[i]).collect();
                chosen.sort_by_key(|p| std::cmp::Reverse(p.0));
                for &&(at, q, g) in &chosen {
                    inst.insert(at, Instruction::gate(g, [q]));
                }
                inst.retain(|i| !matches!(i, Instruction::Noise { .. }));
                let faulty = Circuit::new(inst).unwrap();
                let b = sample_frames(&faulty, 1, 0).unwrap();
                sigs.push((b.fired_detectors(0), b.flipped_observables(0)));
            }
            let xor = |a: &Vec<usize>, b: &Vec<usize>| {
                let mut v: Vec<usize> =
                    a.iter().filter(|x| !b.contains(x)).chain(b.iter().filter(|x| !a.contains(x))).copied().collect();
                v.sort();
                v
            };
            assert_eq!(sigs[2].0, xor(&sigs[0].0, &sigs[1].0));
            assert_eq!(sigs[2].1, xor(&sigs[0].1, &sigs[1].1));
        }
    }
}

#[test]
fn sampling_is_reproducible_across_thread_counts() {
    let c = common::random_small_circuit(7, 20);
    let a = sample_frames(&c, 5000, 42).unwrap();
    let b = sample_frames(&c, 5000, 42).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c3 = pool.install(|| sample_frames(&c, 5000, 42).unwrap());
    assert_eq!(a, c3);
    assert_ne!(a, sample_frames(&c, 5000, 43).unwrap());
}
