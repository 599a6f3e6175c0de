#![allow(dead_code)]

use cavqec::circuit::Circuit;
use cavqec::gf2::{BitMatrix, BitVector};
use cavqec::sim::{nondeterministic_targets, OracleDistribution, SampleBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random small noisy Clifford circuit with at most `max_faults` elementary
/// faults and only deterministic detectors and observables.
pub fn random_small_circuit(seed: u64, max_faults: usize) -> Circuit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(2..=4usize);
        let mut lines = vec![format!("RESET_Z {}", (0..n).map(|q| q.to_string()).collect::<Vec<_>>().join(" "))];
        let mut faults = 0;
        let mut measured = 0;
        for _ in 0..rng.random_range(4..12) {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let p: f64 = rng.random_range(0.02..0.3);
            match rng.random_range(0..9) {
                0 => lines.push(format!("H {a}")),
                1 | 2 => lines.push(format!("CNOT {a} {b}")),
                3 => lines.push(format!("CZ {a} {b}")),
                4 if faults < max_faults => {
                    faults += 1;
                    lines.push(format!("X_ERROR({p}) {a}"));
                }
                5 if faults + 3 <= max_faults => {
                    faults += 3;
                    lines.push(format!("DEPOL1({p}) {a}"));
                }
                6 if faults < max_faults => {
                    faults += 1;
                    lines.push(format!("MEAS_FLIP({p}) {a}"));
                }
                7 if faults + 2 <= max_faults => {
                    faults += 2;
                    lines.push(format!("ONE_HOT_X({p}) {a} {b}"));
                }
                8 => {
                    lines.push(format!("MEASURE_Z {a}"));
                    measured += 1;
                }
                _ => {}
            }
        }
        lines.push(format!("MEASURE_Z {}", (0..n).map(|q| q.to_string()).collect::<Vec<_>>().join(" ")));
        measured += n;
        let mut dets = Vec::new();
        for i in 1..=measured {
            dets.push(vec![i]);
            for j in i + 1..=measured {
                dets.push(vec![i, j]);
            }
        }
        let body = lines.join("\n");
        let with_dets = |ds: &[Vec<usize>], obs: Option<&Vec<usize>>| {
            let mut s = body.clone();
            for d in ds {
                s.push_str("\nDETECTOR");
                d.iter().for_each(|k| s.push_str(&format!(" rec[-{k}]")));
            }
            if let Some(o) = obs {
                s.push_str("\nOBSERVABLE_INCLUDE(0)");
                o.iter().for_each(|k| s.push_str(&format!(" rec[-{k}]")));
            }
            s
        };
        let probe: Circuit = with_dets(&dets, None).parse().unwrap();
        let (random, _) = nondeterministic_targets(&probe);
        let mut good: Vec<Vec<usize>> =
            dets.into_iter().enumerate().filter(|(i, _)| !random.contains(i)).map(|(_, d)| d).collect();
        if good.len() < 2 || faults == 0 {
            continue;
        }
        // the last deterministic parity doubles as the observable
        let obs = good.pop().unwrap();
        good.truncate(5);
        let c: Circuit = with_dets(&good, Some(&obs)).parse().unwrap();
        assert_eq!(nondeterministic_targets(&c), (vec![], vec![]));
        return c;
    }
}

/// Pearson statistic of sampled outcomes against the exact distribution,
/// expressed in standard deviations: (chi2 - dof) / sqrt(2 dof). Outcomes with
/// small expected counts are pooled. Returns +inf if an impossible outcome
/// was sampled.
pub fn chi2_sigma(exact: &OracleDistribution, batch: &SampleBatch) -> f64 {
    let width = exact.detector_count + exact.observable_count;
    let mut counts: std::collections::BTreeMap<Vec<bool>, f64> = Default::default();
    for s in 0..batch.shots {
        let key: Vec<bool> = (0..width)
            .map(|i| if i < exact.detector_count { batch.detector(s, i) } else { batch.observable(s, i - exact.detector_count) })
            .collect();
        *counts.entry(key).or_default() += 1.0;
    }
    let n = batch.shots as f64;
    for k in counts.keys() {
        if exact.probabilities.get(k).copied().unwrap_or(0.0) <= 0.0 {
            return f64::INFINITY;
        }
    }
    let (mut chi2, mut bins) = (0.0, 0usize);
    let (mut pool_e, mut pool_o) = (0.0, 0.0);
    for (k, &p) in &exact.probabilities {
        let e = p * n;
        let o = counts.get(k).copied().unwrap_or(0.0);
        if e < 10.0 {
            pool_e += e;
            pool_o += o;
        } else {
            chi2 += (o - e) * (o - e) / e;
            bins += 1;
        }
    }
    if pool_e > 0.0 {
        chi2 += (pool_o - pool_e) * (pool_o - pool_e) / pool_e.max(1.0);
        bins += 1;
    }
    if bins <= 1 {
        return 0.0;
    }
    let dof = (bins - 1) as f64;
    (chi2 - dof) / (2.0 * dof).sqrt()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> BitMatrix {
    let rows: Vec<Vec<usize>> = (0..rows).map(|_| (0..cols).filter(|_| rng.random_bool(density)).collect()).collect();
    BitMatrix::from_rows(cols, rows).unwrap()
}

pub fn random_error(rng: &mut ChaCha8Rng, cols: usize, p: f64) -> BitVector {
    BitVector::from_bools(&(0..cols).map(|_| rng.random_bool(p)).collect::<Vec<_>>())
}

/// Random bipartite tree with `vars` variable nodes.
pub fn random_tree_code(rng: &mut ChaCha8Rng, vars: usize) -> BitMatrix {
    // nodes: (is_check, index)
    let mut nodes = vec![(false, 0usize)];
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut nv = 1;
    while nv < vars {
        let (is_check, idx) = nodes[rng.random_range(0..nodes.len())];
        if is_check {
            rows[idx].push(nv);
            nodes.push((false, nv));
            nv += 1;
        } else {
            rows.push(vec![idx]);
            nodes.push((true, rows.len() - 1));
        }
    }
    BitMatrix::from_rows(vars, rows).unwrap()
}

pub fn brute_force(h: &BitMatrix, priors: &[f64], s: &BitVector) -> (Vec<f64>, Vec<bool>) {
    let n = h.cols();
    let mut marg = vec![0.0; n];
    let mut total = 0.0;
    let (mut best, mut best_p) = (vec![false; n], -1.0);
    for mask in 0u32..1 << n {
        let bits: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        if h.mul_vec(&BitVector::from_bools(&bits)).unwrap() != *s {
            continue;
        }
        let p: f64 = (0..n).map(|i| if bits[i] { priors[i] } else { 1.0 - priors[i] }).product();
        total += p;
        for i in 0..n {
            if bits[i] {
                marg[i] += p;
            }
        }
        if p > best_p {
            best_p = p;
            best = bits;
        }
    }
    (marg.iter().map(|m| m / total).collect(), best)
}
