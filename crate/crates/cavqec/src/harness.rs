//! Monte-Carlo memory experiments, per-round conversion, threshold fits and
//! cavity cooperativity.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{build_memory_experiment, make_noise_model, CircuitError, ModelKind};
use crate::code::{hgp_from_polynomial, layout, Boundary, CheckPolynomial, CodeError, CssCode};
use crate::decoder::{DecodeError, Decoder, DecoderConfig};
use crate::schedule::{diagonal_schedule, greedy_schedule, Schedule};
use crate::sim::{build_dem, sample_frames, SimError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("point {code} at p={p} has no failures; raise shots or drop it")]
    ZeroFailures { code: String, p: f64 },
    #[error("fit needs at least 2 codes with 3 points each")]
    TooFewPoints,
    #[error("points do not bracket the crossing with p")]
    NotBracketing,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub code: String,
    pub d: usize,
    pub p: f64,
    pub m: f64,
    pub model: ModelKind,
    pub rounds: usize,
    pub shots: usize,
    pub failures: usize,
    pub per_round_rate: f64,
    pub std_error: f64,
}

impl DataPoint {
    /// Fills in the per-round rate and its binomial standard error.
    #[allow(clippy::too_many_arguments)]
    pub fn from_counts(code: &str, d: usize, p: f64, m: f64, model: ModelKind, rounds: usize, shots: usize, failures: usize) -> Self {
        assert!(failures <= shots && rounds >= 1);
        let total = if shots == 0 { 0.0 } else { failures as f64 / shots as f64 };
        let se_total = if shots == 0 { 0.0 } else { (total * (1.0 - total) / shots as f64).sqrt() };
        // delta method through per_round
        let slope = if total < 1.0 { (1.0 - total).powf(1.0 / rounds as f64 - 1.0) / rounds as f64 } else { 0.0 };
        DataPoint {
            code: code.to_string(),
            d,
            p,
            m,
            model,
            rounds,
            shots,
            failures,
            per_round_rate: per_round(total, rounds),
            std_error: se_total * slope,
        }
    }
}

/// Logical failure per round from the failure probability after `d` rounds.
pub fn per_round(p_total: f64, d: usize) -> f64 {
    assert!((0.0..=1.0).contains(&p_total) && d >= 1, "per_round needs P in [0,1] and d >= 1");
    -((-p_total).ln_1p() / d as f64).exp_m1()
}

/// Inverse of [`per_round`].
pub fn total_from_per_round(rate: f64, d: usize) -> f64 {
    -((-rate).ln_1p() * d as f64).exp_m1()
}

/// A code ready for memory experiments.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub id: String,
    pub code: CssCode,
    pub d: usize,
    pub rounds: usize,
    pub schedule: Schedule,
}

impl Experiment {
    /// Uses the diagonal schedule when the code has a grid layout, otherwise
    /// greedy packing. Runs `d` rounds.
    pub fn new(id: &str, code: CssCode, d: usize) -> Self {
        let schedule = match layout(&code) {
            Ok(l) => diagonal_schedule(&code, &l),
            Err(_) => greedy_schedule(&code),
        };
        Experiment { id: id.to_string(), code, d, rounds: d.max(1), schedule }
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = rounds;
        self
    }
}

/// Samples `shots` memory experiments and counts shots in which any
/// logical-Z observable is mispredicted.
pub fn run_point(
    exp: &Experiment,
    p: f64,
    m: f64,
    model: ModelKind,
    shots: usize,
    seed: u64,
    cfg: &DecoderConfig,
) -> Result<DataPoint, HarnessError> {
    let noise = make_noise_model(model, p, m)?;
    let circuit = build_memory_experiment(&exp.code, exp.rounds, &noise, &exp.schedule)?;
    let dem = build_dem(&circuit)?;
    let decoder = Decoder::new(&dem, *cfg)?;
    let batch = sample_frames(&circuit, shots, seed)?;
    let failed: Vec<bool> = (0..shots)
        .into_par_iter()
        .map(|s| {
            let r = decoder.decode(&batch.fired_detectors(s))?;
            Ok(r.predicted_observables.support() != batch.flipped_observables(s).as_slice())
        })
        .collect::<Result<_, DecodeError>>()?;
    let failures = failed.iter().filter(|&&f| f).count();
    Ok(DataPoint::from_counts(&exp.id, exp.d, p, m, model, exp.rounds, shots, failures))
}

/// C = (N·π / (m·p_th·√(2(1+2^-N))))².
pub fn cooperativity(n: usize, m: f64, p_th: f64) -> f64 {
    let n_f = n as f64;
    let root = (2.0 * (1.0 + (-n_f).exp2())).sqrt();
    (n_f * PI / (m * p_th * root)).powi(2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub a: f64,
    pub b: f64,
    pub p_th: f64,
    pub amplitude_err: f64,
    pub a_err: f64,
    pub b_err: f64,
    pub p_th_err: f64,
    /// Weighted sum of squared log residuals.
    pub residual: f64,
    pub fixed_exponents: bool,
}

/// Derivative-free simplex minimisation.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = (0..=n)
        .map(|i| {
            let mut x = x0.to_vec();
            if i > 0 {
                x[i - 1] += step;
            }
            let fx = f(&x);
            (x, fx)
        })
        .collect();
    let point = |c: &[f64], toward: &[f64], t: f64| -> Vec<f64> { c.iter().zip(toward).map(|(a, b)| a + t * (b - a)).collect() };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let size = simplex[1..].iter().map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
        if (worst - best).abs() <= 1e-15 * (1.0 + best.abs()) && size < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
        let reflected = point(&centroid, &simplex[n].0, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = point(&centroid, &simplex[n].0, -2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (target, ft) = if fr < simplex[n].1 { (reflected.clone(), fr) } else { (simplex[n].0.clone(), simplex[n].1) };
            let contracted = point(&centroid, &target, 0.5);
            let fc = f(&contracted);
            if fc < ft {
                simplex[n] = (contracted, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x = point(&x0, &entry.0, 0.5);
                    let fx = f(&x);
                    *entry = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

struct FitData {
    d: Vec<f64>,
    log_p: Vec<f64>,
    log_y: Vec<f64>,
    w: Vec<f64>,
}

impl FitData {
    /// Model in log space with θ = (ln A, ln a, ln b, ln p_th).
    fn predict(&self, i: usize, t: &[f64; 4]) -> f64 {
        t[0] + t[1].exp() * self.d[i].powf(t[2].exp()) * (self.log_p[i] - t[3])
    }

    fn cost(&self, t: &[f64; 4]) -> f64 {
        (0..self.d.len()).map(|i| self.w[i] * (self.log_y[i] - self.predict(i, t)).powi(2)).sum()
    }

    fn jacobian_row(&self, i: usize, t: &[f64; 4]) -> [f64; 4] {
        let s = t[1].exp() * self.d[i].powf(t[2].exp());
        let l = self.log_p[i] - t[3];
        [1.0, s * l, s * self.d[i].ln() * t[2].exp() * l, -s]
    }
}

/// Least-squares fit of log P_L = log A + a·d^b·(log p − log p_th) jointly
/// over codes, with inverse-variance weights in log space. `fixed` pins (a, b).
pub fn fit_threshold(points: &[DataPoint], fixed: Option<(f64, f64)>) -> Result<FitResult, HarnessError> {
    let mut pts: Vec<&DataPoint> = points.iter().collect();
    pts.sort_by(|x, y| x.code.cmp(&y.code).then(x.d.cmp(&y.d)).then(x.p.total_cmp(&y.p)));
    let mut per_code: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &pts {
        if !(p.per_round_rate > 0.0) {
            return Err(HarnessError::ZeroFailures { code: p.code.clone(), p: p.p });
        }
        *per_code.entry(&p.code).or_default() += 1;
    }
    if per_code.len() < 2 || per_code.values().any(|&c| c < 3) {
        return Err(HarnessError::TooFewPoints);
    }
    if let Some((a, b)) = fixed {
        if !(a > 0.0 && b > 0.0) {
            return Err(HarnessError::Invalid("fixed exponents must be positive".into()));
        }
    }
    let weighted = pts.iter().all(|p| p.std_error > 0.0 && p.std_error.is_finite());
    let data = FitData {
        d: pts.iter().map(|p| p.d as f64).collect(),
        log_p: pts.iter().map(|p| p.p.ln()).collect(),
        log_y: pts.iter().map(|p| p.per_round_rate.ln()).collect(),
        w: pts.iter().map(|p| if weighted { (p.per_round_rate / p.std_error).powi(2) } else { 1.0 }).collect(),
    };
    let p_max = pts.iter().map(|p| p.p).fold(0.0, f64::max);
    let mean_log_y = data.log_y.iter().sum::<f64>() / data.log_y.len() as f64;

    let free = fixed.is_none();
    let expand = |x: &[f64]| -> [f64; 4] {
        match fixed {
            None => [x[0], x[1], x[2], x[3]],
            Some((a, b)) => [x[0], a.ln(), b.ln(), x[1]],
        }
    };
    let cost = |x: &[f64]| data.cost(&expand(x));
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for scale in [1.0, 2.0, 4.0] {
        let lt = (p_max * scale).ln();
        if free {
            for la in [0.5f64, 1.0, 2.0] {
                for lb in [0.5f64, 1.0, 1.5] {
                    starts.push(vec![mean_log_y, la.ln(), lb.ln(), lt]);
                }
            }
        } else {
            starts.push(vec![mean_log_y, lt]);
        }
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for x0 in starts {
        let (mut x, mut fx) = nelder_mead(&cost, &x0, 0.5, 4000);
        // restart from the optimum until it stops improving
        for _ in 0..20 {
            let (y, fy) = nelder_mead(&cost, &x, 0.05, 4000);
            let done = fy >= fx - 1e-14 * (1.0 + fx.abs());
            if fy < fx {
                x = y;
                fx = fy;
            }
            if done {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| fx < b.1) {
            best = Some((x, fx));
        }
    }
    let (x, residual) = best.expect("at least one start");
    let t = expand(&x);

    // Gauss–Newton covariance in θ, scaled by the reduced residual
    let cols: Vec<usize> = if free { vec![0, 1, 2, 3] } else { vec![0, 3] };
    let n = pts.len();
    let k = cols.len();
    let mut j = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        let row = data.jacobian_row(i, &t);
        for (c, &col) in cols.iter().enumerate() {
            j[(i, c)] = row[col] * data.w[i].sqrt();
        }
    }
    let dof = n.saturating_sub(k).max(1) as f64;
    let sigma2 = if weighted { (residual / dof).max(1.0) } else { residual / dof };
    let cov = (j.transpose() * &j).try_inverse().map(|m| m * sigma2);
    let mut se = [0.0f64; 4];
    if let Some(cov) = cov {
        for (c, &col) in cols.iter().enumerate() {
            se[col] = cov[(c, c)].max(0.0).sqrt();
        }
    } else {
        se = [f64::NAN; 4];
    }
    let value = |i: usize| t[i].exp();
    Ok(FitResult {
        amplitude: value(0),
        a: value(1),
        b: value(2),
        p_th: value(3),
        amplitude_err: value(0) * se[0],
        a_err: value(1) * se[1],
        b_err: value(2) * se[2],
        p_th_err: value(3) * se[3],
        residual,
        fixed_exponents: !free,
    })
}

/// Where the per-round logical rate of one code equals p, by log-log
/// interpolation between the bracketing points.
pub fn pseudo_threshold(points: &[DataPoint]) -> Result<f64, HarnessError> {
    let mut pts: Vec<&DataPoint> = points.iter().filter(|p| p.per_round_rate > 0.0 && p.p > 0.0).collect();
    pts.sort_by(|a, b| a.p.total_cmp(&b.p));
    let gap = |p: &DataPoint| p.per_round_rate.ln() - p.p.ln();
    for w in pts.windows(2) {
        let (g0, g1) = (gap(w[0]), gap(w[1]));
        if g0 == 0.0 {
            return Ok(w[0].p);
        }
        if g0.signum() != g1.signum() {
            let (x0, x1) = (w[0].p.ln(), w[1].p.ln());
            return Ok((x0 + (x1 - x0) * g0 / (g0 - g1)).exp());
        }
    }
    match pts.last() {
        Some(p) if gap(p) == 0.0 => Ok(p.p),
        _ => Err(HarnessError::NotBracketing),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub first: String,
    pub second: String,
    pub p: f64,
}

/// Pairwise crossings of per-round curves on their common p values, located
/// by log-log interpolation.
pub fn curve_crossings(points: &[DataPoint]) -> Vec<Crossing> {
    let mut curves: BTreeMap<&str, BTreeMap<u64, f64>> = BTreeMap::new();
    for p in points.iter().filter(|p| p.per_round_rate > 0.0) {
        curves.entry(&p.code).or_default().insert(p.p.to_bits(), p.per_round_rate);
    }
    let names: Vec<&str> = curves.keys().copied().collect();
    let mut out = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let mut common: Vec<(f64, f64)> = curves[a]
                .iter()
                .filter_map(|(k, ya)| curves[b].get(k).map(|yb| (f64::from_bits(*k), ya.ln() - yb.ln())))
                .collect();
            common.sort_by(|x, y| x.0.total_cmp(&y.0));
            for w in common.windows(2) {
                let ((p0, g0), (p1, g1)) = (w[0], w[1]);
                if g0 != 0.0 && g0.signum() != g1.signum() {
                    let (x0, x1) = (p0.ln(), p1.ln());
                    let p = (x0 + (x1 - x0) * g0 / (g0 - g1)).exp();
                    out.push(Crossing { first: a.to_string(), second: b.to_string(), p });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub fit: FitResult,
    pub crossings: Vec<Crossing>,
    pub cooperativity: Option<f64>,
}

/// One polynomial hypergraph-product code in a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSpec {
    pub id: String,
    /// Exponents of the check polynomial, e.g. [0, 1, 2] for 1+x+x².
    pub polynomial: Vec<usize>,
    pub lift: usize,
    #[serde(default = "periodic")]
    pub boundary: Boundary,
    pub d: usize,
}

fn periodic() -> Boundary {
    Boundary::Periodic
}

impl CodeSpec {
    pub fn experiment(&self, rounds: Option<usize>) -> Result<Experiment, HarnessError> {
        let poly = CheckPolynomial::new(&self.polynomial)?;
        let code = hgp_from_polynomial(&poly, self.lift, self.boundary)?;
        let exp = Experiment::new(&self.id, code, self.d);
        Ok(match rounds {
            Some(r) => exp.with_rounds(r),
            None => exp,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub codes: Vec<CodeSpec>,
    #[serde(alias = "p-grid")]
    pub p_grid: Vec<f64>,
    pub m: f64,
    pub model: ModelKind,
    pub shots: usize,
    /// Rounds per experiment; defaults to each code's distance.
    #[serde(default)]
    pub rounds: Option<usize>,
}

/// Seed for point `j` of code `i`, derived from the run seed.
pub fn point_seed(seed: u64, code: usize, point: usize) -> u64 {
    seed ^ ((code as u64) << 32 | point as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn run_manifest(manifest: &Manifest, seed: u64, cfg: &DecoderConfig) -> Result<Vec<DataPoint>, HarnessError> {
    let mut out = Vec::new();
    for (i, spec) in manifest.codes.iter().enumerate() {
        let exp = spec.experiment(manifest.rounds)?;
        for (j, &p) in manifest.p_grid.iter().enumerate() {
            out.push(run_point(&exp, p, manifest.m, manifest.model, manifest.shots, point_seed(seed, i, j), cfg)?);
        }
    }
    Ok(out)
}

pub fn points_to_csv(points: &[DataPoint]) -> String {
    let mut s = String::from("code,d,p,m,model,rounds,shots,failures,per_round_rate,std_error\n");
    for p in points {
        let model = match p.model {
            ModelKind::Agnostic => "agnostic",
            ModelKind::Custom => "custom",
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            p.code, p.d, p.p, p.m, model, p.rounds, p.shots, p.failures, p.per_round_rate, p.std_error
        ));
    }
    s
}

pub fn points_from_csv(text: &str) -> Result<Vec<DataPoint>, HarnessError> {
    let bad = |line: &str| HarnessError::Invalid(format!("bad CSV row {line:?}"));
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(line));
        }
        let num = |i: usize| f[i].trim().parse::<f64>().map_err(|_| bad(line));
        let int = |i: usize| f[i].trim().parse::<usize>().map_err(|_| bad(line));
        out.push(DataPoint {
            code: f[0].to_string(),
            d: int(1)?,
            p: num(2)?,
            m: num(3)?,
            model: f[4].parse().map_err(|_| bad(line))?,
            rounds: int(5)?,
            shots: int(6)?,
            failures: int(7)?,
            per_round_rate: num(8)?,
            std_error: num(9)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_round_examples() {
        assert_eq!(per_round(0.0, 7), 0.0);
        assert!((per_round(0.3, 1) - 0.3).abs() < 1e-15);
        assert!((per_round(0.271, 4) - 0.075_978_913_527_693_12).abs() < 1e-15);
    }

    #[test]
    fn cooperativity_rows() {
        let close = |x: f64, y: f64| ((x - y) / y).abs() < 5e-3;
        assert!(close(cooperativity(6, 1.0, 8.12e-3), 2.65e6));
        assert!(close(cooperativity(6, 0.5, 8.43e-3), 9.85e6));
        assert!(close(cooperativity(6, 10.0, 6.09e-3), 4.72e4));
    }

    #[test]
    fn pseudo_threshold_of_a_constructed_curve() {
        // rate = (p / 1.5e-3)^2 · 1.5e-3 crosses rate = p at 1.5e-3
        let pts: Vec<DataPoint> = [5e-4, 1e-3, 2e-3, 4e-3]
            .iter()
            .map(|&p| {
                let mut d = DataPoint::from_counts("c", 3, p, 1.0, ModelKind::Agnostic, 3, 0, 0);
                d.per_round_rate = 1.5e-3 * (p / 1.5e-3f64).powi(2);
                d
            })
            .collect();
        assert!((pseudo_threshold(&pts).unwrap() - 1.5e-3).abs() < 1e-12);
        let flat: Vec<DataPoint> = pts
            .iter()
            .map(|d| DataPoint { per_round_rate: d.p / 10.0, ..d.clone() })
            .collect();
        assert!(matches!(pseudo_threshold(&flat), Err(HarnessError::NotBracketing)));
    }

    #[test]
    fn csv_round_trip() {
        let p = DataPoint::from_counts("q72", 4, 8e-3, 1.0, ModelKind::Custom, 4, 1000, 271);
        assert_eq!(points_from_csv(&points_to_csv(&[p.clone()])).unwrap(), vec![p]);
    }
}
