use std::error::Error;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use cavqec::circuit::{build_memory_experiment, make_noise_model, Circuit, ModelKind};
use cavqec::code::{
    circulant_from_polynomial, code_parameters, compute_distance, hypergraph_product, layout, open_boundary,
    steane_code, Boundary, CheckPolynomial, CodeFile, CssCode,
};
use cavqec::decoder::{Decoder, DecoderConfig};
use cavqec::harness::{
    cooperativity, curve_crossings, fit_threshold, points_from_csv, points_to_csv, run_manifest, run_point, Experiment,
    Manifest, ThresholdReport,
};
use cavqec::schedule::{assign_cavities, diagonal_schedule, greedy_schedule, validate_schedule, ScheduledCheck};
use cavqec::sim::{build_dem, sample_frames, DetectorErrorModel, SampleBatch};
use cavqec::steane::{verify, Case};

type Res<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "cavqec", version, about = "Cavity-assisted syndrome extraction for hypergraph-product codes")]
struct Cli {
    /// Base seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a hypergraph-product code from a check polynomial.
    BuildCode(BuildCode),
    /// Emit the memory-experiment circuit for a code.
    GenCircuit(GenCircuit),
    /// Compute the check schedule of a code.
    Schedule(ScheduleCmd),
    /// Sample detector and observable flips from a circuit.
    Sample(Sample),
    /// Decode a batch of samples with BP+OSD.
    Decode(Decode),
    /// Estimate the logical failure rate of one code at one p.
    RunPoint(RunPoint),
    /// Run a manifest (or read a point table) and fit the threshold.
    Threshold(Threshold),
    /// Convert a threshold into the required cavity cooperativity.
    Cooperativity(CooperativityCmd),
    /// Exact density-matrix checks of the Steane-code analysis.
    SteaneVerify(SteaneVerify),
}

#[derive(Args)]
struct BuildCode {
    /// Check-polynomial coefficients, lowest degree first (1,1,1 = 1+x+x²).
    #[arg(long, value_delimiter = ',', required_unless_present = "steane")]
    poly: Vec<u8>,
    #[arg(long, default_value_t = 1)]
    lift: usize,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Periodic)]
    boundary: BoundaryArg,
    /// Rows removed for an open boundary (default: the polynomial degree).
    #[arg(long)]
    delete_rows: Option<usize>,
    /// Emit the [[7,1,3]] Steane code instead.
    #[arg(long, conflicts_with = "poly")]
    steane: bool,
    /// Also search for the distance up to this weight and report it on stderr.
    #[arg(long)]
    distance: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Periodic,
    Open,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Agnostic,
    Custom,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Agnostic => ModelKind::Agnostic,
            ModelArg::Custom => ModelKind::Custom,
        }
    }
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Agnostic)]
    model: ModelArg,
    /// Physical error rate.
    #[arg(long)]
    p: f64,
    /// Cavity-to-two-qubit error ratio.
    #[arg(long, default_value_t = 1.0)]
    m: f64,
}

#[derive(Args)]
struct GenCircuit {
    #[arg(long)]
    code: PathBuf,
    #[arg(long)]
    rounds: usize,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Args)]
struct ScheduleCmd {
    #[arg(long)]
    code: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BatchFormat {
    B8,
    Csv,
}

#[derive(Args)]
struct Sample {
    #[arg(long)]
    circuit: PathBuf,
    #[arg(long)]
    shots: usize,
    #[arg(long, value_enum, default_value_t = BatchFormat::B8)]
    format: BatchFormat,
    /// Also write the detector error model here.
    #[arg(long)]
    dem: Option<PathBuf>,
}

#[derive(Args)]
struct DecoderArgs {
    #[arg(long, default_value_t = 30)]
    max_iterations: usize,
    #[arg(long, default_value_t = 0.625)]
    min_sum_scale: f64,
    #[arg(long, default_value_t = 0)]
    osd_order: usize,
}

impl DecoderArgs {
    fn config(&self) -> DecoderConfig {
        DecoderConfig {
            max_iterations: self.max_iterations,
            min_sum_scale: self.min_sum_scale,
            osd_order: self.osd_order,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct Decode {
    #[arg(long)]
    dem: PathBuf,
    /// b8 batch as written by `sample`.
    #[arg(long)]
    shots: PathBuf,
    #[command(flatten)]
    decoder: DecoderArgs,
}

#[derive(Args)]
struct RunPoint {
    #[arg(long)]
    code: PathBuf,
    /// Code distance; also the default number of rounds.
    #[arg(long)]
    d: usize,
    #[arg(long)]
    rounds: Option<usize>,
    /// Label in the output table (default: the code file name).
    #[arg(long)]
    id: Option<String>,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 10_000)]
    shots: usize,
    #[command(flatten)]
    decoder: DecoderArgs,
}

#[derive(Args)]
struct Threshold {
    /// JSON manifest {codes, p_grid, m, model, shots, rounds}.
    #[arg(long, required_unless_present = "points", conflicts_with = "points")]
    manifest: Option<PathBuf>,
    /// Existing point table to fit instead of running experiments.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Where to write the point table when running a manifest.
    #[arg(long)]
    points_out: Option<PathBuf>,
    /// Hold the exponents fixed, e.g. 0.75,1.
    #[arg(long, value_delimiter = ',')]
    fixed: Option<Vec<f64>>,
    /// Cat size N for the cooperativity conversion.
    #[arg(long)]
    cat_size: Option<usize>,
    #[command(flatten)]
    decoder: DecoderArgs,
}

#[derive(Args)]
struct CooperativityCmd {
    /// Qubits per cat state.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: f64,
    #[arg(long)]
    p_th: f64,
}

#[derive(Args)]
struct SteaneVerify {
    /// `all` or a comma-separated list of cases.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    case: Vec<String>,
    #[arg(long, default_value_t = 1e6)]
    cooperativity: f64,
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Res<()> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn read_code(path: &Path) -> Res<CssCode> {
    let file: CodeFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(file.to_code()?)
}

fn build_code(args: &BuildCode) -> Res<CssCode> {
    if args.steane {
        return Ok(steane_code());
    }
    let poly = CheckPolynomial::from_coefficients(&args.poly)?;
    let mut h = circulant_from_polynomial(&poly, args.lift)?;
    if let BoundaryArg::Open = args.boundary {
        h = open_boundary(&h, args.delete_rows.unwrap_or(poly.degree()))?;
    }
    let mut code = hypergraph_product(&h, &h);
    if let BoundaryArg::Open = args.boundary {
        code.boundary = Boundary::Open;
    }
    Ok(code)
}

fn main() -> Res<()> {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match &cli.command {
        Command::BuildCode(args) => {
            let code = build_code(args)?;
            let (n, k) = code_parameters(&code);
            match args.distance {
                Some(w) => eprintln!("[[{n},{k}]] distance {:?}", compute_distance(&code, w)?),
                None => eprintln!("[[{n},{k}]]"),
            }
            emit(&cli.out, serde_json::to_string_pretty(&CodeFile::from_code(&code))?.as_bytes())?;
        }
        Command::GenCircuit(args) => {
            let exp = Experiment::new("code", read_code(&args.code)?, args.rounds);
            let noise = make_noise_model(args.noise.model.into(), args.noise.p, args.noise.m)?;
            let circuit = build_memory_experiment(&exp.code, args.rounds, &noise, &exp.schedule)?;
            emit(&cli.out, circuit.to_string().as_bytes())?;
        }
        Command::Schedule(args) => {
            let code = read_code(&args.code)?;
            let schedule = match layout(&code) {
                Ok(l) => {
                    let s = diagonal_schedule(&code, &l);
                    match validate_schedule(&s, &assign_cavities(&l)) {
                        Ok(()) => eprintln!("{} timesteps, no conflicts", s.len()),
                        Err(issue) => eprintln!("{} timesteps, conflict: {issue:?}", s.len()),
                    }
                    s
                }
                Err(_) => {
                    let s = greedy_schedule(&code);
                    eprintln!("{} timesteps (no grid layout; greedy packing)", s.len());
                    s
                }
            };
            let steps: Vec<&Vec<ScheduledCheck>> = schedule.timesteps.iter().map(|t| &t.checks).collect();
            emit(&cli.out, serde_json::to_string_pretty(&steps)?.as_bytes())?;
        }
        Command::Sample(args) => {
            let circuit: Circuit = fs::read_to_string(&args.circuit)?.parse()?;
            if let Some(path) = &args.dem {
                fs::write(path, build_dem(&circuit)?.to_string())?;
            }
            let batch = sample_frames(&circuit, args.shots, cli.seed)?;
            let mut buf = Vec::new();
            match args.format {
                BatchFormat::B8 => batch.write_b8(&mut buf)?,
                BatchFormat::Csv => batch.write_csv(&mut buf)?,
            }
            emit(&cli.out, &buf)?;
        }
        Command::Decode(args) => {
            let dem: DetectorErrorModel = fs::read_to_string(&args.dem)?.parse()?;
            let bytes = fs::read(&args.shots)?;
            let batch = SampleBatch::read_b8(&bytes, dem.detector_count, dem.observable_count)
                .ok_or("shot file does not match the detector error model")?;
            let decoder = Decoder::new(&dem, args.decoder.config())?;
            let bits = |support: &[usize]| {
                (0..dem.observable_count).map(|o| if support.contains(&o) { '1' } else { '0' }).collect::<String>()
            };
            let mut csv = String::from("shot,converged,correction_weight,predicted_observables,actual_observables,failure\n");
            let mut failures = 0;
            for s in 0..batch.shots {
                let r = decoder.decode(&batch.fired_detectors(s))?;
                let (pred, actual) = (bits(r.predicted_observables.support()), bits(&batch.flipped_observables(s)));
                let fail = pred != actual;
                failures += fail as usize;
                csv.push_str(&format!("{s},{},{},{pred},{actual},{}\n", r.converged as u8, r.correction.weight(), fail as u8));
            }
            eprintln!("{failures}/{} shots failed", batch.shots);
            emit(&cli.out, csv.as_bytes())?;
        }
        Command::RunPoint(args) => {
            let id = args.id.clone().unwrap_or_else(|| {
                args.code.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "code".into())
            });
            let mut exp = Experiment::new(&id, read_code(&args.code)?, args.d);
            if let Some(r) = args.rounds {
                exp = exp.with_rounds(r);
            }
            let point = run_point(&exp, args.noise.p, args.noise.m, args.noise.model.into(), args.shots, cli.seed, &args.decoder.config())?;
            emit(&cli.out, points_to_csv(&[point]).as_bytes())?;
        }
        Command::Threshold(args) => {
            let points = match (&args.manifest, &args.points) {
                (Some(path), _) => {
                    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
                    let points = run_manifest(&manifest, cli.seed, &args.decoder.config())?;
                    if let Some(p) = &args.points_out {
                        fs::write(p, points_to_csv(&points))?;
                    }
                    points
                }
                (None, Some(path)) => points_from_csv(&fs::read_to_string(path)?)?,
                (None, None) => unreachable!("clap requires one of --manifest and --points"),
            };
            let fixed = match args.fixed.as_deref() {
                None => None,
                Some(&[a, b]) => Some((a, b)),
                Some(_) => return Err("--fixed takes exactly two values: a,b".into()),
            };
            let fit = fit_threshold(&points, fixed)?;
            let m = points.first().map(|p| p.m);
            let coop = args.cat_size.zip(m).map(|(n, m)| cooperativity(n, m, fit.p_th));
            let report = ThresholdReport { fit, crossings: curve_crossings(&points), cooperativity: coop };
            emit(&cli.out, serde_json::to_string_pretty(&report)?.as_bytes())?;
        }
        Command::Cooperativity(args) => {
            let c = cooperativity(args.n, args.m, args.p_th);
            emit(&cli.out, format!("{c:.6e}\n").as_bytes())?;
        }
        Command::SteaneVerify(args) => {
            let cases: Vec<Case> = if args.case.iter().any(|c| c == "all") {
                Case::ALL.to_vec()
            } else {
                args.case.iter().map(|c| c.parse()).collect::<Result<_, _>>()?
            };
            let report = verify(&cases, args.cooperativity)?;
            for case in &report.cases {
                for c in &case.checks {
                    eprintln!("{} {:<12} {:<50} {:.3e}", if c.passed { "PASS" } else { "FAIL" }, case.case.name(), c.name, c.deviation);
                }
            }
            emit(&cli.out, serde_json::to_string_pretty(&report)?.as_bytes())?;
            if !report.passed {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
