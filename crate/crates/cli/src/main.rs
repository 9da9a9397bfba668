//! `selrt`: selective randomization tests, confidence sets and estimates for adaptive
//! multi-stage experiments, plus the simulation studies.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use selrt::inference::{
    confidence_set, curve_pairs, hl_estimate, p_curve, randomization_pvalue, write_curve_csv,
    CurvePoint, Grid, PValueResult, Sampler, TestKind,
};
use selrt::samplers::{tune_window, RwmConfig};
use selrt::sim::{
    run_coverage_study, run_holdout_study, run_placebo_study, run_rejection_study, save_study,
    surrogate_population, write_json, BinaryPopulation, HoldoutConfig, PlaceboConfig, Protocol,
    RejectionPlan, StudyConfig,
};
use selrt::trial::validate_record;
use selrt::{Error, NullContext, Trial, TrialRecord, TrialSpec};

#[derive(Parser)]
#[command(
    name = "selrt",
    version,
    about = "Selective randomization inference for adaptive experiments"
)]
struct Cli {
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true, env = "SELRT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// P-value for one null value of the effect.
    Test {
        #[command(flatten)]
        input: Input,
        #[arg(long, allow_hyphen_values = true)]
        tau: f64,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Confidence set by inverting tests over a grid.
    Ci {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
        tau_grid: Grid,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[command(flatten)]
        sampling: Sampling,
        /// Where `p_curve.csv` is written.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Hodges-Lehmann point estimate from a p-curve.
    Estimate {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
        tau_grid: Grid,
        #[command(flatten)]
        sampling: Sampling,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Rejection probabilities of the enrichment-trial study.
    Simulate {
        #[command(flatten)]
        study: Study,
        /// When selective p-values are also computed by rejection sampling.
        #[arg(long, value_enum, default_value_t = PlanArg::NullAndBoth)]
        rejection: PlanArg,
    },
    /// Coverage of one-sided lower confidence bounds in the enrichment-trial study.
    Coverage {
        #[command(flatten)]
        study: Study,
        /// Also compute selective bounds with rejection sampling.
        #[arg(long)]
        with_rejection: bool,
    },
    /// Exact p-curves with and without hold-out units.
    Holdout {
        #[arg(long, default_value_t = 60)]
        datasets: usize,
        #[arg(long, value_parser = parse_grid, allow_hyphen_values = true, default_value = "-2:3:0.05")]
        tau_grid: Grid,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Subsampled two-stage trials from binary-outcome data, tested at no effect.
    Placebo {
        /// `unit_id,group,treatment,outcome` CSV; a synthetic surrogate is used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ProtocolArg::Placebo)]
        protocol: ProtocolArg,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 2000)]
        n1: usize,
        #[arg(long, default_value_t = 200)]
        n2: usize,
        /// Only analyze trials selecting this group; `any` keeps all.
        #[arg(long, default_value = ">=80")]
        target_group: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Window size with the largest pilot-chain mean squared jump.
    TuneWindow {
        #[command(flatten)]
        input: Input,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        tau: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20")]
        windows: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        pilot_length: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Check a data file against a trial spec.
    Validate {
        #[command(flatten)]
        input: Input,
    },
}

#[derive(Args)]
struct Input {
    /// Trial spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Observed data (CSV).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct Sampling {
    #[arg(long = "test", value_enum, default_value_t = KindArg::Selective)]
    kind: KindArg,
    #[arg(long, value_enum, default_value_t = SamplerArg::Rwm)]
    sampler: SamplerArg,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Defaults to a tenth of the chain.
    #[arg(long)]
    burn_in: Option<usize>,
    /// One size, or one per stage. Defaults to 5 capped at each stage's size.
    #[arg(long, value_delimiter = ',')]
    window: Option<Vec<usize>>,
    /// Proposal budget of the rejection sampler.
    #[arg(long)]
    max_attempts: Option<usize>,
    /// Largest space enumerated by the exact sampler.
    #[arg(long, default_value_t = 10_000_000)]
    cap: u128,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct Study {
    #[arg(long, default_value_t = 400)]
    replications: usize,
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true, default_value = "-1:1:0.2")]
    tau_grid: Grid,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Effect in the low group.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    tau_low: f64,
    /// Effect in the high group.
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    tau_high: f64,
    /// Record wall-clock seconds per p-value. Makes outputs run-dependent.
    #[arg(long)]
    timing: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Naive,
    Split,
    Selective,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Exact,
    Rejection,
    Rwm,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanArg {
    Off,
    NullOnly,
    NullAndBoth,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Placebo,
    Treated,
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    s.parse::<Grid>().map_err(|e| e.to_string())
}

fn kind_of(k: KindArg) -> TestKind {
    match k {
        KindArg::Naive => TestKind::Naive,
        KindArg::Split => TestKind::Split,
        KindArg::Selective => TestKind::Selective,
    }
}

fn load_trial(input: &Input) -> Result<Trial, Error> {
    let text = fs::read_to_string(&input.spec)
        .map_err(|e| Error::Spec(format!("{}: {e}", input.spec.display())))?;
    let spec = TrialSpec::from_json(&text)?;
    let record = TrialRecord::from_csv_path(&input.data)?;
    Trial::new(spec, record)
}

fn sampler_for(trial: &Trial, s: &Sampling) -> Sampler {
    match s.sampler {
        SamplerArg::Exact => Sampler::Exact { cap: s.cap },
        SamplerArg::Rejection => Sampler::Rejection {
            samples: s.samples,
            max_attempts: s.max_attempts,
        },
        SamplerArg::Rwm => {
            let windows = s.window.clone().unwrap_or_else(|| {
                (0..trial.num_stages())
                    .map(|k| trial.stage_range(k).len().clamp(1, 5))
                    .collect()
            });
            let mut cfg = RwmConfig::new(s.samples, 1);
            cfg.windows = windows;
            if let Some(b) = s.burn_in {
                cfg = cfg.with_burn_in(b);
            }
            Sampler::Rwm(cfg)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Error> {
    write_json(value, std::io::stdout().lock())
}

#[derive(Serialize)]
struct TestOutput {
    tau: f64,
    test: &'static str,
    #[serde(flatten)]
    result: PValueResult,
}

#[derive(Serialize)]
struct EstimateOutput {
    estimate: f64,
    test: &'static str,
    grid: Grid,
}

#[derive(Serialize)]
struct WindowOutput {
    window: usize,
    candidates: Vec<usize>,
}

fn write_curve(dir: &Path, curve: &[CurvePoint]) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    write_curve_csv(curve, fs::File::create(dir.join("p_curve.csv"))?)
}

fn study_config(s: &Study) -> StudyConfig {
    StudyConfig {
        replications: s.replications,
        tau_true: (s.tau_low, s.tau_high),
        tau_grid: s.tau_grid,
        alpha: s.alpha,
        samples: s.samples,
        window: s.window,
        burn_in: s.burn_in,
        seed: s.seed,
        timing: s.timing,
        ..StudyConfig::default()
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Test {
            input,
            tau,
            sampling,
        } => {
            let trial = load_trial(&input)?;
            let sampler = sampler_for(&trial, &sampling);
            let kind = kind_of(sampling.kind);
            let ctx = NullContext::new(&trial, tau)?;
            let result = randomization_pvalue(&ctx, kind, &sampler, sampling.seed)?;
            Ok(print_json(&TestOutput {
                tau,
                test: kind.name(),
                result,
            })?)
        }
        Command::Ci {
            input,
            tau_grid,
            alpha,
            sampling,
            out_dir,
        } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Failure::new(
                    "UsageError",
                    format!("alpha must lie in (0, 1), got {alpha}"),
                ));
            }
            let trial = load_trial(&input)?;
            let sampler = sampler_for(&trial, &sampling);
            let set = confidence_set(
                &trial,
                kind_of(sampling.kind),
                tau_grid,
                alpha,
                &sampler,
                sampling.seed,
            );
            if let Some(pt) = set.p_curve.iter().find(|pt| pt.error.is_some()) {
                return Err(point_failure(pt));
            }
            write_curve(&out_dir, &set.p_curve)?;
            Ok(print_json(&set)?)
        }
        Command::Estimate {
            input,
            tau_grid,
            sampling,
            out_dir,
        } => {
            let trial = load_trial(&input)?;
            let sampler = sampler_for(&trial, &sampling);
            let kind = kind_of(sampling.kind);
            let curve = p_curve(&trial, kind, &tau_grid.points(), &sampler, sampling.seed);
            if let Some(pt) = curve.iter().find(|pt| pt.error.is_some()) {
                return Err(point_failure(pt));
            }
            if let Some(dir) = out_dir {
                write_curve(&dir, &curve)?;
            }
            Ok(print_json(&EstimateOutput {
                estimate: hl_estimate(&curve_pairs(&curve))?,
                test: kind.name(),
                grid: tau_grid,
            })?)
        }
        Command::Simulate { study, rejection } => {
            let cfg = StudyConfig {
                rejection: match rejection {
                    PlanArg::Off => RejectionPlan::Off,
                    PlanArg::NullOnly => RejectionPlan::NullOnly,
                    PlanArg::NullAndBoth => RejectionPlan::NullAndBoth,
                    PlanArg::All => RejectionPlan::All,
                },
                ..study_config(&study)
            };
            let (rows, summary) = run_rejection_study(&cfg)?;
            save_study(&study.out_dir, "rejection", &rows, &summary)?;
            Ok(print_json(&summary)?)
        }
        Command::Coverage {
            study,
            with_rejection,
        } => {
            let cfg = StudyConfig {
                coverage_rejection: with_rejection,
                ..study_config(&study)
            };
            let (rows, summary) = run_coverage_study(&cfg)?;
            save_study(&study.out_dir, "coverage", &rows, &summary)?;
            Ok(print_json(&summary)?)
        }
        Command::Holdout {
            datasets,
            tau_grid,
            seed,
            out_dir,
        } => {
            let cfg = HoldoutConfig {
                datasets,
                grid: tau_grid,
                seed,
                ..HoldoutConfig::default()
            };
            let mut report = run_holdout_study(&cfg)?;
            let rows = report.rows();
            report.curves.clear();
            save_study(&out_dir, "holdout", &rows, &report)?;
            Ok(print_json(&report)?)
        }
        Command::Placebo {
            data,
            protocol,
            trials,
            n1,
            n2,
            target_group,
            samples,
            seed,
            out_dir,
        } => {
            let pop = match data {
                Some(path) => {
                    BinaryPopulation::from_csv_reader(fs::File::open(&path).map_err(Error::from)?)?
                }
                None => surrogate_population(seed),
            };
            let cfg = PlaceboConfig {
                protocol: match protocol {
                    ProtocolArg::Placebo => Protocol::Placebo,
                    ProtocolArg::Treated => Protocol::Treated,
                },
                n1,
                n2,
                trials,
                target_group: (target_group != "any").then_some(target_group),
                samples,
                seed,
                ..PlaceboConfig::default()
            };
            let (rows, report) = run_placebo_study(&pop, &cfg)?;
            save_study(&out_dir, "placebo", &rows, &report)?;
            Ok(print_json(&report)?)
        }
        Command::TuneWindow {
            input,
            tau,
            windows,
            pilot_length,
            seed,
        } => {
            let trial = load_trial(&input)?;
            let ctx = NullContext::new(&trial, tau)?;
            let accept = |z: &[u8]| ctx.matches(z);
            let window = tune_window(
                &trial,
                trial.observed(),
                &ctx.free_mask(),
                &accept,
                &windows,
                pilot_length,
                seed,
            )?;
            Ok(print_json(&WindowOutput {
                window,
                candidates: windows,
            })?)
        }
        Command::Validate { input } => {
            let text = fs::read_to_string(&input.spec)
                .map_err(|e| Error::Spec(format!("{}: {e}", input.spec.display())))?;
            let spec = TrialSpec::from_json(&text)?;
            let record = TrialRecord::from_csv_path(&input.data)?;
            let report = validate_record(&spec, &record);
            print_json(&report)?;
            if report.is_ok() {
                Ok(())
            } else {
                Err(Error::Data(format!("{} violation(s)", report.violations.len())).into())
            }
        }
    }
}

/// An error with the exit status and code reported to the caller.
struct Failure {
    code: String,
    message: String,
    status: u8,
}

fn status_of_code(code: &str) -> u8 {
    match code {
        "UsageError" | "InvalidArgument" => 2,
        "DataError"
        | "DataSchemaError"
        | "IoError"
        | "NotImputable"
        | "InfeasibleAssignment"
        | "InsufficientUnits" => 3,
        "SpecParseError" => 4,
        _ => 5,
    }
}

impl Failure {
    fn new(code: &str, message: String) -> Self {
        Failure {
            code: code.to_string(),
            message,
            status: status_of_code(code),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(e.code(), e.to_string())
    }
}

fn point_failure(pt: &CurvePoint) -> Failure {
    let code = pt.error.as_deref().unwrap_or("DataError");
    Failure::new(code, format!("p-value failed at tau = {}: {code}", pt.tau))
}

fn report(f: &Failure) -> ExitCode {
    let line = serde_json::json!({ "error": f.code, "message": f.message });
    let _ = writeln!(std::io::stderr().lock(), "{line}");
    ExitCode::from(f.status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
                .trim_start_matches("error: ")
                .to_string();
            return report(&Failure::new("UsageError", first));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return report(&Failure::new(
                "UsageError",
                "--threads must be at least 1".into(),
            ));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            return report(&Failure::new("UsageError", e.to_string()));
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}
