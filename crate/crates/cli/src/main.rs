mod config;
mod experiments;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use stratoform::sde::rng::RNG_ALGORITHM;
use stratoform::suite::{run_criterion, SuiteOptions, CRITERIA, QUICK_PATHS};

use crate::config::{ConventionChoice, ExperimentConfig};

const VALIDATION: u8 = 2;
const RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "stratoform", version, about = "Diffusions on manifolds: integrals of 1-forms, cycles, invariant measures, Lyapunov forms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    run: RunFlags,
    /// Generator convention(s) for symbols and generators; overrides the
    /// config.
    #[arg(long, value_parser = parse_convention)]
    convention: Option<ConventionChoice>,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Cap every ensemble at 500 paths.
    #[arg(long)]
    quick: bool,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_convention(s: &str) -> Result<ConventionChoice, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Sample paths and endpoints.
    Simulate(Common),
    /// Evaluate `Lf` analytically and by finite differences.
    GeneratorCheck(Common),
    /// Stratonovich integrals and their drift/martingale decomposition.
    Integrate(Common),
    /// Long-time averages of closed 1-forms.
    EstimateCycle(Common),
    /// Occupation histogram.
    EstimateMeasure(Common),
    /// Invariance residuals, `J` and coherence of an occupation measure.
    ValidateMeasure(Common),
    /// Sign of the symbol of a 1-form outside a region.
    CheckLyapunov(Common),
    /// Expected drift `f(t, x0)` of a 1-form.
    EstimateF(Common),
    /// Exceedance probabilities against the supermartingale bound.
    TailBound(Common),
    /// Variance scaling of the rescaled martingale part.
    Fluctuation(Common),
    /// Runs whatever experiment the config names.
    Run(Common),
    /// The full acceptance battery.
    PaperSuite {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value_t = SuiteOptions::default().base_seed)]
        seed: u64,
        /// Comma-separated criterion ids (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

impl Command {
    fn kind(&self) -> Option<&'static str> {
        Some(match self {
            Command::Simulate(_) => "simulate",
            Command::GeneratorCheck(_) => "generator-check",
            Command::Integrate(_) => "integrate",
            Command::EstimateCycle(_) => "estimate-cycle",
            Command::EstimateMeasure(_) => "estimate-measure",
            Command::ValidateMeasure(_) => "validate-measure",
            Command::CheckLyapunov(_) => "check-lyapunov",
            Command::EstimateF(_) => "estimate-f",
            Command::TailBound(_) => "tail-bound",
            Command::Fluctuation(_) => "fluctuation",
            Command::Run(_) | Command::PaperSuite { .. } => return None,
        })
    }
}

struct Failure(u8, String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn init_threads(threads: Option<usize>) -> Result<usize, Failure> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure(VALIDATION, "--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure(RUNTIME, e.to_string()))?;
    }
    Ok(rayon::current_num_threads())
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    let expected = command.kind();
    match command {
        Command::PaperSuite { run, seed, only } => paper_suite(run, seed, only),
        Command::Simulate(c)
        | Command::GeneratorCheck(c)
        | Command::Integrate(c)
        | Command::EstimateCycle(c)
        | Command::EstimateMeasure(c)
        | Command::ValidateMeasure(c)
        | Command::CheckLyapunov(c)
        | Command::EstimateF(c)
        | Command::TailBound(c)
        | Command::Fluctuation(c)
        | Command::Run(c) => experiment(c, expected),
    }
}

fn experiment(c: Common, expected: Option<&str>) -> Result<u8, Failure> {
    let invalid = |m: String| Failure(VALIDATION, m);
    let text = std::fs::read_to_string(&c.config)
        .map_err(|e| invalid(format!("cannot read {}: {e}", c.config.display())))?;
    let config = ExperimentConfig::parse(&text).map_err(invalid)?;
    if let Some(kind) = expected {
        if config.experiment.name() != kind {
            return Err(invalid(format!(
                "subcommand {kind} given a config of kind {}",
                config.experiment.name()
            )));
        }
    }
    let out_dir = c
        .run
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let resolved = config.resolve(c.convention).map_err(invalid)?;
    let threads = init_threads(c.run.threads)?;

    let start = Instant::now();
    let outputs = experiments::run(&resolved, c.run.quick.then_some(QUICK_PATHS))
        .map_err(|e| Failure(RUNTIME, e.to_string()))?;
    let elapsed = start.elapsed().as_secs_f64();
    let meta = json!({
        "schema_version": experiments::SCHEMA_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "experiment": resolved.config.experiment.name(),
        "base_seed": resolved.config.ensemble.base_seed,
        "conventions": resolved.specs.iter().map(|s| s.convention()).collect::<Vec<_>>(),
        "rng": RNG_ALGORITHM,
        "threads": threads,
        "quick": c.run.quick,
        "elapsed_seconds": elapsed,
        "config_path": c.config,
        "output_dir": out_dir,
    });
    write_outputs(&out_dir, &outputs.report, &meta, &outputs.files)?;
    println!(
        "{} finished in {elapsed:.1}s; report written to {}",
        resolved.config.experiment.name(),
        out_dir.join("report.json").display()
    );
    Ok(0)
}

fn paper_suite(run: RunFlags, seed: u64, only: Vec<String>) -> Result<u8, Failure> {
    for id in &only {
        if !CRITERIA.iter().any(|(c, _)| c == id) {
            return Err(Failure(VALIDATION, format!("unknown criterion {id}")));
        }
    }
    let out_dir = run.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let threads = init_threads(run.threads)?;
    let opts = SuiteOptions {
        quick: run.quick,
        base_seed: seed,
    };
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let mut timings = serde_json::Map::new();
    for (id, _) in CRITERIA.iter().filter(|(c, _)| only.is_empty() || only.iter().any(|o| o == c)) {
        let t = Instant::now();
        let outcome = match run_criterion(id, &opts).expect("known id") {
            Ok(o) => o,
            Err(e) => stratoform::suite::CriterionOutcome::error(id, &e),
        };
        timings.insert(id.to_string(), json!(t.elapsed().as_secs_f64()));
        println!("{}", outcome.summary_line());
        outcomes.push(outcome);
    }
    let all_passed = outcomes.iter().all(|o| o.passed);
    let report = json!({
        "schema_version": experiments::SCHEMA_VERSION,
        "experiment": "paper-suite",
        "options": opts,
        "base_seed": seed,
        "all_passed": all_passed,
        "outcomes": outcomes,
    });
    let meta = json!({
        "schema_version": experiments::SCHEMA_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "experiment": "paper-suite",
        "base_seed": seed,
        "rng": RNG_ALGORITHM,
        "threads": threads,
        "quick": run.quick,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
        "criterion_seconds": timings,
        "output_dir": out_dir,
    });
    write_outputs(&out_dir, &report, &meta, &Default::default())?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    Ok(if all_passed { 0 } else { 1 })
}

fn write_outputs(
    dir: &Path,
    report: &Value,
    meta: &Value,
    files: &std::collections::BTreeMap<String, Vec<u8>>,
) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure(RUNTIME, format!("writing {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let pretty = |v: &Value| {
        let mut s = serde_json::to_string_pretty(v).expect("json");
        s.push('\n');
        s
    };
    std::fs::write(dir.join("report.json"), pretty(report)).map_err(io)?;
    std::fs::write(dir.join("meta.json"), pretty(meta)).map_err(io)?;
    for (name, data) in files {
        std::fs::write(dir.join(name), data).map_err(io)?;
    }
    Ok(())
}
