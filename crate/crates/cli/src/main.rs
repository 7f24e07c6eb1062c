mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rwre::experiments::{experiment, experiments, CheckKind, ExperimentConfig, ExperimentResult};
use rwre::limits::estimate_constants;
use rwre::quenched::oracle::{validation_suite, Fault, Op, ValidationCase, VALIDATION_CASES};
use rwre::rng::Streams;
use rwre::Error;
use serde_json::json;

use crate::config::Overrides;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ESTIMATION: u8 = 3;
const EXIT_CENSORED: u8 = 4;

/// Fixed seed of the oracle validation suite.
const VALIDATION_SEED: u64 = 2024;

#[derive(Parser)]
#[command(name = "rwre", version, about = "Quenched hitting-time experiments for random walks in random environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// More detail on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Nothing on stderr except errors.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// List the registered experiments.
    List,
    /// Estimate the limit constants of the configured environment law.
    Calibrate(RunArgs),
    /// Check the fast quenched formulas against the exact rational oracle.
    Validate(ValidateArgs),
    /// Run one experiment and write its result files.
    Experiment {
        name: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config with schema_version = 1.
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(short, long, default_value = "results")]
    out: PathBuf,
    /// Rendering printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = VALIDATION_SEED)]
    seed: u64,
    #[arg(long, default_value_t = VALIDATION_CASES)]
    cases: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also write validate.json and validate.csv here.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<FaultOp>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultOp {
    ExitProb,
    ExpectedHitting,
    VarianceHitting,
}

impl From<FaultOp> for Op {
    fn from(f: FaultOp) -> Op {
        match f {
            FaultOp::ExitProb => Op::ExitProb,
            FaultOp::ExpectedHitting => Op::ExpectedHitting,
            FaultOp::VarianceHitting => Op::VarianceHitting,
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn io(message: String) -> Self {
        Self { code: EXIT_ESTIMATION, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidSpec(_)
            | Error::NotTransient(_)
            | Error::NoRoot(_)
            | Error::Parameter(_)
            | Error::Domain(_)
            | Error::Unknown { .. } => EXIT_USAGE,
            _ => EXIT_ESTIMATION,
        };
        Self { code, message: e.to_string() }
    }
}

struct Log {
    level: i8,
}

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if self.level >= 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn detail(&self, msg: impl AsRef<str>) {
        if self.level >= 1 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = Log { level: if cli.quiet { -1 } else { cli.verbose.min(10) as i8 } };
    let outcome = match cli.command {
        Command::List => {
            for e in experiments() {
                println!("{:<16} {}", e.name(), e.summary());
            }
            Ok(0)
        }
        Command::Calibrate(args) => calibrate(&args, &log),
        Command::Validate(args) => validate(&args, &log),
        Command::Experiment { name, run } => run_experiment(&name, &run, &log),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            if f.code == EXIT_USAGE {
                eprintln!("usage: rwre <list|calibrate|validate|experiment> [options]; see rwre --help");
            }
            ExitCode::from(f.code)
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let overrides = Overrides { seed: args.seed, workers: args.workers };
    let c = config::load(&args.config, &overrides).map_err(Failure::usage)?;
    c.validate()?;
    Ok(c)
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))
}

fn sidecar(runtime: f64, workers: usize) -> serde_json::Value {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    json!({
        "timestamp_unix": now,
        "runtime_seconds": runtime,
        "workers": workers,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn calibrate(args: &RunArgs, log: &Log) -> Result<u8, Failure> {
    let c = load(args)?;
    let start = Instant::now();
    let report = estimate_constants(&c.spec, c.constants, &Streams::new(c.seed, "calibrate"), c.workers)?;
    let runtime = start.elapsed().as_secs_f64();
    let text = output::pretty(&report).map_err(Failure::io)?;
    let csv = output::flat_csv(&serde_json::to_value(&report).map_err(|e| Failure::io(e.to_string()))?);
    prepare_dir(&args.out)?;
    output::write(&args.out, "constants.json", &text).map_err(Failure::io)?;
    output::write(&args.out, "constants.csv", &csv).map_err(Failure::io)?;
    let meta = output::pretty(&sidecar(runtime, c.workers)).map_err(Failure::io)?;
    output::write(&args.out, "constants.meta.json", &meta).map_err(Failure::io)?;
    match args.format {
        Format::Json => print!("{text}"),
        Format::Csv => print!("{csv}"),
    }
    log.info(format!(
        "calibrate: kappa = {}, lambda = {} ({:?}), C_K = {}, {runtime:.1} s",
        report.kappa, report.lambda, report.lambda_provenance, report.c_k
    ));
    Ok(0)
}

fn summarize(r: &ExperimentResult, log: &Log) {
    for c in &r.checks {
        let kind = if c.kind == CheckKind::Hard { "hard" } else { "soft" };
        let value = c.value.map_or(String::new(), |v| format!(" = {v:.6}"));
        log.detail(format!("  [{kind}] {}{value} {}", c.name, if c.passed { "ok" } else { "FAILED" }));
    }
    for w in &r.warnings {
        log.info(format!("  warning: {w}"));
    }
}

fn run_experiment(name: &str, args: &RunArgs, log: &Log) -> Result<u8, Failure> {
    experiment(name)?;
    let c = load(args)?;
    let start = Instant::now();
    let r = rwre::experiments::run(name, &c)?;
    let runtime = start.elapsed().as_secs_f64();
    let text = output::result_json(&r).map_err(Failure::io)?;
    prepare_dir(&args.out)?;
    let files = [
        (format!("{name}.json"), text.clone()),
        (format!("{name}.table.csv"), output::table_csv(&r.table)),
        (format!("{name}.checks.csv"), output::checks_csv(&r)),
        (format!("{name}.series.csv"), output::series_csv(&r)),
        (format!("{name}.statistics.csv"), output::statistics_csv(&r)),
        (format!("{name}.meta.json"), output::pretty(&sidecar(runtime, c.workers)).map_err(Failure::io)?),
    ];
    for (file, contents) in &files {
        output::write(&args.out, file, contents).map_err(Failure::io)?;
    }
    match args.format {
        Format::Json => print!("{text}"),
        Format::Csv => print!("{}", output::checks_csv(&r)),
    }
    summarize(&r, log);
    let code = verdict_code(&r);
    let verdict = match code {
        0 => "PASS",
        EXIT_CENSORED => "CENSORED",
        _ => "FAIL",
    };
    log.info(format!(
        "{name}: {verdict} (hard {}, soft {}), censored {}/{}, {runtime:.1} s, files in {}",
        if r.verdict.hard { "ok" } else { "failed" },
        if r.verdict.soft { "ok" } else { "missed" },
        r.censoring.truncated + r.censoring.failed,
        r.censoring.total,
        args.out.display()
    ));
    Ok(code)
}

/// A censoring breach outranks the verdict.
fn verdict_code(r: &ExperimentResult) -> u8 {
    if r.censoring.breach {
        EXIT_CENSORED
    } else if r.verdict.pass {
        0
    } else {
        EXIT_FAIL
    }
}

fn worst(cases: &[ValidationCase], op: Op) -> Option<&ValidationCase> {
    cases.iter().max_by(|a, b| a.error(op).total_cmp(&b.error(op)))
}

fn validate(args: &ValidateArgs, log: &Log) -> Result<u8, Failure> {
    if args.cases == 0 {
        return Err(Failure::usage("--cases must be at least 1"));
    }
    let fault = args.inject_fault.map(|op| Fault { op: op.into(), case: 0, rel: 1e-6 });
    let start = Instant::now();
    let cases = validation_suite(args.seed, args.cases, fault)?;
    let runtime = start.elapsed().as_secs_f64();
    let failures: Vec<&ValidationCase> = cases.iter().filter(|c| !c.failing().is_empty()).collect();
    let summary = json!({
        "seed": args.seed,
        "cases": cases.len(),
        "passed": failures.is_empty(),
        "worst": Op::ALL.iter().map(|&op| {
            let w = worst(&cases, op).expect("at least one case");
            (op.name().to_string(), json!({ "relative_error": w.error(op), "case": w.case }))
        }).collect::<serde_json::Map<_, _>>(),
        "failures": failures.iter().map(|c| json!({
            "case": c.case,
            "ops": c.failing().iter().map(|op| op.name()).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    let csv = output::validation_csv(&cases);
    if let Some(dir) = &args.out {
        prepare_dir(dir)?;
        output::write(dir, "validate.json", &output::pretty(&cases).map_err(Failure::io)?).map_err(Failure::io)?;
        output::write(dir, "validate.csv", &csv).map_err(Failure::io)?;
    }
    match args.format {
        Format::Json => print!("{}", output::pretty(&summary).map_err(Failure::io)?),
        Format::Csv => print!("{csv}"),
    }
    for c in &failures {
        for op in c.failing() {
            eprintln!(
                "validate: {} mismatch in case {} (seed {}, window [{}, {}], a = {}, b = {}): relative error {:.3e}",
                op.name(),
                c.case,
                c.seed,
                c.left,
                c.right,
                c.a,
                c.b,
                c.error(op)
            );
        }
    }
    log.info(format!(
        "validate: {} of {} cases agree with the oracle, {runtime:.2} s",
        cases.len() - failures.len(),
        cases.len()
    ));
    Ok(if failures.is_empty() { 0 } else { EXIT_FAIL })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rwre::experiments::reduced_config;

    #[test]
    fn exit_codes_follow_verdict_and_censoring() {
        let mut r = rwre::experiments::run("interarrival", &reduced_config("interarrival", 1).unwrap()).unwrap();
        r.verdict.pass = true;
        r.censoring.breach = false;
        assert_eq!(verdict_code(&r), 0);
        r.verdict.pass = false;
        assert_eq!(verdict_code(&r), EXIT_FAIL);
        r.censoring.breach = true;
        assert_eq!(verdict_code(&r), EXIT_CENSORED);
        r.verdict.pass = true;
        assert_eq!(verdict_code(&r), EXIT_CENSORED);
    }

    #[test]
    fn error_classes() {
        assert_eq!(Failure::from(Error::NotTransient(0.0)).code, EXIT_USAGE);
        assert_eq!(Failure::from(Error::Unknown { kind: "experiment", name: "x".into() }).code, EXIT_USAGE);
        assert_eq!(Failure::from(Error::TailPoints { have: 1, need: 500 }).code, EXIT_ESTIMATION);
        assert_eq!(Failure::from(Error::BudgetExhausted { budget: 1, rate: 0.0 }).code, EXIT_ESTIMATION);
    }
}
