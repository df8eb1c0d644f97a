#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use otfs_core::sim::runner::{ccdf_csv, papr_samples, run_with_workers, sweep_with_workers, to_csv};
use otfs_core::sim::{inspect_channel, selftest, Fault, Scenario};
use otfs_core::Error;

/// Delay-Doppler baseband link simulator.
#[derive(Debug, Parser)]
#[command(name = "otfs-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the scenario and write one CSV row per SNR point.
    Simulate(RunArgs),
    /// Run the scenario once per applicable scheme (or multiuser spreader).
    Sweep(RunArgs),
    /// Write the TF surface, windowed DD response, taps and frequency ACF.
    InspectChannel(InspectArgs),
    /// Empirical PAPR CCDF of every swept variant.
    PaprCcdf(CcdfArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[command(flatten)]
    common: Common,
    /// Directory receiving the CSV files.
    #[arg(long, default_value = "channel")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CcdfArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0.0)]
    min_db: f64,
    #[arg(long, default_value_t = 13.0)]
    max_db: f64,
    #[arg(long, default_value_t = 0.25)]
    step_db: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InjectedFault {
    IsfftSign,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// Deliberately break one transform to confirm the checks notice.
    #[arg(long, value_enum)]
    inject_fault: Option<InjectedFault>,
}

enum Failure {
    Config(String),
    Selftest,
    Guard(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Selftest => 2,
            Failure::Guard(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical_guard() {
            Failure::Guard(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load(c: &Common) -> Result<Scenario, Failure> {
    let mut s = Scenario::from_path(&c.config)?;
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, body).map_err(|e| Failure::Config(format!("{}: {e}", p.display()))),
        None => {
            io::stdout().lock().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn thresholds(a: &CcdfArgs) -> Result<Vec<f64>, Failure> {
    if !(a.step_db > 0.0) || !(a.max_db >= a.min_db) || !a.max_db.is_finite() || !a.min_db.is_finite() {
        return Err(Failure::Config(
            "need finite --min-db <= --max-db and --step-db > 0".into(),
        ));
    }
    let steps = ((a.max_db - a.min_db) / a.step_db + 1e-9).floor() as usize;
    Ok((0..=steps).map(|i| a.min_db + i as f64 * a.step_db).collect())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(a) => {
            let Format::Csv = a.format;
            let s = load(&a.common)?;
            emit(a.out.as_deref(), &to_csv(&run_with_workers(&s, a.workers)?))
        }
        Command::Sweep(a) => {
            let Format::Csv = a.format;
            let s = load(&a.common)?;
            emit(a.out.as_deref(), &to_csv(&sweep_with_workers(&s, a.workers)?))
        }
        Command::InspectChannel(a) => {
            let s = load(&a.common)?;
            let report = inspect_channel(&s)?;
            let files = report
                .write_dir(&a.out)
                .map_err(|e| Failure::Config(format!("{}: {e}", a.out.display())))?;
            for f in files {
                println!("wrote {}", f.display());
            }
            println!("frequency correlation length: {} bins", report.correlation_length);
            Ok(())
        }
        Command::PaprCcdf(a) => {
            let Format::Csv = a.run.format;
            let s = load(&a.run.common)?;
            let t = thresholds(&a)?;
            let curves = papr_samples(&s, a.run.workers)?;
            emit(a.run.out.as_deref(), &ccdf_csv(&curves, &t))
        }
        Command::Selftest(a) => {
            let fault = match a.inject_fault {
                None => Fault::None,
                Some(InjectedFault::IsfftSign) => Fault::IsfftSign,
            };
            let report = selftest(fault);
            println!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Selftest)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(msg) => eprintln!("error: {msg}"),
                Failure::Guard(msg) => eprintln!("numerical guard: {msg}"),
                Failure::Selftest => eprintln!("selftest failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
