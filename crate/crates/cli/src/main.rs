//! `tbdelay`: runs a JSON job through one stage of the pipeline and writes
//! data files, plot scripts and a run manifest into the output directory.
//!
//! Exit codes: 0 success, 2 invalid job, 3 numeric or I/O failure, 4 output
//! written but a solve did not converge.

mod commands;
mod job;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::job::JobSpec;
use crate::output::{job_hash, unix_now, Format, OutDir, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid job: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl From<tbdelay::Error> for CliError {
    fn from(e: tbdelay::Error) -> Self {
        use tbdelay::Error as E;
        match e {
            E::Domain(_) | E::Grid(_) | E::GridMismatch(_) => CliError::Validation(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tbdelay", version, about = "Delayed tuberculosis model: simulation, stability and optimal treatment")]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// JSON job file
    #[arg(long, global = true)]
    job: Option<PathBuf>,

    /// Output directory, created if missing
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for finite-difference Hessians; results do not depend on it
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Format of tabular outputs
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Integrate uncontrolled, or under the job's fixed schedule
    Simulate,
    /// R0 and the equilibria
    Equilibria,
    /// Stability verdicts of the equilibria at the job's infectious delay
    Stability,
    /// Solve the optimal control problem by transcription
    Optimize,
    /// Optimize the switching times of a bang-bang schedule
    Iop,
    /// Continuation in beta
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Equilibria => "equilibria",
            Command::Stability => "stability",
            Command::Optimize => "optimize",
            Command::Iop => "iop",
            Command::Sweep => "sweep",
        }
    }
}

fn run(args: &Args) -> Result<i32, CliError> {
    let started = unix_now();
    let path = args
        .job
        .as_ref()
        .ok_or_else(|| CliError::Validation("--job <path> is required".into()))?;
    let job = JobSpec::load(path)?;
    if args.threads == 0 {
        return Err(CliError::Validation("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build_global()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    let mut out = OutDir::create(&args.out, args.format)?;
    let converged = match args.command {
        Command::Simulate => commands::simulate(&job, &mut out),
        Command::Equilibria => commands::equilibria(&job, &mut out),
        Command::Stability => commands::stability(&job, &mut out),
        Command::Optimize => commands::optimize(&job, &mut out),
        Command::Iop => commands::iop(&job, &mut out),
        Command::Sweep => commands::sweep(&job, &mut out),
    }?;
    let exit_code = if converged { 0 } else { 4 };
    out.finish(RunManifest {
        tool: "tbdelay",
        version: env!("CARGO_PKG_VERSION"),
        command: args.command.name().to_string(),
        scenario: job.scenario.clone(),
        job_hash: job_hash(&job),
        threads: args.threads,
        started_unix: started,
        finished_unix: unix_now(),
        exit_code,
        outputs: Vec::new(),
    })?;
    Ok(exit_code)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => {
            if code == 4 {
                eprintln!("tbdelay: a solve did not converge; outputs in {}", args.out.display());
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("tbdelay: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
