//! Command line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{Error, Result};
use crate::icl::run;

use super::output::{write_plotdata, write_run, write_table, RunDir, RunSummary};
use super::scenario::{ModeName, Scenario};
use super::validate::{monte_carlo_validate, ValidationReport};

#[derive(Debug, Parser)]
#[command(
    name = "rmpc-icl",
    version,
    about = "Robust MPC with iterative constraint learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Prob,
    Robust,
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Certificate mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the learning loop and write a run directory.
    Run {
        scenario: PathBuf,
        /// Run directory (default: scenario output_dir, else runs/<name>-<mode>-<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the Monte Carlo validation.
        #[arg(long)]
        validate: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Monte Carlo validation of a finished run.
    Validate {
        run_dir: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Seed of the validation draws (default: the run's master seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of <run_dir>/validation.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary CSV over several runs.
    Table {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vertices of the estimated, terminal, known and true sets.
    Plotdata {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply(scenario: &mut Scenario, o: &Overrides) -> Result<()> {
    if let Some(s) = o.seed {
        scenario.master_seed = s;
    }
    if let Some(t) = o.trials {
        scenario.monte_carlo_trials = t;
    }
    if let Some(m) = o.mode {
        scenario.certificate.mode = match m {
            ModeArg::Prob => ModeName::Prob,
            ModeArg::Robust => ModeName::Robust,
        };
    }
    if let Some(e) = o.epsilon {
        scenario.certificate.epsilon = e;
    }
    if let Some(b) = o.beta {
        scenario.certificate.beta = b;
    }
    scenario.validate()
}

fn default_dir(s: &Scenario) -> PathBuf {
    let name = s.name.clone().unwrap_or_else(|| "run".into());
    let mode = match s.certificate.mode {
        ModeName::Prob => format!("eps{}", s.certificate.epsilon),
        ModeName::Robust => "robust".into(),
    };
    PathBuf::from("runs").join(format!("{name}-{mode}-seed{}", s.master_seed))
}

fn output<'a>(path: Option<&Path>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(stdout),
    })
}

fn validate_run(
    dir: &RunDir,
    trials: Option<usize>,
    seed: Option<u64>,
) -> Result<ValidationReport> {
    let task = dir.task()?;
    monte_carlo_validate(
        &task,
        &dir.summary.estimate,
        &dir.summary.terminal,
        trials.unwrap_or(dir.scenario.monte_carlo_trials),
        seed.unwrap_or(dir.scenario.master_seed),
        dir.scenario.qp_backend,
    )
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            validate,
            overrides,
        } => {
            let mut s = Scenario::load(&scenario)?;
            apply(&mut s, &overrides)?;
            let dir = out
                .or_else(|| s.output_dir.clone())
                .unwrap_or_else(|| default_dir(&s));
            let task = s.task()?;
            let (state, records) = run(&task, &s.icl_config()?)?;
            write_run(&dir, &s, &state, &records)?;
            let summary = RunSummary::new(&s, &state, &records);
            let mut report = json!({
                "run_dir": dir,
                "outcome": summary.outcome,
                "iterations": summary.iterations,
                "j_bar": summary.j_bar,
                "failed_iterations": summary.failed_iterations,
            });
            if validate {
                let run_dir = RunDir::open(&dir)?;
                let v = validate_run(&run_dir, None, None)?;
                run_dir.write_validation(&v)?;
                report["validation"] = serde_json::to_value(&v)?;
            }
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Command::Validate {
            run_dir,
            trials,
            seed,
            out,
        } => {
            let dir = RunDir::open(&run_dir)?;
            let v = validate_run(&dir, trials, seed)?;
            match out {
                Some(p) => std::fs::write(p, serde_json::to_string_pretty(&v)?)?,
                None => dir.write_validation(&v)?,
            }
            writeln!(stdout, "{}", serde_json::to_string_pretty(&v)?)?;
        }
        Command::Table {
            run_dirs,
            trials,
            out,
        } => {
            let mut reports = Vec::new();
            for p in &run_dirs {
                let dir = RunDir::open(p)?;
                let v = match (dir.validation()?, trials) {
                    (Some(v), None) => v,
                    (Some(v), Some(t)) if v.trials == t => v,
                    _ => {
                        let v = validate_run(&dir, trials, None)?;
                        dir.write_validation(&v)?;
                        v
                    }
                };
                reports.push((dir.summary.epsilon, dir.summary.j_bar, v));
            }
            let rows: Vec<_> = reports.iter().map(|(e, j, v)| (*e, *j, v)).collect();
            write_table(output(out.as_deref(), stdout)?, &rows)?;
        }
        Command::Plotdata { run_dir, out } => {
            let dir = RunDir::open(&run_dir)?;
            write_plotdata(output(out.as_deref(), stdout)?, &dir)?;
        }
    }
    Ok(())
}

/// Machine-readable error report.
pub fn error_json(e: &Error) -> String {
    json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if e.use_stderr() {
                let _ = writeln!(
                    stderr,
                    "{}",
                    json!({ "error": "usage", "message": e.to_string() })
                );
            } else {
                let _ = write!(stdout, "{e}");
            }
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_json(&e));
            1
        }
    }
}
