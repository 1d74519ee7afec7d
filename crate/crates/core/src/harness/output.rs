//! Run directory layout and CSV exports.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Certificate, ConstraintEstimate};
use crate::geometry::Polytope;
use crate::icl::{IterationEntry, Mode, RunOutcome, RunState};
use crate::system::{IterationRecord, LtiTask};

use super::scenario::Scenario;
use super::validate::ValidationReport;

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub name: Option<String>,
    pub mode: Mode,
    pub epsilon: f64,
    pub outcome: RunOutcome,
    pub iterations: usize,
    pub j_bar: Option<usize>,
    pub terminated_at: Option<usize>,
    pub n_it: Option<usize>,
    pub failed_iterations: usize,
    pub aborted_iterations: usize,
    pub master_seed: u64,
    pub estimate: ConstraintEstimate,
    pub terminal: Polytope,
}

impl RunSummary {
    pub fn new(scenario: &Scenario, state: &RunState, records: &[IterationRecord]) -> Self {
        Self {
            schema_version: super::scenario::SCHEMA_VERSION,
            name: scenario.name.clone(),
            mode: state.mode,
            epsilon: state.mode.epsilon(),
            outcome: state.outcome,
            iterations: state.iteration,
            j_bar: state.certificate.j_bar,
            terminated_at: state.certificate.terminated_at,
            n_it: state.certificate.n_it,
            failed_iterations: records.iter().filter(|r| !r.success).count(),
            aborted_iterations: records.iter().filter(|r| r.aborted_at.is_some()).count(),
            master_seed: scenario.master_seed,
            estimate: state.estimate.clone(),
            terminal: state.terminal.clone(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Writes the complete run directory.
pub fn write_run(
    dir: &Path,
    scenario: &Scenario,
    state: &RunState,
    records: &[IterationRecord],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("scenario.json"), scenario.to_json()?)?;
    write_json(
        &dir.join("run.json"),
        &RunSummary::new(scenario, state, records),
    )?;
    write_json(&dir.join("certificate.json"), &state.certificate)?;
    for r in records {
        write_json(&dir.join(format!("iter_{}.json", r.iteration)), r)?;
    }
    for (i, r) in state.warm_start.iter().enumerate() {
        write_json(&dir.join(format!("warm_{}.json", i + 1)), r)?;
    }
    for e in &state.history {
        write_json(&dir.join(format!("estimate_{}.json", e.iteration)), e)?;
    }
    write_trajectory_csv(&dir.join("trajectory.csv"), records)?;
    Ok(())
}

pub fn write_trajectory_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let n = records.first().map_or(0, |r| r.states[0].len());
    let m = records
        .iter()
        .flat_map(|r| r.inputs.first())
        .next()
        .map_or(0, |u| u.len());
    let mut header = vec!["j".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=n).map(|i| format!("w{i}")));
    header.push("flag".into());
    w.write_record(&header).map_err(csv_error)?;
    for r in records {
        for (t, x) in r.states.iter().enumerate() {
            let mut row = vec![r.iteration.to_string(), t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match (r.inputs.get(t), r.disturbances.get(t)) {
                (Some(u), Some(d)) => {
                    row.extend(u.iter().map(|v| v.to_string()));
                    row.extend(d.iter().map(|v| v.to_string()));
                }
                _ => row.extend(std::iter::repeat_n(String::new(), m + n)),
            }
            row.push(u8::from(r.flags[t]).to_string());
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A run directory read back from disk.
pub struct RunDir {
    pub path: PathBuf,
    pub scenario: Scenario,
    pub summary: RunSummary,
    pub certificate: Certificate,
}

impl RunDir {
    pub fn open(path: &Path) -> Result<Self> {
        let scenario = Scenario::load(&path.join("scenario.json"))?;
        let summary: RunSummary = read_json(&path.join("run.json"))?;
        let certificate: Certificate = read_json(&path.join("certificate.json"))?;
        Ok(Self {
            path: path.to_path_buf(),
            scenario,
            summary,
            certificate,
        })
    }

    pub fn task(&self) -> Result<LtiTask> {
        self.scenario.task()
    }

    pub fn history(&self) -> Result<Vec<IterationEntry>> {
        let mut out = Vec::new();
        for j in 1..=self.summary.iterations {
            let p = self.path.join(format!("estimate_{j}.json"));
            if p.exists() {
                out.push(read_json(&p)?);
            }
        }
        Ok(out)
    }

    pub fn validation(&self) -> Result<Option<ValidationReport>> {
        let p = self.path.join("validation.json");
        if p.exists() {
            Ok(Some(read_json(&p)?))
        } else {
            Ok(None)
        }
    }

    pub fn write_validation(&self, report: &ValidationReport) -> Result<()> {
        write_json(&self.path.join("validation.json"), report)
    }
}

/// Summary CSV, one row per run: `epsilon,j_bar,eps_hat,cost_ratio,performance_loss,trials`.
pub fn write_table<W: Write>(
    out: W,
    rows: &[(f64, Option<usize>, &ValidationReport)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "epsilon",
        "j_bar",
        "eps_hat",
        "cost_ratio",
        "performance_loss",
        "trials",
    ])
    .map_err(csv_error)?;
    for (eps, j_bar, r) in rows {
        w.write_record([
            eps.to_string(),
            j_bar.map_or(String::new(), |j| j.to_string()),
            r.eps_hat.to_string(),
            r.cost_ratio.to_string(),
            super::validate::performance_loss(r).to_string(),
            r.trials.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Vertices of every estimate and terminal set, the known set and the true
/// set: `set,iteration,vertex,x1..xn`.
pub fn write_plotdata<W: Write>(out: W, run: &RunDir) -> Result<()> {
    let task = run.task()?;
    let n = task.state_dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "set".to_string(),
        "iteration".to_string(),
        "vertex".to_string(),
    ];
    header.extend((1..=n).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(csv_error)?;
    let mut emit = |set: &str, iteration: Option<usize>, p: &Polytope| -> Result<()> {
        let vertices = if p.is_empty(crate::geometry::LP_FEAS_TOL) {
            Vec::new()
        } else {
            p.vertices()?
        };
        for (k, v) in vertices.iter().enumerate() {
            let mut row = vec![
                set.to_string(),
                iteration.map_or(String::new(), |j| j.to_string()),
                k.to_string(),
            ];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(csv_error)?;
        }
        Ok(())
    };
    emit("true", None, task.true_state())?;
    emit("known", None, &task.known_state)?;
    for e in run.history()? {
        emit("estimate", Some(e.iteration), &e.estimate.state_set)?;
        emit("terminal", Some(e.iteration), &e.terminal)?;
    }
    emit("final", None, &run.summary.estimate.state_set)?;
    w.flush()?;
    Ok(())
}
