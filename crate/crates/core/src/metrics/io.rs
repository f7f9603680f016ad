use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{commit_times, eval_series, utilization_series, MetricsError, RunSummary};
use crate::orchestrator::EventRecord;
use crate::simulator::SimOutcome;
use crate::time::to_secs;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io { path: path.display().to_string(), source }
}

/// One JSON object per line.
pub fn write_ndjson(path: &Path, log: &[EventRecord]) -> Result<(), MetricsError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_ndjson(path: &Path) -> Result<Vec<EventRecord>, MetricsError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_csv_series<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct ArtifactPaths {
    pub events: PathBuf,
    pub summary: PathBuf,
    pub utilization: PathBuf,
    pub evaluations: PathBuf,
    pub commits: PathBuf,
}

#[derive(Serialize)]
struct UtilizationRow<'a> {
    task: &'a str,
    t_s: f64,
    active: usize,
}

#[derive(Serialize)]
struct EvalRow<'a> {
    task: &'a str,
    t_s: f64,
    version: u64,
    loss: f64,
}

#[derive(Serialize)]
struct CommitRow<'a> {
    task: &'a str,
    t_s: f64,
    version: u64,
}

/// Writes `events.ndjson`, `summary.json` and the CSV series into `dir`.
pub fn write_run_artifacts(dir: &Path, outcome: &SimOutcome, summary: &RunSummary) -> Result<ArtifactPaths, MetricsError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = ArtifactPaths {
        events: dir.join("events.ndjson"),
        summary: dir.join("summary.json"),
        utilization: dir.join("utilization.csv"),
        evaluations: dir.join("evaluations.csv"),
        commits: dir.join("commits.csv"),
    };
    write_ndjson(&paths.events, &outcome.log)?;
    std::fs::write(&paths.summary, summary.to_json()).map_err(io_err(&paths.summary))?;
    let ids = &outcome.task_ids;
    let tasks = || ids.iter().enumerate().map(|(i, id)| (i as u32, id.as_str()));
    write_csv_series(
        &paths.utilization,
        tasks().flat_map(|(t, task)| {
            utilization_series(&outcome.log, t).into_iter().map(move |p| UtilizationRow { task, t_s: to_secs(p.t), active: p.active })
        }),
    )?;
    write_csv_series(
        &paths.evaluations,
        tasks().flat_map(|(t, task)| {
            eval_series(&outcome.log, t).into_iter().map(move |(at, version, loss)| EvalRow { task, t_s: to_secs(at), version, loss })
        }),
    )?;
    write_csv_series(
        &paths.commits,
        tasks().flat_map(|(t, task)| {
            commit_times(&outcome.log, t)
                .into_iter()
                .enumerate()
                .map(move |(k, at)| CommitRow { task, t_s: to_secs(at), version: k as u64 + 1 })
        }),
    )?;
    Ok(paths)
}
