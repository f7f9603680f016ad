mod bundled;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asyncfl::acceptance::{Suite, Verdict};
use asyncfl::experiments::{compare, secagg_bench, sweep, BenchRow, ExperimentError, ReportOptions, SweepAxis};
use asyncfl::metrics::{summarize, write_run_artifacts, MetricsError};
use asyncfl::scenario::{Scenario, ScenarioError, StopRule};
use asyncfl::simulator::{run_with_world, SimError, StopReason, World};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("event budget of {budget} exhausted at t={t_s:.3}s; partial artifacts in {dir}")]
    Budget { budget: u64, t_s: f64, dir: PathBuf },
    #[error("no client activity left at t={t_s:.3}s before `{stop}` was met; artifacts in {dir}")]
    Idle { stop: StopRule, t_s: f64, dir: PathBuf },
    #[error("{failed} of {total} acceptance criteria failed")]
    Acceptance { failed: usize, total: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Budget { .. } => 3,
            CliError::Idle { .. } => 4,
            CliError::Acceptance { .. } => 5,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "asyncfl", version, about = "Simulate buffered asynchronous and synchronous federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed override; comma-separated or repeated for multi-seed commands.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop rule override: target-loss=X, updates=N, versions=N or time=S.
    #[arg(long)]
    stop: Option<StopRule>,
    /// Worker threads for multi-run commands; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its event log, CSV series and summary.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run two scenarios on the same populations and report paired ratios.
    Compare {
        a: String,
        b: String,
        #[command(flatten)]
        common: Common,
    },
    /// Vary concurrency or aggregation goal and tabulate the results.
    Sweep {
        scenario: String,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Count bytes crossing the trusted-party and aggregator interfaces.
    SecaggBench {
        #[arg(long = "k", value_delimiter = ',', default_values_t = [10usize, 100])]
        k: Vec<usize>,
        #[arg(long = "m", value_delimiter = ',', default_values_t = [1_000usize, 10_000, 100_000])]
        m: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        bits: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite and print one line per criterion.
    Accept {
        /// Criteria to run, e.g. 1,4,5; all by default.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled scenario names.
    Scenarios,
}

const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { scenario, common } => cmd_run(&scenario, &common),
        Command::Compare { a, b, common } => cmd_compare(&a, &b, &common),
        Command::Sweep { scenario, axis, values, common } => cmd_sweep(&scenario, axis, &values, &common),
        Command::SecaggBench { k, m, bits, seed, out } => cmd_secagg_bench(&k, &m, bits, seed, out.as_deref()),
        Command::Accept { only, out } => cmd_accept(&only, out.as_deref()),
        Command::Scenarios => {
            for (name, _) in bundled::BUNDLED {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn load(arg: &str, common: &Common) -> Result<Scenario, CliError> {
    let mut scenario = bundled::resolve(arg)?;
    if let Some(stop) = common.stop {
        scenario.stop = stop;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn seeds(common: &Common) -> Vec<u64> {
    if common.seed.is_empty() {
        DEFAULT_SEEDS.to_vec()
    } else {
        common.seed.clone()
    }
}

fn out_dir(common: Option<&Path>, default: &str) -> Result<PathBuf, CliError> {
    let dir = common.map_or_else(|| PathBuf::from("out").join(default), Path::to_path_buf);
    fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    write_text(path, &(text + "\n"))
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let err = |source| CliError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn cmd_run(arg: &str, common: &Common) -> Result<(), CliError> {
    let mut scenario = load(arg, common)?;
    if let Some(seed) = common.seed.first() {
        scenario.seed = *seed;
    }
    let dir = out_dir(common.out.as_deref(), &scenario.name)?;
    let world = World::build(&scenario)?;
    let (outcome, exhausted) = match run_with_world(&scenario, &world) {
        Ok(outcome) => (outcome, None),
        Err(SimError::BudgetExhausted { budget, t_s, partial }) => (*partial, Some((budget, t_s))),
        Err(e) => return Err(e.into()),
    };
    let summary = summarize(&scenario, &outcome, &world);
    write_run_artifacts(&dir, &outcome, &summary)?;
    println!("summary_sha256 {}", summary.sha256());
    for t in &summary.tasks {
        println!(
            "task {}: {} versions, {} trips, {:.0} updates/h, final loss {:.4}, time to target {}",
            t.task_id,
            t.versions,
            t.trips,
            t.updates_per_hour,
            t.final_loss,
            t.time_to_target_s.map_or("not reached".into(), |s| format!("{s:.1}s"))
        );
    }
    println!("artifacts in {}", dir.display());
    if let Some((budget, t_s)) = exhausted {
        return Err(CliError::Budget { budget, t_s, dir });
    }
    if outcome.stop_reason == StopReason::Idle {
        return Err(CliError::Idle { stop: scenario.stop, t_s: summary.end_time_s, dir });
    }
    Ok(())
}

fn cmd_compare(a: &str, b: &str, common: &Common) -> Result<(), CliError> {
    let sa = load(a, common)?;
    let sb = load(b, common)?;
    let dir = out_dir(common.out.as_deref(), &format!("{}-vs-{}", sa.name, sb.name))?;
    let opts = ReportOptions { threads: common.threads, ..Default::default() };
    let report = compare(&sa, &sb, &seeds(common), opts)?;
    write_json(&dir.join("compare.json"), &report)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    for run in &report.runs {
        println!("seed {}: speedup {}, trip ratio {}", run.seed, fmt(run.speedup), fmt(run.trip_ratio));
    }
    println!(
        "mean over {} seeds: speedup {}, trip ratio {}, KS D {} vs {}",
        report.runs.len(),
        fmt(report.mean_speedup),
        fmt(report.mean_trip_ratio),
        fmt(report.mean_ks_d_a),
        fmt(report.mean_ks_d_b)
    );
    for (pa, pb) in report.mean_percentiles_a.iter().zip(&report.mean_percentiles_b) {
        println!("percentile {:>4}: loss {:.4} vs {:.4}", pa.percentile, pa.loss, pb.loss);
    }
    println!("report in {}", dir.join("compare.json").display());
    Ok(())
}

fn cmd_sweep(arg: &str, axis: SweepAxis, values: &[usize], common: &Common) -> Result<(), CliError> {
    let scenario = load(arg, common)?;
    let dir = out_dir(common.out.as_deref(), &format!("{}-sweep-{axis}", scenario.name))?;
    let seeds = seeds(common);
    let rows = sweep(&scenario, axis, values, &seeds, common.threads)?;
    write_json(&dir.join("sweep.json"), &rows)?;
    let flat: Vec<SweepCsvRow> = rows
        .iter()
        .map(|r| SweepCsvRow {
            axis: axis.to_string(),
            value: r.value,
            seeds: r.seeds,
            updates_per_hour: r.updates_per_hour,
            time_to_target_s: r.time_to_target_s,
            trips_to_target: r.trips_to_target,
            utilization_fraction: r.utilization_fraction,
            final_loss: r.final_loss,
        })
        .collect();
    write_csv(&dir.join("sweep.csv"), &flat)?;
    println!("{axis},updates_per_hour,time_to_target_s,trips_to_target");
    for r in &flat {
        println!("{},{:.1},{:?},{:?}", r.value, r.updates_per_hour, r.time_to_target_s, r.trips_to_target);
    }
    println!("table in {}", dir.join("sweep.csv").display());
    Ok(())
}

#[derive(serde::Serialize)]
struct SweepCsvRow {
    axis: String,
    value: usize,
    seeds: usize,
    updates_per_hour: f64,
    time_to_target_s: Option<f64>,
    trips_to_target: Option<f64>,
    utilization_fraction: f64,
    final_loss: f64,
}

fn cmd_secagg_bench(ks: &[usize], ms: &[usize], bits: u32, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let dir = out_dir(out, "secagg-bench")?;
    let mut rows: Vec<BenchRow> = Vec::new();
    println!("k,m,tsa_bytes,tsa_bytes_per_client,tsa_release_bytes,aggregator_bytes");
    for &k in ks {
        for &m in ms {
            let r = secagg_bench(k, m, bits, seed)?;
            println!(
                "{},{},{},{:.1},{},{}",
                r.k, r.m, r.tsa_bytes, r.tsa_bytes_per_client, r.tsa_release_bytes, r.aggregator_bytes
            );
            rows.push(r);
        }
    }
    write_csv(&dir.join("secagg_bench.csv"), &rows)?;
    Ok(())
}

fn cmd_accept(only: &[u32], out: Option<&Path>) -> Result<(), CliError> {
    let mut suite = Suite::new();
    let ids: Vec<u32> = if only.is_empty() { (1..=Suite::COUNT).collect() } else { only.to_vec() };
    let mut verdicts: Vec<Verdict> = Vec::new();
    for id in ids {
        let v = suite.run(id);
        println!("{}", v.line());
        verdicts.push(v);
    }
    if let Some(out) = out {
        let dir = out_dir(Some(out), "")?;
        write_json(&dir.join("acceptance.json"), &verdicts)?;
    }
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        return Err(CliError::Acceptance { failed, total: verdicts.len() });
    }
    Ok(())
}
