//! Multi-run drivers: single runs, paired comparisons, parameter sweeps and
//! the secure-aggregation boundary benchmark.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{percentile_eval, summarize, MetricsError, PercentileLoss, RunSummary};
use crate::orchestrator::ConfigError;
use crate::rng;
use crate::scenario::{Scenario, ScenarioError};
use crate::secagg::{mask_client_update, wire, GroupConfig, SecAggError, TrustedParty, TrustedPartyChannel};
use crate::simulator::{run_with_world, SimError, SimOutcome, World};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    SecAgg(#[from] SecAggError),
    #[error("scenarios must share population and data specs: {0}")]
    PopulationMismatch(String),
    #[error("sweep point {axis}={value}: {reason}")]
    InvalidPoint { axis: SweepAxis, value: usize, reason: String },
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("trusted party refused: {0}")]
    TrustedParty(String),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Percentile cuts reported for every final model.
pub const PERCENTILE_CUTS: [f64; 3] = [0.0, 75.0, 99.0];

/// A finished run with everything needed to report on it.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub outcome: SimOutcome,
    pub summary: RunSummary,
}

pub fn run_scenario(scenario: &Scenario) -> Result<(RunRecord, World), ExperimentError> {
    scenario.validate()?;
    let world = World::build(scenario)?;
    let record = run_on(scenario, &world)?;
    Ok((record, world))
}

pub fn run_on(scenario: &Scenario, world: &World) -> Result<RunRecord, ExperimentError> {
    let outcome = run_with_world(scenario, world)?;
    let summary = summarize(scenario, &outcome, world);
    Ok(RunRecord { scenario: scenario.clone(), outcome, summary })
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ExperimentError::Threads(e.to_string()))?;
    Ok(pool.install(f))
}

/// Per-seed view of a paired run, first task of each scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub a: RunSummary,
    pub b: RunSummary,
    /// `time_to_target(b) / time_to_target(a)`.
    pub speedup: Option<f64>,
    /// `trips_to_target(b) / trips_to_target(a)`.
    pub trip_ratio: Option<f64>,
    pub percentiles_a: Vec<PercentileLoss>,
    pub percentiles_b: Vec<PercentileLoss>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub scenario_a: String,
    pub scenario_b: String,
    pub runs: Vec<PairedRun>,
    pub mean_speedup: Option<f64>,
    pub mean_trip_ratio: Option<f64>,
    pub mean_ks_d_a: Option<f64>,
    pub mean_ks_d_b: Option<f64>,
    pub mean_percentiles_a: Vec<PercentileLoss>,
    pub mean_percentiles_b: Vec<PercentileLoss>,
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(n), Some(d)) if d > 0.0 => Some(n / d),
        (Some(n), Some(d)) if d == 0.0 && n == 0.0 => Some(1.0),
        _ => None,
    }
}

/// Mean of the values if every run produced one.
pub fn mean_all(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.into_iter().collect();
    let v = v?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_percentiles(tables: &[&Vec<PercentileLoss>]) -> Vec<PercentileLoss> {
    let Some(first) = tables.first() else { return Vec::new() };
    first
        .iter()
        .enumerate()
        .map(|(i, row)| PercentileLoss {
            loss: tables.iter().map(|t| t[i].loss).sum::<f64>() / tables.len() as f64,
            ..*row
        })
        .collect()
}

/// Options shared by comparisons and sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub threads: usize,
    pub percentile_examples: usize,
    pub percentile_max_clients: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { threads: 0, percentile_examples: 20, percentile_max_clients: 2000 }
    }
}

/// Runs both scenarios on the same generated population for every seed.
pub fn compare(a: &Scenario, b: &Scenario, seeds: &[u64], opts: ReportOptions) -> Result<CompareReport, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    if a.population != b.population {
        return Err(ExperimentError::PopulationMismatch("[population] tables differ".into()));
    }
    if a.data != b.data {
        return Err(ExperimentError::PopulationMismatch("[data] tables differ".into()));
    }
    a.validate()?;
    b.validate()?;
    let one = |seed: u64| -> Result<PairedRun, ExperimentError> {
        let a = Scenario { seed, ..a.clone() };
        let b = Scenario { seed, ..b.clone() };
        let world = World::build(&a)?;
        let ra = run_on(&a, &world)?;
        let rb = run_on(&b, &world)?;
        let table = |r: &RunRecord| {
            percentile_eval(
                &r.outcome.final_models[0].params,
                &world.workload,
                &world.population,
                &PERCENTILE_CUTS,
                opts.percentile_examples,
                opts.percentile_max_clients,
            )
        };
        let (ta, tb) = (&ra.summary.tasks[0], &rb.summary.tasks[0]);
        Ok(PairedRun {
            seed,
            speedup: ratio(tb.time_to_target_s, ta.time_to_target_s),
            trip_ratio: ratio(tb.trips_to_target.map(|t| t as f64), ta.trips_to_target.map(|t| t as f64)),
            percentiles_a: table(&ra)?,
            percentiles_b: table(&rb)?,
            a: ra.summary,
            b: rb.summary,
        })
    };
    let runs = with_threads(opts.threads, || seeds.par_iter().map(|s| one(*s)).collect::<Result<Vec<_>, _>>())??;
    Ok(CompareReport {
        scenario_a: a.name.clone(),
        scenario_b: b.name.clone(),
        mean_speedup: mean_all(runs.iter().map(|r| r.speedup)),
        mean_trip_ratio: mean_all(runs.iter().map(|r| r.trip_ratio)),
        mean_ks_d_a: mean_all(runs.iter().map(|r| r.a.tasks[0].participant_ks.map(|k| k.d_statistic))),
        mean_ks_d_b: mean_all(runs.iter().map(|r| r.b.tasks[0].participant_ks.map(|k| k.d_statistic))),
        mean_percentiles_a: mean_percentiles(&runs.iter().map(|r| &r.percentiles_a).collect::<Vec<_>>()),
        mean_percentiles_b: mean_percentiles(&runs.iter().map(|r| &r.percentiles_b).collect::<Vec<_>>()),
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Concurrency,
    AggregationGoal,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Concurrency => "concurrency",
            SweepAxis::AggregationGoal => "aggregation_goal",
        })
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concurrency" => Ok(SweepAxis::Concurrency),
            "aggregation_goal" | "aggregation-goal" => Ok(SweepAxis::AggregationGoal),
            other => Err(format!("unknown sweep axis `{other}`; expected concurrency or aggregation_goal")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub seeds: usize,
    pub updates_per_hour: f64,
    pub time_to_target_s: Option<f64>,
    pub trips_to_target: Option<f64>,
    pub utilization_fraction: f64,
    pub final_loss: f64,
    /// Summary document hash of each seed's run, in seed order.
    pub summary_sha256: Vec<String>,
}

/// Applies `value` along `axis` to every task of `scenario`.
pub fn sweep_point(scenario: &Scenario, axis: SweepAxis, value: usize) -> Result<Scenario, ExperimentError> {
    let mut s = scenario.clone();
    s.name = format!("{}-{axis}-{value}", scenario.name);
    for t in &mut s.tasks {
        match axis {
            SweepAxis::Concurrency => t.concurrency = value,
            SweepAxis::AggregationGoal => t.aggregation_goal = Some(value),
        }
    }
    s.validate().map_err(|e| ExperimentError::InvalidPoint {
        axis,
        value,
        reason: match e {
            ScenarioError::Config(ConfigError::Invalid { field, reason, .. }) => format!("{field}: {reason}"),
            other => other.to_string(),
        },
    })?;
    Ok(s)
}

/// One row per value, averaged over `seeds`; every point is validated
/// before any run starts.
pub fn sweep(
    scenario: &Scenario,
    axis: SweepAxis,
    values: &[usize],
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<SweepRow>, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    let points = values.iter().map(|v| sweep_point(scenario, axis, *v)).collect::<Result<Vec<_>, _>>()?;
    let worlds = seeds
        .iter()
        .map(|seed| World::build(&Scenario { seed: *seed, ..scenario.clone() }))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..seeds.len()).map(move |s| (p, s))).collect();
    let summaries = with_threads(threads, || {
        jobs.par_iter()
            .map(|&(p, s)| {
                let sc = Scenario { seed: seeds[s], ..points[p].clone() };
                run_on(&sc, &worlds[s]).map(|r| r.summary)
            })
            .collect::<Result<Vec<_>, _>>()
    })??;
    Ok(values
        .iter()
        .enumerate()
        .map(|(p, value)| {
            let rows: Vec<_> = summaries[p * seeds.len()..(p + 1) * seeds.len()].iter().map(|s| &s.tasks[0]).collect();
            let n = rows.len() as f64;
            SweepRow {
                value: *value,
                seeds: rows.len(),
                updates_per_hour: rows.iter().map(|t| t.updates_per_hour).sum::<f64>() / n,
                time_to_target_s: mean_all(rows.iter().map(|t| t.time_to_target_s)),
                trips_to_target: mean_all(rows.iter().map(|t| t.trips_to_target.map(|x| x as f64))),
                utilization_fraction: rows.iter().map(|t| t.utilization_fraction).sum::<f64>() / n,
                final_loss: rows.iter().map(|t| t.final_loss).sum::<f64>() / n,
                summary_sha256: summaries[p * seeds.len()..(p + 1) * seeds.len()].iter().map(RunSummary::sha256).collect(),
            }
        })
        .collect())
}

/// Bytes moved for one aggregation of `k` clients with `m`-length updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub k: usize,
    pub m: usize,
    /// Everything crossing the trusted-party interface.
    pub tsa_bytes: u64,
    /// Process requests only, divided by `k`.
    pub tsa_bytes_per_client: f64,
    /// Unmask vector returned by the trusted party.
    pub tsa_release_bytes: u64,
    /// Masked vectors received by the aggregator.
    pub aggregator_bytes: u64,
}

/// Masks `k` random updates of length `m`, feeds them through the byte
/// interface and checks that the released sum unmasks correctly.
pub fn secagg_bench(k: usize, m: usize, modulus_bits: u32, seed: u64) -> Result<BenchRow, ExperimentError> {
    use rand::Rng;
    let group = GroupConfig::new(modulus_bits, m, 65536.0, k)?;
    let channel = TrustedPartyChannel::new(TrustedParty::new(group, k as u32, rng::derive_seed(seed, "bench-tsa", 0)));
    let vk = channel.verifying_key();
    let initial: Vec<_> =
        channel.initial_messages().iter().map(|b| wire::decode_initial_message(b)).collect::<Result<_, _>>()?;
    let mut acc = vec![0u32; m];
    let mut aggregator_bytes = 0u64;
    let mut r = rng::stream(seed, "bench-values", 0);
    for (i, init) in initial.iter().enumerate() {
        let values: Vec<f64> = (0..m).map(|_| r.gen_range(-1.0..1.0)).collect();
        let sub = mask_client_update(&group, init, &vk, &values, 1, 0, i as u64, rng::derive_seed(seed, "bench-client", i as u64))?;
        let encoded = wire::encode_masked_update(&sub.masked, modulus_bits);
        aggregator_bytes += encoded.len() as u64;
        crate::secagg::add_assign_wrapping(&mut acc, &sub.masked.masked_vector, &group)?;
        channel
            .submit(&wire::encode_process_request(&sub.completing, &sub.envelope))
            .map_err(|e| ExperimentError::TrustedParty(e.to_string()))?;
    }
    let released = channel.request_release().map_err(|e| ExperimentError::TrustedParty(e.to_string()))?;
    let unmask = wire::decode_unmask_vector(&released)?;
    crate::secagg::unmask_sum(&acc, &unmask, &group)?;
    let c = channel.counters();
    Ok(BenchRow {
        k,
        m,
        tsa_bytes: c.total(),
        tsa_bytes_per_client: c.process_bytes_in as f64 / k as f64,
        tsa_release_bytes: c.release_bytes_out,
        aggregator_bytes,
    })
}
