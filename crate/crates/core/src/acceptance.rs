//! Acceptance suite. Each criterion runs at its stated size and tolerance
//! and returns a verdict; [`Suite::run_all`] runs the thirteen in order.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::experiments::{compare, mean_all, run_on, sweep, CompareReport, ReportOptions, SweepAxis, SweepRow};
use crate::metrics::{linear_fit, RunSummary};
use crate::model::{staleness_weight, update_weight};
use crate::orchestrator::{TaskConfig, Transition};
use crate::rng;
use crate::scenario::{FailureEvent, FailureTarget, Scenario, StopRule};
use crate::secagg::{
    add_assign_wrapping, from_fixed_sum, mask_client_update, to_fixed, unmask_sum, GroupConfig, ReleaseRefusal,
    TrustedParty, TsaRejection,
};
use crate::simulator::{execution_spread, SimOutcome, StopReason, World};
use crate::time::{from_secs, to_secs};

pub const SEEDS: [u64; 3] = [1, 2, 3];
pub const TARGET_LOSS: f64 = 1.5;
pub const SERVER_LR: f64 = 0.02;
pub const CONVERGENCE_C: [usize; 3] = [32, 128, 512];
pub const FIXED_GOAL: usize = 16;
pub const OVER_SELECTION: f64 = 0.3;
pub const BIAS_UPDATES: u64 = 25_000;

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_s: f64,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.elapsed_s,
            self.detail
        )
    }
}

fn base_scenario(name: &str, task: TaskConfig, stop: StopRule) -> Scenario {
    let mut task = task;
    task.server_optimizer.learning_rate = SERVER_LR;
    Scenario {
        name: name.to_string(),
        seed: SEEDS[0],
        population: Default::default(),
        data: Default::default(),
        tasks: vec![task],
        cluster: Default::default(),
        simulation: crate::scenario::SimSettings { eval_every: 1, ..Default::default() },
        stop,
        target_loss: Some(TARGET_LOSS),
        failures: Vec::new(),
    }
}

/// Async with the fixed goal against sync with over-selection, same C.
pub fn convergence_pair(concurrency: usize, stop: StopRule) -> (Scenario, Scenario) {
    (
        base_scenario(
            &format!("async-c{concurrency}"),
            TaskConfig::new_async("async", concurrency, FIXED_GOAL),
            stop,
        ),
        base_scenario(
            &format!("sync-c{concurrency}"),
            TaskConfig::new_sync("sync", concurrency, OVER_SELECTION),
            stop,
        ),
    )
}

/// A run whose summary hash the determinism check reproduces.
#[derive(Debug, Clone)]
struct Recorded {
    scenario: Scenario,
    sha256: String,
}

#[derive(Default)]
pub struct Suite {
    recorded: Vec<Recorded>,
    convergence: Option<Result<Vec<(usize, CompareReport)>, String>>,
}

type Check = Result<String, String>;

fn verdict(id: u32, title: &'static str, started: Instant, check: Check) -> Verdict {
    let (passed, detail) = match check {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Verdict { id, title, passed, detail, elapsed_s: started.elapsed().as_secs_f64() }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.3}"))
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    pub const COUNT: u32 = 13;

    pub fn run_all(&mut self, mut report: impl FnMut(&Verdict)) -> Vec<Verdict> {
        (1..=Self::COUNT)
            .map(|id| {
                let v = self.run(id);
                report(&v);
                v
            })
            .collect()
    }

    pub fn run(&mut self, id: u32) -> Verdict {
        let t = Instant::now();
        match id {
            1 => verdict(1, "secagg end-to-end exactness", t, secagg_exactness()),
            2 => verdict(2, "threshold and replay", t, threshold_and_replay()),
            3 => verdict(3, "trusted-party boundary cost", t, boundary_cost()),
            4 => verdict(4, "staleness math", t, staleness_math()),
            5 => verdict(5, "async/sync degenerate equivalence", t, self.equivalence()),
            6 => verdict(6, "speedup to target loss", t, self.speedup()),
            7 => verdict(7, "communication efficiency", t, self.communication()),
            8 => verdict(8, "utilization", t, self.utilization()),
            9 => verdict(9, "update-rate scaling", t, self.rate_scaling()),
            10 => verdict(10, "aggregation-goal tradeoff", t, self.goal_tradeoff()),
            11 => verdict(11, "sampling bias", t, self.sampling_bias()),
            12 => verdict(12, "failure recovery", t, self.failure_recovery()),
            13 => verdict(13, "determinism", t, self.determinism()),
            _ => verdict(id, "unknown criterion", t, Err(format!("no criterion {id}"))),
        }
    }

    fn record(&mut self, scenario: &Scenario, summary: &RunSummary) {
        self.recorded.push(Recorded { scenario: scenario.clone(), sha256: summary.sha256() });
    }

    fn record_compare(&mut self, a: &Scenario, b: &Scenario, report: &CompareReport) {
        for run in &report.runs {
            self.record(&Scenario { seed: run.seed, ..a.clone() }, &run.a);
            self.record(&Scenario { seed: run.seed, ..b.clone() }, &run.b);
        }
    }

    fn record_sweep(&mut self, scenario: &Scenario, axis: SweepAxis, rows: &[SweepRow]) -> Result<(), String> {
        for row in rows {
            let point = crate::experiments::sweep_point(scenario, axis, row.value).map_err(|e| e.to_string())?;
            for (seed, sha) in SEEDS.iter().zip(&row.summary_sha256) {
                self.recorded.push(Recorded { scenario: Scenario { seed: *seed, ..point.clone() }, sha256: sha.clone() });
            }
        }
        Ok(())
    }

    fn convergence(&mut self) -> Result<Vec<(usize, CompareReport)>, String> {
        if self.convergence.is_none() {
            let result = self.run_convergence();
            self.convergence = Some(result);
        }
        self.convergence.clone().expect("just filled")
    }

    fn run_convergence(&mut self) -> Result<Vec<(usize, CompareReport)>, String> {
        let (probe, _) = convergence_pair(CONVERGENCE_C[0], StopRule::TargetLoss(TARGET_LOSS));
        for seed in SEEDS {
            let world = World::build(&Scenario { seed, ..probe.clone() }).map_err(|e| e.to_string())?;
            let spread = execution_spread(&world.population);
            ensure(spread >= 100.0, || format!("straggler gate: p99/p1 execution time {spread:.1} < 100 (seed {seed})"))?;
        }
        let mut out = Vec::new();
        for c in CONVERGENCE_C {
            let (a, b) = convergence_pair(c, StopRule::TargetLoss(TARGET_LOSS));
            let report = compare(&a, &b, &SEEDS, ReportOptions::default()).map_err(|e| e.to_string())?;
            self.record_compare(&a, &b, &report);
            out.push((c, report));
        }
        Ok(out)
    }

    fn equivalence(&mut self) -> Check {
        let concurrency = 8;
        let stop = StopRule::Versions(50);
        let mut asynchronous = TaskConfig::new_async("barrier", concurrency, concurrency);
        asynchronous.barrier = true;
        let mut a = base_scenario("equivalence-async", asynchronous, stop);
        let mut b = base_scenario("equivalence-sync", TaskConfig::new_sync("plain", concurrency, 0.0), stop);
        for s in [&mut a, &mut b] {
            s.population.population_size = 5_000;
            s.data.dim = 100;
            s.data.eval_examples = 500;
            s.seed = 7;
        }
        let world = World::build(&a).map_err(|e| e.to_string())?;
        let ra = run_on(&a, &world).map_err(|e| e.to_string())?;
        let rb = run_on(&b, &world).map_err(|e| e.to_string())?;
        self.record(&a, &ra.summary);
        self.record(&b, &rb.summary);
        let traj = |o: &SimOutcome| -> Vec<(u64, u64, u64)> {
            o.log
                .iter()
                .filter(|r| r.transition == Transition::Evaluated)
                .map(|r| (r.t, r.version.unwrap_or(0), r.value.unwrap_or(f64::NAN).to_bits()))
                .collect()
        };
        let (ta, tb) = (traj(&ra.outcome), traj(&rb.outcome));
        ensure(ta.len() == 51, || format!("expected 51 evaluations, got {}", ta.len()))?;
        ensure(ta == tb, || "evaluation trajectories differ".into())?;
        let bits = |o: &SimOutcome| o.final_models[0].params.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        ensure(bits(&ra.outcome) == bits(&rb.outcome), || "final parameters differ".into())?;
        Ok(format!(
            "C=8, 50 versions: {} evaluations and final parameters bit-identical (loss {:.4})",
            ta.len(),
            ra.outcome.final_loss[0]
        ))
    }

    fn speedup(&mut self) -> Check {
        let reports = self.convergence()?;
        let speedups: Vec<Option<f64>> = reports.iter().map(|(_, r)| r.mean_speedup).collect();
        let detail = reports
            .iter()
            .map(|(c, r)| format!("C={c}: {}", fmt_opt(r.mean_speedup)))
            .collect::<Vec<_>>()
            .join(", ");
        let values: Option<Vec<f64>> = speedups.into_iter().collect();
        let values = values.ok_or_else(|| format!("target not reached in every run; {detail}"))?;
        let at_128 = values[CONVERGENCE_C.iter().position(|c| *c == 128).expect("128 is swept")];
        ensure(at_128 >= 2.0, || format!("speedup at C=128 is {at_128:.3} < 2; {detail}"))?;
        ensure(values.windows(2).all(|w| w[1] >= w[0]), || format!("speedup decreases with C; {detail}"))?;
        Ok(format!("mean sync/async time to loss {TARGET_LOSS}: {detail}"))
    }

    fn communication(&mut self) -> Check {
        let reports = self.convergence()?;
        let detail = reports
            .iter()
            .map(|(c, r)| format!("C={c}: {}", fmt_opt(r.mean_trip_ratio)))
            .collect::<Vec<_>>()
            .join(", ");
        let values: Option<Vec<f64>> = reports.iter().map(|(_, r)| r.mean_trip_ratio).collect();
        let values = values.ok_or_else(|| format!("target not reached in every run; {detail}"))?;
        let last = *values.last().expect("non-empty");
        ensure(last >= 2.0, || format!("trip ratio at C=512 is {last:.3} < 2; {detail}"))?;
        ensure(values.windows(2).all(|w| w[1] > w[0]), || format!("trip ratio not increasing in C; {detail}"))?;
        Ok(format!("mean sync/async trips to target: {detail}"))
    }

    fn utilization(&mut self) -> Check {
        let reports = self.convergence()?;
        let mut lines = Vec::new();
        for (c, report) in &reports {
            for run in &report.runs {
                let a = &run.a.tasks[0];
                let s = &run.b.tasks[0];
                ensure(a.utilization_fraction >= 0.95, || {
                    format!("C={c} seed {}: async utilization {:.3} < 0.95", run.seed, a.utilization_fraction)
                })?;
                let trough = s.max_round_trough.ok_or_else(|| format!("C={c}: sync run has no rounds"))?;
                ensure(trough as f64 <= 0.6 * *c as f64, || {
                    format!("C={c} seed {}: a sync round only fell to {trough} > 0.6C", run.seed)
                })?;
            }
            let mean_util = report.runs.iter().map(|r| r.a.tasks[0].utilization_fraction).sum::<f64>() / 3.0;
            let worst = report.runs.iter().filter_map(|r| r.b.tasks[0].max_round_trough).max().unwrap_or(0);
            lines.push(format!("C={c}: async {:.3}C, worst sync trough {:.3}C", mean_util, worst as f64 / *c as f64));
        }
        Ok(lines.join("; "))
    }

    fn rate_scaling(&mut self) -> Check {
        let sweep_values = [32, 64, 128, 256];
        let (a, _) = convergence_pair(32, StopRule::Time(1800.0));
        let rows = sweep(&a, SweepAxis::Concurrency, &sweep_values, &SEEDS, 0).map_err(|e| e.to_string())?;
        self.record_sweep(&a, SweepAxis::Concurrency, &rows)?;
        let xs: Vec<f64> = rows.iter().map(|r| r.value as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.updates_per_hour).collect();
        let fit = linear_fit(&xs, &ys).ok_or("degenerate fit")?;
        let reports = self.convergence()?;
        let report = &reports.iter().find(|(c, _)| *c == 128).ok_or("no C=128 comparison")?.1;
        let rate = |f: &dyn Fn(&crate::experiments::PairedRun) -> f64| report.runs.iter().map(f).sum::<f64>() / 3.0;
        let ratio = rate(&|r| r.a.tasks[0].updates_per_hour) / rate(&|r| r.b.tasks[0].updates_per_hour);
        let detail = format!(
            "updates/h {:?} at C={:?}, R^2 {:.4}; async/sync rate at C=128 {:.2}",
            ys.iter().map(|y| y.round()).collect::<Vec<_>>(),
            sweep_values,
            fit.r_squared,
            ratio
        );
        ensure(fit.r_squared >= 0.98, || format!("fit too poor: {detail}"))?;
        ensure(ratio >= 8.0, || format!("rate ratio below 8: {detail}"))?;
        Ok(detail)
    }

    fn goal_tradeoff(&mut self) -> Check {
        let goals = [16, 32, 64, 128];
        let (a, _) = convergence_pair(128, StopRule::TargetLoss(TARGET_LOSS));
        let rows = sweep(&a, SweepAxis::AggregationGoal, &goals, &SEEDS, 0).map_err(|e| e.to_string())?;
        self.record_sweep(&a, SweepAxis::AggregationGoal, &rows)?;
        let rates: Vec<f64> = rows.iter().map(|r| r.updates_per_hour).collect();
        let times: Option<Vec<f64>> = rows.iter().map(|r| r.time_to_target_s).collect();
        let detail = format!(
            "K={goals:?}: updates/h {:?}, time to target {:?}",
            rates.iter().map(|r| r.round()).collect::<Vec<_>>(),
            rows.iter().map(|r| r.time_to_target_s.map(|t| t.round())).collect::<Vec<_>>()
        );
        let times = times.ok_or_else(|| format!("target not reached: {detail}"))?;
        ensure(rates.windows(2).all(|w| w[1] < w[0]), || format!("rate not strictly decreasing: {detail}"))?;
        ensure(times.windows(2).all(|w| w[1] > w[0]), || format!("time not strictly increasing: {detail}"))?;
        Ok(detail)
    }

    fn sampling_bias(&mut self) -> Check {
        let (a, b) = convergence_pair(128, StopRule::Updates(BIAS_UPDATES));
        let report = compare(&a, &b, &SEEDS, ReportOptions::default()).map_err(|e| e.to_string())?;
        self.record_compare(&a, &b, &report);
        for run in &report.runs {
            let d = |s: &RunSummary| s.tasks[0].participant_ks.map(|k| k.d_statistic);
            let (da, db) = (d(&run.a).ok_or("missing KS")?, d(&run.b).ok_or("missing KS")?);
            ensure(da < db, || format!("seed {}: async D {da:.5} not below sync D {db:.5}", run.seed))?;
        }
        let da = report.mean_ks_d_a.ok_or("missing KS")?;
        let db = report.mean_ks_d_b.ok_or("missing KS")?;
        let p99 = |rows: &[crate::metrics::PercentileLoss]| rows.iter().find(|r| r.percentile == 99.0).map(|r| r.loss);
        let la = p99(&report.mean_percentiles_a).ok_or("missing 99th percentile row")?;
        let lb = p99(&report.mean_percentiles_b).ok_or("missing 99th percentile row")?;
        let detail = format!(
            "D async {da:.5}, D sync-OS {db:.5} (ratio {:.1}); 99th-percentile loss async {la:.4}, sync-OS {lb:.4}",
            db / da
        );
        ensure(db > 10.0 * da, || format!("D ratio not above 10: {detail}"))?;
        ensure(lb > la, || format!("sync-OS not worse on data-rich clients: {detail}"))?;
        Ok(detail)
    }

    fn failure_recovery(&mut self) -> Check {
        let (mut base, _) = convergence_pair(128, StopRule::TargetLoss(TARGET_LOSS));
        base.name = "failure".into();
        let world = World::build(&base).map_err(|e| e.to_string())?;
        let clean = run_on(&base, &world).map_err(|e| e.to_string())?;
        self.record(&base, &clean.summary);
        let owner = clean
            .outcome
            .log
            .iter()
            .find(|r| r.transition == Transition::TaskPlaced && r.task == Some(0))
            .and_then(|r| r.id)
            .ok_or("no initial placement logged")? as usize;
        let fail_at = 100.0;

        let mut agg = base.clone();
        agg.name = "failure-aggregator".into();
        agg.failures = vec![FailureEvent { at_s: fail_at, target: FailureTarget::Aggregator, index: owner }];
        let ra = run_on(&agg, &world).map_err(|e| e.to_string())?;
        self.record(&agg, &ra.summary);
        let log = &ra.outcome.log;
        ensure(ra.outcome.stop_reason == StopReason::Rule, || "aggregator kill: target not reached".into())?;
        let moved = log
            .iter()
            .any(|r| r.transition == Transition::TaskPlaced && r.t > from_secs(fail_at) && r.id != Some(owner as u64));
        ensure(moved, || "aggregator kill: task was not reassigned".into())?;
        let versions: Vec<u64> =
            log.iter().filter(|r| r.transition == Transition::VersionCommitted).filter_map(|r| r.version).collect();
        ensure(versions.iter().enumerate().all(|(i, v)| *v == i as u64 + 1), || {
            "aggregator kill: a version was committed twice or skipped".into()
        })?;
        let c = ra.outcome.counters[0];
        let goal = FIXED_GOAL as u64;
        let open = c.accepted.checked_sub(goal * c.commits + c.buffered_lost);
        ensure(open.is_some_and(|o| o < goal), || {
            format!("aggregator kill: accepted {} != {goal}·{} + lost {} + open", c.accepted, c.commits, c.buffered_lost)
        })?;
        let allowance = c.buffered_lost.div_ceil(goal) + 1;
        let extra_versions = c.commits.abs_diff(clean.outcome.counters[0].commits);
        let (t_clean, t_agg) = (clean.summary.tasks[0].time_to_target_s, ra.summary.tasks[0].time_to_target_s);

        let mut coord = base.clone();
        coord.name = "failure-coordinator".into();
        coord.failures = vec![FailureEvent { at_s: fail_at, target: FailureTarget::Coordinator, index: 0 }];
        let rc = run_on(&coord, &world).map_err(|e| e.to_string())?;
        self.record(&coord, &rc.summary);
        ensure(rc.outcome.stop_reason == StopReason::Rule, || "coordinator kill: target not reached".into())?;
        let log = &rc.outcome.log;
        let failed = log.iter().find(|r| r.transition == Transition::CoordinatorFailed).ok_or("no coordinator failure")?.t;
        let next = log
            .iter()
            .find(|r| r.transition == Transition::Selected && r.t > failed)
            .ok_or("no selection after the coordinator failure")?
            .t;
        let gap = to_secs(next - failed);
        let recovery = coord.cluster.recovery_period_s;
        ensure(gap >= recovery && gap <= recovery + 0.1, || format!("selection gap {gap:.3}s, recovery period {recovery}s"))?;
        Ok(format!(
            "aggregator {owner} killed at {fail_at}s: target at {} vs {} clean, {} commits vs {} clean (lost {} updates, allowance {allowance} versions, diff {extra_versions}); coordinator killed: target at {}, selection gap {gap:.3}s for a {recovery}s recovery period",
            fmt_opt(t_agg),
            fmt_opt(t_clean),
            c.commits,
            clean.outcome.counters[0].commits,
            c.buffered_lost,
            fmt_opt(rc.summary.tasks[0].time_to_target_s),
        ))
    }

    fn determinism(&mut self) -> Check {
        if self.recorded.is_empty() {
            self.convergence()?;
        }
        let mut worlds: Vec<(Scenario, World)> = Vec::new();
        let mut mismatches = Vec::new();
        for rec in &self.recorded {
            let key = |s: &Scenario| (s.seed, s.population.clone(), s.data.clone());
            let world = match worlds.iter().position(|(s, _)| key(s) == key(&rec.scenario)) {
                Some(i) => &worlds[i].1,
                None => {
                    let w = World::build(&rec.scenario).map_err(|e| e.to_string())?;
                    worlds.push((rec.scenario.clone(), w));
                    &worlds.last().expect("pushed").1
                }
            };
            let again = run_on(&rec.scenario, world).map_err(|e| e.to_string())?;
            if again.summary.sha256() != rec.sha256 {
                mismatches.push(format!("{} seed {}", rec.scenario.name, rec.scenario.seed));
            }
            // keep memory bounded: worlds are only reused for consecutive runs
            if worlds.len() > 2 {
                worlds.remove(0);
            }
        }
        ensure(mismatches.is_empty(), || format!("summaries differ on rerun: {}", mismatches.join(", ")))?;
        Ok(format!("{} acceptance runs repeated with byte-identical summary documents", self.recorded.len()))
    }
}

fn secagg_exactness() -> Check {
    let m = 1000;
    let trials = 100;
    let started = Instant::now();
    let mut worst = 0.0f64;
    for k in [1usize, 5, 50] {
        let group = GroupConfig::new(32, m, 65536.0, k).map_err(|e| e.to_string())?;
        for trial in 0..trials {
            let seed = rng::derive_seed(1, "acceptance-secagg", (k * 1000 + trial) as u64);
            let mut party = TrustedParty::new(group, k as u32, seed);
            let vk = party.verifying_key();
            let initial = party.initial_messages();
            let mut values_rng = rng::stream(seed, "values", 0);
            let mut masked_sum = vec![0u32; m];
            let mut plain_sum = vec![0u32; m];
            let mut real_sum = vec![0.0f64; m];
            for (i, init) in initial.iter().enumerate() {
                let values: Vec<f64> = (0..m).map(|_| values_rng.gen_range(-1.0..1.0)).collect();
                let fixed = values.iter().map(|v| to_fixed(*v, &group)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
                add_assign_wrapping(&mut plain_sum, &fixed, &group).map_err(|e| e.to_string())?;
                real_sum.iter_mut().zip(&values).for_each(|(s, v)| *s += v);
                let sub = mask_client_update(&group, init, &vk, &values, 1, 0, i as u64, rng::derive_seed(seed, "client", i as u64))
                    .map_err(|e| e.to_string())?;
                add_assign_wrapping(&mut masked_sum, &sub.masked.masked_vector, &group).map_err(|e| e.to_string())?;
                party.process(&sub.envelope, &sub.completing).map_err(|e| e.to_string())?;
            }
            let unmask = party.release().map_err(|e| e.to_string())?;
            let recovered = unmask_sum(&masked_sum, &unmask, &group).map_err(|e| e.to_string())?;
            ensure(recovered == plain_sum, || format!("K={k} trial {trial}: unmasked sum differs from the modular sum"))?;
            let bound = k as f64 / (2.0 * group.scaling_factor);
            for (g, r) in recovered.iter().zip(&real_sum) {
                let err = (from_fixed_sum(*g, &group) - r).abs();
                worst = worst.max(err / bound);
                ensure(err <= bound + 1e-12, || format!("K={k} trial {trial}: decode error {err:e} > K/(2c) = {bound:e}"))?;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s, limit 30s"))?;
    Ok(format!("300 trials (K = 1, 5, 50; m = 1000; b = 32) bit-exact; worst decode error {worst:.3} of K/(2c); {secs:.1}s"))
}

fn threshold_and_replay() -> Check {
    let started = Instant::now();
    let m = 16;
    let mut cases = 0;
    for t in 1..=5usize {
        for processed in 0..=t + 2 {
            let group = GroupConfig::new(32, m, 65536.0, t).map_err(|e| e.to_string())?;
            let seed = rng::derive_seed(2, "acceptance-threshold", (t * 100 + processed) as u64);
            let slots = (t + 2) as u32;
            let mut replayed = TrustedParty::new(group, slots, seed);
            let mut reference = TrustedParty::new(group, slots, seed);
            let vk = replayed.verifying_key();
            let initial = replayed.initial_messages();
            let mut subs = Vec::new();
            for (i, init) in initial.iter().take(processed).enumerate() {
                let values = vec![0.25; m];
                let sub = mask_client_update(&group, init, &vk, &values, 1, 0, i as u64, rng::derive_seed(seed, "c", i as u64))
                    .map_err(|e| e.to_string())?;
                replayed.process(&sub.envelope, &sub.completing).map_err(|e| e.to_string())?;
                reference.process(&sub.envelope, &sub.completing).map_err(|e| e.to_string())?;
                subs.push(sub);
            }
            for sub in &subs {
                let again = replayed.process(&sub.envelope, &sub.completing);
                ensure(matches!(again, Err(TsaRejection::ReplayedSlot(_))), || {
                    format!("t={t} processed={processed}: replay was not rejected ({again:?})")
                })?;
            }
            ensure(replayed.processed_count() == processed, || "replay changed the processed count".into())?;
            let released = replayed.release();
            let expected = reference.release();
            if processed < t {
                ensure(matches!(released, Err(ReleaseRefusal::BelowThreshold { .. })), || {
                    format!("t={t}: released with only {processed} processed")
                })?;
            } else {
                ensure(released.is_ok() && released == expected, || {
                    format!("t={t} processed={processed}: replays altered the accumulator")
                })?;
                ensure(matches!(replayed.release(), Err(ReleaseRefusal::AlreadyReleased)), || "second release allowed".into())?;
                if let Some(sub) = subs.first() {
                    ensure(matches!(replayed.process(&sub.envelope, &sub.completing), Err(TsaRejection::Released)), || {
                        "processed after release".into()
                    })?;
                }
            }
            cases += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.1}s, limit 5s"))?;
    Ok(format!("{cases} (t, processed) cases for t = 1..5 exhaustively; {secs:.2}s"))
}

fn boundary_cost() -> Check {
    let started = Instant::now();
    let ms = [1_000usize, 10_000, 100_000];
    let mut lines = Vec::new();
    for k in [10usize, 100] {
        let rows = ms
            .iter()
            .map(|m| crate::experiments::secagg_bench(k, *m, 32, 3))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let per_client: Vec<f64> = rows.iter().map(|r| r.tsa_bytes_per_client).collect();
        let lo = per_client.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = per_client.iter().cloned().fold(0.0, f64::max);
        ensure(hi / lo - 1.0 < 0.01, || format!("K={k}: per-client trusted-party bytes vary {per_client:?}"))?;
        for r in &rows {
            let payload = (r.k * r.m * 4) as f64;
            let overhead = r.aggregator_bytes as f64 / payload - 1.0;
            ensure((0.0..0.01).contains(&overhead), || {
                format!("K={k} m={}: aggregator bytes {} not proportional to K·m", r.m, r.aggregator_bytes)
            })?;
        }
        lines.push(format!(
            "K={k}: {:.0} trusted-party bytes per client at m = 10^3..10^5, aggregator bytes {:?}",
            per_client[0],
            rows.iter().map(|r| r.aggregator_bytes).collect::<Vec<_>>()
        ));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s, limit 60s"))?;
    Ok(lines.join("; "))
}

fn staleness_math() -> Check {
    let mut worst = 0.0f64;
    for s in 0..=10_000u64 {
        let oracle = 1.0 / (1.0 + s as f64).sqrt();
        let w = staleness_weight(s);
        let rel = ((w - oracle) / oracle).abs();
        worst = worst.max(rel);
        ensure(rel <= 2.0 * f64::EPSILON, || format!("s={s}: {w} vs {oracle}"))?;
        for n in [1u64, 7, 1000] {
            let uw = update_weight(n, s).map_err(|e| e.to_string())?;
            ensure(uw == n as f64 * w, || format!("n={n} s={s}: {uw} != n·w"))?;
        }
    }
    Ok(format!("s in 0..=10^4: worst relative error {worst:e}; n·w product exact"))
}

/// Mean of per-seed values, or `None` if any is missing.
pub fn seed_mean(values: &[Option<f64>]) -> Option<f64> {
    mean_all(values.iter().copied())
}
