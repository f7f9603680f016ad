use std::path::Path;
use std::process::{Command, Output};

fn asyncfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asyncfl")).args(args).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn sha_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .find_map(|l| l.strip_prefix("summary_sha256 ").map(str::to_string))
        .expect("summary hash printed")
}

#[test]
fn bundled_async_run_reports_time_to_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = asyncfl(&["run", "async_basic", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("summary.json"));
    assert!(summary["tasks"][0]["time_to_target_s"].as_f64().unwrap() > 0.0);
    for f in ["events.ndjson", "utilization.csv", "evaluations.csv", "commits.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn malformed_scenario_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"bad\"\nstop = \"updates=10\"\n[[tasks]]\ntask_id = \"a\"\nmode = \"async\"\nconcurency = 4\n")
        .unwrap();
    let out = asyncfl(&["run", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("concurency"));
}

#[test]
fn invalid_stop_rule_is_rejected() {
    let out = asyncfl(&["run", "async_basic", "--stop", "loss<1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_summaries() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = |d: &Path| asyncfl(&["run", "async_basic", "--seed", "7", "--stop", "updates=800", "--out", d.to_str().unwrap()]);
    let (a, b) = (run(d1.path()), run(d2.path()));
    assert!(a.status.success() && b.status.success());
    assert_eq!(sha_line(&a), sha_line(&b));
    let read = |d: &Path| std::fs::read(d.join("summary.json")).unwrap();
    assert_eq!(read(d1.path()), read(d2.path()));
    assert_eq!(std::fs::read(d1.path().join("events.ndjson")).unwrap(), std::fs::read(d2.path().join("events.ndjson")).unwrap());

    let d3 = tempfile::tempdir().unwrap();
    let c = asyncfl(&["run", "async_basic", "--seed", "8", "--stop", "updates=800", "--out", d3.path().to_str().unwrap()]);
    assert_ne!(sha_line(&a), sha_line(&c));
}

#[test]
fn singleton_sweep_matches_run() {
    let (run_dir, sweep_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let common = ["--seed", "5", "--stop", "updates=800"];
    let mut args = vec!["run", "async_basic", "--out", run_dir.path().to_str().unwrap()];
    args.extend(common);
    assert!(asyncfl(&args).status.success());
    let mut args = vec!["sweep", "async_basic", "--axis", "concurrency", "--values", "32", "--out", sweep_dir.path().to_str().unwrap()];
    args.extend(common);
    let out = asyncfl(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let run = json(&run_dir.path().join("summary.json"));
    let row = &json(&sweep_dir.path().join("sweep.json"))[0];
    let task = &run["tasks"][0];
    assert_eq!(row["seeds"], 1);
    for key in ["updates_per_hour", "utilization_fraction", "final_loss"] {
        assert_eq!(row[key], task[key], "{key}");
    }
    assert!(std::fs::read_to_string(sweep_dir.path().join("sweep.csv")).unwrap().starts_with("axis,value,seeds,"));
}

#[test]
fn invalid_sweep_point_aborts_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = asyncfl(&["sweep", "async_basic", "--axis", "aggregation_goal", "--values", "8,64", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("aggregation_goal=64"));
    assert!(!dir.path().join("sweep.json").exists());
}

#[test]
fn comparing_a_scenario_with_itself_gives_unit_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let out = asyncfl(&[
        "compare", "async_basic", "async_basic", "--seed", "1,2", "--stop", "target-loss=2.5", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("compare.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    assert_eq!(report["mean_speedup"], 1.0);
    assert_eq!(report["mean_trip_ratio"], 1.0);
}

#[test]
fn compare_rejects_different_populations() {
    let dir = tempfile::tempdir().unwrap();
    let out = asyncfl(&["compare", "async_basic", "convergence_compare_sync", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("population"));
}

#[test]
fn secagg_bench_per_client_bytes_independent_of_model_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = asyncfl(&["secagg-bench", "--k", "1,4", "--m", "100,200", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(dir.path().join("secagg_bench.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][3], rows[1][3]);
    assert_eq!(rows[2][3], rows[3][3]);
}

#[test]
fn accept_runs_selected_criteria() {
    let out = asyncfl(&["accept", "--only", "2,4"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS criterion")).count(), 2);
}
