use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use oscitune_core::model::three_way;
use oscitune_core::ssa::{PathObserver, PathSummary};
use oscitune_core::{
    sample_path, PathSource, PeriodMeter, PeriodMeterConfig, RngStream, SafetyBounds, SimError,
};

fn oscitune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscitune"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("small.json");
    fs::write(
        &path,
        format!(
            r#"{{
        "model": "three-way",
        "fixed_params": {{"r_B": 1.0, "r_C": 1.0}},
        "prior": {{"r_A": [0.5, 2.0]}},
        "meter": {{"species": "A", "L": 300, "H": 360, "N": 4, "target": 0.01}},
        "algorithm": {{"rejection": {{"n_particles": 6, "epsilon": 0.5 {extra}}}}},
        "master_seed": 11,
        "bounds": {{"max_time": 0.4, "max_events": 1000000}}
    }}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn simulate_zero_events_is_header_only() {
    let o = oscitune(&[
        "simulate",
        "three-way",
        "--param",
        "r_A=1",
        "--param",
        "r_B=1",
        "--param",
        "r_C=1",
        "--events",
        "0",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "time,reaction,A,B,C,D_A,D_B,D_C\n");
}

#[test]
fn simulated_trace_conserves_population_and_is_seeded() {
    let args = [
        "simulate",
        "three-way",
        "--param",
        "r_A=1",
        "--param",
        "r_B=1",
        "--param",
        "r_C=1",
        "--events",
        "5000",
        "--seed",
        "8",
    ];
    let a = stdout(&oscitune(&args));
    assert_eq!(a, stdout(&oscitune(&args)));
    let rows: Vec<&str> = a.lines().skip(1).collect();
    assert_eq!(rows.len(), 5001);
    assert!(rows[0].starts_with("0,,"));
    for row in rows {
        let total: u64 = row
            .split(',')
            .skip(2)
            .map(|v| v.parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 1029);
    }
}

#[test]
fn repressilator_trace_oscillates() {
    let o = oscitune(&[
        "simulate",
        "repressilator",
        "--param",
        "alpha=200",
        "--param",
        "beta=2",
        "--param",
        "n=2",
        "--param",
        "alpha0=0",
        "--t-max",
        "200",
        "--seed",
        "1",
    ]);
    assert!(o.status.success());
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("rep.csv");
    fs::write(&trace, stdout(&o)).unwrap();
    let r = oscitune(&[
        "analyze-trace",
        trace.to_str().unwrap(),
        "--species",
        "P1",
        "--low",
        "50",
        "--high",
        "200",
        "--periods",
        "4",
        "--target",
        "20",
    ]);
    let report: Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert_eq!(report["complete"], true, "{report}");
}

#[test]
fn simulate_reports_missing_parameters() {
    let o = oscitune(&["simulate", "three-way", "--param", "r_A=1", "--t-max", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("r_B") && err.contains("r_C"), "{err}");
}

fn write_trace(dir: &Path, rows: &[(f64, u64)]) -> PathBuf {
    let mut s = String::from("time,reaction,X\n");
    for (t, x) in rows {
        s.push_str(&format!("{t},,{x}\n"));
    }
    let path = dir.join("trace.csv");
    fs::write(&path, s).unwrap();
    path
}

fn analyze(trace: &Path, target: &str, extra: &[&str]) -> Value {
    let mut args = vec![
        "analyze-trace",
        trace.to_str().unwrap(),
        "--species",
        "X",
        "--low",
        "2",
        "--high",
        "8",
        "--periods",
        "3",
        "--target",
        target,
    ];
    args.extend_from_slice(extra);
    let o = oscitune(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn square_wave_fixture() {
    let dir = TempDir::new().unwrap();
    // high/low alternation with period 2.5, starting mid
    let mut rows = vec![(0.0, 5)];
    for k in 0..5 {
        let t = 1.0 + 2.5 * k as f64;
        rows.push((t, 0));
        rows.push((t + 1.25, 10));
    }
    let trace = write_trace(dir.path(), &rows);
    let report = analyze(&trace, "2", &["--max-rule"]);
    assert_eq!(report["periods"], serde_json::json!([2.5, 2.5, 2.5]));
    assert_eq!(report["variance"], 0.0);
    assert_eq!(report["mean"], 2.5);
    assert_eq!(report["distance"], 0.25);
    assert_eq!(report["complete"], true);
    // zero spread wins under the default rule
    assert_eq!(analyze(&trace, "2", &[])["distance"], 0.0);
}

#[test]
fn trace_without_low_entries() {
    let dir = TempDir::new().unwrap();
    let rows = [(0.0, 5), (1.0, 9), (2.0, 4), (3.0, 9)];
    let report = analyze(&write_trace(dir.path(), &rows), "2", &[]);
    assert_eq!(report["periods"], serde_json::json!([]));
    assert_eq!(report["distance"], Value::Null);
    assert_eq!(report["complete"], false);
}

#[test]
fn malformed_trace_fails() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "time,reaction,X\n0,,1\n1,,oops\n").unwrap();
    let o = oscitune(&[
        "analyze-trace",
        path.to_str().unwrap(),
        "--species",
        "X",
        "--low",
        "2",
        "--high",
        "8",
        "--periods",
        "3",
        "--target",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

/// SSA paths driven by `RngStream::new(seed)`, as `simulate` does.
struct PlainSeed(u64);

impl PathSource for PlainSeed {
    fn run_path(&self, _: u64, observer: &mut dyn PathObserver) -> Result<PathSummary, SimError> {
        let m = three_way();
        let bounds = SafetyBounds {
            max_time: 0.4,
            max_events: u64::MAX,
        };
        sample_path(
            &m,
            &[1.0; 3],
            &m.initial_state,
            observer,
            bounds,
            &mut RngStream::new(self.0),
        )
    }
}

#[test]
fn recorded_trace_matches_online_meter() {
    let dir = TempDir::new().unwrap();
    let cfg: PeriodMeterConfig =
        serde_json::from_str(r#"{"species":"A","L":300,"H":360,"N":4,"target":0.01}"#).unwrap();
    let meter = PeriodMeter::new(&cfg, &three_way()).unwrap();
    for seed in ["3", "4"] {
        let trace = dir.path().join(format!("s{seed}.csv"));
        let o = oscitune(&[
            "simulate",
            "three-way",
            "--param",
            "r_A=1",
            "--param",
            "r_B=1",
            "--param",
            "r_C=1",
            "--t-max",
            "0.4",
            "--seed",
            seed,
            "--out",
            trace.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let o = oscitune(&[
            "analyze-trace",
            trace.to_str().unwrap(),
            "--species",
            "A",
            "--low",
            "300",
            "--high",
            "360",
            "--periods",
            "4",
            "--target",
            "0.01",
        ]);
        let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
        let online = meter.run(&PlainSeed(seed.parse().unwrap()), 0).unwrap();
        assert!(online.accepted);
        let close = |k: &str, v: f64| (report[k].as_f64().unwrap() - v).abs() <= 1e-9;
        assert!(close("mean", online.mean), "{report} {online:?}");
        assert!(close("variance", online.variance));
        assert!(close("distance", online.distance));
    }
}

#[test]
fn validate_lists_problems() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"model": "three-way", "prior": {"r_A": [0, 10], "zz": [0, 1]},
            "meter": {"species": "Q", "L": 300, "H": 360, "N": 4, "target": 0.01},
            "algorithm": {"smc": {"n_particles": 10, "epsilon_target": 0.1, "max_generations": 3}}}"#,
    )
    .unwrap();
    let o = oscitune(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for needle in ["zz", "r_B", "r_C", "Q"] {
        assert!(err.contains(needle), "{needle}: {err}");
    }
}

#[test]
fn run_writes_reproducible_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), "");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    let o = oscitune(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = oscitune(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--parallelism",
        "3",
    ]);
    assert!(o.status.success());

    let posterior = fs::read_to_string(out_a.join("posterior.csv")).unwrap();
    assert_eq!(
        posterior,
        fs::read_to_string(out_b.join("posterior.csv")).unwrap()
    );
    let lines: Vec<&str> = posterior.lines().collect();
    assert_eq!(lines[0], "particle_index,r_A,weight,distance");
    assert_eq!(lines.len(), 7);
    for l in &lines[1..] {
        let d: f64 = l.split(',').nth(3).unwrap().parse().unwrap();
        assert!(d <= 0.5);
    }
    for f in [
        "generations.json",
        "marginals/r_A.csv",
        "joint/correlations.csv",
    ] {
        assert!(out_a.join(f).exists(), "{f}");
    }
    let marginal = fs::read_to_string(out_a.join("marginals/r_A.csv")).unwrap();
    assert_eq!(marginal.lines().count(), 51);

    // the manifest alone reproduces the run
    let manifest = out_a.join("manifest.json");
    let m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["master_seed"], 11);
    assert!(m["simulations"].as_u64().unwrap() >= 6);
    let o = oscitune(&[
        "run",
        manifest.to_str().unwrap(),
        "--out",
        out_c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    for f in ["posterior.csv", "generations.json", "marginals/r_A.csv"] {
        assert_eq!(
            fs::read(out_a.join(f)).unwrap(),
            fs::read(out_c.join(f)).unwrap(),
            "{f}"
        );
    }

    let o = oscitune(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_c.to_str().unwrap(),
        "--seed",
        "12",
    ]);
    assert!(o.status.success());
    assert_ne!(
        posterior,
        fs::read_to_string(out_c.join("posterior.csv")).unwrap()
    );
}

#[test]
fn budget_abort_exit_code() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), r#", "max_simulations": 2"#);
    let out = dir.path().join("o");
    let o = oscitune(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let g: Value =
        serde_json::from_str(&fs::read_to_string(out.join("generations.json")).unwrap()).unwrap();
    assert_eq!(g["aborted"], true);
}

#[test]
fn shipped_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in [
        "threeway-exp1.json",
        "threeway-exp2.json",
        "repressilator-exp1.json",
        "repressilator-exp2.json",
    ] {
        let o = oscitune(&["validate", configs.join(name).to_str().unwrap()]);
        assert!(
            o.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}
