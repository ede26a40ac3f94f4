use std::fs;
use std::path::Path;

use dynaclear::experiment::{run_experiment, schedule_dir_name, sweep, ExperimentConfig, ExperimentError};

fn config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        schedule: "greedy".into(),
        matches: Some(300),
        reps: 6,
        seed: Some(7),
        out: out.to_path_buf(),
        ..Default::default()
    }
}

fn csv_body(path: &Path) -> (String, Vec<String>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let hash = lines.next().unwrap().to_string();
    (hash, lines.map(str::to_string).collect())
}

#[test]
fn simulate_writes_the_four_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let report = run_experiment(&cfg, 1).unwrap();
    let hash_line = format!("# config_hash={}", report.config_hash);

    let (h, trace) = csv_body(&dir.path().join("trace.csv"));
    assert_eq!(h, hash_line);
    assert_eq!(trace[0], "rep,k,time,cost,m_c,m_p,cum_cost,cum_wait");
    assert_eq!(trace.len(), 1 + 6 * 300);

    for name in ["ratios_alpha.csv", "ratios_beta.csv"] {
        let (h, rows) = csv_body(&dir.path().join(name));
        assert_eq!(h, hash_line);
        assert_eq!(rows[0], "x,ratio,stderr,denominator");
        assert_eq!(rows.len(), 6);
    }
    let (_, alpha) = csv_body(&dir.path().join("ratios_alpha.csv"));
    assert!(alpha[1].ends_with(",analytic"));

    let fits: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fits.json")).unwrap()).unwrap();
    assert_eq!(fits["config_hash"], report.config_hash.as_str());
    assert!(fits["alpha_loglog"]["slope"].as_f64().unwrap() > 0.0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], report.config_hash.as_str());
    assert_eq!(summary["config"]["seed"], 7);
    assert_eq!(summary["runs"].as_array().unwrap().len(), 6);
    assert_eq!(summary["runs"][0]["matches"], 300);
}

#[test]
fn identical_config_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&config(a.path()), 1).unwrap();
    run_experiment(&config(b.path()), 3).unwrap();
    for name in [
        "trace.csv",
        "ratios_alpha.csv",
        "ratios_beta.csv",
        "fits.json",
        "summary.json",
    ] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        if name == "summary.json" {
            // the echoed output directory differs
            let strip = |v: Vec<u8>| {
                let mut j: serde_json::Value = serde_json::from_slice(&v).unwrap();
                j["config"]["out"] = serde_json::Value::Null;
                j
            };
            assert_eq!(strip(x), strip(y));
        } else {
            assert_eq!(x, y, "{name}");
        }
    }
}

#[test]
fn sweep_writes_one_folder_per_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.write_trace = false;
    let schedules: Vec<String> = ["power:0.25", "power:0.5", "power:0.75"].map(String::from).to_vec();
    let report = sweep(&cfg, &schedules, 1).unwrap();
    assert_eq!(report.fits.len(), 3);
    for s in &schedules {
        let sub = dir.path().join(schedule_dir_name(s));
        assert!(sub.join("ratios_alpha.csv").exists());
        assert!(sub.join("ratios_beta.csv").exists());
        assert!(!sub.join("trace.csv").exists());
    }
    let combined: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fits.json")).unwrap()).unwrap();
    assert_eq!(combined["fits"].as_array().unwrap().len(), 3);
    assert_eq!(combined["fits"][2]["schedule"], "power:0.75");
}

#[test]
fn decay_runs_report_raw_cost() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.schedule = "power:0.45".into();
    cfg.decay = Some(dynaclear::DecayModel::new(3.0, 1.0).unwrap());
    let report = run_experiment(&cfg, 1).unwrap();
    assert!(report.alpha.iter().all(|r| r.denominator == "raw"));
}

#[test]
fn invalid_configs_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.schedule = "power:x".into();
    match run_experiment(&cfg, 1) {
        Err(ExperimentError::Config { field, .. }) => assert_eq!(field, "schedule"),
        other => panic!("{other:?}"),
    }
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\n  \"schedule\": \"greedy\",\n  \"reps\": -1\n}").unwrap();
    let err = ExperimentConfig::from_json_path(&path).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn write_failure_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let cfg = config(&blocker.join("out"));
    match run_experiment(&cfg, 1) {
        Err(ExperimentError::Io { path, .. }) => assert!(path.starts_with(&blocker)),
        other => panic!("{other:?}"),
    }
}
