use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hipexo(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hipexo"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn trial_writes_log_summary_and_traces() {
    let dir = TempDir::new().unwrap();
    let o = hipexo(&["trial", "--seed", "3"], dir.path());
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    let summary = read_json(&dir.path().join("summary.json"));
    let outcome = summary["outcome"].as_str().unwrap();
    assert!(outcome == "success" || outcome == "budget_exceeded");
    assert_eq!(summary["seed"], 3);
    assert_eq!(o.status.code() == Some(0), outcome == "success");

    let log = fs::read_to_string(dir.path().join("trial.csv")).unwrap();
    let header = log.lines().next().unwrap();
    assert_eq!(
        header,
        "k,t_peak,t_offset,eta,x,d_peak,d_offset,cost,policy_version"
    );
    assert!(log.lines().count() > 1);
    let traces = fs::read_to_string(dir.path().join("traces.csv")).unwrap();
    assert!(traces.starts_with("time_s,torque_Nm,velocity_rad_s\n"));
}

#[test]
fn exhausted_budget_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let o = hipexo(&["trial", "--set", "trial.cycle_budget=0"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["outcome"], "budget_exceeded");
    assert_eq!(summary["cycles_used"], 0);
}

#[test]
fn trial_output_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    hipexo(&["trial", "--seed", "11"], a.path());
    hipexo(&["trial", "--seed", "11"], b.path());
    for file in ["trial.csv", "summary.json", "traces.csv"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn small_sweep_has_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let o = hipexo(&["sweep", "--grid", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        if &row[5] == "true" {
            let eta: f64 = row[4].parse().unwrap();
            assert!((0.0..=1.0).contains(&eta));
        } else {
            assert_eq!(&row[4], "");
        }
    }
}

#[test]
fn batch_of_one_matches_single_trial() {
    let (b, t) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let o = hipexo(&["batch", "--seeds", "1", "--seed", "5"], b.path());
    assert!(o.status.success(), "{}", stderr(&o));
    hipexo(&["trial", "--seed", "5"], t.path());
    assert_eq!(
        fs::read(b.path().join("trials/seed_5.csv")).unwrap(),
        fs::read(t.path().join("trial.csv")).unwrap()
    );
    let batch = read_json(&b.path().join("batch_summary.json"));
    assert_eq!(batch["summary"]["seeds"], serde_json::json!([5]));
    assert_eq!(
        batch["trials"][0],
        read_json(&t.path().join("summary.json"))
    );
}

fn write_power(path: &Path, n: usize, power: impl Fn(f64) -> (f64, f64)) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["time_s", "torque_Nm", "velocity_rad_s"])
        .unwrap();
    let dt = 1.0 / (n - 1) as f64;
    for i in 0..n {
        let t = i as f64 * dt;
        let (tau, vel) = power(t);
        w.write_record([t.to_string(), tau.to_string(), vel.to_string()])
            .unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn analyze_positive_half_sine_has_no_negative_work() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("power.csv");
    write_power(&input, 1001, |t| ((std::f64::consts::PI * t).sin(), 1.0));
    let power = input.to_str().unwrap();
    let o = hipexo(&["analyze", "--power", power], &dir.path().join("out"));
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = read_json(&dir.path().join("out/metrics.json"));
    assert_eq!(metrics["power"]["eta"], 0.0);
    assert_eq!(metrics["power"]["negative_work"], 0.0);
}

#[test]
fn analyze_reproduces_trial_ratio_and_mirrors_under_sign_flip() {
    let dir = TempDir::new().unwrap();
    let run = dir.path().join("run");
    hipexo(
        &["trial", "--seed", "2", "--set", "plant.work_noise_std=0"],
        &run,
    );
    let logged = read_json(&run.join("summary.json"))["last_cycle_eta"]
        .as_f64()
        .unwrap();

    let traces = run.join("traces.csv");
    let o = hipexo(
        &["analyze", "--power", traces.to_str().unwrap()],
        &dir.path().join("a"),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let eta = read_json(&dir.path().join("a/metrics.json"))["power"]["eta"]
        .as_f64()
        .unwrap();
    assert!((eta - logged).abs() < 1e-9, "{eta} vs {logged}");

    let text = fs::read_to_string(&traces).unwrap();
    let mut lines = text.lines();
    let mut flipped = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let (rest, vel) = line.rsplit_once(',').unwrap();
        let vel: f64 = vel.parse().unwrap();
        flipped.push_str(&format!("{rest},{}\n", -vel));
    }
    let flipped_path = dir.path().join("flipped.csv");
    fs::write(&flipped_path, flipped).unwrap();
    hipexo(
        &["analyze", "--power", flipped_path.to_str().unwrap()],
        &dir.path().join("b"),
    );
    let mirrored = read_json(&dir.path().join("b/metrics.json"))["power"]["eta"]
        .as_f64()
        .unwrap();
    assert!(
        (mirrored - (1.0 - eta)).abs() < 1e-9,
        "{mirrored} vs {}",
        1.0 - eta
    );
}

#[test]
fn malformed_csv_names_the_row() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("power.csv");
    fs::write(
        &input,
        "time_s,torque_Nm,velocity_rad_s\n0,1,1\n0.1,oops,1\n0.2,1,1\n",
    )
    .unwrap();
    let o = hipexo(
        &["analyze", "--power", input.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[trial]\ncycle_budjet = 100\n").unwrap();
    let o = hipexo(
        &["trial", "--config", cfg.to_str().unwrap()],
        &dir.path().join("out"),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cycle_budjet"), "{}", stderr(&o));
}

#[test]
fn shipped_config_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    let o = hipexo(&["sweep", "--grid", "3", "--config", cfg], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}
