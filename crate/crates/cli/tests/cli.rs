use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn otgan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otgan"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OTGAN_OUT_DIR")
        .output()
        .expect("run otgan")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn defaults_parse_back_as_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = otgan(&["defaults"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["train"]["batch_size"], 50);
    assert_eq!(v["train"]["critic_freeze_iteration"], 3000);
    let p = dir.path().join("c.json");
    fs::write(&p, stdout(&o)).unwrap();
    let out = dir.path().join("run");
    let o = otgan(
        &["train", "--config", "c.json", "--iterations", "0", "--eval-samples", "50", "--output-dir", "run"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("otgan/metrics.csv").exists());
    assert!(out.join("baseline-gan/metrics.csv").exists());
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = otgan(&["train", "--config", "nope.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn unknown_key_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\n  \"train\": {\n    \"batch_sise\": 4\n  }\n}\n").unwrap();
    let o = otgan(&["train", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.json:3:"), "{err}");
    assert!(err.contains("batch_sise"), "{err}");
}

#[test]
fn invalid_override_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = otgan(&["train", "--batch-size", "1", "--iterations", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = otgan(&["train", "--mode", "wgan"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = otgan(
        &[
            "train",
            "--experiment",
            "single",
            "--mode",
            "ablation-fixed-cost",
            "--iterations",
            "4",
            "--batch-size",
            "8",
            "--eval-every",
            "2",
            "--eval-samples",
            "100",
            "--output-dir",
            "out",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3);
    for f in ["report.json", "timing.csv", "checkpoint.json", "samples_0.csv", "samples_4.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_otgan"))
        .args(["train", "--experiment", "single", "--iterations", "0", "--eval-samples", "20"])
        .current_dir(dir.path())
        .env("OTGAN_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("from-env/metrics.csv").exists());
}

fn write_points(path: &Path, rows: &[[f64; 2]], header: bool) {
    let mut s = String::new();
    if header {
        s.push_str("x,y\n");
    }
    for r in rows {
        s.push_str(&format!("{},{}\n", r[0], r[1]));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn distance_between_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let x = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
    let y = [[0.0, 2.0], [-3.0, 0.0], [4.0, 0.0]];
    write_points(&dir.path().join("x.csv"), &x, true);
    write_points(&dir.path().join("y.csv"), &y, false);

    let o = otgan(&["distance", "x.csv", "y.csv", "--exact"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["distance"].as_f64().unwrap(), 0.0);
    assert_eq!(v["permutation"], serde_json::json!([2, 0, 1]));

    let o = otgan(&["distance", "x.csv", "y.csv", "--epsilon", "0.01"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["converged"].as_bool().unwrap());
    assert!(v["distance"].as_f64().unwrap() < 1e-3);
    assert!(v["marginal_residual"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn ragged_or_mismatched_csv_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("r.csv"), "1,2\n3\n").unwrap();
    write_points(&dir.path().join("y.csv"), &[[1.0, 0.0], [0.0, 1.0]], false);
    write_points(&dir.path().join("z.csv"), &[[1.0, 0.0]], false);
    let o = otgan(&["distance", "r.csv", "y.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("r.csv"));
    let o = otgan(&["distance", "y.csv", "z.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let o = otgan(&["gradcheck", "--seed", "2", "--batch-size", "4"], dir.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS"));

    let o = otgan(&["gradcheck", "--seed", "2", "--batch-size", "4", "--corrupt-backward"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("generator parameter 0"), "{out}");
    assert!(out.contains("FAIL"));
}
