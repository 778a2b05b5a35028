use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gmx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmx")).args(args).output().expect("spawn gmx")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn oracle_prints_closed_forms() {
    let o = gmx(&["oracle", "0.3", "10"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.split('=').nth(1).unwrap().trim().parse().unwrap()
    };
    assert!((value("beta0") - 0.072075922).abs() < 1e-9);
    assert!((value("beta1") - 0.7597469266).abs() < 1e-9);
    assert!((value("minimax_bayes_risk") - 0.0121215232).abs() < 1e-9);
    assert!(text.contains("Beta("));
}

#[test]
fn missing_key_exits_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("mean.toml")).unwrap().replace("n = 10\n", "");
    let path = dir.path().join("broken.toml");
    fs::write(&path, text).unwrap();
    let o = gmx(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`n`"));
}

#[test]
fn eval_examples() {
    let dir = tempfile::tempdir().unwrap();
    let sample = dir.path().join("sample.txt");
    fs::write(&sample, "0.2, 0.4\n").unwrap();
    let ckpt = dir.path().join("affine.json");
    fs::write(&ckpt, gammamax::nets::EstimatorParams::affine(0.0, 1.0).to_json().unwrap()).unwrap();
    let o = gmx(&["eval", ckpt.to_str().unwrap(), sample.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!((stdout(&o).trim().parse::<f64>().unwrap() - 0.3).abs() < 1e-15);

    let counts = dir.path().join("counts.txt");
    fs::write(&counts, "5 5\n").unwrap();
    let o = gmx(&["eval", "baseline:plugin_mm", counts.to_str().unwrap()]);
    assert!((stdout(&o).trim().parse::<f64>().unwrap() - 0.7431).abs() < 1e-4);

    // A real sample is not a count vector.
    let o = gmx(&["eval", "baseline:plugin_mm", sample.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn lp_solve_and_grid_tools() {
    let dir = tempfile::tempdir().unwrap();
    let lp = dir.path().join("lp.json");
    fs::write(&lp, r#"{"objective": [1.0, 2.0, 3.0], "rows": [[0.0, 0.0, 1.0]], "bounds": [0.5]}"#).unwrap();
    let o = gmx(&["lp-solve", lp.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sol: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((sol["value"].as_f64().unwrap() - 2.5).abs() < 1e-12);

    let grid = dir.path().join("grid.json");
    let o = gmx(&["grid", "gen", configs().join("mean.toml").to_str().unwrap(), "--out", grid.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = gmx(&["grid", "inspect", grid.to_str().unwrap()]);
    assert!(o.status.success());
    let mut rows = csv::Reader::from_reader(o.stdout.as_slice());
    assert_eq!(rows.records().count(), 2002);
}

#[test]
fn mean_run_matches_the_closed_form_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("mean.toml");
    let run = |sub: &str, threads: &str| {
        let out = dir.path().join(sub);
        let o = gmx(&["--threads", threads, "--out", out.to_str().unwrap(), "run", config.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("summary.json")).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "2"));
    let s: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let beta = s["coefficients"].as_array().unwrap();
    assert!((beta[0].as_f64().unwrap() - 0.072).abs() <= 0.010);
    assert!((beta[1].as_f64().unwrap() - 0.760).abs() <= 0.020);
    assert!((s["max_bayes_risk"]["value"].as_f64().unwrap() - 0.012).abs() <= 0.002);

    // Artifacts re-parse.
    let out = dir.path().join("a");
    for line in fs::read_to_string(out.join("run.jsonl")).unwrap().lines() {
        let _: gammamax::outer::RoundReport = serde_json::from_str(line).unwrap();
    }
    let mut trace = csv::Reader::from_path(out.join("trace-round-1.csv")).unwrap();
    assert_eq!(trace.headers().unwrap(), vec!["iteration", "bayes_risk", "lower", "upper"]);
    assert!(trace.records().all(|r| r.unwrap()[1].parse::<f64>().is_ok()));
    gammamax::nets::EstimatorParams::load(&out.join("final-estimator.json")).unwrap();
    gammamax::model::Grid::from_json(&fs::read_to_string(out.join("grid-round-1.json")).unwrap()).unwrap();
}
