use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bnpmmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnpmmd")).args(args).env_remove("BNPMMD_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bnpmmd(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_sample(dir: &Path, name: &str, rows: usize, cols: usize) -> PathBuf {
    let p = dir.join(name);
    let text: String = (0..rows)
        .map(|i| (0..cols).map(|j| format!("{}", ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0)).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(&p, text).unwrap();
    p
}

/// Run, snapshot `outputs`, delete them, replay the manifest, and compare.
fn assert_replay_identical(args: &[&str], outputs: &[PathBuf], manifest: &Path) {
    ok(args);
    let before: Vec<Vec<u8>> = outputs.iter().map(|p| fs::read(p).unwrap()).collect();
    for p in outputs {
        fs::remove_file(p).unwrap();
    }
    ok(&["replay", "--manifest", path_str(manifest)]);
    for (p, b) in outputs.iter().zip(&before) {
        assert_eq!(&fs::read(p).unwrap(), b, "{} differs after replay", p.display());
    }
}

#[test]
fn mmd_of_a_sample_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_sample(dir.path(), "a.csv", 20, 3);
    let stdout = ok(&["mmd", "--x", path_str(&a), "--y", path_str(&a), "--kernel", "gaussian:80"]);
    let v: f64 = stdout.trim().parse().unwrap();
    assert!(v.abs() <= 1e-12, "{stdout}");
}

#[test]
fn missing_flag_is_a_usage_error_naming_it() {
    let out = bnpmmd(&["mmd", "--x", "a.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--y"));
}

#[test]
fn unknown_subcommand_gets_a_suggestion() {
    let out = bnpmmd(&["gof-tset"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gof-test"));
}

#[test]
fn runtime_failure_exits_one() {
    let out = bnpmmd(&["mmd", "--x", "/nonexistent/a.csv", "--y", "/nonexistent/b.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dp_sample_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("draws/prior.csv");
    let args = ["dp-sample", "--a", "5", "--d", "2", "--seed", "3", "--out", path_str(&out)];
    assert_replay_identical(&args, std::slice::from_ref(&out), &dir.path().join("draws/prior.manifest.json"));
    let rows = fs::read_to_string(&out).unwrap();
    let total: f64 = rows.lines().map(|l| l.split(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(rows.lines().all(|l| l.split(',').count() == 3));
}

#[test]
fn roc_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, svg, json) = (dir.path().join("roc.csv"), dir.path().join("roc.svg"), dir.path().join("roc.json"));
    let args = [
        "roc", "--null", "no_difference", "--alt", "mean_shift", "--d", "3", "--n", "12", "--reps", "4", "--ell", "60",
        "--seed", "9", "--out", path_str(&csv), "--svg", path_str(&svg), "--json", path_str(&json),
    ];
    assert_replay_identical(&args, &[csv.clone(), svg.clone(), json.clone()], &dir.path().join("roc.manifest.json"));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert!(text.lines().all(|l| l.split(',').count() == 3));
    assert!(fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn gof_test_report_has_the_documented_fields() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sample(dir.path(), "x.csv", 30, 2);
    let report = dir.path().join("report.json");
    let stdout = ok(&[
        "gof-test", "--data", path_str(&data), "--model", "no_difference", "--ell", "100", "--seed", "5", "--out",
        path_str(&report),
    ]);
    assert!(stdout.lines().any(|l| l.starts_with("rb\t")));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let rb = v["rb"].as_f64().unwrap();
    assert!((0.0..=20.0).contains(&rb));
    assert!((0.0..=1.0).contains(&v["strength"].as_f64().unwrap()));
    assert!(v["decision"].is_string());
    assert!(v["n_terms_used"].as_u64().unwrap() >= 2);
    assert_eq!(v["prior_samples"].as_array().unwrap().len(), 100);
    assert_eq!(v["posterior_samples"].as_array().unwrap().len(), 100);
    assert_eq!(v["sample_size"], 30);
    assert!(dir.path().join("report.manifest.json").is_file());
}

#[test]
fn seed_comes_from_the_environment_when_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_bnpmmd"))
            .args(["dp-sample", "--a", "2", "--d", "1", "--n-terms", "5"])
            .env("BNPMMD_SEED", seed)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(run("17"), run("17"));
    assert_ne!(run("17"), run("18"));
    let explicit = ok(&["dp-sample", "--a", "2", "--d", "1", "--n-terms", "5", "--seed", "17"]);
    assert_eq!(run("17"), explicit.into_bytes());
}

#[test]
fn wide_bandwidth_wins_the_heavy_tail_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    ok(&[
        "bandwidth-sweep", "--null", "no_difference", "--alt", "heavy_tail", "--d", "60", "--n", "50", "--sigmas",
        "2,5,10,20,40,80,median", "--reps", "10", "--ell", "200", "--out", path_str(&out),
    ]);
    let rows: Vec<(String, f64)> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 7);
    let best = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let at_80 = rows.iter().find(|r| r.0 == "80").expect("sigma 80 row").1;
    assert_eq!(at_80, best, "{rows:?}");
}
