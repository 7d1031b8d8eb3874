use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edgegne::config::Config;
use edgegne::stepsizes::validate;
use serde_json::{json, Value};

fn gne(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gne")).args(args).current_dir(cwd).env_remove("GNE_OUT_DIR").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn small_benchmark() -> Value {
    json!({
        "benchmark": { "kind": "demand-response", "users": 3, "seed": 2 },
        "recipe": { "eps": 2 },
        "stop": { "tol": 1e-4, "max_iter": 3000000, "record_every": 50 }
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

/// The small benchmark with its step sizes written out explicitly.
fn explicit(dir: &Path) -> Value {
    let src = write(dir, "bench.json", &small_benchmark());
    let out = gne(&["export", src.to_str().unwrap(), "--out", "explicit.json"], dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(&std::fs::read_to_string(dir.join("explicit.json")).unwrap()).unwrap()
}

#[test]
fn validate_accepts_the_default_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.json", &small_benchmark());
    let out = gne(&["validate", p.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("beta"));
    assert!(text.contains("certificate"));
}

#[test]
fn every_mode_runs_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.json", &small_benchmark());
    for mode in ["sync", "async", "sync-fb", "async-fb"] {
        let out = gne(&["run", p.to_str().unwrap(), "--mode", mode], dir.path());
        assert_eq!(code(&out), 0, "{mode}: {}", String::from_utf8_lossy(&out.stderr));
        let csv = dir.path().join(format!("run-{mode}-seed0.csv"));
        let text = std::fs::read_to_string(&csv).unwrap();
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "k,primal_res,dual_res,fp_res_sq,dist_sq,phi,activation,max_delay_seen");
        assert!(csv.with_extension("summary.json").exists());
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.json", &small_benchmark());
    for mode in ["sync", "async"] {
        let a = gne(&["run", p.to_str().unwrap(), "--mode", mode, "--seed", "5", "--out", "a.csv"], dir.path());
        let b = gne(&["run", p.to_str().unwrap(), "--mode", mode, "--seed", "5", "--out", "b.csv"], dir.path());
        assert_eq!((code(&a), code(&b)), (0, 0));
        let (a, b) = (std::fs::read(dir.path().join("a.csv")).unwrap(), std::fs::read(dir.path().join("b.csv")).unwrap());
        assert!(!a.is_empty());
        assert_eq!(a, b, "{mode}");
    }
}

#[test]
fn sigma_at_its_bound_exits_with_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = explicit(dir.path());
    let cfg = Config::from_json(&v.to_string()).unwrap();
    let inst = cfg.resolve().unwrap();
    let report = validate(&inst.steps, &inst.game, &inst.graph, &inst.consts).unwrap();
    v["steps"]["sigma"][1] = json!(report.players[1].sigma_bound);
    let p = write(dir.path(), "bad.json", &v);
    let out = gne(&["validate", p.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("player 1"));
    assert_eq!(code(&gne(&["run", p.to_str().unwrap()], dir.path())), 1);
}

#[test]
fn nonpositive_beta_blocks_async_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = explicit(dir.path());
    v["steps"]["eta"] = json!(50.0);
    v["stop"]["max_iter"] = json!(2000);
    let p = write(dir.path(), "eta.json", &v);
    let p = p.to_str().unwrap();
    assert_eq!(code(&gne(&["validate", p], dir.path())), 1);
    assert_eq!(code(&gne(&["run", p, "--mode", "async"], dir.path())), 1);
    // The synchronous method ignores the relaxation and still runs.
    assert_eq!(code(&gne(&["run", p, "--mode", "sync"], dir.path())), 0);
    assert_ne!(code(&gne(&["run", p, "--mode", "async", "--force"], dir.path())), 1);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_benchmark();
    v["stop"].as_object_mut().unwrap().remove("tol");
    let p = write(dir.path(), "missing.json", &v);
    assert_eq!(code(&gne(&["validate", p.to_str().unwrap()], dir.path())), 2);

    let mut v = small_benchmark();
    v["recipe"]["unknown"] = json!(1);
    let p = write(dir.path(), "unknown.json", &v);
    assert_eq!(code(&gne(&["run", p.to_str().unwrap()], dir.path())), 2);

    assert_eq!(code(&gne(&["validate", "does-not-exist.json"], dir.path())), 2);
}

#[test]
fn exhausted_iteration_budget_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_benchmark();
    v["stop"]["max_iter"] = json!(5);
    let p = write(dir.path(), "short.json", &v);
    let out = gne(&["run", p.to_str().unwrap(), "--mode", "sync"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(dir.path().join("run-sync-seed0.csv").exists());
}

#[test]
fn sweep_writes_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_benchmark();
    v["stop"]["tol"] = json!(1e-3);
    let p = write(dir.path(), "c.json", &v);
    let out = gne(
        &["sweep", p.to_str().unwrap(), "--vary", "eps", "--values", "1,3", "--seeds", "2", "--out", "sw", "--threshold", "1e-3"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sw = dir.path().join("sw");
    let summary = std::fs::read_to_string(sw.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| !l.starts_with('#')).count(), 3);
    let names: Vec<String> = std::fs::read_dir(&sw).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    let cells = names.iter().filter(|n| n.starts_with("eps-") && n.ends_with(".csv")).count();
    assert_eq!(cells, 4, "{names:?}");
}
