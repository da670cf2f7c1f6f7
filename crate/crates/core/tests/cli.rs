use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fracphase::simcli::*;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracphase"))
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn base_config(dir: &Path) -> Value {
    json!({
        "schema_version": 1,
        "model": {"alpha": 0.5, "epsilon": 0.1, "operator": "allen_cahn"},
        "grid": {"dim": 1, "n": 32, "length": 1.0},
        "time": {"t_final": 0.2, "n_steps": 40, "spacing": {"kind": "uniform"}},
        "initial": {"kind": "random", "seed": 7, "amplitude": 0.5, "mean": 0.0},
        "weights": [{"kind": "beta"}, {"kind": "power"}],
        "output": {"directory": dir, "snapshot_stride": 10}
    })
}

fn write_json(dir: &Path, name: &str, v: &Value) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn simulate(cfg: &Value, tmp: &TempDir) -> Output {
    let path = write_json(tmp.path(), "config.json", cfg);
    bin().arg("simulate").arg(path).output().unwrap()
}

#[test]
fn simulate_writes_verified_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("run");
    let out = simulate(&base_config(&out_dir), &tmp);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [ENERGY_CSV, REPORT_JSON, MANIFEST_JSON] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    assert!(verify_manifest(&out_dir).unwrap());

    // snapshots at 0, 10, 20, 30, 40
    let mut snaps: Vec<_> = fs::read_dir(out_dir.join(SNAPSHOT_DIR)).unwrap().map(|e| e.unwrap().path()).collect();
    snaps.sort();
    assert_eq!(snaps.len(), 5);
    let (field, t) = decode_snapshot(&fs::read(snaps.last().unwrap()).unwrap()).unwrap();
    assert_eq!(field.grid().n(), 32);
    assert!((t - 0.2).abs() < 1e-14);

    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join(REPORT_JSON)).unwrap()).unwrap();
    assert_eq!(report["all_asserted_pass"], true);
    let cfg = RunConfig::load(&out_dir.join("config.json")).unwrap();
    assert_eq!(report["config_hash"], cfg.hash());

    // tampering is detected
    let csv = out_dir.join(ENERGY_CSV);
    let mut text = fs::read_to_string(&csv).unwrap();
    text.push('\n');
    fs::write(&csv, text).unwrap();
    assert!(!verify_manifest(&out_dir).unwrap());
}

#[test]
fn stationary_initial_data_has_zero_energy() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("run");
    let mut cfg = base_config(&out_dir);
    cfg["initial"] = json!({"kind": "constant", "value": 1.0});
    let out = simulate(&cfg, &tmp);
    assert_eq!(code(&out), EXIT_OK);
    let csv = fs::read_to_string(out_dir.join(ENERGY_CSV)).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 41);
    for row in rows {
        assert_eq!(row.split(',').nth(1).unwrap().parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn invalid_alpha_exits_one_naming_the_key() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config(&tmp.path().join("run"));
    cfg["model"]["alpha"] = json!(1.5);
    let out = simulate(&cfg, &tmp);
    assert_eq!(code(&out), EXIT_INVALID);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.alpha"));
    assert!(!tmp.path().join("run").join(MANIFEST_JSON).exists());
}

#[test]
fn missing_config_and_bad_usage_exit_one() {
    let out = bin().args(["simulate", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(code(&out), EXIT_INVALID);
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(code(&out), EXIT_INVALID);
}

#[test]
fn divergent_run_exits_two() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config(&tmp.path().join("run"));
    // one huge unstabilized step from far outside the wells
    cfg["solver"] = json!({"stabilizer": 0.0});
    cfg["model"]["alpha"] = json!(0.9);
    cfg["time"] = json!({"t_final": 10.0, "n_steps": 2, "spacing": {"kind": "uniform"}});
    cfg["initial"] = json!({"kind": "constant", "value": 3.0});
    let out = simulate(&cfg, &tmp);
    assert_eq!(code(&out), EXIT_BLOWUP);
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn output_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let read = |sub: &str| {
        let mut cfg = base_config(&tmp.path().join(sub));
        cfg["model"]["operator"] = json!("cahn_hilliard");
        let path = write_json(tmp.path(), &format!("{sub}.json"), &cfg);
        assert_eq!(code(&bin().arg("simulate").arg(path).output().unwrap()), EXIT_OK);
        let dir = tmp.path().join(sub);
        let snap = fs::read(dir.join(SNAPSHOT_DIR).join("phi_000040.bin")).unwrap();
        (fs::read(dir.join(ENERGY_CSV)).unwrap(), snap)
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn output_override_flag() {
    let tmp = TempDir::new().unwrap();
    let cfg = base_config(&tmp.path().join("ignored"));
    let path = write_json(tmp.path(), "c.json", &cfg);
    let target = tmp.path().join("override");
    let out = bin().arg("simulate").arg(path).arg("--output").arg(&target).output().unwrap();
    assert_eq!(code(&out), EXIT_OK);
    assert!(target.join(MANIFEST_JSON).is_file());
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn certify_named_kernels() {
    let out = bin().args(["certify", "abel", "--points", "0,0.5,1.2"]).output().unwrap();
    assert_eq!(code(&out), EXIT_OK);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.is_object());

    let out = bin()
        .args(["certify", "kappa-weighted", "--alpha", "0.5", "--weight", "beta", "--random", "8", "--seed", "3"])
        .output()
        .unwrap();
    assert_eq!(code(&out), EXIT_OK);
    let out = bin()
        .args(["certify", "kappa-weighted", "--alpha", "0.3", "--weight", "power", "--random", "8"])
        .output()
        .unwrap();
    assert_eq!(code(&out), EXIT_OK);
    let out = bin().args(["certify", "kappa-energy", "--alpha", "0.7", "--t", "2", "--random", "6"]).output().unwrap();
    assert_eq!(code(&out), EXIT_OK);

    let out = bin().args(["certify", "no-such-kernel", "--points", "0,1"]).output().unwrap();
    assert_eq!(code(&out), EXIT_INVALID);
    let out = bin().args(["certify", "abel", "--points", "0,1,1"]).output().unwrap();
    assert_eq!(code(&out), EXIT_INVALID);
}

#[test]
fn certify_matrix_file_violating_p2() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("m.json");
    fs::write(&path, "[[1, 0.5], [0.5, 0.4]]").unwrap();
    let out = bin().arg("certify").arg(&path).output().unwrap();
    assert_eq!(code(&out), EXIT_FLAG_FAILURE);
    let text = String::from_utf8_lossy(&out.stdout);
    let v: Value = serde_json::from_str(&text).unwrap();
    let margin = find_key(&v, "p2").and_then(|p2| p2["worst_margin"].as_f64()).expect("p2 margin in output");
    assert!(margin <= 0.0, "{margin}");

    fs::write(&path, "[[2, 1], [1, 2]]").unwrap();
    assert_eq!(code(&bin().arg("certify").arg(&path).output().unwrap()), EXIT_OK);
}

fn find_key<'a>(v: &'a Value, key: &str) -> Option<&'a Value> {
    match v {
        Value::Object(m) => m.get(key).or_else(|| m.values().find_map(|x| find_key(x, key))),
        Value::Array(a) => a.iter().find_map(|x| find_key(x, key)),
        _ => None,
    }
}

#[test]
fn sweep_runs_product_and_summarizes() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("sweep");
    let mut base = base_config(&tmp.path().join("unused"));
    base["time"]["n_steps"] = json!(20);
    let cfg = json!({
        "schema_version": 1,
        "base": base,
        "axes": {"alpha": [0.3, 0.7], "seed": [1, 2, 3]},
        "output_directory": out_dir,
    });
    let path = write_json(tmp.path(), "sweep.json", &cfg);
    let out = bin().arg("sweep").arg(&path).env(THREADS_ENV, "2").output().unwrap();
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.split(',').nth(7) == Some("0")));
    let run_dirs = fs::read_dir(&out_dir).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(run_dirs, 6);

    // a single worker gives the same numbers
    let out_dir2 = tmp.path().join("sweep1");
    let mut cfg1 = cfg.clone();
    cfg1["output_directory"] = json!(out_dir2);
    let path = write_json(tmp.path(), "sweep1.json", &cfg1);
    assert_eq!(code(&bin().arg("sweep").arg(&path).env(THREADS_ENV, "1").output().unwrap()), EXIT_OK);
    assert_eq!(summary, fs::read_to_string(out_dir2.join("summary.csv")).unwrap());
}

#[test]
fn sweep_with_seed_axis_needs_random_initial_data() {
    let tmp = TempDir::new().unwrap();
    let mut base = base_config(&tmp.path().join("unused"));
    base["initial"] = json!({"kind": "constant", "value": 0.2});
    let cfg = json!({
        "schema_version": 1,
        "base": base,
        "axes": {"seed": [1, 2]},
        "output_directory": tmp.path().join("s"),
    });
    let path = write_json(tmp.path(), "sweep.json", &cfg);
    assert_eq!(code(&bin().arg("sweep").arg(&path).output().unwrap()), EXIT_INVALID);
}
