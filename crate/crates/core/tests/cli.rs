use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ergoselect::io::{read_grid_csv, sha256_hex, ExperimentManifest};
use serde_json::{json, Value};

const COS4PI: &str = r#"{"family": "mechanical", "potential": {"modes": [{"amplitude": 1.0, "frequency": [2]}]}}"#;

fn hamiltonian() -> Value {
    serde_json::from_str(COS4PI).unwrap()
}

fn run(command: &str, config: &Value, dir: &Path, extra: &[&str], env: &[(&str, &str)]) -> Output {
    let cfg_path = dir.with_extension("json");
    fs::write(&cfg_path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ergoselect"));
    cmd.arg(command).arg("--config").arg(&cfg_path).arg("--out").arg(dir).args(extra);
    cmd.env_remove("ERGOSELECT_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn manifest(dir: &Path) -> ExperimentManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_hashes(dir: &Path) -> BTreeMap<String, String> {
    manifest(dir)
        .files
        .into_iter()
        .filter(|f| f.path.ends_with(".csv"))
        .map(|f| (f.path, f.sha256))
        .collect()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn solve_config(lambda: f64) -> Value {
    json!({
        "model": {"hamiltonian": hamiltonian()},
        "grid": {"n": 128},
        "experiment": {"name": "solve", "params": {"lambda": lambda}},
    })
}

#[test]
fn trivial_model_solves_to_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = json!({
        "model": {"hamiltonian": {"family": "mechanical", "potential": {"modes": []}}},
        "grid": {"n": 64},
        "experiment": {"name": "solve", "params": {"lambda": 0.1}},
    });
    let out = run("solve", &cfg, &dir, &[], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (u, name) = read_grid_csv(&dir.join("u.csv")).unwrap();
    assert_eq!(name, "u");
    assert_eq!(u.len(), 64);
    assert!(u.values().iter().all(|&v| v == 0.0));
    assert_eq!(manifest(&dir).status, "ok");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "model": {
            "hamiltonian": hamiltonian(),
            "potential": {"kind": "closed", "series": {"modes": [{"amplitude": 1.0, "frequency": [1]}]}},
        },
        "grid": {"n": 128},
        "experiment": {"name": "select", "params": {"lambdas": [0.1, 0.05, 0.025, 0.0125], "x0": [[0.0], [0.5]]}},
    });
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run("select", &cfg, &a, &["--workers", "1"], &[]).status.code(), Some(0));
    assert_eq!(run("select", &cfg, &b, &["--workers", "4"], &[]).status.code(), Some(0));
    let ha = csv_hashes(&a);
    assert!(ha.contains_key("sweep.csv") && ha.contains_key("u_limit.csv"));
    assert_eq!(ha, csv_hashes(&b));
    for name in ha.keys() {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
}

#[test]
fn manifest_lists_every_file_with_its_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = json!({
        "model": {"hamiltonian": hamiltonian()},
        "grid": {"n": 256},
        "experiment": {"name": "mather", "params": {"lambdas": [0.02, 0.01, 0.005], "x0": [[0.0], [0.25]]}},
        "output": {"formats": ["csv", "json"]},
    });
    let out = run("mather", &cfg, &dir, &[], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let m = manifest(&dir);
    let listed: BTreeMap<String, String> = m.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect();
    let mut on_disk = Vec::new();
    for entry in walk(&dir) {
        let rel = entry.strip_prefix(&dir).unwrap().to_string_lossy().replace('\\', "/");
        if rel == "manifest.json" {
            continue;
        }
        let hash = listed.get(&rel).unwrap_or_else(|| panic!("{rel} missing from manifest"));
        assert_eq!(hash, &sha256_hex(&fs::read(&entry).unwrap()));
        on_disk.push(rel);
    }
    assert_eq!(on_disk.len(), listed.len());
    assert!(listed.contains_key("report.json"));
    assert!(m.certificates.iter().any(|c| c.pass));
    assert_eq!(m.config["experiment"]["params"]["seed"], 0);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn config_errors_exit_2_with_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: Vec<(&str, Value, &str)> = vec![
        ("solve", solve_config(-0.1), "lambda"),
        ("solve", solve_config(0.9), "lambda"),
        ("ergodic", solve_config(0.1), "experiment.name"),
        (
            "solve",
            json!({
                "model": {"hamiltonian": hamiltonian(), "colour": "blue"},
                "grid": {"n": 64},
                "experiment": {"name": "solve", "params": {"lambda": 0.1}},
            }),
            "model.colour",
        ),
        (
            "solve",
            json!({
                "model": {
                    "hamiltonian": hamiltonian(),
                    "discount": {"family": "exp-spatial", "sigma": {"offset": 0.3, "modes": [{"amplitude": 0.5, "frequency": [1]}]}},
                },
                "grid": {"n": 64},
                "experiment": {"name": "solve", "params": {"lambda": 0.1}},
            }),
            "model",
        ),
    ];
    for (i, (command, cfg, field)) in cases.into_iter().enumerate() {
        let out = run(command, &cfg, &tmp.path().join(format!("c{i}")), &[], &[]);
        let err = stderr(&out);
        assert_eq!(out.status.code(), Some(2), "case {i}: {err}");
        assert!(err.contains(field), "case {i}: {err}");
    }

    let path = tmp.path().join("broken.json");
    fs::write(&path, "{\"model\": {\n  \"hamiltonian\": ,\n}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ergoselect"))
        .args(["solve", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn nonconvergence_exits_3_and_keeps_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let mut cfg = solve_config(0.01);
    cfg["experiment"]["params"]["max_iter"] = json!(1);
    cfg["experiment"]["params"]["tol"] = json!(1e-14);
    let out = run("solve", &cfg, &dir, &[], &[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let m = manifest(&dir);
    assert_eq!(m.status, "failed");
    assert_eq!(m.failure.unwrap().exit_code, 3);
}

#[test]
fn certificate_violation_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = json!({
        "model": {"hamiltonian": hamiltonian()},
        "grid": {"n": 256},
        "experiment": {"name": "mather", "params": {"lambdas": [0.02, 0.01], "slack_c": 1e-9}},
    });
    let out = run("mather", &cfg, &dir, &[], &[]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let m = manifest(&dir);
    assert!(m.certificates.iter().any(|c| !c.pass));
    assert_eq!(m.failure.unwrap().exit_code, 4);
}

#[test]
fn worker_count_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = solve_config(0.1);
    let env = [("ERGOSELECT_WORKERS", "3")];
    let dir = tmp.path().join("env");
    assert_eq!(run("solve", &cfg, &dir, &[], &env).status.code(), Some(0));
    assert_eq!(manifest(&dir).workers, 3);

    cfg["output"] = json!({"workers": 2});
    let dir = tmp.path().join("config");
    assert_eq!(run("solve", &cfg, &dir, &[], &env).status.code(), Some(0));
    assert_eq!(manifest(&dir).workers, 2);

    let dir = tmp.path().join("flag");
    assert_eq!(run("solve", &cfg, &dir, &["--workers", "1"], &env).status.code(), Some(0));
    assert_eq!(manifest(&dir).workers, 1);
}

#[test]
fn rate_command_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = json!({
        "model": {
            "hamiltonian": hamiltonian(),
            "discount": {"family": "exp-spatial", "sigma": {"offset": 1.0, "modes": [{"amplitude": 0.5, "frequency": [1]}]}},
        },
        "grid": {"n": 1024},
        "experiment": {"name": "theorem-c", "params": {"lambdas": [0.05, 0.0239, 0.0114, 0.00546, 0.00261]}},
    });
    let out = run("theorem-c", &cfg, &dir, &[], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(dir.join("rate.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|&h| h == "slope").unwrap();
    let slope: f64 = lines.next().unwrap().split(',').nth(col).unwrap().parse().unwrap();
    assert!(slope >= 0.9, "slope {slope}");
}
