use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nvreso"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        out.insert(p.strip_prefix(dir).unwrap().to_owned(), fs::read(&p).unwrap());
    }
    out
}

/// Small power sweep on a coarse quadrature.
fn small_sweep() -> Value {
    json!({
        "experiment": "power-sweep",
        "seed": 3,
        "system": { "ensemble": { "quadrature_points": [4, 4, 4], "n_detuning_samples": 7 } },
        "sweep": { "samples": 200 },
        "power_sweep": { "powers_w": [0.04, 0.16, 0.64] }
    })
}

#[test]
fn unknown_experiment_kind_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "c.json",
        &json!({ "experiment": "teleport", "output_dir": "out" }),
    );
    let out = dir.path().join("out");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("c.json:2:") && err.contains("teleport"), "{err}");
    assert!(!out.exists());
}

#[test]
fn invalid_block_is_anchored_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        "{\n  \"experiment\": \"rabi\",\n  \"rabi\": { \"power_w\": 0.01, \"t_max_us\": -1.0, \"samples\": 100 }\n}\n";
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("c.json:3:"));
    assert!(!out.exists());

    let typo = write_json(dir.path(), "t.json", &json!({ "experiment": "budget", "budgte": {} }));
    assert_eq!(
        code(&run(&[
            "run",
            "--config",
            typo.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])),
        2
    );
    assert!(!out.exists());
}

#[test]
fn power_sweep_columns_and_byte_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "sweep.json", &small_sweep());
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        trees.push(tree(&out));
    }
    assert_eq!(trees[0], trees[1]);

    let csv = String::from_utf8(trees[0][Path::new("sweep.csv")].clone()).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    for col in ["power_w", "omega_r_mhz", "decay_rate_per_us"] {
        assert!(header.contains(&col), "{header:?}");
    }
    assert_eq!(csv.lines().count(), 4);

    let meta: Value = serde_json::from_slice(&trees[0][Path::new("metadata.json")]).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["partial"], false);
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn metadata_echo_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "sweep.json", &small_sweep());
    let first = dir.path().join("first");
    assert_eq!(
        code(&run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            first.to_str().unwrap()
        ])),
        0
    );
    let meta: Value = serde_json::from_slice(&fs::read(first.join("metadata.json")).unwrap()).unwrap();
    let echo = write_json(dir.path(), "echo.json", &meta["config"]);
    let second = dir.path().join("second");
    assert_eq!(
        code(&run(&[
            "run",
            "--config",
            echo.to_str().unwrap(),
            "--out",
            second.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(tree(&first), tree(&second));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "b.json", &json!({ "experiment": "budget", "budget": {} }));
    let out = dir.path().join("out");
    assert_eq!(
        code(&run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "11"
        ])),
        0
    );
    let meta: Value = serde_json::from_slice(&fs::read(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["config"]["seed"], 11);
}

#[test]
fn output_dir_resolves_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "b.json",
        &json!({ "experiment": "budget", "output_dir": "res", "budget": {} }),
    );
    assert_eq!(code(&run(&["run", "--config", cfg.to_str().unwrap()])), 0);
    let files: Vec<_> = tree(&dir.path().join("res")).into_keys().collect();
    assert_eq!(files, [PathBuf::from("budget.json"), PathBuf::from("metadata.json")]);

    let none = write_json(dir.path(), "n.json", &json!({ "experiment": "budget", "budget": {} }));
    assert_eq!(code(&run(&["run", "--config", none.to_str().unwrap()])), 2);
}

#[test]
fn fit_s11_fixture_recovers_qs() {
    let data = configs().join("data/s11.csv");
    let o = run(&["fit", data.to_str().unwrap(), "--model", "s11"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    for (k, want) in [("q_internal", 1275.0), ("q_external", 1328.0)] {
        let got = v["parameters"][k].as_f64().unwrap();
        assert!((got - want).abs() / want < 0.01, "{k}: {got}");
    }
}

#[test]
fn fit_sinusoid_fixture_reports_shape_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let data = configs().join("data/rabi_trace.csv");
    let out = dir.path().join("fit");
    let o = run(&[
        "fit",
        data.to_str().unwrap(),
        "--model",
        "sinusoid",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["omega_r", "tau", "n"] {
        assert!(v["parameters"][k].is_f64(), "{k}");
        assert!(v["ci95"][k].as_f64().unwrap() >= 0.0);
    }
    let written: Value = serde_json::from_slice(&fs::read(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(written, v);
}

#[test]
fn empty_and_malformed_data_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = run(&["fit", empty.to_str().unwrap(), "--model", "sinusoid"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no rows"));

    let header_only = dir.path().join("h.csv");
    fs::write(&header_only, "t_us,signal\n").unwrap();
    assert!(
        String::from_utf8_lossy(&run(&["fit", header_only.to_str().unwrap(), "--model", "hahn"]).stderr)
            .contains("no rows")
    );

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t,y\n0.0,1.0\n0.1,abc\n").unwrap();
    assert_eq!(code(&run(&["fit", bad.to_str().unwrap(), "--model", "sinusoid"])), 2);

    let narrow = dir.path().join("narrow.csv");
    fs::write(&narrow, "2.96,0.1\n2.97,0.2\n").unwrap();
    assert_eq!(code(&run(&["fit", narrow.to_str().unwrap(), "--model", "s11"])), 2);
}

#[test]
fn nonconvergence_exits_3_unless_best_effort() {
    let dir = tempfile::tempdir().unwrap();
    let data = configs().join("data/rabi_trace.csv");
    let out = dir.path().join("o");
    let args = [
        "fit",
        data.to_str().unwrap(),
        "--model",
        "sinusoid",
        "--budget",
        "400",
        "--out",
        out.to_str().unwrap(),
    ];
    let o = run(&args);
    assert_eq!(code(&o), 3);
    let meta: Value = serde_json::from_slice(&fs::read(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["partial"], true);
    assert!(out.join("fit.json").exists());

    let mut lenient = args.to_vec();
    lenient.push("--best-effort");
    assert_eq!(code(&run(&lenient)), 0);
}

#[test]
fn budget_defaults_to_measured_chain() {
    let o = run(&["budget"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["chain_gain_db"].as_f64().unwrap() + 5.18).abs() < 1e-9);
    let p = v["power_at_antenna_w"].as_f64().unwrap();
    assert!((p - 1e-3 * 10f64.powf(-0.518)).abs() < 1e-12);
}

#[test]
fn tune_loop_default_holds_lock() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("loop");
    let o = run(&["tune-loop", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["settled"], true);
    assert!(v["final_error_mhz"].as_f64().unwrap().abs() <= 0.5);
    let csv = fs::read_to_string(out.join("loop.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t_s,f0_ghz,error_mhz,laser_mw");

    // a config of the wrong kind is rejected
    let cfg = write_json(dir.path(), "b.json", &json!({ "experiment": "budget" }));
    assert_eq!(code(&run(&["tune-loop", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn shipped_light_configs_run() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "budget",
        "tune_loop",
        "fit_s11",
        "fit_sinusoid",
        "fit_hahn",
        "rabi",
        "odmr_map",
    ] {
        let cfg = configs().join(format!("{name}.json"));
        let out = dir.path().join(name);
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("metadata.json").exists());
    }
}

#[test]
fn shipped_heavy_configs_parse() {
    // run with an invalid override so validation passes the schema but stops before computing
    let dir = tempfile::tempdir().unwrap();
    for (name, block, key) in [
        ("power_sweep", "power_sweep", "powers_w"),
        ("chevron", "chevron", "power_w"),
        ("position_sweep", "position_sweep", "power_w"),
    ] {
        let mut v: Value = serde_json::from_slice(&fs::read(configs().join(format!("{name}.json"))).unwrap()).unwrap();
        v[block][key] = if key == "powers_w" {
            json!([-1.0, 1.0, 2.0])
        } else {
            json!(-1.0)
        };
        let cfg = write_json(dir.path(), "c.json", &v);
        let o = run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 2, "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(key), "{name}");
    }
}
