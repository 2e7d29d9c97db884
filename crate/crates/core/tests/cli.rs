//! End-to-end runs of the `riot` command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use ndarray::Array2;
use riot::cli::main_with_args;
use riot::io::{read_matrix, write_matrix, write_vector};
use riot::synth::{add_noise, generate_instance, SynthConfig};
use riot::{marginals, HyperParams};

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let cfg = SynthConfig { m: 6, n: 5, p: 3, q: 2, ..SynthConfig::default() };
        let inst = generate_instance(&cfg).unwrap();
        let pi_hat = add_noise(&inst.pi0, 0.005, 1).unwrap();
        let counts = pi_hat.as_array().mapv(|p| (p * 1000.0).round() + 1.0);
        write_matrix(root.join("coupling.csv"), pi_hat.view()).unwrap();
        let text: String = counts.rows().into_iter().map(|r| r.iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(",") + "\n").collect();
        std::fs::write(root.join("counts.csv"), text).unwrap();
        write_matrix(root.join("users.csv"), inst.u.view().t()).unwrap();
        write_matrix(root.join("items.csv"), inst.v.view().t()).unwrap();
        write_matrix(root.join("cu.csv"), inst.c_u.view()).unwrap();
        write_matrix(root.join("cv.csv"), inst.c_v.view()).unwrap();
        let mg = marginals(&pi_hat);
        write_vector(root.join("mu.csv"), mg.mu.view()).unwrap();
        write_vector(root.join("nu.csv"), mg.nu.view()).unwrap();
        let config = serde_json::json!({ "seed": 5, "hyper": { "outer_iters": 8 } });
        std::fs::write(root.join("c.json"), config.to_string()).unwrap();
        Self { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }

    fn run(&self, args: &[&str]) -> i32 {
        let mut full = vec!["riot".to_string()];
        full.extend(args.iter().map(|a| a.to_string()));
        main_with_args(full)
    }

    fn fit_args(&self, method: &str, out: &str) -> Vec<String> {
        let mut v: Vec<String> = ["fit", "--method", method, "--config", &self.p("c.json"), "--coupling", &self.p("coupling.csv")]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(["--users", &self.p("users.csv"), "--items", &self.p("items.csv"), "--out", &self.p(out)].iter().map(|s| s.to_string()));
        v
    }
}

fn as_refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Every file in `dir` except the wall-clock timing record.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn riot_fit_writes_outputs() {
    let fx = Fixture::new();
    let mut args = fx.fit_args("riot", "out");
    args.extend(["--cost-u", &fx.p("cu.csv"), "--cost-v", &fx.p("cv.csv")].iter().map(|s| s.to_string()));
    assert_eq!(fx.run(&as_refs(&args)), 0);
    for f in ["interaction.csv", "plan.csv", "trace.csv", "metadata.json", "timing.json"] {
        assert!(fx.root.join("out").join(f).is_file(), "{f}");
    }
    assert_eq!(read_matrix(fx.root.join("out/interaction.csv")).unwrap().dim(), (3, 2));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(fx.root.join("out/metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["config"]["hyper"]["outer_iters"], 8);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn counts_input_is_accepted() {
    let fx = Fixture::new();
    let counts = read_matrix(fx.root.join("counts.csv")).unwrap();
    assert!(counts.iter().all(|c| c.fract() == 0.0 && *c >= 1.0));
    let args = [
        "fit", "--method", "iot", "--counts", &fx.p("counts.csv"), "--users", &fx.p("users.csv"), "--items",
        &fx.p("items.csv"), "--out", &fx.p("out"), "--outer-iters", "3",
    ];
    assert_eq!(fx.run(&args), 0);
}

#[test]
fn missing_side_cost_is_input_error_without_output() {
    let fx = Fixture::new();
    let args = fx.fit_args("riot", "out");
    assert_eq!(fx.run(&as_refs(&args)), 1);
    assert!(!fx.root.join("out").exists());
}

#[test]
fn negative_count_is_input_error() {
    let fx = Fixture::new();
    std::fs::write(fx.root.join("bad.csv"), "1,2,3\n4,-5,6\n").unwrap();
    let args = ["fit", "--method", "iot", "--counts", &fx.p("bad.csv"), "--users", &fx.p("users.csv"), "--items", &fx.p("items.csv"), "--out", &fx.p("out")];
    assert_eq!(fx.run(&args), 1);
    assert!(!fx.root.join("out").exists());
}

#[test]
fn solver_failure_exits_with_diagnostic() {
    let fx = Fixture::new();
    let mut args = fx.fit_args("iot", "out");
    args.extend(["--sinkhorn-max-iters", "1", "--sinkhorn-tol", "1e-15"].iter().map(|s| s.to_string()));
    assert_eq!(fx.run(&as_refs(&args)), 2);
    let diag: serde_json::Value = serde_json::from_slice(&std::fs::read(fx.root.join("out/diagnostic.json")).unwrap()).unwrap();
    assert_eq!(diag["status"], "solver_failure");
    assert!(diag["message"].as_str().unwrap().len() > 0);
}

#[test]
fn predict_round_trips_fitted_plan() {
    let fx = Fixture::new();
    let mut args = fx.fit_args("iot", "out");
    args.extend(["--sinkhorn-tol", "1e-12"].iter().map(|s| s.to_string()));
    assert_eq!(fx.run(&as_refs(&args)), 0);
    let pred = [
        "predict", "--interaction", &fx.p("out/interaction.csv"), "--users", &fx.p("users.csv"), "--items", &fx.p("items.csv"),
        "--mu", &fx.p("out/mu.csv"), "--nu", &fx.p("out/nu.csv"), "--out", &fx.p("pred.csv"), "--sinkhorn-tol", "1e-12",
    ];
    assert_eq!(fx.run(&pred), 0);
    let a = read_matrix(fx.root.join("pred.csv")).unwrap();
    let b = read_matrix(fx.root.join("out/plan.csv")).unwrap();
    assert!((&a - &b).iter().all(|d| d.abs() <= 1e-8));
}

#[test]
fn predict_with_zero_interaction_is_product() {
    let fx = Fixture::new();
    write_matrix(fx.root.join("a0.csv"), Array2::<f64>::zeros((3, 2)).view()).unwrap();
    let pred = [
        "predict", "--interaction", &fx.p("a0.csv"), "--users", &fx.p("users.csv"), "--items", &fx.p("items.csv"),
        "--mu", &fx.p("mu.csv"), "--nu", &fx.p("nu.csv"), "--out", &fx.p("pred.csv"),
    ];
    assert_eq!(fx.run(&pred), 0);
    let p = read_matrix(fx.root.join("pred.csv")).unwrap();
    let mu = read_matrix(fx.root.join("mu.csv")).unwrap();
    let nu = read_matrix(fx.root.join("nu.csv")).unwrap();
    for ((i, j), &v) in p.indexed_iter() {
        assert!((v - mu[[i, 0]] * nu[[j, 0]]).abs() <= 1e-12);
    }
}

#[test]
fn predict_rejects_wrong_interaction_shape() {
    let fx = Fixture::new();
    write_matrix(fx.root.join("a.csv"), Array2::<f64>::zeros((2, 2)).view()).unwrap();
    let pred = [
        "predict", "--interaction", &fx.p("a.csv"), "--users", &fx.p("users.csv"), "--items", &fx.p("items.csv"),
        "--mu", &fx.p("mu.csv"), "--nu", &fx.p("nu.csv"), "--out", &fx.p("pred.csv"),
    ];
    assert_eq!(fx.run(&pred), 1);
    assert!(!fx.root.join("pred.csv").exists());
}

#[test]
fn eval_reports_zero_for_identical_inputs() {
    let fx = Fixture::new();
    let args = ["eval", "--pred", &fx.p("coupling.csv"), "--test", &fx.p("coupling.csv"), "--out", &fx.p("report.json")];
    assert_eq!(fx.run(&args), 0);
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(fx.root.join("report.json")).unwrap()).unwrap();
    assert_eq!((rep["rmse"].as_f64(), rep["mae"].as_f64(), rep["kl"].as_f64()), (Some(0.0), Some(0.0), Some(0.0)));
}

#[test]
fn eval_rejects_mismatched_shapes() {
    let fx = Fixture::new();
    let args = ["eval", "--pred", &fx.p("coupling.csv"), "--test", &fx.p("cu.csv")];
    assert_eq!(fx.run(&args), 1);
}

#[test]
fn unknown_config_key_is_input_error() {
    let fx = Fixture::new();
    std::fs::write(fx.root.join("typo.json"), r#"{"hyper": {"outer_iter": 3}}"#).unwrap();
    let args = ["eval", "--pred", &fx.p("coupling.csv"), "--test", &fx.p("coupling.csv"), "--config", &fx.p("typo.json")];
    assert_eq!(fx.run(&args), 1);
}

fn run_binary(args: &[&str], threads: &str) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_riot")).args(args).env("RIOT_THREADS", threads).status().unwrap().code().unwrap()
}

#[test]
fn fit_is_byte_reproducible() {
    let fx = Fixture::new();
    for out in ["r1", "r2"] {
        let mut args = fx.fit_args("riot", out);
        args.extend(["--cost-u", &fx.p("cu.csv"), "--cost-v", &fx.p("cv.csv")].iter().map(|s| s.to_string()));
        assert_eq!(run_binary(&as_refs(&args), "2"), 0);
    }
    assert_eq!(snapshot(&fx.root.join("r1")), snapshot(&fx.root.join("r2")));
}

#[test]
fn parallel_sweep_is_byte_reproducible() {
    let fx = Fixture::new();
    let cfg = serde_json::json!({
        "experiment": { "m": 6, "n": 5, "p": 3, "q": 2, "sigma_grid": [0.001, 0.01], "delta_grid": [0.01, 0.05], "repetitions": 3 },
        "hyper": HyperParams { outer_iters: 5, ..HyperParams::default() },
    });
    std::fs::write(fx.root.join("sweep.json"), cfg.to_string()).unwrap();
    for (out, threads) in [("s1", "1"), ("s2", "4")] {
        let args = ["simulate", "--figure", "2", "--seed", "7", "--config", &fx.p("sweep.json"), "--out", &fx.p(out)];
        assert_eq!(run_binary(&args, threads), 0);
    }
    let (a, b) = (snapshot(&fx.root.join("s1")), snapshot(&fx.root.join("s2")));
    assert!(a.contains_key("sweep.csv") && a.contains_key("summary.json"));
    assert_eq!(a, b);
    let csv = String::from_utf8(a["sweep.csv"].clone()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(main_with_args(["riot", "--help"]), 0);
    assert_eq!(main_with_args(["riot", "fit"]), 1);
}
