//! The `riot` command line: `fit`, `predict`, `simulate` and `eval`.
//!
//! Configuration is layered: a preset, then an optional JSON config file,
//! then individual flags. Every input is read and validated before any output
//! is created. Exit codes: 0 success, 1 input or validation error, 2 solver
//! failure (with a diagnostic JSON document on stderr).
//!
//! Profile CSVs hold one individual per row. Output matrices are headerless
//! CSV with 17 significant digits.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{cost_error_bound_check, cost_shift_distance, eval_matching, prediction_error_bound_check};
use crate::error::{Error, Result};
use crate::io::{read_counts, read_matrix, read_vector, write_matrix, write_vector};
use crate::iot::iot_fit;
use crate::joint::{joint_fit, JointOptions};
use crate::kernel::KernelSpec;
use crate::riot::{predict_matching_with, riot_fit, riot_fit_resume, RiotState};
use crate::synth::{
    cost_recovery_experiment, robustness_sweep, single_instance_comparison, write_sweep_csv, SynthConfig,
};
use crate::types::{
    marginals, normalize_counts, CostMatrix, CouplingMatrix, HyperParams, InteractionMatrix, MatchCounts,
    ProbabilityVector, ProfileSet,
};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "RIOT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "riot", version, about = "Learn matching costs by robust inverse optimal transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn an interaction matrix from matching data.
    Fit(FitArgs),
    /// Predict a coupling for new profiles and marginals.
    Predict(PredictArgs),
    /// Run a synthetic experiment.
    Simulate(SimulateArgs),
    /// Compare a predicted coupling with a held-out one.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["linear", "polynomial", "sigmoid"])]
    kernel: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_u: Option<f64>,
    #[arg(long)]
    lambda_v: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    sinkhorn_tol: Option<f64>,
    #[arg(long)]
    sinkhorn_max_iters: Option<usize>,
    /// Step on the side costs with --joint-side-costs (0 freezes them).
    #[arg(long)]
    side_step_size: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Method {
    Iot,
    Riot,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("data").required(true).args(["counts", "coupling"])))]
struct FitArgs {
    #[arg(long, value_enum, default_value = "riot")]
    method: Method,
    /// Matching counts (nonnegative integers), users by items.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Empirical coupling, users by items, summing to one.
    #[arg(long)]
    coupling: Option<PathBuf>,
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    cost_u: Option<PathBuf>,
    #[arg(long)]
    cost_v: Option<PathBuf>,
    /// Learn the side costs too, starting from uniform distances.
    #[arg(long)]
    joint_side_costs: bool,
    /// Continue from a saved solver state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also save the final solver state here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    interaction: PathBuf,
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    mu: PathBuf,
    #[arg(long)]
    nu: PathBuf,
    /// Output CSV for the predicted coupling.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
    figure: u8,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, requires = "cost_learned")]
    cost_true: Option<PathBuf>,
    #[arg(long, requires = "cost_true")]
    cost_learned: Option<PathBuf>,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Experiment parameters of a run (everything in [`SynthConfig`] except the
/// seed, kernel and solver settings).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub side_cost_points_stddev: f64,
    pub marginal_concentration: f64,
    pub noise_sigma: f64,
    pub delta_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub repetitions: usize,
}

/// The resolved configuration of one invocation; this is what the config
/// file deserializes into and what the metadata hash covers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub kernel: KernelSpec,
    pub hyper: HyperParams,
    pub side_step_size: Option<f64>,
    pub experiment: ExperimentConfig,
}

impl From<SynthConfig> for RunConfig {
    fn from(s: SynthConfig) -> Self {
        Self {
            seed: s.seed,
            kernel: s.kernel,
            hyper: s.hyper,
            side_step_size: None,
            experiment: ExperimentConfig {
                m: s.m,
                n: s.n,
                p: s.p,
                q: s.q,
                side_cost_points_stddev: s.side_cost_points_stddev,
                marginal_concentration: s.marginal_concentration,
                noise_sigma: s.noise_sigma,
                delta_grid: s.delta_grid,
                sigma_grid: s.sigma_grid,
                repetitions: s.repetitions,
            },
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        SynthConfig::default().into()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        RunConfig::default().experiment
    }
}

impl RunConfig {
    pub fn synth(&self) -> SynthConfig {
        let e = &self.experiment;
        SynthConfig {
            m: e.m,
            n: e.n,
            p: e.p,
            q: e.q,
            kernel: self.kernel,
            seed: self.seed,
            side_cost_points_stddev: e.side_cost_points_stddev,
            marginal_concentration: e.marginal_concentration,
            noise_sigma: e.noise_sigma,
            hyper: self.hyper.clone(),
            delta_grid: e.delta_grid.clone(),
            sigma_grid: e.sigma_grid.clone(),
            repetitions: e.repetitions,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key,
/// anything else replaces.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set(map: &mut Map<String, Value>, section: Option<&str>, key: &str, value: Option<Value>) {
    let Some(value) = value else { return };
    match section {
        None => {
            map.insert(key.into(), value);
        }
        Some(s) => {
            let entry = map.entry(s.to_string()).or_insert_with(|| Value::Object(Map::new()));
            entry.as_object_mut().expect("section object").insert(key.into(), value);
        }
    }
}

impl Overrides {
    fn patch(&self) -> Value {
        let mut m = Map::new();
        let num = |v: Option<f64>| v.map(|x| json!(x));
        let int = |v: Option<usize>| v.map(|x| json!(x));
        set(&mut m, None, "seed", self.seed.map(|x| json!(x)));
        set(&mut m, None, "side_step_size", num(self.side_step_size));
        set(&mut m, Some("kernel"), "kind", self.kernel.as_ref().map(|x| json!(x)));
        set(&mut m, Some("kernel"), "gamma", num(self.gamma));
        set(&mut m, Some("kernel"), "c0", num(self.c0));
        set(&mut m, Some("kernel"), "degree", self.degree.map(|x| json!(x)));
        set(&mut m, Some("hyper"), "lambda", num(self.lambda));
        set(&mut m, Some("hyper"), "lambda_u", num(self.lambda_u));
        set(&mut m, Some("hyper"), "lambda_v", num(self.lambda_v));
        set(&mut m, Some("hyper"), "delta", num(self.delta));
        set(&mut m, Some("hyper"), "step_size", num(self.step_size));
        set(&mut m, Some("hyper"), "outer_iters", int(self.outer_iters));
        set(&mut m, Some("hyper"), "inner_iters", int(self.inner_iters));
        set(&mut m, Some("hyper"), "sinkhorn_tol", num(self.sinkhorn_tol));
        set(&mut m, Some("hyper"), "sinkhorn_max_iters", int(self.sinkhorn_max_iters));
        Value::Object(m)
    }

    fn resolve(&self, preset: RunConfig, extra: Value) -> Result<RunConfig> {
        let mut value = serde_json::to_value(preset)?;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
            if !file.is_object() {
                return Err(Error::InvalidInput(format!("{}: config must be a JSON object", path.display())));
            }
            merge_json(&mut value, file);
        }
        merge_json(&mut value, self.patch());
        if extra.is_object() {
            merge_json(&mut value, extra);
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.kernel.validate()?;
        cfg.hyper.validate()?;
        if let Some(s) = cfg.side_step_size {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!("side_step_size must be nonnegative, got {s}")));
            }
        }
        Ok(cfg)
    }
}

/// Reads a CSV with one individual per row into a `features x count` set.
fn read_profiles(path: &Path) -> Result<ProfileSet> {
    ProfileSet::new(read_matrix(path)?.reversed_axes().as_standard_layout().into_owned())
}

fn read_cost(path: &Path, dim: usize, what: &'static str) -> Result<CostMatrix> {
    let c = CostMatrix::new(read_matrix(path)?)?;
    if c.shape() != (dim, dim) {
        let (r, k) = c.shape();
        return Err(Error::dims(what, format!("{dim}x{dim}"), format!("{r}x{k}")));
    }
    Ok(c)
}

fn read_probability(path: &Path) -> Result<ProbabilityVector> {
    ProbabilityVector::new(read_vector(path)?)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let text: String = trace.iter().enumerate().map(|(k, v)| format!("{k},{v:.16e}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn metadata(command: &str, cfg: &RunConfig, extra: Value) -> Value {
    let mut meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "config": cfg,
    });
    merge_json(&mut meta, extra);
    meta
}

fn write_timing(dir: &Path, start: Instant) -> Result<()> {
    write_json(&dir.join("timing.json"), &json!({ "wall_time_seconds": start.elapsed().as_secs_f64() }))
}

struct FitInputs {
    pi_hat: CouplingMatrix,
    u: ProfileSet,
    v: ProfileSet,
    sides: Option<(CostMatrix, CostMatrix)>,
    resume: Option<RiotState>,
}

fn load_fit_inputs(args: &FitArgs) -> Result<FitInputs> {
    let pi_hat = match (&args.counts, &args.coupling) {
        (Some(p), None) => normalize_counts(&MatchCounts::new(read_counts(p)?)?)?,
        (None, Some(p)) => CouplingMatrix::new(read_matrix(p)?)?,
        _ => return Err(Error::InvalidInput("pass exactly one of --counts, --coupling".into())),
    };
    let (m, n) = pi_hat.shape();
    let u = read_profiles(&args.users)?;
    let v = read_profiles(&args.items)?;
    if u.count() != m {
        return Err(Error::dims("--users rows", m, u.count()));
    }
    if v.count() != n {
        return Err(Error::dims("--items rows", n, v.count()));
    }
    let mg = marginals(&pi_hat);
    if let Some(index) = mg.mu.first_zero() {
        return Err(Error::ZeroMarginal { side: "row", index });
    }
    if let Some(index) = mg.nu.first_zero() {
        return Err(Error::ZeroMarginal { side: "column", index });
    }

    let sides = match (args.method, args.joint_side_costs) {
        (Method::Iot, true) => return Err(Error::InvalidInput("--joint-side-costs requires --method riot".into())),
        (Method::Iot, false) => None,
        (Method::Riot, true) => {
            if args.cost_u.is_some() || args.cost_v.is_some() {
                return Err(Error::InvalidInput("--cost-u/--cost-v conflict with --joint-side-costs".into()));
            }
            if m < 2 || n < 2 {
                return Err(Error::InvalidInput("--joint-side-costs needs at least two users and two items".into()));
            }
            None
        }
        (Method::Riot, false) => {
            let cu = args.cost_u.as_deref().ok_or_else(|| {
                Error::InvalidInput("--cost-u is required for --method riot unless --joint-side-costs is set".into())
            })?;
            let cv = args.cost_v.as_deref().ok_or_else(|| {
                Error::InvalidInput("--cost-v is required for --method riot unless --joint-side-costs is set".into())
            })?;
            Some((read_cost(cu, m, "--cost-u")?, read_cost(cv, n, "--cost-v")?))
        }
    };

    let resume = match &args.resume {
        None => None,
        Some(path) => {
            if args.method != Method::Riot || args.joint_side_costs {
                return Err(Error::InvalidInput("--resume applies to --method riot without --joint-side-costs".into()));
            }
            let state = RiotState::load_json(path)?;
            let (p, q) = (u.dim(), v.dim());
            if state.a.shape() != (p, q) || state.current_plan.shape() != (m, n) || state.z.len() != m || state.w.len() != n
            {
                return Err(Error::InvalidInput(format!("{}: state does not match the data dimensions", path.display())));
            }
            Some(state)
        }
    };
    Ok(FitInputs { pi_hat, u, v, sides, resume })
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = args.overrides.resolve(RunConfig::default(), Value::Null)?;
    let inputs = load_fit_inputs(&args)?;
    let FitInputs { pi_hat, u, v, sides, resume } = inputs;
    let (k, h) = (&cfg.kernel, &cfg.hyper);

    struct Fitted {
        a: InteractionMatrix,
        plan: CouplingMatrix,
        trace: Vec<f64>,
        state: Option<RiotState>,
        side_costs: Option<(CostMatrix, CostMatrix)>,
    }
    let method = match (args.method, args.joint_side_costs) {
        (Method::Iot, _) => "iot",
        (Method::Riot, false) => "riot",
        (Method::Riot, true) => "riot-joint",
    };
    let fitted = match (args.method, sides) {
        (Method::Iot, _) => {
            let r = iot_fit(&pi_hat, &u, &v, k, h)?;
            Fitted { a: r.a, plan: r.fitted_plan, trace: r.objective_trace, state: None, side_costs: None }
        }
        (Method::Riot, Some((cu, cv))) => {
            let r = match &resume {
                Some(state) => riot_fit_resume(state, &pi_hat, &u, &v, k, &cu, &cv, h)?,
                None => riot_fit(&pi_hat, &u, &v, k, &cu, &cv, h)?,
            };
            Fitted { a: r.a, plan: r.fitted_plan, trace: r.objective_trace, state: Some(r.state), side_costs: None }
        }
        (Method::Riot, None) => {
            let opts = JointOptions { side_step_size: cfg.side_step_size, ..JointOptions::default() };
            let r = joint_fit(&pi_hat, &u, &v, k, h, &opts)?;
            Fitted {
                a: r.a,
                plan: r.fitted_plan,
                trace: r.objective_trace,
                state: Some(r.state),
                side_costs: Some((r.c_u.to_cost(), r.c_v.to_cost())),
            }
        }
    };

    let out = &args.out;
    create_dir(out)?;
    write_matrix(out.join("interaction.csv"), fitted.a.view())?;
    write_matrix(out.join("plan.csv"), fitted.plan.view())?;
    let mg = marginals(&fitted.plan);
    write_vector(out.join("mu.csv"), mg.mu.view())?;
    write_vector(out.join("nu.csv"), mg.nu.view())?;
    write_trace(&out.join("trace.csv"), &fitted.trace)?;
    if let Some((cu, cv)) = &fitted.side_costs {
        write_matrix(out.join("cost_u.csv"), cu.view())?;
        write_matrix(out.join("cost_v.csv"), cv.view())?;
    }
    if let (Some(path), Some(state)) = (&args.checkpoint, &fitted.state) {
        state.save_json(path)?;
    }
    let extra = json!({
        "method": method,
        "iterations": fitted.trace.len().saturating_sub(1),
        "final_objective": fitted.trace.last(),
        "resumed": resume.is_some(),
    });
    write_json(&out.join("metadata.json"), &metadata("fit", &cfg, extra))?;
    write_timing(out, start)
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let cfg = args.overrides.resolve(RunConfig::default(), Value::Null)?;
    let a = InteractionMatrix::new(read_matrix(&args.interaction)?)?;
    let u = read_profiles(&args.users)?;
    let v = read_profiles(&args.items)?;
    let mu = read_probability(&args.mu)?;
    let nu = read_probability(&args.nu)?;
    if a.shape() != (u.dim(), v.dim()) {
        let (p, q) = a.shape();
        return Err(Error::dims("--interaction", format!("{}x{}", u.dim(), v.dim()), format!("{p}x{q}")));
    }
    if mu.len() != u.count() {
        return Err(Error::dims("--mu", u.count(), mu.len()));
    }
    if nu.len() != v.count() {
        return Err(Error::dims("--nu", v.count(), nu.len()));
    }
    let h = &cfg.hyper;
    let plan = predict_matching_with(&a, &u, &v, &mu, &nu, &cfg.kernel, h.lambda, h.sinkhorn_tol, h.sinkhorn_max_iters)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_matrix(&args.out, plan.view())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let preset = match args.figure {
        2 => SynthConfig::robustness(),
        3 => SynthConfig::single_instance(),
        _ => SynthConfig::cost_recovery(),
    };
    let mut extra = Map::new();
    set(&mut extra, Some("experiment"), "repetitions", args.repetitions.map(|x| json!(x)));
    set(&mut extra, Some("experiment"), "noise_sigma", args.noise_sigma.map(|x| json!(x)));
    let cfg = args.overrides.resolve(preset.into(), Value::Object(extra))?;
    let synth = cfg.synth();
    synth.validate()?;

    let out = &args.out;
    let summary = match args.figure {
        2 => {
            let sweep = robustness_sweep(&synth)?;
            create_dir(out)?;
            write_sweep_csv(out.join("sweep.csv"), &sweep)?;
            json!({ "cells": sweep.cells })
        }
        3 => {
            let c = single_instance_comparison(&synth)?;
            create_dir(out)?;
            for (name, m) in [("pi0", &c.pi0), ("pi_hat", &c.pi_hat), ("pi_riot", &c.pi_riot), ("pi_iot", &c.pi_iot)] {
                write_matrix(out.join(format!("{name}.csv")), m.view())?;
            }
            json!({ "kl_riot": c.kl_riot, "kl_iot": c.kl_iot, "kl_hat": c.kl_hat })
        }
        _ => {
            let r = cost_recovery_experiment(&synth)?;
            create_dir(out)?;
            for (name, m) in [("c0", &r.c0), ("c_tilde_riot", &r.c_tilde_riot), ("c_tilde_iot", &r.c_tilde_iot)] {
                write_matrix(out.join(format!("{name}.csv")), m.view())?;
            }
            json!({ "d_riot": r.d_riot, "d_iot": r.d_iot, "kl_riot": r.kl_riot, "kl_iot": r.kl_iot })
        }
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("metadata.json"), &metadata("simulate", &cfg, json!({ "figure": args.figure })))?;
    write_timing(out, start)
}

#[derive(Serialize)]
struct EvalReport {
    rmse: f64,
    mae: f64,
    kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost_shift_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost_error_bound: Option<crate::analysis::BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction_error_bound: Option<crate::analysis::BoundReport>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = args.overrides.resolve(RunConfig::default(), Value::Null)?;
    let pred = CouplingMatrix::new(read_matrix(&args.pred)?)?;
    let test = CouplingMatrix::new(read_matrix(&args.test)?)?;
    if pred.shape() != test.shape() {
        let (a, b) = (pred.shape(), test.shape());
        return Err(Error::dims("--pred vs --test", format!("{}x{}", b.0, b.1), format!("{}x{}", a.0, a.1)));
    }
    let costs = match (&args.cost_true, &args.cost_learned) {
        (Some(t), Some(l)) => {
            let c0 = CostMatrix::new(read_matrix(t)?)?;
            let cl = CostMatrix::new(read_matrix(l)?)?;
            if c0.shape() != test.shape() || cl.shape() != test.shape() {
                return Err(Error::InvalidInput("cost matrices must match the coupling shape".into()));
            }
            Some((c0, cl))
        }
        _ => None,
    };
    let metrics = eval_matching(&pred, &test)?;
    let mut report = EvalReport {
        rmse: metrics.rmse,
        mae: metrics.mae,
        kl: metrics.kl,
        cost_shift_distance: None,
        cost_error_bound: None,
        prediction_error_bound: None,
    };
    if let Some((c0, cl)) = costs {
        let lambda = cfg.hyper.lambda;
        let mg = marginals(&test);
        report.cost_shift_distance = Some(cost_shift_distance(&c0, &cl)?);
        report.cost_error_bound = cost_error_bound_check(&c0, &cl, &test, &pred, lambda).ok();
        report.prediction_error_bound = Some(prediction_error_bound_check(&c0, &cl, &mg.mu, &mg.nu, lambda)?);
    }
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_json(path, &report)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

/// Machine-readable description of a solver failure.
pub fn diagnostic(err: &Error) -> Value {
    let mut d = json!({ "status": "solver_failure", "message": err.to_string() });
    let detail = match err {
        Error::SinkhornNotConverged { iterations, marginal_error, .. } => {
            json!({ "kind": "sinkhorn_not_converged", "iterations": iterations, "marginal_error": marginal_error })
        }
        Error::Divergence { iteration, trace } => json!({ "kind": "divergence", "iteration": iteration, "trace": trace }),
        Error::RootNotFound { lo, hi, steps } => json!({ "kind": "root_not_found", "lo": lo, "hi": hi, "steps": steps }),
        Error::NonPositiveDenominator { index, value } => {
            json!({ "kind": "non_positive_denominator", "index": index, "value": value })
        }
        Error::InconsistentState { residual } => json!({ "kind": "inconsistent_state", "residual": residual }),
        Error::ProjectionNotConverged { cycles, violation } => {
            json!({ "kind": "projection_not_converged", "cycles": cycles, "violation": violation })
        }
        Error::GenerationFailed { attempts, source } => {
            json!({ "kind": "generation_failed", "attempts": attempts, "cause": diagnostic(source) })
        }
        _ => json!({ "kind": "other" }),
    };
    merge_json(&mut d, detail);
    d
}

fn dispatch(command: Command) -> (Result<()>, Option<PathBuf>) {
    match command {
        Command::Fit(a) => {
            let dir = a.out.clone();
            (cmd_fit(a), Some(dir))
        }
        Command::Predict(a) => (cmd_predict(a), None),
        Command::Simulate(a) => {
            let dir = a.out.clone();
            (cmd_simulate(a), Some(dir))
        }
        Command::Eval(a) => (cmd_eval(a), None),
    }
}

fn thread_count() -> std::result::Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV} must be a positive integer, got {s:?}")),
        },
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let threads = match thread_count() {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let (result, out_dir) = pool.install(|| dispatch(cli.command));
    match result {
        Ok(()) => 0,
        Err(e) if e.is_solver_failure() => {
            let diag = diagnostic(&e);
            let text = serde_json::to_string_pretty(&diag).expect("diagnostic serializes");
            eprintln!("{text}");
            if let Some(dir) = out_dir {
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join("diagnostic.json"), text + "\n");
                }
            }
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_is_recursive() {
        let mut base = json!({ "a": 1, "b": { "c": 2, "d": 3 } });
        merge_json(&mut base, json!({ "b": { "d": 4 }, "e": 5 }));
        assert_eq!(base, json!({ "a": 1, "b": { "c": 2, "d": 4 }, "e": 5 }));
    }

    #[test]
    fn flags_override_preset() {
        let o = Overrides { delta: Some(0.2), degree: Some(3), seed: Some(9), ..Overrides::default() };
        let cfg = o.resolve(RunConfig::default(), Value::Null).unwrap();
        assert_eq!(cfg.hyper.delta, 0.2);
        assert_eq!(cfg.kernel.degree, 3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.hyper.step_size, HyperParams::default().step_size);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"hyper": {"dleta": 0.1}}"#).unwrap();
        let o = Overrides { config: Some(path), ..Overrides::default() };
        assert!(matches!(o.resolve(RunConfig::default(), Value::Null), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.hyper.delta = 0.5;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn synth_round_trip() {
        let s = SynthConfig::cost_recovery();
        assert_eq!(RunConfig::from(s.clone()).synth(), s);
    }
}
