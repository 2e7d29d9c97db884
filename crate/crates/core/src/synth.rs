//! Seeded synthetic experiments: instance generation, absolute Gaussian
//! noise, the robustness sweep, a single-instance comparison and a
//! cost-recovery comparison.
//!
//! Every random draw comes from a ChaCha8 stream keyed by the master seed and
//! a stream id, so each sweep cell can be reproduced on its own and cells can
//! run in any order.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{cost_shift_distance, kl_divergence, shift_aligned};
use crate::entropic::sinkhorn;
use crate::error::{Error, Result};
use crate::iot::iot_fit;
use crate::kernel::{kernel_cost, KernelSpec};
use crate::riot::riot_fit;
use crate::types::{CostMatrix, CouplingMatrix, HyperParams, InteractionMatrix, ProbabilityVector, ProfileSet};

pub const MAX_GENERATION_ATTEMPTS: usize = 5;
/// A sweep cell is flagged incomplete above this failure fraction.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

const STREAM_INSTANCE: u64 = 1;
const STREAM_SWEEP_NOISE: u64 = 2;
const STREAM_SINGLE_NOISE: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
    /// Standard deviation of each coordinate of the planar points whose
    /// Euclidean distances form the side costs.
    pub side_cost_points_stddev: f64,
    /// Concentration of the symmetric Dirichlet law of the true marginals.
    pub marginal_concentration: f64,
    /// Noise level of the single-instance experiments.
    pub noise_sigma: f64,
    pub hyper: HyperParams,
    pub delta_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub repetitions: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            m: 20,
            n: 20,
            p: 10,
            q: 8,
            kernel: KernelSpec::polynomial(0.05, 1.0, 2),
            seed: 0,
            side_cost_points_stddev: 5f64.sqrt(),
            marginal_concentration: 5.0,
            noise_sigma: 8e-3,
            hyper: HyperParams::default(),
            delta_grid: vec![0.001, 0.01, 0.05],
            sigma_grid: [1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0, 5000.0].iter().map(|s| s * 1e-4).collect(),
            repetitions: 50,
        }
    }
}

impl SynthConfig {
    /// Robustness sweep setup.
    pub fn robustness() -> Self {
        Self::default()
    }

    /// Single-instance comparison: `sigma = 8e-3`, `delta = 0.01`.
    pub fn single_instance() -> Self {
        Self { noise_sigma: 8e-3, hyper: HyperParams { delta: 0.01, ..HyperParams::default() }, ..Self::default() }
    }

    /// Cost recovery: `sigma = 0.08`, `delta = 0.001`, `L = 100`, `s = 1`.
    pub fn cost_recovery() -> Self {
        Self {
            noise_sigma: 0.08,
            hyper: HyperParams { delta: 0.001, outer_iters: 100, step_size: 1.0, ..HyperParams::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.p == 0 || self.q == 0 {
            return Err(Error::InvalidInput("m, n, p, q must be positive".into()));
        }
        if self.delta_grid.is_empty() || self.sigma_grid.is_empty() {
            return Err(Error::InvalidInput("delta and sigma grids must be non-empty".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidInput("repetitions must be at least 1".into()));
        }
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !self.delta_grid.iter().chain(&self.sigma_grid).all(|&v| nonneg(v)) || !nonneg(self.noise_sigma) {
            return Err(Error::InvalidInput("grid values and noise level must be nonnegative".into()));
        }
        if !(self.side_cost_points_stddev > 0.0 && self.marginal_concentration > 0.0) {
            return Err(Error::InvalidInput("point spread and concentration must be positive".into()));
        }
        self.kernel.validate()?;
        self.hyper.validate()
    }
}

/// A keyed ChaCha8 stream: `seed` selects the key, `(tag, a, b)` the stream.
pub fn rng_stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 56) ^ (a << 28) ^ b);
    rng
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub u: ProfileSet,
    pub v: ProfileSet,
    pub a0: InteractionMatrix,
    pub mu0: ProbabilityVector,
    pub nu0: ProbabilityVector,
    pub c_u: CostMatrix,
    pub c_v: CostMatrix,
    pub c0: CostMatrix,
    pub pi0: CouplingMatrix,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let x: f64 = StandardNormal.sample(rng);
        scale * x
    })
}

fn dirichlet(rng: &mut ChaCha8Rng, len: usize, concentration: f64) -> Result<ProbabilityVector> {
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let draws = Array1::from_shape_simple_fn(len, || gamma.sample(rng));
    ProbabilityVector::from_weights(draws)
}

/// Pairwise Euclidean distances of the columns of `points` (`2 x d`).
fn euclidean_costs(points: &Array2<f64>) -> CostMatrix {
    let d = points.ncols();
    let c = Array2::from_shape_fn((d, d), |(i, j)| {
        let dx = points[[0, i]] - points[[0, j]];
        let dy = points[[1, i]] - points[[1, j]];
        (dx * dx + dy * dy).sqrt()
    });
    CostMatrix::new(c).expect("finite distances")
}

fn try_generate(cfg: &SynthConfig, attempt: usize) -> Result<Instance> {
    let mut rng = rng_stream(cfg.seed, STREAM_INSTANCE, attempt as u64, 0);
    let u = ProfileSet::new(normal_matrix(&mut rng, cfg.p, cfg.m, 1.0))?;
    let v = ProfileSet::new(normal_matrix(&mut rng, cfg.q, cfg.n, 1.0))?;
    let a0 = InteractionMatrix::new(normal_matrix(&mut rng, cfg.p, cfg.q, 1.0))?;
    let mu0 = dirichlet(&mut rng, cfg.m, cfg.marginal_concentration)?;
    let nu0 = dirichlet(&mut rng, cfg.n, cfg.marginal_concentration)?;
    let c_u = euclidean_costs(&normal_matrix(&mut rng, 2, cfg.m, cfg.side_cost_points_stddev));
    let c_v = euclidean_costs(&normal_matrix(&mut rng, 2, cfg.n, cfg.side_cost_points_stddev));
    let c0 = kernel_cost(&u, &v, &a0, &cfg.kernel)?;
    let h = &cfg.hyper;
    let pi0 = sinkhorn(&c0, &mu0, &nu0, h.lambda, h.sinkhorn_tol, h.sinkhorn_max_iters)?.plan;
    Ok(Instance { u, v, a0, mu0, nu0, c_u, c_v, c0, pi0 })
}

/// Draws `U, V, A_0` with iid standard normal entries, Dirichlet marginals,
/// Euclidean side costs of Gaussian planar points, and the true plan
/// `pi_0`. Solver failures trigger a redraw on the next sub-stream.
pub fn generate_instance(cfg: &SynthConfig) -> Result<Instance> {
    cfg.validate()?;
    let mut last = None;
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        match try_generate(cfg, attempt) {
            Ok(inst) => return Ok(inst),
            Err(e) if e.is_solver_failure() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::GenerationFailed { attempts: MAX_GENERATION_ATTEMPTS, source: Box::new(last.expect("attempted")) })
}

/// `(pi_0 + |eps|) / sum(pi_0 + |eps|)` with `eps ~ N(0, sigma^2)` iid.
pub fn add_noise_with(pi0: &CouplingMatrix, sigma: f64, rng: &mut impl RngCore) -> Result<CouplingMatrix> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("noise level must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(pi0.clone());
    }
    let noisy = pi0.view().mapv(|p| {
        let e: f64 = StandardNormal.sample(rng);
        p + (sigma * e).abs()
    });
    let total = noisy.sum();
    CouplingMatrix::new(noisy / total)
}

pub fn add_noise(pi0: &CouplingMatrix, sigma: f64, seed: u64) -> Result<CouplingMatrix> {
    add_noise_with(pi0, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sigma: f64,
    pub delta: f64,
    pub repetition: usize,
    /// Seed of the noise stream (shared by every `delta` at this `sigma`).
    pub seed: u64,
    pub kl_riot: Option<f64>,
    pub kl_iot: Option<f64>,
    pub kl_hat: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, count };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = if count > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Self { mean, std: var.sqrt(), count }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub sigma: f64,
    pub delta: f64,
    pub kl_riot: Summary,
    pub kl_iot: Summary,
    pub kl_hat: Summary,
    pub failures: usize,
    pub incomplete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub cells: Vec<SweepCell>,
}

fn kl_of(pi0: &CouplingMatrix, fit: Result<CouplingMatrix>) -> Option<f64> {
    fit.and_then(|p| kl_divergence(pi0, &p)).ok().filter(|v| v.is_finite())
}

/// For every `sigma`, `repetitions` fresh noise draws on one fixed instance;
/// each draw is fitted by IOT once and by RIOT at every `delta`.
pub fn robustness_sweep(cfg: &SynthConfig) -> Result<SweepResult> {
    let inst = generate_instance(cfg)?;
    robustness_sweep_on(cfg, &inst)
}

pub fn robustness_sweep_on(cfg: &SynthConfig, inst: &Instance) -> Result<SweepResult> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> =
        (0..cfg.sigma_grid.len()).flat_map(|s| (0..cfg.repetitions).map(move |r| (s, r))).collect();
    let per_task: Vec<Result<Vec<SweepRecord>>> = tasks
        .par_iter()
        .map(|&(si, rep)| {
            let sigma = cfg.sigma_grid[si];
            let seed = rng_stream(cfg.seed, STREAM_SWEEP_NOISE, si as u64, rep as u64).next_u64();
            let pi_hat = add_noise(&inst.pi0, sigma, seed)?;
            let kl_hat = kl_divergence(&inst.pi0, &pi_hat)?;
            let kl_iot = kl_of(&inst.pi0, iot_fit(&pi_hat, &inst.u, &inst.v, &cfg.kernel, &cfg.hyper).map(|f| f.fitted_plan));
            Ok(cfg
                .delta_grid
                .iter()
                .map(|&delta| {
                    let hyper = HyperParams { delta, ..cfg.hyper.clone() };
                    let fit = riot_fit(&pi_hat, &inst.u, &inst.v, &cfg.kernel, &inst.c_u, &inst.c_v, &hyper);
                    SweepRecord {
                        sigma,
                        delta,
                        repetition: rep,
                        seed,
                        kl_riot: kl_of(&inst.pi0, fit.map(|f| f.fitted_plan)),
                        kl_iot,
                        kl_hat,
                    }
                })
                .collect())
        })
        .collect();

    let mut records = Vec::with_capacity(tasks.len() * cfg.delta_grid.len());
    for r in per_task {
        records.extend(r?);
    }
    // Long format ordered by (sigma, delta, repetition).
    let nd = cfg.delta_grid.len();
    records.sort_by_key(|r| {
        let si = cfg.sigma_grid.iter().position(|&s| s == r.sigma).unwrap_or(0);
        let di = cfg.delta_grid.iter().position(|&d| d == r.delta).unwrap_or(0);
        (si * nd + di, r.repetition)
    });

    let mut cells = Vec::new();
    for &sigma in &cfg.sigma_grid {
        for &delta in &cfg.delta_grid {
            let rs: Vec<&SweepRecord> = records.iter().filter(|r| r.sigma == sigma && r.delta == delta).collect();
            let riot: Vec<f64> = rs.iter().filter_map(|r| r.kl_riot).collect();
            let iot: Vec<f64> = rs.iter().filter_map(|r| r.kl_iot).collect();
            let hat: Vec<f64> = rs.iter().map(|r| r.kl_hat).collect();
            let failures = rs.iter().filter(|r| r.kl_riot.is_none() || r.kl_iot.is_none()).count();
            cells.push(SweepCell {
                sigma,
                delta,
                kl_riot: Summary::of(&riot),
                kl_iot: Summary::of(&iot),
                kl_hat: Summary::of(&hat),
                failures,
                incomplete: failures as f64 > MAX_FAILURE_FRACTION * rs.len() as f64,
            });
        }
    }
    Ok(SweepResult { records, cells })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.16e}"))
}

/// Long-format CSV with a header row.
pub fn write_sweep_csv(path: impl AsRef<Path>, sweep: &SweepResult) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["sigma", "delta", "seed", "kl_riot", "kl_iot", "kl_hat"]).map_err(io_err)?;
    for r in &sweep.records {
        w.write_record([
            format!("{:.16e}", r.sigma),
            format!("{:.16e}", r.delta),
            r.seed.to_string(),
            fmt_opt(r.kl_riot),
            fmt_opt(r.kl_iot),
            format!("{:.16e}", r.kl_hat),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub kl_riot: f64,
    pub kl_iot: f64,
    pub kl_hat: f64,
    pub pi0: CouplingMatrix,
    pub pi_hat: CouplingMatrix,
    pub pi_riot: CouplingMatrix,
    pub pi_iot: CouplingMatrix,
}

fn single_noise(cfg: &SynthConfig, inst: &Instance) -> Result<CouplingMatrix> {
    let mut rng = rng_stream(cfg.seed, STREAM_SINGLE_NOISE, 0, 0);
    add_noise_with(&inst.pi0, cfg.noise_sigma, &mut rng)
}

/// One noisy draw at `cfg.noise_sigma`, fitted by both methods
/// (`delta` from `cfg.hyper`).
pub fn single_instance_comparison(cfg: &SynthConfig) -> Result<Comparison> {
    let inst = generate_instance(cfg)?;
    let pi_hat = single_noise(cfg, &inst)?;
    let (riot, iot) = rayon::join(
        || riot_fit(&pi_hat, &inst.u, &inst.v, &cfg.kernel, &inst.c_u, &inst.c_v, &cfg.hyper),
        || iot_fit(&pi_hat, &inst.u, &inst.v, &cfg.kernel, &cfg.hyper),
    );
    let (pi_riot, pi_iot) = (riot?.fitted_plan, iot?.fitted_plan);
    Ok(Comparison {
        kl_riot: kl_divergence(&inst.pi0, &pi_riot)?,
        kl_iot: kl_divergence(&inst.pi0, &pi_iot)?,
        kl_hat: kl_divergence(&inst.pi0, &pi_hat)?,
        pi0: inst.pi0,
        pi_hat,
        pi_riot,
        pi_iot,
    })
}

#[derive(Clone, Debug)]
pub struct CostRecovery {
    pub d_riot: f64,
    pub d_iot: f64,
    pub c0: CostMatrix,
    /// Learned costs shifted to be closest to `c0`.
    pub c_tilde_riot: CostMatrix,
    pub c_tilde_iot: CostMatrix,
    pub kl_riot: f64,
    pub kl_iot: f64,
}

/// Distances modulo shifts between the true cost and the costs learned by
/// both methods from one noisy draw at `cfg.noise_sigma`.
pub fn cost_recovery_experiment(cfg: &SynthConfig) -> Result<CostRecovery> {
    let inst = generate_instance(cfg)?;
    let pi_hat = single_noise(cfg, &inst)?;
    let (riot, iot) = rayon::join(
        || riot_fit(&pi_hat, &inst.u, &inst.v, &cfg.kernel, &inst.c_u, &inst.c_v, &cfg.hyper),
        || iot_fit(&pi_hat, &inst.u, &inst.v, &cfg.kernel, &cfg.hyper),
    );
    let (riot, iot) = (riot?, iot?);
    let c_riot = kernel_cost(&inst.u, &inst.v, &riot.a, &cfg.kernel)?;
    let c_iot = kernel_cost(&inst.u, &inst.v, &iot.a, &cfg.kernel)?;
    Ok(CostRecovery {
        d_riot: cost_shift_distance(&inst.c0, &c_riot)?,
        d_iot: cost_shift_distance(&inst.c0, &c_iot)?,
        c_tilde_riot: shift_aligned(&c_riot, &inst.c0)?,
        c_tilde_iot: shift_aligned(&c_iot, &inst.c0)?,
        kl_riot: kl_divergence(&inst.pi0, &riot.fitted_plan)?,
        kl_iot: kl_divergence(&inst.pi0, &iot.fitted_plan)?,
        c0: inst.c0,
    })
}
