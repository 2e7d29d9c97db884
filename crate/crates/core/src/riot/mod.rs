//! Robust inverse OT.
//!
//! The hard marginal constraints of [`crate::iot`] are replaced by
//! `delta`-weighted regularized OT distances between the model marginals and
//! the empirical ones, measured under side costs `C_u` (rows) and `C_v`
//! (columns). The min-max problem is solved by alternating three blocks:
//!
//! 1. `(xi, eta)` for fixed `A, z, w` (see [`inner`]), giving the plan
//!    `diag(xi) exp(-lambda C(A)) diag(eta)`;
//! 2. a backtracked gradient step on `A`;
//! 3. the dual potentials `z, w`, by Sinkhorn on the side costs.

pub mod inner;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::entropic::{rot_distance_with, rot_value_of, sinkhorn, SinkhornResult};
use crate::error::{Error, Result};
use crate::iot::{cross_entropy, frobenius, GRADIENT_FLOOR, MAX_HALVINGS};
use crate::kernel::{assemble_gradient, kernel_cost, kernel_cost_with_derivative, KernelSpec};
use crate::types::{
    marginals, CostMatrix, CouplingMatrix, HyperParams, InteractionMatrix, MarginalPair, ProbabilityVector,
    ProfileSet,
};

pub use inner::{h_value, p_residual, solve_scaled, theta_root_p, theta_root_q, InnerSolution};

/// Largest tolerated `|xi^T Z eta - 1|` when a state is used for a gradient.
pub const STATE_RESIDUAL_LIMIT: f64 = 1e-6;

/// Primal and dual iterates of the alternating solver. Serializes to JSON as
/// a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiotState {
    pub a: InteractionMatrix,
    pub xi: Array1<f64>,
    pub eta: Array1<f64>,
    pub theta: f64,
    pub z: Array1<f64>,
    pub w: Array1<f64>,
    pub current_plan: CouplingMatrix,
    pub objective: f64,
}

impl RiotState {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug)]
pub struct RiotFitResult {
    pub a: InteractionMatrix,
    pub fitted_plan: CouplingMatrix,
    pub relaxed_marginals: MarginalPair,
    /// Objective at the start and after every outer iteration.
    pub objective_trace: Vec<f64>,
    /// Snapshot of the best iterate.
    pub state: RiotState,
    pub iterations: usize,
}

/// Empirical data shared by every block.
pub(crate) struct Problem<'a> {
    pub pi_hat: &'a CouplingMatrix,
    pub u: &'a ProfileSet,
    pub v: &'a ProfileSet,
    pub k: &'a KernelSpec,
    pub mu_hat: ProbabilityVector,
    pub nu_hat: ProbabilityVector,
}

impl<'a> Problem<'a> {
    pub fn new(pi_hat: &'a CouplingMatrix, u: &'a ProfileSet, v: &'a ProfileSet, k: &'a KernelSpec) -> Result<Self> {
        let (m, n) = pi_hat.shape();
        if u.count() != m || v.count() != n {
            return Err(Error::dims("profiles vs coupling", format!("{m}x{n}"), format!("{}x{}", u.count(), v.count())));
        }
        let MarginalPair { mu, nu } = marginals(pi_hat);
        if let Some(index) = mu.first_zero() {
            return Err(Error::ZeroMarginal { side: "row", index });
        }
        if let Some(index) = nu.first_zero() {
            return Err(Error::ZeroMarginal { side: "column", index });
        }
        Ok(Self { pi_hat, u, v, k, mu_hat: mu, nu_hat: nu })
    }
}

/// `Z = exp(-lambda C)` and `M = delta (z 1^T + 1 w^T) .* Z`.
fn kernels(cost: &CostMatrix, lambda: f64, z: ArrayView1<'_, f64>, w: ArrayView1<'_, f64>, delta: f64) -> (Array2<f64>, Array2<f64>) {
    let zk = cost.view().mapv(|c| (-lambda * c).exp());
    let mut mk = zk.clone();
    for ((i, j), x) in mk.indexed_iter_mut() {
        *x *= delta * (z[i] + w[j]);
    }
    (zk, mk)
}

/// The inner solution at fixed `(A, z, w)` and everything derived from it.
pub(crate) struct Evaluation {
    pub fprime: Array2<f64>,
    pub sol: InnerSolution,
    pub plan: CouplingMatrix,
    /// `E(A; z, w) = -sum pi_hat log pi + delta sum (z_i + w_j) pi_ij`.
    pub energy: f64,
    pub cross_entropy: f64,
}

pub(crate) fn evaluate(
    prob: &Problem<'_>,
    a: &InteractionMatrix,
    z: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
    params: &HyperParams,
    warm: Option<(ArrayView1<'_, f64>, ArrayView1<'_, f64>)>,
) -> Result<Evaluation> {
    let (cost, fprime) = kernel_cost_with_derivative(prob.u, prob.v, a, prob.k)?;
    let (zk, mk) = kernels(&cost, params.lambda, z, w, params.delta);
    let sol = solve_scaled(zk.view(), mk.view(), prob.mu_hat.view(), prob.nu_hat.view(), params.inner_iters, warm)?;
    let lx = sol.xi.mapv(f64::ln);
    let le = sol.eta.mapv(f64::ln);
    let log_pi = crate::entropic::log_plan_from(lx.view(), le.view(), cost.view(), params.lambda);
    let raw = log_pi.mapv(f64::exp);
    let ce = cross_entropy(prob.pi_hat, &log_pi);
    let relax: f64 = raw.indexed_iter().map(|((i, j), &p)| (z[i] + w[j]) * p).sum();
    let plan = CouplingMatrix::new(raw).map_err(|_| Error::InconsistentState { residual: sol.xi.dot(&zk.dot(&sol.eta)) - 1.0 })?;
    Ok(Evaluation { fprime, sol, plan, energy: ce + params.delta * relax, cross_entropy: ce })
}

fn cost_gradient(
    pi_hat: &CouplingMatrix,
    plan: &Array2<f64>,
    theta: f64,
    z: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
    params: &HyperParams,
) -> Array2<f64> {
    let mut g = pi_hat.as_array().clone();
    Zip::indexed(&mut g).and(plan).for_each(|(i, j), gij, &p| {
        *gij = params.lambda * (*gij + (theta - params.delta * (z[i] + w[j])) * p);
    });
    g
}

/// `(xi, eta, theta)` for fixed `A, z, w`, from `xi = eta = 1`.
pub fn inner_xi_eta_solve(
    a: &InteractionMatrix,
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    z: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
    params: &HyperParams,
) -> Result<InnerSolution> {
    let prob = Problem::new(pi_hat, u, v, k)?;
    check_dual_dims(&prob, z, w)?;
    let cost = kernel_cost(u, v, a, k)?;
    let (zk, mk) = kernels(&cost, params.lambda, z, w, params.delta);
    solve_scaled(zk.view(), mk.view(), prob.mu_hat.view(), prob.nu_hat.view(), params.inner_iters, None)
}

fn check_dual_dims(prob: &Problem<'_>, z: ArrayView1<'_, f64>, w: ArrayView1<'_, f64>) -> Result<()> {
    if z.len() != prob.mu_hat.len() {
        return Err(Error::dims("row potential", prob.mu_hat.len(), z.len()));
    }
    if w.len() != prob.nu_hat.len() {
        return Err(Error::dims("column potential", prob.nu_hat.len(), w.len()));
    }
    Ok(())
}

/// `E(A; z, w)` after a full inner solve, for finite-difference checks.
pub fn riot_energy(
    a: &InteractionMatrix,
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    z: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
    params: &HyperParams,
) -> Result<f64> {
    let prob = Problem::new(pi_hat, u, v, k)?;
    check_dual_dims(&prob, z, w)?;
    evaluate(&prob, a, z, w, params, None).map(|e| e.energy)
}

/// `sum_ij lambda [pi_hat_ij + (theta - delta (z_i + w_j)) pi_ij] C'_ij(A)`.
pub fn riot_grad_a(
    state: &RiotState,
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    params: &HyperParams,
) -> Result<Array2<f64>> {
    let (cost, fprime) = kernel_cost_with_derivative(u, v, &state.a, k)?;
    if cost.shape() != pi_hat.shape() || state.xi.len() != cost.shape().0 || state.eta.len() != cost.shape().1 {
        return Err(Error::dims("state", format!("{:?}", cost.shape()), format!("{}x{}", state.xi.len(), state.eta.len())));
    }
    let zk = cost.view().mapv(|c| (-params.lambda * c).exp());
    let mut plan = zk;
    Zip::indexed(&mut plan).for_each(|(i, j), p| *p *= state.xi[i] * state.eta[j]);
    let residual = plan.sum() - 1.0;
    if !(residual.abs() <= STATE_RESIDUAL_LIMIT) {
        return Err(Error::InconsistentState { residual });
    }
    let g = cost_gradient(pi_hat, &plan, state.theta, state.z.view(), state.w.view(), params);
    Ok(assemble_gradient(u, v, g.view(), fprime.view()))
}

/// Sinkhorn runs on the side costs and the potentials they give.
pub(crate) struct DualUpdate {
    pub z: Array1<f64>,
    pub w: Array1<f64>,
    pub d_u: f64,
    pub d_v: f64,
}

fn side_sinkhorn(c: &CostMatrix, model: &ProbabilityVector, data: &ProbabilityVector, lambda: f64, params: &HyperParams) -> Result<SinkhornResult> {
    sinkhorn(c, model, data, lambda, params.sinkhorn_tol, params.sinkhorn_max_iters)
}

pub(crate) fn dual_update_full(
    plan: &CouplingMatrix,
    mu_hat: &ProbabilityVector,
    nu_hat: &ProbabilityVector,
    c_u: &CostMatrix,
    c_v: &CostMatrix,
    params: &HyperParams,
) -> Result<DualUpdate> {
    let MarginalPair { mu, nu } = marginals(plan);
    let ru = side_sinkhorn(c_u, &mu, mu_hat, params.lambda_u, params)?;
    let rv = side_sinkhorn(c_v, &nu, nu_hat, params.lambda_v, params)?;
    Ok(DualUpdate {
        z: ru.row_potential(),
        w: rv.row_potential(),
        d_u: rot_value_of(&ru, c_u),
        d_v: rot_value_of(&rv, c_v),
    })
}

/// `z = ln(a_1) / lambda_u` from Sinkhorn on `(C_u, plan 1, mu_hat)`, and `w`
/// likewise on `(C_v, plan^T 1, nu_hat)`.
pub fn dual_update_zw(
    plan: &CouplingMatrix,
    mu_hat: &ProbabilityVector,
    nu_hat: &ProbabilityVector,
    c_u: &CostMatrix,
    c_v: &CostMatrix,
    params: &HyperParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    dual_update_full(plan, mu_hat, nu_hat, c_u, c_v, params).map(|d| (d.z, d.w))
}

/// `-sum pi_hat log pi + delta (d_{lambda_u}(C_u, mu, mu_hat) + d_{lambda_v}(C_v, nu, nu_hat))`
/// at the state's plan, with `(mu, nu)` its marginals.
pub fn riot_objective(
    state: &RiotState,
    pi_hat: &CouplingMatrix,
    c_u: &CostMatrix,
    c_v: &CostMatrix,
    params: &HyperParams,
) -> Result<f64> {
    let plan = &state.current_plan;
    if plan.shape() != pi_hat.shape() {
        return Err(Error::dims("plan", format!("{:?}", pi_hat.shape()), format!("{:?}", plan.shape())));
    }
    let log_pi = plan.as_array().mapv(f64::ln);
    let ce = cross_entropy(pi_hat, &log_pi);
    if params.delta == 0.0 {
        return Ok(ce);
    }
    let MarginalPair { mu, nu } = marginals(plan);
    let MarginalPair { mu: mu_hat, nu: nu_hat } = marginals(pi_hat);
    let du = rot_distance_with(c_u, &mu, &mu_hat, params.lambda_u, params.sinkhorn_tol, params.sinkhorn_max_iters)?;
    let dv = rot_distance_with(c_v, &nu, &nu_hat, params.lambda_v, params.sinkhorn_tol, params.sinkhorn_max_iters)?;
    Ok(ce + params.delta * (du + dv))
}

/// Side-cost update applied between the `A` step and the dual update.
/// Receives the current plan marginals and potentials.
pub(crate) type SideHook<'h> =
    dyn FnMut(&MarginalPair, ArrayView1<'_, f64>, ArrayView1<'_, f64>, &mut CostMatrix, &mut CostMatrix) -> Result<()> + 'h;

pub(crate) struct EngineOutput {
    pub fit: RiotFitResult,
    pub best_costs: (CostMatrix, CostMatrix),
}

fn snapshot(a: &InteractionMatrix, ev: &Evaluation, z: &Array1<f64>, w: &Array1<f64>, objective: f64) -> RiotState {
    RiotState {
        a: a.clone(),
        xi: ev.sol.xi.clone(),
        eta: ev.sol.eta.clone(),
        theta: ev.sol.theta2,
        z: z.clone(),
        w: w.clone(),
        current_plan: ev.plan.clone(),
        objective,
    }
}

pub(crate) fn run_engine(
    prob: &Problem<'_>,
    mut c_u: CostMatrix,
    mut c_v: CostMatrix,
    params: &HyperParams,
    resume: Option<&RiotState>,
    mut side: Option<&mut SideHook<'_>>,
) -> Result<EngineOutput> {
    params.validate()?;
    prob.k.validate()?;
    let (m, n) = prob.pi_hat.shape();
    if c_u.shape() != (m, m) {
        return Err(Error::dims("row side cost", format!("{m}x{m}"), format!("{:?}", c_u.shape())));
    }
    if c_v.shape() != (n, n) {
        return Err(Error::dims("column side cost", format!("{n}x{n}"), format!("{:?}", c_v.shape())));
    }
    let relaxed = params.delta != 0.0;

    let objective_at = |ev: &Evaluation, cu: &CostMatrix, cv: &CostMatrix| -> Result<(f64, Option<DualUpdate>)> {
        if !relaxed {
            return Ok((ev.cross_entropy, None));
        }
        let du = dual_update_full(&ev.plan, &prob.mu_hat, &prob.nu_hat, cu, cv, params)?;
        Ok((ev.cross_entropy + params.delta * (du.d_u + du.d_v), Some(du)))
    };

    let (mut a, mut z, mut w, mut cur, mut trace, mut best);
    match resume {
        Some(state) => {
            if state.a.shape() != (prob.u.dim(), prob.v.dim()) {
                return Err(Error::dims("checkpoint interaction matrix", format!("{}x{}", prob.u.dim(), prob.v.dim()), format!("{:?}", state.a.shape())));
            }
            if state.xi.len() != m || state.eta.len() != n || state.current_plan.shape() != (m, n) {
                return Err(Error::dims("checkpoint scalings", format!("{m}x{n}"), format!("{}x{}", state.xi.len(), state.eta.len())));
            }
            a = state.a.clone();
            (z, w) = if relaxed {
                dual_update_zw(&state.current_plan, &prob.mu_hat, &prob.nu_hat, &c_u, &c_v, params)?
            } else {
                (state.z.clone(), state.w.clone())
            };
            cur = evaluate(prob, &a, z.view(), w.view(), params, Some((state.xi.view(), state.eta.view())))?;
            trace = vec![state.objective];
            best = (state.clone(), c_u.clone(), c_v.clone());
        }
        None => {
            a = InteractionMatrix::zeros(prob.u.dim(), prob.v.dim());
            z = Array1::zeros(m);
            w = Array1::zeros(n);
            cur = evaluate(prob, &a, z.view(), w.view(), params, None)?;
            let (obj, _) = objective_at(&cur, &c_u, &c_v)?;
            trace = vec![obj];
            if !obj.is_finite() {
                return Err(Error::Divergence { iteration: 0, trace });
            }
            best = (snapshot(&a, &cur, &z, &w, obj), c_u.clone(), c_v.clone());
        }
    }

    let mut iterations = 0;
    for iter in 1..=params.outer_iters {
        let g = {
            let gc = cost_gradient(prob.pi_hat, cur.plan.as_array(), cur.sol.theta2, z.view(), w.view(), params);
            assemble_gradient(prob.u, prob.v, gc.view(), cur.fprime.view())
        };
        if frobenius(&g) <= GRADIENT_FLOOR {
            break;
        }

        let warm = (cur.sol.xi.clone(), cur.sol.eta.clone());
        let mut step = params.step_size;
        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..=MAX_HALVINGS {
            if let Ok(trial) = InteractionMatrix::new(a.as_array() - &(&g * step)) {
                match evaluate(prob, &trial, z.view(), w.view(), params, Some((warm.0.view(), warm.1.view()))) {
                    Ok(ev) if ev.energy <= cur.energy => {
                        accepted = Some((trial, ev));
                        break;
                    }
                    Ok(ev) if ev.energy.is_finite() => any_finite = true,
                    Err(e) if !e.is_solver_failure() => return Err(e),
                    _ => {}
                }
            }
            step *= 0.5;
        }
        let Some((trial, ev)) = accepted else {
            if !any_finite {
                return Err(Error::Divergence { iteration: iter, trace });
            }
            break;
        };
        a = trial;
        cur = ev;
        iterations = iter;

        if let Some(hook) = side.as_mut() {
            let marg = marginals(&cur.plan);
            hook(&marg, z.view(), w.view(), &mut c_u, &mut c_v)?;
        }

        let (obj, dual) = objective_at(&cur, &c_u, &c_v)?;
        trace.push(obj);
        if !obj.is_finite() {
            return Err(Error::Divergence { iteration: iter, trace });
        }
        if obj < best.0.objective {
            best = (snapshot(&a, &cur, &z, &w, obj), c_u.clone(), c_v.clone());
        }
        if let Some(du) = dual {
            z = du.z;
            w = du.w;
            let warm = (cur.sol.xi.clone(), cur.sol.eta.clone());
            cur = evaluate(prob, &a, z.view(), w.view(), params, Some((warm.0.view(), warm.1.view())))?;
        }
    }

    let (state, cu, cv) = best;
    let relaxed_marginals = marginals(&state.current_plan);
    Ok(EngineOutput {
        fit: RiotFitResult {
            a: state.a.clone(),
            fitted_plan: state.current_plan.clone(),
            relaxed_marginals,
            objective_trace: trace,
            state,
            iterations,
        },
        best_costs: (cu, cv),
    })
}

/// Alternating RIOT solver from `A = 0`, `z = w = 0`, `xi = eta = 1`.
pub fn riot_fit(
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    c_u: &CostMatrix,
    c_v: &CostMatrix,
    params: &HyperParams,
) -> Result<RiotFitResult> {
    let prob = Problem::new(pi_hat, u, v, k)?;
    run_engine(&prob, c_u.clone(), c_v.clone(), params, None, None).map(|o| o.fit)
}

/// Continues a fit from a checkpoint: the dual potentials are refreshed from
/// the checkpointed plan, then `params.outer_iters` further iterations run.
pub fn riot_fit_resume(
    state: &RiotState,
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    c_u: &CostMatrix,
    c_v: &CostMatrix,
    params: &HyperParams,
) -> Result<RiotFitResult> {
    let prob = Problem::new(pi_hat, u, v, k)?;
    run_engine(&prob, c_u.clone(), c_v.clone(), params, Some(state), None).map(|o| o.fit)
}

/// Sinkhorn plan of the learned cost on new profiles and marginals.
pub fn predict_matching(
    a: &InteractionMatrix,
    u_new: &ProfileSet,
    v_new: &ProfileSet,
    mu_new: &ProbabilityVector,
    nu_new: &ProbabilityVector,
    k: &KernelSpec,
    lambda: f64,
) -> Result<CouplingMatrix> {
    predict_matching_with(a, u_new, v_new, mu_new, nu_new, k, lambda, crate::entropic::DEFAULT_TOL, crate::entropic::DEFAULT_MAX_ITERS)
}

#[allow(clippy::too_many_arguments)]
pub fn predict_matching_with(
    a: &InteractionMatrix,
    u_new: &ProfileSet,
    v_new: &ProfileSet,
    mu_new: &ProbabilityVector,
    nu_new: &ProbabilityVector,
    k: &KernelSpec,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<CouplingMatrix> {
    let cost = kernel_cost(u_new, v_new, a, k)?;
    Ok(sinkhorn(&cost, mu_new, nu_new, lambda, tol, max_iters)?.plan)
}
