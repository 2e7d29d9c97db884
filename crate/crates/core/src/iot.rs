//! Fixed-marginal inverse OT: fit `A` by minimizing `-sum pi_hat log pi(A)`
//! where `pi(A)` is the Sinkhorn plan of `C(A)` at the empirical marginals.

use ndarray::{Array2, Zip};

use crate::entropic::{sinkhorn, SinkhornResult};
use crate::error::{Error, Result};
use crate::kernel::{assemble_gradient, kernel_cost_with_derivative, KernelSpec};
use crate::types::{marginals, CostMatrix, CouplingMatrix, HyperParams, InteractionMatrix, ProfileSet};

/// Halvings tried per iteration before giving up on a descent step.
pub const MAX_HALVINGS: usize = 20;
/// Fits stop once the Frobenius norm of the gradient drops below this.
pub const GRADIENT_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct IotFitResult {
    pub a: InteractionMatrix,
    pub fitted_plan: CouplingMatrix,
    /// Objective at the initial point and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// `-sum_{pi_hat > 0} pi_hat log pi`, with `log pi` taken from log-scalings.
pub(crate) fn cross_entropy(pi_hat: &CouplingMatrix, log_pi: &Array2<f64>) -> f64 {
    Zip::from(pi_hat.view()).and(log_pi).fold(0.0, |acc, &p, &l| if p > 0.0 { acc - p * l } else { acc })
}

struct Evaluation {
    objective: f64,
    sinkhorn: SinkhornResult,
    fprime: Array2<f64>,
}

fn evaluate(
    a: &InteractionMatrix,
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    params: &HyperParams,
) -> Result<Evaluation> {
    let (cost, fprime): (CostMatrix, _) = kernel_cost_with_derivative(u, v, a, k)?;
    let (m, n) = cost.shape();
    if pi_hat.shape() != (m, n) {
        return Err(Error::dims("empirical coupling", format!("{m}x{n}"), format!("{:?}", pi_hat.shape())));
    }
    let marg = marginals(pi_hat);
    let res = sinkhorn(&cost, &marg.mu, &marg.nu, params.lambda, params.sinkhorn_tol, params.sinkhorn_max_iters)?;
    let objective = cross_entropy(pi_hat, &res.log_plan(&cost));
    Ok(Evaluation { objective, sinkhorn: res, fprime })
}

fn gradient_of(eval: &Evaluation, pi_hat: &CouplingMatrix, u: &ProfileSet, v: &ProfileSet, lambda: f64) -> Array2<f64> {
    let g = (pi_hat.as_array() - eval.sinkhorn.plan.as_array()) * lambda;
    assemble_gradient(u, v, g.view(), eval.fprime.view())
}

pub fn iot_objective(
    a: &InteractionMatrix,
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    params: &HyperParams,
) -> Result<f64> {
    evaluate(a, pi_hat, u, v, k, params).map(|e| e.objective)
}

/// `sum_ij lambda (pi_hat_ij - pi_ij) C'_ij(A)`.
pub fn iot_gradient(
    a: &InteractionMatrix,
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    params: &HyperParams,
) -> Result<Array2<f64>> {
    let eval = evaluate(a, pi_hat, u, v, k, params)?;
    Ok(gradient_of(&eval, pi_hat, u, v, params.lambda))
}

pub(crate) fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent from `A = 0` with step `s`, halved on any increase.
pub fn iot_fit(
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    params: &HyperParams,
) -> Result<IotFitResult> {
    params.validate()?;
    k.validate()?;
    let mut a = InteractionMatrix::zeros(u.dim(), v.dim());
    let mut eval = evaluate(&a, pi_hat, u, v, k, params)?;
    let mut trace = vec![eval.objective];
    if !eval.objective.is_finite() {
        return Err(Error::Divergence { iteration: 0, trace });
    }
    let mut iterations = 0;

    for iter in 1..=params.outer_iters {
        let g = gradient_of(&eval, pi_hat, u, v, params.lambda);
        if frobenius(&g) <= GRADIENT_FLOOR {
            break;
        }
        let mut step = params.step_size;
        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..=MAX_HALVINGS {
            let trial = InteractionMatrix::new(a.as_array() - &(&g * step));
            let trial_eval = trial.as_ref().ok().map(|t| evaluate(t, pi_hat, u, v, k, params));
            match (trial, trial_eval) {
                (Ok(t), Some(Ok(e))) if e.objective <= eval.objective => {
                    accepted = Some((t, e));
                    break;
                }
                (_, Some(Ok(e))) if e.objective.is_finite() => any_finite = true,
                (_, Some(Err(e))) if !e.is_solver_failure() => return Err(e),
                _ => {}
            }
            step *= 0.5;
        }
        match accepted {
            Some((t, e)) => {
                a = t;
                eval = e;
                trace.push(eval.objective);
                iterations = iter;
            }
            None if !any_finite => return Err(Error::Divergence { iteration: iter, trace }),
            // No decrease at any step length: numerically stationary.
            None => break,
        }
    }

    Ok(IotFitResult {
        a,
        fitted_plan: eval.sinkhorn.plan,
        objective_trace: trace,
        iterations,
    })
}
