//! Error metrics and verifiable lower bounds.
//!
//! Several bounds involve the shift space `{a 1^T + 1 b^T}`: adding such a
//! matrix to a cost leaves every regularized plan unchanged, so costs are
//! compared modulo shifts. Writing `M` for a difference of costs,
//! `f = [M 1; M^T 1]` and `G = [[n I, 1 1^T], [1 1^T, m I]]` for the
//! shift Gram matrix, the squared distance from `M` to the shift space is
//! `|M|_F^2 - f^T G^+ f`. It equals the squared norm of the double-centered
//! residual of `M`, which is how it is evaluated here.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::entropic::{sinkhorn, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::types::{CostMatrix, CouplingMatrix, MetricMatrix, ProbabilityVector};

/// Absolute slack on `observed >= bound`.
pub const BOUND_SLACK: f64 = 1e-9;
/// Largest tolerated violation of the symmetric-ratio cycle condition.
pub const CYCLE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_value: f64,
    pub observed_value: f64,
    pub satisfied: bool,
}

impl BoundReport {
    pub fn new(bound_value: f64, observed_value: f64) -> Self {
        Self { bound_value, observed_value, satisfied: observed_value >= bound_value - BOUND_SLACK }
    }
}

fn same_shape(a: (usize, usize), b: (usize, usize), what: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::dims(what, format!("{}x{}", a.0, a.1), format!("{}x{}", b.0, b.1)));
    }
    Ok(())
}

/// `KL(p || q) = sum p log(p / q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &CouplingMatrix, q: &CouplingMatrix) -> Result<f64> {
    same_shape(p.shape(), q.shape(), "coupling")?;
    let mut total = 0.0;
    for ((i, j), &pv) in p.view().indexed_iter() {
        if pv > 0.0 {
            let qv = q.view()[[i, j]];
            if qv <= 0.0 {
                return Err(Error::SupportViolation { i, j });
            }
            total += pv * (pv / qv).ln();
        }
    }
    Ok(total.max(0.0))
}

fn sq_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v)
}

/// Lower bound `(m |dmu|^2 + n |dnu|^2) / (m n)` on `|pi_1 - pi_2|_F^2` over
/// couplings with the given marginals.
pub fn coupling_gap_lower_bound(
    mu1: &ProbabilityVector,
    nu1: &ProbabilityVector,
    mu2: &ProbabilityVector,
    nu2: &ProbabilityVector,
) -> Result<f64> {
    let (m, n) = (mu1.len(), nu1.len());
    if mu2.len() != m {
        return Err(Error::dims("row marginal", m, mu2.len()));
    }
    if nu2.len() != n {
        return Err(Error::dims("column marginal", n, nu2.len()));
    }
    let dmu = mu1.as_array() - mu2.as_array();
    let dnu = nu1.as_array() - nu2.as_array();
    Ok((m as f64 * sq_norm(dmu.view()) + n as f64 * sq_norm(dnu.view())) / (m * n) as f64)
}

/// `sqrt((|dmu|_1^2 + |dnu|_1^2) / (m n))`: the error floor of any estimate
/// whose marginals are pinned to the noisy ones.
pub fn iot_error_lower_bound(delta_mu: ArrayView1<'_, f64>, delta_nu: ArrayView1<'_, f64>, m: usize, n: usize) -> f64 {
    let l1 = |v: ArrayView1<'_, f64>| v.iter().map(|x| x.abs()).sum::<f64>();
    let (a, b) = (l1(delta_mu), l1(delta_nu));
    ((a * a + b * b) / (m * n) as f64).sqrt()
}

/// Least-squares shift `a 1^T + 1 b^T` of `m`: row means, column means and
/// the grand mean. Returns `(a, b)` with the grand mean folded into `a`.
pub fn best_shift(m: ArrayView2<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let rows = m.mean_axis(Axis(1)).expect("non-empty");
    let cols = m.mean_axis(Axis(0)).expect("non-empty");
    let grand = m.mean().expect("non-empty");
    (rows - grand, cols)
}

/// `M - (a 1^T + 1 b^T)` for the least-squares shift.
pub fn shift_residual(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let (a, b) = best_shift(m);
    let mut r = m.to_owned();
    Zip::indexed(&mut r).for_each(|(i, j), x| *x -= a[i] + b[j]);
    r
}

/// `f^T G^+ f` through an explicit solution of `G x = f`:
/// `x_a = (M 1) / n`, `x_b = (M^T 1 - total / n) / m`. Any solution gives the
/// same value because `f` is orthogonal to the null space `[1; -1]`.
pub fn shift_gram_quadratic(m: ArrayView2<'_, f64>) -> f64 {
    let (rows, cols) = m.dim();
    let r = m.sum_axis(Axis(1));
    let c = m.sum_axis(Axis(0));
    let total = m.sum();
    let xa = &r / cols as f64;
    let xb = c.mapv(|v| (v - total / cols as f64) / rows as f64);
    r.dot(&xa) + c.dot(&xb)
}

fn frob_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// `min_{a,b} |C_2 - C_1 - a 1^T - 1 b^T|_F`.
pub fn cost_shift_distance(c1: &CostMatrix, c2: &CostMatrix) -> Result<f64> {
    same_shape(c1.shape(), c2.shape(), "cost")?;
    let diff = c2.as_array() - c1.as_array();
    Ok(frob_sq(&shift_residual(diff.view())).sqrt())
}

/// `learned + a 1^T + 1 b^T` closest to `reference` in Frobenius norm.
pub fn shift_aligned(learned: &CostMatrix, reference: &CostMatrix) -> Result<CostMatrix> {
    same_shape(learned.shape(), reference.shape(), "cost")?;
    let diff = reference.as_array() - learned.as_array();
    let (a, b) = best_shift(diff.view());
    let mut out = learned.as_array().clone();
    Zip::indexed(&mut out).for_each(|(i, j), x| *x += a[i] + b[j]);
    CostMatrix::new(out)
}

fn log_positive(p: &CouplingMatrix) -> Result<Array2<f64>> {
    if let Some(((i, j), _)) = p.view().indexed_iter().find(|(_, &v)| v <= 0.0) {
        return Err(Error::SupportViolation { i, j });
    }
    Ok(p.view().mapv(f64::ln))
}

/// Checks `|C_learned - C_0|_F^2 >= (|dlog pi|_F^2 - f^T G^+ f) / lambda^2`
/// with `dlog pi = log pi_hat - log pi_0`.
pub fn cost_error_bound_check(
    c0: &CostMatrix,
    c_learned: &CostMatrix,
    pi0: &CouplingMatrix,
    pi_hat: &CouplingMatrix,
    lambda: f64,
) -> Result<BoundReport> {
    same_shape(c0.shape(), c_learned.shape(), "cost")?;
    same_shape(c0.shape(), pi0.shape(), "coupling")?;
    same_shape(pi0.shape(), pi_hat.shape(), "coupling")?;
    let dlog = log_positive(pi_hat)? - log_positive(pi0)?;
    let bound = frob_sq(&shift_residual(dlog.view())) / (lambda * lambda);
    let observed = frob_sq(&(c_learned.as_array() - c0.as_array()));
    Ok(BoundReport::new(bound, observed))
}

/// Checks `|dlog pi|_F^2 >= lambda^2 (|dC|_F^2 - f^T G^+ f)` for the plans of
/// `C_0` and `C_learned` at `(mu, nu)`. Log-plans come from the Sinkhorn
/// log-scalings so tiny entries keep full relative precision.
pub fn prediction_error_bound_check(
    c0: &CostMatrix,
    c_learned: &CostMatrix,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    lambda: f64,
) -> Result<BoundReport> {
    same_shape(c0.shape(), c_learned.shape(), "cost")?;
    let r0 = sinkhorn(c0, mu, nu, lambda, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    let r1 = sinkhorn(c_learned, mu, nu, lambda, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    let dlog = r1.log_plan(c_learned) - r0.log_plan(c0);
    let dc = c_learned.as_array() - c0.as_array();
    let bound = lambda * lambda * frob_sq(&shift_residual(dc.view()));
    Ok(BoundReport::new(bound, frob_sq(&dlog)))
}

/// Recovers a symmetric hollow cost from the plan it generates.
///
/// With `pi = diag(a) exp(-lambda C) diag(b)` and `C` symmetric with zero
/// diagonal, `t_i = sqrt(a_i / b_i)` satisfies `t_i / t_j = sqrt(pi_ij / pi_ji)`
/// and `exp(-lambda C_ij) = pi_ij / (sqrt(pi_ii pi_jj) t_i / t_j)`.
pub fn symmetric_cost_recovery(pi: &CouplingMatrix, lambda: f64) -> Result<MetricMatrix> {
    let (n, c) = pi.shape();
    if n != c {
        return Err(Error::dims("plan", format!("{n}x{n}"), format!("{n}x{c}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let lp = log_positive(pi)?;
    // log t_i relative to t_0.
    let log_t = Array1::from_shape_fn(n, |i| 0.5 * (lp[[i, 0]] - lp[[0, i]]));
    let mut violation: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pairwise = 0.5 * (lp[[i, j]] - lp[[j, i]]);
            violation = violation.max((pairwise - (log_t[i] - log_t[j])).abs());
        }
    }
    if violation > CYCLE_TOLERANCE {
        return Err(Error::NotSymmetricGenerated { violation });
    }
    let mut cost = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let log_k = lp[[i, j]] - 0.5 * (lp[[i, i]] + lp[[j, j]]) - (log_t[i] - log_t[j]);
                cost[[i, j]] = -log_k / lambda;
            }
        }
    }
    let sym = (&cost + &cost.t()) * 0.5;
    MetricMatrix::new(sym, CYCLE_TOLERANCE)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// `KL(test || pred)`; `None` when the prediction misses support of the
    /// test matrix.
    pub kl: Option<f64>,
}

pub fn eval_matching(pi_pred: &CouplingMatrix, pi_test: &CouplingMatrix) -> Result<MatchingMetrics> {
    same_shape(pi_pred.shape(), pi_test.shape(), "coupling")?;
    let diff = pi_pred.as_array() - pi_test.as_array();
    let count = diff.len() as f64;
    let rmse = (frob_sq(&diff) / count).sqrt();
    let mae = diff.iter().map(|x| x.abs()).sum::<f64>() / count;
    let kl = match kl_divergence(pi_test, pi_pred) {
        Ok(v) => Some(v),
        Err(Error::SupportViolation { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(MatchingMetrics { rmse, mae, kl })
}
