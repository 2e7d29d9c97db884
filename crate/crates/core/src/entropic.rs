//! Forward entropy-regularized optimal transport.
//!
//! The regularized plan has the form `diag(a) exp(-lambda C) diag(b)`; the
//! scalings are found by Sinkhorn-Knopp matrix scaling. Scalings are kept in
//! log form so that results stay representable when `lambda * C` is large.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::types::{CostMatrix, CouplingMatrix, ProbabilityVector};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Scaling factors outside `[1e-150, 1e150]` trigger log-domain updates.
const LOG_SCALING_LIMIT: f64 = 345.387_763_949_107; // ln(1e150)

/// Output of a converged Sinkhorn run.
#[derive(Clone, Debug)]
pub struct SinkhornResult {
    pub plan: CouplingMatrix,
    /// `ln a`: log of the left scaling.
    pub log_left: Array1<f64>,
    /// `ln b`: log of the right scaling.
    pub log_right: Array1<f64>,
    pub lambda: f64,
    pub iterations: usize,
    /// `max(|plan 1 - mu|_1, |plan^T 1 - nu|_1)`.
    pub final_marginal_error: f64,
    /// Whether the log-domain path was used.
    pub log_domain: bool,
}

impl SinkhornResult {
    pub fn left_scaling(&self) -> Array1<f64> {
        self.log_left.mapv(f64::exp)
    }

    pub fn right_scaling(&self) -> Array1<f64> {
        self.log_right.mapv(f64::exp)
    }

    /// `ln pi_ij = ln a_i + ln b_j - lambda C_ij`, finite even where the plan
    /// entry underflows.
    pub fn log_plan(&self, cost: &CostMatrix) -> Array2<f64> {
        log_plan_from(self.log_left.view(), self.log_right.view(), cost.view(), self.lambda)
    }

    /// Dual potential `z = ln(a) / lambda` for the row constraint.
    pub fn row_potential(&self) -> Array1<f64> {
        &self.log_left / self.lambda
    }

    /// Dual potential `ln(b) / lambda` for the column constraint.
    pub fn col_potential(&self) -> Array1<f64> {
        &self.log_right / self.lambda
    }
}

/// Dual potentials of regularized OT: `z` and its soft c-transform.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPotentials {
    pub z: Array1<f64>,
    pub z_conjugate: Array1<f64>,
}

pub(crate) fn log_plan_from(
    log_left: ArrayView1<'_, f64>,
    log_right: ArrayView1<'_, f64>,
    cost: ArrayView2<'_, f64>,
    lambda: f64,
) -> Array2<f64> {
    let mut out = cost.mapv(|c| -lambda * c);
    for (mut row, &la) in out.axis_iter_mut(Axis(0)).zip(log_left.iter()) {
        Zip::from(&mut row).and(&log_right).for_each(|x, &lb| *x += la + lb);
    }
    out
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_marginals(cost: &CostMatrix, mu: &ProbabilityVector, nu: &ProbabilityVector, lambda: f64) -> Result<()> {
    let (m, n) = cost.shape();
    if mu.len() != m {
        return Err(Error::dims("row marginal", m, mu.len()));
    }
    if nu.len() != n {
        return Err(Error::dims("column marginal", n, nu.len()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if let Some(index) = mu.first_zero() {
        return Err(Error::ZeroMarginal { side: "row", index });
    }
    if let Some(index) = nu.first_zero() {
        return Err(Error::ZeroMarginal { side: "column", index });
    }
    Ok(())
}

fn marginal_errors(plan: &Array2<f64>, mu: ArrayView1<'_, f64>, nu: ArrayView1<'_, f64>) -> f64 {
    let row: f64 = Zip::from(&plan.sum_axis(Axis(1))).and(mu).fold(0.0, |acc, &s, &t| acc + (s - t).abs());
    let col: f64 = Zip::from(&plan.sum_axis(Axis(0))).and(nu).fold(0.0, |acc, &s, &t| acc + (s - t).abs());
    row.max(col)
}

/// Sinkhorn-Knopp scaling of `exp(-lambda C)` to marginals `(mu, nu)`, starting
/// from `a = 1`.
pub fn sinkhorn(
    cost: &CostMatrix,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<SinkhornResult> {
    let init = Array1::zeros(mu.len());
    sinkhorn_with_init(cost, mu, nu, lambda, tol, max_iters, init.view())
}

/// As [`sinkhorn`], starting from the given `ln a`.
pub fn sinkhorn_with_init(
    cost: &CostMatrix,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    lambda: f64,
    tol: f64,
    max_iters: usize,
    init_log_left: ArrayView1<'_, f64>,
) -> Result<SinkhornResult> {
    check_marginals(cost, mu, nu, lambda)?;
    if init_log_left.len() != mu.len() {
        return Err(Error::dims("initial scaling", mu.len(), init_log_left.len()));
    }
    let c = cost.view();
    let (mu, nu) = (mu.view(), nu.view());

    // Kernels whose dynamic range exceeds f64 go straight to log space.
    let (cmin, cmax) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let spread = lambda * (cmax - cmin) + init_log_left.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let attempt = if spread < 0.5 * LOG_SCALING_LIMIT {
        scale_standard(c, mu, nu, lambda, tol, max_iters, init_log_left)
    } else {
        None
    };

    let (log_left, log_right, iterations, log_domain) = match attempt {
        Some(Ok((la, lb, it))) => (la, lb, it, false),
        Some(Err(e)) => return Err(e),
        None => {
            let (la, lb, it) = scale_log(c, mu, nu, lambda, tol, max_iters, init_log_left)?;
            (la, lb, it, true)
        }
    };

    let log_pi = log_plan_from(log_left.view(), log_right.view(), c, lambda);
    let raw = log_pi.mapv(f64::exp);
    let final_marginal_error = marginal_errors(&raw, mu, nu);
    let plan = CouplingMatrix::new(raw)?;
    Ok(SinkhornResult {
        plan,
        log_left,
        log_right,
        lambda,
        iterations,
        final_marginal_error,
        log_domain,
    })
}

type Scalings = (Array1<f64>, Array1<f64>, usize);

/// Plain-domain iteration. `None` means a scaling left the safe range and the
/// caller should fall back to log space.
fn scale_standard(
    c: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
    init_log_left: ArrayView1<'_, f64>,
) -> Option<Result<Scalings>> {
    let k = c.mapv(|v| (-lambda * v).exp());
    let mut a = init_log_left.mapv(f64::exp);
    let mut kta = k.t().dot(&a);
    let mut b;
    let in_range = |v: &Array1<f64>| v.iter().all(|x| x.is_finite() && x.abs().ln().abs() < LOG_SCALING_LIMIT && *x > 0.0);
    let mut err = f64::INFINITY;
    for it in 1..=max_iters {
        b = &nu / &kta;
        let kb = k.dot(&b);
        a = &mu / &kb;
        if !in_range(&a) || !in_range(&b) {
            return None;
        }
        kta = k.t().dot(&a);
        let row: f64 = Zip::from(&a).and(&kb).and(mu).fold(0.0, |acc, &ai, &s, &t| acc + (ai * s - t).abs());
        let col: f64 = Zip::from(&b).and(&kta).and(nu).fold(0.0, |acc, &bj, &s, &t| acc + (bj * s - t).abs());
        err = row.max(col);
        if err <= tol {
            return Some(Ok((a.mapv(f64::ln), b.mapv(f64::ln), it)));
        }
    }
    let b = &nu / &kta;
    let log_pi = log_plan_from(a.mapv(f64::ln).view(), b.mapv(f64::ln).view(), c, lambda);
    Some(Err(Error::SinkhornNotConverged {
        iterations: max_iters,
        marginal_error: err,
        last_plan: Box::new(log_pi.mapv(f64::exp)),
    }))
}

fn scale_log(
    c: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
    init_log_left: ArrayView1<'_, f64>,
) -> Result<Scalings> {
    let (m, n) = c.dim();
    let log_mu = mu.mapv(f64::ln);
    let log_nu = nu.mapv(f64::ln);
    let mut la = init_log_left.to_owned();
    let mut lb = Array1::zeros(n);
    let mut err = f64::INFINITY;
    for it in 1..=max_iters {
        for j in 0..n {
            lb[j] = log_nu[j] - log_sum_exp((0..m).map(|i| la[i] - lambda * c[[i, j]]));
        }
        for i in 0..m {
            la[i] = log_mu[i] - log_sum_exp((0..n).map(|j| lb[j] - lambda * c[[i, j]]));
        }
        let plan = log_plan_from(la.view(), lb.view(), c, lambda).mapv(f64::exp);
        err = marginal_errors(&plan, mu, nu);
        if err <= tol {
            return Ok((la, lb, it));
        }
    }
    Err(Error::SinkhornNotConverged {
        iterations: max_iters,
        marginal_error: err,
        last_plan: Box::new(log_plan_from(la.view(), lb.view(), c, lambda).mapv(f64::exp)),
    })
}

/// `H(pi) = -sum pi_ij (ln pi_ij - 1)` evaluated from log entries.
pub fn entropy_from_log(log_pi: &Array2<f64>) -> f64 {
    -log_pi.iter().map(|&l| {
        let p = l.exp();
        if p == 0.0 { 0.0 } else { p * (l - 1.0) }
    }).sum::<f64>()
}

/// Regularized OT value `<pi, C> - H(pi) / lambda` of a converged plan.
pub fn rot_value_of(result: &SinkhornResult, cost: &CostMatrix) -> f64 {
    let log_pi = result.log_plan(cost);
    let transport: f64 = Zip::from(&log_pi).and(cost.view()).fold(0.0, |acc, &l, &c| acc + l.exp() * c);
    transport - entropy_from_log(&log_pi) / result.lambda
}

/// Regularized OT distance `d_lambda(C, mu, nu)`, solved to default tolerance.
pub fn rot_distance(cost: &CostMatrix, mu: &ProbabilityVector, nu: &ProbabilityVector, lambda: f64) -> Result<f64> {
    rot_distance_with(cost, mu, nu, lambda, DEFAULT_TOL, DEFAULT_MAX_ITERS)
}

pub fn rot_distance_with(
    cost: &CostMatrix,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<f64> {
    let res = sinkhorn(cost, mu, nu, lambda, tol, max_iters)?;
    Ok(rot_value_of(&res, cost))
}

/// Soft c-transform:
/// `zc_j = ln(target_j)/lambda - ln(sum_i exp(lambda (z_i - C_ij)))/lambda`.
pub fn soft_c_transform(
    z: ArrayView1<'_, f64>,
    cost: ArrayView2<'_, f64>,
    target: ArrayView1<'_, f64>,
    lambda: f64,
) -> Array1<f64> {
    let (m, n) = cost.dim();
    Array1::from_shape_fn(n, |j| {
        (target[j].ln() - log_sum_exp((0..m).map(|i| lambda * (z[i] - cost[[i, j]])))) / lambda
    })
}

/// Dual objective `<z, mu> + <z^C, nu> - 1/lambda` for an arbitrary `z`.
pub fn dual_objective(
    z: ArrayView1<'_, f64>,
    cost: &CostMatrix,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    lambda: f64,
) -> (f64, Array1<f64>) {
    let zc = soft_c_transform(z, cost.view(), nu.view(), lambda);
    let value = z.dot(&mu.view()) + zc.dot(&nu.view()) - 1.0 / lambda;
    (value, zc)
}

/// Dual value of regularized OT at the Sinkhorn potential `z = ln(a)/lambda`.
pub fn rot_dual_value(
    cost: &CostMatrix,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
    lambda: f64,
) -> Result<(f64, DualPotentials)> {
    let res = sinkhorn(cost, mu, nu, lambda, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    Ok(dual_from_result(&res, cost, mu, nu))
}

pub fn dual_from_result(
    res: &SinkhornResult,
    cost: &CostMatrix,
    mu: &ProbabilityVector,
    nu: &ProbabilityVector,
) -> (f64, DualPotentials) {
    let z = res.row_potential();
    let (value, z_conjugate) = dual_objective(z.view(), cost, mu, nu, res.lambda);
    (value, DualPotentials { z, z_conjugate })
}
