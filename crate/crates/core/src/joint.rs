//! Learning the side costs `C_u`, `C_v` together with `A`.
//!
//! Side costs live in the set of distance matrices whose entries sum to one.
//! Each outer iteration takes a projected gradient step on both side costs
//! (concurrently) between the `A` step and the dual update.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::riot::{run_engine, Problem, RiotState, SideHook};
use crate::types::{metric_violation, CostMatrix, CouplingMatrix, HyperParams, InteractionMatrix, MarginalPair, MetricMatrix, ProfileSet};

pub const PROJECTION_MAX_CYCLES: usize = 5000;
/// Tolerance of [`MetricMatrix`] checks on projected matrices.
pub const METRIC_TOLERANCE: f64 = 1e-7;
const STOP_VIOLATION: f64 = 1e-12;
const STOP_CHANGE: f64 = 1e-12;

/// Euclidean projection onto `{x >= 0, sum x = total}`.
fn project_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - total) / (k + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        }
    }
    y.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// Index of the pair `i < j` in row-major upper-triangular order.
fn pair_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    i * d - i * (i + 1) / 2 + (j - i - 1)
}

fn to_matrix(d: usize, x: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros((d, d));
    for i in 0..d {
        for j in i + 1..d {
            let v = x[pair_index(d, i, j)];
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

fn worst_violation(d: usize, x: &[f64]) -> f64 {
    let mut worst = (2.0 * x.iter().sum::<f64>() - 1.0).abs();
    for &v in x {
        worst = worst.max(-v);
    }
    for i in 0..d {
        for j in i + 1..d {
            for k in j + 1..d {
                let (a, b, c) = (x[pair_index(d, i, j)], x[pair_index(d, i, k)], x[pair_index(d, j, k)]);
                worst = worst.max(a - b - c).max(b - a - c).max(c - a - b);
            }
        }
    }
    worst
}

/// Frobenius projection of `(M + M^T)/2` with zeroed diagonal onto distance
/// matrices with unit total mass, by Dykstra's cyclic projections over the
/// triangle half-spaces and the simplex.
pub fn project_metric_simplex(input: ArrayView2<'_, f64>) -> Result<MetricMatrix> {
    project_metric_simplex_with(input, PROJECTION_MAX_CYCLES)
}

pub fn project_metric_simplex_with(input: ArrayView2<'_, f64>, max_cycles: usize) -> Result<MetricMatrix> {
    let (d, c) = input.dim();
    if d != c {
        return Err(Error::dims("matrix to project", format!("{d}x{d}"), format!("{d}x{c}")));
    }
    if d < 2 {
        return Err(Error::InvalidInput("unit-mass distance matrices need dimension at least 2".into()));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix to project has non-finite entries".into()));
    }
    let pairs = d * (d - 1) / 2;
    let mut x = vec![0.0; pairs];
    for i in 0..d {
        for j in i + 1..d {
            x[pair_index(d, i, j)] = 0.5 * (input[[i, j]] + input[[j, i]]);
        }
    }
    // Each triple contributes three half-spaces `x_a - x_b - x_c <= 0`; the
    // Dykstra correction of a half-space is a multiple of its normal.
    let triples: Vec<[usize; 3]> = (0..d)
        .flat_map(|i| (i + 1..d).flat_map(move |j| (j + 1..d).map(move |k| [i, j, k])))
        .map(|[i, j, k]| [pair_index(d, i, j), pair_index(d, i, k), pair_index(d, j, k)])
        .collect();
    let mut tri_dual = vec![0.0; triples.len() * 3];
    let mut simplex_dual = vec![0.0; pairs];

    let mut violation = f64::INFINITY;
    for _ in 0..max_cycles {
        let before = x.clone();
        for (t, e) in triples.iter().enumerate() {
            for (r, (a, b, c)) in [(e[0], e[1], e[2]), (e[1], e[0], e[2]), (e[2], e[0], e[1])].into_iter().enumerate() {
                let slot = &mut tri_dual[3 * t + r];
                // Restore the previous correction, then project.
                let (ya, yb, yc) = (x[a] + *slot, x[b] - *slot, x[c] - *slot);
                let theta = (ya - yb - yc).max(0.0) / 3.0;
                x[a] = ya - theta;
                x[b] = yb + theta;
                x[c] = yc + theta;
                *slot = theta;
            }
        }
        let y: Vec<f64> = x.iter().zip(&simplex_dual).map(|(a, b)| a + b).collect();
        x = project_simplex(&y, 0.5);
        for k in 0..pairs {
            simplex_dual[k] = y[k] - x[k];
        }
        violation = worst_violation(d, &x);
        let change = x.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if violation <= STOP_VIOLATION && change <= STOP_CHANGE {
            return MetricMatrix::new(to_matrix(d, &x), METRIC_TOLERANCE);
        }
    }
    if violation <= STOP_VIOLATION {
        return MetricMatrix::new(to_matrix(d, &x), METRIC_TOLERANCE);
    }
    Err(Error::ProjectionNotConverged { cycles: max_cycles, violation })
}

/// Largest violation of distance-matrix and unit-mass conditions.
pub fn metric_simplex_violation(c: ArrayView2<'_, f64>) -> f64 {
    metric_violation(c).max((c.sum() - 1.0).abs())
}

fn softmax_columns(z: ArrayView1<'_, f64>, c: ArrayView2<'_, f64>, lambda: f64) -> Array2<f64> {
    let (m, n) = c.dim();
    let mut out = Array2::zeros((m, n));
    for j in 0..n {
        let col: Vec<f64> = (0..m).map(|i| lambda * (z[i] - c[[i, j]])).collect();
        let mx = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = col.iter().map(|v| (v - mx).exp()).sum();
        for i in 0..m {
            out[[i, j]] = (col[i] - mx).exp() / total;
        }
    }
    out
}

/// `delta <z^{C_u}, mu_hat>` for fixed `z`.
pub fn relaxation_value(z: ArrayView1<'_, f64>, c_u: &CostMatrix, mu_hat: ArrayView1<'_, f64>, lambda_u: f64, delta: f64) -> f64 {
    let zc = crate::entropic::soft_c_transform(z, c_u.view(), mu_hat, lambda_u);
    delta * zc.dot(&mu_hat)
}

/// Gradient of `delta <z^{C_u}, mu_hat>` in `C_u` with `z` fixed:
/// `delta mu_hat_j softmax_i(lambda_u (z_i - C_ij))`. At the optimal `z` for
/// `(C_u, mu, mu_hat)` this is `delta` times the regularized OT plan.
pub fn grad_cu_relaxation(
    z: ArrayView1<'_, f64>,
    mu: ArrayView1<'_, f64>,
    mu_hat: ArrayView1<'_, f64>,
    c_u: &CostMatrix,
    lambda_u: f64,
    delta: f64,
) -> Result<Array2<f64>> {
    let (m, n) = c_u.shape();
    if z.len() != m || mu.len() != m {
        return Err(Error::dims("row potential", m, z.len().max(mu.len())));
    }
    if mu_hat.len() != n {
        return Err(Error::dims("target marginal", n, mu_hat.len()));
    }
    if delta == 0.0 {
        return Ok(Array2::zeros((m, n)));
    }
    let mut g = softmax_columns(z, c_u.view(), lambda_u);
    for ((_, j), v) in g.indexed_iter_mut() {
        *v *= delta * mu_hat[j];
    }
    Ok(g)
}

#[derive(Clone, Debug, Default)]
pub struct JointOptions {
    /// Step on `C_u`, `C_v`; defaults to a tenth of the `A` step.
    pub side_step_size: Option<f64>,
    /// Starting side costs; default is the uniform off-diagonal matrix.
    pub init_c_u: Option<MetricMatrix>,
    pub init_c_v: Option<MetricMatrix>,
}

#[derive(Clone, Debug)]
pub struct JointFitResult {
    pub a: InteractionMatrix,
    pub c_u: MetricMatrix,
    pub c_v: MetricMatrix,
    pub fitted_plan: CouplingMatrix,
    pub objective_trace: Vec<f64>,
    pub state: RiotState,
}

/// Uniform off-diagonal distance matrix with unit mass.
pub fn uniform_metric(d: usize) -> Result<MetricMatrix> {
    if d < 2 {
        return Err(Error::InvalidInput("unit-mass distance matrices need dimension at least 2".into()));
    }
    let c = 1.0 / (d * (d - 1)) as f64;
    let mut m = Array2::from_elem((d, d), c);
    m.diag_mut().fill(0.0);
    MetricMatrix::new(m, METRIC_TOLERANCE)
}

fn check_start(c: &MetricMatrix, d: usize, what: &'static str) -> Result<()> {
    if c.dim() != d {
        return Err(Error::dims(what, format!("{d}x{d}"), format!("{0}x{0}", c.dim())));
    }
    if (c.view().sum() - 1.0).abs() > METRIC_TOLERANCE {
        return Err(Error::InvalidInput(format!("{what} must have unit total mass")));
    }
    Ok(())
}

fn side_step(
    z: ArrayView1<'_, f64>,
    model: &Array1<f64>,
    data: ArrayView1<'_, f64>,
    c: &mut CostMatrix,
    lambda: f64,
    delta: f64,
    step: f64,
) -> Result<()> {
    let g = grad_cu_relaxation(z, model.view(), data, c, lambda, delta)?;
    let moved = c.as_array() - &(g * step);
    *c = project_metric_simplex(moved.view())?.to_cost();
    Ok(())
}

/// Alternates `(A, mu, nu)`, `(C_u, C_v)` and `(z, w)` updates.
pub fn joint_fit(
    pi_hat: &CouplingMatrix,
    u: &ProfileSet,
    v: &ProfileSet,
    k: &KernelSpec,
    params: &HyperParams,
    opts: &JointOptions,
) -> Result<JointFitResult> {
    let prob = Problem::new(pi_hat, u, v, k)?;
    let (m, n) = pi_hat.shape();
    let c_u = match &opts.init_c_u {
        Some(c) => {
            check_start(c, m, "row side cost")?;
            c.clone()
        }
        None => uniform_metric(m)?,
    };
    let c_v = match &opts.init_c_v {
        Some(c) => {
            check_start(c, n, "column side cost")?;
            c.clone()
        }
        None => uniform_metric(n)?,
    };
    let step = opts.side_step_size.unwrap_or(0.1 * params.step_size);
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("side step size must be nonnegative, got {step}")));
    }
    let (mu_hat, nu_hat) = (prob.mu_hat.as_array().clone(), prob.nu_hat.as_array().clone());
    let (lu, lv, delta) = (params.lambda_u, params.lambda_v, params.delta);

    let mut hook = |marg: &MarginalPair, z: ArrayView1<'_, f64>, w: ArrayView1<'_, f64>, cu: &mut CostMatrix, cv: &mut CostMatrix| -> Result<()> {
        if step == 0.0 {
            return Ok(());
        }
        let (ru, rv) = rayon::join(
            || side_step(z, marg.mu.as_array(), mu_hat.view(), cu, lu, delta, step),
            || side_step(w, marg.nu.as_array(), nu_hat.view(), cv, lv, delta, step),
        );
        ru.and(rv)
    };
    let hook_ref: &mut SideHook<'_> = &mut hook;
    let out = run_engine(&prob, c_u.to_cost(), c_v.to_cost(), params, None, Some(hook_ref))?;
    let (cu, cv) = out.best_costs;
    Ok(JointFitResult {
        a: out.fit.a,
        c_u: MetricMatrix::new(cu.into_inner(), METRIC_TOLERANCE)?,
        c_v: MetricMatrix::new(cv.into_inner(), METRIC_TOLERANCE)?,
        fitted_plan: out.fit.fitted_plan,
        objective_trace: out.fit.objective_trace,
        state: out.fit.state,
    })
}
