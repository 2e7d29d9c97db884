//! The `(xi, eta)` block: minimize
//! `h(xi, eta) = -<mu_hat, ln xi> - <nu_hat, ln eta> + xi^T M eta`
//! subject to `xi^T Z eta = 1`, by exact alternating minimization.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Inner sweeps stop early once the stationarity residual falls below this.
pub const INNER_EXIT_RESIDUAL: f64 = 1e-13;
const ROOT_MAX_STEPS: usize = 200;

#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub xi: Array1<f64>,
    pub eta: Array1<f64>,
    /// Multiplier from the last `xi` update.
    pub theta1: f64,
    /// Multiplier from the last `eta` update; this is the one used downstream.
    pub theta2: f64,
    /// `h` at the start and after every half-step.
    pub h_trace: Vec<f64>,
    /// `max_i |-mu_hat_i / xi_i + (M eta)_i - theta2 (Z eta)_i|` at exit.
    pub kkt_residual: f64,
    pub sweeps: usize,
}

/// Root of `sum_i w_i r_i / (s_i - theta r_i) = 1` below `min_i s_i / r_i`,
/// returned as `(theta, t)` with `t = theta_max - theta`, together with the
/// offsets `d_i = s_i / r_i - theta_max` so callers can form `d_i + t` without
/// cancellation.
///
/// In terms of `t`, `g(t) = sum_i w_i / (d_i + t) - 1` is convex and decreasing
/// with its root in `(0, 1]`; Newton from the left converges monotonically.
pub(crate) fn multiplier_root(
    weights: ArrayView1<'_, f64>,
    r: ArrayView1<'_, f64>,
    s: ArrayView1<'_, f64>,
) -> Result<(f64, f64, Array1<f64>)> {
    if let Some((index, &value)) = r.indexed_iter().find(|(_, &x)| !(x > 0.0 && x.is_finite())) {
        return Err(Error::NonPositiveDenominator { index, value });
    }
    let q = &s / &r;
    let (imin, theta_max) = q
        .indexed_iter()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    if !theta_max.is_finite() {
        return Err(Error::RootNotFound { lo: f64::NEG_INFINITY, hi: theta_max, steps: 0 });
    }
    let d = q.mapv(|x| x - theta_max);
    let g = |t: f64| weights.iter().zip(d.iter()).map(|(&w, &di)| w / (di + t)).sum::<f64>() - 1.0;
    let dg = |t: f64| -weights.iter().zip(d.iter()).map(|(&w, &di)| w / ((di + t) * (di + t))).sum::<f64>();

    let (mut lo, mut hi) = (0.0, 1.0);
    if g(hi) >= 0.0 {
        // Only when every offset is zero: then g(1) = 0 exactly.
        return Ok((theta_max - hi, hi, d));
    }
    let mut t = if weights[imin] > 0.0 { 0.5 * weights[imin] } else { 0.5 };
    for _ in 0..ROOT_MAX_STEPS {
        let gt = g(t);
        if gt == 0.0 {
            return Ok((theta_max - t, t, d));
        }
        if gt > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - gt / dg(t);
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - t).abs() <= 4.0 * f64::EPSILON * t {
            return Ok((theta_max - next, next, d));
        }
        t = next;
    }
    Err(Error::RootNotFound { lo: theta_max - hi, hi: theta_max - lo, steps: ROOT_MAX_STEPS })
}

/// Multiplier of the `xi` update: root of `p(theta) = 1` with
/// `p(theta) = sum_i mu_hat_i (Z eta)_i / ((M - theta Z) eta)_i`.
pub fn theta_root_p(
    eta: ArrayView1<'_, f64>,
    mu_hat: ArrayView1<'_, f64>,
    m: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
) -> Result<f64> {
    let r = z.dot(&eta);
    let s = m.dot(&eta);
    multiplier_root(mu_hat, r.view(), s.view()).map(|(theta, _, _)| theta)
}

/// Multiplier of the `eta` update (the transposed problem).
pub fn theta_root_q(
    xi: ArrayView1<'_, f64>,
    nu_hat: ArrayView1<'_, f64>,
    m: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
) -> Result<f64> {
    let r = z.t().dot(&xi);
    let s = m.t().dot(&xi);
    multiplier_root(nu_hat, r.view(), s.view()).map(|(theta, _, _)| theta)
}

/// `p(theta) - 1`, for residual checks.
pub fn p_residual(theta: f64, eta: ArrayView1<'_, f64>, mu_hat: ArrayView1<'_, f64>, m: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>) -> f64 {
    let r = z.dot(&eta);
    let s = m.dot(&eta);
    (0..r.len()).map(|i| mu_hat[i] * r[i] / (s[i] - theta * r[i])).sum::<f64>() - 1.0
}

pub fn h_value(
    xi: ArrayView1<'_, f64>,
    eta: ArrayView1<'_, f64>,
    mu_hat: ArrayView1<'_, f64>,
    nu_hat: ArrayView1<'_, f64>,
    m: ArrayView2<'_, f64>,
) -> f64 {
    let lx: f64 = mu_hat.iter().zip(xi.iter()).map(|(&w, &x)| w * x.ln()).sum();
    let le: f64 = nu_hat.iter().zip(eta.iter()).map(|(&w, &e)| w * e.ln()).sum();
    -lx - le + xi.dot(&m.dot(&eta))
}

fn kkt_residual(
    xi: ArrayView1<'_, f64>,
    eta: ArrayView1<'_, f64>,
    mu_hat: ArrayView1<'_, f64>,
    m: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    theta: f64,
) -> f64 {
    let r = z.dot(&eta);
    let s = m.dot(&eta);
    (0..xi.len()).map(|i| (-mu_hat[i] / xi[i] + s[i] - theta * r[i]).abs()).fold(0.0, f64::max)
}

/// Runs up to `sweeps` alternating `(xi, eta)` updates on kernel `Z` and
/// weighted kernel `M`, starting from `init` (or ones), rescaled onto
/// `xi^T Z eta = 1`.
pub fn solve_scaled(
    z: ArrayView2<'_, f64>,
    m: ArrayView2<'_, f64>,
    mu_hat: ArrayView1<'_, f64>,
    nu_hat: ArrayView1<'_, f64>,
    sweeps: usize,
    init: Option<(ArrayView1<'_, f64>, ArrayView1<'_, f64>)>,
) -> Result<InnerSolution> {
    let (rows, cols) = z.dim();
    let (mut xi, mut eta) = match init {
        Some((x, e)) => (x.to_owned(), e.to_owned()),
        None => (Array1::ones(rows), Array1::ones(cols)),
    };
    let mass = xi.dot(&z.dot(&eta));
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::InconsistentState { residual: mass - 1.0 });
    }
    let scale = mass.sqrt();
    xi /= scale;
    eta /= scale;

    let mut h_trace = vec![h_value(xi.view(), eta.view(), mu_hat, nu_hat, m)];
    if sweeps == 0 {
        let theta = theta_root_q(xi.view(), nu_hat, m, z)?;
        let kkt = kkt_residual(xi.view(), eta.view(), mu_hat, m, z, theta);
        return Ok(InnerSolution { xi, eta, theta1: theta, theta2: theta, h_trace, kkt_residual: kkt, sweeps: 0 });
    }

    let (mut theta1, mut theta2, mut kkt) = (f64::NAN, f64::NAN, f64::INFINITY);
    let mut done = 0;
    for _ in 0..sweeps {
        let r = z.dot(&eta);
        let s = m.dot(&eta);
        let (th, t, d) = multiplier_root(mu_hat, r.view(), s.view())?;
        theta1 = th;
        for i in 0..rows {
            let den = r[i] * (d[i] + t);
            if !(den > 0.0) {
                return Err(Error::NonPositiveDenominator { index: i, value: den });
            }
            xi[i] = mu_hat[i] / den;
        }
        h_trace.push(h_value(xi.view(), eta.view(), mu_hat, nu_hat, m));

        let r = z.t().dot(&xi);
        let s = m.t().dot(&xi);
        let (th, t, d) = multiplier_root(nu_hat, r.view(), s.view())?;
        theta2 = th;
        for j in 0..cols {
            let den = r[j] * (d[j] + t);
            if !(den > 0.0) {
                return Err(Error::NonPositiveDenominator { index: j, value: den });
            }
            eta[j] = nu_hat[j] / den;
        }
        h_trace.push(h_value(xi.view(), eta.view(), mu_hat, nu_hat, m));
        done += 1;

        kkt = kkt_residual(xi.view(), eta.view(), mu_hat, m, z, theta2);
        if kkt <= INNER_EXIT_RESIDUAL {
            break;
        }
    }
    Ok(InnerSolution { xi, eta, theta1, theta2, h_trace, kkt_residual: kkt, sweeps: done })
}
