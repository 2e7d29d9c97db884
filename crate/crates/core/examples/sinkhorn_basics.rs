//! Entropic OT on a small grid: the plan, its marginals, and the duality gap
//! as the regularization strength varies.

use ndarray::Array2;
use riot::entropic::{dual_from_result, rot_value_of, sinkhorn, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use riot::{CostMatrix, ProbabilityVector};

fn main() -> riot::Result<()> {
    let (m, n) = (5, 4);
    let cost = CostMatrix::new(Array2::from_shape_fn((m, n), |(i, j)| {
        let d = i as f64 / (m - 1) as f64 - j as f64 / (n - 1) as f64;
        d * d
    }))?;
    let mu = ProbabilityVector::from_weights(ndarray::array![1.0, 2.0, 3.0, 2.0, 1.0])?;
    let nu = ProbabilityVector::uniform(n);

    for lambda in [0.5, 5.0, 50.0, 500.0] {
        let res = sinkhorn(&cost, &mu, &nu, lambda, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
        let primal = rot_value_of(&res, &cost);
        let (dual, _) = dual_from_result(&res, &cost, &mu, &nu);
        println!(
            "lambda {lambda:>5}: {:>4} iterations, log domain {:<5}  primal {primal:.6}  dual gap {:.1e}",
            res.iterations,
            res.log_domain,
            (primal - dual).abs()
        );
    }

    let res = sinkhorn(&cost, &mu, &nu, 50.0, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    println!("\nplan at lambda = 50:");
    for row in res.plan.as_array().rows() {
        println!("  {}", row.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("  "));
    }
    Ok(())
}
