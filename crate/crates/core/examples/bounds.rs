//! Verifiable bounds: how far apart couplings with different marginals must be,
//! how much a shifted cost can move a prediction, and cost recovery from a
//! plan when the cost is known to be symmetric.

use ndarray::{array, Array2};
use riot::analysis::{
    coupling_gap_lower_bound, cost_shift_distance, prediction_error_bound_check, symmetric_cost_recovery,
};
use riot::entropic::sinkhorn;
use riot::{CostMatrix, ProbabilityVector};

fn main() -> riot::Result<()> {
    let mu1 = ProbabilityVector::new(array![0.5, 0.3, 0.2])?;
    let nu1 = ProbabilityVector::new(array![0.4, 0.6])?;
    let mu2 = ProbabilityVector::new(array![0.3, 0.3, 0.4])?;
    let nu2 = ProbabilityVector::new(array![0.5, 0.5])?;
    let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.2], [0.5, 0.5]])?;
    let p1 = sinkhorn(&c, &mu1, &nu1, 2.0, 1e-12, 10_000)?.plan;
    let p2 = sinkhorn(&c, &mu2, &nu2, 2.0, 1e-12, 10_000)?.plan;
    let gap = (p1.as_array() - p2.as_array()).mapv(|x| x * x).sum();
    println!("coupling gap {gap:.5} >= bound {:.5}", coupling_gap_lower_bound(&mu1, &nu1, &mu2, &nu2)?);

    // Row and column shifts leave the plan unchanged; anything else must move
    // the log-plan by at least lambda * d.
    let shifted = CostMatrix::new(c.as_array() + &array![[1.0], [-2.0], [0.5]])?;
    let bent = CostMatrix::new(c.as_array() + &array![[0.1, 0.0], [0.0, 0.0], [0.0, 0.1]])?;
    for (name, c2) in [("shifted", &shifted), ("bent", &bent)] {
        let rep = prediction_error_bound_check(&c, c2, &mu1, &nu1, 2.0)?;
        println!(
            "{name}: d = {:.4}, |log pi - log pi'|_F^2 = {:.2e} >= {:.2e}: {}",
            cost_shift_distance(&c, c2)?,
            rep.observed_value,
            rep.bound_value,
            rep.satisfied
        );
    }

    let pts: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (0.0, 2.0), (1.5, 1.5)];
    let d = Array2::from_shape_fn((4, 4), |(i, j)| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt());
    let plan = sinkhorn(&CostMatrix::new(d.clone())?, &ProbabilityVector::uniform(4), &ProbabilityVector::uniform(4), 1.0, 1e-14, 100_000)?.plan;
    let rec = symmetric_cost_recovery(&plan, 1.0)?;
    let err = (rec.as_array() - &d).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
    println!("symmetric cost recovered from its plan, max error {err:.1e}");
    Ok(())
}
