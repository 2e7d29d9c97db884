//! The cost model C(A) = f(U^T A V) for the built-in kernels, and a check of
//! the analytic derivative against a finite difference.

use ndarray::{array, Array2};
use riot::kernel::{kernel_cost, kernel_cost_directional_grad, KernelSpec};
use riot::{InteractionMatrix, ProfileSet};

fn main() -> riot::Result<()> {
    // Profiles are stored one column per individual.
    let u = ProfileSet::new(array![[1.0, 0.0, -1.0], [0.5, 1.0, 0.0]])?;
    let v = ProfileSet::new(array![[0.0, 1.0], [1.0, 1.0]])?;
    let a = InteractionMatrix::new(array![[0.8, -0.2], [0.1, 0.5]])?;

    for (name, k) in [
        ("linear", KernelSpec::linear()),
        ("polynomial", KernelSpec::polynomial(0.5, 1.0, 2)),
        ("sigmoid", KernelSpec::sigmoid(0.5, 0.0)),
    ] {
        let c = kernel_cost(&u, &v, &a, &k)?;
        println!("{name}:");
        for row in c.as_array().rows() {
            println!("  {}", row.iter().map(|x| format!("{x:8.4}")).collect::<Vec<_>>().join(" "));
        }

        let dir: Array2<f64> = array![[1.0, 0.0], [0.0, -1.0]];
        let g = kernel_cost_directional_grad(&u, &v, &a, &k, dir.view())?;
        let h = 1e-6;
        let shifted = |s: f64| InteractionMatrix::new(a.as_array() + &(&dir * s));
        let fd = (kernel_cost(&u, &v, &shifted(h)?, &k)?.into_inner() - kernel_cost(&u, &v, &shifted(-h)?, &k)?.into_inner()) / (2.0 * h);
        let err = (&g - &fd).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
        println!("  directional derivative vs finite difference: {err:.1e}");
    }
    Ok(())
}
