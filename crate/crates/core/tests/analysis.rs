//! Bounds, shift-space geometry and metrics against independent oracles.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use riot::analysis::*;
use riot::entropic::sinkhorn;
use riot::iot::iot_fit;
use riot::kernel::{kernel_cost, KernelSpec};
use riot::synth::add_noise;
use riot::{marginals, CostMatrix, CouplingMatrix, HyperParams, InteractionMatrix, ProbabilityVector};

/// `min_{a,b} |a 1^T + 1 b^T - M|_F^2` by SVD least squares on the dense
/// `mn x (m+n)` design matrix.
fn shift_residual_oracle(m: &Array2<f64>) -> f64 {
    let (rows, cols) = m.dim();
    let design = DMatrix::from_fn(rows * cols, rows + cols, |r, c| {
        let (i, j) = (r / cols, r % cols);
        if c == i || c == rows + j { 1.0 } else { 0.0 }
    });
    let target = DVector::from_iterator(rows * cols, m.iter().cloned());
    let x = design.clone().svd(true, true).solve(&target, 1e-12).unwrap();
    (design * x - target).norm_squared()
}

fn neumaier_kl(p: &CouplingMatrix, q: &CouplingMatrix) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (&a, &b) in p.as_array().iter().zip(q.as_array().iter()) {
        if a > 0.0 {
            let term = a * (a / b).ln();
            let t = sum + term;
            comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
            sum = t;
        }
    }
    sum + comp
}

fn frob_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

#[test]
fn shift_distance_matches_dense_least_squares() {
    for seed in 0..60 {
        let mut r = rng(600 + seed);
        let (rows, cols) = (r.random_range(1..7), r.random_range(1..7));
        let m = normal(&mut r, rows, cols, 1.0);
        let oracle = shift_residual_oracle(&m);
        assert!((frob_sq(&shift_residual(m.view())) - oracle).abs() <= 1e-8);
        assert!((shift_gram_quadratic(m.view()) - (frob_sq(&m) - oracle)).abs() <= 1e-8);
        let d = cost_shift_distance(&CostMatrix::zeros(rows, cols), &CostMatrix::new(m).unwrap()).unwrap();
        assert!((d * d - oracle).abs() <= 1e-8);
    }
}

#[test]
fn shift_space_is_annihilated() {
    let mut r = rng(601);
    let c = uniform_cost(&mut r, 4, 5, 2.0);
    let a = Array1::from_shape_simple_fn(4, || r.random_range(-5.0..5.0));
    let b = Array1::from_shape_simple_fn(5, || r.random_range(-5.0..5.0));
    let shifted = Array2::from_shape_fn((4, 5), |(i, j)| c.as_array()[[i, j]] + a[i] + b[j]);
    let d = cost_shift_distance(&c, &CostMatrix::new(shifted.clone()).unwrap()).unwrap();
    assert!(d <= 1e-9);
    let aligned = shift_aligned(&CostMatrix::new(shifted).unwrap(), &c).unwrap();
    assert!(max_abs_diff(aligned.as_array(), c.as_array()) <= 1e-9);
}

#[test]
fn coupling_gap_bound_is_minimum_norm_of_constraints() {
    // Minimum-norm D with D 1 = dmu, D^T 1 = dnu, via nalgebra's pseudo-inverse.
    for seed in 0..20 {
        let mut r = rng(700 + seed);
        let (m, n) = (r.random_range(2..6), r.random_range(2..6));
        let (mu1, nu1, mu2, nu2) = (simplex(&mut r, m), simplex(&mut r, n), simplex(&mut r, m), simplex(&mut r, n));
        let rows = DMatrix::from_fn(m + n, m * n, |c, k| {
            let (i, j) = (k / n, k % n);
            if (c < m && c == i) || (c >= m && c - m == j) { 1.0 } else { 0.0 }
        });
        let rhs = DVector::from_iterator(
            m + n,
            (mu1.as_array() - mu2.as_array()).iter().chain((nu1.as_array() - nu2.as_array()).iter()).cloned().collect::<Vec<_>>(),
        );
        let d = rows.svd(true, true).solve(&rhs, 1e-12).unwrap();
        let bound = coupling_gap_lower_bound(&mu1, &nu1, &mu2, &nu2).unwrap();
        assert!((d.norm_squared() - bound).abs() <= 1e-10);
    }
}

#[test]
fn coupling_gap_bound_holds_for_forward_plans() {
    for seed in 0..50 {
        let mut r = rng(800 + seed);
        let (m, n) = (r.random_range(2..8), r.random_range(2..8));
        let (mu1, nu1, mu2, nu2) = (simplex(&mut r, m), simplex(&mut r, n), simplex(&mut r, m), simplex(&mut r, n));
        let bound = coupling_gap_lower_bound(&mu1, &nu1, &mu2, &nu2).unwrap();
        for _ in 0..20 {
            let (c1, c2) = (uniform_cost(&mut r, m, n, 4.0), uniform_cost(&mut r, m, n, 4.0));
            let p1 = sinkhorn(&c1, &mu1, &nu1, 1.0, 1e-12, 100_000).unwrap().plan;
            let p2 = sinkhorn(&c2, &mu2, &nu2, 1.0, 1e-12, 100_000).unwrap().plan;
            let gap = frob_sq(&(p1.as_array() - p2.as_array()));
            assert!(BoundReport::new(bound, gap).satisfied);
        }
    }
}

#[test]
fn closed_form_examples() {
    let u = ProbabilityVector::new(array![0.5, 0.5]).unwrap();
    let a = ProbabilityVector::new(array![0.7, 0.3]).unwrap();
    let b = ProbabilityVector::new(array![0.6, 0.4]).unwrap();
    assert!((coupling_gap_lower_bound(&a, &b, &u, &u).unwrap() - 0.05).abs() < 1e-15);
    assert_eq!(coupling_gap_lower_bound(&a, &b, &a, &b).unwrap(), 0.0);
    let e = iot_error_lower_bound(array![0.2, -0.2].view(), array![0.1, -0.1].view(), 2, 2);
    assert!((e - 0.05f64.sqrt()).abs() < 1e-15);
    let pred = CouplingMatrix::new(Array2::from_elem((2, 2), 0.25)).unwrap();
    let test = CouplingMatrix::new(array![[0.5, 0.0], [0.0, 0.5]]).unwrap();
    let mt = eval_matching(&pred, &test).unwrap();
    assert_eq!((mt.rmse, mt.mae), (0.25, 0.25));
    assert!((mt.kl.unwrap() - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn kl_matches_compensated_sum() {
    for seed in 0..30 {
        let mut r = rng(900 + seed);
        let (p, q) = (coupling(&mut r, 12, 9), coupling(&mut r, 12, 9));
        assert!((kl_divergence(&p, &q).unwrap() - neumaier_kl(&p, &q)).abs() <= 1e-14);
    }
}

#[test]
fn iot_error_bound_holds_for_actual_fits() {
    let k = KernelSpec::default();
    let params = HyperParams { outer_iters: 15, ..HyperParams::default() };
    for seed in 0..10 {
        let mut r = rng(1000 + seed);
        let (m, n) = (6, 5);
        let (u, v) = (profiles(&mut r, 3, m), profiles(&mut r, 2, n));
        let c0 = kernel_cost(&u, &v, &InteractionMatrix::new(normal(&mut r, 3, 2, 1.0)).unwrap(), &k).unwrap();
        let pi0 = sinkhorn(&c0, &simplex(&mut r, m), &simplex(&mut r, n), 1.0, 1e-12, 100_000).unwrap().plan;
        let pi_hat = add_noise(&pi0, 0.02, seed).unwrap();
        let fit = iot_fit(&pi_hat, &u, &v, &k, &params).unwrap();
        let (m0, mh) = (marginals(&pi0), marginals(&pi_hat));
        let bound = iot_error_lower_bound(
            (mh.mu.as_array() - m0.mu.as_array()).view(),
            (mh.nu.as_array() - m0.nu.as_array()).view(),
            m,
            n,
        );
        let diff = fit.fitted_plan.as_array() - pi0.as_array();
        let l1: f64 = diff.iter().map(|x| x.abs()).sum();
        assert!(BoundReport::new(bound, l1).satisfied);
        assert!(BoundReport::new(bound, frob_sq(&diff).sqrt()).satisfied);
    }
}

#[test]
fn cost_error_bound_perturbation_oracle() {
    let mut r = rng(1100);
    let c0 = uniform_cost(&mut r, 5, 5, 2.0);
    let (mu, nu) = (simplex(&mut r, 5), simplex(&mut r, 5));
    let pi0 = sinkhorn(&c0, &mu, &nu, 1.0, 1e-12, 100_000).unwrap().plan;
    let rep = cost_error_bound_check(&c0, &c0, &pi0, &pi0, 1.0).unwrap();
    assert_eq!((rep.bound_value, rep.observed_value, rep.satisfied), (0.0, 0.0, true));
    // A perturbed plan is generated by C = -ln(pi_hat), which pins the bound to equality.
    let pi_hat = add_noise(&pi0, 0.01, 3).unwrap();
    let learned = CostMatrix::new(pi_hat.as_array().mapv(|p| -p.ln())).unwrap();
    let rep = cost_error_bound_check(&c0, &learned, &pi0, &pi_hat, 1.0).unwrap();
    assert!(rep.bound_value > 0.0 && rep.satisfied);
}

#[test]
fn prediction_bound_is_zero_on_shifts() {
    let mut r = rng(1101);
    let c0 = uniform_cost(&mut r, 4, 4, 2.0);
    let shifted = CostMatrix::new(c0.as_array() + 3.0).unwrap();
    let (mu, nu) = (simplex(&mut r, 4), simplex(&mut r, 4));
    let rep = prediction_error_bound_check(&c0, &shifted, &mu, &nu, 1.0).unwrap();
    assert!(rep.bound_value <= 1e-12 && rep.satisfied);
}

#[test]
fn symmetric_recovery_rejects_asymmetric_costs() {
    let mut r = rng(1102);
    let mut c = uniform_cost(&mut r, 4, 4, 2.0).into_inner();
    c.diag_mut().fill(0.0);
    let (mu, nu) = (simplex(&mut r, 4), simplex(&mut r, 4));
    let pi = sinkhorn(&CostMatrix::new(c).unwrap(), &mu, &nu, 1.0, 1e-12, 100_000).unwrap().plan;
    assert!(matches!(symmetric_cost_recovery(&pi, 1.0), Err(riot::Error::NotSymmetricGenerated { .. })));
}

#[test]
fn product_plan_recovers_zero_cost() {
    let mu = ProbabilityVector::new(array![0.2, 0.3, 0.5]).unwrap();
    let pi = CouplingMatrix::product(&mu, &mu);
    let c = symmetric_cost_recovery(&pi, 1.0).unwrap();
    assert!(c.as_array().iter().all(|x| x.abs() <= 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_distance_is_a_pseudometric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let cs: Vec<CostMatrix> = (0..3).map(|_| CostMatrix::new(normal(&mut r, 3, 4, 1.0)).unwrap()).collect();
        let d = |a: usize, b: usize| cost_shift_distance(&cs[a], &cs[b]).unwrap();
        prop_assert!((d(0, 1) - d(1, 0)).abs() <= 1e-12);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
        prop_assert!(d(0, 0) <= 1e-12);
    }

    #[test]
    fn prediction_bound_holds_for_random_costs(seed in any::<u64>(), lambda in 0.5f64..3.0) {
        let mut r = rng(seed);
        let (c0, c1) = (uniform_cost(&mut r, 5, 4, 2.0), uniform_cost(&mut r, 5, 4, 2.0));
        let (mu, nu) = (simplex(&mut r, 5), simplex(&mut r, 4));
        prop_assert!(prediction_error_bound_check(&c0, &c1, &mu, &nu, lambda).unwrap().satisfied);
    }

    #[test]
    fn metrics_are_zero_on_identical_inputs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = coupling(&mut r, 4, 3);
        let mt = eval_matching(&p, &p).unwrap();
        prop_assert_eq!((mt.rmse, mt.mae, mt.kl), (0.0, 0.0, Some(0.0)));
    }
}
