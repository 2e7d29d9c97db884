mod common;

use common::*;
use ndarray::Array1;
use proptest::prelude::*;
use rand::Rng;
use riot::iot::iot_fit;
use riot::joint::{joint_fit, metric_simplex_violation, uniform_metric, JointOptions};
use riot::kernel::{kernel_cost, KernelSpec};
use riot::riot::inner::INNER_EXIT_RESIDUAL;
use riot::riot::{inner_xi_eta_solve, predict_matching_with, riot_fit, riot_fit_resume};
use riot::{marginals, CostMatrix, HyperParams, InteractionMatrix};

fn inner_case(seed: u64, k: usize) -> riot::riot::inner::InnerSolution {
    let mut r = rng(seed);
    let (u, v) = (profiles(&mut r, 3, 5), profiles(&mut r, 3, 5));
    let pi_hat = coupling(&mut r, 5, 5);
    let a = InteractionMatrix::new(normal(&mut r, 3, 3, 1.0)).unwrap();
    let z = Array1::from_shape_simple_fn(5, || r.random_range(-2.0..2.0));
    let w = Array1::from_shape_simple_fn(5, || r.random_range(-2.0..2.0));
    let delta = r.random_range(0.001..0.1);
    let params = HyperParams { delta, inner_iters: k, ..HyperParams::default() };
    inner_xi_eta_solve(&a, &pi_hat, &u, &v, &KernelSpec::default(), z.view(), w.view(), &params).unwrap()
}

#[test]
fn inner_solver_reaches_kkt_point() {
    for seed in 0..30 {
        let sol = inner_case(seed, 50);
        assert!(sol.kkt_residual <= 1e-8, "seed {seed}: {}", sol.kkt_residual);
        assert!((sol.theta1 - sol.theta2).abs() <= 1e-6);
    }
}

#[test]
fn inner_solver_exits_once_stationary() {
    let sol = inner_case(3, 10_000);
    assert!(sol.sweeps < 10_000);
    assert!(sol.kkt_residual <= INNER_EXIT_RESIDUAL);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inner_objective_never_increases(seed in any::<u64>(), k in 1usize..30) {
        let sol = inner_case(seed, k);
        for pair in sol.h_trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
        }
        prop_assert!(sol.xi.iter().chain(sol.eta.iter()).all(|&x| x > 0.0));
    }
}

fn problem(seed: u64, m: usize, n: usize) -> (riot::CouplingMatrix, riot::ProfileSet, riot::ProfileSet, CostMatrix, CostMatrix) {
    let mut r = rng(seed);
    let (u, v) = (profiles(&mut r, 3, m), profiles(&mut r, 2, n));
    let pi = coupling(&mut r, m, n);
    let cu = CostMatrix::new(euclidean(&mut r, m)).unwrap();
    let cv = CostMatrix::new(euclidean(&mut r, n)).unwrap();
    (pi, u, v, cu, cv)
}

#[test]
fn zero_relaxation_reduces_to_iot() {
    let (pi, u, v, cu, cv) = problem(21, 6, 5);
    let k = KernelSpec::default();
    let params = HyperParams { delta: 0.0, outer_iters: 15, inner_iters: 2000, sinkhorn_tol: 1e-12, ..HyperParams::default() };
    let r = riot_fit(&pi, &u, &v, &k, &cu, &cv, &params).unwrap();
    let i = iot_fit(&pi, &u, &v, &k, &params).unwrap();
    assert!(max_abs_diff(r.fitted_plan.as_array(), i.fitted_plan.as_array()) <= 1e-6);
    assert!(max_abs_diff(r.a.as_array(), i.a.as_array()) <= 1e-5);
}

#[test]
fn fit_returns_best_iterate_and_valid_state() {
    let (pi, u, v, cu, cv) = problem(22, 7, 6);
    let params = HyperParams { outer_iters: 20, ..HyperParams::default() };
    let fit = riot_fit(&pi, &u, &v, &KernelSpec::default(), &cu, &cv, &params).unwrap();
    let best = fit.objective_trace.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(fit.state.objective, best);
    assert!(fit.objective_trace[0] > best);
    assert_eq!(fit.a, fit.state.a);
    let mg = marginals(&fit.fitted_plan);
    assert_eq!(mg, fit.relaxed_marginals);
    assert!((fit.fitted_plan.as_array().sum() - 1.0).abs() <= 1e-9);
}

#[test]
fn resume_continues_from_checkpoint() {
    let (pi, u, v, cu, cv) = problem(23, 6, 6);
    let k = KernelSpec::default();
    let params = HyperParams { outer_iters: 10, ..HyperParams::default() };
    let first = riot_fit(&pi, &u, &v, &k, &cu, &cv, &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    first.state.save_json(&path).unwrap();
    let state = riot::riot::RiotState::load_json(&path).unwrap();
    let second = riot_fit_resume(&state, &pi, &u, &v, &k, &cu, &cv, &params).unwrap();
    assert_eq!(second.objective_trace[0], first.state.objective);
    assert!(second.state.objective <= first.state.objective);
}

#[test]
fn noise_free_data_is_fitted_closely() {
    let mut r = rng(24);
    let (m, n) = (8, 8);
    let (u, v) = (profiles(&mut r, 4, m), profiles(&mut r, 3, n));
    let a0 = InteractionMatrix::new(normal(&mut r, 4, 3, 1.0)).unwrap();
    let k = KernelSpec::default();
    let c0 = kernel_cost(&u, &v, &a0, &k).unwrap();
    let (mu, nu) = (simplex(&mut r, m), simplex(&mut r, n));
    let pi0 = riot::entropic::sinkhorn(&c0, &mu, &nu, 1.0, 1e-12, 100_000).unwrap().plan;
    let cu = CostMatrix::new(euclidean(&mut r, m)).unwrap();
    let cv = CostMatrix::new(euclidean(&mut r, n)).unwrap();
    let params = HyperParams { delta: 0.001, step_size: 100.0, outer_iters: 200, ..HyperParams::default() };
    let fit = riot_fit(&pi0, &u, &v, &k, &cu, &cv, &params).unwrap();
    let kl = riot::analysis::kl_divergence(&pi0, &fit.fitted_plan).unwrap();
    assert!(kl <= 1e-3, "{kl}");
}

#[test]
fn prediction_reproduces_training_plan() {
    let (pi, u, v, _, _) = problem(25, 6, 5);
    let k = KernelSpec::default();
    let params = HyperParams { outer_iters: 10, sinkhorn_tol: 1e-12, ..HyperParams::default() };
    let fit = iot_fit(&pi, &u, &v, &k, &params).unwrap();
    let mg = marginals(&pi);
    let pred = predict_matching_with(&fit.a, &u, &v, &mg.mu, &mg.nu, &k, 1.0, 1e-12, 100_000).unwrap();
    assert!(max_abs_diff(pred.as_array(), fit.fitted_plan.as_array()) <= 1e-8);
}

#[test]
fn joint_fit_keeps_side_costs_in_metric_simplex() {
    let (pi, u, v, _, _) = problem(26, 6, 5);
    let params = HyperParams { outer_iters: 8, ..HyperParams::default() };
    let fit = joint_fit(&pi, &u, &v, &KernelSpec::default(), &params, &JointOptions::default()).unwrap();
    assert!(metric_simplex_violation(fit.c_u.view()) <= 1e-7);
    assert!(metric_simplex_violation(fit.c_v.view()) <= 1e-7);
    let best = fit.objective_trace.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(fit.state.objective, best);
}

#[test]
fn frozen_side_costs_match_plain_riot() {
    let (pi, u, v, _, _) = problem(27, 5, 5);
    let k = KernelSpec::default();
    let params = HyperParams { outer_iters: 6, ..HyperParams::default() };
    let opts = JointOptions { side_step_size: Some(0.0), ..JointOptions::default() };
    let joint = joint_fit(&pi, &u, &v, &k, &params, &opts).unwrap();
    let uniform = uniform_metric(5).unwrap().to_cost();
    let plain = riot_fit(&pi, &u, &v, &k, &uniform, &uniform, &params).unwrap();
    assert_eq!(joint.a, plain.a);
    assert_eq!(joint.c_u.to_cost(), uniform);
}
