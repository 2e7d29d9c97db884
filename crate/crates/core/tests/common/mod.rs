#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use riot::{CostMatrix, CouplingMatrix, ProbabilityVector, ProfileSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let x: f64 = StandardNormal.sample(rng);
        scale * x
    })
}

/// Strictly positive probability vector with entries bounded away from zero.
pub fn simplex(rng: &mut ChaCha8Rng, len: usize) -> ProbabilityVector {
    let w = Array1::from_shape_simple_fn(len, || rng.random_range(0.2..1.0));
    ProbabilityVector::from_weights(w).unwrap()
}

pub fn uniform_cost(rng: &mut ChaCha8Rng, rows: usize, cols: usize, hi: f64) -> CostMatrix {
    CostMatrix::new(Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.0..hi))).unwrap()
}

pub fn profiles(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> ProfileSet {
    ProfileSet::new(normal(rng, dim, count, 1.0)).unwrap()
}

/// Dense positive coupling.
pub fn coupling(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CouplingMatrix {
    let w = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.1..1.0));
    let total = w.sum();
    CouplingMatrix::new(w / total).unwrap()
}

/// Symmetric, zero-diagonal matrix of planar Euclidean distances.
pub fn euclidean(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let pts = normal(rng, d, 2, 1.0);
    Array2::from_shape_fn((d, d), |(i, j)| {
        let dx = pts[[i, 0]] - pts[[j, 0]];
        let dy = pts[[i, 1]] - pts[[j, 1]];
        (dx * dx + dy * dy).sqrt()
    })
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `|g - fd|_F / max(|fd|_F, floor)`.
pub fn relative_error(g: &Array2<f64>, fd: &Array2<f64>, floor: f64) -> f64 {
    let diff = (g - fd).mapv(|x| x * x).sum().sqrt();
    let scale = fd.mapv(|x| x * x).sum().sqrt().max(floor);
    diff / scale
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let mut xp = x.clone();
        xp[[i, j]] += h;
        let mut xm = x.clone();
        xm[[i, j]] -= h;
        out[[i, j]] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    out
}
