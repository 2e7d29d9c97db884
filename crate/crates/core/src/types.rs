//! Validated numerical containers shared by every solver.
//!
//! Each type checks its invariant once, at construction. After that the
//! values are immutable, so downstream code can rely on them without
//! re-validating.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of probability vectors and couplings.
pub const MASS_TOLERANCE: f64 = 1e-9;

fn check_mass<'a>(values: impl Iterator<Item = &'a f64>, what: &str) -> Result<f64> {
    let mut sum = 0.0;
    for (k, &v) in values.enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("{what}: entry {k} is not finite")));
        }
        if v < 0.0 {
            return Err(Error::InvalidInput(format!("{what}: entry {k} is negative ({v})")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "{what}: total mass {sum} differs from 1 by more than {MASS_TOLERANCE:e}"
        )));
    }
    Ok(sum)
}

/// A point of the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Array1<f64>);

impl ProbabilityVector {
    /// Validates and renormalizes exactly (divides by the actual sum).
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("probability vector is empty".into()));
        }
        let sum = check_mass(values.iter(), "probability vector")?;
        Ok(Self(values / sum))
    }

    /// Normalizes arbitrary nonnegative weights with positive total.
    pub fn from_weights(weights: Array1<f64>) -> Result<Self> {
        let sum = weights.sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidInput(format!("weights have total {sum}")));
        }
        Self::new(weights / sum)
    }

    pub fn uniform(len: usize) -> Self {
        Self(Array1::from_elem(len, 1.0 / len as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    /// Index of the first zero entry, if any.
    pub fn first_zero(&self) -> Option<usize> {
        self.0.iter().position(|&v| v <= 0.0)
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;
    /// Validates without renormalizing, so serialized vectors round-trip exactly.
    fn try_from(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidInput("probability vector is empty".into()));
        }
        check_mass(v.iter(), "probability vector")?;
        Ok(Self(Array1::from(v)))
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0.to_vec()
    }
}

/// Nonnegative matrix with unit total mass: a joint distribution over pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct CouplingMatrix(Array2<f64>);

impl CouplingMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("coupling matrix is empty".into()));
        }
        let sum = check_mass(entries.iter(), "coupling matrix")?;
        Ok(Self(entries / sum))
    }

    /// Outer product `mu nu^T`.
    pub fn product(mu: &ProbabilityVector, nu: &ProbabilityVector) -> Self {
        let col = mu.view().insert_axis(Axis(1));
        let row = nu.view().insert_axis(Axis(0));
        Self(&col * &row)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.0.sum_axis(Axis(1))
    }

    pub fn col_sums(&self) -> Array1<f64> {
        self.0.sum_axis(Axis(0))
    }
}

impl TryFrom<Array2<f64>> for CouplingMatrix {
    type Error = Error;
    /// Validates without renormalizing, so serialized plans round-trip exactly.
    fn try_from(a: Array2<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidInput("coupling matrix is empty".into()));
        }
        check_mass(a.iter(), "coupling matrix")?;
        Ok(Self(a))
    }
}

impl From<CouplingMatrix> for Array2<f64> {
    fn from(c: CouplingMatrix) -> Self {
        c.0
    }
}

/// Row and column marginals of a coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalPair {
    pub mu: ProbabilityVector,
    pub nu: ProbabilityVector,
}

/// Finite real matrix of pairwise costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), _)) = entries.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteCost { i, j });
        }
        Ok(Self(entries))
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self(Array2::zeros((m, n)))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl TryFrom<Array2<f64>> for CostMatrix {
    type Error = Error;
    fn try_from(a: Array2<f64>) -> Result<Self> {
        Self::new(a)
    }
}

impl From<CostMatrix> for Array2<f64> {
    fn from(c: CostMatrix) -> Self {
        c.0
    }
}

/// Largest violation of the distance-matrix conditions: nonnegativity, zero
/// diagonal, symmetry and every triangle inequality.
pub fn metric_violation(c: ArrayView2<'_, f64>) -> f64 {
    let d = c.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        worst = worst.max(c[[i, i]].abs());
        for j in 0..d {
            worst = worst.max(-c[[i, j]]);
            worst = worst.max((c[[i, j]] - c[[j, i]]).abs());
            for k in 0..d {
                worst = worst.max(c[[i, j]] - c[[i, k]] - c[[k, j]]);
            }
        }
    }
    worst
}

/// Symmetric hollow nonnegative matrix satisfying the triangle inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix(Array2<f64>);

impl MetricMatrix {
    /// Checks every metric condition to absolute tolerance `tol`.
    pub fn new(entries: Array2<f64>, tol: f64) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::dims("metric matrix", format!("{r}x{r}"), format!("{r}x{c}")));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("metric matrix has non-finite entries".into()));
        }
        let violation = metric_violation(entries.view());
        if violation > tol {
            return Err(Error::InvalidInput(format!(
                "matrix violates metric conditions by {violation:e}"
            )));
        }
        Ok(Self(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn to_cost(&self) -> CostMatrix {
        CostMatrix(self.0.clone())
    }
}

/// The `p x q` matrix parameterizing the kernel cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct InteractionMatrix(Array2<f64>);

impl InteractionMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("interaction matrix has non-finite entries".into()));
        }
        Ok(Self(entries))
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Self(Array2::zeros((p, q)))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl TryFrom<Array2<f64>> for InteractionMatrix {
    type Error = Error;
    fn try_from(a: Array2<f64>) -> Result<Self> {
        Self::new(a)
    }
}

impl From<InteractionMatrix> for Array2<f64> {
    fn from(c: InteractionMatrix) -> Self {
        c.0
    }
}

/// Feature profiles, one column per individual (`dim x count`).
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSet(Array2<f64>);

impl ProfileSet {
    pub fn new(features: Array2<f64>) -> Result<Self> {
        if features.ncols() == 0 || features.nrows() == 0 {
            return Err(Error::InvalidInput("profile set needs at least one individual and one feature".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("profile set has non-finite entries".into()));
        }
        Ok(Self(features))
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Number of individuals.
    pub fn count(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Raw co-occurrence counts of matched pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchCounts(Array2<u64>);

impl MatchCounts {
    pub fn new(counts: Array2<u64>) -> Result<Self> {
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::EmptyMatching);
        }
        Ok(Self(counts))
    }

    pub fn total(&self) -> u64 {
        self.0.sum()
    }

    pub fn view(&self) -> ArrayView2<'_, u64> {
        self.0.view()
    }
}

/// Solver hyper-parameters. Defaults follow the synthetic-experiment setup
/// (`lambda = lambda_u = lambda_v = 1`, `K = 20`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub lambda: f64,
    pub lambda_u: f64,
    pub lambda_v: f64,
    pub delta: f64,
    pub step_size: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_u: 1.0,
            lambda_v: 1.0,
            delta: 0.01,
            step_size: 10.0,
            outer_iters: 50,
            inner_iters: 20,
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iters: 10_000,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("lambda_u", self.lambda_u),
            ("lambda_v", self.lambda_v),
            ("step_size", self.step_size),
            ("sinkhorn_tol", self.sinkhorn_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidInput(format!("delta must be nonnegative, got {}", self.delta)));
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidInput("inner_iters must be positive".into()));
        }
        if self.sinkhorn_max_iters == 0 {
            return Err(Error::InvalidInput("sinkhorn_max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Empirical coupling `N_ij / N`.
pub fn normalize_counts(counts: &MatchCounts) -> Result<CouplingMatrix> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyMatching);
    }
    let n = total as f64;
    CouplingMatrix::new(counts.view().mapv(|c| c as f64 / n))
}

/// Row and column sums of a coupling.
pub fn marginals(pi: &CouplingMatrix) -> MarginalPair {
    // Sums of a validated coupling are exactly normalized, so these cannot fail.
    let mu = ProbabilityVector::new(pi.row_sums()).expect("row sums of a coupling");
    let nu = ProbabilityVector::new(pi.col_sums()).expect("column sums of a coupling");
    MarginalPair { mu, nu }
}
