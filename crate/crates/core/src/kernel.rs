//! Inner-product kernel cost `C_ij = f(u_i^T A v_j)`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CostMatrix, InteractionMatrix, ProfileSet};

/// Arguments `|gamma t + c0|` above this are rejected for polynomial kernels.
pub const POLY_ARGUMENT_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Polynomial,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
    pub c0: f64,
    pub degree: u32,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::polynomial(0.05, 1.0, 2)
    }
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self { kind: KernelKind::Linear, gamma: 1.0, c0: 0.0, degree: 1 }
    }

    pub fn polynomial(gamma: f64, c0: f64, degree: u32) -> Self {
        Self { kind: KernelKind::Polynomial, gamma, c0, degree }
    }

    pub fn sigmoid(gamma: f64, c0: f64) -> Self {
        Self { kind: KernelKind::Sigmoid, gamma, c0, degree: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || !self.c0.is_finite() {
            return Err(Error::InvalidInput("kernel gamma and c0 must be finite".into()));
        }
        if self.kind == KernelKind::Polynomial && self.degree == 0 {
            return Err(Error::InvalidInput("polynomial degree must be positive".into()));
        }
        Ok(())
    }

    /// `(f(t), f'(t))`, or `None` when the polynomial argument is out of range.
    fn eval(&self, t: f64) -> Option<(f64, f64)> {
        match self.kind {
            KernelKind::Linear => Some((t, 1.0)),
            KernelKind::Polynomial => {
                let x = self.gamma * t + self.c0;
                if !(x.abs() <= POLY_ARGUMENT_LIMIT) {
                    return None;
                }
                let d = self.degree as i32;
                let low = x.powi(d - 1);
                Some((low * x, d as f64 * self.gamma * low))
            }
            KernelKind::Sigmoid => {
                let th = (self.gamma * t + self.c0).tanh();
                Some((th, self.gamma * (1.0 - th * th)))
            }
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval(t).map_or(f64::NAN, |v| v.0)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.eval(t).map_or(f64::NAN, |v| v.1)
    }

    fn argument_magnitude(&self, t: f64) -> f64 {
        (self.gamma * t + self.c0).abs()
    }
}

fn check_dims(u: &ProfileSet, v: &ProfileSet, a: ArrayView2<'_, f64>, what: &'static str) -> Result<()> {
    let (p, q) = a.dim();
    if u.dim() != p || v.dim() != q {
        return Err(Error::dims(
            what,
            format!("{}x{}", u.dim(), v.dim()),
            format!("{p}x{q}"),
        ));
    }
    Ok(())
}

/// The bilinear scores `U^T A V` (`m x n`).
pub fn bilinear_scores(u: &ProfileSet, v: &ProfileSet, a: ArrayView2<'_, f64>) -> Array2<f64> {
    u.view().t().dot(&a).dot(&v.view())
}

/// Cost matrix and the entrywise derivative `f'(u_i^T A v_j)`.
pub fn kernel_cost_with_derivative(
    u: &ProfileSet,
    v: &ProfileSet,
    a: &InteractionMatrix,
    k: &KernelSpec,
) -> Result<(CostMatrix, Array2<f64>)> {
    check_dims(u, v, a.view(), "interaction matrix")?;
    let s = bilinear_scores(u, v, a.view());
    let mut c = Array2::zeros(s.dim());
    let mut fp = Array2::zeros(s.dim());
    for ((i, j), &t) in s.indexed_iter() {
        match k.eval(t) {
            Some((f, d)) if f.is_finite() && d.is_finite() => {
                c[[i, j]] = f;
                fp[[i, j]] = d;
            }
            Some(_) => return Err(Error::NonFiniteCost { i, j }),
            None => {
                return Err(Error::KernelOverflow { i, j, magnitude: k.argument_magnitude(t) });
            }
        }
    }
    Ok((CostMatrix::new(c)?, fp))
}

pub fn kernel_cost(u: &ProfileSet, v: &ProfileSet, a: &InteractionMatrix, k: &KernelSpec) -> Result<CostMatrix> {
    kernel_cost_with_derivative(u, v, a, k).map(|(c, _)| c)
}

/// Entrywise `<C'_ij(A), W> = f'(u_i^T A v_j) u_i^T W v_j`.
pub fn kernel_cost_directional_grad(
    u: &ProfileSet,
    v: &ProfileSet,
    a: &InteractionMatrix,
    k: &KernelSpec,
    w: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    check_dims(u, v, w, "direction")?;
    let (_, fp) = kernel_cost_with_derivative(u, v, a, k)?;
    Ok(fp * bilinear_scores(u, v, w))
}

/// `sum_ij g_ij C'_ij(A) = U (G .* F') V^T`, the chain rule from a cost
/// gradient `G` to a `p x q` interaction gradient.
pub fn assemble_gradient(
    u: &ProfileSet,
    v: &ProfileSet,
    cost_grad: ArrayView2<'_, f64>,
    fprime: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let weighted = &cost_grad * &fprime;
    u.view().dot(&weighted).dot(&v.view().t())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ps(a: Array2<f64>) -> ProfileSet {
        ProfileSet::new(a).unwrap()
    }

    #[test]
    fn zero_interaction_polynomial() {
        let u = ps(array![[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]]);
        let v = ps(array![[1.0, 2.0], [0.0, 1.0], [4.0, -1.0]]);
        let c = kernel_cost(&u, &v, &InteractionMatrix::zeros(2, 3), &KernelSpec::default()).unwrap();
        assert!(c.as_array().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn scalar_polynomial_evaluation() {
        let u = ps(array![[1.0], [2.0]]);
        let v = ps(array![[3.0], [1.0]]);
        let a = InteractionMatrix::new(Array2::eye(2)).unwrap();
        let c = kernel_cost(&u, &v, &a, &KernelSpec::default()).unwrap();
        assert!((c.as_array()[[0, 0]] - 1.5625).abs() < 1e-15);
    }

    #[test]
    fn linear_identity_features_give_a() {
        let a = InteractionMatrix::new(array![[0.3, -1.0, 2.0], [4.0, 0.0, -0.5]]).unwrap();
        let u = ps(Array2::eye(2));
        let v = ps(Array2::eye(3));
        let c = kernel_cost(&u, &v, &a, &KernelSpec::linear()).unwrap();
        assert_eq!(c.as_array(), a.as_array());
        let w = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let d = kernel_cost_directional_grad(&u, &v, &a, &KernelSpec::linear(), w.view()).unwrap();
        assert_eq!(d, w);
    }

    #[test]
    fn polynomial_derivative_at_zero() {
        let u = ps(array![[1.0, 0.5], [2.0, -1.0]]);
        let v = ps(array![[3.0], [1.0]]);
        let w = array![[0.2, -0.3], [1.0, 0.7]];
        let d = kernel_cost_directional_grad(&u, &v, &InteractionMatrix::zeros(2, 2), &KernelSpec::default(), w.view())
            .unwrap();
        let uwv = bilinear_scores(&u, &v, w.view());
        for (x, y) in d.iter().zip(uwv.iter()) {
            assert!((x - 0.1 * y).abs() < 1e-15);
        }
    }

    #[test]
    fn overflow_names_cell() {
        let u = ps(array![[1.0, 1e9]]);
        let v = ps(array![[1.0]]);
        let a = InteractionMatrix::new(array![[1.0]]).unwrap();
        match kernel_cost(&u, &v, &a, &KernelSpec::polynomial(0.05, 1.0, 3)) {
            Err(Error::KernelOverflow { i: 1, j: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let u = ps(Array2::ones((2, 3)));
        let v = ps(Array2::ones((4, 3)));
        assert!(matches!(
            kernel_cost(&u, &v, &InteractionMatrix::zeros(2, 3), &KernelSpec::linear()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let k = KernelSpec::sigmoid(0.5, -1.0);
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<KernelSpec>(&s).unwrap(), k);
        let parsed: KernelSpec = serde_json::from_str(r#"{"kind":"polynomial","degree":3}"#).unwrap();
        assert_eq!(parsed, KernelSpec::polynomial(0.05, 1.0, 3));
    }
}
