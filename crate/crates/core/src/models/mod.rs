//! Nuisance models: multinomial logistic propensity and canonical-link
//! outcome regressions (plain or LASSO-penalized).

mod lasso;
mod outcome;
mod propensity;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use lasso::{LassoConfig, LassoPath};
pub use outcome::{fit_outcome, fit_outcome_weighted, FittedOutcome, Link, OutcomeSpec, Penalty};
pub use propensity::{fit_propensity, fit_propensity_weighted, FittedPropensity, PropensitySpec};

/// Floor applied to predicted propensities before any division.
pub const PROPENSITY_FLOOR: f64 = 1e-3;

pub(crate) const MAX_ITER: usize = 100;
pub(crate) const MAX_HALVINGS: usize = 30;
pub(crate) const GRAD_TOL: f64 = 1e-8;
/// Fitted probabilities this close to 0 or 1 signal (quasi-)separation.
pub(crate) const SEPARATION_TOL: f64 = 1e-10;

/// Feature vector built from a covariate row; always starts with an intercept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "columns", rename_all = "snake_case")]
pub enum FeatureMap {
    InterceptOnly,
    Linear,
    Columns(Vec<usize>),
}

impl FeatureMap {
    pub fn dim(&self, p: usize) -> usize {
        match self {
            FeatureMap::InterceptOnly => 1,
            FeatureMap::Linear => p + 1,
            FeatureMap::Columns(cols) => cols.len() + 1,
        }
    }

    pub fn build<T: Scalar>(&self, x: &[T]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim(x.len()));
        z.push(1.0);
        match self {
            FeatureMap::InterceptOnly => {}
            FeatureMap::Linear => z.extend(x.iter().map(|v| v.to_f64_lossy())),
            FeatureMap::Columns(cols) => z.extend(cols.iter().map(|&j| x[j].to_f64_lossy())),
        }
        z
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let FeatureMap::Columns(cols) = self {
            if let Some(&j) = cols.iter().find(|&&j| j >= p) {
                return Err(Error::InvalidConfig(format!("feature column {j} out of range (p = {p})")));
            }
        }
        Ok(())
    }
}

/// Maximizes a concave objective by Newton steps with step-halving.
///
/// `eval` returns the objective, its gradient and the negative Hessian,
/// all on the per-subject average scale.
pub(crate) fn damped_newton<F>(model: &'static str, theta0: DVector<f64>, eval: F) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>),
{
    let mut theta = theta0;
    let (mut obj, mut grad, mut neg_hess) = eval(&theta);
    for iter in 0..=MAX_ITER {
        let gnorm = grad.amax();
        if gnorm <= GRAD_TOL {
            return Ok((theta, neg_hess));
        }
        if iter == MAX_ITER || !obj.is_finite() {
            return Err(Error::NonConvergence {
                model,
                iterations: iter,
                grad_norm: gnorm,
            });
        }
        let chol = neg_hess.clone().cholesky().ok_or(Error::Singular(model))?;
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &theta + &step * t;
            let (o, g, h) = eval(&cand);
            if o.is_finite() && o >= obj - 1e-12 * obj.abs().max(1.0) {
                theta = cand;
                obj = o;
                grad = g;
                neg_hess = h;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                model,
                iterations: iter,
                grad_norm: gnorm,
            });
        }
    }
    unreachable!("loop returns on the final iteration")
}

pub(crate) fn symmetric_inverse(model: &'static str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::Singular(model))?;
    Ok(chol.inverse())
}

#[inline]
pub fn expit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn unit_weights(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_maps() {
        let x = [2.0f64, 3.0, 4.0];
        assert_eq!(FeatureMap::InterceptOnly.build(&x), vec![1.0]);
        assert_eq!(FeatureMap::Linear.build(&x), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(FeatureMap::Columns(vec![2]).build(&x), vec![1.0, 4.0]);
        assert!(FeatureMap::Columns(vec![3]).validate(3).is_err());
    }

    #[test]
    fn newton_on_quadratic() {
        // maximize -(t - 3)^2 / 2
        let (theta, h) = damped_newton("quad", DVector::from_element(1, 0.0), |t| {
            let d = t[0] - 3.0;
            (-0.5 * d * d, DVector::from_element(1, -d), DMatrix::from_element(1, 1, 1.0))
        })
        .unwrap();
        assert!((theta[0] - 3.0).abs() < 1e-12);
        assert_eq!(h[(0, 0)], 1.0);
    }

    #[test]
    fn expit_is_stable() {
        assert_eq!(expit(0.0), 0.5);
        assert!(expit(-800.0) >= 0.0);
        assert!(expit(800.0) <= 1.0);
    }
}
