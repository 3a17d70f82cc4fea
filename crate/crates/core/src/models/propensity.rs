use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{damped_newton, dot, symmetric_inverse, unit_weights, FeatureMap, PROPENSITY_FLOOR, SEPARATION_TOL};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensitySpec {
    /// Multinomial logistic model with `u(x) = 1`.
    SampleProportion,
    MultinomialLogistic { features: FeatureMap },
    /// Fixed probabilities per arm; nothing is estimated.
    Known { probs: Vec<f64> },
}

impl Default for PropensitySpec {
    fn default() -> Self {
        PropensitySpec::MultinomialLogistic {
            features: FeatureMap::Linear,
        }
    }
}

/// Fitted treatment model `w(x, a)`; the last arm is the reference category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPropensity {
    spec: PropensitySpec,
    m: usize,
    q: usize,
    /// Stacked `(gamma_1, ..., gamma_{m-1})`, each of length `q`.
    gamma: Vec<f64>,
    /// Averaged negative Hessian of the log-likelihood, column-major.
    neg_hessian: Vec<f64>,
}

pub fn fit_propensity<T: Scalar>(data: &Dataset<T>, spec: &PropensitySpec) -> Result<FittedPropensity> {
    fit_propensity_weighted(data, spec, &unit_weights(data.n()))
}

/// Solves the subject-weighted score equation.
pub fn fit_propensity_weighted<T: Scalar>(
    data: &Dataset<T>,
    spec: &PropensitySpec,
    weights: &[f64],
) -> Result<FittedPropensity> {
    let m = data.m();
    let features = match spec {
        PropensitySpec::Known { probs } => {
            if probs.len() != m || probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                return Err(Error::InvalidConfig("known propensities must lie in (0, 1), one per arm".into()));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig("known propensities must sum to one".into()));
            }
            return Ok(FittedPropensity {
                spec: spec.clone(),
                m,
                q: 0,
                gamma: Vec::new(),
                neg_hessian: Vec::new(),
            });
        }
        PropensitySpec::SampleProportion => FeatureMap::InterceptOnly,
        PropensitySpec::MultinomialLogistic { features } => features.clone(),
    };
    features.validate(data.p())?;
    let n = data.n();
    let q = features.dim(data.p());
    let d = q * (m - 1);
    let u: Vec<Vec<f64>> = data.covariates().rows().map(|x| features.build(x)).collect();
    let arms = data.arms();

    // intercepts at the weighted log-odds against the reference arm
    let mut counts = vec![0.0; m];
    for (&a, &w) in arms.iter().zip(weights) {
        counts[a] += w;
    }
    if counts.iter().any(|&c| c <= 0.0) {
        return Err(Error::InvalidData("a treatment arm has zero total weight".into()));
    }
    let mut theta0 = DVector::zeros(d);
    for a in 0..m - 1 {
        theta0[a * q] = (counts[a] / counts[m - 1]).ln();
    }

    let nf = n as f64;
    let eval = |theta: &DVector<f64>| {
        let mut obj = 0.0;
        let mut grad = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        let mut eta = vec![0.0; m];
        for i in 0..n {
            let ui = &u[i];
            let w = weights[i];
            for a in 0..m - 1 {
                eta[a] = dot(ui, &theta.as_slice()[a * q..(a + 1) * q]);
            }
            eta[m - 1] = 0.0;
            let mx = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + eta.iter().map(|e| (e - mx).exp()).sum::<f64>().ln();
            obj += w * (eta[arms[i]] - lse);
            let probs: Vec<f64> = eta.iter().map(|e| (e - lse).exp()).collect();
            for a in 0..m - 1 {
                let r = if arms[i] == a { 1.0 } else { 0.0 } - probs[a];
                for k in 0..q {
                    grad[a * q + k] += w * r * ui[k];
                }
                for b in 0..m - 1 {
                    let c = w * (if a == b { probs[a] } else { 0.0 } - probs[a] * probs[b]);
                    if c == 0.0 {
                        continue;
                    }
                    for k in 0..q {
                        let ck = c * ui[k];
                        for l in 0..q {
                            h[(a * q + k, b * q + l)] += ck * ui[l];
                        }
                    }
                }
            }
        }
        (obj / nf, grad / nf, h / nf)
    };
    let (theta, neg_hess) = damped_newton("propensity", theta0, eval)?;
    let fit = FittedPropensity {
        spec: spec.clone(),
        m,
        q,
        gamma: theta.as_slice().to_vec(),
        neg_hessian: neg_hess.as_slice().to_vec(),
    };
    // the gradient also vanishes as coefficients diverge under separation
    if u.iter().any(|ui| fit.probs_from_features(ui).iter().any(|&p| p < SEPARATION_TOL)) {
        return Err(Error::NonConvergence {
            model: "propensity",
            iterations: super::MAX_ITER,
            grad_norm: 0.0,
        });
    }
    Ok(fit)
}

impl FittedPropensity {
    pub fn spec(&self) -> &PropensitySpec {
        &self.spec
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// True when coefficients were estimated (their uncertainty enters the variance).
    pub fn is_estimated(&self) -> bool {
        !matches!(self.spec, PropensitySpec::Known { .. })
    }

    /// Length of the stacked coefficient vector.
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    fn features(&self) -> FeatureMap {
        match &self.spec {
            PropensitySpec::MultinomialLogistic { features } => features.clone(),
            _ => FeatureMap::InterceptOnly,
        }
    }

    pub fn neg_hessian(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_column_slice(d, d, &self.neg_hessian)
    }

    /// Unclipped probabilities for every arm; they sum to one.
    pub fn probs<T: Scalar>(&self, x: &[T]) -> Vec<f64> {
        if let PropensitySpec::Known { probs } = &self.spec {
            return probs.clone();
        }
        let u = self.features().build(x);
        self.probs_from_features(&u)
    }

    fn probs_from_features(&self, u: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut eta: Vec<f64> = (0..self.m - 1)
            .map(|a| dot(u, &self.gamma[a * q..(a + 1) * q]))
            .collect();
        eta.push(0.0);
        let mx = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = eta.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Probability of arm `a`, floored at the positivity bound.
    pub fn prob<T: Scalar>(&self, x: &[T], a: usize) -> f64 {
        self.probs(x)[a].max(PROPENSITY_FLOOR)
    }

    /// `d w(x, a) / d gamma`; zero where the floor is active.
    pub fn d_prob<T: Scalar>(&self, x: &[T], a: usize) -> Vec<f64> {
        let d = self.dim();
        if d == 0 {
            return Vec::new();
        }
        let u = self.features().build(x);
        let probs = self.probs_from_features(&u);
        let mut out = vec![0.0; d];
        if probs[a] < PROPENSITY_FLOOR {
            return out;
        }
        let q = self.q;
        for b in 0..self.m - 1 {
            let c = probs[a] * (if a == b { 1.0 } else { 0.0 } - probs[b]);
            for k in 0..q {
                out[b * q + k] = c * u[k];
            }
        }
        out
    }

    /// Per-subject weighted score vectors `w_i (I(A_i = b) - w_ib) u_i`.
    pub fn score_contributions<T: Scalar>(&self, data: &Dataset<T>, weights: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        if d == 0 {
            return vec![Vec::new(); data.n()];
        }
        let q = self.q;
        let features = self.features();
        data.covariates()
            .rows()
            .zip(data.arms())
            .zip(weights)
            .map(|((x, &arm), &w)| {
                let u = features.build(x);
                let probs = self.probs_from_features(&u);
                let mut s = vec![0.0; d];
                for b in 0..self.m - 1 {
                    let r = w * (if arm == b { 1.0 } else { 0.0 } - probs[b]);
                    for k in 0..q {
                        s[b * q + k] = r * u[k];
                    }
                }
                s
            })
            .collect()
    }

    /// Centered influence contributions `H^{-1} s_i`, or `None` when nothing is estimated.
    pub fn influence<T: Scalar>(&self, data: &Dataset<T>, weights: &[f64]) -> Result<Option<Vec<Vec<f64>>>> {
        if !self.is_estimated() {
            return Ok(None);
        }
        let hinv = symmetric_inverse("propensity", &self.neg_hessian())?;
        let mut out: Vec<Vec<f64>> = self
            .score_contributions(data, weights)
            .into_iter()
            .map(|s| (&hinv * DVector::from_vec(s)).as_slice().to_vec())
            .collect();
        let n = out.len() as f64;
        let mean: Vec<f64> = (0..self.dim()).map(|k| out.iter().map(|v| v[k]).sum::<f64>() / n).collect();
        for v in &mut out {
            v.iter_mut().zip(&mean).for_each(|(x, c)| *x -= c);
        }
        Ok(Some(out))
    }
}
