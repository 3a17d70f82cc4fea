use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lasso::{fit_lasso, LassoConfig, LassoPath};
use super::{damped_newton, dot, expit, symmetric_inverse, unit_weights, FeatureMap, SEPARATION_TOL};
use crate::data::{Dataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Canonical link; `b'` is its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

impl Link {
    pub fn for_kind(kind: OutcomeKind) -> Self {
        match kind {
            OutcomeKind::Continuous => Link::Identity,
            OutcomeKind::Binary => Link::Logit,
        }
    }

    #[inline]
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Logit => expit(eta),
        }
    }

    /// `b''(eta)`, the variance function on the linear-predictor scale.
    #[inline]
    pub fn variance(self, eta: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Logit => {
                let p = expit(eta);
                p * (1.0 - p)
            }
        }
    }

    /// `b(eta)`.
    fn cumulant(self, eta: f64) -> f64 {
        match self {
            Link::Identity => 0.5 * eta * eta,
            Link::Logit => {
                if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    None,
    Lasso(LassoConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub link: Link,
    pub features: FeatureMap,
    pub penalty: Penalty,
}

impl OutcomeSpec {
    pub fn glm(kind: OutcomeKind) -> Self {
        OutcomeSpec {
            link: Link::for_kind(kind),
            features: FeatureMap::Linear,
            penalty: Penalty::None,
        }
    }

    pub fn lasso(kind: OutcomeKind, seed: u64) -> Self {
        OutcomeSpec {
            link: Link::for_kind(kind),
            features: FeatureMap::Linear,
            penalty: Penalty::Lasso(LassoConfig {
                seed,
                ..LassoConfig::default()
            }),
        }
    }
}

/// Fitted per-arm regression `mu(x, a) = b'(z(x)' beta_a)`.
///
/// For penalized fits the influence quantities are restricted to each
/// arm's active set (intercept plus nonzero coefficients).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedOutcome {
    link: Link,
    features: FeatureMap,
    m: usize,
    /// `beta[a]` has one entry per feature.
    beta: Vec<Vec<f64>>,
    estimated: bool,
    lambda: Option<f64>,
    path: Option<LassoPath>,
    active: Vec<Vec<usize>>,
    /// Per-arm averaged negative Hessian on the active set, column-major.
    neg_hessian: Vec<Vec<f64>>,
    dispersion: f64,
}

pub fn fit_outcome<T: Scalar>(data: &Dataset<T>, spec: &OutcomeSpec) -> Result<FittedOutcome> {
    fit_outcome_weighted(data, spec, &unit_weights(data.n()))
}

/// Solves the subject-weighted score equations.
pub fn fit_outcome_weighted<T: Scalar>(data: &Dataset<T>, spec: &OutcomeSpec, weights: &[f64]) -> Result<FittedOutcome> {
    let link = spec.link;
    if (link == Link::Logit) != (data.outcome_kind() == OutcomeKind::Binary) {
        return Err(Error::InvalidConfig(
            "identity link requires a continuous outcome and logit a binary one".into(),
        ));
    }
    spec.features.validate(data.p())?;
    let m = data.m();
    let n = data.n();
    let z: Vec<Vec<f64>> = data.covariates().rows().map(|x| spec.features.build(x)).collect();
    let y: Vec<f64> = data.outcomes().iter().map(|v| v.to_f64_lossy()).collect();
    let arms = data.arms();

    let (beta, lambda, path) = match &spec.penalty {
        Penalty::None => {
            let beta = (0..m)
                .map(|a| fit_arm_glm(link, &z, &y, arms, weights, a, n))
                .collect::<Result<Vec<_>>>()?;
            (beta, None, None)
        }
        Penalty::Lasso(cfg) => {
            let fit = fit_lasso(link, &z, arms, &y, weights, m, cfg)?;
            (fit.beta, Some(fit.lambda), fit.path)
        }
    };
    let active: Vec<Vec<usize>> = beta
        .iter()
        .map(|b| {
            (0..b.len())
                .filter(|&k| k == 0 || (lambda.is_none() || b[k] != 0.0))
                .collect()
        })
        .collect();

    let mut neg_hessian = Vec::with_capacity(m);
    for a in 0..m {
        let act = &active[a];
        let d = act.len();
        let mut h = DMatrix::<f64>::zeros(d, d);
        for i in (0..n).filter(|&i| arms[i] == a) {
            let eta = dot(&z[i], &beta[a]);
            let f = weights[i] * link.variance(eta);
            for (k, &ck) in act.iter().enumerate() {
                for (l, &cl) in act.iter().enumerate() {
                    h[(k, l)] += f * z[i][ck] * z[i][cl];
                }
            }
        }
        neg_hessian.push((h / n as f64).as_slice().to_vec());
    }

    let dispersion = match link {
        Link::Logit => 1.0,
        Link::Identity => {
            let params: usize = active.iter().map(Vec::len).sum();
            let rss: f64 = (0..n)
                .map(|i| weights[i] * (y[i] - dot(&z[i], &beta[arms[i]])).powi(2))
                .sum();
            rss / (n.saturating_sub(params).max(1)) as f64
        }
    };

    Ok(FittedOutcome {
        link,
        features: spec.features.clone(),
        m,
        beta,
        estimated: true,
        lambda,
        path,
        active,
        neg_hessian,
        dispersion,
    })
}

fn fit_arm_glm(
    link: Link,
    z: &[Vec<f64>],
    y: &[f64],
    arms: &[usize],
    weights: &[f64],
    arm: usize,
    n: usize,
) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..z.len()).filter(|&i| arms[i] == arm).collect();
    let r = z[0].len();
    let nf = n as f64;
    let sw: f64 = idx.iter().map(|&i| weights[i]).sum();
    let ybar = idx.iter().map(|&i| weights[i] * y[i]).sum::<f64>() / sw;
    let mut theta0 = DVector::zeros(r);
    theta0[0] = match link {
        Link::Identity => ybar,
        Link::Logit => {
            let p = ybar.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    };
    let eval = |theta: &DVector<f64>| {
        let mut obj = 0.0;
        let mut grad = DVector::zeros(r);
        let mut h = DMatrix::zeros(r, r);
        for &i in &idx {
            let zi = &z[i];
            let w = weights[i];
            let eta = dot(zi, theta.as_slice());
            obj += w * (y[i] * eta - link.cumulant(eta));
            let resid = w * (y[i] - link.mean(eta));
            let v = w * link.variance(eta);
            for k in 0..r {
                grad[k] += resid * zi[k];
                let vk = v * zi[k];
                for l in 0..r {
                    h[(k, l)] += vk * zi[l];
                }
            }
        }
        (obj / nf, grad / nf, h / nf)
    };
    let (theta, _) = damped_newton("outcome", theta0, eval)?;
    if link == Link::Logit
        && idx.iter().any(|&i| {
            let p = expit(dot(&z[i], theta.as_slice()));
            p < SEPARATION_TOL || p > 1.0 - SEPARATION_TOL
        })
    {
        return Err(Error::NonConvergence {
            model: "outcome",
            iterations: super::MAX_ITER,
            grad_norm: 0.0,
        });
    }
    Ok(theta.as_slice().to_vec())
}

impl FittedOutcome {
    /// The misspecified model `mu = 0` with nothing estimated.
    pub fn zero(m: usize, link: Link) -> Self {
        FittedOutcome {
            link,
            features: FeatureMap::InterceptOnly,
            m,
            beta: vec![vec![0.0]; m],
            estimated: false,
            lambda: None,
            path: None,
            active: vec![Vec::new(); m],
            neg_hessian: vec![Vec::new(); m],
            dispersion: 1.0,
        }
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_estimated(&self) -> bool {
        self.estimated
    }

    pub fn beta(&self, a: usize) -> &[f64] {
        &self.beta[a]
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn path(&self) -> Option<&LassoPath> {
        self.path.as_ref()
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn active(&self, a: usize) -> &[usize] {
        &self.active[a]
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    /// Covariates with a nonzero slope in any arm.
    pub fn covariates_used(&self, p: usize) -> Vec<usize> {
        let cols: Vec<usize> = match &self.features {
            FeatureMap::InterceptOnly => Vec::new(),
            FeatureMap::Linear => (0..p).collect(),
            FeatureMap::Columns(c) => c.clone(),
        };
        let mut used: Vec<usize> = cols
            .iter()
            .enumerate()
            .filter(|(k, _)| self.beta.iter().any(|b| b.get(k + 1).is_some_and(|v| *v != 0.0)))
            .map(|(_, &j)| j)
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    pub fn neg_hessian(&self, a: usize) -> DMatrix<f64> {
        let d = self.active[a].len();
        DMatrix::from_column_slice(d, d, &self.neg_hessian[a])
    }

    #[inline]
    pub fn mean<T: Scalar>(&self, x: &[T], a: usize) -> f64 {
        if !self.estimated {
            return 0.0;
        }
        let z = self.features.build(x);
        self.link.mean(dot(&z, &self.beta[a]))
    }

    pub fn means<T: Scalar>(&self, x: &[T]) -> Vec<f64> {
        if !self.estimated {
            return vec![0.0; self.m];
        }
        let z = self.features.build(x);
        self.beta.iter().map(|b| self.link.mean(dot(&z, b))).collect()
    }

    /// `d mu(x, a) / d beta_a` on the active set of arm `a`.
    pub fn d_mean<T: Scalar>(&self, x: &[T], a: usize) -> Vec<f64> {
        if !self.estimated {
            return Vec::new();
        }
        let z = self.features.build(x);
        let v = self.link.variance(dot(&z, &self.beta[a]));
        self.active[a].iter().map(|&k| v * z[k]).collect()
    }

    /// Per-subject weighted scores `w_i (Y_i - mu_i) z_i` on the active set of arm `A_i`.
    pub fn score_contributions<T: Scalar>(&self, data: &Dataset<T>, weights: &[f64]) -> Vec<Vec<f64>> {
        if !self.estimated {
            return vec![Vec::new(); data.n()];
        }
        data.covariates()
            .rows()
            .zip(data.arms())
            .zip(data.outcomes())
            .zip(weights)
            .map(|(((x, &a), &y), &w)| {
                let z = self.features.build(x);
                let r = w * (y.to_f64_lossy() - self.link.mean(dot(&z, &self.beta[a])));
                self.active[a].iter().map(|&k| r * z[k]).collect()
            })
            .collect()
    }

    /// Influence contributions `H_a^{-1} s_i` in block `A_i`, with the
    /// per-arm mean contribution returned separately for centering.
    pub fn influence<T: Scalar>(&self, data: &Dataset<T>, weights: &[f64]) -> Result<Option<OutcomeInfluence>> {
        if !self.estimated {
            return Ok(None);
        }
        let hinv = (0..self.m)
            .map(|a| symmetric_inverse("outcome", &self.neg_hessian(a)))
            .collect::<Result<Vec<_>>>()?;
        let n = data.n() as f64;
        let mut center: Vec<Vec<f64>> = (0..self.m).map(|a| vec![0.0; self.active[a].len()]).collect();
        let phi: Vec<Vec<f64>> = self
            .score_contributions(data, weights)
            .into_iter()
            .zip(data.arms())
            .map(|(s, &a)| {
                let v = (&hinv[a] * DVector::from_vec(s)).as_slice().to_vec();
                for (c, x) in center[a].iter_mut().zip(&v) {
                    *c += x / n;
                }
                v
            })
            .collect();
        Ok(Some(OutcomeInfluence { phi, center }))
    }
}

/// Block-sparse influence of the outcome coefficients.
#[derive(Debug, Clone)]
pub struct OutcomeInfluence {
    /// Subject `i`'s contribution in block `A_i` (active coordinates).
    pub phi: Vec<Vec<f64>>,
    /// Mean of the contributions per block, over all subjects.
    pub center: Vec<Vec<f64>>,
}
