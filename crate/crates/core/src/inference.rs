//! Weighted-bootstrap bias correction of the estimated value and normal
//! prediction intervals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::pipeline::{fit, frozen_outcome_spec, search_nuisance, FitConfig, FitResult, Nuisance};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Logit,
}

impl Transform {
    pub fn for_kind(kind: OutcomeKind) -> Self {
        match kind {
            OutcomeKind::Continuous => Transform::Identity,
            OutcomeKind::Binary => Transform::Logit,
        }
    }

    /// Values are clamped into `[1e-6, 1 - 1e-6]` before the logit.
    pub fn forward(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Logit => {
                let p = v.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                (p / (1.0 - p)).ln()
            }
        }
    }

    pub fn inverse(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Logit => crate::models::expit(v),
        }
    }

    /// `d forward / dv` at `v`, for the delta method.
    pub fn slope(self, v: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Logit => {
                let p = v.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                1.0 / (p * (1.0 - p))
            }
        }
    }
}

const LOGIT_CLAMP: f64 = 1e-6;

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
    /// Chosen from the outcome kind when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
    /// Draw every weight as 1; each replicate then reproduces the original fit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub force_unit_weights: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 200,
            seed: 0,
            level: 0.95,
            transform: None,
            force_unit_weights: false,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("at least one bootstrap replicate is required".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    /// `R(pi_hat)` on the original pseudo-outcomes.
    pub estimate: f64,
    /// Mean optimism on the transformed scale.
    pub bias: f64,
    /// Bias-corrected estimate on the original scale.
    pub corrected: f64,
    /// Plug-in standard error of `estimate` on the original scale.
    pub sigma: f64,
    pub level: f64,
    pub transform: Transform,
    pub interval: Interval,
    /// Same construction centred at the uncorrected estimate.
    pub plain_interval: Interval,
    pub replicates: usize,
    pub failed: usize,
}

/// `[c + z_{a/2} s, c + z_{1-a/2} s]` on the transformed scale, mapped back.
pub fn prediction_interval(center: f64, sigma: f64, level: f64, transform: Transform) -> Interval {
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let half = z * sigma;
    Interval {
        lower: transform.inverse(center - half),
        upper: transform.inverse(center + half),
    }
}

/// Optimism of one replicate, `R*_b(pi*_b) - R(pi*_b)` on the transformed scale.
fn replicate<T: Scalar>(
    data: &Dataset<T>,
    base: &FitResult<T>,
    outcome_spec: &crate::models::OutcomeSpec,
    config: &BootstrapConfig,
    transform: Transform,
    b: usize,
) -> Result<f64> {
    let n = data.n();
    let weights: Vec<f64> = if config.force_unit_weights {
        vec![1.0; n]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(b as u64);
        (0..n).map(|_| Exp1.sample(&mut rng)).collect()
    };
    let nuisance = Nuisance::fit_weighted(data, &base.config.propensity, outcome_spec, &weights)?;
    let (list, _) = search_nuisance(data, &nuisance, &base.grid, &base.bins, &base.config.search)?;
    let recs = list.recommend(data.covariates());
    let star = nuisance.xi.value_of(&recs).to_f64_lossy();
    let plain = base.nuisance.xi.value_of(&recs).to_f64_lossy();
    Ok(transform.forward(star) - transform.forward(plain))
}

/// Bootstrap-corrected value report for an existing fit.
pub fn correct_value<T: Scalar>(data: &Dataset<T>, base: &FitResult<T>, config: &BootstrapConfig) -> Result<ValueReport> {
    config.validate()?;
    let transform = config
        .transform
        .unwrap_or_else(|| Transform::for_kind(data.outcome_kind()));
    let outcome_spec = frozen_outcome_spec(&base.config.outcome, &base.nuisance.outcome);
    let results: Vec<Result<f64>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| replicate(data, base, &outcome_spec, config, transform, b))
        .collect();
    let mut optimism = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => optimism.push(v),
            Err(e) if e.is_fit_failure() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if optimism.is_empty() || failed as f64 > MAX_FAILURE_RATE * config.replicates as f64 {
        return Err(Error::TooManyFailures {
            failed,
            total: config.replicates,
        });
    }
    let bias = optimism.iter().sum::<f64>() / optimism.len() as f64;
    let estimate = base.value.to_f64_lossy();
    let sigma = base.variance.max(0.0).sqrt();
    let center = transform.forward(estimate);
    let sigma_t = sigma * transform.slope(estimate);
    let corrected_t = center - bias;
    Ok(ValueReport {
        estimate,
        bias,
        corrected: transform.inverse(corrected_t),
        sigma,
        level: config.level,
        transform,
        interval: prediction_interval(corrected_t, sigma_t, config.level, transform),
        plain_interval: prediction_interval(center, sigma_t, config.level, transform),
        replicates: optimism.len(),
        failed,
    })
}

/// Fits the pipeline and bootstraps its value.
pub fn bootstrap_corrected_value<T: Scalar>(
    data: &Dataset<T>,
    fit_config: &FitConfig<T>,
    config: &BootstrapConfig,
) -> Result<(FitResult<T>, ValueReport)> {
    let base = fit(data, fit_config)?;
    let report = correct_value(data, &base, config)?;
    Ok((base, report))
}
