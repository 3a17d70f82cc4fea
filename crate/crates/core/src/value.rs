//! Doubly robust pseudo-outcomes, regime values and their plug-in
//! influence-function variances.

use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset};
use crate::error::Result;
use crate::models::{FittedOutcome, FittedPropensity};
use crate::regime::DecisionList;
use crate::scalar::Scalar;

/// `xi[i][a] = I(A_i = a) / w(X_i, a) * (Y_i - mu(X_i, a)) + mu(X_i, a)`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PseudoOutcomeMatrix<T: Scalar = f64> {
    n: usize,
    m: usize,
    xi: Vec<T>,
}

impl<T: Scalar> PseudoOutcomeMatrix<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "ragged pseudo-outcome rows");
        PseudoOutcomeMatrix {
            n,
            m,
            xi: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, a: usize) -> T {
        self.xi[i * self.m + a]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.xi[i * self.m..(i + 1) * self.m]
    }

    /// Value of the regime recommending `recs[i]` to subject `i`.
    pub fn value_of(&self, recs: &[usize]) -> T {
        let total: T = recs.iter().enumerate().map(|(i, &a)| self.get(i, a)).sum();
        total / T::from_usize_lossy(self.n)
    }

    pub fn constant_value(&self, a: usize) -> T {
        let total: T = (0..self.n).map(|i| self.get(i, a)).sum();
        total / T::from_usize_lossy(self.n)
    }

    /// Multiplies row `i` by `weights[i]`.
    pub fn weighted(&self, weights: &[f64]) -> Self {
        let xi = self
            .xi
            .iter()
            .enumerate()
            .map(|(k, &v)| v * T::from_f64_lossy(weights[k / self.m]))
            .collect();
        PseudoOutcomeMatrix { xi, ..*self }
    }
}

fn pseudo_rows<T: Scalar>(data: &Dataset<T>, prop: &FittedPropensity, outcome: &FittedOutcome) -> Vec<Vec<f64>> {
    data.covariates()
        .rows()
        .zip(data.arms())
        .zip(data.outcomes())
        .map(|((x, &arm), &y)| {
            let mu = outcome.means(x);
            let w = prop.prob(x, arm);
            (0..mu.len())
                .map(|a| {
                    if a == arm {
                        (y.to_f64_lossy() - mu[a]) / w + mu[a]
                    } else {
                        mu[a]
                    }
                })
                .collect()
        })
        .collect()
}

pub fn pseudo_outcomes<T: Scalar>(
    data: &Dataset<T>,
    prop: &FittedPropensity,
    outcome: &FittedOutcome,
) -> PseudoOutcomeMatrix<T> {
    PseudoOutcomeMatrix::from_rows(
        pseudo_rows(data, prop, outcome)
            .into_iter()
            .map(|r| r.into_iter().map(T::from_f64_lossy).collect())
            .collect(),
    )
}

/// Estimated value with an explicit sentinel for lists with a vacuous clause.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum RegimeValue<T: Scalar = f64> {
    NegInfinity,
    Finite(T),
}

impl<T: Scalar> RegimeValue<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            RegimeValue::Finite(v) => Some(v),
            RegimeValue::NegInfinity => None,
        }
    }
}

/// `n^{-1} sum_i xi[i][pi(X_i)]`, or the sentinel if some clause catches nobody.
pub fn value<T: Scalar>(xi: &PseudoOutcomeMatrix<T>, list: &DecisionList<T>, data: &Covariates<T>) -> RegimeValue<T> {
    let regions = list.regions(data);
    let mut hit = vec![false; list.len() + 1];
    for &r in &regions {
        hit[r] = true;
    }
    if hit[..list.len()].iter().any(|h| !h) {
        return RegimeValue::NegInfinity;
    }
    let recs: Vec<usize> = regions
        .iter()
        .map(|&r| if r < list.len() { list.clauses[r].action } else { list.default })
        .collect();
    RegimeValue::Finite(xi.value_of(&recs))
}

/// Variance of the difference in estimated value between two fixed regimes,
/// each given by its per-subject recommendations.
pub trait DifferenceVariance: Sync {
    fn variance_of_difference(&self, recs1: &[usize], recs2: &[usize]) -> f64;
}

/// Plug-in influence functions of `R(pi)` for a fitted pair of nuisance models.
///
/// Built once per dataset; querying a regime costs `O(n (q + r))`.
#[derive(Debug, Clone)]
pub struct InfluenceModel {
    n: usize,
    m: usize,
    arms: Vec<usize>,
    /// Weighted pseudo-outcomes, row-major `n x m`.
    xi: Vec<f64>,
    /// Centered `phi_gamma(O_i)`.
    phi_gamma: Option<Vec<Vec<f64>>>,
    /// `-w_i (Y_i - mu_iA) / w_iA^2 * d w_iA / d gamma` at the observed arm.
    c_gamma: Vec<Vec<f64>>,
    /// `phi_beta(O_i)` in block `A_i`.
    phi_beta: Option<Vec<Vec<f64>>>,
    beta_center: Vec<Vec<f64>>,
    /// `w_i (1 - I(A_i = a) / w_ia) d mu_ia / d beta_a`, indexed `[i * m + a]`.
    d_beta: Vec<Vec<f64>>,
}

impl InfluenceModel {
    pub fn new<T: Scalar>(data: &Dataset<T>, prop: &FittedPropensity, outcome: &FittedOutcome) -> Result<Self> {
        Self::weighted(data, prop, outcome, &vec![1.0; data.n()])
    }

    /// Influence model of the subject-weighted value `n^{-1} sum_i W_i xi_i`.
    pub fn weighted<T: Scalar>(
        data: &Dataset<T>,
        prop: &FittedPropensity,
        outcome: &FittedOutcome,
        weights: &[f64],
    ) -> Result<Self> {
        let n = data.n();
        let m = data.m();
        let xi: Vec<f64> = pseudo_rows(data, prop, outcome)
            .into_iter()
            .zip(weights)
            .flat_map(|(r, &w)| r.into_iter().map(move |v| w * v))
            .collect();
        let phi_gamma = prop.influence(data, weights)?;
        let outcome_inf = outcome.influence(data, weights)?;

        let mut c_gamma = Vec::new();
        if phi_gamma.is_some() {
            c_gamma = data
                .covariates()
                .rows()
                .zip(data.arms())
                .zip(data.outcomes())
                .zip(weights)
                .map(|(((x, &a), &y), &w)| {
                    let om = prop.prob(x, a);
                    let f = -w * (y.to_f64_lossy() - outcome.mean(x, a)) / (om * om);
                    prop.d_prob(x, a).into_iter().map(|d| f * d).collect()
                })
                .collect();
        }
        let mut d_beta = Vec::new();
        if outcome_inf.is_some() {
            d_beta.reserve(n * m);
            for ((x, &arm), &w) in data.covariates().rows().zip(data.arms()).zip(weights) {
                for a in 0..m {
                    let f = w * (1.0 - if a == arm { 1.0 / prop.prob(x, a) } else { 0.0 });
                    d_beta.push(outcome.d_mean(x, a).into_iter().map(|d| f * d).collect());
                }
            }
        }
        let (phi_beta, beta_center) = match outcome_inf {
            Some(inf) => (Some(inf.phi), inf.center),
            None => (None, Vec::new()),
        };
        Ok(InfluenceModel {
            n,
            m,
            arms: data.arms().to_vec(),
            xi,
            phi_gamma,
            c_gamma,
            phi_beta,
            beta_center,
            d_beta,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn xi(&self, i: usize, a: usize) -> f64 {
        self.xi[i * self.m + a]
    }

    pub fn value_of(&self, recs: &[usize]) -> f64 {
        recs.iter().enumerate().map(|(i, &a)| self.xi(i, a)).sum::<f64>() / self.n as f64
    }

    /// Per-subject `phi_R(O_i)` of the linear combination
    /// `sum_k coef_k R(pi_k)` restricted to subjects with differing
    /// recommendations (`subjects`), plus the common-term contributions.
    fn contributions(&self, terms: &[(&[usize], f64)], subjects: &[usize]) -> Vec<f64> {
        let n = self.n as f64;
        let d = self.phi_gamma.as_ref().map_or(0, |p| p.first().map_or(0, Vec::len));
        let mut g_gamma = vec![0.0; d];
        let mut g_beta: Vec<Vec<f64>> = if self.phi_beta.is_some() {
            (0..self.m).map(|a| vec![0.0; self.beta_center[a].len()]).collect()
        } else {
            Vec::new()
        };
        let mut direct = vec![0.0; self.n];
        let mut mean = 0.0;
        for &i in subjects {
            for &(recs, coef) in terms {
                let a = recs[i];
                let v = coef * self.xi(i, a);
                direct[i] += v;
                mean += v;
                if d > 0 && a == self.arms[i] {
                    for (g, c) in g_gamma.iter_mut().zip(&self.c_gamma[i]) {
                        *g += coef * c;
                    }
                }
                if !g_beta.is_empty() {
                    for (g, c) in g_beta[a].iter_mut().zip(&self.d_beta[i * self.m + a]) {
                        *g += coef * c;
                    }
                }
            }
        }
        mean /= n;
        g_gamma.iter_mut().for_each(|g| *g /= n);
        g_beta.iter_mut().flatten().for_each(|g| *g /= n);
        let shift: f64 = g_beta
            .iter()
            .zip(&self.beta_center)
            .map(|(g, c)| g.iter().zip(c).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        (0..self.n)
            .map(|i| {
                let mut v = direct[i] - mean - shift;
                if let Some(pg) = &self.phi_gamma {
                    v += g_gamma.iter().zip(&pg[i]).map(|(x, y)| x * y).sum::<f64>();
                }
                if let Some(pb) = &self.phi_beta {
                    let a = self.arms[i];
                    v += g_beta[a].iter().zip(&pb[i]).map(|(x, y)| x * y).sum::<f64>();
                }
                v
            })
            .collect()
    }

    /// `phi_R(O_i)` for the regime with recommendations `recs`.
    pub fn influence(&self, recs: &[usize]) -> Vec<f64> {
        let all: Vec<usize> = (0..self.n).collect();
        self.contributions(&[(recs, 1.0)], &all)
    }

    pub fn variance_of_value(&self, recs: &[usize]) -> f64 {
        let n = self.n as f64;
        self.influence(recs).iter().map(|v| v * v).sum::<f64>() / (n * n)
    }

    pub fn variance_of_list<T: Scalar>(&self, list: &DecisionList<T>, data: &Covariates<T>) -> f64 {
        self.variance_of_value(&list.recommend(data))
    }
}

impl DifferenceVariance for InfluenceModel {
    fn variance_of_difference(&self, recs1: &[usize], recs2: &[usize]) -> f64 {
        let differing: Vec<usize> = (0..self.n).filter(|&i| recs1[i] != recs2[i]).collect();
        if differing.is_empty() {
            return 0.0;
        }
        let n = self.n as f64;
        let phi = self.contributions(&[(recs1, 1.0), (recs2, -1.0)], &differing);
        phi.iter().map(|v| v * v).sum::<f64>() / (n * n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OutcomeKind;
    use crate::models::{fit_outcome, fit_propensity, FeatureMap, Link, OutcomeSpec, PropensitySpec};
    use crate::regime::{Atom, Clause, Condition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dataset(x: Vec<Vec<f64>>, arms: Vec<usize>, m: usize, y: Vec<f64>) -> Dataset {
        let p = x[0].len();
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Dataset::with_numbered_arms(Covariates::from_rows(names, x).unwrap(), arms, m, y, OutcomeKind::Continuous)
            .unwrap()
    }

    fn random_data(n: usize, m: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut arms = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let xi: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let a = if i < m { i } else { rng.random_range(0..m) };
            let e: f64 = rng.sample(StandardNormal);
            y.push(1.0 + xi[0] + if a == 1 { xi[1] } else { -xi[1] } + e);
            x.push(xi);
            arms.push(a);
        }
        dataset(x, arms, m, y)
    }

    #[test]
    fn direct_substitution() {
        let data = dataset(vec![vec![0.0], vec![1.0]], vec![0, 1], 2, vec![3.0, 1.0]);
        let prop = fit_propensity(&data, &PropensitySpec::Known { probs: vec![0.5, 0.5] }).unwrap();
        let zero = FittedOutcome::zero(2, Link::Identity);
        let xi: PseudoOutcomeMatrix = pseudo_outcomes(&data, &prop, &zero);
        assert_eq!(xi.row(0), &[6.0, 0.0]);
        assert_eq!(xi.row(1), &[0.0, 2.0]);
    }

    #[test]
    fn residual_vanishes_under_exact_outcome_model() {
        // y is exactly linear in x within each arm
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let arms: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let y: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 2.0 * i as f64 } else { 1.0 - i as f64 }).collect();
        let data = dataset(x, arms, 2, y.clone());
        let prop = fit_propensity(&data, &PropensitySpec::SampleProportion).unwrap();
        let out = fit_outcome(&data, &OutcomeSpec::glm(OutcomeKind::Continuous)).unwrap();
        let xi: PseudoOutcomeMatrix = pseudo_outcomes(&data, &prop, &out);
        for i in 0..10 {
            assert!((xi.get(i, data.arms()[i]) - y[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn vacuous_clause_gives_sentinel() {
        let data = dataset(vec![vec![0.0], vec![1.0]], vec![0, 1], 2, vec![3.0, 1.0]);
        let xi = PseudoOutcomeMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let list = DecisionList {
            clauses: vec![Clause { condition: Condition::single(Atom::gt(0, 5.0)), action: 0 }],
            default: 1,
        };
        assert_eq!(value(&xi, &list, data.covariates()), RegimeValue::NegInfinity);
        assert!(RegimeValue::NegInfinity < RegimeValue::Finite(-1e300));
        assert_eq!(value(&xi, &DecisionList::constant(0), data.covariates()), RegimeValue::Finite(2.0));
        let split = DecisionList {
            clauses: vec![Clause { condition: Condition::single(Atom::le(0, 0.5)), action: 1 }],
            default: 0,
        };
        assert_eq!(value(&xi, &split, data.covariates()), RegimeValue::Finite(2.5));
    }

    #[test]
    fn constant_regime_with_known_models_is_sample_variance() {
        let data = random_data(200, 2, 1);
        let prop = fit_propensity(&data, &PropensitySpec::Known { probs: vec![0.5, 0.5] }).unwrap();
        let zero = FittedOutcome::zero(2, Link::Identity);
        let inf = InfluenceModel::new(&data, &prop, &zero).unwrap();
        let xi: PseudoOutcomeMatrix = pseudo_outcomes(&data, &prop, &zero);
        let recs = vec![0; 200];
        let mean = xi.constant_value(0);
        let expected = (0..200).map(|i| (xi.get(i, 0) - mean).powi(2)).sum::<f64>() / 200.0f64.powi(2);
        assert!((inf.variance_of_value(&recs) - expected).abs() < 1e-12);
    }

    #[test]
    fn influence_is_centered_and_difference_rules_hold() {
        let data = random_data(300, 3, 2);
        let prop = fit_propensity(&data, &PropensitySpec::default()).unwrap();
        let out = fit_outcome(&data, &OutcomeSpec::glm(OutcomeKind::Continuous)).unwrap();
        let inf = InfluenceModel::new(&data, &prop, &out).unwrap();
        let r1: Vec<usize> = data.covariates().rows().map(|x| usize::from(x[0] > 0.0)).collect();
        let r2: Vec<usize> = data.covariates().rows().map(|x| if x[1] > 0.5 { 2 } else { 1 }).collect();
        let phi = inf.influence(&r1);
        assert!(phi.iter().sum::<f64>().abs() / 300.0 < 1e-8);
        assert_eq!(inf.variance_of_difference(&r1, &r1), 0.0);
        let v = inf.variance_of_difference(&r1, &r2);
        assert!(v > 0.0);
        assert!(v <= 2.0 * (inf.variance_of_value(&r1) + inf.variance_of_value(&r2)));
        // direct expansion of the difference of influence functions
        let (p1, p2) = (inf.influence(&r1), inf.influence(&r2));
        let direct = p1.iter().zip(&p2).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 300.0f64.powi(2);
        assert!((v - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn proportion_correction_matches_closed_form() {
        // with u = 1 and m = 2: d w_1 / d gamma = w_1 (1 - w_1), d w_2 / d gamma = -w_1 w_2
        let data = random_data(150, 2, 5);
        let prop = fit_propensity(&data, &PropensitySpec::SampleProportion).unwrap();
        let out = fit_outcome(&data, &OutcomeSpec::glm(OutcomeKind::Continuous)).unwrap();
        let inf = InfluenceModel::new(&data, &prop, &out).unwrap();
        let p1 = data.arm_counts()[0] as f64 / 150.0;
        let recs: Vec<usize> = data.covariates().rows().map(|x| usize::from(x[0] > 0.2)).collect();
        let mut generic = 0.0;
        let mut closed = 0.0;
        for i in 0..150 {
            let a = data.arms()[i];
            if recs[i] == a {
                generic += inf.c_gamma[i][0] / 150.0;
                let x = data.covariates().row(i);
                let om = if a == 0 { p1 } else { 1.0 - p1 };
                let deriv = if a == 0 { p1 * (1.0 - p1) } else { -p1 * (1.0 - p1) };
                closed += -(data.outcomes()[i] - out.mean(x, a)) / (om * om) * deriv / 150.0;
            }
        }
        assert!((generic - closed).abs() < 1e-10);
    }

    #[test]
    fn affine_equivariance() {
        let data = random_data(120, 2, 8);
        let y2: Vec<f64> = data.outcomes().iter().map(|y| 3.0 * y - 2.0).collect();
        let data2 = data.with_outcomes(y2).unwrap();
        let prop = fit_propensity(&data, &PropensitySpec::default()).unwrap();
        let spec = OutcomeSpec {
            link: Link::Identity,
            features: FeatureMap::Linear,
            penalty: crate::models::Penalty::None,
        };
        let xi1: PseudoOutcomeMatrix = pseudo_outcomes(&data, &prop, &fit_outcome(&data, &spec).unwrap());
        let xi2: PseudoOutcomeMatrix = pseudo_outcomes(&data2, &prop, &fit_outcome(&data2, &spec).unwrap());
        let recs: Vec<usize> = data.covariates().rows().map(|x| usize::from(x[1] > 0.0)).collect();
        assert!((xi2.value_of(&recs) - (3.0 * xi1.value_of(&recs) - 2.0)).abs() < 1e-9);
    }
}
