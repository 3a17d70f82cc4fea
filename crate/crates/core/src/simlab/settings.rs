use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::models::expit;
use crate::regime::{Atom, Clause, Condition, Connective, CostModel, DecisionList};

/// The seven generative settings; arms are zero-based, so arm `0` is the
/// control with `phi = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
}

impl Setting {
    pub const ALL: [Setting; 7] = [
        Setting::I,
        Setting::II,
        Setting::III,
        Setting::IV,
        Setting::V,
        Setting::VI,
        Setting::VII,
    ];

    pub fn m(self) -> usize {
        match self {
            Setting::I | Setting::II | Setting::III | Setting::IV => 2,
            _ => 3,
        }
    }

    /// Covariates (zero-based) that enter `phi`.
    pub fn signal(self) -> &'static [usize] {
        match self {
            Setting::IV | Setting::VII => &[0, 1, 2, 3],
            _ => &[0, 1],
        }
    }

    pub fn phi(self, x: &[f64], a: usize) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match (self, a) {
            (_, 0) => 0.0,
            (Setting::I, 1) => 3.0 * ind(x1 <= 1.0 && x2 > -0.6) - 1.0,
            (Setting::II, 1) => x1 + x2 - 1.0,
            (Setting::III, 1) => ((1.0 + x1).exp() - 3.0 * x2 - 5.0).atan(),
            (Setting::IV, 1) => x1 - x2 + x[2] - x[3],
            (Setting::V, 1) => 4.0 * ind(x1 > 1.0) - 2.0,
            (Setting::V, 2) => ind(x1 <= 1.0) * (2.0 * ind(x2 <= -0.3) - 1.0),
            (Setting::VI, 1) => 2.0 * x1,
            (Setting::VI, 2) => -x1 * x2,
            (Setting::VII, 1) => x1 - x2,
            (Setting::VII, 2) => x[2] - x[3],
            _ => panic!("setting {self} has no arm {a}"),
        }
    }

    /// Training sample size used for the value and cost tables.
    pub fn default_n(self, kind: OutcomeKind) -> usize {
        match (kind, self.m()) {
            (OutcomeKind::Continuous, 2) => 500,
            (OutcomeKind::Continuous, _) => 750,
            (OutcomeKind::Binary, 2) => 1000,
            (OutcomeKind::Binary, _) => 1500,
        }
    }

    /// The optimal regime as a list, for settings where it is one.
    pub fn optimal_list(self) -> Option<DecisionList> {
        match self {
            Setting::I => Some(DecisionList {
                clauses: vec![Clause {
                    condition: Condition::pair(Connective::And, Atom::le(0, 1.0), Atom::gt(1, -0.6)).ok()?,
                    action: 1,
                }],
                default: 0,
            }),
            Setting::V => Some(DecisionList {
                clauses: vec![
                    Clause {
                        condition: Condition::single(Atom::gt(0, 1.0)),
                        action: 1,
                    },
                    Clause {
                        condition: Condition::single(Atom::le(1, -0.3)),
                        action: 2,
                    },
                ],
                default: 0,
            }),
            _ => None,
        }
    }

    /// True cutoffs of the optimal list on `x1` and `x2`.
    pub fn true_cutoffs(self) -> Option<[f64; 2]> {
        match self {
            Setting::I => Some([1.0, -0.6]),
            Setting::V => Some([1.0, -0.3]),
            _ => None,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_uppercase();
        let by_number = s.parse::<usize>().ok().filter(|k| (1..=7).contains(k));
        Setting::ALL
            .iter()
            .enumerate()
            .find(|(k, set)| set.to_string() == s || by_number == Some(k + 1))
            .map(|(_, set)| *set)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown setting `{s}`; expected I..VII")))
    }
}

/// `cov(X_k, X_l) = 4 (1/5)^{|k - l|}`.
pub fn ar_covariance(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |k, l| 4.0 * 0.2f64.powi(k.abs_diff(l) as i32))
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub setting: Setting,
    pub kind: OutcomeKind,
    pub p: usize,
    chol: DMatrix<f64>,
}

impl Generator {
    pub fn new(setting: Setting, kind: OutcomeKind, p: usize) -> Result<Self> {
        if p < 7 {
            return Err(Error::InvalidConfig(format!("simulation settings need p >= 7, got {p}")));
        }
        let chol = ar_covariance(p)
            .cholesky()
            .ok_or(Error::Singular("covariance"))?
            .l();
        Ok(Generator { setting, kind, p, chol })
    }

    pub fn m(&self) -> usize {
        self.setting.m()
    }

    pub fn names(&self) -> Vec<String> {
        (1..=self.p).map(|j| format!("x{j}")).collect()
    }

    pub fn draw_covariates(&self, rng: &mut impl Rng, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.p);
        let mut z = vec![0.0; self.p];
        for _ in 0..n {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for k in 0..self.p {
                out.push((0..=k).map(|l| self.chol[(k, l)] * z[l]).sum());
            }
        }
        out
    }

    pub fn linear_predictor(&self, x: &[f64], a: usize) -> f64 {
        2.0 + x[0] + x[2] + x[4] + x[6] + self.setting.phi(x, a)
    }

    /// `E(Y | X = x, A = a)`.
    pub fn mean(&self, x: &[f64], a: usize) -> f64 {
        let eta = self.linear_predictor(x, a);
        match self.kind {
            OutcomeKind::Continuous => eta,
            OutcomeKind::Binary => expit(eta),
        }
    }

    /// `argmax_a phi(x, a)`, lowest arm on ties.
    pub fn optimal_arm(&self, x: &[f64]) -> usize {
        (1..self.m()).fold(0, |best, a| {
            if self.setting.phi(x, a) > self.setting.phi(x, best) {
                a
            } else {
                best
            }
        })
    }

    pub fn generate_with(&self, rng: &mut impl Rng, n: usize) -> Result<Dataset> {
        let values = self.draw_covariates(rng, n);
        let m = self.m();
        let mut arms = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for x in values.chunks(self.p) {
            let a = rng.random_range(0..m);
            let mu = self.mean(x, a);
            y.push(match self.kind {
                OutcomeKind::Continuous => mu + rng.sample::<f64, _>(StandardNormal),
                OutcomeKind::Binary => f64::from(u8::from(rng.random::<f64>() < mu)),
            });
            arms.push(a);
        }
        let covariates = Covariates::from_flat(self.names(), n, values)?;
        Dataset::with_numbered_arms(covariates, arms, m, y, self.kind)
    }

    /// Reproducible training sample for `(seed, stream)`.
    pub fn generate(&self, n: usize, seed: u64, stream: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        self.generate_with(&mut rng, n)
    }

    pub fn test_set(&self, n: usize, seed: u64) -> Result<TestSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let values = self.draw_covariates(&mut rng, n);
        let m = self.m();
        let mut means = Vec::with_capacity(n * m);
        let mut optimal = Vec::with_capacity(n);
        for x in values.chunks(self.p) {
            means.extend((0..m).map(|a| self.mean(x, a)));
            optimal.push(self.optimal_arm(x));
        }
        Ok(TestSet {
            covariates: Covariates::from_flat(self.names(), n, values)?,
            m,
            means,
            optimal,
        })
    }
}

/// Fresh covariate draws with their known conditional means.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub covariates: Covariates,
    m: usize,
    means: Vec<f64>,
    optimal: Vec<usize>,
}

impl TestSet {
    pub fn n(&self) -> usize {
        self.covariates.n()
    }

    pub fn mean(&self, i: usize, a: usize) -> f64 {
        self.means[i * self.m + a]
    }

    pub fn optimal(&self) -> &[usize] {
        &self.optimal
    }

    /// Monte Carlo value and its standard error.
    pub fn value_of(&self, recs: &[usize]) -> (f64, f64) {
        let n = self.n() as f64;
        let vals: Vec<f64> = recs.iter().enumerate().map(|(i, &a)| self.mean(i, a)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }

    pub fn value(&self, list: &DecisionList) -> f64 {
        self.value_of(&list.recommend(&self.covariates)).0
    }

    pub fn optimal_value(&self) -> f64 {
        self.value_of(&self.optimal).0
    }

    pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
        a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len().max(1) as f64
    }

    pub fn cost(&self, list: &DecisionList) -> f64 {
        CostModel::uniform(self.covariates.p()).empirical_cost(list, &self.covariates)
    }
}

/// Test-set value of `list`, using the known conditional mean.
pub fn true_value(list: &DecisionList, generator: &Generator, test_n: usize, seed: u64) -> Result<f64> {
    Ok(generator.test_set(test_n, seed)?.value(list))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_entries() {
        let c = ar_covariance(3);
        assert_eq!(c[(0, 0)], 4.0);
        assert!((c[(0, 1)] - 0.8).abs() < 1e-12);
        assert!((c[(0, 2)] - 0.16).abs() < 1e-12);
    }

    #[test]
    fn optimal_rules() {
        let g = Generator::new(Setting::I, OutcomeKind::Continuous, 10).unwrap();
        let mut x = vec![0.0; 10];
        assert_eq!(g.optimal_arm(&x), 1);
        x[0] = 1.5;
        assert_eq!(g.optimal_arm(&x), 0);
        let g5 = Generator::new(Setting::V, OutcomeKind::Continuous, 10).unwrap();
        x[0] = 2.0;
        assert_eq!((Setting::V.phi(&x, 1), Setting::V.phi(&x, 2)), (2.0, 0.0));
        assert_eq!(g5.optimal_arm(&x), 1);
        for s in [Setting::I, Setting::V] {
            let g = Generator::new(s, OutcomeKind::Continuous, 10).unwrap();
            let t = g.test_set(2000, 3).unwrap();
            let list = s.optimal_list().unwrap();
            assert_eq!(list.recommend(&t.covariates), t.optimal());
        }
    }

    #[test]
    fn parse_settings() {
        assert_eq!("iv".parse::<Setting>().unwrap(), Setting::IV);
        assert_eq!("5".parse::<Setting>().unwrap(), Setting::V);
        assert!("VIII".parse::<Setting>().is_err());
    }

    #[test]
    fn reproducible_draws() {
        let g = Generator::new(Setting::II, OutcomeKind::Binary, 8).unwrap();
        let a = g.generate(50, 9, 2).unwrap();
        let b = g.generate(50, 9, 2).unwrap();
        assert_eq!(a.outcomes(), b.outcomes());
        assert!(a.outcomes().iter().all(|&y| y == 0.0 || y == 1.0));
    }
}
