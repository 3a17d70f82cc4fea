use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::settings::{Generator, Setting, TestSet};
use crate::data::{Dataset, GridPolicy, OutcomeKind};
use crate::error::{Error, Result};
use crate::inference::{correct_value, BootstrapConfig};
use crate::models::{fit_outcome, fit_propensity, FeatureMap, FittedOutcome, Link, OutcomeSpec, Penalty, PropensitySpec};
use crate::pipeline::{fit_with_nuisance, FitConfig, FitResult, Nuisance};
use crate::regime::{render, DecisionList};
use crate::search::SearchConfig;
use crate::value::pseudo_outcomes;

/// Largest tolerated share of failed replicates in a study.
pub const MAX_STUDY_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub setting: Setting,
    pub kind: OutcomeKind,
    pub p: usize,
    /// Training size; the setting's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub reps: usize,
    pub seed: u64,
    pub test_n: usize,
    pub search: SearchConfig,
    pub grid: GridPolicy<f64>,
    pub mincost: bool,
    /// Run the bootstrap in every replicate and record interval coverage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapConfig>,
}

impl StudyConfig {
    pub fn new(setting: Setting, kind: OutcomeKind, p: usize) -> Self {
        StudyConfig {
            setting,
            kind,
            p,
            n: None,
            reps: 100,
            seed: 0,
            test_n: 100_000,
            search: SearchConfig::default(),
            grid: GridPolicy::default(),
            mincost: true,
            bootstrap: None,
        }
    }

    pub fn sample_size(&self) -> usize {
        self.n.unwrap_or_else(|| self.setting.default_n(self.kind))
    }

    pub fn fit_config(&self, data: &Dataset, rep: usize) -> FitConfig {
        let mut cfg = FitConfig::standard(data, self.seed.wrapping_add(rep as u64));
        cfg.grid = self.grid.clone();
        cfg.search = self.search;
        cfg.mincost = self.mincost;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub regime: String,
    pub value: f64,
    pub cost: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub loss: f64,
    pub pr_best: f64,
    pub correct: bool,
    /// Single threshold on `x1` and on `x2`, when the list has exactly one each.
    pub cutoffs: [Option<f64>; 2],
    pub q_value: f64,
    pub q_cost: f64,
    pub estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plain_covered: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_covered: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Monte Carlo standard error of the mean.
    pub se: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let k = v.len() as f64;
        if v.is_empty() {
            return Summary { mean: f64::NAN, se: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / k;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        Summary {
            mean,
            se: (var / k).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub plain: f64,
    pub corrected: f64,
    pub mean_estimate: f64,
    pub mean_corrected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub config: StudyConfig,
    pub n: usize,
    pub optimal_value: f64,
    pub completed: usize,
    pub failed: usize,
    pub value: Summary,
    pub cost: Summary,
    pub tpr: Summary,
    pub fpr: Summary,
    pub loss: Summary,
    pub pr_best: Summary,
    pub correct: f64,
    /// `n` times the mean squared error of the `x1` and `x2` cutoffs.
    pub cutoff_mse_n: [Option<f64>; 2],
    pub q_value: Summary,
    pub q_cost: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Coverage>,
    pub records: Vec<ReplicateRecord>,
}

/// Recommendations of the fitted outcome model: `argmax_a mu(x, a)`.
pub fn q_linear_recommend(outcome: &FittedOutcome, test: &TestSet) -> Vec<usize> {
    test.covariates
        .rows()
        .map(|x| {
            let mu = outcome.means(x);
            (1..mu.len()).fold(0, |b, a| if mu[a] > mu[b] { a } else { b })
        })
        .collect()
}

fn thresholds_on(list: &DecisionList, var: usize) -> Vec<f64> {
    let mut t: Vec<f64> = list
        .clauses
        .iter()
        .flat_map(|c| c.condition.atoms())
        .filter(|a| a.var == var)
        .map(|a| a.threshold)
        .collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn selection_rates(used: &[usize], signal: &[usize], p: usize) -> (f64, f64) {
    let tp = used.iter().filter(|j| signal.contains(j)).count();
    let fp = used.len() - tp;
    (tp as f64 / signal.len() as f64, fp as f64 / (p - signal.len()) as f64)
}

fn record(
    cfg: &StudyConfig,
    rep: usize,
    data: &Dataset,
    result: &FitResult,
    test: &TestSet,
    optimal_value: f64,
) -> ReplicateRecord {
    let regime = &result.regime;
    let recs = regime.recommend(&test.covariates);
    let value = test.value_of(&recs).0;
    let used = regime.covariates_used();
    let signal = cfg.setting.signal();
    let (tpr, fpr) = selection_rates(&used, signal, cfg.p);
    let cutoffs = [0, 1].map(|v| match thresholds_on(regime, v).as_slice() {
        [t] => Some(*t),
        _ => None,
    });
    let correct = used == signal && signal.iter().all(|&v| thresholds_on(regime, v).len() == 1);
    let q_recs = q_linear_recommend(&result.nuisance.outcome, test);
    ReplicateRecord {
        rep,
        regime: render(regime, data.covariates().names(), data.labels()),
        value,
        cost: test.cost(regime),
        tpr,
        fpr,
        loss: optimal_value - value,
        pr_best: TestSet::agreement(&recs, test.optimal()),
        correct,
        cutoffs,
        q_value: test.value_of(&q_recs).0,
        q_cost: result.nuisance.outcome.covariates_used(cfg.p).len() as f64,
        estimate: result.value,
        corrected: None,
        plain_covered: None,
        corrected_covered: None,
    }
}

fn run_replicate(cfg: &StudyConfig, generator: &Generator, test: &TestSet, optimal: f64, rep: usize) -> Result<ReplicateRecord> {
    let data = generator.generate(cfg.sample_size(), cfg.seed, rep as u64)?;
    let fit_cfg = cfg.fit_config(&data, rep);
    let nuisance = Nuisance::fit(&data, &fit_cfg.propensity, &fit_cfg.outcome)?;
    let result = fit_with_nuisance(&data, &fit_cfg, nuisance)?;
    let mut rec = record(cfg, rep, &data, &result, test, optimal);
    if let Some(boot) = &cfg.bootstrap {
        let boot = BootstrapConfig {
            seed: boot.seed.wrapping_add(rep as u64),
            ..boot.clone()
        };
        let report = correct_value(&data, &result, &boot)?;
        rec.corrected = Some(report.corrected);
        rec.plain_covered = Some(report.plain_interval.contains(rec.value));
        rec.corrected_covered = Some(report.interval.contains(rec.value));
    }
    Ok(rec)
}

fn collect_records<F>(reps: usize, run: F) -> Result<(Vec<ReplicateRecord>, usize)>
where
    F: Fn(usize) -> Result<ReplicateRecord> + Sync + Send,
{
    let results: Vec<Result<ReplicateRecord>> = (0..reps).into_par_iter().map(run).collect();
    let mut records = Vec::with_capacity(reps);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) if e.is_fit_failure() => {
                log::warn!("replicate failed: {e}");
                failed += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if records.is_empty() || failed as f64 > MAX_STUDY_FAILURE_RATE * reps as f64 {
        return Err(Error::TooManyFailures { failed, total: reps });
    }
    Ok((records, failed))
}

/// Monte Carlo study of the decision-list estimator and the q-linear baseline.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyMetrics> {
    if cfg.reps == 0 || cfg.test_n == 0 {
        return Err(Error::InvalidConfig("a study needs reps >= 1 and test_n >= 1".into()));
    }
    cfg.search.validate()?;
    let generator = Generator::new(cfg.setting, cfg.kind, cfg.p)?;
    let test = generator.test_set(cfg.test_n, cfg.seed)?;
    let optimal = test.optimal_value();
    let (records, failed) = collect_records(cfg.reps, |rep| run_replicate(cfg, &generator, &test, optimal, rep))?;
    let n = cfg.sample_size();
    let cutoff_mse_n = match cfg.setting.true_cutoffs() {
        Some(truth) => [0, 1].map(|v| {
            let errs: Vec<f64> = records.iter().filter_map(|r| r.cutoffs[v]).map(|t| (t - truth[v]).powi(2)).collect();
            (!errs.is_empty()).then(|| n as f64 * errs.iter().sum::<f64>() / errs.len() as f64)
        }),
        None => [None, None],
    };
    let coverage = cfg.bootstrap.as_ref().map(|_| {
        let k = records.len() as f64;
        let frac = |f: fn(&ReplicateRecord) -> Option<bool>| records.iter().filter(|r| f(r) == Some(true)).count() as f64 / k;
        Coverage {
            plain: frac(|r| r.plain_covered),
            corrected: frac(|r| r.corrected_covered),
            mean_estimate: records.iter().map(|r| r.estimate).sum::<f64>() / k,
            mean_corrected: records.iter().filter_map(|r| r.corrected).sum::<f64>() / k,
        }
    });
    Ok(StudyMetrics {
        config: cfg.clone(),
        n,
        optimal_value: optimal,
        completed: records.len(),
        failed,
        value: Summary::of(records.iter().map(|r| r.value)),
        cost: Summary::of(records.iter().map(|r| r.cost)),
        tpr: Summary::of(records.iter().map(|r| r.tpr)),
        fpr: Summary::of(records.iter().map(|r| r.fpr)),
        loss: Summary::of(records.iter().map(|r| r.loss)),
        pr_best: Summary::of(records.iter().map(|r| r.pr_best)),
        correct: records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64,
        cutoff_mse_n,
        q_value: Summary::of(records.iter().map(|r| r.q_value)),
        q_cost: Summary::of(records.iter().map(|r| r.q_cost)),
        coverage,
        records,
    })
}

/// Grid size used by the consistency probe: `ceil(sqrt(n))` percentiles.
pub fn consistency_grid(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

/// Runs the study at each sample size with a grid that refines with `n`.
pub fn consistency_probe(base: &StudyConfig, sizes: &[usize]) -> Result<Vec<StudyMetrics>> {
    sizes
        .iter()
        .map(|&n| {
            let cfg = StudyConfig {
                n: Some(n),
                grid: GridPolicy::Percentiles {
                    k: consistency_grid(n),
                },
                ..base.clone()
            };
            run_study(&cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaAgreement {
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub agreement: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub config: StudyConfig,
    pub alphas: Vec<f64>,
    pub values: Vec<Summary>,
    pub pairs: Vec<AlphaAgreement>,
}

/// Refits the list at each gate level on shared nuisance fits and compares
/// recommendations on the test set.
pub fn alpha_sensitivity(cfg: &StudyConfig, alphas: &[f64]) -> Result<AlphaReport> {
    if alphas.len() < 2 {
        return Err(Error::InvalidConfig("alpha sensitivity needs at least two levels".into()));
    }
    let generator = Generator::new(cfg.setting, cfg.kind, cfg.p)?;
    let test = generator.test_set(cfg.test_n, cfg.seed)?;
    let per_rep: Vec<Result<Vec<Vec<usize>>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let data = generator.generate(cfg.sample_size(), cfg.seed, rep as u64)?;
            let base = cfg.fit_config(&data, rep);
            let nuisance = Nuisance::fit(&data, &base.propensity, &base.outcome)?;
            alphas
                .iter()
                .map(|&alpha| {
                    let fit_cfg = FitConfig {
                        search: SearchConfig { alpha, ..base.search },
                        ..base.clone()
                    };
                    let res = fit_with_nuisance(&data, &fit_cfg, nuisance.clone())?;
                    Ok(res.regime.recommend(&test.covariates))
                })
                .collect()
        })
        .collect();
    let mut runs = Vec::with_capacity(cfg.reps);
    let mut failed = 0;
    for r in per_rep {
        match r {
            Ok(v) => runs.push(v),
            Err(e) if e.is_fit_failure() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if runs.is_empty() || failed as f64 > MAX_STUDY_FAILURE_RATE * cfg.reps as f64 {
        return Err(Error::TooManyFailures {
            failed,
            total: cfg.reps,
        });
    }
    let values = (0..alphas.len())
        .map(|k| Summary::of(runs.iter().map(|r| test.value_of(&r[k]).0)))
        .collect();
    let mut pairs = Vec::new();
    for a in 0..alphas.len() {
        for b in a + 1..alphas.len() {
            pairs.push(AlphaAgreement {
                alpha_a: alphas[a],
                alpha_b: alphas[b],
                agreement: Summary::of(runs.iter().map(|r| TestSet::agreement(&r[a], &r[b]))),
            });
        }
    }
    Ok(AlphaReport {
        config: cfg.clone(),
        alphas: alphas.to_vec(),
        values,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub n: usize,
    pub truth: f64,
    /// Correct propensity model, outcome model fixed at zero.
    pub propensity_only: f64,
    /// Constant propensity `(0.3, 0.7)`, correctly specified outcome model.
    pub outcome_only: f64,
}

/// Estimates the value of the optimal list of setting I under each
/// single-model misspecification.
pub fn double_robustness(n: usize, p: usize, seed: u64, test_n: usize) -> Result<RobustnessReport> {
    let generator = Generator::new(Setting::I, OutcomeKind::Continuous, p)?;
    let list = Setting::I.optimal_list().expect("setting I has a list optimum");
    let truth = generator.test_set(test_n, seed)?.value(&list);
    let data = generator.generate(n, seed, 0)?;
    let recs = list.recommend(data.covariates());

    let prop = fit_propensity(&data, &PropensitySpec::default())?;
    let zero = FittedOutcome::zero(2, Link::Identity);
    let propensity_only = pseudo_outcomes(&data, &prop, &zero).value_of(&recs);

    let region: Vec<f64> = data
        .covariates()
        .rows()
        .map(|x| f64::from(u8::from(x[0] <= 1.0 && x[1] > -0.6)))
        .collect();
    let augmented = data.with_extra_covariates(&["region".to_string()], &[region])?;
    let wrong = fit_propensity(&augmented, &PropensitySpec::Known { probs: vec![0.3, 0.7] })?;
    let outcome = fit_outcome(
        &augmented,
        &OutcomeSpec {
            link: Link::Identity,
            features: FeatureMap::Columns(vec![0, 2, 4, 6, p]),
            penalty: Penalty::None,
        },
    )?;
    let outcome_only = pseudo_outcomes(&augmented, &wrong, &outcome).value_of(&recs);
    Ok(RobustnessReport {
        n,
        truth,
        propensity_only,
        outcome_only,
    })
}
