//! L1-penalized canonical GLMs fit by cyclic coordinate descent.
//!
//! Each arm has its own coefficient block, so with a shared `lambda` the
//! problem separates by arm. The loss is averaged over all subjects in the
//! fit and the intercepts are unpenalized. Penalty factors equal the
//! within-arm standard deviation of each column, which makes the solution
//! the same as fitting on standardized columns.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::outcome::Link;
use super::{dot, expit, MAX_HALVINGS, MAX_ITER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub n_lambda: usize,
    pub min_ratio: f64,
    pub folds: usize,
    pub seed: u64,
    /// Skip cross-validation and fit at this value.
    pub lambda: Option<f64>,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            n_lambda: 50,
            min_ratio: 1e-3,
            folds: 10,
            seed: 0,
            lambda: None,
        }
    }
}

/// Fitted regularization path with its cross-validation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub cv_error: Vec<f64>,
    /// Nonzero penalized coefficients (all arms) at each lambda on the full data.
    pub nonzero: Vec<usize>,
    pub selected: usize,
}

const CD_TOL: f64 = 1e-10;
const CD_MAX_SWEEPS: usize = 100_000;

#[inline]
fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Minimizes `b'Gb/2 - c'b + lambda * sum_k pf_k |b_k|` in place.
fn cd_quadratic(g: &[f64], c: &[f64], pf: &[f64], lambda: f64, beta: &mut [f64]) -> Result<()> {
    let r = c.len();
    let mut gb: Vec<f64> = (0..r).map(|k| dot(&g[k * r..(k + 1) * r], beta)).collect();
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for k in 0..r {
            let gkk = g[k * r + k];
            if gkk <= 0.0 {
                continue;
            }
            let rho = c[k] - gb[k] + gkk * beta[k];
            let new = if pf[k].is_infinite() { 0.0 } else { soft(rho, lambda * pf[k]) / gkk };
            let delta = new - beta[k];
            if delta != 0.0 {
                beta[k] = new;
                for l in 0..r {
                    gb[l] += g[l * r + k] * delta;
                }
                max_change = max_change.max(delta.abs() * gkk.sqrt());
            }
        }
        if max_change < CD_TOL {
            return Ok(());
        }
    }
    Err(Error::NonConvergence {
        model: "lasso",
        iterations: CD_MAX_SWEEPS,
        grad_norm: f64::NAN,
    })
}

/// One arm's data inside a (possibly cross-validation) fit.
pub(crate) struct ArmProblem<'a> {
    rows: Vec<&'a [f64]>,
    y: Vec<f64>,
    w: Vec<f64>,
    /// Total subjects across arms; losses are averaged over this count.
    n_total: f64,
    gram: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> ArmProblem<'a> {
    pub(crate) fn new(link: Link, rows: Vec<&'a [f64]>, y: Vec<f64>, w: Vec<f64>, n_total: f64) -> Self {
        let mut prob = ArmProblem {
            rows,
            y,
            w,
            n_total,
            gram: None,
        };
        if link == Link::Identity {
            let ones = vec![1.0; prob.rows.len()];
            let g = prob.gram_with(&ones);
            let r = g.len().isqrt();
            let mut c = vec![0.0; r];
            for ((z, &y), &w) in prob.rows.iter().zip(&prob.y).zip(&prob.w) {
                for k in 0..r {
                    c[k] += w * y * z[k];
                }
            }
            c.iter_mut().for_each(|v| *v /= n_total);
            prob.gram = Some((g, c));
        }
        prob
    }

    fn r(&self) -> usize {
        self.rows.first().map_or(0, |z| z.len())
    }

    /// `(1/N) sum_i w_i h_i z_i z_i'` with extra per-row factors `h`.
    fn gram_with(&self, h: &[f64]) -> Vec<f64> {
        let r = self.r();
        let mut g = vec![0.0; r * r];
        for ((z, &w), &hi) in self.rows.iter().zip(&self.w).zip(h) {
            let f = w * hi;
            if f == 0.0 {
                continue;
            }
            for k in 0..r {
                let fk = f * z[k];
                for l in k..r {
                    g[k * r + l] += fk * z[l];
                }
            }
        }
        for k in 0..r {
            for l in k..r {
                g[k * r + l] /= self.n_total;
                g[l * r + k] = g[k * r + l];
            }
        }
        g
    }

    fn neg_loglik(&self, beta: &[f64]) -> f64 {
        let s: f64 = self
            .rows
            .iter()
            .zip(&self.y)
            .zip(&self.w)
            .map(|((z, &y), &w)| {
                let eta = dot(z, beta);
                // log(1 + e^eta) - y * eta
                let sp = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
                w * (sp - y * eta)
            })
            .sum();
        s / self.n_total
    }

    /// Gradient of the mean log-likelihood at the intercept-only fit.
    /// Both links share it because the canonical mean at the null fit is the weighted mean.
    pub(crate) fn null_gradient(&self) -> Vec<f64> {
        let r = self.r();
        let sw: f64 = self.w.iter().sum();
        let mu = self.y.iter().zip(&self.w).map(|(y, w)| y * w).sum::<f64>() / sw;
        let mut g = vec![0.0; r];
        for ((z, &y), &w) in self.rows.iter().zip(&self.y).zip(&self.w) {
            for k in 0..r {
                g[k] += w * (y - mu) * z[k];
            }
        }
        g.iter_mut().for_each(|v| *v /= self.n_total);
        g
    }

    fn intercept_start(&self, link: Link) -> Vec<f64> {
        let mut beta = vec![0.0; self.r()];
        let sw: f64 = self.w.iter().sum();
        let ybar = self.y.iter().zip(&self.w).map(|(y, w)| y * w).sum::<f64>() / sw;
        beta[0] = match link {
            Link::Identity => ybar,
            Link::Logit => {
                let p = ybar.clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
        };
        beta
    }

    pub(crate) fn solve(&self, link: Link, pf: &[f64], lambda: f64, warm: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut beta = match warm {
            Some(b) => b.to_vec(),
            None => self.intercept_start(link),
        };
        match link {
            Link::Identity => {
                let (g, c) = self.gram.as_ref().expect("identity problems cache their Gram matrix");
                cd_quadratic(g, c, pf, lambda, &mut beta)?;
                Ok(beta)
            }
            Link::Logit => self.solve_logit(pf, lambda, beta),
        }
    }

    fn solve_logit(&self, pf: &[f64], lambda: f64, mut beta: Vec<f64>) -> Result<Vec<f64>> {
        let r = self.r();
        let penalty = |b: &[f64]| -> f64 {
            lambda
                * b.iter()
                    .zip(pf)
                    .filter(|(v, _)| **v != 0.0)
                    .map(|(v, p)| v.abs() * p)
                    .sum::<f64>()
        };
        let mut obj = self.neg_loglik(&beta) + penalty(&beta);
        for iter in 0..MAX_ITER {
            let probs: Vec<f64> = self.rows.iter().map(|z| expit(dot(z, &beta))).collect();
            let h: Vec<f64> = probs.iter().map(|p| p * (1.0 - p)).collect();
            let g = self.gram_with(&h);
            let mut grad = vec![0.0; r];
            for (((z, &y), &w), &p) in self.rows.iter().zip(&self.y).zip(&self.w).zip(&probs) {
                for k in 0..r {
                    grad[k] += w * (y - p) * z[k];
                }
            }
            let c: Vec<f64> = (0..r)
                .map(|k| dot(&g[k * r..(k + 1) * r], &beta) + grad[k] / self.n_total)
                .collect();
            let mut target = beta.clone();
            cd_quadratic(&g, &c, pf, lambda, &mut target)?;
            let step: Vec<f64> = target.iter().zip(&beta).map(|(t, b)| t - b).collect();
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
                let o = self.neg_loglik(&cand) + penalty(&cand);
                if o.is_finite() && o <= obj + 1e-14 * obj.abs().max(1.0) {
                    accepted = Some((cand, o));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, o)) = accepted else {
                return Err(Error::NonConvergence {
                    model: "lasso",
                    iterations: iter,
                    grad_norm: f64::NAN,
                });
            };
            let change = step.iter().map(|s| (s * t).abs()).fold(0.0, f64::max);
            beta = cand;
            obj = o;
            if change < 1e-9 {
                return Ok(beta);
            }
        }
        Err(Error::NonConvergence {
            model: "lasso",
            iterations: MAX_ITER,
            grad_norm: f64::NAN,
        })
    }
}

/// Penalty factors per arm: zero for the intercept, the within-arm
/// standard deviation (over all `n` subjects) otherwise, infinite for
/// columns that are constant within the arm.
pub(crate) fn penalty_factors(rows: &[&[f64]], n_total: f64) -> Vec<f64> {
    let r = rows.first().map_or(0, |z| z.len());
    let na = rows.len() as f64;
    let mut pf = vec![0.0; r];
    for k in 1..r {
        let mean = rows.iter().map(|z| z[k]).sum::<f64>() / na;
        let ss = rows.iter().map(|z| (z[k] - mean).powi(2)).sum::<f64>();
        let sd = (ss / n_total).sqrt();
        pf[k] = if sd > 1e-12 { sd } else { f64::INFINITY };
    }
    pf
}

pub(crate) fn lambda_max(problems: &[ArmProblem<'_>], pfs: &[Vec<f64>]) -> f64 {
    let mut lmax = 0.0f64;
    for (prob, pf) in problems.iter().zip(pfs) {
        let g = prob.null_gradient();
        for k in 1..g.len() {
            if pf[k].is_finite() {
                lmax = lmax.max(g[k].abs() / pf[k]);
            }
        }
    }
    lmax
}

pub(crate) fn lambda_grid(lmax: f64, config: &LassoConfig) -> Vec<f64> {
    let k = config.n_lambda.max(1);
    if k == 1 {
        return vec![lmax];
    }
    let lo = config.min_ratio.ln();
    (0..k)
        .map(|i| lmax * (lo * i as f64 / (k - 1) as f64).exp())
        .collect()
}

/// Everything the outcome model needs from a LASSO fit.
pub(crate) struct LassoFit {
    pub beta: Vec<Vec<f64>>,
    pub lambda: f64,
    pub path: Option<LassoPath>,
}

fn fit_path(
    link: Link,
    problems: &[ArmProblem<'_>],
    pfs: &[Vec<f64>],
    lambdas: &[f64],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut warm: Vec<Option<Vec<f64>>> = vec![None; problems.len()];
    let mut out = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let mut betas = Vec::with_capacity(problems.len());
        for (a, prob) in problems.iter().enumerate() {
            let b = prob.solve(link, &pfs[a], lam, warm[a].as_deref())?;
            warm[a] = Some(b.clone());
            betas.push(b);
        }
        out.push(betas);
    }
    Ok(out)
}

fn holdout_error(link: Link, rows: &[(&[f64], usize, f64, f64)], betas: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(z, a, y, w) in rows {
        let eta = dot(z, &betas[a]);
        let e = match link {
            Link::Identity => (y - eta).powi(2),
            Link::Logit => {
                let p = expit(eta).clamp(1e-10, 1.0 - 1e-10);
                -2.0 * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            }
        };
        num += w * e;
        den += w;
    }
    num / den
}

/// Fits the per-arm LASSO; `features[i]`, `arms[i]`, `y[i]`, `w[i]` per subject.
pub(crate) fn fit_lasso(
    link: Link,
    features: &[Vec<f64>],
    arms: &[usize],
    y: &[f64],
    w: &[f64],
    m: usize,
    config: &LassoConfig,
) -> Result<LassoFit> {
    let n = features.len();
    let nf = n as f64;
    let build = |keep: &dyn Fn(usize) -> bool, n_total: f64| -> Vec<ArmProblem<'_>> {
        (0..m)
            .map(|a| {
                let idx: Vec<usize> = (0..n).filter(|&i| arms[i] == a && keep(i)).collect();
                ArmProblem::new(
                    link,
                    idx.iter().map(|&i| features[i].as_slice()).collect(),
                    idx.iter().map(|&i| y[i]).collect(),
                    idx.iter().map(|&i| w[i]).collect(),
                    n_total,
                )
            })
            .collect()
    };
    let full = build(&|_| true, nf);
    let pfs: Vec<Vec<f64>> = full.iter().map(|p| penalty_factors(&p.rows, nf)).collect();

    if let Some(lam) = config.lambda {
        if !(lam > 0.0) {
            return Err(Error::InvalidConfig("lasso lambda must be positive".into()));
        }
        let beta = full
            .iter()
            .enumerate()
            .map(|(a, prob)| prob.solve(link, &pfs[a], lam, None))
            .collect::<Result<Vec<_>>>()?;
        return Ok(LassoFit {
            beta,
            lambda: lam,
            path: None,
        });
    }
    if config.n_lambda == 0 {
        return Err(Error::InvalidConfig("lasso lambda grid is empty".into()));
    }
    let lmax = lambda_max(&full, &pfs);
    let lmax = if lmax > 0.0 { lmax } else { 1e-8 };
    let lambdas = lambda_grid(lmax, config);
    let full_path = fit_path(link, &full, &pfs, &lambdas)?;

    let folds = config.folds.clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let fold_errors = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>> {
            let n_train = fold_of.iter().filter(|&&g| g != f).count() as f64;
            let train = build(&|i| fold_of[i] != f, n_train);
            if train.iter().any(|p| p.rows.is_empty()) {
                return Err(Error::InvalidData("a cross-validation fold leaves an arm empty".into()));
            }
            let path = fit_path(link, &train, &pfs, &lambdas)?;
            let test: Vec<(&[f64], usize, f64, f64)> = (0..n)
                .filter(|&i| fold_of[i] == f)
                .map(|i| (features[i].as_slice(), arms[i], y[i], w[i]))
                .collect();
            Ok(path.iter().map(|b| holdout_error(link, &test, b)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let cv_error: Vec<f64> = (0..lambdas.len())
        .map(|k| fold_errors.iter().map(|e| e[k]).sum::<f64>() / folds as f64)
        .collect();
    let selected = cv_error
        .iter()
        .enumerate()
        .fold(0, |best, (k, &e)| if e < cv_error[best] { k } else { best });
    let nonzero = full_path
        .iter()
        .map(|betas| betas.iter().map(|b| b[1..].iter().filter(|v| **v != 0.0).count()).sum())
        .collect();
    Ok(LassoFit {
        beta: full_path[selected].clone(),
        lambda: lambdas[selected],
        path: Some(LassoPath {
            lambdas,
            cv_error,
            nonzero,
            selected,
        }),
    })
}
