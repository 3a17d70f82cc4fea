//! Greedy decision-list search with a variance-gated stopping rule.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{bin, build_grid, BinIndex, Covariates, CutoffGrid, GridPolicy};
use crate::error::{Error, Result};
use crate::regime::{Atom, Clause, Condition, Connective, DecisionList, Sense};
use crate::scalar::Scalar;
use crate::value::{DifferenceVariance, PseudoOutcomeMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub l_max: usize,
    pub alpha: f64,
    pub min_region: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            l_max: 10,
            alpha: 0.05,
            min_region: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// One-sided `z_{1 - alpha}`.
    pub fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(1.0 - self.alpha)
    }
}

/// Best clause for an active set: `condition -> action`, otherwise `alternative`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ClauseChoice<T: Scalar = f64> {
    pub condition: Condition<T>,
    pub action: usize,
    pub alternative: usize,
    /// `sum_{i active} xi[i][recommended]`.
    pub score: T,
    /// Active subjects satisfying the condition.
    pub caught: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    key: (u8, usize, usize, usize, usize, usize, usize),
    score: T,
    caught: usize,
}

impl<T: Scalar> Candidate<T> {
    fn beats(&self, other: &Self) -> bool {
        self.score > other.score || (self.score == other.score && self.key < other.key)
    }
}

fn keep_better<T: Scalar>(best: &mut Option<Candidate<T>>, cand: Candidate<T>) {
    if best.as_ref().is_none_or(|b| cand.beats(b)) {
        *best = Some(cand);
    }
}

fn argmax<T: Scalar>(v: &[T]) -> (usize, T) {
    let mut best = (0, v[0]);
    for (a, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (a, x);
        }
    }
    best
}

/// Scores `in`/`out` sums for one partition under the form pair `(f, 11 - f)`.
#[allow(clippy::too_many_arguments)]
fn consider<T: Scalar>(
    best: &mut Option<Candidate<T>>,
    form: u8,
    idx: (usize, usize, usize, usize),
    inside: &[T],
    outside: &[T],
    n_in: usize,
    n_out: usize,
    min_region: usize,
) {
    let floor = min_region.max(1);
    if n_in < floor || n_out < floor {
        return;
    }
    let (a_in, s_in) = argmax(inside);
    let (a_out, s_out) = argmax(outside);
    let (j1, j2, c1, c2) = idx;
    keep_better(
        best,
        Candidate {
            key: (form, j1, j2, c1, c2, a_in, a_out),
            score: s_in + s_out,
            caught: n_in,
        },
    );
    keep_better(
        best,
        Candidate {
            key: (11 - form, j1, j2, c1, c2, a_out, a_in),
            score: s_out + s_in,
            caught: n_out,
        },
    );
}

fn single_best<T: Scalar>(
    j: usize,
    active: &[usize],
    xi: &PseudoOutcomeMatrix<T>,
    bins: &BinIndex,
    s: usize,
    min_region: usize,
) -> Option<Candidate<T>> {
    let m = xi.m();
    let mut hist = vec![T::zero(); (s + 1) * m];
    let mut count = vec![0usize; s + 1];
    for &i in active {
        let u = bins.get(i, j);
        count[u] += 1;
        for (h, &x) in hist[u * m..(u + 1) * m].iter_mut().zip(xi.row(i)) {
            *h = *h + x;
        }
    }
    for u in 1..=s {
        count[u] += count[u - 1];
        for a in 0..m {
            hist[u * m + a] = hist[u * m + a] + hist[(u - 1) * m + a];
        }
    }
    let total = &hist[s * m..];
    let mut best = None;
    let mut outside = vec![T::zero(); m];
    for c in 0..s {
        let inside = &hist[c * m..(c + 1) * m];
        for a in 0..m {
            outside[a] = total[a] - inside[a];
        }
        consider(&mut best, 1, (j, j, c, c), inside, &outside, count[c], count[s] - count[c], min_region);
    }
    best
}

fn pair_best<T: Scalar>(
    (k, l): (usize, usize),
    active: &[usize],
    xi: &PseudoOutcomeMatrix<T>,
    bins: &BinIndex,
    (sk, sl): (usize, usize),
    min_region: usize,
) -> Option<Candidate<T>> {
    let m = xi.m();
    let wl = sl + 1;
    let cells = (sk + 1) * wl;
    let mut d = vec![T::zero(); cells * m];
    let mut cnt = vec![0usize; cells];
    for &i in active {
        let cell = bins.get(i, k) * wl + bins.get(i, l);
        cnt[cell] += 1;
        for (h, &x) in d[cell * m..(cell + 1) * m].iter_mut().zip(xi.row(i)) {
            *h = *h + x;
        }
    }
    // cumulate along v, then along u
    for u in 0..=sk {
        for v in 1..=sl {
            let (cur, prev) = ((u * wl + v) * m, (u * wl + v - 1) * m);
            cnt[u * wl + v] += cnt[u * wl + v - 1];
            for a in 0..m {
                d[cur + a] = d[cur + a] + d[prev + a];
            }
        }
    }
    for u in 1..=sk {
        for v in 0..=sl {
            let (cur, prev) = ((u * wl + v) * m, ((u - 1) * wl + v) * m);
            cnt[u * wl + v] += cnt[(u - 1) * wl + v];
            for a in 0..m {
                d[cur + a] = d[cur + a] + d[prev + a];
            }
        }
    }
    let at = |u: usize, v: usize| &d[(u * wl + v) * m..(u * wl + v + 1) * m];
    let total = at(sk, sl);
    let n = cnt[sk * wl + sl];
    let mut best = None;
    let mut region = vec![vec![T::zero(); m]; 4];
    let mut comp = vec![vec![T::zero(); m]; 4];
    for c1 in 0..sk {
        let row = at(c1, sl);
        let n_row = cnt[c1 * wl + sl];
        for c2 in 0..sl {
            let col = at(sk, c2);
            let ll = at(c1, c2);
            let n_col = cnt[sk * wl + c2];
            let n_ll = cnt[c1 * wl + c2];
            for a in 0..m {
                region[0][a] = ll[a];
                region[1][a] = row[a] - ll[a];
                region[2][a] = col[a] - ll[a];
                region[3][a] = total[a] - row[a] - col[a] + ll[a];
            }
            let counts = [n_ll, n_row - n_ll, n_col - n_ll, n + n_ll - n_row - n_col];
            for r in 0..4 {
                for a in 0..m {
                    comp[r][a] = total[a] - region[r][a];
                }
                // And forms 2..=5 in sense order LL, LG, GL, GG; their negations are Or forms 9..=6
                consider(
                    &mut best,
                    2 + r as u8,
                    (k, l, c1, c2),
                    &region[r],
                    &comp[r],
                    counts[r],
                    n - counts[r],
                    min_region,
                );
            }
        }
    }
    best
}

fn to_choice<T: Scalar>(cand: Candidate<T>, grid: &CutoffGrid<T>) -> ClauseChoice<T> {
    let (form, j1, j2, c1, c2, action, alternative) = cand.key;
    let atom = |var: usize, c: usize, sense: Sense| Atom {
        var,
        threshold: grid.cutoffs(var)[c],
        sense,
    };
    let condition = match form {
        1 => Condition::Single(atom(j1, c1, Sense::Le)),
        10 => Condition::Single(atom(j1, c1, Sense::Gt)),
        f => {
            let op = if f <= 5 { Connective::And } else { Connective::Or };
            let code = if f <= 5 { f - 2 } else { f - 6 };
            let s1 = if code & 2 == 0 { Sense::Le } else { Sense::Gt };
            let s2 = if code & 1 == 0 { Sense::Le } else { Sense::Gt };
            Condition::Pair {
                op,
                first: atom(j1, c1, s1),
                second: atom(j2, c2, s2),
            }
        }
    };
    ClauseChoice {
        condition,
        action,
        alternative,
        score: cand.score,
        caught: cand.caught,
    }
}

/// Maximizes `sum_{i active} xi[i][a] I(c holds) + xi[i][a'] I(c fails)` over
/// all legal conditions on the grid and all action pairs.
///
/// Returns `None` when every candidate leaves fewer than `max(1, min_region)`
/// active subjects on one side.
pub fn best_clause<T: Scalar>(
    active: &[usize],
    xi: &PseudoOutcomeMatrix<T>,
    bins: &BinIndex,
    grid: &CutoffGrid<T>,
    min_region: usize,
) -> Option<ClauseChoice<T>> {
    let p = grid.p();
    let singles: Vec<Option<Candidate<T>>> = (0..p)
        .into_par_iter()
        .map(|j| single_best(j, active, xi, bins, grid.len(j), min_region))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|k| (k + 1..p).map(move |l| (k, l))).collect();
    let paired: Vec<Option<Candidate<T>>> = pairs
        .par_iter()
        .map(|&(k, l)| pair_best((k, l), active, xi, bins, (grid.len(k), grid.len(l)), min_region))
        .collect();
    let mut best = None;
    for cand in singles.into_iter().chain(paired).flatten() {
        keep_better(&mut best, cand);
    }
    best.map(|c| to_choice(c, grid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    VarianceGate,
    LMax,
    /// No admissible clause remained for the active subjects.
    Leaf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Proposal<T: Scalar = f64> {
    pub choice: ClauseChoice<T>,
    pub delta: f64,
    pub variance: f64,
    /// `z_{1 - alpha} * sqrt(variance)`.
    pub threshold: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TraceNode<T: Scalar = f64> {
    pub depth: usize,
    pub list: DecisionList<T>,
    pub value: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<Proposal<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
    /// Indices of the clause and negated-clause children.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<usize>,
}

/// Pre-order record of the search tree plus the finalized candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SearchTrace<T: Scalar = f64> {
    pub config: SearchConfig,
    pub nodes: Vec<TraceNode<T>>,
    /// Node indices of finalized lists, in the order encountered.
    pub finals: Vec<usize>,
    pub selected: usize,
}

/// Everything the search reads; shared across parallel branches.
pub struct SearchInput<'a, T: Scalar = f64> {
    pub covariates: &'a Covariates<T>,
    pub xi: &'a PseudoOutcomeMatrix<T>,
    pub bins: &'a BinIndex,
    pub grid: &'a CutoffGrid<T>,
    pub variance: &'a dyn DifferenceVariance,
}

fn passes_gate(delta: f64, threshold: f64) -> bool {
    !(delta < threshold || (delta == 0.0 && threshold == 0.0))
}

fn explore<T: Scalar>(
    input: &SearchInput<'_, T>,
    config: &SearchConfig,
    z: f64,
    list: DecisionList<T>,
    recs: Vec<usize>,
    active: Vec<usize>,
) -> Vec<TraceNode<T>> {
    let depth = list.len();
    let value = input.xi.value_of(&recs);
    let mut node = TraceNode {
        depth,
        list,
        value,
        proposal: None,
        stop: None,
        children: Vec::new(),
    };
    if depth >= config.l_max {
        node.stop = Some(StopReason::LMax);
        return vec![node];
    }
    let Some(choice) = best_clause(&active, input.xi, input.bins, input.grid, config.min_region) else {
        node.stop = Some(StopReason::Leaf);
        return vec![node];
    };
    let mut new_recs = recs.clone();
    let mut caught = Vec::with_capacity(choice.caught);
    let mut rest = Vec::with_capacity(active.len() - choice.caught);
    for &i in &active {
        if choice.condition.holds(input.covariates.row(i)) {
            new_recs[i] = choice.action;
            caught.push(i);
        } else {
            new_recs[i] = choice.alternative;
            rest.push(i);
        }
    }
    let delta = (input.xi.value_of(&new_recs) - value).to_f64_lossy();
    let variance = input.variance.variance_of_difference(&new_recs, &recs);
    let threshold = z * variance.max(0.0).sqrt();
    let accepted = passes_gate(delta, threshold);
    node.proposal = Some(Proposal {
        choice,
        delta,
        variance,
        threshold,
        accepted,
    });
    if !accepted {
        node.stop = Some(StopReason::VarianceGate);
        return vec![node];
    }
    let kept = node
        .list
        .extend(choice.condition, choice.action, choice.alternative);
    let negated = node
        .list
        .extend(choice.condition.negate(), choice.alternative, choice.action);
    let recs2 = new_recs.clone();
    let (left, right) = rayon::join(
        || explore(input, config, z, kept, new_recs, rest),
        || explore(input, config, z, negated, recs2, caught),
    );
    let offset_l = 1;
    let offset_r = 1 + left.len();
    node.children = vec![offset_l, offset_r];
    let mut nodes = Vec::with_capacity(offset_r + right.len());
    nodes.push(node);
    for (sub, off) in [(left, offset_l), (right, offset_r)] {
        nodes.extend(sub.into_iter().map(|mut n| {
            n.children.iter_mut().for_each(|c| *c += off);
            n
        }));
    }
    nodes
}

/// Runs the greedy search and returns the highest-valued finalized list.
pub fn find_list<T: Scalar>(
    input: &SearchInput<'_, T>,
    config: &SearchConfig,
) -> Result<(DecisionList<T>, SearchTrace<T>)> {
    config.validate()?;
    let n = input.covariates.n();
    if input.xi.n() != n || input.bins.n() != n {
        return Err(Error::InvalidData(format!(
            "search inputs disagree on n: covariates {n}, pseudo-outcomes {}, bins {}",
            input.xi.n(),
            input.bins.n()
        )));
    }
    if input.grid.p() != input.covariates.p() {
        return Err(Error::InvalidData("cutoff grid does not match the covariates".into()));
    }
    let constants: Vec<T> = (0..input.xi.m()).map(|a| input.xi.constant_value(a)).collect();
    let (a0, _) = argmax(&constants);
    let nodes = explore(
        input,
        config,
        config.z(),
        DecisionList::constant(a0),
        vec![a0; n],
        (0..n).collect(),
    );
    // pre-order with the clause child first is the encounter order
    let finals: Vec<usize> = (0..nodes.len()).filter(|&k| nodes[k].children.is_empty()).collect();
    let mut selected = finals[0];
    for &k in &finals[1..] {
        if nodes[k].value > nodes[selected].value {
            selected = k;
        }
    }
    let list = nodes[selected].list.clone();
    Ok((
        list,
        SearchTrace {
            config: *config,
            nodes,
            finals,
            selected,
        },
    ))
}

impl<T: Scalar> SearchTrace<T> {
    pub fn clauses_of(&self, node: usize) -> &[Clause<T>] {
        &self.nodes[node].list.clauses
    }
}

/// Variance model that always returns zero; the gate then passes any strict improvement.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoVariance;

impl DifferenceVariance for NoVariance {
    fn variance_of_difference(&self, _: &[usize], _: &[usize]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSweep {
    pub sizes: Vec<usize>,
    pub seconds: Vec<f64>,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub s: usize,
    pub l_max: usize,
    pub over_p: ScalingSweep,
    pub over_n: ScalingSweep,
}

fn log_slope(x: &[usize], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|&v| (v as f64).ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn time_search(n: usize, p: usize, m: usize, s: usize, l_max: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let values: Vec<f64> = (0..n * p).map(|_| rng.random::<f64>()).collect();
    let x = Covariates::from_flat(names, n, values)?;
    let xi = PseudoOutcomeMatrix::from_rows(
        (0..n)
            .map(|_| (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect(),
    );
    let grid = build_grid(&x, &GridPolicy::Percentiles { k: s })?;
    let bins = bin(&x, &grid)?;
    let input = SearchInput {
        covariates: &x,
        xi: &xi,
        bins: &bins,
        grid: &grid,
        variance: &NoVariance,
    };
    let config = SearchConfig {
        l_max,
        alpha: 0.5,
        min_region: 0,
    };
    let mut runs = Vec::with_capacity(3);
    for _ in 0..3 {
        let start = Instant::now();
        find_list(&input, &config)?;
        runs.push(start.elapsed().as_secs_f64());
    }
    runs.sort_by(f64::total_cmp);
    Ok(runs[1].max(1e-9))
}

/// Times the search on synthetic data over doublings of `p` and of `n`,
/// single-threaded, and fits log-log slopes.
pub fn complexity_probe(n: usize, p: usize, m: usize, s: usize, l_max: usize, seed: u64) -> Result<ComplexityReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| {
        let p_sizes: Vec<usize> = (0..4).map(|k| p << k).collect();
        let n_sizes: Vec<usize> = (0..4).map(|k| n << k).collect();
        let p_secs = p_sizes
            .iter()
            .map(|&pp| time_search(n, pp, m, s, l_max, seed))
            .collect::<Result<Vec<_>>>()?;
        let n_secs = n_sizes
            .iter()
            .map(|&nn| time_search(nn, p, m, s, l_max, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(ComplexityReport {
            n,
            p,
            m,
            s,
            l_max,
            over_p: ScalingSweep {
                exponent: log_slope(&p_sizes, &p_secs),
                sizes: p_sizes,
                seconds: p_secs,
            },
            over_n: ScalingSweep {
                exponent: log_slope(&n_sizes, &n_secs),
                sizes: n_sizes,
                seconds: n_secs,
            },
        })
    })
}
