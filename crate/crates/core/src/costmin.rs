//! Branch-and-bound search for the cheapest list that reproduces a given
//! list's recommendations on the sample.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::regime::{Atom, Clause, Condition, Connective, CostModel, DecisionList, Sense};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Bits(Vec<u64>);

impl Bits {
    fn empty(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn from_fn(n: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut b = Bits::empty(n);
        for i in (0..n).filter(|&i| f(i)) {
            b.0[i / 64] |= 1 << (i % 64);
        }
        b
    }

    fn and(&self, o: &Bits) -> Bits {
        Bits(self.0.iter().zip(&o.0).map(|(a, b)| a & b).collect())
    }

    fn and_not(&self, o: &Bits) -> Bits {
        Bits(self.0.iter().zip(&o.0).map(|(a, b)| a & !b).collect())
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn first(&self) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, w)| **w != 0)
            .map(|(k, w)| k * 64 + w.trailing_zeros() as usize)
    }

    fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    fn subset_of(&self, o: &Bits) -> bool {
        self.0.iter().zip(&o.0).all(|(a, b)| a & !b == 0)
    }
}

/// Distinct `(covariate, threshold)` atoms of a list, in order of appearance.
pub fn atom_pool<T: Scalar>(list: &DecisionList<T>) -> Vec<Atom<T>> {
    let mut pool: Vec<Atom<T>> = Vec::new();
    for atom in list.clauses.iter().flat_map(|c| c.condition.atoms()) {
        let canon = Atom::le(atom.var, atom.threshold);
        if !pool.contains(&canon) {
            pool.push(canon);
        }
    }
    pool
}

/// Every legal condition over one or two pool atoms: both senses of each
/// atom, and all eight paired forms for atoms on distinct covariates.
pub fn candidate_conditions<T: Scalar>(pool: &[Atom<T>]) -> Vec<Condition<T>> {
    let mut out = Vec::new();
    for a in pool {
        out.push(Condition::Single(*a));
        out.push(Condition::Single(a.negate()));
    }
    for (k1, a) in pool.iter().enumerate() {
        for b in &pool[k1 + 1..] {
            if a.var == b.var {
                continue;
            }
            for op in [Connective::And, Connective::Or] {
                for sa in [Sense::Le, Sense::Gt] {
                    for sb in [Sense::Le, Sense::Gt] {
                        let c = Condition::pair(op, Atom { sense: sa, ..*a }, Atom { sense: sb, ..*b })
                            .expect("atoms on distinct covariates");
                        if !out.contains(&c) {
                            out.push(c);
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinCostOptions {
    pub l_max: usize,
    /// Disable to enumerate every admissible list (for checking the bound).
    pub prune: bool,
    /// Search nodes after which the best list found so far is returned.
    /// Ignored without pruning.
    pub max_nodes: usize,
}

impl MinCostOptions {
    pub fn new(l_max: usize) -> Self {
        MinCostOptions {
            l_max,
            prune: true,
            max_nodes: 4_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MinCostResult<T: Scalar = f64> {
    pub list: DecisionList<T>,
    pub cost: T,
    pub original_cost: T,
    pub nodes_visited: usize,
    /// False when the node limit stopped the search early.
    pub optimal: bool,
    /// Incumbent costs in the order they were recorded.
    pub incumbents: Vec<T>,
}

/// Cost-to-go of a state, scaled by `n`, with the first clause
/// `(condition index, action)` of an optimal completion.
#[derive(Debug, Clone, Copy)]
enum Memo<T> {
    Exact(T, (usize, usize)),
    AtLeast(T),
}

/// Measured covariates, subjects not yet caught, clauses left.
type State = (Bits, Bits, usize);

struct Search<'a, T: Scalar> {
    p: usize,
    conditions: Vec<Condition<T>>,
    sets: Vec<Bits>,
    by_arm: Vec<Bits>,
    fallback: usize,
    /// Per subject, the truth value of every pool atom (pools up to 128 atoms).
    signatures: Option<Vec<u128>>,
    atom_vars: Vec<usize>,
    costs: &'a CostModel<T>,
    prune: bool,
    max_nodes: usize,
    aborted: bool,
    memo: HashMap<State, Memo<T>>,
    incumbents: Vec<(T, DecisionList<T>)>,
    visited: usize,
}

impl<T: Scalar> Search<'_, T> {
    fn pure_arm(&self, set: &Bits) -> Option<usize> {
        match set.first() {
            None => Some(self.fallback),
            Some(i) => self.by_arm.iter().position(|b| b.0[i / 64] >> (i % 64) & 1 == 1).filter(|&a| set.subset_of(&self.by_arm[a])),
        }
    }

    /// Pure, non-empty branches `(condition, arm, caught, new covariates)`.
    /// Without pruning every branch is kept in condition order; otherwise a
    /// branch is dropped when another catches a superset of its subjects
    /// while measuring a subset of its new covariates, and the rest are
    /// ordered by new-covariate cost, then by subjects caught.
    fn branches(&self, used: &[bool], remaining: &Bits) -> Vec<(usize, usize, Bits, Vec<usize>)> {
        let mut all = Vec::new();
        for k in 0..self.conditions.len() {
            let caught = remaining.and(&self.sets[k]);
            let Some(first) = caught.first() else { continue };
            let Some(a) = self.by_arm.iter().position(|b| b.0[first / 64] >> (first % 64) & 1 == 1) else {
                continue;
            };
            if !caught.subset_of(&self.by_arm[a]) {
                continue;
            }
            let fresh: Vec<usize> = self.conditions[k].vars().into_iter().filter(|&j| !used[j]).collect();
            all.push((k, a, caught, fresh));
        }
        if !self.prune {
            return all;
        }
        let beats = |x: &(usize, usize, Bits, Vec<usize>), y: &(usize, usize, Bits, Vec<usize>)| {
            y.2.subset_of(&x.2) && x.3.iter().all(|j| y.3.contains(j))
        };
        let mut keep = vec![true; all.len()];
        for i in 0..all.len() {
            for j in 0..all.len() {
                if i == j || !keep[j] || !beats(&all[j], &all[i]) {
                    continue;
                }
                // mutual dominance keeps the earlier condition
                if !beats(&all[i], &all[j]) || j < i {
                    keep[i] = false;
                    break;
                }
            }
        }
        let mut kept: Vec<_> = all.into_iter().zip(keep).filter_map(|(b, k)| k.then_some(b)).collect();
        // cheap, wide clauses first so good incumbents appear early
        let fresh_cost = |b: &(usize, usize, Bits, Vec<usize>)| b.3.iter().map(|&j| self.costs.cost(j)).sum::<T>();
        kept.sort_by(|x, y| {
            fresh_cost(x)
                .partial_cmp(&fresh_cost(y))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(y.2.count().cmp(&x.2.count()))
                .then(x.0.cmp(&y.0))
        });
        kept
    }

    /// Marks the subjects of `remaining` whose cell under the atoms in
    /// `mask` also holds a subject of another arm.
    fn mixed_cells(&self, sigs: &[u128], mask: u128, members: &[(usize, usize)]) -> Vec<bool> {
        let mut cells: HashMap<u128, (usize, bool)> = HashMap::with_capacity(members.len());
        for &(i, arm) in members {
            let cell = cells.entry(sigs[i] & mask).or_insert((arm, false));
            cell.1 |= cell.0 != arm;
        }
        members.iter().map(|&(i, _)| cells[&(sigs[i] & mask)].1).collect()
    }

    /// Lower bound on the extra cost beyond the current level, `None` if no
    /// completion exists. A subject pays for every unmeasured covariate that
    /// alone separates it from a remaining subject of another arm, and at
    /// least the cheapest unmeasured covariate if the measured atoms do not
    /// separate it.
    fn extra_bound(&self, used: &[bool], remaining: &Bits) -> Option<T> {
        let Some(sigs) = &self.signatures else { return Some(T::zero()) };
        let mut members = Vec::new();
        for (w, &word) in remaining.0.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let i = w * 64 + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let arm = self.by_arm.iter().position(|b| b.0[w] >> (i % 64) & 1 == 1).unwrap_or(usize::MAX);
                members.push((i, arm));
            }
        }
        let atoms_on = |keep: &dyn Fn(usize) -> bool| {
            self.atom_vars
                .iter()
                .enumerate()
                .filter(|(_, &j)| keep(j))
                .fold(0u128, |m, (k, _)| m | 1 << k)
        };
        let mut unused: Vec<usize> = self.atom_vars.iter().copied().filter(|&j| !used[j]).collect();
        unused.sort_unstable();
        unused.dedup();
        let mixed_now = self.mixed_cells(sigs, atoms_on(&|j| used[j]), &members);
        if !mixed_now.contains(&true) {
            return Some(T::zero());
        }
        let c_min = unused
            .iter()
            .map(|&j| self.costs.cost(j))
            .reduce(|a, b| if b < a { b } else { a })?;
        let mut extra = vec![T::zero(); members.len()];
        for &j in &unused {
            let c = self.costs.cost(j);
            for (e, m) in extra.iter_mut().zip(self.mixed_cells(sigs, atoms_on(&|v| v != j), &members)) {
                if m {
                    *e = *e + c;
                }
            }
        }
        Some(
            extra
                .into_iter()
                .zip(mixed_now)
                .map(|(e, m)| if m && e < c_min { c_min } else { e })
                .sum(),
        )
    }

    fn level(&self, used: &[bool]) -> T {
        (0..self.p).filter(|&j| used[j]).map(|j| self.costs.cost(j)).sum()
    }

    /// Cheapest completion from this state if it costs less than `cap`.
    /// Every subject still to be classified pays at least the current level.
    fn solve(&mut self, used: &mut [bool], remaining: &Bits, budget: usize, cap: T, root: bool) -> Option<T> {
        if self.aborted {
            return None;
        }
        self.visited += 1;
        if self.prune && self.visited > self.max_nodes {
            self.aborted = true;
            return None;
        }
        let level = self.level(used);
        let floor = level * T::from_usize_lossy(remaining.count());
        if self.prune && floor >= cap {
            return None;
        }
        if let Some(a) = self.pure_arm(remaining) {
            if root {
                self.incumbents.push((floor, DecisionList::constant(a)));
            }
            return Some(floor);
        }
        let key = (Bits::from_fn(self.p, |j| used[j]), remaining.clone(), budget);
        if self.prune {
            match self.memo.get(&key) {
                Some(Memo::Exact(v, _)) => return (*v < cap).then_some(*v),
                Some(Memo::AtLeast(lb)) if *lb >= cap => return None,
                _ => {}
            }
        }
        let arms = self.by_arm.iter().filter(|b| !remaining.and(b).is_empty()).count();
        if budget + 1 < arms {
            self.memo.insert(key, Memo::AtLeast(T::infinity()));
            return None;
        }
        if self.prune {
            match self.extra_bound(used, remaining) {
                None => {
                    self.memo.insert(key, Memo::AtLeast(T::infinity()));
                    return None;
                }
                Some(extra) if floor + extra >= cap => {
                    self.memo.insert(key, Memo::AtLeast(floor + extra));
                    return None;
                }
                _ => {}
            }
        }
        let mut best = if self.prune { cap } else { T::infinity() };
        let mut step = None;
        for (k, a, caught, fresh) in self.branches(used, remaining) {
            let here = (level + fresh.iter().map(|&j| self.costs.cost(j)).sum::<T>()) * T::from_usize_lossy(caught.count());
            fresh.iter().for_each(|&j| used[j] = true);
            let rest = remaining.and_not(&self.sets[k]);
            let sub_cap = if self.prune { best - here } else { T::infinity() };
            let sub = self.solve(used, &rest, budget - 1, sub_cap, false);
            if let Some(s) = sub.filter(|_| !self.aborted) {
                if here + s < best {
                    best = here + s;
                    step = Some((k, a));
                    if root {
                        let mut list = self.rebuild(used, rest, budget - 1);
                        list.clauses.insert(0, Clause { condition: self.conditions[k], action: a });
                        self.incumbents.push((best, list));
                    }
                }
            }
            fresh.iter().for_each(|&j| used[j] = false);
            if self.aborted {
                // partial results are not exact; keep them out of the memo
                return step.map(|_| best);
            }
        }
        match step {
            Some(step) => {
                self.memo.insert(key, Memo::Exact(best, step));
                Some(best)
            }
            None => {
                self.memo.insert(key, Memo::AtLeast(cap));
                None
            }
        }
    }

    /// Optimal completion of a solved state, read back from the memo.
    fn rebuild(&self, used: &[bool], mut remaining: Bits, mut budget: usize) -> DecisionList<T> {
        let mut used = used.to_vec();
        let mut clauses = Vec::new();
        loop {
            if let Some(a) = self.pure_arm(&remaining) {
                return DecisionList { clauses, default: a };
            }
            let key = (Bits::from_fn(self.p, |j| used[j]), remaining.clone(), budget);
            match self.memo.get(&key) {
                Some(Memo::Exact(_, (k, a))) => {
                    let condition = self.conditions[*k];
                    condition.vars().into_iter().for_each(|j| used[j] = true);
                    clauses.push(Clause { condition, action: *a });
                    remaining = remaining.and_not(&self.sets[*k]);
                    budget -= 1;
                }
                _ => unreachable!("solved state without a recorded step"),
            }
        }
    }
}

/// Cheapest list over `pi`'s atom pool that matches `pi` on every row of
/// `data`, with at most `opts.l_max` clauses.
pub fn min_cost_equivalent<T: Scalar>(
    pi: &DecisionList<T>,
    data: &Covariates<T>,
    costs: &CostModel<T>,
    opts: MinCostOptions,
) -> MinCostResult<T> {
    let n = data.n();
    let recs = pi.recommend(data);
    let m = recs.iter().copied().max().unwrap_or(0).max(pi.max_arm()) + 1;
    let by_arm = (0..m).map(|a| Bits::from_fn(n, |i| recs[i] == a)).collect();
    let pool = atom_pool(pi);
    let conditions = candidate_conditions(&pool);
    let signatures = (pool.len() <= 128).then(|| {
        (0..n)
            .map(|i| {
                pool.iter()
                    .enumerate()
                    .filter(|(_, a)| a.holds(data.row(i)))
                    .fold(0u128, |m, (k, _)| m | 1 << k)
            })
            .collect()
    });
    let sets = conditions
        .iter()
        .map(|c| Bits::from_fn(n, |i| c.holds(data.row(i))))
        .collect();
    let mut search = Search {
        p: data.p(),
        conditions,
        sets,
        by_arm,
        fallback: pi.default,
        signatures,
        atom_vars: pool.iter().map(|a| a.var).collect(),
        costs,
        prune: opts.prune,
        max_nodes: opts.max_nodes,
        aborted: false,
        memo: HashMap::new(),
        incumbents: Vec::new(),
        visited: 0,
    };
    let original_cost = costs.empirical_cost(pi, data);
    let all = Bits::from_fn(n, |_| true);
    let scale = T::from_usize_lossy(n.max(1));
    // only lists strictly cheaper than `pi` are searched for
    let cap = if opts.prune && opts.l_max >= pi.len() { original_cost * scale } else { T::infinity() };
    search.solve(&mut vec![false; data.p()], &all, opts.l_max, cap, true);
    let optimal = !search.aborted;
    if !optimal {
        log::warn!("min-cost search stopped after {} nodes; keeping the best list found", opts.max_nodes);
    }
    let (list, cost) = match search.incumbents.last() {
        Some((total, list)) => (list.clone(), *total / scale),
        None => (pi.clone(), original_cost),
    };
    MinCostResult {
        list,
        cost,
        original_cost,
        nodes_visited: search.visited,
        optimal,
        incumbents: search.incumbents.iter().map(|(v, _)| *v / scale).collect(),
    }
}
