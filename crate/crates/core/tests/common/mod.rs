#![allow(dead_code)]

use declist::costmin::{atom_pool, candidate_conditions, min_cost_equivalent, MinCostOptions};
use declist::data::{bin, bin_value, CutoffGrid};
use declist::regime::{sample_equivalent, Atom, Clause, Condition, Connective, CostModel, DecisionList, Sense};
use declist::search::best_clause;
use declist::{Covariates, PseudoOutcomeMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct ClauseInstance {
    pub covariates: Covariates,
    pub grid: CutoffGrid,
    pub xi: PseudoOutcomeMatrix,
    pub active: Vec<usize>,
    pub min_region: usize,
}

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Small instance with integer data so that every sum is exact.
pub fn clause_instance(seed: u64) -> ClauseInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=40);
    let p = rng.random_range(1..=3);
    let m = rng.random_range(1..=3);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0..6) as f64).collect())
        .collect();
    let cutoffs = (0..p)
        .map(|_| {
            let s = rng.random_range(1..=3);
            (0..s).map(|_| rng.random_range(0..6) as f64).collect()
        })
        .collect();
    let xi = (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(-5..=5) as f64).collect())
        .collect();
    let active = (0..n).filter(|_| rng.random_bool(0.8)).collect();
    ClauseInstance {
        covariates: Covariates::from_rows(names(p), rows).unwrap(),
        grid: CutoffGrid::from_cutoffs(cutoffs).unwrap(),
        xi: PseudoOutcomeMatrix::from_rows(xi),
        active,
        min_region: rng.random_range(0..=3),
    }
}

/// Every legal condition whose thresholds lie on the grid.
pub fn grid_conditions(grid: &CutoffGrid) -> Vec<Condition> {
    let mut out = Vec::new();
    for j in 0..grid.p() {
        for &t in grid.cutoffs(j) {
            out.push(Condition::Single(Atom::le(j, t)));
            out.push(Condition::Single(Atom::gt(j, t)));
        }
    }
    for k in 0..grid.p() {
        for l in k + 1..grid.p() {
            for &t1 in grid.cutoffs(k) {
                for &t2 in grid.cutoffs(l) {
                    for op in [Connective::And, Connective::Or] {
                        for s1 in [Sense::Le, Sense::Gt] {
                            for s2 in [Sense::Le, Sense::Gt] {
                                let a = Atom { var: k, threshold: t1, sense: s1 };
                                let b = Atom { var: l, threshold: t2, sense: s2 };
                                out.push(Condition::pair(op, a, b).unwrap());
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `(score, caught)` of a fixed clause over the active subjects, or `None` if
/// either side falls below the region floor.
pub fn clause_score(inst: &ClauseInstance, cond: &Condition, a: usize, alt: usize) -> Option<(f64, usize)> {
    let floor = inst.min_region.max(1);
    let caught = inst
        .active
        .iter()
        .filter(|&&i| cond.holds(inst.covariates.row(i)))
        .count();
    if caught < floor || inst.active.len() - caught < floor {
        return None;
    }
    let score = inst
        .active
        .iter()
        .map(|&i| {
            let r = if cond.holds(inst.covariates.row(i)) { a } else { alt };
            inst.xi.get(i, r)
        })
        .sum();
    Some((score, caught))
}

/// Brute-force maximum over conditions and action pairs.
pub fn exhaustive_best_score(inst: &ClauseInstance) -> Option<f64> {
    let m = inst.xi.m();
    let mut best: Option<f64> = None;
    for cond in grid_conditions(&inst.grid) {
        for a in 0..m {
            for alt in 0..m {
                if let Some((s, _)) = clause_score(inst, &cond, a, alt) {
                    best = Some(best.map_or(s, |b: f64| b.max(s)));
                }
            }
        }
    }
    best
}

/// Compares `best_clause` with the brute-force search; returns a failure description.
pub fn check_best_clause(inst: &ClauseInstance) -> Result<(), String> {
    let bins = bin(&inst.covariates, &inst.grid).unwrap();
    let got = best_clause(&inst.active, &inst.xi, &bins, &inst.grid, inst.min_region);
    let want = exhaustive_best_score(inst);
    match (got, want) {
        (None, None) => Ok(()),
        (Some(c), Some(w)) => {
            let (direct, caught) = clause_score(inst, &c.condition, c.action, c.alternative)
                .ok_or_else(|| format!("returned clause violates the region floor: {c:?}"))?;
            if c.score != w || direct != w || caught != c.caught {
                return Err(format!(
                    "score {} (direct {direct}, caught {caught}/{}) vs exhaustive {w}",
                    c.score, c.caught
                ));
            }
            Ok(())
        }
        (g, w) => Err(format!("best_clause {g:?} vs exhaustive {w:?}")),
    }
}

pub struct MinCostInstance {
    pub covariates: Covariates,
    pub pi: DecisionList,
    pub costs: CostModel,
}

fn random_atom(rng: &mut ChaCha8Rng, p: usize) -> Atom {
    let var = rng.random_range(0..p);
    let t = rng.random_range(0..5) as f64 + 0.5;
    if rng.random_bool(0.5) {
        Atom::le(var, t)
    } else {
        Atom::gt(var, t)
    }
}

fn random_condition(rng: &mut ChaCha8Rng, p: usize) -> Condition {
    let a = random_atom(rng, p);
    if p > 1 && rng.random_bool(0.6) {
        let mut b = random_atom(rng, p);
        while b.var == a.var {
            b = random_atom(rng, p);
        }
        let op = if rng.random_bool(0.5) { Connective::And } else { Connective::Or };
        Condition::pair(op, a, b).unwrap()
    } else {
        Condition::Single(a)
    }
}

/// Random two-clause list over up to three covariates with integer costs.
pub fn mincost_instance(seed: u64) -> MinCostInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=30);
    let p = rng.random_range(1..=3);
    let m = rng.random_range(2..=3);
    let rows = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0..6) as f64).collect())
        .collect();
    let clauses = (0..2)
        .map(|_| Clause {
            condition: random_condition(&mut rng, p),
            action: rng.random_range(0..m),
        })
        .collect();
    let pi = DecisionList {
        clauses,
        default: rng.random_range(0..m),
    };
    let costs = CostModel::new((0..p).map(|_| rng.random_range(1..=4) as f64).collect()).unwrap();
    MinCostInstance {
        covariates: Covariates::from_rows(names(p), rows).unwrap(),
        pi,
        costs,
    }
}

/// Cheapest sample-equivalent list of at most `l_max` clauses built from the
/// pool conditions, by direct enumeration. Actions are read off the target.
pub fn exhaustive_min_cost(inst: &MinCostInstance, l_max: usize) -> f64 {
    let x = &inst.covariates;
    let target = inst.pi.recommend(x);
    let conditions = candidate_conditions(&atom_pool(&inst.pi));
    let arms = target.iter().copied().max().unwrap_or(0).max(inst.pi.max_arm()) + 1;
    let mut best = f64::INFINITY;
    let mut stack: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some(seq) = stack.pop() {
        let mut clauses = Vec::new();
        for &k in &seq {
            let earlier: Vec<Condition> = clauses.iter().map(|c: &Clause| c.condition).collect();
            let fired = (0..x.n()).find(|&i| conditions[k].holds(x.row(i)) && !earlier.iter().any(|c| c.holds(x.row(i))));
            clauses.push(Clause {
                condition: conditions[k],
                action: fired.map_or(0, |i| target[i]),
            });
        }
        for default in 0..arms {
            let cand = DecisionList {
                clauses: clauses.clone(),
                default,
            };
            if sample_equivalent(&cand, &inst.pi, x) {
                best = best.min(inst.costs.empirical_cost(&cand, x));
            }
        }
        if seq.len() < l_max {
            for k in 0..conditions.len() {
                let mut next = seq.clone();
                next.push(k);
                stack.push(next);
            }
        }
    }
    best
}

pub fn check_min_cost(inst: &MinCostInstance) -> Result<(), String> {
    let l_max = 2;
    let got = min_cost_equivalent(&inst.pi, &inst.covariates, &inst.costs, MinCostOptions::new(l_max));
    if !sample_equivalent(&got.list, &inst.pi, &inst.covariates) {
        return Err(format!("result {:?} is not equivalent", got.list));
    }
    let direct = inst.costs.empirical_cost(&got.list, &inst.covariates);
    let want = exhaustive_min_cost(inst, l_max);
    if (got.cost - want).abs() > 1e-12 || (direct - got.cost).abs() > 1e-12 {
        return Err(format!("cost {} (direct {direct}) vs exhaustive {want}", got.cost));
    }
    Ok(())
}

/// Negation and form algebra at random points, including exact threshold hits.
pub fn check_negation(seed: u64, points: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for form in 1..=10u8 {
        for _ in 0..points {
            let (t1, t2) = (rng.random_range(-2.0..2.0_f64), rng.random_range(-2.0..2.0_f64));
            let cond = condition_of_form(form, t1, t2);
            let neg = cond.negate();
            if cond.form() != form || neg.form() != 11 - form || neg.negate() != cond {
                return Err(format!("form algebra broken for {cond:?}"));
            }
            let pick = |rng: &mut ChaCha8Rng, t: f64| match rng.random_range(0..4) {
                0 => t,
                _ => rng.random_range(-3.0..3.0),
            };
            let x = [pick(&mut rng, t1), pick(&mut rng, t2)];
            if neg.holds(&x) == cond.holds(&x) {
                return Err(format!("{cond:?} and its negation agree at {x:?}"));
            }
        }
    }
    Ok(())
}

pub fn condition_of_form(form: u8, t1: f64, t2: f64) -> Condition {
    match form {
        1 => Condition::Single(Atom::le(0, t1)),
        10 => Condition::Single(Atom::gt(0, t1)),
        f => {
            let op = if f <= 5 { Connective::And } else { Connective::Or };
            let code = if f <= 5 { f - 2 } else { f - 6 };
            let sense = |bit| if code & bit == 0 { Sense::Le } else { Sense::Gt };
            Condition::pair(
                op,
                Atom { var: 0, threshold: t1, sense: sense(2) },
                Atom { var: 1, threshold: t2, sense: sense(1) },
            )
            .unwrap()
        }
    }
}

/// `x <= t_c` iff the bin code is at most `c`, for every cutoff and value.
pub fn check_binning(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=50);
    let p = rng.random_range(1..=4);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| (rng.random_range(-20..20) as f64) / 4.0).collect())
        .collect();
    let cutoffs: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..rng.random_range(1..=6)).map(|_| (rng.random_range(-20..20) as f64) / 4.0).collect())
        .collect();
    let x = Covariates::from_rows(names(p), rows).unwrap();
    let grid = CutoffGrid::from_cutoffs(cutoffs).unwrap();
    let bins = bin(&x, &grid).unwrap();
    for i in 0..n {
        for j in 0..p {
            let u = bins.get(i, j);
            let v = x.get(i, j);
            if u != bin_value(grid.cutoffs(j), v) {
                return Err(format!("row {i} col {j}: stored code differs"));
            }
            for (c, &t) in grid.cutoffs(j).iter().enumerate() {
                if (v <= t) != (u <= c) {
                    return Err(format!("row {i} col {j}: x={v} t={t} code {u} cutoff index {c}"));
                }
            }
        }
    }
    Ok(())
}
