//! Decision lists: atoms, the ten condition forms, evaluation, negation,
//! cost, and the text/JSON formats.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
}

impl Sense {
    pub fn flip(self) -> Self {
        match self {
            Sense::Le => Sense::Gt,
            Sense::Gt => Sense::Le,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Gt => ">",
        }
    }
}

/// `x_var <= threshold` or `x_var > threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Atom<T: Scalar = f64> {
    pub var: usize,
    pub threshold: T,
    pub sense: Sense,
}

impl<T: Scalar> Atom<T> {
    pub fn le(var: usize, threshold: T) -> Self {
        Atom { var, threshold, sense: Sense::Le }
    }

    pub fn gt(var: usize, threshold: T) -> Self {
        Atom { var, threshold, sense: Sense::Gt }
    }

    #[inline]
    pub fn holds(&self, x: &[T]) -> bool {
        let below = x[self.var] <= self.threshold;
        match self.sense {
            Sense::Le => below,
            Sense::Gt => !below,
        }
    }

    pub fn negate(&self) -> Self {
        Atom {
            sense: self.sense.flip(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connective {
    And,
    Or,
}

/// One of the ten legal condition forms.
///
/// Pair conditions always hold their atoms with `first.var < second.var`;
/// construct them through [`Condition::pair`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", rename_all = "snake_case")]
pub enum Condition<T: Scalar = f64> {
    Single(Atom<T>),
    Pair {
        op: Connective,
        first: Atom<T>,
        second: Atom<T>,
    },
}

impl<T: Scalar> Condition<T> {
    pub fn single(atom: Atom<T>) -> Self {
        Condition::Single(atom)
    }

    /// Joins two atoms on distinct covariates, ordering them by covariate index.
    pub fn pair(op: Connective, a: Atom<T>, b: Atom<T>) -> Result<Self> {
        if a.var == b.var {
            return Err(Error::InvalidConfig(format!(
                "both atoms of a paired condition use covariate {}",
                a.var
            )));
        }
        let (first, second) = if a.var < b.var { (a, b) } else { (b, a) };
        Ok(Condition::Pair { op, first, second })
    }

    /// Form tag 1..=10 in the canonical numbering.
    pub fn form(&self) -> u8 {
        use Sense::*;
        match *self {
            Condition::Single(a) => match a.sense {
                Le => 1,
                Gt => 10,
            },
            Condition::Pair { op, first, second } => {
                let base = match (first.sense, second.sense) {
                    (Le, Le) => 0,
                    (Le, Gt) => 1,
                    (Gt, Le) => 2,
                    (Gt, Gt) => 3,
                };
                match op {
                    Connective::And => 2 + base,
                    Connective::Or => 6 + base,
                }
            }
        }
    }

    #[inline]
    pub fn holds(&self, x: &[T]) -> bool {
        match self {
            Condition::Single(a) => a.holds(x),
            Condition::Pair { op: Connective::And, first, second } => first.holds(x) && second.holds(x),
            Condition::Pair { op: Connective::Or, first, second } => first.holds(x) || second.holds(x),
        }
    }

    /// Complement condition (De Morgan on pairs).
    pub fn negate(&self) -> Self {
        match *self {
            Condition::Single(a) => Condition::Single(a.negate()),
            Condition::Pair { op, first, second } => Condition::Pair {
                op: match op {
                    Connective::And => Connective::Or,
                    Connective::Or => Connective::And,
                },
                first: first.negate(),
                second: second.negate(),
            },
        }
    }

    pub fn atoms(&self) -> Vec<Atom<T>> {
        match *self {
            Condition::Single(a) => vec![a],
            Condition::Pair { first, second, .. } => vec![first, second],
        }
    }

    pub fn vars(&self) -> Vec<usize> {
        self.atoms().iter().map(|a| a.var).collect()
    }

    fn connective(&self) -> Option<Connective> {
        match self {
            Condition::Single(_) => None,
            Condition::Pair { op, .. } => Some(*op),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Clause<T: Scalar = f64> {
    pub condition: Condition<T>,
    pub action: usize,
}

/// `{(c_1, a_1), ..., (c_L, a_L), a_0}` with zero-based arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DecisionList<T: Scalar = f64> {
    pub clauses: Vec<Clause<T>>,
    pub default: usize,
}

impl<T: Scalar> DecisionList<T> {
    pub fn constant(action: usize) -> Self {
        DecisionList {
            clauses: Vec::new(),
            default: action,
        }
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// Index of the first clause whose condition holds, or `None` for the default.
    #[inline]
    pub fn firing_clause(&self, x: &[T]) -> Option<usize> {
        self.clauses.iter().position(|c| c.condition.holds(x))
    }

    #[inline]
    pub fn evaluate(&self, x: &[T]) -> usize {
        match self.firing_clause(x) {
            Some(l) => self.clauses[l].action,
            None => self.default,
        }
    }

    pub fn recommend(&self, data: &Covariates<T>) -> Vec<usize> {
        data.rows().map(|x| self.evaluate(x)).collect()
    }

    /// Region label per row: `l` for clause `l`, `L` for the default region.
    pub fn regions(&self, data: &Covariates<T>) -> Vec<usize> {
        data.rows()
            .map(|x| self.firing_clause(x).unwrap_or(self.clauses.len()))
            .collect()
    }

    /// Appends a clause, replacing the default.
    pub fn extend(&self, condition: Condition<T>, action: usize, default: usize) -> Self {
        let mut clauses = self.clauses.clone();
        clauses.push(Clause { condition, action });
        DecisionList { clauses, default }
    }

    /// Sorted distinct covariates used anywhere in the list.
    pub fn covariates_used(&self) -> Vec<usize> {
        let mut vars: Vec<usize> = self.clauses.iter().flat_map(|c| c.condition.vars()).collect();
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    pub fn max_arm(&self) -> usize {
        self.clauses.iter().map(|c| c.action).fold(self.default, usize::max)
    }

    pub fn max_var(&self) -> Option<usize> {
        self.covariates_used().last().copied()
    }
}

/// Per-covariate measurement costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CostModel<T: Scalar = f64> {
    costs: Vec<T>,
}

impl<T: Scalar> CostModel<T> {
    pub fn uniform(p: usize) -> Self {
        CostModel { costs: vec![T::one(); p] }
    }

    pub fn new(costs: Vec<T>) -> Result<Self> {
        if costs.iter().any(|c| !c.is_finite() || *c < T::zero()) {
            return Err(Error::InvalidConfig("covariate costs must be finite and nonnegative".into()));
        }
        Ok(CostModel { costs })
    }

    /// Parses `covariate,cost` lines; unlisted covariates cost 1.
    pub fn parse(text: &str, names: &[String]) -> Result<Self> {
        let mut costs = vec![T::one(); names.len()];
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, cost) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::InvalidConfig(format!("cost file line {}: expected `covariate,cost`", k + 1)))?;
            let j = names
                .iter()
                .position(|c| c == name.trim())
                .ok_or_else(|| Error::MissingColumn(name.trim().to_string()))?;
            costs[j] = cost
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("cost file line {}: bad cost `{cost}`", k + 1)))?;
        }
        Self::new(costs)
    }

    pub fn cost(&self, j: usize) -> T {
        self.costs[j]
    }

    pub fn costs(&self) -> &[T] {
        &self.costs
    }

    /// `N_0, ..., N_L`: cost of the distinct covariates in the first `l` clauses.
    pub fn level_costs(&self, list: &DecisionList<T>) -> Vec<T> {
        let mut seen: Vec<usize> = Vec::new();
        let mut acc = T::zero();
        let mut out = Vec::with_capacity(list.len() + 1);
        out.push(acc);
        for clause in &list.clauses {
            for j in clause.condition.vars() {
                if !seen.contains(&j) {
                    seen.push(j);
                    acc = acc + self.costs[j];
                }
            }
            out.push(acc);
        }
        out
    }

    /// Empirical cost: subjects caught by clause `l` pay `N_l`, the rest pay `N_L`.
    pub fn empirical_cost(&self, list: &DecisionList<T>, data: &Covariates<T>) -> T {
        if data.n() == 0 {
            return T::zero();
        }
        let levels = self.level_costs(list);
        let total: T = data
            .rows()
            .map(|x| match list.firing_clause(x) {
                Some(l) => levels[l + 1],
                None => levels[list.len()],
            })
            .sum();
        total / T::from_usize_lossy(data.n())
    }
}

/// Covariates measured to reach a decision for `x`, in order of first use.
pub fn covariates_needed<T: Scalar>(list: &DecisionList<T>, x: &[T]) -> Vec<usize> {
    let last = list.firing_clause(x).map_or(list.len(), |l| l + 1);
    let mut vars = Vec::new();
    for clause in &list.clauses[..last] {
        for j in clause.condition.vars() {
            if !vars.contains(&j) {
                vars.push(j);
            }
        }
    }
    vars
}

/// True iff both lists recommend the same arm for every row.
pub fn sample_equivalent<T: Scalar>(a: &DecisionList<T>, b: &DecisionList<T>, data: &Covariates<T>) -> bool {
    data.rows().all(|x| a.evaluate(x) == b.evaluate(x))
}

fn render_condition<T: Scalar>(c: &Condition<T>, names: &[String]) -> String {
    let atom = |a: &Atom<T>| format!("{} {} {}", names[a.var], a.sense.symbol(), a.threshold);
    match c {
        Condition::Single(a) => atom(a),
        Condition::Pair { op, first, second } => {
            let word = match op {
                Connective::And => "and",
                Connective::Or => "or",
            };
            format!("{} {word} {}", atom(first), atom(second))
        }
    }
}

/// Human-readable if / else-if / else text.
pub fn render<T: Scalar>(list: &DecisionList<T>, names: &[String], labels: &[String]) -> String {
    if list.is_empty() {
        return format!("Everyone {}.", labels[list.default]);
    }
    let mut out = String::new();
    for (l, clause) in list.clauses.iter().enumerate() {
        let lead = if l == 0 { "If" } else { "else if" };
        let _ = writeln!(
            out,
            "{lead} {} then {};",
            render_condition(&clause.condition, names),
            labels[clause.action]
        );
    }
    let _ = write!(out, "else {}.", labels[list.default]);
    out
}

fn lookup(items: &[String], key: &str, what: &str) -> Result<usize> {
    items
        .iter()
        .position(|s| s == key)
        .ok_or_else(|| Error::Parse(format!("unknown {what} `{key}`")))
}

fn parse_atom<T: Scalar>(text: &str, names: &[String]) -> Result<Atom<T>> {
    let (lhs, sense, rhs) = if let Some((l, r)) = text.rsplit_once(" <= ") {
        (l, Sense::Le, r)
    } else if let Some((l, r)) = text.rsplit_once(" > ") {
        (l, Sense::Gt, r)
    } else {
        return Err(Error::Parse(format!("expected `<col> <= <t>` or `<col> > <t>`, got `{text}`")));
    };
    let threshold = rhs
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("bad threshold `{rhs}`")))?;
    Ok(Atom {
        var: lookup(names, lhs.trim(), "covariate")?,
        threshold,
        sense,
    })
}

fn parse_condition<T: Scalar>(text: &str, names: &[String]) -> Result<Condition<T>> {
    for (word, op) in [(" and ", Connective::And), (" or ", Connective::Or)] {
        if let Some((a, b)) = text.split_once(word) {
            return Condition::pair(op, parse_atom(a, names)?, parse_atom(b, names)?)
                .map_err(|e| Error::Parse(e.to_string()));
        }
    }
    Ok(Condition::Single(parse_atom(text, names)?))
}

/// Inverse of [`render`].
pub fn parse<T: Scalar>(text: &str, names: &[String], labels: &[String]) -> Result<DecisionList<T>> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix("Everyone ") {
        let label = rest.strip_suffix('.').unwrap_or(rest).trim();
        return Ok(DecisionList::constant(lookup(labels, label, "treatment")?));
    }
    let mut clauses = Vec::new();
    let mut default = None;
    for (k, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        if default.is_some() {
            return Err(Error::Parse("text after the final `else`".into()));
        }
        let lead = if k == 0 { "If " } else { "else if " };
        if let Some(body) = line.strip_prefix(lead) {
            let body = body
                .strip_suffix(';')
                .ok_or_else(|| Error::Parse(format!("clause must end with `;`: `{line}`")))?;
            let (cond, label) = body
                .rsplit_once(" then ")
                .ok_or_else(|| Error::Parse(format!("missing `then`: `{line}`")))?;
            clauses.push(Clause {
                condition: parse_condition(cond.trim(), names)?,
                action: lookup(labels, label.trim(), "treatment")?,
            });
        } else if let Some(body) = line.strip_prefix("else ") {
            let label = body
                .strip_suffix('.')
                .ok_or_else(|| Error::Parse(format!("final line must end with `.`: `{line}`")))?;
            default = Some(lookup(labels, label.trim(), "treatment")?);
        } else {
            return Err(Error::Parse(format!("unexpected line `{line}`")));
        }
    }
    let default = default.ok_or_else(|| Error::Parse("missing final `else` line".into()))?;
    Ok(DecisionList { clauses, default })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AtomDoc<T: Scalar = f64> {
    pub col: String,
    pub op: Sense,
    pub threshold: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ClauseDoc<T: Scalar = f64> {
    pub form: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connective: Option<Connective>,
    pub atoms: Vec<AtomDoc<T>>,
    pub action: String,
}

/// Serialized decision list, keyed by column names and original labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RegimeDoc<T: Scalar = f64> {
    pub clauses: Vec<ClauseDoc<T>>,
    pub default: String,
    /// All treatment labels in internal order.
    pub labels: Vec<String>,
    pub text: String,
}

impl<T: Scalar> RegimeDoc<T> {
    pub fn from_list(list: &DecisionList<T>, names: &[String], labels: &[String]) -> Self {
        let atom = |a: &Atom<T>| AtomDoc {
            col: names[a.var].clone(),
            op: a.sense,
            threshold: a.threshold,
        };
        RegimeDoc {
            clauses: list
                .clauses
                .iter()
                .map(|c| ClauseDoc {
                    form: c.condition.form(),
                    connective: c.condition.connective(),
                    atoms: c.condition.atoms().iter().map(atom).collect(),
                    action: labels[c.action].clone(),
                })
                .collect(),
            default: labels[list.default].clone(),
            labels: labels.to_vec(),
            text: render(list, names, labels),
        }
    }

    /// Resolves column names against `names`; the form tag is checked against the atoms.
    pub fn to_list(&self, names: &[String]) -> Result<DecisionList<T>> {
        let atom = |a: &AtomDoc<T>| -> Result<Atom<T>> {
            Ok(Atom {
                var: names
                    .iter()
                    .position(|c| *c == a.col)
                    .ok_or_else(|| Error::MissingColumn(a.col.clone()))?,
                threshold: a.threshold,
                sense: a.op,
            })
        };
        let mut clauses = Vec::with_capacity(self.clauses.len());
        for c in &self.clauses {
            let condition = match (c.atoms.as_slice(), c.form) {
                ([a], _) => Condition::Single(atom(a)?),
                ([a, b], form) => {
                    let op = c.connective.unwrap_or(if form <= 5 { Connective::And } else { Connective::Or });
                    Condition::pair(op, atom(a)?, atom(b)?)?
                }
                _ => return Err(Error::Parse("a clause needs one or two atoms".into())),
            };
            if condition.form() != c.form {
                return Err(Error::Parse(format!(
                    "clause declares form {} but its atoms give form {}",
                    c.form,
                    condition.form()
                )));
            }
            clauses.push(Clause {
                condition,
                action: lookup(&self.labels, &c.action, "treatment")?,
            });
        }
        Ok(DecisionList {
            clauses,
            default: lookup(&self.labels, &self.default, "treatment")?,
        })
    }
}
