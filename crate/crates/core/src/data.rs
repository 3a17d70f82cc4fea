//! Dataset ingestion, cutoff grids and covariate binning.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

impl std::str::FromStr for OutcomeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" | "cont" => Ok(OutcomeKind::Continuous),
            "binary" | "bin" => Ok(OutcomeKind::Binary),
            other => Err(Error::InvalidConfig(format!("unknown outcome kind `{other}`"))),
        }
    }
}

/// Row-major covariate matrix with column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Covariates<T: Scalar = f64> {
    names: Vec<String>,
    n: usize,
    p: usize,
    values: Vec<T>,
}

impl<T: Scalar> Covariates<T> {
    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<T>>) -> Result<Self> {
        let p = names.len();
        if p == 0 {
            return Err(Error::InvalidData("at least one covariate is required".into()));
        }
        let n = rows.len();
        let mut values = Vec::with_capacity(n * p);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidData(format!(
                    "row {} has {} covariates, expected {p}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::MissingValue {
                        row: i + 1,
                        col: names[j].clone(),
                    });
                }
            }
            values.extend(row);
        }
        Ok(Covariates { names, n, p, values })
    }

    /// Builds a matrix from a flat row-major buffer.
    pub fn from_flat(names: Vec<String>, n: usize, values: Vec<T>) -> Result<Self> {
        let p = names.len();
        if p == 0 || values.len() != n * p {
            return Err(Error::InvalidData(format!(
                "flat buffer of length {} does not match {n}x{p}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                row: pos / p + 1,
                col: names[pos % p].clone(),
            });
        }
        Ok(Covariates { names, n, p, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.p + j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = T> + '_ {
        self.values[j..].iter().step_by(self.p).copied()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.values.chunks_exact(self.p)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    /// Returns a copy restricted to `rows` (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Covariates {
            names: self.names.clone(),
            n: rows.len(),
            p: self.p,
            values,
        }
    }
}

/// Observed data: covariates, treatment arms and outcomes.
///
/// Arms are stored zero-based (`0..m`); `labels[a]` is the original
/// treatment label of arm `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<T: Scalar = f64> {
    covariates: Covariates<T>,
    arms: Vec<usize>,
    labels: Vec<String>,
    outcomes: Vec<T>,
    outcome_kind: OutcomeKind,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        covariates: Covariates<T>,
        arms: Vec<usize>,
        labels: Vec<String>,
        outcomes: Vec<T>,
        outcome_kind: OutcomeKind,
    ) -> Result<Self> {
        let n = covariates.n();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if arms.len() != n || outcomes.len() != n {
            return Err(Error::InvalidData(format!(
                "length mismatch: {n} covariate rows, {} treatments, {} outcomes",
                arms.len(),
                outcomes.len()
            )));
        }
        let m = labels.len();
        if m < 2 {
            return Err(Error::InvalidData("at least two treatments are required".into()));
        }
        let mut counts = vec![0usize; m];
        for (i, &a) in arms.iter().enumerate() {
            if a >= m {
                return Err(Error::InvalidData(format!("row {}: treatment index {a} out of range", i + 1)));
            }
            counts[a] += 1;
        }
        if let Some(a) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidData(format!("treatment `{}` has no subjects", labels[a])));
        }
        for (i, y) in outcomes.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::MissingValue {
                    row: i + 1,
                    col: "outcome".into(),
                });
            }
            if outcome_kind == OutcomeKind::Binary && *y != T::zero() && *y != T::one() {
                return Err(Error::InvalidData(format!("row {}: binary outcome must be 0 or 1", i + 1)));
            }
        }
        Ok(Dataset {
            covariates,
            arms,
            labels,
            outcomes,
            outcome_kind,
        })
    }

    /// Convenience constructor with labels `"1".."m"`.
    pub fn with_numbered_arms(
        covariates: Covariates<T>,
        arms: Vec<usize>,
        m: usize,
        outcomes: Vec<T>,
        outcome_kind: OutcomeKind,
    ) -> Result<Self> {
        let labels = (1..=m).map(|a| a.to_string()).collect();
        Self::new(covariates, arms, labels, outcomes, outcome_kind)
    }

    pub fn n(&self) -> usize {
        self.covariates.n()
    }

    pub fn p(&self) -> usize {
        self.covariates.p()
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn covariates(&self) -> &Covariates<T> {
        &self.covariates
    }

    pub fn arms(&self) -> &[usize] {
        &self.arms
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn outcomes(&self) -> &[T] {
        &self.outcomes
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m()];
        for &a in &self.arms {
            counts[a] += 1;
        }
        counts
    }

    /// Returns a copy whose outcomes are replaced (kind and arms unchanged).
    pub fn with_outcomes(&self, outcomes: Vec<T>) -> Result<Self> {
        Self::new(
            self.covariates.clone(),
            self.arms.clone(),
            self.labels.clone(),
            outcomes,
            self.outcome_kind,
        )
    }

    /// Returns a copy with extra covariate columns appended on the right.
    pub fn with_extra_covariates(&self, names: &[String], columns: &[Vec<T>]) -> Result<Self> {
        let n = self.n();
        if names.len() != columns.len() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidData("extra covariate columns have the wrong shape".into()));
        }
        let mut all_names = self.covariates.names().to_vec();
        all_names.extend_from_slice(names);
        let rows = (0..n)
            .map(|i| {
                let mut row = self.covariates.row(i).to_vec();
                row.extend(columns.iter().map(|c| c[i]));
                row
            })
            .collect();
        Self::new(
            Covariates::from_rows(all_names, rows)?,
            self.arms.clone(),
            self.labels.clone(),
            self.outcomes.clone(),
            self.outcome_kind,
        )
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub treatment_col: String,
    pub outcome_col: String,
    /// Covariate columns; `None` means every remaining column.
    pub covariates: Option<Vec<String>>,
    pub outcome_kind: OutcomeKind,
    /// Known treatment levels (scoring mode). Unseen levels are rejected.
    pub levels: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn new(treatment_col: &str, outcome_col: &str, outcome_kind: OutcomeKind) -> Self {
        CsvSchema {
            treatment_col: treatment_col.to_string(),
            outcome_col: outcome_col.to_string(),
            covariates: None,
            outcome_kind,
            levels: None,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

fn parse_cell<T: Scalar>(cell: &str, row: usize, col: &str) -> Result<T> {
    if is_missing(cell) {
        return Err(Error::MissingValue { row, col: col.to_string() });
    }
    cell.trim().parse::<T>().map_err(|_| Error::NonNumeric {
        row,
        col: col.to_string(),
        value: cell.to_string(),
    })
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

/// Loads a dataset from a CSV file with a header row.
///
/// Treatment labels are re-encoded to arms `0..m` in order of first
/// appearance unless `schema.levels` fixes the order.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    read_dataset(&mut reader, schema)
}

pub fn read_dataset<T: Scalar, R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    schema: &CsvSchema,
) -> Result<Dataset<T>> {
    let headers = reader.headers()?.clone();
    let t_idx = column_index(&headers, &schema.treatment_col)?;
    let y_idx = column_index(&headers, &schema.outcome_col)?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != t_idx && *k != y_idx)
            .map(|(_, h)| h.trim().to_string())
            .collect(),
    };
    let cov_idx = cov_names
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut labels: Vec<String> = schema.levels.clone().unwrap_or_default();
    let fixed_levels = schema.levels.is_some();
    let mut level_index: HashMap<String, usize> =
        labels.iter().enumerate().map(|(k, l)| (l.clone(), k)).collect();

    let mut rows = Vec::new();
    let mut arms = Vec::new();
    let mut outcomes = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        let label = record.get(t_idx).unwrap_or("").trim();
        if is_missing(label) {
            return Err(Error::MissingValue {
                row: row_no,
                col: schema.treatment_col.clone(),
            });
        }
        let arm = match level_index.get(label) {
            Some(&a) => a,
            None if fixed_levels => return Err(Error::UnknownTreatment(label.to_string())),
            None => {
                labels.push(label.to_string());
                level_index.insert(label.to_string(), labels.len() - 1);
                labels.len() - 1
            }
        };
        let y: T = parse_cell(record.get(y_idx).unwrap_or(""), row_no, &schema.outcome_col)?;
        let row = cov_idx
            .iter()
            .zip(&cov_names)
            .map(|(&k, name)| parse_cell(record.get(k).unwrap_or(""), row_no, name))
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
        arms.push(arm);
        outcomes.push(y);
    }
    Dataset::new(
        Covariates::from_rows(cov_names, rows)?,
        arms,
        labels,
        outcomes,
        schema.outcome_kind,
    )
}

/// Loads only the named covariate columns (used when scoring new subjects).
pub fn load_covariates_csv<T: Scalar>(path: impl AsRef<Path>, names: &[String]) -> Result<Covariates<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = names
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx
            .iter()
            .zip(names)
            .map(|(&k, name)| parse_cell(record.get(k).unwrap_or(""), r + 1, name))
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    Covariates::from_rows(names.to_vec(), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "")]
pub enum GridPolicy<T: Scalar = f64> {
    /// `k` empirical quantiles at probabilities `1/(k+1), ..., k/(k+1)`.
    Percentiles { k: usize },
    /// Cutoffs supplied per covariate.
    Explicit { cutoffs: Vec<Vec<T>> },
}

impl<T: Scalar> Default for GridPolicy<T> {
    fn default() -> Self {
        GridPolicy::Percentiles { k: 9 }
    }
}

impl<T: Scalar> GridPolicy<T> {
    /// Parses `percentiles:k` or `file:<path>` (one comma-separated line per covariate).
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(k) = spec.strip_prefix("percentiles:") {
            let k = k
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad percentile count in `{spec}`")))?;
            return Ok(GridPolicy::Percentiles { k });
        }
        if let Some(path) = spec.strip_prefix("file:") {
            let text = std::fs::read_to_string(path.trim())?;
            return Self::parse_explicit(&text);
        }
        Err(Error::InvalidConfig(format!(
            "cutoff policy must be `percentiles:k` or `file:<path>`, got `{spec}`"
        )))
    }

    pub fn parse_explicit(text: &str) -> Result<Self> {
        let cutoffs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(k, line)| {
                line.split(',')
                    .map(|c| {
                        c.trim().parse::<T>().map_err(|_| {
                            Error::InvalidConfig(format!("cutoff file line {}: bad value `{c}`", k + 1))
                        })
                    })
                    .collect::<Result<Vec<T>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridPolicy::Explicit { cutoffs })
    }
}

/// Candidate cutoffs per covariate, each strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CutoffGrid<T: Scalar = f64> {
    cutoffs: Vec<Vec<T>>,
    warnings: Vec<String>,
}

impl<T: Scalar> CutoffGrid<T> {
    /// Wraps cutoffs directly; each vector is sorted and deduplicated.
    pub fn from_cutoffs(mut cutoffs: Vec<Vec<T>>) -> Result<Self> {
        for (j, c) in cutoffs.iter_mut().enumerate() {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("covariate {j}: non-finite cutoff")));
            }
            c.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            c.dedup();
            if c.is_empty() {
                return Err(Error::InvalidConfig(format!("covariate {j}: empty cutoff set")));
            }
        }
        Ok(CutoffGrid {
            cutoffs,
            warnings: Vec::new(),
        })
    }

    pub fn p(&self) -> usize {
        self.cutoffs.len()
    }

    pub fn cutoffs(&self, j: usize) -> &[T] {
        &self.cutoffs[j]
    }

    pub fn len(&self, j: usize) -> usize {
        self.cutoffs[j].len()
    }

    pub fn max_len(&self) -> usize {
        self.cutoffs.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], prob: f64) -> T {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = T::from_f64_lossy(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn build_grid<T: Scalar>(data: &Covariates<T>, policy: &GridPolicy<T>) -> Result<CutoffGrid<T>> {
    let p = data.p();
    let mut warnings = Vec::new();
    let mut cutoffs = Vec::with_capacity(p);
    match policy {
        GridPolicy::Percentiles { k } => {
            if *k == 0 {
                return Err(Error::InvalidConfig("percentile count must be at least 1".into()));
            }
            for j in 0..p {
                let mut col: Vec<T> = data.column(j).collect();
                col.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                let mut cuts: Vec<T> = (1..=*k)
                    .map(|q| quantile_sorted(&col, q as f64 / (*k + 1) as f64))
                    .collect();
                cuts.dedup();
                if col.first() == col.last() {
                    warnings.push(format!(
                        "covariate `{}` is constant; using the single cutoff {}",
                        data.names()[j],
                        col[0]
                    ));
                }
                cutoffs.push(cuts);
            }
        }
        GridPolicy::Explicit { cutoffs: given } => {
            if given.len() != p {
                return Err(Error::InvalidConfig(format!(
                    "cutoff file lists {} covariates, data has {p}",
                    given.len()
                )));
            }
            for (j, cuts) in given.iter().enumerate() {
                let (lo, hi) = data.column(j).fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
                let mut kept: Vec<T> = cuts.iter().copied().filter(|&c| c >= lo && c <= hi).collect();
                if kept.len() < cuts.len() {
                    warnings.push(format!(
                        "covariate `{}`: dropped {} cutoffs outside the observed range",
                        data.names()[j],
                        cuts.len() - kept.len()
                    ));
                }
                kept.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                kept.dedup();
                if kept.is_empty() {
                    return Err(Error::InvalidConfig(format!(
                        "covariate `{}`: no cutoff lies within the observed range",
                        data.names()[j]
                    )));
                }
                cutoffs.push(kept);
            }
        }
    }
    Ok(CutoffGrid { cutoffs, warnings })
}

/// Interval codes `b_ij`: `b = k` iff `x_ij` lies in the `k`-th of the
/// right-closed intervals `(-inf, t_1], (t_1, t_2], ..., (t_s, inf)`.
///
/// With zero-based cutoff index `c`, the atom `x_j <= t_c` holds iff `b <= c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinIndex {
    n: usize,
    p: usize,
    codes: Vec<u32>,
}

impl BinIndex {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.codes[i * self.p + j] as usize
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.codes[i * self.p..(i + 1) * self.p]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

#[inline]
pub fn bin_value<T: Scalar>(cuts: &[T], x: T) -> usize {
    cuts.partition_point(|&t| t < x)
}

pub fn bin<T: Scalar>(data: &Covariates<T>, grid: &CutoffGrid<T>) -> Result<BinIndex> {
    if grid.p() != data.p() {
        return Err(Error::InvalidConfig(format!(
            "grid has {} covariates, data has {}",
            grid.p(),
            data.p()
        )));
    }
    let codes = data
        .rows()
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &x)| bin_value(grid.cutoffs(j), x) as u32)
        })
        .collect();
    Ok(BinIndex {
        n: data.n(),
        p: data.p(),
        codes,
    })
}
