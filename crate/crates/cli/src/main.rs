//! `declist` command-line tool.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use declist::costmin::{min_cost_equivalent, MinCostOptions};
use declist::data::load_covariates_csv;
use declist::inference::correct_value;
use declist::models::{FeatureMap, OutcomeSpec, PropensitySpec};
use declist::regime::{covariates_needed, RegimeDoc};
use declist::simlab::{alpha_sensitivity, consistency_probe, run_study, Setting, StudyConfig};
use declist::{
    fit, load_csv, BootstrapConfig, CostModel, CsvSchema, Dataset, Error, FitConfig, FitResult, GridPolicy,
    OutcomeKind, SearchConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

const TOOL: &str = "declist";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "declist", version, about = "Estimate, cost-minimize, evaluate and apply decision-list treatment regimes")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a regime from a CSV dataset.
    Fit(FitArgs),
    /// Estimate a regime and bootstrap a bias-corrected value with a prediction interval.
    Evaluate(EvaluateArgs),
    /// Replace a regime by its cheapest equivalent on a dataset.
    Mincost(MincostArgs),
    /// Run a Monte Carlo study on one of the built-in generative settings.
    Simulate(SimulateArgs),
    /// Apply a regime to every row of a CSV file.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    #[value(alias = "cont")]
    Continuous,
    #[value(alias = "bin")]
    Binary,
}

impl From<KindArg> for OutcomeKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Continuous => OutcomeKind::Continuous,
            KindArg::Binary => OutcomeKind::Binary,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PropensityArg {
    /// Sample proportion of each arm.
    Proportion,
    /// Multinomial logistic regression on all covariates.
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OutcomeModelArg {
    /// Per-arm GLM with a cross-validated LASSO penalty.
    Lasso,
    /// Unpenalized per-arm GLM.
    Glm,
}

#[derive(Args, Debug, Clone, Serialize)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Column holding the treatment label.
    #[arg(long)]
    treatment_col: String,
    /// Column holding the outcome.
    #[arg(long)]
    outcome_col: String,
    #[arg(long, value_enum, default_value = "continuous")]
    outcome_kind: KindArg,
    /// Covariate columns, comma-separated (default: every other column).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let schema = CsvSchema {
            covariates: self.covariates.clone(),
            ..CsvSchema::new(&self.treatment_col, &self.outcome_col, self.outcome_kind.into())
        };
        load_csv(&self.data, &schema).with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    /// Cutoff grid: `percentiles:k` or `file:<path>`.
    #[arg(long, default_value = "percentiles:9")]
    cutoffs: String,
    #[arg(long, value_enum, default_value = "proportion")]
    propensity: PropensityArg,
    #[arg(long, value_enum, default_value = "lasso")]
    outcome_model: OutcomeModelArg,
    /// Maximum number of clauses.
    #[arg(long, default_value_t = 10)]
    l_max: usize,
    /// Level of the one-sided test that stops list growth.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Smallest number of subjects on either side of a new clause.
    #[arg(long, default_value_t = 0)]
    min_region: usize,
    /// Keep the searched list instead of its cheapest equivalent.
    #[arg(long)]
    no_mincost: bool,
    /// Measurement costs, one `covariate,cost` line each (default: all 1).
    #[arg(long)]
    costs: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn config(&self, data: &Dataset) -> Result<FitConfig> {
        let mut cfg = FitConfig::standard(data, self.seed);
        cfg.grid = GridPolicy::parse(&self.cutoffs)?;
        cfg.propensity = match self.propensity {
            PropensityArg::Proportion => PropensitySpec::SampleProportion,
            PropensityArg::Logistic => PropensitySpec::MultinomialLogistic {
                features: FeatureMap::Linear,
            },
        };
        if self.outcome_model == OutcomeModelArg::Glm {
            cfg.outcome = OutcomeSpec::glm(data.outcome_kind());
        }
        cfg.search = SearchConfig {
            l_max: self.l_max,
            alpha: self.alpha,
            min_region: self.min_region,
        };
        cfg.mincost = !self.no_mincost;
        if let Some(path) = &self.costs {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.costs = Some(CostModel::parse(&text, data.covariates().names())?);
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct OutputArgs {
    /// JSON output path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the rendered if-then text here.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Write the search trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    /// Coverage level of the prediction interval.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Args, Debug, Serialize)]
struct MincostArgs {
    /// Regime JSON written by `fit`.
    #[arg(long)]
    regime: PathBuf,
    /// CSV holding the regime's covariates.
    #[arg(long)]
    data: PathBuf,
    /// Measurement costs, one `covariate,cost` line each (default: all 1).
    #[arg(long)]
    costs: Option<PathBuf>,
    /// Clause budget (default: the regime's length).
    #[arg(long)]
    l_max: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Generative setting, I to VII.
    #[arg(long)]
    setting: Setting,
    #[arg(long, value_enum, default_value = "continuous")]
    outcome: KindArg,
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Training size (default: the setting's standard size).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test-set size for true values.
    #[arg(long, default_value_t = 100_000)]
    test_n: usize,
    #[arg(long, default_value = "percentiles:9")]
    cutoffs: String,
    #[arg(long, default_value_t = 10)]
    l_max: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    min_region: usize,
    #[arg(long)]
    no_mincost: bool,
    /// Bootstrap replicates per study replicate; records interval coverage.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Compare regimes across these test levels instead of running a study.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["sizes", "bootstrap"])]
    alphas: Option<Vec<f64>>,
    /// Run the study at each training size, refining the grid with `n`.
    #[arg(long, value_delimiter = ',', conflicts_with = "bootstrap")]
    sizes: Option<Vec<usize>>,
    /// JSON output path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replicate records as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ScoreArgs {
    /// Regime JSON written by `fit` or `mincost`.
    #[arg(long)]
    regime: PathBuf,
    /// CSV holding the regime's covariates.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Regime document as written by `fit`, `evaluate` and `mincost`.
#[derive(Debug, Serialize, Deserialize)]
struct RegimeFile {
    tool: String,
    version: String,
    command: String,
    config: serde_json::Value,
    covariates: Vec<String>,
    regime: RegimeDoc,
    #[serde(flatten)]
    extra: serde_json::Map<String, serde_json::Value>,
}

fn write_output(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(body.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn emit(output: &OutputArgs, doc: &impl Serialize, text: &str) -> Result<()> {
    let json = serde_json::to_string_pretty(doc)? + "\n";
    write_output(output.out.as_deref(), &json)?;
    if let Some(p) = &output.text {
        write_output(Some(p), &format!("{text}\n"))?;
    } else if output.out.is_some() {
        println!("{text}");
    }
    Ok(())
}

fn fit_summary(data: &Dataset, result: &FitResult) -> serde_json::Map<String, serde_json::Value> {
    let names = data.covariates().names();
    let mut extra = serde_json::Map::new();
    extra.insert("n".into(), json!(data.n()));
    extra.insert("value".into(), json!(result.value));
    extra.insert("std_error".into(), json!(result.variance.max(0.0).sqrt()));
    extra.insert("cost".into(), json!(result.cost));
    extra.insert(
        "searched".into(),
        serde_json::to_value(RegimeDoc::from_list(&result.searched, names, data.labels())).expect("serializable"),
    );
    if let Some(mc) = &result.mincost {
        extra.insert(
            "mincost".into(),
            json!({"cost": mc.cost, "original_cost": mc.original_cost, "nodes_visited": mc.nodes_visited, "optimal": mc.optimal}),
        );
    }
    extra.insert("lambda".into(), json!(result.nuisance.outcome.lambda()));
    extra
}

fn regime_file(command: &str, config: serde_json::Value, data: &Dataset, result: &FitResult) -> RegimeFile {
    let names = data.covariates().names();
    RegimeFile {
        tool: TOOL.into(),
        version: VERSION.into(),
        command: command.into(),
        config,
        covariates: names.to_vec(),
        regime: RegimeDoc::from_list(&result.regime, names, data.labels()),
        extra: fit_summary(data, result),
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let data = args.data.load()?;
    let cfg = args.model.config(&data)?;
    let result = fit(&data, &cfg)?;
    for w in result.grid.warnings() {
        log::warn!("{w}");
    }
    let config = json!({"args": args, "fit": cfg});
    let file = regime_file("fit", config, &data, &result);
    if let Some(p) = &args.trace {
        let trace = serde_json::to_string_pretty(&result.trace)? + "\n";
        write_output(Some(p), &trace)?;
    }
    let text = file.regime.text.clone();
    emit(&args.output, &file, &text)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let data = args.data.load()?;
    let cfg = args.model.config(&data)?;
    let boot = BootstrapConfig {
        replicates: args.bootstrap,
        seed: args.model.seed,
        level: args.level,
        ..BootstrapConfig::default()
    };
    boot.validate()?;
    let result = fit(&data, &cfg)?;
    let report = correct_value(&data, &result, &boot)?;
    let config = json!({"args": args, "fit": cfg, "bootstrap": boot});
    let mut file = regime_file("evaluate", config, &data, &result);
    file.extra.insert("report".into(), serde_json::to_value(&report)?);
    let text = format!(
        "{}\n\nestimated value   {:.4} (se {:.4})\nbias-corrected    {:.4}\n{:.0}% interval      [{:.4}, {:.4}]\nbootstrap         {} replicates ({} failed)",
        file.regime.text,
        report.estimate,
        report.sigma,
        report.corrected,
        100.0 * report.level,
        report.interval.lower,
        report.interval.upper,
        report.replicates,
        report.failed
    );
    emit(&args.output, &file, &text)
}

fn read_regime(path: &Path) -> Result<RegimeFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: RegimeFile = serde_json::from_str(&text).map_err(Error::from)?;
    Ok(file)
}

fn cmd_mincost(args: &MincostArgs) -> Result<()> {
    let file = read_regime(&args.regime)?;
    let names = &file.covariates;
    let x = load_covariates_csv::<f64>(&args.data, names)?;
    let list = file.regime.to_list(names)?;
    let costs = match &args.costs {
        Some(p) => CostModel::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?, names)?,
        None => CostModel::uniform(names.len()),
    };
    let l_max = args.l_max.unwrap_or(list.len()).max(list.len());
    let result = min_cost_equivalent(&list, &x, &costs, MinCostOptions::new(l_max));
    let mut extra = serde_json::Map::new();
    extra.insert(
        "mincost".into(),
        json!({"cost": result.cost, "original_cost": result.original_cost, "nodes_visited": result.nodes_visited, "optimal": result.optimal}),
    );
    extra.insert("original".into(), serde_json::to_value(&file.regime)?);
    let out = RegimeFile {
        tool: TOOL.into(),
        version: VERSION.into(),
        command: "mincost".into(),
        config: json!({"args": args, "costs": costs.costs(), "l_max": l_max}),
        covariates: names.clone(),
        regime: RegimeDoc::from_list(&result.list, names, &file.regime.labels),
        extra,
    };
    let text = format!(
        "{}\n\ncost {:.4} (original {:.4})",
        out.regime.text, result.cost, result.original_cost
    );
    emit(&args.output, &out, &text)
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let file = read_regime(&args.regime)?;
    // only the covariates the regime refers to are required
    let mut used: Vec<String> = Vec::new();
    for atom in file.regime.clauses.iter().flat_map(|c| &c.atoms) {
        if !file.covariates.contains(&atom.col) {
            return Err(Error::MissingColumn(atom.col.clone()).into());
        }
        if !used.contains(&atom.col) {
            used.push(atom.col.clone());
        }
    }
    let list = file.regime.to_list(&used)?;
    let labels = &file.regime.labels;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["row", "recommendation", "needed"])?;
        if used.is_empty() {
            let label = &labels[list.default];
            let rows = csv::Reader::from_path(&args.data).map_err(Error::from)?.records().count();
            for i in 0..rows {
                w.write_record([(i + 1).to_string(), label.clone(), String::new()])?;
            }
        } else {
            let x = load_covariates_csv::<f64>(&args.data, &used)?;
            for (i, row) in x.rows().enumerate() {
                let needed: Vec<&str> = covariates_needed(&list, row).iter().map(|&j| used[j].as_str()).collect();
                w.write_record([
                    (i + 1).to_string(),
                    labels[list.evaluate(row)].clone(),
                    needed.join(";"),
                ])?;
            }
        }
        w.flush()?;
    }
    write_output(args.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let kind: OutcomeKind = args.outcome.into();
    let base = StudyConfig {
        n: args.n,
        reps: args.reps,
        seed: args.seed,
        test_n: args.test_n,
        search: SearchConfig {
            l_max: args.l_max,
            alpha: args.alpha,
            min_region: args.min_region,
        },
        grid: GridPolicy::parse(&args.cutoffs)?,
        mincost: !args.no_mincost,
        bootstrap: args.bootstrap.map(|b| BootstrapConfig {
            replicates: b,
            seed: args.seed,
            ..BootstrapConfig::default()
        }),
        ..StudyConfig::new(args.setting, kind, args.p)
    };
    let (result, records) = if let Some(alphas) = &args.alphas {
        (serde_json::to_value(alpha_sensitivity(&base, alphas)?)?, Vec::new())
    } else if let Some(sizes) = &args.sizes {
        let tables = consistency_probe(&base, sizes)?;
        let records = tables.iter().flat_map(|t| t.records.iter().map(move |r| (t.n, r.clone()))).collect();
        (serde_json::to_value(&tables)?, records)
    } else {
        let m = run_study(&base)?;
        let records = m.records.iter().map(|r| (m.n, r.clone())).collect();
        (serde_json::to_value(&m)?, records)
    };
    if let Some(path) = &args.csv {
        if records.is_empty() {
            bail!(Error::InvalidConfig("--csv needs a study or --sizes run".into()));
        }
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record([
            "n", "rep", "value", "cost", "tpr", "fpr", "loss", "pr_best", "correct", "q_value", "q_cost", "estimate",
        ])?;
        for (n, r) in &records {
            w.write_record([
                n.to_string(),
                r.rep.to_string(),
                r.value.to_string(),
                r.cost.to_string(),
                r.tpr.to_string(),
                r.fpr.to_string(),
                r.loss.to_string(),
                r.pr_best.to_string(),
                r.correct.to_string(),
                r.q_value.to_string(),
                r.q_cost.to_string(),
                r.estimate.to_string(),
            ])?;
        }
        w.flush()?;
    }
    let doc = json!({
        "tool": TOOL,
        "version": VERSION,
        "command": "simulate",
        "config": {"args": args, "study": base},
        "result": result,
    });
    write_output(args.out.as_deref(), &(serde_json::to_string_pretty(&doc)? + "\n"))
}

/// 2 for invalid input, 3 for failed model fits, 4 for I/O.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonConvergence { .. } | Error::Singular(_) | Error::TooManyFailures { .. } => 3,
                Error::Io(_) => 4,
                Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 4,
                Error::Json(j) if j.is_io() => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<csv::Error>().is_some_and(|c| !matches!(c.kind(), csv::ErrorKind::Io(_))) {
            return 2;
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Mincost(a) => cmd_mincost(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Score(a) => cmd_score(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
