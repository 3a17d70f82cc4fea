//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Environment:
//! - `ACCEPTANCE_ONLY=1,4` runs a subset.
//! - `ACCEPTANCE_FAST=1` runs the interval-coverage study in its reduced profile.
//! - `ACCEPTANCE_STRICT=1` exits non-zero when any criterion fails.

mod common;

use std::time::Instant;

use declist::data::{GridPolicy, OutcomeKind};
use declist::inference::BootstrapConfig;
use declist::search::complexity_probe;
use declist::simlab::{
    alpha_sensitivity, consistency_grid, double_robustness, run_study, Setting, StudyConfig, StudyMetrics,
};

const SEED: u64 = 20_240_601;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String, start: Instant) {
        if !pass {
            self.failures += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {id}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
    }

    fn error(&mut self, id: &str, err: impl std::fmt::Display, start: Instant) {
        self.line(id, false, format!("error: {err}"), start);
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn study(setting: Setting, n: Option<usize>, reps: usize) -> StudyConfig {
    StudyConfig {
        n,
        reps,
        seed: SEED,
        ..StudyConfig::new(setting, OutcomeKind::Continuous, 10)
    }
}

fn selected() -> Option<Vec<String>> {
    std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|t| t.trim().to_string()).collect())
}

fn wants(only: &Option<Vec<String>>, id: &str) -> bool {
    only.as_ref().is_none_or(|v| v.iter().any(|t| t == id))
}

fn flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

fn criterion_1_3(r: &mut Report, only: &Option<Vec<String>>) {
    let start = Instant::now();
    let metrics: StudyMetrics = match run_study(&study(Setting::I, Some(500), 100)) {
        Ok(m) => m,
        Err(e) => {
            for id in ["1", "3"] {
                if wants(only, id) {
                    r.error(id, &e, start);
                }
            }
            return;
        }
    };
    if wants(only, "1") {
        let pass = within(metrics.value.mean, 2.78, 0.05) && within(metrics.cost.mean, 1.64, 0.25);
        r.line(
            "1",
            pass,
            format!(
                "setting I value {:.3} (target 2.78 +/- 0.05), cost {:.3} (target 1.64 +/- 0.25), {} replicates",
                metrics.value.mean, metrics.cost.mean, metrics.completed
            ),
            start,
        );
    }
    if wants(only, "3") {
        let pass = metrics.tpr.mean >= 0.98 && metrics.fpr.mean <= 0.03;
        r.line(
            "3",
            pass,
            format!("TPR {:.3} (>= 0.98), FPR {:.3} (<= 0.03)", metrics.tpr.mean, metrics.fpr.mean),
            start,
        );
    }
    // same study with a 25-subject minimum region, for comparison only
    let start = Instant::now();
    let mut cfg = study(Setting::I, Some(500), 100);
    cfg.search.min_region = 25;
    if let Ok(m) = run_study(&cfg) {
        println!(
            "INFO criteria 1/3 with min_region 25: value {:.3}, cost {:.3}, TPR {:.3}, FPR {:.3} [{:.1}s]",
            m.value.mean,
            m.cost.mean,
            m.tpr.mean,
            m.fpr.mean,
            start.elapsed().as_secs_f64()
        );
    }
}

fn criterion_2(r: &mut Report) {
    let start = Instant::now();
    match run_study(&study(Setting::V, Some(750), 100)) {
        Ok(m) => {
            let pass = within(m.value.mean, 2.90, 0.06) && m.value.mean > m.q_value.mean;
            r.line(
                "2",
                pass,
                format!(
                    "setting V value {:.3} (target 2.90 +/- 0.06), q-linear {:.3}",
                    m.value.mean, m.q_value.mean
                ),
                start,
            );
        }
        Err(e) => r.error("2", e, start),
    }
    let start = Instant::now();
    let mut cfg = study(Setting::V, Some(750), 100);
    cfg.search.min_region = 25;
    if let Ok(m) = run_study(&cfg) {
        println!(
            "INFO criterion 2 with min_region 25: value {:.3}, cost {:.3} [{:.1}s]",
            m.value.mean,
            m.cost.mean,
            start.elapsed().as_secs_f64()
        );
    }
}

fn criterion_4(r: &mut Report) {
    let start = Instant::now();
    let n = 10_000;
    let cfg = StudyConfig {
        grid: GridPolicy::Percentiles { k: consistency_grid(n) },
        ..study(Setting::I, Some(n), 100)
    };
    match run_study(&cfg) {
        Ok(m) => {
            let mse = m.cutoff_mse_n;
            let mse_ok = mse.iter().all(|v| v.is_some_and(|v| (2.0..=10.0).contains(&v)));
            let pass = m.loss.mean <= 0.005 && m.pr_best.mean >= 0.995 && mse_ok;
            r.line(
                "4",
                pass,
                format!(
                    "n=10^4 loss {:.4} (<= 0.005), Pr(best) {:.4} (>= 0.995), n*MSE {:?} (each in [2, 10]), correct form {:.2}",
                    m.loss.mean, m.pr_best.mean, mse, m.correct
                ),
                start,
            );
        }
        Err(e) => r.error("4", e, start),
    }
}

fn criterion_5(r: &mut Report) {
    let start = Instant::now();
    let full = !flag("ACCEPTANCE_FAST");
    let (b, studies, band) = if full { (200, 100, (0.90, 0.99)) } else { (100, 50, (0.88, 1.00)) };
    let cfg = StudyConfig {
        bootstrap: Some(BootstrapConfig {
            replicates: b,
            seed: SEED,
            ..BootstrapConfig::default()
        }),
        ..study(Setting::II, None, studies)
    };
    match run_study(&cfg) {
        Ok(m) => {
            let c = m.coverage.expect("bootstrap enabled");
            let pass = (band.0..=band.1).contains(&c.corrected) && c.corrected >= c.plain - 0.02;
            r.line(
                "5",
                pass,
                format!(
                    "{} profile (B={b}, {studies} studies): corrected coverage {:.3} (in [{}, {}]), plain {:.3}",
                    if full { "full" } else { "fast" },
                    c.corrected,
                    band.0,
                    band.1,
                    c.plain
                ),
                start,
            );
        }
        Err(e) => r.error("5", e, start),
    }
}

fn criterion_6(r: &mut Report) {
    let start = Instant::now();
    match alpha_sensitivity(&study(Setting::I, Some(500), 100), &[0.1, 0.05, 0.01]) {
        Ok(rep) => {
            let worst = rep.pairs.iter().map(|p| p.agreement.mean).fold(f64::INFINITY, f64::min);
            let detail = rep
                .pairs
                .iter()
                .map(|p| format!("{}/{}: {:.4}", 1.0 - p.alpha_a, 1.0 - p.alpha_b, p.agreement.mean))
                .collect::<Vec<_>>()
                .join(", ");
            r.line("6", worst >= 0.99, format!("agreement {detail} (each >= 0.99)"), start);
        }
        Err(e) => r.error("6", e, start),
    }
    let start = Instant::now();
    let mut cfg = study(Setting::I, Some(500), 100);
    cfg.search.min_region = 25;
    if let Ok(rep) = alpha_sensitivity(&cfg, &[0.1, 0.05, 0.01]) {
        let worst = rep.pairs.iter().map(|p| p.agreement.mean).fold(f64::INFINITY, f64::min);
        println!(
            "INFO criterion 6 with min_region 25: lowest agreement {worst:.4} [{:.1}s]",
            start.elapsed().as_secs_f64()
        );
    }
}

fn criterion_7(r: &mut Report) {
    let start = Instant::now();
    let mut failures = Vec::new();
    for seed in 0..200 {
        if let Err(e) = common::check_best_clause(&common::clause_instance(seed)) {
            failures.push(format!("(a) seed {seed}: {e}"));
        }
        if let Err(e) = common::check_min_cost(&common::mincost_instance(seed)) {
            failures.push(format!("(b) seed {seed}: {e}"));
        }
        if let Err(e) = common::check_binning(seed) {
            failures.push(format!("(d) seed {seed}: {e}"));
        }
    }
    if let Err(e) = common::check_negation(SEED, 10_000) {
        failures.push(format!("(c) {e}"));
    }
    let detail = if failures.is_empty() {
        "200 clause, 200 min-cost, 10^4 points per form, 200 binning instances; 0 failures".to_string()
    } else {
        format!("{} failures, first: {}", failures.len(), failures[0])
    };
    r.line("7", failures.is_empty(), detail, start);
}

fn criterion_8(r: &mut Report) {
    let start = Instant::now();
    match double_robustness(100_000, 10, SEED, 1_000_000) {
        Ok(d) => {
            let pass = within(d.propensity_only, d.truth, 0.02) && within(d.outcome_only, d.truth, 0.02);
            r.line(
                "8",
                pass,
                format!(
                    "truth {:.4}; outcome misspecified {:.4}, propensity misspecified {:.4} (each +/- 0.02)",
                    d.truth, d.propensity_only, d.outcome_only
                ),
                start,
            );
        }
        Err(e) => r.error("8", e, start),
    }
}

fn criterion_9(r: &mut Report) {
    let start = Instant::now();
    match complexity_probe(4000, 8, 2, 9, 2, SEED) {
        Ok(c) => {
            let (ep, en) = (c.over_p.exponent, c.over_n.exponent);
            let pass = (1.7..=2.3).contains(&ep) && (0.8..=1.2).contains(&en);
            r.line(
                "9",
                pass,
                format!(
                    "p-exponent {ep:.2} (in [1.7, 2.3]) over p={:?}, n-exponent {en:.2} (in [0.8, 1.2]) over n={:?}",
                    c.over_p.sizes, c.over_n.sizes
                ),
                start,
            );
        }
        Err(e) => r.error("9", e, start),
    }
}

fn main() {
    let only = selected();
    let mut r = Report { failures: 0 };
    if wants(&only, "1") || wants(&only, "3") {
        criterion_1_3(&mut r, &only);
    }
    if wants(&only, "2") {
        criterion_2(&mut r);
    }
    if wants(&only, "4") {
        criterion_4(&mut r);
    }
    if wants(&only, "5") {
        criterion_5(&mut r);
    }
    if wants(&only, "6") {
        criterion_6(&mut r);
    }
    if wants(&only, "7") {
        criterion_7(&mut r);
    }
    if wants(&only, "8") {
        criterion_8(&mut r);
    }
    if wants(&only, "9") {
        criterion_9(&mut r);
    }
    println!("acceptance: {} failing criteria", r.failures);
    if flag("ACCEPTANCE_STRICT") && r.failures > 0 {
        std::process::exit(1);
    }
}
