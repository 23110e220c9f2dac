//! Result records and their JSON/CSV renderings.

use palmrt::ci::ConfInterval;
use palmrt::sim::{CellConfig, ExperimentResult};
use palmrt::Method;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Settings shared by every analysis of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "B")]
    pub permutations: usize,
    pub seed: u64,
    pub alpha: f64,
    pub variant: String,
    pub tie_tol: f64,
    pub rank_tol: f64,
    pub intercept: bool,
    pub bh_fdr: Option<f64>,
    pub out: Option<String>,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            permutations: 2000,
            seed: 0,
            alpha: 0.05,
            variant: "residual".to_string(),
            tie_tol: palmrt::palmrt::DEFAULT_TIE_TOL,
            rank_tol: palmrt::linalg::DEFAULT_RANK_TOL,
            intercept: true,
            bh_fdr: None,
            out: None,
            format: Format::Json,
        }
    }
}

/// Size of the critical set behind an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub thresholds: usize,
    pub a1: usize,
    pub a2: usize,
    pub a3: usize,
    pub gamma: f64,
}

/// One (feature, method) analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub feature: String,
    pub method: Method,
    pub n_used: usize,
    #[serde(rename = "B")]
    pub permutations: usize,
    pub seed: Option<u64>,
    pub p_value: f64,
    pub statistic: Option<f64>,
    pub bh_adjusted: Option<f64>,
    pub bh_reject: Option<bool>,
    pub ci: Option<ConfInterval>,
    pub ledger: Option<LedgerSummary>,
    pub warnings: Vec<String>,
    pub config: RunConfig,
}

#[derive(Serialize)]
struct FlatRecord<'a> {
    feature: &'a str,
    method: &'a str,
    n_used: usize,
    #[serde(rename = "B")]
    permutations: usize,
    seed: Option<u64>,
    p_value: f64,
    statistic: Option<f64>,
    bh_adjusted: Option<f64>,
    bh_reject: Option<bool>,
    ci_kind: Option<&'static str>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    warnings: String,
    alpha: f64,
    variant: &'a str,
    tie_tol: f64,
    rank_tol: f64,
    intercept: bool,
    bh_fdr: Option<f64>,
}

/// One simulation cell with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub config: CellConfig,
    pub result: ExperimentResult,
}

#[derive(Serialize)]
struct FlatSimRow<'a> {
    experiment: &'a str,
    design: &'static str,
    noise: &'static str,
    n: usize,
    p: usize,
    #[serde(rename = "B")]
    permutations: usize,
    reps: usize,
    seed: u64,
    design_seed: u64,
    redraw_design: bool,
    variant: &'static str,
    method: &'a str,
    alpha: f64,
    beta: Option<f64>,
    target_power: Option<f64>,
    rate: f64,
    se: f64,
    ratio: Option<f64>,
    median_length: Option<f64>,
}

pub fn render_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn finish_csv(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))
        .map_err(csv::Error::from)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

pub fn render_records(records: &[Record], format: Format) -> Result<String> {
    match format {
        Format::Json => render_json(&records),
        Format::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            for r in records {
                writer.serialize(FlatRecord {
                    feature: &r.feature,
                    method: r.method.name(),
                    n_used: r.n_used,
                    permutations: r.permutations,
                    seed: r.seed,
                    p_value: r.p_value,
                    statistic: r.statistic,
                    bh_adjusted: r.bh_adjusted,
                    bh_reject: r.bh_reject,
                    ci_kind: r.ci.map(|c| c.kind.name()),
                    ci_lo: r.ci.and_then(|c| c.lo),
                    ci_hi: r.ci.and_then(|c| c.hi),
                    warnings: r.warnings.join("; "),
                    alpha: r.config.alpha,
                    variant: &r.config.variant,
                    tie_tol: r.config.tie_tol,
                    rank_tol: r.config.rank_tol,
                    intercept: r.config.intercept,
                    bh_fdr: r.config.bh_fdr,
                })?;
            }
            finish_csv(writer)
        }
    }
}

pub fn render_sim(records: &[SimRecord], format: Format) -> Result<String> {
    match format {
        Format::Json => render_json(&records),
        Format::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            for rec in records {
                let r = &rec.result;
                for row in &r.rows {
                    writer.serialize(FlatSimRow {
                        experiment: &r.experiment,
                        design: r.design.name(),
                        noise: r.noise.name(),
                        n: r.n,
                        p: r.p,
                        permutations: r.permutations,
                        reps: r.reps,
                        seed: r.seed,
                        design_seed: r.design_seed,
                        redraw_design: r.redraw_design,
                        variant: rec.config.palmrt.variant.name(),
                        method: &row.method,
                        alpha: row.alpha,
                        beta: row.beta,
                        target_power: row.target_power,
                        rate: row.rate,
                        se: row.se,
                        ratio: row.ratio,
                        median_length: row.median_length,
                    })?;
                }
            }
            finish_csv(writer)
        }
    }
}
