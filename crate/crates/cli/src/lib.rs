//! Command-line front end: CSV ingestion, per-feature tests with optional
//! Benjamini-Hochberg adjustment, interval inversion, and simulation grids.

pub mod bh;
pub mod error;
pub mod input;
pub mod output;
pub mod simulate;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use palmrt::ci::invert_ci;
use palmrt::{
    baseline_test, f_test, palmrt_test, BaselineConfig, CiConfig, CiKind, EmptyPolicy, Method, PalmrtConfig,
    TestReport, Variant,
};
use rayon::prelude::*;

pub use crate::error::{CliError, Result};
use crate::input::{ModelSpec, Table};
use crate::output::{render_records, Format, LedgerSummary, Record, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "palmrt",
    version,
    about = "Permutation tests for partial correlation in linear models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test each feature against the response given the covariates.
    Test(TestArgs),
    /// Invert the PALMRT test into a confidence interval for each feature.
    Ci(CiArgs),
    /// Run a simulation grid described by a JSON file.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long, env = "PALMRT_DATA")]
    pub data: PathBuf,
    /// Response column.
    #[arg(long)]
    pub response: String,
    /// Single feature column.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    pub feature: Option<String>,
    /// Comma-separated feature columns, each tested against the shared covariates.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Comma-separated covariate products, each written `a:b`.
    #[arg(long, value_delimiter = ',')]
    pub interactions: Vec<String>,
    /// Fit without an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
}

impl DataArgs {
    fn features(&self) -> Vec<String> {
        match &self.feature {
            Some(f) => vec![f.clone()],
            None => self.features.clone(),
        }
    }

    fn model(&self, feature: &str) -> Result<ModelSpec> {
        Ok(ModelSpec {
            response: self.response.clone(),
            feature: feature.to_string(),
            covariates: self.covariates.clone(),
            interactions: self
                .interactions
                .iter()
                .map(|t| ModelSpec::parse_interaction(t))
                .collect::<Result<_>>()?,
            intercept: !self.no_intercept,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Number of random permutations B.
    #[arg(long, env = "PALMRT_PERMUTATIONS", default_value_t = 2000)]
    pub permutations: usize,
    #[arg(long, env = "PALMRT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "PALMRT_ALPHA", default_value_t = 0.05)]
    pub alpha: f64,
    /// Paired statistic: residual, coef, coef+, coef- or rpt.
    #[arg(long, env = "PALMRT_VARIANT", default_value = "residual", value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, env = "PALMRT_TIE_TOL", default_value_t = palmrt::palmrt::DEFAULT_TIE_TOL)]
    pub tie_tol: f64,
    #[arg(long, env = "PALMRT_RANK_TOL", default_value_t = palmrt::linalg::DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "PALMRT_FORMAT", value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated methods: palmrt, ftest, perm, fl, kennedy, braak.
    #[arg(long, value_delimiter = ',', default_value = "palmrt", value_parser = parse_method)]
    pub method: Vec<Method>,
    /// Benjamini-Hochberg false discovery rate across features, per method.
    #[arg(long)]
    pub bh_fdr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnEmpty {
    Report,
    Normal,
}

#[derive(Debug, Clone, Args)]
pub struct CiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// What to return when the inverted set is empty.
    #[arg(long, value_enum, default_value_t = OnEmpty::Report)]
    pub on_empty: OnEmpty,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON file listing the cells to run.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "PALMRT_FORMAT", value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: palmrt::Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: palmrt::Error| e.to_string())
}

impl RunArgs {
    fn config(&self, bh_fdr: Option<f64>) -> RunConfig {
        RunConfig {
            permutations: self.permutations,
            seed: self.seed,
            alpha: self.alpha,
            variant: self.variant.name().to_string(),
            tie_tol: self.tie_tol,
            rank_tol: self.rank_tol,
            intercept: true,
            bh_fdr,
            out: self.out.as_ref().map(|p| p.display().to_string()),
            format: self.format,
        }
    }

    fn palmrt(&self) -> PalmrtConfig {
        PalmrtConfig {
            variant: self.variant,
            tie_tol: self.tie_tol,
            rank_tol: self.rank_tol,
            keep_ledger: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Spec(format!(
                "--alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.permutations == 0 {
            return Err(CliError::Spec("--permutations must be at least 1".into()));
        }
        Ok(())
    }
}

fn unique_features(data: &DataArgs) -> Result<Vec<String>> {
    let features = data.features();
    if features.is_empty() {
        return Err(CliError::Spec("no feature given; use --feature or --features".into()));
    }
    for (i, f) in features.iter().enumerate() {
        if features[..i].contains(f) {
            return Err(CliError::Spec(format!("feature '{f}' is listed twice")));
        }
    }
    Ok(features)
}

fn run_one(method: Method, data: &palmrt::Dataset, run: &RunArgs) -> palmrt::Result<TestReport> {
    let baseline = BaselineConfig {
        tie_tol: run.tie_tol,
        rank_tol: run.rank_tol,
    };
    match method {
        Method::Palmrt => palmrt_test(data, run.permutations, run.seed, &run.palmrt()),
        Method::FTest => f_test(data),
        _ => baseline_test(method, data, run.permutations, run.seed, &baseline),
    }
}

/// Records for every (feature, method), in input order.
pub fn cmd_test(args: &TestArgs) -> Result<(Vec<Record>, Vec<String>)> {
    args.run.validate()?;
    if let Some(q) = args.bh_fdr {
        if !(q > 0.0 && q < 1.0) {
            return Err(CliError::Spec(format!("--bh-fdr must lie in (0, 1), got {q}")));
        }
    }
    let features = unique_features(&args.data)?;
    let table = Table::from_path(&args.data.data)?;
    let mut config = args.run.config(args.bh_fdr);
    config.intercept = !args.data.no_intercept;

    let per_feature: Vec<Vec<Record>> = features
        .par_iter()
        .map(|feature| {
            let loaded = table.dataset(&args.data.model(feature)?)?;
            args.method
                .iter()
                .map(|&method| {
                    let report = run_one(method, &loaded.dataset, &args.run)?;
                    let mut warnings = report.warnings;
                    if loaded.n_dropped > 0 {
                        warnings.push(format!("{} rows dropped for missing values", loaded.n_dropped));
                    }
                    Ok(Record {
                        feature: feature.clone(),
                        method,
                        n_used: loaded.n_used,
                        permutations: report.permutations,
                        seed: report.seed,
                        p_value: report.p_value,
                        statistic: report.statistic,
                        bh_adjusted: None,
                        bh_reject: None,
                        ci: None,
                        ledger: None,
                        warnings,
                        config: config.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<Record> = per_feature.into_iter().flatten().collect();
    let mut notes = Vec::new();
    if let Some(q) = args.bh_fdr {
        for &method in &args.method {
            let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].method == method).collect();
            let p: Vec<f64> = idx.iter().map(|&i| records[i].p_value).collect();
            let adj = bh::benjamini_hochberg(&p, q);
            for (k, &i) in idx.iter().enumerate() {
                records[i].bh_adjusted = Some(adj.adjusted[k]);
                records[i].bh_reject = Some(adj.rejected[k]);
            }
            if method.uses_permutations() && bh::granularity_limited(args.run.permutations, idx.len(), q) {
                notes.push(format!(
                    "{method}: the smallest attainable p-value 1/(B+1) = {:.3e} exceeds the first BH threshold {:.3e}; \
                     increase --permutations",
                    1.0 / (args.run.permutations as f64 + 1.0),
                    q / idx.len() as f64
                ));
            }
        }
    }
    Ok((records, notes))
}

/// One interval record per feature.
pub fn cmd_ci(args: &CiArgs) -> Result<(Vec<Record>, Vec<String>)> {
    args.run.validate()?;
    if args.run.variant != Variant::ResidualSs {
        return Err(CliError::Spec(
            "interval inversion uses the residual statistic; drop --variant".into(),
        ));
    }
    let features = unique_features(&args.data)?;
    let table = Table::from_path(&args.data.data)?;
    let mut config = args.run.config(None);
    config.intercept = !args.data.no_intercept;
    let ci_config = CiConfig {
        palmrt: args.run.palmrt(),
        on_empty: match args.on_empty {
            OnEmpty::Report => EmptyPolicy::Report,
            OnEmpty::Normal => EmptyPolicy::Normal,
        },
    };

    let records = features
        .par_iter()
        .map(|feature| {
            let loaded = table.dataset(&args.data.model(feature)?)?;
            let result = invert_ci(
                &loaded.dataset,
                args.run.permutations,
                args.run.seed,
                args.run.alpha,
                &ci_config,
            )?;
            let mut warnings = Vec::new();
            match result.interval.kind {
                CiKind::AllReals => warnings.push(format!(
                    "interval is the whole line: B = {} is too small for alpha = {}",
                    args.run.permutations, args.run.alpha
                )),
                CiKind::Empty => warnings.push("no coefficient value is accepted at this level".into()),
                CiKind::Bounded if result.interval.fallback_used => {
                    warnings.push("inverted set was empty; reporting the normal-theory interval".into())
                }
                CiKind::Bounded => {}
            }
            if loaded.n_dropped > 0 {
                warnings.push(format!("{} rows dropped for missing values", loaded.n_dropped));
            }
            let l = &result.ledger;
            Ok(Record {
                feature: feature.clone(),
                method: Method::Palmrt,
                n_used: loaded.n_used,
                permutations: args.run.permutations,
                seed: Some(args.run.seed),
                p_value: result.p_value_at(0.0),
                statistic: None,
                bh_adjusted: None,
                bh_reject: None,
                ci: Some(result.interval),
                ledger: Some(LedgerSummary {
                    thresholds: l.thresholds.len(),
                    a1: l.a1,
                    a2: l.a2,
                    a3: l.a3,
                    gamma: l.gamma(),
                }),
                warnings,
                config: config.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((records, Vec::new()))
}

fn write_output(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Renders the command's output and the notices meant for standard error.
pub fn execute(command: &Command) -> Result<(String, Vec<String>)> {
    match command {
        Command::Test(args) => {
            let (records, notes) = cmd_test(args)?;
            Ok((
                render_records(&records, args.run.format)?,
                collect_notes(&records, notes),
            ))
        }
        Command::Ci(args) => {
            let (records, notes) = cmd_ci(args)?;
            Ok((
                render_records(&records, args.run.format)?,
                collect_notes(&records, notes),
            ))
        }
        Command::Simulate(args) => {
            let config = simulate::SimConfig::from_path(&args.config)?;
            let records = simulate::run(&config)?;
            Ok((output::render_sim(&records, args.format)?, Vec::new()))
        }
    }
}

fn collect_notes(records: &[Record], mut notes: Vec<String>) -> Vec<String> {
    for r in records {
        for w in &r.warnings {
            notes.push(format!("{} [{}]: {w}", r.feature, r.method));
        }
    }
    notes
}

/// Runs the command and writes its output; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let out = match &cli.command {
        Command::Test(a) => a.run.out.clone(),
        Command::Ci(a) => a.run.out.clone(),
        Command::Simulate(a) => a.out.clone(),
    };
    let result = execute(&cli.command).and_then(|(text, notes)| {
        for n in notes {
            eprintln!("warning: {n}");
        }
        write_output(&text, out.as_deref())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
