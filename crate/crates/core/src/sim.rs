//! Designs, noise generators and Monte-Carlo runners for type I error,
//! power and interval coverage.
//!
//! Every random quantity is addressed by `(seed, label, index)` so a result
//! is a pure function of its recorded metadata. Within a cell the design is
//! drawn once unless `redraw_design` is set. The permutations of repetition
//! `r` do not depend on the noise kind, which lets [`run_type1_batch`]
//! factorize each permuted design once for several noise settings.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::baselines::{baseline_test_with, f_test, BaselineConfig};
use crate::ci::{invert_ci_with, normal_ci, CiConfig, ConfInterval};
use crate::data::{Dataset, Design};
use crate::error::{Error, Result};
use crate::linalg::{Basis, DEFAULT_RANK_TOL};
use crate::palmrt::{palmrt_p_values, PalmrtConfig};
use crate::perm::{counter_rng, derive_seed, PermStream, Permutation};
use crate::report::Method;

const DESIGN_TAG: u64 = 0x6465_7369_676e;
const NOISE_TAG: u64 = 0x006e_6f69_7365;
const PERM_TAG: u64 = 0x7065_726d;
const CALIBRATION_TAG: u64 = 0x0063_616c_6962;

/// Magnitude of the single spike in multinomial noise.
pub const SPIKE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Gaussian,
    Cauchy,
    /// Disjoint blocks of ones, one block per feature, remainder rows zero.
    Anova,
    /// Each feature is one at the shared row 0 and at one row of its own.
    Paired,
    /// `x = e_1` and `z_j = e_{j+1}`.
    Spike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Cauchy,
    /// Standard normal plus `±10⁴` at one uniformly chosen index.
    Multinomial,
}

macro_rules! named_enum {
    ($ty:ty, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::invalid(format!(concat!("unknown ", stringify!($ty), " '{}'"), s))),
                }
            }
        }
    };
}

named_enum!(DesignKind,
    DesignKind::Gaussian => "gaussian",
    DesignKind::Cauchy => "cauchy",
    DesignKind::Anova => "anova",
    DesignKind::Paired => "paired",
    DesignKind::Spike => "spike",
);

named_enum!(NoiseKind,
    NoiseKind::Gaussian => "gaussian",
    NoiseKind::Cauchy => "cauchy",
    NoiseKind::Multinomial => "multinomial",
);

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Gaussian, NoiseKind::Cauchy, NoiseKind::Multinomial];

    fn tag(self) -> u64 {
        NOISE_TAG ^ (self as u64 + 1)
    }
}

impl DesignKind {
    /// Designs of the worst-case type I error grid.
    pub const STANDARD_GRID: [DesignKind; 4] = [
        DesignKind::Gaussian,
        DesignKind::Cauchy,
        DesignKind::Anova,
        DesignKind::Paired,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

fn default_true() -> bool {
    true
}

impl DesignSpec {
    pub fn new(kind: DesignKind, n: usize, p: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            p,
            seed,
            intercept: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub beta: f64,
    #[serde(default)]
    pub theta: Vec<f64>,
}

impl SignalSpec {
    pub fn beta(beta: f64) -> Self {
        Self {
            beta,
            theta: Vec::new(),
        }
    }
}

/// Target feature and covariates for `spec`.
pub fn gen_design(spec: &DesignSpec) -> Result<Design> {
    let (n, p) = (spec.n, spec.p);
    if n == 0 {
        return Err(Error::invalid("design needs n >= 1"));
    }
    let features = p + 1;
    let mut cols: Vec<Vec<f64>> = match spec.kind {
        DesignKind::Gaussian | DesignKind::Cauchy => {
            let mut rng = counter_rng(spec.seed, DESIGN_TAG);
            let cauchy = Cauchy::new(0.0, 1.0).expect("valid Cauchy");
            (0..features)
                .map(|_| {
                    (0..n)
                        .map(|_| match spec.kind {
                            DesignKind::Gaussian => rng.sample(StandardNormal),
                            _ => cauchy.sample(&mut rng),
                        })
                        .collect()
                })
                .collect()
        }
        DesignKind::Anova => {
            let block = n / features;
            if n < p + 2 || block == 0 {
                return Err(Error::invalid(format!("anova design infeasible for n = {n}, p = {p}")));
            }
            (0..features)
                .map(|j| (0..n).map(|i| f64::from(u8::from(i / block == j))).collect())
                .collect()
        }
        DesignKind::Paired => {
            if n < p + 2 {
                return Err(Error::invalid(format!("paired design infeasible for n = {n}, p = {p}")));
            }
            (0..features)
                .map(|j| (0..n).map(|i| f64::from(u8::from(i == 0 || i == j + 1))).collect())
                .collect()
        }
        DesignKind::Spike => {
            if n < features {
                return Err(Error::invalid(format!("spike design infeasible for n = {n}, p = {p}")));
            }
            (0..features)
                .map(|j| (0..n).map(|i| f64::from(u8::from(i == j))).collect())
                .collect()
        }
    };
    let x = cols.remove(0);
    Design::new(x, cols, spec.intercept)
}

/// Noise vector of length `n` from the stream `seed`.
pub fn gen_noise(kind: NoiseKind, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = counter_rng(seed, NOISE_TAG);
    match kind {
        NoiseKind::Gaussian => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        NoiseKind::Cauchy => {
            let cauchy = Cauchy::new(0.0, 1.0).expect("valid Cauchy");
            (0..n).map(|_| cauchy.sample(&mut rng)).collect()
        }
        NoiseKind::Multinomial => {
            let mut e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            if n > 0 {
                let at = rng.random_range(0..n);
                e[at] += if rng.random::<bool>() { SPIKE } else { -SPIKE };
            }
            e
        }
    }
}

/// `y = xβ + Zθ + ε`.
pub fn gen_response(design: &Design, signal: &SignalSpec, noise: &[f64]) -> Result<Vec<f64>> {
    let mut y = design.linear_predictor(signal.beta, &signal.theta)?;
    for (y, e) in y.iter_mut().zip(noise) {
        *y += e;
    }
    Ok(y)
}

/// Settings shared by all runners for one (design, noise) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub design: DesignSpec,
    pub noise: NoiseKind,
    pub reps: usize,
    pub permutations: usize,
    pub seed: u64,
    #[serde(default)]
    pub redraw_design: bool,
    #[serde(default)]
    pub palmrt: PalmrtConfig,
}

impl CellConfig {
    pub fn new(design: DesignSpec, noise: NoiseKind, reps: usize, permutations: usize, seed: u64) -> Self {
        Self {
            design,
            noise,
            reps,
            permutations,
            seed,
            redraw_design: false,
            palmrt: PalmrtConfig::default(),
        }
    }

    fn design_for(&self, rep: usize) -> Result<Design> {
        if self.redraw_design {
            gen_design(&DesignSpec {
                seed: derive_seed(self.design.seed, DESIGN_TAG, rep as u64),
                ..self.design
            })
        } else {
            gen_design(&self.design)
        }
    }

    fn noise_for(&self, kind: NoiseKind, rep: usize) -> Vec<f64> {
        gen_noise(kind, self.design.n, derive_seed(self.seed, kind.tag(), rep as u64))
    }

    fn perms_for(&self, rep: usize) -> Vec<Permutation> {
        PermStream::new(derive_seed(self.seed, PERM_TAG, rep as u64), self.design.n).take(self.permutations)
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be >= 1"));
        }
        if self.permutations == 0 {
            return Err(Error::invalid("permutations must be >= 1"));
        }
        Ok(())
    }
}

/// One line of an experiment summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// Test method, or `inversion` / `normal` for intervals.
    pub method: String,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_power: Option<f64>,
    /// Rejection rate or coverage.
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub se: f64,
    /// `rate / α` for type I error.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub median_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub design: DesignKind,
    pub noise: NoiseKind,
    pub n: usize,
    pub p: usize,
    pub permutations: usize,
    pub reps: usize,
    pub seed: u64,
    pub design_seed: u64,
    pub redraw_design: bool,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    fn new(experiment: &str, cell: &CellConfig, noise: NoiseKind) -> Self {
        Self {
            experiment: experiment.to_string(),
            design: cell.design.kind,
            noise,
            n: cell.design.n,
            p: cell.design.p,
            permutations: cell.permutations,
            reps: cell.reps,
            seed: cell.seed,
            design_seed: cell.design.seed,
            redraw_design: cell.redraw_design,
            rows: Vec::new(),
        }
    }

    pub fn row(&self, method: &str, alpha: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.alpha == alpha)
    }

    /// Power of `method` at the `target` row.
    pub fn power_row(&self, method: &str, target: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.target_power == Some(target))
    }
}

fn binomial_se(rate: f64, reps: usize) -> f64 {
    (rate * (1.0 - rate) / reps as f64).sqrt()
}

fn rate_row(method: &str, alpha: f64, hits: usize, reps: usize) -> ResultRow {
    let rate = hits as f64 / reps as f64;
    ResultRow {
        method: method.to_string(),
        alpha,
        beta: None,
        target_power: None,
        rate,
        se: binomial_se(rate, reps),
        ratio: None,
        median_length: None,
    }
}

/// p-values of each method for each response, all sharing one design and
/// one permutation set.
fn p_values(
    design: &Design,
    responses: &[Vec<f64>],
    perms: &[Permutation],
    methods: &[Method],
    palmrt: &PalmrtConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(methods.len()); responses.len()];
    let baseline = BaselineConfig {
        tie_tol: palmrt.tie_tol,
        rank_tol: palmrt.rank_tol,
    };
    for &method in methods {
        if method == Method::Palmrt {
            for (row, p) in out.iter_mut().zip(palmrt_p_values(design, responses, perms, palmrt)) {
                row.push(p);
            }
            continue;
        }
        for (row, y) in out.iter_mut().zip(responses) {
            let data = Dataset::from_design(y.clone(), design.clone())?;
            let report = match method {
                Method::FTest => f_test(&data)?,
                _ => baseline_test_with(method, &data, perms, &baseline)?,
            };
            row.push(report.p_value);
        }
    }
    Ok(out)
}

/// Null rejection rates (`y = ε`) for one cell.
pub fn run_type1(cell: &CellConfig, methods: &[Method], alphas: &[f64]) -> Result<ExperimentResult> {
    Ok(run_type1_batch(cell, &[cell.noise], methods, alphas)?.remove(0))
}

/// [`run_type1`] for several noise kinds on the same designs and permutations.
pub fn run_type1_batch(
    cell: &CellConfig,
    noises: &[NoiseKind],
    methods: &[Method],
    alphas: &[f64],
) -> Result<Vec<ExperimentResult>> {
    cell.validate()?;
    let fixed = if cell.redraw_design {
        None
    } else {
        Some(gen_design(&cell.design)?)
    };
    // per rep: per noise: per method p-value
    let pvals: Vec<Vec<Vec<f64>>> = (0..cell.reps)
        .into_par_iter()
        .map(|rep| {
            let design = match &fixed {
                Some(d) => d.clone(),
                None => cell.design_for(rep)?,
            };
            let responses: Vec<Vec<f64>> = noises.iter().map(|&k| cell.noise_for(k, rep)).collect();
            p_values(&design, &responses, &cell.perms_for(rep), methods, &cell.palmrt)
        })
        .collect::<Result<_>>()?;

    Ok(noises
        .iter()
        .enumerate()
        .map(|(k, &noise)| {
            let mut result = ExperimentResult::new("type1", cell, noise);
            for (m, method) in methods.iter().enumerate() {
                for &alpha in alphas {
                    let hits = pvals.iter().filter(|rep| rep[k][m] <= alpha).count();
                    let mut row = rate_row(method.name(), alpha, hits, cell.reps);
                    row.ratio = Some(row.rate / alpha);
                    result.rows.push(row);
                }
            }
            result
        })
        .collect())
}

/// Tail quantities of the F-test for one noise draw, linear in `β`.
struct FTail {
    /// `⟨t_x, t_ε⟩ / ||t_x||`.
    a: f64,
    /// Residual SS of the full model, independent of `β`.
    rss: f64,
}

/// `β` at which the F-test reaches `target` power, by bisection on a
/// common-random-numbers estimate over `reps` noise draws.
pub fn calibrate_beta(
    design: &Design,
    noise: NoiseKind,
    target: f64,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::invalid(format!("target power must lie in [0, 1), got {target}")));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    if reps == 0 {
        return Err(Error::invalid("calibration needs reps >= 1"));
    }
    let reduced = Basis::from_trusted(design.n(), design.covariate_block(), DEFAULT_RANK_TOL).factorize();
    let tx = reduced.residual(design.x());
    if tx.is_negligible(DEFAULT_RANK_TOL) {
        return Err(Error::CalibrationFailed(
            "the feature lies in the covariate span".into(),
        ));
    }
    let rank = reduced.rank() + 1;
    if design.n() <= rank {
        return Err(Error::InsufficientDf { n: design.n(), rank });
    }
    let df = (design.n() - rank) as f64;
    let sx = tx.norm_sq().sqrt();
    let tails: Vec<FTail> = (0..reps)
        .map(|r| {
            let e = gen_noise(
                noise,
                design.n(),
                derive_seed(seed, CALIBRATION_TAG ^ noise.tag(), r as u64),
            );
            let te = reduced.residual(&e);
            let a = tx.dot(&te) / sx;
            FTail {
                a,
                rss: (te.norm_sq() - a * a).max(0.0),
            }
        })
        .collect();
    let crit = FisherSnedecor::new(1.0, df)
        .map_err(|e| Error::Inconsistency(format!("F distribution: {e}")))?
        .inverse_cdf(1.0 - alpha);
    let power = |beta: f64| {
        let hits = tails
            .iter()
            .filter(|t| {
                let num = (t.a + beta * sx).powi(2);
                num > crit * t.rss / df
            })
            .count();
        hits as f64 / reps as f64
    };

    let base = power(0.0);
    if base >= target {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0 / sx;
    let mut doublings = 0;
    while power(hi) < target {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::CalibrationFailed(format!(
                "power stays below {target} (reached {} at beta = {hi:e})",
                power(hi)
            )));
        }
    }
    let tol = 0.01_f64.min(binomial_se(target, reps));
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let pm = power(mid);
        if (pm - target).abs() <= tol {
            break;
        }
        if pm < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let achieved = power(mid);
    if (achieved - target).abs() > 2.0 * binomial_se(target, reps) + 1.0 / reps as f64 {
        return Err(Error::CalibrationFailed(format!(
            "power is not monotone near the target: {achieved} at beta = {mid:e}, bracket [{lo:e}, {hi:e}]"
        )));
    }
    Ok(mid)
}

/// Rejection rates at F-test-calibrated signal strengths.
///
/// Rows carry the calibrated `β` and the target; PALMRT over baseline power
/// ratios are available through [`power_ratios`].
pub fn run_power(
    cell: &CellConfig,
    methods: &[Method],
    targets: &[f64],
    alpha: f64,
    calibration_reps: usize,
) -> Result<ExperimentResult> {
    cell.validate()?;
    let design = gen_design(&cell.design)?;
    let mut result = ExperimentResult::new("power", cell, cell.noise);
    for &target in targets {
        let beta = calibrate_beta(&design, cell.noise, target, alpha, calibration_reps, cell.seed)?;
        let signal = SignalSpec::beta(beta);
        let pvals: Vec<Vec<f64>> = (0..cell.reps)
            .into_par_iter()
            .map(|rep| {
                let design = cell.design_for(rep)?;
                let y = gen_response(&design, &signal, &cell.noise_for(cell.noise, rep))?;
                Ok(p_values(&design, &[y], &cell.perms_for(rep), methods, &cell.palmrt)?.remove(0))
            })
            .collect::<Result<_>>()?;
        for (m, method) in methods.iter().enumerate() {
            let hits = pvals.iter().filter(|p| p[m] <= alpha).count();
            let mut row = rate_row(method.name(), alpha, hits, cell.reps);
            row.beta = Some(beta);
            row.target_power = Some(target);
            result.rows.push(row);
        }
    }
    Ok(result)
}

/// PALMRT power divided by each baseline's power, per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRatio {
    pub target_power: f64,
    pub baseline: String,
    pub ratio: f64,
}

pub fn power_ratios(result: &ExperimentResult) -> Vec<PowerRatio> {
    let palmrt = Method::Palmrt.name();
    result
        .rows
        .iter()
        .filter(|r| r.method != palmrt)
        .filter_map(|r| {
            let target = r.target_power?;
            let ours = result.power_row(palmrt, target)?;
            Some(PowerRatio {
                target_power: target,
                baseline: r.method.clone(),
                ratio: ours.rate / r.rate,
            })
        })
        .collect()
}

/// Coverage and median length of the inverted and normal-theory intervals
/// at the true coefficient `signal.beta`.
pub fn run_ci_coverage(cell: &CellConfig, signal: &SignalSpec, alpha: f64, ci: &CiConfig) -> Result<ExperimentResult> {
    cell.validate()?;
    let intervals: Vec<(ConfInterval, Option<ConfInterval>)> = (0..cell.reps)
        .into_par_iter()
        .map(|rep| {
            let design = cell.design_for(rep)?;
            let y = gen_response(&design, signal, &cell.noise_for(cell.noise, rep))?;
            let data = Dataset::from_design(y, design)?;
            let inverted = invert_ci_with(&data, &cell.perms_for(rep), alpha, ci)?.interval;
            Ok((inverted, normal_ci(&data, alpha).ok()))
        })
        .collect::<Result<_>>()?;

    let mut result = ExperimentResult::new("coverage", cell, cell.noise);
    let summarize = |name: &str, cis: Vec<ConfInterval>| {
        let hits = cis.iter().filter(|c| c.contains(signal.beta)).count();
        let mut lengths: Vec<f64> = cis.iter().map(ConfInterval::length).collect();
        lengths.sort_by(f64::total_cmp);
        let mut row = rate_row(name, alpha, hits, cis.len().max(1));
        row.beta = Some(signal.beta);
        row.median_length = lengths.get(lengths.len() / 2).copied();
        row
    };
    result
        .rows
        .push(summarize("inversion", intervals.iter().map(|c| c.0).collect()));
    result
        .rows
        .push(summarize("normal", intervals.iter().filter_map(|c| c.1).collect()));
    Ok(result)
}
