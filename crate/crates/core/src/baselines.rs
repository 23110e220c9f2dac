//! Classical tests for the coefficient of `x` in `y ~ x + Z`.
//!
//! Every permutation baseline uses the F statistic of `x` and the comparison
//! rule `ω_b = 1{F_b > F_0} + ½·1{F_b = F_0}`, so its report has the same
//! shape as a PALMRT report. Degrees of freedom are `n - rank(x, Z, 1)`, i.e.
//! the intercept is counted among the covariates.
//!
//! | method  | permuted fit                              |
//! |---------|-------------------------------------------|
//! | perm    | `y ~ x_π + Z`                             |
//! | fl      | `[(I - H_Z) y]_π ~ x + Z`                 |
//! | kennedy | `[(I - H_Z) y]_π ~ (I - H_Z) x`           |
//! | braak   | `H_xZ y + [(I - H_xZ) y]_π ~ x + Z`       |

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, sum_sq, Basis, Projector, Residual, DEFAULT_RANK_TOL};
use crate::palmrt::DEFAULT_TIE_TOL;
use crate::perm::{PermStream, Permutation};
use crate::report::{Method, Omega, TestReport};

/// Numerator or residual sums of squares below this fraction of `||y||²`
/// are treated as exact zeros.
const ZERO_SS: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub tie_tol: f64,
    pub rank_tol: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            tie_tol: DEFAULT_TIE_TOL,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// F statistic from the explained and residual sums of squares.
fn f_value(num: f64, rss: f64, df: usize, scale_sq: f64) -> f64 {
    let floor = ZERO_SS * scale_sq;
    if num <= floor {
        0.0
    } else if rss <= floor {
        f64::INFINITY
    } else {
        num / (rss / df as f64)
    }
}

/// Ties are relative with an absolute floor of one unit; `+∞` ties only `+∞`.
fn compare_f(original: f64, permuted: f64, tie_tol: f64) -> Omega {
    let slack = if original.is_finite() && permuted.is_finite() {
        tie_tol * original.max(permuted).max(1.0)
    } else {
        0.0
    };
    Omega::compare(original, permuted, slack)
}

/// Shared reduced-model factorization `span(Z, 1)`.
struct Reduced {
    proj: Projector,
    n: usize,
    rank_tol: f64,
    scale_sq: f64,
}

impl Reduced {
    fn new(data: &Dataset, rank_tol: f64) -> Self {
        let design = data.design();
        let proj = Basis::from_trusted(data.n(), design.covariate_block(), rank_tol).factorize();
        Self {
            proj,
            n: data.n(),
            rank_tol,
            scale_sq: sum_sq(data.y()),
        }
    }

    /// Residual degrees of freedom of the full model.
    fn df(&self) -> Result<usize> {
        let rank = self.proj.rank() + 1;
        if self.n <= rank {
            return Err(Error::InsufficientDf { n: self.n, rank });
        }
        Ok(self.n - rank)
    }

    /// F statistic of the feature with reduced residual `w` for the response
    /// with reduced residual `v`.
    fn f_stat(&self, w: &Residual, v: &Residual, df: usize) -> f64 {
        if w.is_negligible(self.rank_tol) {
            return 0.0;
        }
        let c = w.dot(v);
        let num = c * c / w.norm_sq();
        f_value(num, v.deflated_ss(w, self.rank_tol), df, self.scale_sq)
    }
}

/// Classical F-test of `x` in `y ~ x + Z` against `F(1, n - rank(x, Z, 1))`.
pub fn f_test(data: &Dataset) -> Result<TestReport> {
    f_test_with(data, &BaselineConfig::default())
}

pub fn f_test_with(data: &Dataset, config: &BaselineConfig) -> Result<TestReport> {
    let reduced = Reduced::new(data, config.rank_tol);
    let df = reduced.df()?;
    let w = reduced.proj.residual(data.x());
    let f = reduced.f_stat(&w, &reduced.proj.residual(data.y()), df);
    let p_value = if f == 0.0 {
        1.0
    } else if f.is_infinite() {
        0.0
    } else {
        let dist =
            FisherSnedecor::new(1.0, df as f64).map_err(|e| Error::Inconsistency(format!("F distribution: {e}")))?;
        dist.sf(f)
    };
    let mut warnings = Vec::new();
    if w.is_negligible(config.rank_tol) {
        warnings.push("feature lies in the covariate span; the F statistic is 0".into());
    }
    Ok(TestReport {
        method: Method::FTest,
        variant: None,
        p_value,
        permutations: 0,
        seed: None,
        statistic: Some(f),
        omega_sum: 0.0,
        ledger: None,
        warnings,
    })
}

/// Original F statistic of `x`, the reduced factorization and df.
struct Prepared {
    reduced: Reduced,
    df: usize,
    x_tail: Residual,
    y_tail: Residual,
    original: f64,
}

impl Prepared {
    fn new(data: &Dataset, config: &BaselineConfig) -> Result<Self> {
        let reduced = Reduced::new(data, config.rank_tol);
        let df = reduced.df()?;
        let x_tail = reduced.proj.residual(data.x());
        let y_tail = reduced.proj.residual(data.y());
        let original = reduced.f_stat(&x_tail, &y_tail, df);
        Ok(Self {
            reduced,
            df,
            x_tail,
            y_tail,
            original,
        })
    }
}

type PermutedStat<'a> = Box<dyn Fn(&Prepared, &Permutation) -> f64 + Sync + 'a>;

fn run(
    method: Method,
    data: &Dataset,
    count: usize,
    perm_at: impl Fn(usize) -> Permutation + Sync,
    config: &BaselineConfig,
) -> Result<TestReport> {
    if count < 1 {
        return Err(Error::invalid("at least one permutation is required"));
    }
    let prepared = Prepared::new(data, config)?;
    let stat = permuted_stat(method, data, &prepared)?;
    let doubled: u64 = (0..count)
        .into_par_iter()
        .map(|b| compare_f(prepared.original, stat(&prepared, &perm_at(b)), config.tie_tol).doubled())
        .sum();
    let mut report = TestReport::from_omegas(method, doubled, count, None);
    report.statistic = Some(prepared.original);
    if prepared.x_tail.is_negligible(config.rank_tol) {
        report
            .warnings
            .push("feature lies in the covariate span; the test is degenerate".into());
    }
    if doubled == count as u64 {
        report
            .warnings
            .push("every permutation produced a tie; the test carries no information".into());
    }
    Ok(report)
}

fn permuted_stat<'a>(method: Method, data: &'a Dataset, prep: &Prepared) -> Result<PermutedStat<'a>> {
    Ok(match method {
        Method::Perm => Box::new(move |p: &Prepared, perm: &Permutation| {
            let w = p.reduced.proj.residual(&perm.apply_unchecked(data.x()));
            p.reduced.f_stat(&w, &p.y_tail, p.df)
        }),
        Method::FreedmanLane => {
            let r = prep.reduced.proj.expand(&prep.y_tail);
            Box::new(move |p: &Prepared, perm: &Permutation| {
                let v = p.reduced.proj.residual(&perm.apply_unchecked(&r));
                p.reduced.f_stat(&p.x_tail, &v, p.df)
            })
        }
        Method::Kennedy => {
            let r = prep.reduced.proj.expand(&prep.y_tail);
            let rx = prep.reduced.proj.expand(&prep.x_tail);
            let negligible = prep.x_tail.is_negligible(prep.reduced.rank_tol);
            let rx_ss = sum_sq(&rx);
            Box::new(move |p: &Prepared, perm: &Permutation| {
                if negligible {
                    return 0.0;
                }
                let v = perm.apply_unchecked(&r);
                let coef = dot(&rx, &v) / rx_ss;
                let num = coef * coef * rx_ss;
                let rss: f64 = v.iter().zip(&rx).map(|(a, b)| (a - coef * b).powi(2)).sum();
                f_value(num, rss, p.df, p.reduced.scale_sq)
            })
        }
        Method::TerBraak => {
            let mut full = Basis::from_trusted(data.n(), data.design().covariate_block(), prep.reduced.rank_tol);
            full.push_column(data.x())?;
            let e = full.factorize().residual_vector(data.y());
            let fitted: Vec<f64> = data.y().iter().zip(&e).map(|(y, e)| y - e).collect();
            Box::new(move |p: &Prepared, perm: &Permutation| {
                let pseudo: Vec<f64> = perm.as_slice().iter().zip(&fitted).map(|(&i, f)| f + e[i]).collect();
                let v = p.reduced.proj.residual(&pseudo);
                p.reduced.f_stat(&p.x_tail, &v, p.df)
            })
        }
        Method::Palmrt | Method::FTest => {
            return Err(Error::invalid(format!("{method} is not a permutation baseline")))
        }
    })
}

/// Permutation baseline `method` with `permutations` draws from `seed`.
pub fn baseline_test(
    method: Method,
    data: &Dataset,
    permutations: usize,
    seed: u64,
    config: &BaselineConfig,
) -> Result<TestReport> {
    let stream = PermStream::new(seed, data.n());
    let mut report = run(method, data, permutations, |b| stream.draw(b as u64), config)?;
    report.seed = Some(seed);
    Ok(report)
}

/// Permutation baseline over an explicit permutation list.
pub fn baseline_test_with(
    method: Method,
    data: &Dataset,
    perms: &[Permutation],
    config: &BaselineConfig,
) -> Result<TestReport> {
    for p in perms {
        if p.len() != data.n() {
            return Err(Error::DimensionMismatch {
                context: "permutation length",
                expected: data.n(),
                found: p.len(),
            });
        }
    }
    run(method, data, perms.len(), |b| perms[b].clone(), config)
}

pub fn perm_test(data: &Dataset, permutations: usize, seed: u64) -> Result<TestReport> {
    baseline_test(Method::Perm, data, permutations, seed, &BaselineConfig::default())
}

pub fn fl_test(data: &Dataset, permutations: usize, seed: u64) -> Result<TestReport> {
    baseline_test(
        Method::FreedmanLane,
        data,
        permutations,
        seed,
        &BaselineConfig::default(),
    )
}

pub fn kennedy_test(data: &Dataset, permutations: usize, seed: u64) -> Result<TestReport> {
    baseline_test(Method::Kennedy, data, permutations, seed, &BaselineConfig::default())
}

pub fn braak_test(data: &Dataset, permutations: usize, seed: u64) -> Result<TestReport> {
    baseline_test(Method::TerBraak, data, permutations, seed, &BaselineConfig::default())
}
