//! Permutation-augmented regression test (PALMRT).
//!
//! For each random permutation `π` the response is regressed on two augmented
//! designs that share `Z` and `Z_π` and differ only in carrying `x` or `x_π`.
//! The residual sum of squares with `x_π` is the original-side statistic
//! `T_0b`, the one with `x` is the permuted-side statistic `T_b0`, and
//!
//! ```text
//! ω_b = 1{T_b0 > T_0b} + ½·1{T_b0 = T_0b},     p = (1 + Σ ω_b) / (B + 1).
//! ```
//!
//! Under the null and exchangeable noise, `P(p ≤ α) < 2α` for every design.
//!
//! Two other paired constructions share the same p-value machinery and the
//! same transferability property ([`Variant`]). All three only need the
//! factorization of `span(Z, Z_π, 1)`; `x` and `x_π` enter as rank-one
//! augmentations of that span.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Design};
use crate::error::{Error, Result};
use crate::linalg::{Basis, Projector, Residual, DEFAULT_RANK_TOL};
use crate::perm::{PermStream, Permutation};
use crate::report::{conformal_p_value, Method, Omega, PairedStat, TestReport};

/// Default relative tolerance for declaring a statistic pair tied.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// Absolute slack, in units of the rounding error of the projections,
/// added to the tie tolerance so that structurally equal statistics reached
/// through different factorizations still tie.
pub const ROUNDING_SLACK: f64 = 1e-12;

/// Sign convention for the coefficient statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TwoSided,
    /// Evidence for a positive coefficient only.
    Positive,
    /// Evidence for a negative coefficient only.
    Negative,
}

/// Paired statistic construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `T_0b = ||(I - H[x_π, Z, Z_π])y||²`, `T_b0 = ||(I - H[x, Z, Z_π])y||²`.
    ResidualSs,
    /// Coefficient of `x` in `y ~ x + Z + Z_π` against that of `x_π` in
    /// `y ~ x_π + Z + Z_π`.
    Coefficient(Direction),
    /// Residual inner products `|xᵀ(I - H[Z, Z_π])y|` against
    /// `|x_πᵀ(I - H[Z, Z_π])y|`.
    EmpiricalRpt,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::ResidualSs => "residual",
            Variant::Coefficient(Direction::TwoSided) => "coef",
            Variant::Coefficient(Direction::Positive) => "coef+",
            Variant::Coefficient(Direction::Negative) => "coef-",
            Variant::EmpiricalRpt => "rpt",
        }
    }

    pub const ALL: [Variant; 5] = [
        Variant::ResidualSs,
        Variant::Coefficient(Direction::TwoSided),
        Variant::Coefficient(Direction::Positive),
        Variant::Coefficient(Direction::Negative),
        Variant::EmpiricalRpt,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown statistic variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalmrtConfig {
    pub variant: Variant,
    pub tie_tol: f64,
    pub rank_tol: f64,
    /// Keep every [`PairedStat`] in the report.
    pub keep_ledger: bool,
}

impl Default for PalmrtConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ResidualSs,
            tie_tol: DEFAULT_TIE_TOL,
            rank_tol: DEFAULT_RANK_TOL,
            keep_ledger: false,
        }
    }
}

impl PalmrtConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tie_tol >= 0.0 && self.tie_tol.is_finite()) {
            return Err(Error::invalid(format!("tie_tol must be >= 0, got {}", self.tie_tol)));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol.is_finite()) {
            return Err(Error::invalid(format!("rank_tol must be > 0, got {}", self.rank_tol)));
        }
        Ok(())
    }
}

/// The response-free part of one permutation: the factorized span
/// `(Z, Z_π, 1)` and the residuals of `x` and `x_π` against it.
#[derive(Debug, Clone)]
pub struct PermutedDesign {
    base: Projector,
    x: Residual,
    x_perm: Residual,
    rank_tol: f64,
}

impl PermutedDesign {
    pub fn new(design: &Design, perm: &Permutation, rank_tol: f64) -> Self {
        let n = design.n();
        let mut block = Vec::with_capacity(n * (2 * design.p() + 1));
        for col in design.z() {
            block.extend_from_slice(col);
        }
        for col in design.z() {
            block.extend(perm.as_slice().iter().map(|&i| col[i]));
        }
        if design.intercept() {
            block.extend(std::iter::repeat_n(1.0, n));
        }
        let base = Basis::from_trusted(n, block, rank_tol).factorize();
        let x_perm = perm.apply_unchecked(design.x());
        Self {
            x: base.residual(design.x()),
            x_perm: base.residual(&x_perm),
            base,
            rank_tol,
        }
    }

    pub fn base(&self) -> &Projector {
        &self.base
    }

    /// Residual of `x` against `span(Z, Z_π, 1)`.
    pub fn x_residual(&self) -> &Residual {
        &self.x
    }

    /// Residual of `x_π` against `span(Z, Z_π, 1)`.
    pub fn x_perm_residual(&self) -> &Residual {
        &self.x_perm
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn response(&self, y: &[f64]) -> Residual {
        self.base.residual(y)
    }

    /// Statistic pair for a response already reduced by [`Self::response`].
    pub fn pair(&self, y: &Residual, variant: Variant, tie_tol: f64) -> PairedStat {
        let y_norm = y.source_norm();
        let (t_0b, t_b0, slack) = match variant {
            Variant::ResidualSs => {
                let t0 = y.deflated_ss(&self.x_perm, self.rank_tol);
                let tb = y.deflated_ss(&self.x, self.rank_tol);
                let slack = tie_tol * t0.max(tb) + ROUNDING_SLACK * y_norm * (t0.sqrt() + tb.sqrt());
                (t0, tb, slack)
            }
            Variant::Coefficient(direction) => {
                let (c0, inv0) = self.coefficient(&self.x, y);
                let (cb, invb) = self.coefficient(&self.x_perm, y);
                let (t0, tb) = match direction {
                    Direction::TwoSided => (c0.abs(), cb.abs()),
                    Direction::Positive => (c0, cb),
                    Direction::Negative => (-c0, -cb),
                };
                let slack = tie_tol * t0.abs().max(tb.abs()) + ROUNDING_SLACK * y_norm * (inv0 + invb);
                // Larger original coefficient is evidence; flip so that the
                // shared rule `ω = 1{T_b0 > T_0b}` applies.
                (t0, tb, slack)
            }
            Variant::EmpiricalRpt => {
                let t0 = self.x.dot(y).abs();
                let tb = self.x_perm.dot(y).abs();
                let slack =
                    tie_tol * t0.max(tb) + ROUNDING_SLACK * y_norm * (self.x.source_norm() + self.x_perm.source_norm());
                (t0, tb, slack)
            }
        };
        PairedStat {
            t_0b,
            t_b0,
            omega: Omega::compare(t_0b, t_b0, slack),
        }
    }

    /// OLS coefficient of the feature whose residual is `feature`, and the
    /// reciprocal residual norm (0 when the feature is not identifiable).
    fn coefficient(&self, feature: &Residual, y: &Residual) -> (f64, f64) {
        if feature.is_negligible(self.rank_tol) {
            return (0.0, 0.0);
        }
        let ss = feature.norm_sq();
        (feature.dot(y) / ss, 1.0 / ss.sqrt())
    }
}

/// Statistic pair of `data` for a single permutation.
pub fn palmrt_pair(data: &Dataset, perm: &Permutation, config: &PalmrtConfig) -> Result<PairedStat> {
    config.validate()?;
    check_perm(data.n(), perm)?;
    let permuted = PermutedDesign::new(data.design(), perm, config.rank_tol);
    let y = permuted.response(data.y());
    Ok(permuted.pair(&y, config.variant, config.tie_tol))
}

/// PALMRT with `permutations` draws from the counter-based stream of `seed`.
pub fn palmrt_test(data: &Dataset, permutations: usize, seed: u64, config: &PalmrtConfig) -> Result<TestReport> {
    if permutations < 1 {
        return Err(Error::invalid("at least one permutation is required"));
    }
    let stream = PermStream::new(seed, data.n());
    let mut report = run_pairs(data, permutations, |b| stream.draw(b as u64), config)?;
    report.seed = Some(seed);
    Ok(report)
}

/// PALMRT over an explicit permutation list (e.g. a full enumeration).
pub fn palmrt_test_with(data: &Dataset, perms: &[Permutation], config: &PalmrtConfig) -> Result<TestReport> {
    if perms.is_empty() {
        return Err(Error::invalid("at least one permutation is required"));
    }
    for p in perms {
        check_perm(data.n(), p)?;
    }
    run_pairs(data, perms.len(), |b| perms[b].clone(), config)
}

fn run_pairs<F>(data: &Dataset, count: usize, perm_at: F, config: &PalmrtConfig) -> Result<TestReport>
where
    F: Fn(usize) -> Permutation + Sync,
{
    config.validate()?;
    let design = data.design();
    let pairs: Vec<PairedStat> = (0..count)
        .into_par_iter()
        .map(|b| {
            let permuted = PermutedDesign::new(design, &perm_at(b), config.rank_tol);
            let y = permuted.response(data.y());
            permuted.pair(&y, config.variant, config.tie_tol)
        })
        .collect();

    let doubled: u64 = pairs.iter().map(|s| s.omega.doubled()).sum();
    let mut report = TestReport::from_omegas(Method::Palmrt, doubled, count, None);
    report.variant = Some(config.variant.name().to_string());
    report.warnings = degeneracy_warnings(design, &pairs);
    if config.keep_ledger {
        report.ledger = Some(pairs);
    }
    Ok(report)
}

fn degeneracy_warnings(design: &Design, pairs: &[PairedStat]) -> Vec<String> {
    let mut warnings = Vec::new();
    let p = design.p() + usize::from(design.intercept());
    if design.n() <= 2 * p + 1 {
        warnings.push(format!(
            "n = {} is at most 2p + 1 = {}; the augmented designs may span R^n",
            design.n(),
            2 * p + 1
        ));
    }
    if pairs.iter().all(|s| s.omega == Omega::Half) {
        warnings.push("every permutation produced a tie; the test carries no information".into());
    }
    warnings
}

/// p-values for many responses sharing one design and one permutation set.
///
/// Each permutation is factorized once and reused for every response.
pub fn palmrt_p_values<Y: AsRef<[f64]>>(
    design: &Design,
    responses: &[Y],
    perms: &[Permutation],
    config: &PalmrtConfig,
) -> Vec<f64> {
    let mut doubled = vec![0u64; responses.len()];
    for perm in perms {
        let permuted = PermutedDesign::new(design, perm, config.rank_tol);
        for (acc, y) in doubled.iter_mut().zip(responses) {
            let r = permuted.response(y.as_ref());
            *acc += permuted.pair(&r, config.variant, config.tie_tol).omega.doubled();
        }
    }
    doubled.into_iter().map(|d| conformal_p_value(d, perms.len())).collect()
}

fn check_perm(n: usize, perm: &Permutation) -> Result<()> {
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            context: "permutation length",
            expected: n,
            found: perm.len(),
        });
    }
    Ok(())
}

/// The bivariate function `T(π₁, π₂; x, Z, ε)` behind each variant,
/// evaluated from scratch on the permuted columns:
///
/// * residual SS: `||(I - H[x_π₂, Z_π₂, Z_π₁, 1])ε||²`
/// * coefficient: coefficient of `x_π₂` in `ε ~ x_π₂ + Z_π₂ + Z_π₁ (+1)`
/// * empirical RPT: `|x_π₂ᵀ(I - H[Z_π₁, Z_π₂, 1])ε|`
///
/// With `π₀` the identity, a statistic pair from [`palmrt_pair`] under
/// `y = ε` equals `(T(π₀, π), T(π, π₀))` for the residual form and
/// `(T(π, π₀), T(π₀, π))` for the other two.
pub fn bivariate_statistic(
    variant: Variant,
    design: &Design,
    noise: &[f64],
    pi1: &Permutation,
    pi2: &Permutation,
    rank_tol: f64,
) -> Result<f64> {
    let n = design.n();
    check_perm(n, pi1)?;
    check_perm(n, pi2)?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let z2 = pi2.apply_rows(design.z())?;
    let z1 = pi1.apply_rows(design.z())?;
    let x2 = pi2.apply(design.x())?;
    cols.extend(z2);
    cols.extend(z1);
    if design.intercept() {
        cols.push(vec![1.0; n]);
    }
    let base = Basis::from_columns(n, &cols)?.with_rank_tol(rank_tol)?;
    let value = match variant {
        Variant::ResidualSs => {
            let mut with_x = base.clone();
            with_x.push_column(&x2)?;
            with_x.residual_ss(noise)?
        }
        Variant::Coefficient(direction) => {
            let proj = base.factorize();
            let rx = proj.residual(&x2);
            let coef = if rx.is_negligible(rank_tol) {
                0.0
            } else {
                rx.dot(&proj.residual(noise)) / rx.norm_sq()
            };
            match direction {
                Direction::TwoSided => coef.abs(),
                Direction::Positive => coef,
                Direction::Negative => -coef,
            }
        }
        Variant::EmpiricalRpt => {
            let proj = base.factorize();
            proj.residual(&x2).dot(&proj.residual(noise)).abs()
        }
    };
    Ok(value)
}

/// Outcome of [`transferability_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferabilityReport {
    pub trials: usize,
    pub failures: usize,
    pub max_rel_err: f64,
}

impl TransferabilityReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Checks `T(π₁, π₂; ε_σ) = T(π₁∘σ⁻¹, π₂∘σ⁻¹; ε)` on random Gaussian
/// instances with `n` rows and `p` covariates.
pub fn transferability_check(
    variant: Variant,
    n: usize,
    p: usize,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<TransferabilityReport> {
    use rand::Rng;
    use rand_distr::StandardNormal;

    if n == 0 || n > 12 {
        return Err(Error::invalid("transferability check expects 1 <= n <= 12"));
    }
    let perms = PermStream::new(seed, n);
    let mut failures = 0;
    let mut max_rel_err: f64 = 0.0;
    for t in 0..trials {
        let mut rng = crate::perm::counter_rng(seed ^ 0x7472_616e_7366, t as u64);
        let mut gauss = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
        let x = gauss(n);
        let z: Vec<Vec<f64>> = (0..p).map(|_| gauss(n)).collect();
        let eps = gauss(n);
        let design = Design::new(x, z, true)?;
        let base = 3 * t as u64;
        let (pi1, pi2, sigma) = (perms.draw(base), perms.draw(base + 1), perms.draw(base + 2));
        let sigma_inv = sigma.inverse();

        let lhs = bivariate_statistic(variant, &design, &sigma.apply(&eps)?, &pi1, &pi2, DEFAULT_RANK_TOL)?;
        let rhs = bivariate_statistic(
            variant,
            &design,
            &eps,
            &pi1.compose(&sigma_inv)?,
            &pi2.compose(&sigma_inv)?,
            DEFAULT_RANK_TOL,
        )?;
        let scale = lhs.abs().max(rhs.abs());
        let err = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
        max_rel_err = max_rel_err.max(err);
        if err > tol {
            failures += 1;
        }
    }
    Ok(TransferabilityReport {
        trials,
        failures,
        max_rel_err,
    })
}

/// Rows of the pairwise comparison matrix built from a square matrix `t`
/// whose row sums are at most `(B+1)α`, where `B + 1 = t.len()`.
///
/// `W_lk = 1{t_kl > t_lk} + ½·1{t_kl = t_lk}` for `l ≠ k` and `W_ll = 1`.
/// For any `t` the count is below `2α(B+1)`.
pub fn low_row_sum_count(t: &[Vec<f64>], alpha: f64) -> usize {
    let m = t.len();
    let threshold = 2.0 * alpha * m as f64;
    (0..m)
        .filter(|&l| {
            let doubled: u64 = 2
                + (0..m)
                    .filter(|&k| k != l)
                    .map(|k| Omega::compare(t[l][k], t[k][l], 0.0).doubled())
                    .sum::<u64>();
            doubled as f64 <= threshold
        })
        .count()
}
