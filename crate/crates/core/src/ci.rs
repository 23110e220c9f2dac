//! Confidence intervals for `β` by inverting the residual-SS PALMRT test.
//!
//! Testing `β = β₀` amounts to running the test on `y - xβ₀`. For a fixed
//! permutation the permuted-side statistic does not depend on `β₀` and the
//! original-side one is the quadratic `c1 β² - 2 c2 β + c3`, so
//!
//! ```text
//! ω_b(β) = 1 on (s_b, u_b),  ½ at s_b and u_b,  0 elsewhere     (c1 > 0)
//! ```
//!
//! with `s_b ≤ u_b` the roots of `c1 β² - 2 c2 β + c3 - c4`. Permutations with
//! `c1 = 0` contribute a constant. The p-value as a function of `β` is then a
//! step function whose jumps sit at the sorted roots, and
//! `{β : p(β) > α}` is read off a single sweep.
//!
//! All counts are kept doubled so that the sweep is exact integer arithmetic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sum_sq, Basis};
use crate::palmrt::{PalmrtConfig, PermutedDesign, Variant, ROUNDING_SLACK};
use crate::perm::{PermStream, Permutation};
use crate::report::Omega;

/// Relative tolerance on a negative discriminant before it is treated as a
/// numerical violation rather than a tangent root. Rounding in `c3` and `c4`
/// is absorbed separately, scaled by their magnitude.
pub const DISCRIMINANT_TOL: f64 = 1e-9;

/// Relative distance below which two roots are the same threshold.
pub const MERGE_TOL: f64 = 1e-12;

/// How a permutation's `ω_b(β)` behaves as `β` varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairShape {
    /// `c1 > 0`: one on `(s, u)`, one half at the roots, zero elsewhere.
    Roots { s: f64, u: f64 },
    /// `c1 = 0`: constant `ω`.
    Constant { omega: Omega },
}

/// Per-permutation quantities of the quadratic in `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCoeffs {
    /// `||(I - H[x_π, Z, Z_π, 1]) x||²`.
    pub c1: f64,
    /// `xᵀ(I - H[x_π, Z, Z_π, 1]) y`.
    pub c2: f64,
    /// `||(I - H[x_π, Z, Z_π, 1]) y||²`.
    pub c3: f64,
    /// `||(I - H[x, Z, Z_π, 1]) y||²`.
    pub c4: f64,
    pub shape: PairShape,
}

impl PairCoeffs {
    /// `c2² - c1 (c3 - c4)` before clamping.
    pub fn discriminant(&self) -> f64 {
        self.c2 * self.c2 - self.c1 * (self.c3 - self.c4)
    }

    /// Original-side statistic for the hypothesis `β`.
    pub fn t_original(&self, beta: f64) -> f64 {
        self.c1 * beta * beta - 2.0 * self.c2 * beta + self.c3
    }

    pub fn omega_at(&self, beta: f64) -> Omega {
        match self.shape {
            PairShape::Constant { omega } => omega,
            PairShape::Roots { s, u } => {
                if beta == s || beta == u {
                    Omega::Half
                } else if s < beta && beta < u {
                    Omega::One
                } else {
                    Omega::Zero
                }
            }
        }
    }
}

/// Quadratic coefficients and roots for one permutation.
pub fn pair_coeffs(data: &Dataset, perm: &Permutation, config: &PalmrtConfig) -> Result<PairCoeffs> {
    config.validate()?;
    if perm.len() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "permutation length",
            expected: data.n(),
            found: perm.len(),
        });
    }
    let permuted = PermutedDesign::new(data.design(), perm, config.rank_tol);
    coeffs_from(&permuted, data.y(), config)
}

fn coeffs_from(permuted: &PermutedDesign, y: &[f64], config: &PalmrtConfig) -> Result<PairCoeffs> {
    let tol = config.rank_tol;
    let ty = permuted.response(y);
    let xp = permuted.x_perm_residual();
    let ex = permuted.x_residual().deflate(xp, tol);
    let ey = ty.deflate(xp, tol);
    let c3 = ty.deflated_ss(xp, tol);
    let c4 = ty.deflated_ss(permuted.x_residual(), tol);

    if ex.is_negligible(tol) {
        let slack = config.tie_tol * c3.max(c4) + ROUNDING_SLACK * ty.source_norm() * (c3.sqrt() + c4.sqrt());
        return Ok(PairCoeffs {
            c1: 0.0,
            c2: 0.0,
            c3,
            c4,
            shape: PairShape::Constant {
                omega: Omega::compare(c3, c4, slack),
            },
        });
    }

    let c1 = ex.norm_sq();
    let c2 = ex.dot(&ey);
    let gap = c3 - c4;
    let mut disc = c2 * c2 - c1 * gap;
    if disc < 0.0 {
        if disc >= -DISCRIMINANT_TOL * (c2 * c2 + c1 * gap.abs()) - MERGE_TOL * c1 * (c3.abs() + c4.abs()) {
            disc = 0.0;
        } else {
            return Err(Error::Inconsistency(format!(
                "negative discriminant {disc:e} (c1 = {c1:e}, c2 = {c2:e}, c3 = {c3:e}, c4 = {c4:e})"
            )));
        }
    }
    let (s, u) = stable_roots(c1, c2, gap, disc.sqrt());
    Ok(PairCoeffs {
        c1,
        c2,
        c3,
        c4,
        shape: PairShape::Roots { s, u },
    })
}

/// Roots of `c1 β² - 2 c2 β + gap` without cancellation.
fn stable_roots(c1: f64, c2: f64, gap: f64, sqrt_disc: f64) -> (f64, f64) {
    let q = if c2 >= 0.0 { c2 + sqrt_disc } else { c2 - sqrt_disc };
    if q == 0.0 {
        return (0.0, 0.0);
    }
    let (a, b) = (q / c1, gap / q);
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiKind {
    Bounded,
    Empty,
    AllReals,
}

impl CiKind {
    pub fn name(self) -> &'static str {
        match self {
            CiKind::Bounded => "bounded",
            CiKind::Empty => "empty",
            CiKind::AllReals => "all_reals",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfInterval {
    pub kind: CiKind,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub alpha: f64,
    pub fallback_used: bool,
}

impl ConfInterval {
    pub fn bounded(lo: f64, hi: f64, alpha: f64) -> Self {
        debug_assert!(lo <= hi);
        Self {
            kind: CiKind::Bounded,
            lo: Some(lo),
            hi: Some(hi),
            alpha,
            fallback_used: false,
        }
    }

    pub fn empty(alpha: f64) -> Self {
        Self {
            kind: CiKind::Empty,
            lo: None,
            hi: None,
            alpha,
            fallback_used: false,
        }
    }

    pub fn all_reals(alpha: f64) -> Self {
        Self {
            kind: CiKind::AllReals,
            lo: None,
            hi: None,
            alpha,
            fallback_used: false,
        }
    }

    pub fn contains(&self, beta: f64) -> bool {
        match self.kind {
            CiKind::AllReals => true,
            CiKind::Empty => false,
            CiKind::Bounded => self.lo.unwrap() <= beta && beta <= self.hi.unwrap(),
        }
    }

    /// `hi - lo`, infinite for the whole line and zero for the empty set.
    pub fn length(&self) -> f64 {
        match self.kind {
            CiKind::AllReals => f64::INFINITY,
            CiKind::Empty => 0.0,
            CiKind::Bounded => self.hi.unwrap() - self.lo.unwrap(),
        }
    }
}

/// Sorted thresholds with their multiplicities and the swept step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalLedger {
    pub permutations: usize,
    pub alpha: f64,
    /// `t_1 < ... < t_M`.
    pub thresholds: Vec<f64>,
    /// Number of lower roots at each threshold.
    pub m_s: Vec<u32>,
    /// Number of upper roots at each threshold.
    pub m_u: Vec<u32>,
    /// Number of pairs whose two roots coincide at each threshold.
    pub m_t: Vec<u32>,
    /// `2 f(t_l)`.
    pub f_at: Vec<i64>,
    /// `2 f(t_l⁺)`.
    pub f_after: Vec<i64>,
    /// `2γ = 2(B+1)α - 2 - 2|A2| - |A3|`.
    pub gamma_doubled: f64,
    pub a1: usize,
    pub a2: usize,
    pub a3: usize,
    /// Threshold indices `(s, u)` of each pair in `A1`.
    #[serde(skip)]
    pub pair_index: Vec<(usize, usize)>,
}

impl CriticalLedger {
    pub fn gamma(&self) -> f64 {
        self.gamma_doubled / 2.0
    }

    /// `2 f(β)` evaluated directly from each pair's roots.
    pub fn f_direct_doubled(&self, beta: f64) -> i64 {
        let t = &self.thresholds;
        self.pair_index
            .iter()
            .map(|&(ls, lu)| {
                if ls == lu {
                    return i64::from(t[ls] == beta);
                }
                let (s, u) = (t[ls], t[lu]);
                i64::from(s <= beta) + i64::from(s < beta) - i64::from(u <= beta) - i64::from(u < beta)
            })
            .sum()
    }

    fn sweep(&mut self) {
        let m = self.thresholds.len();
        self.f_at = Vec::with_capacity(m);
        self.f_after = Vec::with_capacity(m);
        let mut g_after = 0i64;
        for l in 0..m {
            let step = i64::from(self.m_s[l]) - i64::from(self.m_u[l]);
            let g_at = g_after + step;
            g_after = g_at + step;
            self.f_at.push(g_at + i64::from(self.m_t[l]));
            self.f_after.push(g_after);
        }
    }

    fn interval(&self) -> ConfInterval {
        let gamma = self.gamma_doubled;
        if gamma < 0.0 {
            return ConfInterval::all_reals(self.alpha);
        }
        let above = |v: i64| v as f64 > gamma;
        let lo = (0..self.thresholds.len()).find(|&l| above(self.f_at[l]) || above(self.f_after[l]));
        let hi = (0..self.thresholds.len())
            .rev()
            .find(|&l| above(self.f_at[l]) || (l > 0 && above(self.f_after[l - 1])));
        match (lo, hi) {
            (Some(lo), Some(hi)) => ConfInterval::bounded(self.thresholds[lo], self.thresholds[hi], self.alpha),
            _ => ConfInterval::empty(self.alpha),
        }
    }
}

/// What to report when the inverted set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    #[default]
    Report,
    /// Replace an empty set by the normal-theory interval.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiConfig {
    pub palmrt: PalmrtConfig,
    pub on_empty: EmptyPolicy,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            palmrt: PalmrtConfig::default(),
            on_empty: EmptyPolicy::Report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub interval: ConfInterval,
    pub ledger: CriticalLedger,
    pub pairs: Vec<PairCoeffs>,
}

impl CiResult {
    /// `(1 + Σ ω_b(β)) / (B + 1)`, the p-value for the hypothesis `β`.
    pub fn p_value_at(&self, beta: f64) -> f64 {
        let doubled: u64 = self.pairs.iter().map(|c| c.omega_at(beta).doubled()).sum();
        crate::report::conformal_p_value(doubled, self.pairs.len())
    }
}

/// Exact inversion with `permutations` draws from `seed`; uses the same
/// permutations as [`crate::palmrt::palmrt_test`] with the same arguments.
pub fn invert_ci(data: &Dataset, permutations: usize, seed: u64, alpha: f64, config: &CiConfig) -> Result<CiResult> {
    if permutations < 1 {
        return Err(Error::invalid("at least one permutation is required"));
    }
    let stream = PermStream::new(seed, data.n());
    invert(data, permutations, |b| stream.draw(b as u64), alpha, config)
}

pub fn invert_ci_with(data: &Dataset, perms: &[Permutation], alpha: f64, config: &CiConfig) -> Result<CiResult> {
    if perms.is_empty() {
        return Err(Error::invalid("at least one permutation is required"));
    }
    if let Some(p) = perms.iter().find(|p| p.len() != data.n()) {
        return Err(Error::DimensionMismatch {
            context: "permutation length",
            expected: data.n(),
            found: p.len(),
        });
    }
    invert(data, perms.len(), |b| perms[b].clone(), alpha, config)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn invert(
    data: &Dataset,
    count: usize,
    perm_at: impl Fn(usize) -> Permutation + Sync,
    alpha: f64,
    config: &CiConfig,
) -> Result<CiResult> {
    check_alpha(alpha)?;
    config.palmrt.validate()?;
    if config.palmrt.variant != Variant::ResidualSs {
        return Err(Error::invalid("interval inversion needs the residual statistic"));
    }
    let pairs: Vec<PairCoeffs> = (0..count)
        .into_par_iter()
        .map(|b| {
            let permuted = PermutedDesign::new(data.design(), &perm_at(b), config.palmrt.rank_tol);
            coeffs_from(&permuted, data.y(), &config.palmrt)
        })
        .collect::<Result<_>>()?;

    let beta_scale = sum_sq(data.y()).sqrt() / sum_sq(data.x()).sqrt().max(f64::MIN_POSITIVE);
    let ledger = build_ledger(&pairs, alpha, beta_scale);
    let mut interval = ledger.interval();
    if interval.kind == CiKind::Empty && config.on_empty == EmptyPolicy::Normal {
        if let Ok(mut normal) = normal_ci(data, alpha) {
            normal.fallback_used = true;
            interval = normal;
        }
    }
    Ok(CiResult {
        interval,
        ledger,
        pairs,
    })
}

/// Sorts and merges the roots of `A1` and sweeps the step function.
pub fn build_ledger(pairs: &[PairCoeffs], alpha: f64, beta_scale: f64) -> CriticalLedger {
    let (mut a2, mut a3) = (0, 0);
    // (value, pair, is_upper)
    let mut roots: Vec<(f64, usize, bool)> = Vec::new();
    let mut a1 = 0;
    for c in pairs {
        match c.shape {
            PairShape::Constant { omega: Omega::One } => a2 += 1,
            PairShape::Constant { omega: Omega::Half } => a3 += 1,
            PairShape::Constant { omega: Omega::Zero } => {}
            PairShape::Roots { s, u } => {
                roots.push((s, a1, false));
                roots.push((u, a1, true));
                a1 += 1;
            }
        }
    }
    roots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    let floor = MERGE_TOL * beta_scale;
    let mut thresholds: Vec<f64> = Vec::new();
    let mut group_of = vec![0usize; roots.len()];
    for (i, &(v, _, _)) in roots.iter().enumerate() {
        let merge = thresholds
            .last()
            .is_some_and(|&last: &f64| (v - last).abs() <= MERGE_TOL * v.abs().max(last.abs()) + floor);
        if !merge {
            thresholds.push(v);
        }
        group_of[i] = thresholds.len() - 1;
    }

    let m = thresholds.len();
    let (mut m_s, mut m_u, mut m_t) = (vec![0u32; m], vec![0u32; m], vec![0u32; m]);
    let mut pair_index = vec![(0usize, 0usize); a1];
    for (i, &(_, pair, upper)) in roots.iter().enumerate() {
        if upper {
            pair_index[pair].1 = group_of[i];
        } else {
            pair_index[pair].0 = group_of[i];
        }
    }
    for &(ls, lu) in &pair_index {
        if ls == lu {
            m_t[ls] += 1;
        } else {
            m_s[ls] += 1;
            m_u[lu] += 1;
        }
    }

    let b = pairs.len();
    let gamma_doubled = 2.0 * (b as f64 + 1.0) * alpha - 2.0 - 2.0 * a2 as f64 - a3 as f64;
    let mut ledger = CriticalLedger {
        permutations: b,
        alpha,
        thresholds,
        m_s,
        m_u,
        m_t,
        f_at: Vec::new(),
        f_after: Vec::new(),
        gamma_doubled,
        a1,
        a2,
        a3,
        pair_index,
    };
    ledger.sweep();
    ledger
}

/// `β̂ ± t_{1-α/2, df} · SE` from the OLS fit of `y ~ x + Z`.
pub fn normal_ci(data: &Dataset, alpha: f64) -> Result<ConfInterval> {
    check_alpha(alpha)?;
    let rank_tol = crate::linalg::DEFAULT_RANK_TOL;
    let reduced = Basis::from_trusted(data.n(), data.design().covariate_block(), rank_tol).factorize();
    let tx = reduced.residual(data.x());
    if tx.is_negligible(rank_tol) {
        return Err(Error::invalid(
            "the feature lies in the covariate span; its coefficient is not identifiable",
        ));
    }
    let rank = reduced.rank() + 1;
    if data.n() <= rank {
        return Err(Error::InsufficientDf { n: data.n(), rank });
    }
    let df = (data.n() - rank) as f64;
    let ty = reduced.residual(data.y());
    let sxx = tx.norm_sq();
    let beta = tx.dot(&ty) / sxx;
    let rss = ty.deflated_ss(&tx, rank_tol);
    let se = (rss / df / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Inconsistency(format!("t distribution: {e}")))?
        .inverse_cdf(1.0 - alpha / 2.0);
    Ok(ConfInterval::bounded(beta - t * se, beta + t * se, alpha))
}

/// OLS coefficient of `x` and its standard error in `y ~ x + Z`.
pub fn ols_estimate(data: &Dataset) -> Result<(f64, f64)> {
    let rank_tol = crate::linalg::DEFAULT_RANK_TOL;
    let reduced = Basis::from_trusted(data.n(), data.design().covariate_block(), rank_tol).factorize();
    let tx = reduced.residual(data.x());
    if tx.is_negligible(rank_tol) {
        return Err(Error::invalid("the feature lies in the covariate span"));
    }
    let rank = reduced.rank() + 1;
    if data.n() <= rank {
        return Err(Error::InsufficientDf { n: data.n(), rank });
    }
    let ty = reduced.residual(data.y());
    let sxx = tx.norm_sq();
    let rss = ty.deflated_ss(&tx, rank_tol);
    Ok((tx.dot(&ty) / sxx, (rss / (data.n() - rank) as f64 / sxx).sqrt()))
}
