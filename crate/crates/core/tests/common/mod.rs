//! Slow reference implementations built on dense pseudo-inverses. None of
//! this shares code with the library's factorizations.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use palmrt::ci::{CiKind, ConfInterval};
use palmrt::perm::counter_rng;
use palmrt::{Dataset, Method, Permutation};
use rand::Rng;
use rand_distr::StandardNormal;

pub const ORACLE_TIE: f64 = 1e-8;

pub fn gaussian(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = counter_rng(seed, stream);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_dataset(seed: u64, n: usize, p: usize, beta: f64) -> Dataset {
    let x = gaussian(seed, 1, n);
    let z: Vec<Vec<f64>> = (0..p).map(|j| gaussian(seed, 10 + j as u64, n)).collect();
    let e = gaussian(seed, 2, n);
    let y = x.iter().zip(&e).map(|(x, e)| beta * x + e).collect();
    Dataset::new(y, x, z, true).unwrap()
}

pub fn permute(perm: &Permutation, v: &[f64]) -> Vec<f64> {
    perm.as_slice().iter().map(|&i| v[i]).collect()
}

/// `(I - A A⁺) v` via an SVD pseudo-inverse.
pub fn resid(cols: &[Vec<f64>], v: &[f64]) -> DVector<f64> {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    if cols.is_empty() {
        return vv;
    }
    let a = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let pinv = a.clone().pseudo_inverse(1e-10 * a.norm().max(1e-300)).unwrap();
    &vv - &a * (pinv * &vv)
}

pub fn rss(cols: &[Vec<f64>], v: &[f64]) -> f64 {
    resid(cols, v).norm_squared()
}

pub fn rank(cols: &[Vec<f64>]) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let n = cols[0].len();
    let a = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let sv = a.singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-9 * top).count()
}

fn covariates(data: &Dataset) -> Vec<Vec<f64>> {
    let mut cols = data.z().to_vec();
    if data.intercept() {
        cols.push(vec![1.0; data.n()]);
    }
    cols
}

fn omega_doubled(original: f64, permuted: f64, abs_floor: f64) -> u64 {
    let scale = original.abs().max(permuted.abs());
    if original == permuted || (original - permuted).abs() <= ORACLE_TIE * scale + abs_floor {
        1
    } else if permuted > original {
        2
    } else {
        0
    }
}

/// `(T_0b, T_b0)` for the residual statistic.
pub fn palmrt_pair(data: &Dataset, perm: &Permutation) -> (f64, f64) {
    let zc = covariates(data);
    let mut base = zc.clone();
    base.extend(data.z().iter().map(|c| permute(perm, c)));
    let mut with_xp = vec![permute(perm, data.x())];
    with_xp.extend(base.iter().cloned());
    let mut with_x = vec![data.x().to_vec()];
    with_x.extend(base);
    (rss(&with_xp, data.y()), rss(&with_x, data.y()))
}

pub fn palmrt_p(data: &Dataset, perms: &[Permutation]) -> f64 {
    let floor = 1e-10 * data.y().iter().map(|v| v * v).sum::<f64>();
    let sum: u64 = perms
        .iter()
        .map(|p| {
            let (t0, tb) = palmrt_pair(data, p);
            omega_doubled(t0, tb, floor)
        })
        .sum();
    (2 + sum) as f64 / (2 * (perms.len() + 1)) as f64
}

/// F statistic of `w` for response `v` with covariate columns `cov`.
pub fn f_stat(v: &[f64], w: &[f64], cov: &[Vec<f64>], scale_sq: f64) -> f64 {
    let mut full = vec![w.to_vec()];
    full.extend(cov.iter().cloned());
    let r_full = rank(&full);
    if r_full == rank(cov) {
        return 0.0;
    }
    let df = (v.len() - r_full) as f64;
    let reduced = rss(cov, v);
    let res = rss(&full, v);
    let num = (reduced - res).max(0.0);
    if num <= 1e-16 * scale_sq {
        0.0
    } else if res <= 1e-16 * scale_sq {
        f64::INFINITY
    } else {
        num / (res / df)
    }
}

/// Original and permuted F statistics of one baseline.
pub fn baseline_stats(method: Method, data: &Dataset, perm: &Permutation) -> (f64, f64) {
    let cov = covariates(data);
    let (y, x) = (data.y(), data.x());
    let scale = y.iter().map(|v| v * v).sum::<f64>();
    let original = f_stat(y, x, &cov, scale);
    let permuted = match method {
        Method::Perm => f_stat(y, &permute(perm, x), &cov, scale),
        Method::FreedmanLane => {
            let r: Vec<f64> = resid(&cov, y).iter().copied().collect();
            f_stat(&permute(perm, &r), x, &cov, scale)
        }
        Method::Kennedy => {
            let r: Vec<f64> = resid(&cov, y).iter().copied().collect();
            let rx: Vec<f64> = resid(&cov, x).iter().copied().collect();
            let rp = permute(perm, &r);
            if rx.iter().map(|v| v * v).sum::<f64>() <= 1e-20 * x.iter().map(|v| v * v).sum::<f64>() {
                0.0
            } else {
                let df = (data.n() - rank(&cov) - 1) as f64;
                let res = rss(std::slice::from_ref(&rx), &rp);
                let num = rp.iter().map(|v| v * v).sum::<f64>() - res;
                if num <= 1e-16 * scale {
                    0.0
                } else if res <= 1e-16 * scale {
                    f64::INFINITY
                } else {
                    num / (res / df)
                }
            }
        }
        Method::TerBraak => {
            let mut full = vec![x.to_vec()];
            full.extend(cov.iter().cloned());
            let e: Vec<f64> = resid(&full, y).iter().copied().collect();
            let ep = permute(perm, &e);
            let pseudo: Vec<f64> = (0..y.len()).map(|i| y[i] - e[i] + ep[i]).collect();
            f_stat(&pseudo, x, &cov, scale)
        }
        _ => unreachable!(),
    };
    (original, permuted)
}

pub fn baseline_p(method: Method, data: &Dataset, perms: &[Permutation]) -> f64 {
    let sum: u64 = perms
        .iter()
        .map(|p| {
            let (o, b) = baseline_stats(method, data, p);
            if o.is_infinite() || b.is_infinite() {
                omega_doubled(o, b, 0.0)
            } else {
                omega_doubled(o, b, 1e-9)
            }
        })
        .sum();
    (2 + sum) as f64 / (2 * (perms.len() + 1)) as f64
}

/// OLS coefficient of `x` and its standard error.
pub fn ols(data: &Dataset) -> (f64, f64) {
    try_ols(data).expect("singular design")
}

/// `None` when `[x, Z, 1]` is rank deficient.
pub fn try_ols(data: &Dataset) -> Option<(f64, f64)> {
    let n = data.n();
    let mut cols = vec![data.x().to_vec()];
    cols.extend(covariates(data));
    let k = cols.len();
    let a = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    let y = DVector::from_column_slice(data.y());
    if rank(&cols) < cols.len() {
        return None;
    }
    let gram_inv = (a.transpose() * &a).try_inverse()?;
    let beta = &gram_inv * a.transpose() * &y;
    let res = (&y - &a * &beta).norm_squared();
    let sigma2 = res / (n - k) as f64;
    Some((beta[0], (sigma2 * gram_inv[(0, 0)]).sqrt()))
}

/// Per-permutation pieces for the grid oracle.
pub struct GridPair {
    /// Residuals of `y` and `x` against `span(x_π, Z, Z_π, 1)`.
    pub ry: DVector<f64>,
    pub rx: DVector<f64>,
    /// `||(I - H[x, Z, Z_π, 1]) y||²`.
    pub tb: f64,
}

pub fn grid_pairs(data: &Dataset, perms: &[Permutation]) -> Vec<GridPair> {
    let zc = covariates(data);
    perms
        .iter()
        .map(|perm| {
            let mut base = zc.clone();
            base.extend(data.z().iter().map(|c| permute(perm, c)));
            let mut with_xp = vec![permute(perm, data.x())];
            with_xp.extend(base.iter().cloned());
            let mut with_x = vec![data.x().to_vec()];
            with_x.extend(base);
            GridPair {
                ry: resid(&with_xp, data.y()),
                rx: resid(&with_xp, data.x()),
                tb: rss(&with_x, data.y()),
            }
        })
        .collect()
}

/// `(1 + Σ ω_b(β)) / (B + 1)` by direct recomputation of both statistics on
/// `y - xβ`.
pub struct GridOracle {
    pairs: Vec<(f64, f64, f64, f64)>,
}

impl GridOracle {
    pub fn new(data: &Dataset, perms: &[Permutation]) -> Self {
        let pairs = grid_pairs(data, perms)
            .into_iter()
            .map(|g| (g.ry.norm_squared(), g.rx.dot(&g.ry), g.rx.norm_squared(), g.tb))
            .collect();
        Self { pairs }
    }

    pub fn p_value(&self, beta: f64) -> f64 {
        let sum: u64 = self
            .pairs
            .iter()
            .map(|&(yy, xy, xx, tb)| {
                let t0 = yy - 2.0 * beta * xy + beta * beta * xx;
                let scale = t0.abs().max(tb);
                if (t0 - tb).abs() <= 1e-9 * scale {
                    1
                } else if tb > t0 {
                    2
                } else {
                    0
                }
            })
            .sum();
        (2 + sum) as f64 / (2 * (self.pairs.len() + 1)) as f64
    }

    /// Hull of `{β on the grid : p(β) > α}`.
    pub fn interval(&self, alpha: f64, center: f64, half_width: f64, step: f64) -> (ConfInterval, usize) {
        let far = 1e8 * step.max(half_width);
        if self.p_value(center + far) > alpha && self.p_value(center - far) > alpha {
            return (ConfInterval::all_reals(alpha), 0);
        }
        let count = (2.0 * half_width / step).ceil() as usize;
        let mut lo = None;
        let mut hi = None;
        for i in 0..=count {
            let beta = center - half_width + i as f64 * step;
            if self.p_value(beta) > alpha {
                lo.get_or_insert(beta);
                hi = Some(beta);
            }
        }
        match (lo, hi) {
            (Some(lo), Some(hi)) => (ConfInterval::bounded(lo, hi, alpha), count),
            _ => (ConfInterval::empty(alpha), count),
        }
    }
}

pub fn kinds_match(a: &ConfInterval, b: &ConfInterval) -> bool {
    a.kind == b.kind
}

pub fn same_endpoints(a: &ConfInterval, b: &ConfInterval, tol: f64) -> bool {
    match a.kind {
        CiKind::Bounded => (a.lo.unwrap() - b.lo.unwrap()).abs() <= tol && (a.hi.unwrap() - b.hi.unwrap()).abs() <= tol,
        _ => true,
    }
}
