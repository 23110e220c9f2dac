//! Dense projection kernels.
//!
//! Everything in the test statistics reduces to residuals of a vector against
//! the column space of a small, frequently rank-deficient matrix. [`Basis`]
//! holds the columns, [`Projector`] is its column-pivoted Householder QR
//! factorization truncated at the numerical rank, and [`Residual`] is a
//! residual expressed in orthonormal coordinates of the orthogonal complement.
//! Working in those coordinates lets callers add one more direction to a span
//! (a rank-one augmentation) without refactorizing.

use crate::error::{Error, Result};

/// Default relative tolerance for the numerical rank cut.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Columns spanning a subspace of `R^n`, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    n: usize,
    k: usize,
    data: Vec<f64>,
    rank_tol: f64,
}

impl Basis {
    /// The trivial subspace `{0}` of `R^n`.
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("basis needs at least one row"));
        }
        Ok(Self {
            n,
            k: 0,
            data: Vec::new(),
            rank_tol: DEFAULT_RANK_TOL,
        })
    }

    pub fn from_columns<C: AsRef<[f64]>>(n: usize, columns: &[C]) -> Result<Self> {
        let mut basis = Self::empty(n)?;
        for col in columns {
            basis.push_column(col.as_ref())?;
        }
        Ok(basis)
    }

    pub fn with_rank_tol(mut self, rank_tol: f64) -> Result<Self> {
        if !(rank_tol > 0.0 && rank_tol.is_finite()) {
            return Err(Error::invalid(format!("rank_tol must be positive, got {rank_tol}")));
        }
        self.rank_tol = rank_tol;
        Ok(self)
    }

    pub fn push_column(&mut self, column: &[f64]) -> Result<()> {
        check_len("basis column", self.n, column)?;
        check_finite("basis column", column)?;
        self.data.extend_from_slice(column);
        self.k += 1;
        Ok(())
    }

    /// Builds a basis from already validated columns.
    pub(crate) fn from_trusted(n: usize, data: Vec<f64>, rank_tol: f64) -> Self {
        debug_assert!(n > 0 && data.len().is_multiple_of(n));
        Self {
            n,
            k: data.len() / n,
            data,
            rank_tol,
        }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.k
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn factorize(&self) -> Projector {
        Projector::factorize(self.n, self.data.clone(), self.rank_tol)
    }

    /// `||(I - H) v||^2` where `H` projects onto the span of the columns.
    pub fn residual_ss(&self, v: &[f64]) -> Result<f64> {
        self.check_vector(v)?;
        Ok(self.factorize().residual_ss(v))
    }

    /// `(I - H) v`.
    pub fn residual_vector(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_vector(v)?;
        Ok(self.factorize().residual_vector(v))
    }

    fn check_vector(&self, v: &[f64]) -> Result<()> {
        check_len("projected vector", self.n, v)?;
        check_finite("projected vector", v)
    }
}

/// Column-pivoted Householder QR of a [`Basis`], truncated at numerical rank.
#[derive(Debug, Clone)]
pub struct Projector {
    n: usize,
    rank: usize,
    /// Householder vectors; column `j` holds `v_j` in rows `j..n` with `v_j[j] = 1`.
    reflectors: Vec<f64>,
    tau: Vec<f64>,
    r_diag: Vec<f64>,
    pivots: Vec<usize>,
    rank_tol: f64,
}

impl Projector {
    fn factorize(n: usize, mut a: Vec<f64>, rank_tol: f64) -> Self {
        let k = a.len() / n;
        let mut pivots: Vec<usize> = (0..k).collect();
        let mut norms: Vec<f64> = (0..k).map(|c| sum_sq(&a[c * n..(c + 1) * n])).collect();
        let mut reference = norms.clone();
        let mut tau = Vec::with_capacity(k.min(n));
        let mut r_diag = Vec::with_capacity(k.min(n));
        let mut r11 = 0.0;

        for j in 0..k.min(n) {
            let p = (j..k)
                .max_by(|&a, &b| norms[a].total_cmp(&norms[b]))
                .expect("non-empty pivot range");
            if p != j {
                swap_columns(&mut a, n, j, p);
                norms.swap(j, p);
                reference.swap(j, p);
                pivots.swap(j, p);
            }

            let (head, rest) = a.split_at_mut((j + 1) * n);
            let col = &mut head[j * n + j..];
            let alpha = sum_sq(col).sqrt();
            if j == 0 {
                r11 = alpha;
            }
            if alpha == 0.0 || alpha <= rank_tol * r11 {
                break;
            }

            let x0 = col[0];
            let beta = if x0 >= 0.0 { -alpha } else { alpha };
            let v0 = x0 - beta;
            for value in col[1..].iter_mut() {
                *value /= v0;
            }
            col[0] = 1.0;
            let t = (beta - x0) / beta;

            for c in 0..(k - j - 1) {
                let target = &mut rest[c * n + j..(c + 1) * n];
                let s = t * dot(col, target);
                axpy(-s, col, target);
                let updated = norms[j + 1 + c] - target[0] * target[0];
                let idx = j + 1 + c;
                if updated <= 1e-6 * reference[idx] {
                    norms[idx] = sum_sq(&target[1..]);
                    reference[idx] = norms[idx];
                } else {
                    norms[idx] = updated;
                }
            }

            tau.push(t);
            r_diag.push(beta);
        }

        let rank = tau.len();
        a.truncate(rank * n);
        pivots.truncate(rank);
        Self {
            n,
            rank,
            reflectors: a,
            tau,
            r_diag,
            pivots,
            rank_tol,
        }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Original column indices of the retained (independent) columns.
    pub fn retained_columns(&self) -> &[usize] {
        &self.pivots
    }

    /// Diagonal of the triangular factor, in pivot order.
    pub fn r_diagonal(&self) -> &[f64] {
        &self.r_diag
    }

    /// Applies `Q^T` in place.
    fn rotate(&self, x: &mut [f64]) {
        let n = self.n;
        for j in 0..self.rank {
            let v = &self.reflectors[j * n + j..(j + 1) * n];
            let target = &mut x[j..];
            let s = self.tau[j] * dot(v, target);
            axpy(-s, v, target);
        }
    }

    /// Applies `Q` in place.
    fn unrotate(&self, x: &mut [f64]) {
        let n = self.n;
        for j in (0..self.rank).rev() {
            let v = &self.reflectors[j * n + j..(j + 1) * n];
            let target = &mut x[j..];
            let s = self.tau[j] * dot(v, target);
            axpy(-s, v, target);
        }
    }

    /// Residual of `v` in complement coordinates. `v` must have length `n`.
    pub fn residual(&self, v: &[f64]) -> Residual {
        assert_eq!(v.len(), self.n, "vector length must match projector");
        let mut x = v.to_vec();
        self.rotate(&mut x);
        x.drain(..self.rank);
        Residual {
            coords: x,
            source_norm: sum_sq(v).sqrt(),
        }
    }

    pub fn residual_ss(&self, v: &[f64]) -> f64 {
        sum_sq(&self.residual(v).coords)
    }

    pub fn residual_vector(&self, v: &[f64]) -> Vec<f64> {
        self.expand(&self.residual(v))
    }

    /// Maps complement coordinates back to a vector in `R^n`.
    pub fn expand(&self, r: &Residual) -> Vec<f64> {
        assert_eq!(r.coords.len(), self.n - self.rank);
        let mut x = vec![0.0; self.rank];
        x.extend_from_slice(&r.coords);
        self.unrotate(&mut x);
        x
    }
}

/// A residual `(I - H) v` written in an orthonormal basis of the complement
/// of a factorized span. Inner products and norms are preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    coords: Vec<f64>,
    /// `||v||` of the vector before projection, the reference for rank decisions.
    source_norm: f64,
}

impl Residual {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm_sq(&self) -> f64 {
        sum_sq(&self.coords)
    }

    pub fn source_norm(&self) -> f64 {
        self.source_norm
    }

    pub fn dot(&self, other: &Residual) -> f64 {
        dot(&self.coords, &other.coords)
    }

    /// Whether what is left of the source vector is numerically zero, i.e.
    /// the vector already lies in the span.
    pub fn is_negligible(&self, rank_tol: f64) -> bool {
        let norm = self.norm_sq().sqrt();
        norm == 0.0 || norm <= rank_tol * self.source_norm
    }

    /// Residual of `self` after `direction` is added to the span. When the
    /// direction is already in the span the residual is returned unchanged.
    pub fn deflate(&self, direction: &Residual, rank_tol: f64) -> Residual {
        assert_eq!(self.coords.len(), direction.coords.len());
        if direction.is_negligible(rank_tol) {
            return self.clone();
        }
        let scale = direction.norm_sq().sqrt();
        let coef = self.dot(direction) / (scale * scale);
        let mut coords = self.coords.clone();
        axpy(-coef, &direction.coords, &mut coords);
        Residual {
            coords,
            source_norm: self.source_norm,
        }
    }

    /// `||(I - H') v||^2` where `H'` projects onto the span plus `direction`.
    pub fn deflated_ss(&self, direction: &Residual, rank_tol: f64) -> f64 {
        if direction.is_negligible(rank_tol) {
            return self.norm_sq();
        }
        let scale = direction.norm_sq();
        let coef = self.dot(direction) / scale;
        self.coords
            .iter()
            .zip(&direction.coords)
            .map(|(v, d)| {
                let e = v - coef * d;
                e * e
            })
            .sum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sum_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn swap_columns(a: &mut [f64], n: usize, i: usize, j: usize) {
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    let (left, right) = a.split_at_mut(hi * n);
    left[lo * n..(lo + 1) * n].swap_with_slice(&mut right[..n]);
}

pub(crate) fn check_len(context: &'static str, expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(context: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
