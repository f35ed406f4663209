//! Dense linear-algebra kernels with explicit rank tolerances.
//!
//! Everything that needs a notion of "numerically zero" singular value goes
//! through [`Tolerance`], so rank, pseudoinverse and `σ_min` all agree on the
//! same cutoff. The default cutoff is `ε · max(rows, cols) · σ_max`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dense real matrix, column-major storage.
pub type Matrix = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    NonConvergence { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix has an empty dimension ({rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("rank/index {index} outside 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("matrix is numerically zero; no nonzero singular value")]
    ZeroMatrix,
    #[error("negative tolerance {0}")]
    NegativeTolerance(f64),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Relative cutoff below which singular values count as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Tolerance {
    /// `ε · max(rows, cols)` relative to `σ_max`.
    #[default]
    Default,
    /// Explicit relative threshold; singular values `≤ tol · σ_max` are zero.
    Relative(f64),
}

impl Tolerance {
    /// Absolute threshold for a matrix of the given shape and largest singular value.
    pub fn threshold(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        let rel = match *self {
            Tolerance::Default => f64::EPSILON * rows.max(cols) as f64,
            Tolerance::Relative(t) => t,
        };
        rel * sigma_max
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Tolerance::Relative(t) if t.is_nan() || t < 0.0 => Err(NumericsError::NegativeTolerance(t)),
            _ => Ok(()),
        }
    }
}

/// Thin SVD `a = left · diag(singular_values) · rightᵀ` with nonincreasing
/// singular values.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub left: Matrix,
    pub singular_values: Vector,
    pub right: Matrix,
    rows: usize,
    cols: usize,
}

impl SvdFactors {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.get(0).copied().unwrap_or(0.0)
    }

    /// i-th largest singular value, 1-based.
    pub fn sigma(&self, i: usize) -> Result<f64> {
        let k = self.singular_values.len();
        if i == 0 || i > k {
            return Err(NumericsError::IndexOutOfRange { index: i, max: k });
        }
        Ok(self.singular_values[i - 1])
    }

    /// i-th largest singular value with the convention `σ_i = 0` past the
    /// smaller dimension.
    pub fn sigma_or_zero(&self, i: usize) -> f64 {
        if i == 0 {
            return self.sigma_max();
        }
        self.singular_values.get(i - 1).copied().unwrap_or(0.0)
    }

    pub fn threshold(&self, tol: Tolerance) -> f64 {
        tol.threshold(self.rows, self.cols, self.sigma_max())
    }

    pub fn rank(&self, tol: Tolerance) -> usize {
        let cut = self.threshold(tol);
        self.singular_values.iter().filter(|&&s| s > cut).count()
    }

    pub fn sigma_min_nonzero(&self, tol: Tolerance) -> Result<f64> {
        match self.rank(tol) {
            0 => Err(NumericsError::ZeroMatrix),
            k => Ok(self.singular_values[k - 1]),
        }
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.left.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.right.transpose()
    }

    /// Rank-`r` reconstruction from the leading factors.
    pub fn truncate(&self, r: usize) -> Result<Matrix> {
        let k = self.singular_values.len();
        if r == 0 || r > k {
            return Err(NumericsError::IndexOutOfRange { index: r, max: k });
        }
        let mut us = self.left.columns(0, r).into_owned();
        for j in 0..r {
            us.column_mut(j).scale_mut(self.singular_values[j]);
        }
        Ok(us * self.right.columns(0, r).transpose())
    }

    /// Moore–Penrose pseudoinverse with the given cutoff.
    pub fn pseudo_inverse(&self, tol: Tolerance) -> Matrix {
        let k = self.rank(tol);
        if k == 0 {
            return Matrix::zeros(self.cols, self.rows);
        }
        let mut vs = self.right.columns(0, k).into_owned();
        for j in 0..k {
            vs.column_mut(j).scale_mut(1.0 / self.singular_values[j]);
        }
        vs * self.left.columns(0, k).transpose()
    }

    /// `Σ_{i>r} σ_i²`, the squared Frobenius residual of rank-`r` truncation.
    pub fn tail_energy(&self, r: usize) -> f64 {
        self.singular_values.iter().skip(r).map(|s| s * s).sum()
    }
}

fn check_input(a: &Matrix) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(NumericsError::Empty {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    Ok(())
}

/// Thin SVD with singular values sorted nonincreasing.
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    check_input(a)?;
    let (rows, cols) = a.shape();
    let fa = faer::Mat::<f64>::from_fn(rows, cols, |i, j| a[(i, j)]);
    let dec = fa
        .thin_svd()
        .map_err(|_| NumericsError::NonConvergence { rows, cols })?;
    let (u, s, v) = (dec.U(), dec.S().column_vector(), dec.V());

    let k = rows.min(cols);
    let mut order: Vec<usize> = (0..k).collect();
    // stable sort keeps the routine's own order on ties
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));

    let mut left = Matrix::zeros(rows, k);
    let mut right = Matrix::zeros(cols, k);
    let mut values = Vector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..rows {
            left[(i, dst)] = u[(i, src)];
        }
        for j in 0..cols {
            right[(j, dst)] = v[(j, src)];
        }
        values[dst] = s[src].abs();
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonConvergence { rows, cols });
    }
    Ok(SvdFactors {
        left,
        singular_values: values,
        right,
        rows,
        cols,
    })
}

/// Moore–Penrose pseudoinverse; singular values `≤ tol · σ_max` are dropped.
pub fn pinv(a: &Matrix, tol: Tolerance) -> Result<Matrix> {
    tol.validate()?;
    Ok(svd(a)?.pseudo_inverse(tol))
}

/// Best Frobenius-norm approximation of rank at most `r`.
pub fn tsvd(a: &Matrix, r: usize) -> Result<Matrix> {
    let k = a.nrows().min(a.ncols());
    if r == 0 || r > k {
        return Err(NumericsError::IndexOutOfRange { index: r, max: k });
    }
    svd(a)?.truncate(r)
}

/// i-th largest singular value (1-based).
pub fn sigma(a: &Matrix, i: usize) -> Result<f64> {
    svd(a)?.sigma(i)
}

pub fn sigma_min_nonzero(a: &Matrix, tol: Tolerance) -> Result<f64> {
    tol.validate()?;
    svd(a)?.sigma_min_nonzero(tol)
}

pub fn numerical_rank(a: &Matrix, tol: Tolerance) -> Result<usize> {
    tol.validate()?;
    Ok(svd(a)?.rank(tol))
}

pub fn frob(a: &Matrix) -> f64 {
    a.norm()
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    Ok(svd(a)?.sigma_max())
}

/// Stack matrices with equal column counts vertically.
pub fn vstack(blocks: &[&Matrix]) -> Matrix {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((at, 0), (b.nrows(), cols)).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Stack vectors vertically.
pub fn vcat(parts: &[&Vector]) -> Vector {
    Vector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_frob_error(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
