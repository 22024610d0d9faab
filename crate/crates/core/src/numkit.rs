//! Dense linear algebra and distribution primitives.
//!
//! Everything here operates on small dense matrices (a few hundred rows, a
//! few dozen columns) and is a pure function of its inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major semantics, column-major storage (nalgebra).
pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative pivot threshold used to decide the numerical rank of a design.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Ordinary least-squares fit of a response on a (small) design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    pub residual_sum_squares: f64,
    pub rank: usize,
}

impl LeastSquaresFit {
    pub fn coefficients_vector(&self) -> Vector {
        Vector::from_column_slice(&self.coefficients)
    }
}

/// Least squares through a column-pivoted QR factorisation.
///
/// The numerical rank is the number of diagonal entries of `R` larger than
/// [`RANK_TOLERANCE`] times the largest one. Anything short of full column
/// rank is reported as [`Error::RankDeficient`] so callers can drop the
/// subset.
pub fn least_squares(design: &Matrix, response: &Vector) -> Result<LeastSquaresFit> {
    let (n, k) = design.shape();
    if response.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows but response has {} entries",
            response.len()
        )));
    }
    if k == 0 {
        return Ok(LeastSquaresFit {
            coefficients: Vec::new(),
            residual_sum_squares: response.norm_squared(),
            rank: 0,
        });
    }
    if n < k {
        return Err(Error::RankDeficient { rank: n, cols: k });
    }

    let qr = design.clone().col_piv_qr();
    let r = qr.r();
    let diag_max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..k)
        .filter(|&i| r[(i, i)].abs() > RANK_TOLERANCE * diag_max)
        .count();
    if rank < k || diag_max == 0.0 {
        return Err(Error::RankDeficient { rank, cols: k });
    }

    let mut qty = response.clone();
    qr.q_tr_mul(&mut qty);
    let residual_sum_squares = qty.rows(k, n - k).norm_squared();

    let mut coef = qty.rows(0, k).into_owned();
    let r_square = r.view((0, 0), (k, k));
    if !r_square.solve_upper_triangular_mut(&mut coef) {
        return Err(Error::RankDeficient { rank, cols: k });
    }
    qr.p().inv_permute_rows(&mut coef);

    Ok(LeastSquaresFit {
        coefficients: coef.iter().copied().collect(),
        residual_sum_squares,
        rank,
    })
}

/// Eigenvalues of a symmetric matrix, sorted in descending order.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a non-square {rows}x{cols} matrix"
        )));
    }
    let scale = m.amax();
    let asym = (0..rows)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
        .fold(0.0, f64::max);
    if asym > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    let mut values: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Upper tail `P[F > u]` of a Fisher variable with `(d1, d2)` degrees of
/// freedom, through the regularized incomplete beta function.
pub fn fisher_sf(d1: usize, d2: usize, u: f64) -> f64 {
    assert!(d1 >= 1 && d2 >= 1, "Fisher degrees of freedom must be positive");
    if u.is_nan() {
        return f64::NAN;
    }
    if u <= 0.0 {
        return 1.0;
    }
    if u.is_infinite() {
        return 0.0;
    }
    let (a, b) = (d1 as f64, d2 as f64);
    // P[F > u] = I_x(d2/2, d1/2) with x = d2 / (d2 + d1 u)
    let x = b / (b + a * u);
    statrs::function::beta::beta_reg(b / 2.0, a / 2.0, x).clamp(0.0, 1.0)
}

/// `g(x) = x + 1/x - 2`, nonnegative on `(0, ∞)` with its minimum at 1.
pub fn g(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    (x - 1.0) * (x - 1.0) / x
}

/// Right inverse of [`g`] on `[1, ∞)`: the larger root of `x² − (2+y)x + 1`.
pub fn g_inverse(y: f64) -> f64 {
    debug_assert!(y >= 0.0);
    let y = y.max(0.0);
    1.0 + y / 2.0 + (y + y * y / 4.0).sqrt()
}

/// `ln C(n, k)`, `-∞` when `k > n`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    statrs::function::factorial::ln_binomial(n as u64, k as u64)
}

/// Gram matrix `XᵀX` of the columns of `x`.
pub fn gram(x: &Matrix) -> Matrix {
    x.tr_mul(x)
}

/// Extracts the listed columns of `x` in order.
pub fn select_columns(x: &Matrix, columns: &[usize]) -> Matrix {
    Matrix::from_fn(x.nrows(), columns.len(), |i, j| x[(i, columns[j])])
}
