#![allow(dead_code)]

use hdht_core::numkit::{Matrix, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Cyclic coordinate descent for `‖y − Wθ‖² + λ‖θ‖₁`, run until the duality
/// gap drops below `gap_tol`. Returns the solution and the final gap.
pub fn lasso_coordinate_descent(w: &Matrix, y: &Vector, lambda: f64, gap_tol: f64) -> (Vector, f64) {
    let m = w.ncols();
    let norms: Vec<f64> = (0..m).map(|j| w.column(j).norm_squared()).collect();
    let mut theta = Vector::zeros(m);
    let mut resid = y.clone();
    let mut gap = f64::INFINITY;
    for sweep in 0..200_000 {
        for j in 0..m {
            if norms[j] == 0.0 {
                continue;
            }
            let col = w.column(j);
            let z = col.dot(&resid) + norms[j] * theta[j];
            let new = z.signum() * (z.abs() - lambda / 2.0).max(0.0) / norms[j];
            let delta = new - theta[j];
            if delta != 0.0 {
                resid.axpy(-delta, &col, 1.0);
                theta[j] = new;
            }
        }
        if sweep % 10 == 0 {
            gap = duality_gap(w, y, &theta, lambda);
            if gap <= gap_tol {
                break;
            }
        }
    }
    (theta, gap)
}

/// Primal minus dual objective, with the dual point obtained by rescaling
/// the residual into the feasible set `‖Wᵀν‖∞ ≤ λ/2`.
pub fn duality_gap(w: &Matrix, y: &Vector, theta: &Vector, lambda: f64) -> f64 {
    let resid = y - w * theta;
    let primal = resid.norm_squared() + lambda * theta.abs().sum();
    let corr = w.tr_mul(&resid).amax();
    let scale = if corr > lambda / 2.0 { lambda / 2.0 / corr } else { 1.0 };
    let nu = resid * scale;
    let dual = 2.0 * nu.dot(y) - nu.norm_squared();
    primal - dual
}

/// Largest KKT violation of `θ` at `λ`, relative to `λ/2`.
pub fn kkt_violation(w: &Matrix, y: &Vector, theta: &Vector, lambda: f64) -> f64 {
    let corr = w.tr_mul(&(y - w * theta));
    let half = lambda / 2.0;
    (0..theta.len())
        .map(|j| {
            if theta[j] != 0.0 {
                (corr[j] - half * theta[j].signum()).abs() / half
            } else {
                (corr[j].abs() - half).max(0.0) / half
            }
        })
        .fold(0.0, f64::max)
}
