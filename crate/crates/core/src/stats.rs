//! The three per-subset statistics and their p-values.
//!
//! For a support `S` both samples are regressed on `X_S`. The variance
//! statistic compares the two residual variances through `g`, the two
//! coefficient statistics measure how badly each sample's coefficients
//! predict the other sample, relative to the other sample's noise level.
//! `q_v` is the exact conditional p-value of the variance statistic; `q_1`
//! and `q_2` are Chernoff-type upper bounds on the conditional p-values of
//! the coefficient statistics.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::data::{SubsetModel, TwoSampleData};
use crate::error::{Error, Result};
use crate::numkit::{self, fisher_sf, g, g_inverse, least_squares, select_columns, Matrix, Vector};

/// Smallest p-value ever reported; keeps log-scale arithmetic finite.
pub const PVALUE_FLOOR: f64 = 1e-300;

/// Relative spread below which an eigen-spectrum is treated as constant.
pub const CONSTANT_SPECTRUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTriple {
    pub f_v: f64,
    pub f_1: f64,
    pub f_2: f64,
    pub subset_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValueTriple {
    pub q_v: f64,
    pub q_1: f64,
    pub q_2: f64,
}

impl PValueTriple {
    /// `min(q_1, q_2)`, the p-value of the coefficient part.
    pub fn q_12(&self) -> f64 {
        self.q_1.min(self.q_2)
    }
}

/// Which sample plays the role of "sample 1" in a coefficient statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    First,
    Second,
}

/// Positive eigenvalues `a` of the covariance driving a coefficient statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    pub a: Vec<f64>,
    pub l1_norm: f64,
    pub sup_norm: f64,
    pub sq_norm: f64,
}

impl EigenSpectrum {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "spectrum must be nonempty and positive, got {a:?}"
            )));
        }
        let l1_norm = a.iter().sum();
        let sup_norm = a.iter().copied().fold(0.0, f64::max);
        let sq_norm = a.iter().map(|v| v * v).sum();
        Ok(Self { a, l1_norm, sup_norm, sq_norm })
    }

    fn min(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn is_constant(&self) -> bool {
        self.sup_norm - self.min() <= CONSTANT_SPECTRUM_TOL * self.sup_norm
    }
}

/// Options controlling the admissible subsets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatOptions {
    /// Allow `S = ∅`, i.e. a raw comparison of the response variances.
    pub allow_empty: bool,
}

/// Per-sample least-squares fits restricted to one subset, shared by the
/// statistics and the spectra.
#[derive(Debug, Clone)]
pub struct SubsetFit {
    n1: usize,
    n2: usize,
    size: usize,
    x1s: Matrix,
    x2s: Matrix,
    beta1: Vector,
    beta2: Vector,
    rss1: f64,
    rss2: f64,
}

impl SubsetFit {
    pub fn new(data: &TwoSampleData, s: &SubsetModel, opts: StatOptions) -> Result<Self> {
        let (n1, n2) = (data.n1(), data.n2());
        let size = s.len();
        if size == 0 && !opts.allow_empty {
            return Err(Error::EmptySubset);
        }
        if 2 * size > n1.min(n2) || n1.min(n2) <= size {
            return Err(Error::SubsetTooLarge { size, n1, n2 });
        }
        if let Some(&last) = s.indices().last() {
            if last >= data.p() {
                return Err(Error::DimensionMismatch(format!(
                    "subset index {last} out of range for p = {}",
                    data.p()
                )));
            }
        }
        let x1s = select_columns(&data.x1, s.indices());
        let x2s = select_columns(&data.x2, s.indices());
        let fit1 = least_squares(&x1s, &data.y1)?;
        let fit2 = least_squares(&x2s, &data.y2)?;
        if !(fit1.residual_sum_squares > 0.0 && fit2.residual_sum_squares > 0.0) {
            // a perfect fit leaves no residual variance to compare
            return Err(Error::RankDeficient { rank: size, cols: size + 1 });
        }
        Ok(Self {
            n1,
            n2,
            size,
            beta1: fit1.coefficients_vector(),
            beta2: fit2.coefficients_vector(),
            rss1: fit1.residual_sum_squares,
            rss2: fit2.residual_sum_squares,
            x1s,
            x2s,
        })
    }

    pub fn rss(&self) -> (f64, f64) {
        (self.rss1, self.rss2)
    }

    pub fn coefficients(&self) -> (&Vector, &Vector) {
        (&self.beta1, &self.beta2)
    }

    pub fn statistics(&self) -> StatTriple {
        let var1 = self.rss1 / self.n1 as f64;
        let var2 = self.rss2 / self.n2 as f64;
        let (f_1, f_2) = if self.size == 0 {
            (0.0, 0.0)
        } else {
            let diff = &self.beta1 - &self.beta2;
            let pred2 = (&self.x2s * &diff).norm_squared() / self.n2 as f64;
            let pred1 = (&self.x1s * &diff).norm_squared() / self.n1 as f64;
            (pred2 / var1, pred1 / var2)
        };
        StatTriple { f_v: g(var1 / var2), f_1, f_2, subset_size: self.size }
    }

    /// Spectrum of `n_a/(n_b(n_a−|S|)) · X_b[(X_aᵀX_a)⁻¹ + (X_bᵀX_b)⁻¹]X_bᵀ`
    /// where `a` is the sample named by `direction` and `b` the other one.
    ///
    /// With `X_bᵀX_b = LLᵀ` the nonzero eigenvalues coincide with those of the
    /// `|S|×|S|` matrix `Lᵀ(X_aᵀX_a)⁻¹L + I`.
    pub fn spectrum(&self, direction: Direction) -> Result<EigenSpectrum> {
        if self.size == 0 {
            return Err(Error::EmptySubset);
        }
        let (xa, xb, na, nb) = match direction {
            Direction::First => (&self.x1s, &self.x2s, self.n1, self.n2),
            Direction::Second => (&self.x2s, &self.x1s, self.n2, self.n1),
        };
        let rank_err = Error::RankDeficient { rank: 0, cols: self.size };
        let chol_b = Cholesky::new(numkit::gram(xb)).ok_or_else(|| rank_err.clone())?;
        let chol_a = Cholesky::new(numkit::gram(xa)).ok_or(rank_err)?;
        let l = chol_b.l();
        let t = chol_a.solve(&l);
        let mut m = l.tr_mul(&t);
        for i in 0..self.size {
            m[(i, i)] += 1.0;
        }
        let m = (&m + m.transpose()) * 0.5;
        let scale = na as f64 / (nb as f64 * (na - self.size) as f64);
        let a: Vec<f64> = numkit::symmetric_eigenvalues(&m)?.into_iter().map(|v| v * scale).collect();
        EigenSpectrum::new(a)
    }

    pub fn pvalues(&self, t: &StatTriple) -> Result<PValueTriple> {
        let q_v = pvalue_variance(t, self.n1, self.n2);
        if self.size == 0 {
            return Ok(PValueTriple { q_v, q_1: 1.0, q_2: 1.0 });
        }
        let q_1 = coefficient_pvalue(t.f_1, || self.spectrum(Direction::First), self.n1, self.size)?;
        let q_2 = coefficient_pvalue(t.f_2, || self.spectrum(Direction::Second), self.n2, self.size)?;
        Ok(PValueTriple { q_v, q_1, q_2 })
    }
}

fn coefficient_pvalue(
    u: f64,
    spectrum: impl FnOnce() -> Result<EigenSpectrum>,
    n_den: usize,
    size: usize,
) -> Result<f64> {
    if u <= 0.0 {
        return Ok(1.0);
    }
    let spec = spectrum()?;
    Ok(laplace_tail_bound(u, &spec, n_den, size))
}

/// The statistic triple `(F_V, F_1, F_2)` for one subset.
pub fn compute_statistics(data: &TwoSampleData, s: &SubsetModel) -> Result<StatTriple> {
    Ok(SubsetFit::new(data, s, StatOptions::default())?.statistics())
}

/// Statistics and p-values for one subset in a single pass.
pub fn evaluate_subset(
    data: &TwoSampleData,
    s: &SubsetModel,
    opts: StatOptions,
) -> Result<(StatTriple, PValueTriple)> {
    let fit = SubsetFit::new(data, s, opts)?;
    let t = fit.statistics();
    let q = fit.pvalues(&t)?;
    Ok((t, q))
}

/// Exact conditional p-value of the variance statistic.
pub fn pvalue_variance(t: &StatTriple, n1: usize, n2: usize) -> f64 {
    let s = t.subset_size;
    let (d1, d2) = (n1 - s, n2 - s);
    let x = g_inverse(t.f_v.max(0.0));
    let (n1f, n2f, d1f, d2f) = (n1 as f64, n2 as f64, d1 as f64, d2 as f64);
    let upper = fisher_sf(d1, d2, x * n1f * d2f / (n2f * d1f));
    let lower = fisher_sf(d2, d1, x * n2f * d1f / (n1f * d2f));
    clip_pvalue(upper + lower)
}

/// Spectrum of the coefficient statistic in the given direction.
pub fn eigen_spectrum(
    data: &TwoSampleData,
    s: &SubsetModel,
    direction: Direction,
) -> Result<EigenSpectrum> {
    SubsetFit::new(data, s, StatOptions::default())?.spectrum(direction)
}

/// The exponential tilt used by [`laplace_tail_bound`] for `u > |a|₁`.
pub fn laplace_lambda(u: f64, spec: &EigenSpectrum, dof: f64) -> f64 {
    let (l1, amax, sq) = (spec.l1_norm, spec.sup_norm, spec.sq_norm);
    if spec.is_constant() {
        return (u - l1) / (2.0 * u * (amax + l1 / dof));
    }
    let b = l1 * u / (amax * dof) + u + sq / amax - l1;
    // Δ ≥ 0 in exact arithmetic; only rounding can push it below zero
    let delta = (b * b - 4.0 * u * (u - l1) / (dof * amax) * (l1 - sq / amax)).max(0.0);
    // (b − √Δ) / (4u(|a|₁ − ‖a‖²/|a|∞)/dof), rationalised to avoid cancellation
    (u - l1) / (amax * (b + delta.sqrt()))
}

/// Upper bound on `P[Σ aᵢZᵢ² / (W/m) > u]` with `Zᵢ` standard normal,
/// `W ~ χ²(m)` and `m = n_den − subset_size`.
pub fn laplace_tail_bound(u: f64, spec: &EigenSpectrum, n_den: usize, subset_size: usize) -> f64 {
    if u <= spec.l1_norm {
        return 1.0;
    }
    if u.is_infinite() {
        return PVALUE_FLOOR;
    }
    let dof = (n_den - subset_size) as f64;
    let lambda = laplace_lambda(u, spec, dof);
    let log_mgf: f64 = spec.a.iter().map(|&ai| (-2.0 * lambda * ai).ln_1p()).sum::<f64>();
    let log_q = -0.5 * log_mgf - 0.5 * dof * (2.0 * lambda * u / dof).ln_1p();
    if log_q.is_nan() {
        return 1.0;
    }
    clip_pvalue(log_q.exp())
}

/// `(q_1, q_2)` for a subset whose statistics are already known.
pub fn pvalue_coefficients(
    t: &StatTriple,
    data: &TwoSampleData,
    s: &SubsetModel,
) -> Result<(f64, f64)> {
    let fit = SubsetFit::new(data, s, StatOptions::default())?;
    let q = fit.pvalues(t)?;
    Ok((q.q_1, q.q_2))
}

pub fn clip_pvalue(q: f64) -> f64 {
    if q.is_nan() {
        return 1.0;
    }
    q.clamp(PVALUE_FLOOR, 1.0)
}
