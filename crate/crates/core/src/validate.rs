//! Fast self-check of the core invariants: the likelihood decomposition of
//! the statistics, optimality of the Lasso path, and domination of the
//! Monte-Carlo tail by the Laplace bound.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::collections::{build_reparam, lars_path};
use crate::data::{SubsetModel, TwoSampleData};
use crate::numkit::{least_squares, select_columns, Matrix, Vector};
use crate::rng;
use crate::stats::{compute_statistics, laplace_tail_bound, EigenSpectrum};

/// Deliberate corruption of a checked quantity, used to confirm the suite
/// detects failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Added to `F_V` before the decomposition check.
    StatisticOffset(f64),
    /// Multiplies the Laplace bound before the domination check.
    BoundScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidateOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { seed: 20_240_601, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Largest observed discrepancy, in the check's own units.
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn gaussian_data(seed: u64, case: u64, n1: usize, n2: usize, p: usize) -> TwoSampleData {
    let mut r = rng::stream(seed, &[case]);
    let mut m = |rows, cols| Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r));
    let x1 = m(n1, p);
    let x2 = m(n2, p);
    let y1 = &x1.column(0) * 0.8 + Vector::from_column_slice(m(n1, 1).as_slice());
    let y2 = Vector::from_column_slice(m(n2, 1).as_slice()) * 1.5;
    TwoSampleData::new(x1, y1, x2, y2).expect("finite gaussian data")
}

/// Twice the symmetrised per-observation log-likelihood ratio.
fn symmetrized_likelihood_ratio(data: &TwoSampleData, s: &SubsetModel) -> Option<f64> {
    let x1 = select_columns(&data.x1, s.indices());
    let x2 = select_columns(&data.x2, s.indices());
    let b1 = least_squares(&x1, &data.y1).ok()?.coefficients_vector();
    let b2 = least_squares(&x2, &data.y2).ok()?.coefficients_vector();
    let mean_loglik = |x: &Matrix, y: &Vector, b: &Vector, var: f64| {
        let r = y - x * b;
        -0.5 * (2.0 * std::f64::consts::PI * var).ln() - r.norm_squared() / (2.0 * y.len() as f64 * var)
    };
    let v1 = (&data.y1 - &x1 * &b1).norm_squared() / data.n1() as f64;
    let v2 = (&data.y2 - &x2 * &b2).norm_squared() / data.n2() as f64;
    let d1 = mean_loglik(&x1, &data.y1, &b1, v1) - mean_loglik(&x1, &data.y1, &b2, v2);
    let d2 = mean_loglik(&x2, &data.y2, &b2, v2) - mean_loglik(&x2, &data.y2, &b1, v1);
    Some(2.0 * (d1 + d2))
}

fn check_decomposition(opts: &ValidateOptions) -> CheckResult {
    let tolerance = 1e-8;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for case in 0..100u64 {
        let mut r = rng::stream(opts.seed, &[1, case]);
        let n1 = r.random_range(10..=60);
        let n2 = r.random_range(10..=60);
        let size = r.random_range(1..=5usize);
        let data = gaussian_data(opts.seed, 1000 + case, n1, n2, 6);
        let s = SubsetModel::new((0..size).collect());
        let (Ok(mut t), Some(oracle)) = (compute_statistics(&data, &s), symmetrized_likelihood_ratio(&data, &s))
        else {
            continue;
        };
        if let Some(Fault::StatisticOffset(d)) = opts.fault {
            t.f_v += d;
        }
        let total = t.f_v + t.f_1 + t.f_2;
        worst = worst.max((total - oracle).abs() / oracle.abs().max(1e-12));
        cases += 1;
    }
    CheckResult {
        name: "likelihood decomposition".into(),
        passed: cases > 0 && worst <= tolerance,
        cases,
        worst,
        tolerance,
    }
}

fn check_lasso_kkt(opts: &ValidateOptions) -> CheckResult {
    let tolerance = 1e-8;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for case in 0..10u64 {
        let data = gaussian_data(opts.seed, 2000 + case, 20, 20, 10);
        let Ok(design) = build_reparam(&data) else { continue };
        let path = lars_path(&design, 40);
        let lambdas = path.lambdas();
        for k in 0..lambdas.len().saturating_sub(1).min(5) {
            let lambda = 0.5 * (lambdas[k] + lambdas[k + 1]);
            let Some(theta) = path.coefficients_at(lambda) else { continue };
            let corr = design.w.tr_mul(&(&design.y - &design.w * &theta));
            let half = lambda / 2.0;
            for j in 0..theta.len() {
                let violation = if theta[j] != 0.0 {
                    (corr[j] - half * theta[j].signum()).abs()
                } else {
                    (corr[j].abs() - half).max(0.0)
                };
                worst = worst.max(violation / half);
            }
            cases += 1;
        }
    }
    CheckResult { name: "lasso path optimality".into(), passed: cases > 0 && worst <= tolerance, cases, worst, tolerance }
}

fn check_bound_domination(opts: &ValidateOptions) -> CheckResult {
    let draws = 20_000;
    let mut r = rng::stream(opts.seed, &[3]);
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for (a, n_den) in [(vec![0.06, 0.03, 0.01], 20usize), (vec![0.1], 30), (vec![0.02; 4], 40)] {
        let spec = EigenSpectrum::new(a.clone()).expect("positive spectrum");
        let m = n_den - a.len();
        let chi = ChiSquared::new(m as f64).expect("positive degrees of freedom");
        let sample: Vec<f64> = (0..draws)
            .map(|_| {
                let num: f64 = a.iter().map(|ai| ai * r.sample::<f64, _>(StandardNormal).powi(2)).sum();
                num / (chi.sample(&mut r) / m as f64)
            })
            .collect();
        for k in 0..8 {
            let u = spec.l1_norm * (1.0 + 0.5 * k as f64);
            let tail = sample.iter().filter(|&&v| v > u).count() as f64 / draws as f64;
            let se = (tail * (1.0 - tail) / draws as f64).sqrt().max(1.0 / draws as f64);
            let mut bound = laplace_tail_bound(u, &spec, n_den, a.len());
            if let Some(Fault::BoundScale(c)) = opts.fault {
                bound *= c;
            }
            // shortfall in standard errors; must stay below 3
            worst = worst.max((tail - bound) / se);
            cases += 1;
        }
    }
    CheckResult { name: "tail bound domination".into(), passed: worst <= 3.0, cases, worst, tolerance: 3.0 }
}

pub fn run_validation(opts: &ValidateOptions) -> ValidationReport {
    let checks = vec![check_decomposition(opts), check_lasso_kkt(opts), check_bound_domination(opts)];
    ValidationReport { passed: checks.iter().all(|c| c.passed), checks }
}
