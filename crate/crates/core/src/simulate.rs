//! Synthetic benchmarks: sparse coefficient scenarios, design covariances,
//! two-sample draws and the Monte-Carlo experiment driver.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Cholesky, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::StatisticKind;
use crate::collections::CollectionKind;
use crate::engine::{run_test, Calibration, TestConfig};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Vector};
use crate::rng;
use crate::TwoSampleData;

/// Smallest eigenvalue of the clustered precision matrix after the shift.
/// Tuned so that at `p = 200` each covariate has about 10 partners with
/// absolute correlation above 0.2.
const CLUSTERED_EIGEN_FLOOR: f64 = 0.08;
const CLUSTERED_MAX_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    H00,
    H0,
    One,
    Two,
    Three,
    Four,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [Self::H00, Self::H0, Self::One, Self::Two, Self::Three, Self::Four];

    /// `(η, η₂)`: exponents of the common and sample-2-specific blocks.
    pub fn exponents(self) -> (Option<f64>, Option<f64>) {
        match self {
            Self::H00 => (None, None),
            Self::H0 => (Some(5.0 / 8.0), None),
            Self::One => (None, Some(5.0 / 8.0)),
            Self::Two => (Some(7.0 / 8.0), Some(5.0 / 8.0)),
            Self::Three => (Some(5.0 / 8.0), Some(5.0 / 8.0)),
            Self::Four => (Some(5.0 / 8.0), Some(7.0 / 8.0)),
        }
    }

    pub fn is_null(self) -> bool {
        matches!(self, Self::H00 | Self::H0)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::H00 => "H00",
            Self::H0 => "H0",
            Self::One => "1",
            Self::Two => "2",
            Self::Three => "3",
            Self::Four => "4",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H00" | "h00" => Ok(Self::H00),
            "H0" | "h0" => Ok(Self::H0),
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "3" => Ok(Self::Three),
            "4" => Ok(Self::Four),
            other => Err(Error::InvalidParameter(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub eta: Option<f64>,
    pub eta2: Option<f64>,
    pub r: f64,
    pub n: usize,
    pub p: usize,
}

/// `⌊p^{1−η}⌋`.
fn sparsity_count(p: usize, eta: Option<f64>) -> usize {
    match eta {
        // the small offset keeps exact integer powers from rounding down
        Some(e) => ((p as f64).powf(1.0 - e) + 1e-9).floor() as usize,
        None => 0,
    }
}

impl Scenario {
    pub fn new(id: ScenarioId, n: usize, p: usize, r: f64) -> Self {
        let (eta, eta2) = id.exponents();
        Self { id, eta, eta2, r, n, p }
    }

    pub fn common_count(&self) -> usize {
        sparsity_count(self.p, self.eta)
    }

    pub fn specific_count(&self) -> usize {
        sparsity_count(self.p, self.eta2)
    }

    /// Signal magnitude `√(2 r log p)`.
    pub fn magnitude(&self) -> f64 {
        (2.0 * self.r * (self.p as f64).ln()).sqrt()
    }

    /// `(β⁽¹⁾, β⁽²⁾)`: the common block occupies the first indices in both
    /// vectors, the sample-2-specific block follows it in `β⁽²⁾` only.
    pub fn coefficients(&self) -> Result<(Vector, Vector)> {
        if !(0.0..=0.5).contains(&self.r) {
            return Err(Error::InvalidParameter(format!("r must lie in [0, 0.5], got {}", self.r)));
        }
        let (c, s) = (self.common_count(), self.specific_count());
        if c + s > self.p {
            return Err(Error::InvalidParameter(format!(
                "{c} common and {s} specific coefficients exceed p = {}",
                self.p
            )));
        }
        let mu = self.magnitude();
        let b1 = Vector::from_fn(self.p, |j, _| if j < c { mu } else { 0.0 });
        let b2 = Vector::from_fn(self.p, |j, _| if j < c + s { mu } else { 0.0 });
        Ok((b1, b2))
    }
}

pub fn make_scenario(id: ScenarioId, n: usize, p: usize, r: f64) -> Result<(Vector, Vector)> {
    Scenario::new(id, n, p, r).coefficients()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovarianceSpec {
    Identity,
    PowerDecay { rho: f64, permute: bool },
    ClusteredGgm { intra: f64, extra: f64, clusters: usize },
}

impl CovarianceSpec {
    /// Whether a fresh matrix must be drawn for every replication.
    pub fn is_random(&self) -> bool {
        match self {
            Self::Identity => false,
            Self::PowerDecay { permute, .. } => *permute,
            Self::ClusteredGgm { .. } => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        match *self {
            Self::Identity => Ok(()),
            Self::PowerDecay { rho, .. } if unit(rho) => Ok(()),
            Self::ClusteredGgm { intra, extra, clusters } if unit(intra) && unit(extra) && clusters > 0 => Ok(()),
            _ => Err(Error::InvalidParameter(format!("invalid covariance specification {self}"))),
        }
    }
}

impl fmt::Display for CovarianceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::PowerDecay { rho, permute: true } => write!(f, "power_decay:{rho}"),
            Self::PowerDecay { rho, permute: false } => write!(f, "power_decay:{rho}:fixed"),
            Self::ClusteredGgm { intra, extra, clusters } => write!(f, "clustered_ggm:{intra}:{extra}:{clusters}"),
        }
    }
}

impl FromStr for CovarianceSpec {
    type Err = Error;

    /// Parses the [`fmt::Display`] form; `power_decay` and `clustered_ggm`
    /// alone use the default parameters.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize, default: f64| -> Result<f64> {
            parts.get(i).map_or(Ok(default), |v| {
                v.parse().map_err(|_| Error::InvalidParameter(format!("bad number '{v}' in '{s}'")))
            })
        };
        let spec = match parts[0] {
            "identity" if parts.len() == 1 => Self::Identity,
            "power_decay" if parts.len() <= 3 => {
                let permute = match parts.get(2) {
                    None => true,
                    Some(&"fixed") => false,
                    Some(other) => return Err(Error::InvalidParameter(format!("unknown flag '{other}'"))),
                };
                Self::PowerDecay { rho: num(1, 0.75)?, permute }
            }
            "clustered_ggm" if parts.len() <= 4 => {
                let intra = num(1, 0.05)?;
                Self::ClusteredGgm { intra, extra: num(2, intra / 5.0)?, clusters: num(3, 4.0)? as usize }
            }
            _ => return Err(Error::InvalidParameter(format!("unknown covariance '{s}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn make_covariance(spec: &CovarianceSpec, p: usize, seed: u64) -> Result<Matrix> {
    spec.validate()?;
    let sigma = match *spec {
        CovarianceSpec::Identity => Matrix::identity(p, p),
        CovarianceSpec::PowerDecay { rho, permute } => {
            let mut order: Vec<usize> = (0..p).collect();
            if permute {
                order.shuffle(&mut rng::stream(seed, &[0]));
            }
            Matrix::from_fn(p, p, |i, j| rho.powi(order[i].abs_diff(order[j]) as i32))
        }
        CovarianceSpec::ClusteredGgm { intra, extra, clusters } => clustered_covariance(p, intra, extra, clusters, seed)?,
    };
    if Cholesky::new(sigma.clone()).is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(sigma)
}

/// Random cluster graph: Erdős–Rényi edges at rate `intra` inside clusters
/// and `extra` across, signed weights on the edges, shifted to a positive
/// definite precision matrix, inverted and scaled to unit variances.
fn clustered_covariance(p: usize, intra: f64, extra: f64, clusters: usize, seed: u64) -> Result<Matrix> {
    let clusters = clusters.clamp(1, p.max(1));
    let mut r = rng::stream(seed, &[1]);
    let mut weights = Matrix::zeros(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let rate = if i * clusters / p == j * clusters / p { intra } else { extra };
            if r.random::<f64>() < rate {
                let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
                let w = sign * r.random_range(0.5..1.0);
                weights[(i, j)] = w;
                weights[(j, i)] = w;
            }
        }
    }
    let mut damping = 1.0;
    for _ in 0..CLUSTERED_MAX_RETRIES {
        let w = &weights * damping;
        let lambda_min = SymmetricEigen::new(w.clone()).eigenvalues.min();
        let omega = w + Matrix::identity(p, p) * (CLUSTERED_EIGEN_FLOOR - lambda_min);
        if let Some(chol) = Cholesky::new(omega) {
            let s = chol.inverse();
            let d: Vec<f64> = (0..p).map(|i| s[(i, i)].sqrt()).collect();
            let corr = Matrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { s[(i, j)] / (d[i] * d[j]) });
            if Cholesky::new(corr.clone()).is_some() {
                return Ok(corr);
            }
        }
        damping *= 0.5;
    }
    Err(Error::NotPositiveDefinite)
}

/// Rows `X ~ N(0, Σ)` via the Cholesky factor, `Y = Xβ + σ ε`.
#[allow(clippy::too_many_arguments)]
pub fn draw_two_sample(
    beta1: &Vector,
    beta2: &Vector,
    sigma: &Matrix,
    n1: usize,
    n2: usize,
    sigma1: f64,
    sigma2: f64,
    seed: u64,
) -> Result<TwoSampleData> {
    let p = sigma.nrows();
    if beta1.len() != p || beta2.len() != p || sigma.ncols() != p {
        return Err(Error::DimensionMismatch("coefficients and covariance disagree on p".into()));
    }
    let l = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?.l();
    let sample = |n: usize, beta: &Vector, noise: f64, stream: u64| {
        let mut r = rng::stream(seed, &[stream]);
        let z = Matrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut r));
        let x = z * l.transpose();
        let eps = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut r));
        let y = &x * beta + eps * noise;
        (x, y)
    };
    let (x1, y1) = sample(n1, beta1, sigma1, 0);
    let (x2, y2) = sample(n2, beta2, sigma2, 1);
    TwoSampleData::new(x1, y1, x2, y2)
}

/// Symmetrised Kullback divergence `K₁ + K₂` between the two conditional
/// regression laws.
pub fn kullback_semidistance(
    beta1: &Vector,
    sigma1: f64,
    beta2: &Vector,
    sigma2: f64,
    cov1: &Matrix,
    cov2: &Matrix,
) -> f64 {
    let delta = beta2 - beta1;
    let norm = |cov: &Matrix| delta.dot(&(cov * &delta));
    let ratio = sigma1 / sigma2;
    0.5 * (ratio * ratio + 1.0 / (ratio * ratio) - 2.0 + norm(cov2) / (sigma1 * sigma1) + norm(cov1) / (sigma2 * sigma2))
}

/// A test procedure compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method {
    pub statistic: StatisticKind,
    pub collection: CollectionKind,
    pub permutation: bool,
}

impl Method {
    pub fn all() -> Vec<Method> {
        let mut out = Vec::new();
        for statistic in [StatisticKind::Suggested, StatisticKind::Fisher] {
            for collection in [CollectionKind::S1, CollectionKind::Lasso] {
                for permutation in [false, true] {
                    out.push(Method { statistic, collection, permutation });
                }
            }
        }
        out
    }

    pub fn config(&self, alpha: f64, b: usize, seed: u64) -> TestConfig {
        TestConfig {
            collection_kind: self.collection,
            calibration: if self.permutation { Calibration::Permutation { b } } else { Calibration::Bonferroni },
            alpha,
            seed,
            statistic: self.statistic,
            ..TestConfig::default()
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.statistic == StatisticKind::Fisher {
            f.write_str("fisher-")?;
        }
        f.write_str(if self.permutation { "perm-" } else { "bonf-" })?;
        match self.collection {
            CollectionKind::S1 => f.write_str("s1"),
            CollectionKind::SleqK(k) => write!(f, "s{k}"),
            CollectionKind::Lasso => f.write_str("lasso"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown method '{s}'"));
        let (statistic, rest) = match s.trim().strip_prefix("fisher-") {
            Some(rest) => (StatisticKind::Fisher, rest),
            None => (StatisticKind::Suggested, s.trim()),
        };
        let (cal, coll) = rest.split_once('-').ok_or_else(bad)?;
        let permutation = match cal {
            "perm" => true,
            "bonf" => false,
            _ => return Err(bad()),
        };
        let collection = match coll {
            "lasso" => CollectionKind::Lasso,
            "s1" => CollectionKind::S1,
            other => CollectionKind::SleqK(other.strip_prefix('s').and_then(|k| k.parse().ok()).ok_or_else(bad)?),
        };
        Ok(Method { statistic, collection, permutation })
    }
}

/// One grid point of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scenario: ScenarioId,
    pub covariance: CovarianceSpec,
    pub n: usize,
    pub p: usize,
    pub r: f64,
}

impl Cell {
    /// The dataset of replication `rep`, keyed on `(seed, cell, rep)`.
    pub fn dataset(&self, seed: u64, cell_index: usize, rep: usize) -> Result<TwoSampleData> {
        let (b1, b2) = make_scenario(self.scenario, self.n, self.p, self.r)?;
        let key = [cell_index as u64, rep as u64];
        let cov_seed = if self.covariance.is_random() { derive_seed(seed, &[key[0], key[1], 0]) } else { 0 };
        let sigma = make_covariance(&self.covariance, self.p, cov_seed)?;
        draw_two_sample(&b1, &b2, &sigma, self.n, self.n, 1.0, 1.0, derive_seed(seed, &[key[0], key[1], 1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub cells: Vec<Cell>,
    pub reps: usize,
    /// Permutations per permutation-calibrated test.
    pub b: usize,
}

impl ExperimentGrid {
    pub fn product(
        scenarios: &[ScenarioId],
        covariances: &[CovarianceSpec],
        ns: &[usize],
        p: usize,
        rs: &[f64],
        reps: usize,
        b: usize,
    ) -> Self {
        let mut cells = Vec::new();
        for &scenario in scenarios {
            for &covariance in covariances {
                for &n in ns {
                    for &r in rs {
                        cells.push(Cell { scenario, covariance, n, p, r });
                    }
                }
            }
        }
        Self { cells, reps, b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub covariance: String,
    pub n: usize,
    pub p: usize,
    pub r: f64,
    pub method: String,
    pub reps: usize,
    pub reject_rate: f64,
    pub ci_half_width: f64,
    pub mean_runtime_ms: Option<f64>,
}

/// `1.96·√(f(1−f)/reps)`.
pub fn ci_half_width(rate: f64, reps: usize) -> f64 {
    1.96 * (rate * (1.0 - rate) / reps as f64).sqrt()
}

pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    rng::stream(seed, coords).next_u64()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExperimentOptions {
    pub record_timing: bool,
}

/// Runs every method on every replication of every cell. Replications are
/// independent and run in parallel.
pub fn run_experiment(
    grid: &ExperimentGrid,
    methods: &[Method],
    alpha: f64,
    seed: u64,
    opts: ExperimentOptions,
) -> Result<Vec<ResultRow>> {
    if grid.reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let mut rows = Vec::new();
    for (ci, cell) in grid.cells.iter().enumerate() {
        // outcomes[rep][method] = (reject, elapsed ms)
        let outcomes: Vec<Vec<(bool, f64)>> = (0..grid.reps)
            .into_par_iter()
            .map(|rep| {
                let data = cell.dataset(seed, ci, rep)?;
                methods
                    .iter()
                    .enumerate()
                    .map(|(mi, m)| {
                        let cfg = m.config(alpha, grid.b, derive_seed(seed, &[ci as u64, rep as u64, 2 + mi as u64]));
                        let start = Instant::now();
                        let report = run_test(&data, &cfg)?;
                        Ok((report.reject, start.elapsed().as_secs_f64() * 1e3))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        for (mi, m) in methods.iter().enumerate() {
            let rejections = outcomes.iter().filter(|o| o[mi].0).count();
            let rate = rejections as f64 / grid.reps as f64;
            let runtime = outcomes.iter().map(|o| o[mi].1).sum::<f64>() / grid.reps as f64;
            rows.push(ResultRow {
                scenario: cell.scenario.to_string(),
                covariance: cell.covariance.to_string(),
                n: cell.n,
                p: cell.p,
                r: cell.r,
                method: m.to_string(),
                reps: grid.reps,
                reject_rate: rate,
                ci_half_width: ci_half_width(rate, grid.reps),
                mean_runtime_ms: opts.record_timing.then_some(runtime),
            });
        }
    }
    Ok(rows)
}

/// Level table: one line per `n`, columns `S₁ (B), S₁ (P), Lasso (B),
/// Lasso (P)`, entries `rate ± half-width` in percent. One block per
/// statistic present in `rows`.
pub fn format_level_table(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    for (title, prefix) in [("Suggested statistics", ""), ("Fisher statistic", "fisher-")] {
        let columns = ["bonf-s1", "perm-s1", "bonf-lasso", "perm-lasso"].map(|c| format!("{prefix}{c}"));
        if !rows.iter().any(|r| columns.contains(&r.method)) {
            continue;
        }
        out.push_str(&format!("{title}\n"));
        out.push_str(&format!("{:<10}{:>14}{:>14}{:>14}{:>14}\n", "", "S1 (B)", "S1 (P)", "Lasso (B)", "Lasso (P)"));
        for &n in &ns {
            out.push_str(&format!("{:<10}", format!("n = {n}")));
            for c in &columns {
                let cell = rows
                    .iter()
                    .find(|r| r.n == n && &r.method == c)
                    .map(|r| format!("{:.1} ± {:.1}", 100.0 * r.reject_rate, 100.0 * r.ci_half_width))
                    .unwrap_or_else(|| "-".into());
                out.push_str(&format!("{cell:>14}"));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
