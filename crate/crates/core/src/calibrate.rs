//! Rejection thresholds for the per-subset p-values.
//!
//! Two schemes are available. Bonferroni spreads the level over the ambient
//! family `S_{≤D}`; permutation calibration estimates the constants `Ĉ_V`
//! and `Ĉ₁ = Ĉ₂` as low quantiles of per-permutation weighted minima. In both
//! cases `α_{i,S} = Cᵢ / C(p, |S|)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collections::ModelCollection;
use crate::data::{SubsetModel, TwoSampleData};
use crate::error::{Error, Result};
use crate::numkit::ln_binomial;
use crate::rng;
use crate::stats::{clip_pvalue, PValueTriple};

/// Smallest number of permutations accepted by [`permutation_calibrate`].
pub const MIN_PERMUTATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationScheme {
    Bonferroni,
    Permutation,
}

/// Which per-subset statistic the thresholds apply to.
///
/// `Suggested` uses the three statistics `(F_V, F_1, F_2)`, calibrated
/// separately with half the level each. `Fisher` uses a single p-value
/// stored in both coefficient slots; the variance slot is ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    #[default]
    Suggested,
    Fisher,
}

/// Log-scale thresholds `(ln α_V, ln α_1, ln α_2)` for one subset.
/// `None` means the statistic never rejects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogThresholds {
    pub v: Option<f64>,
    pub one: f64,
    pub two: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationThresholds {
    pub scheme: CalibrationScheme,
    pub statistic: StatisticKind,
    pub alpha: f64,
    pub p: usize,
    /// Largest subset size covered by the Bonferroni budget.
    pub d_max: Option<usize>,
    /// `ln C_V`; `α_{V,S} = C_V / C(p, |S|)`.
    pub log_constant_v: Option<f64>,
    /// `ln C_1 = ln C_2`.
    pub log_constant_12: f64,
    /// Permutation estimates `(Ĉ_V, Ĉ₁)`.
    pub constants: Option<(f64, f64)>,
}

impl CalibrationThresholds {
    pub fn log_thresholds(&self, s: &SubsetModel) -> Result<LogThresholds> {
        if let (CalibrationScheme::Bonferroni, Some(d)) = (self.scheme, self.d_max) {
            if s.len() > d {
                return Err(Error::MissingThreshold(s.one_based()));
            }
        }
        let weight = ln_binomial(self.p, s.len());
        let one = self.log_constant_12 - weight;
        Ok(LogThresholds { v: self.log_constant_v.map(|c| c - weight), one, two: one })
    }

    /// Materialised thresholds for every subset of a collection.
    pub fn table(&self, subsets: &[SubsetModel]) -> Result<Vec<(SubsetModel, LogThresholds)>> {
        subsets.iter().map(|s| Ok((s.clone(), self.log_thresholds(s)?))).collect()
    }
}

/// One permutation draw with its weighted minima.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationDraw {
    pub permutation: Vec<usize>,
    /// `min_S q_{V,S}·C(p,|S|)`; `+∞` when nothing could be evaluated.
    pub c_v: f64,
    /// `min_S (q_{1,S} ∧ q_{2,S})·C(p,|S|)`.
    pub c_1: f64,
}

/// Bonferroni thresholds. With `D = d_max`, `α_{V,S} = α/(2D)·C(p,|S|)⁻¹`
/// and `α_{1,S} = α_{2,S} = α/(4D)·C(p,|S|)⁻¹`, so the weights sum to `α`
/// over `S_{≤D}`. For the Fisher statistic the whole `α/D` goes to the
/// single p-value.
pub fn bonferroni_thresholds(
    d_max: usize,
    p: usize,
    alpha: f64,
    statistic: StatisticKind,
) -> Result<CalibrationThresholds> {
    check_alpha(alpha)?;
    if d_max == 0 || p == 0 {
        return Err(Error::InvalidParameter("d_max and p must be positive".into()));
    }
    let d = d_max.min(p);
    let base = alpha.ln() - (d as f64).ln();
    let (log_constant_v, log_constant_12) = match statistic {
        StatisticKind::Suggested => (Some(base - 2f64.ln()), base - 4f64.ln()),
        StatisticKind::Fisher => (None, base),
    };
    Ok(CalibrationThresholds {
        scheme: CalibrationScheme::Bonferroni,
        statistic,
        alpha,
        p,
        d_max: Some(d),
        log_constant_v,
        log_constant_12,
        constants: None,
    })
}

/// `(ln min_S q_V·C(p,|S|), ln min_S (q_1 ∧ q_2)·C(p,|S|))` over a table.
pub fn log_weighted_minima<'a>(
    table: impl IntoIterator<Item = (&'a SubsetModel, &'a PValueTriple)>,
    p: usize,
) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::INFINITY);
    for (s, q) in table {
        let w = ln_binomial(p, s.len());
        best.0 = best.0.min(clip_pvalue(q.q_v).ln() + w);
        best.1 = best.1.min(clip_pvalue(q.q_12()).ln() + w);
    }
    best
}

/// Runs `b` permutations of the pooled rows. For each, the collection is
/// rebuilt on the permuted data and every subset is scored; subsets that
/// fail to evaluate are skipped.
pub fn permutation_draws<B, F>(
    data: &TwoSampleData,
    build: B,
    score: F,
    b: usize,
    seed: u64,
) -> Result<Vec<PermutationDraw>>
where
    B: Fn(&TwoSampleData) -> Result<ModelCollection> + Sync,
    F: Fn(&TwoSampleData, &SubsetModel) -> Result<PValueTriple> + Sync,
{
    if b < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter(format!(
            "at least {MIN_PERMUTATIONS} permutations are required, got {b}"
        )));
    }
    let n = data.n1() + data.n2();
    let p = data.p();
    (0..b)
        .into_par_iter()
        .map(|k| {
            let permutation = rng::permutation(seed, &[k as u64], n);
            let permuted = data.permuted(&permutation);
            let collection = build(&permuted)?;
            let scored: Vec<(SubsetModel, PValueTriple)> = collection
                .subsets
                .into_iter()
                .filter_map(|s| score(&permuted, &s).ok().map(|q| (s, q)))
                .collect();
            let (lv, l1) = log_weighted_minima(scored.iter().map(|(s, q)| (s, q)), p);
            Ok(PermutationDraw { permutation, c_v: lv.exp(), c_1: l1.exp() })
        })
        .collect()
}

/// Position of the calibrating order statistic: `max(1, ⌊level·b⌋)`.
pub fn order_statistic_index(level: f64, b: usize) -> usize {
    ((level * b as f64).floor() as usize).max(1)
}

/// `k`-th smallest value (one-based).
fn order_statistic(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v[(k - 1).min(v.len() - 1)]
}

/// Thresholds from already computed permutation draws.
pub fn thresholds_from_draws(
    draws: &[PermutationDraw],
    p: usize,
    alpha: f64,
    statistic: StatisticKind,
) -> Result<CalibrationThresholds> {
    check_alpha(alpha)?;
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no permutation draws".into()));
    }
    let b = draws.len();
    let (c_v, c_1) = match statistic {
        StatisticKind::Suggested => {
            let k = order_statistic_index(alpha / 2.0, b);
            (
                Some(order_statistic(draws.iter().map(|d| d.c_v), k)),
                order_statistic(draws.iter().map(|d| d.c_1), k),
            )
        }
        StatisticKind::Fisher => {
            let k = order_statistic_index(alpha, b);
            (None, order_statistic(draws.iter().map(|d| d.c_1), k))
        }
    };
    Ok(CalibrationThresholds {
        scheme: CalibrationScheme::Permutation,
        statistic,
        alpha,
        p,
        d_max: None,
        log_constant_v: c_v.map(f64::ln),
        log_constant_12: c_1.ln(),
        constants: Some((c_v.unwrap_or(f64::INFINITY), c_1)),
    })
}

/// Permutation calibration: draws followed by [`thresholds_from_draws`].
pub fn permutation_calibrate<B, F>(
    data: &TwoSampleData,
    build: B,
    score: F,
    b: usize,
    alpha: f64,
    seed: u64,
    statistic: StatisticKind,
) -> Result<CalibrationThresholds>
where
    B: Fn(&TwoSampleData) -> Result<ModelCollection> + Sync,
    F: Fn(&TwoSampleData, &SubsetModel) -> Result<PValueTriple> + Sync,
{
    check_alpha(alpha)?;
    let draws = permutation_draws(data, build, score, b, seed)?;
    thresholds_from_draws(&draws, data.p(), alpha, statistic)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WitnessStatistic {
    #[serde(rename = "V")]
    V,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub subset: SubsetModel,
    pub statistic: WitnessStatistic,
    /// `ln q − ln α` for the achieving pair (≤ 0).
    pub log_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub reject: bool,
    pub witness: Option<Witness>,
}

fn at_most(q: f64, log_threshold: f64) -> bool {
    let q = clip_pvalue(q);
    // the linear check absorbs rounding in ln(exp(x))
    q.ln() <= log_threshold || q <= log_threshold.exp()
}

/// Rejects iff some `q_{i,S} ≤ α_{i,S}`. The witness is the achieving pair
/// with the smallest log margin, earliest in table order on ties.
pub fn decide(pvals: &[(SubsetModel, PValueTriple)], thresholds: &CalibrationThresholds) -> Result<Decision> {
    let mut witness: Option<Witness> = None;
    for (s, q) in pvals {
        let th = thresholds.log_thresholds(s)?;
        let candidates = [
            (WitnessStatistic::V, q.q_v, th.v),
            (WitnessStatistic::One, q.q_1, Some(th.one)),
            (WitnessStatistic::Two, q.q_2, Some(th.two)),
        ];
        for (stat, value, log_th) in candidates {
            let Some(log_th) = log_th else { continue };
            if !at_most(value, log_th) {
                continue;
            }
            let margin = (clip_pvalue(value).ln() - log_th).min(0.0);
            if witness.as_ref().is_none_or(|w| margin < w.log_margin) {
                witness = Some(Witness { subset: s.clone(), statistic: stat, log_margin: margin });
            }
        }
    }
    Ok(Decision { reject: witness.is_some(), witness })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}
