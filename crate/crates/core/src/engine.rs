//! End-to-end test: build the collection, score every subset, calibrate,
//! decide, and report empirical p-values and rejected models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    bonferroni_thresholds, decide, log_weighted_minima, permutation_draws, thresholds_from_draws,
    CalibrationThresholds, PermutationDraw, StatisticKind, Witness, WitnessStatistic,
};
use crate::collections::{
    build_lasso_collection, deterministic_collection, CollectionKind, LassoOptions, ModelCollection,
    DEFAULT_ENUMERATION_BUDGET,
};
use crate::data::{SubsetModel, TwoSampleData};
use crate::error::{Error, Result};
use crate::numkit::{fisher_sf, least_squares, select_columns, Matrix, Vector};
use crate::stats::{evaluate_subset, PValueTriple, StatOptions, StatTriple};

/// Smallest per-sample size accepted by [`run_test`].
pub const MIN_OBSERVATIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum Calibration {
    Bonferroni,
    Permutation { b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub collection_kind: CollectionKind,
    pub calibration: Calibration,
    pub alpha: f64,
    pub seed: u64,
    /// Largest subset size for the Lasso collection; defaults to
    /// `⌊min(n1, n2)/2⌋`.
    pub d_max: Option<usize>,
    pub statistic: StatisticKind,
    pub lasso: LassoOptions,
    pub stat_options: StatOptions,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            collection_kind: CollectionKind::Lasso,
            calibration: Calibration::Permutation { b: 100 },
            alpha: 0.05,
            seed: 0,
            d_max: None,
            statistic: StatisticKind::Suggested,
            lasso: LassoOptions::default(),
            stat_options: StatOptions::default(),
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Calibration::Permutation { b } = self.calibration {
            if b < crate::calibrate::MIN_PERMUTATIONS {
                return Err(Error::InvalidParameter(format!("b must be at least 20, got {b}")));
            }
        }
        if self.d_max == Some(0) {
            return Err(Error::InvalidParameter("d_max must be positive".into()));
        }
        Ok(())
    }

    /// The `D` of the Bonferroni budget for this data.
    pub fn effective_d_max(&self, data: &TwoSampleData) -> usize {
        match self.collection_kind {
            CollectionKind::S1 => 1,
            CollectionKind::SleqK(k) => k.min(data.p()),
            CollectionKind::Lasso => self.d_max.unwrap_or_else(|| data.default_d_max()).max(1),
        }
    }

    pub fn build_collection(&self, data: &TwoSampleData) -> Result<ModelCollection> {
        match self.collection_kind {
            CollectionKind::Lasso => build_lasso_collection(data, self.effective_d_max(data), self.lasso),
            kind => deterministic_collection(kind, data.p(), DEFAULT_ENUMERATION_BUDGET),
        }
    }

    /// P-values of one subset under the configured statistic.
    pub fn score(&self, data: &TwoSampleData, s: &SubsetModel) -> Result<PValueTriple> {
        match self.statistic {
            StatisticKind::Suggested => evaluate_subset(data, s, self.stat_options).map(|(_, q)| q),
            StatisticKind::Fisher => {
                fisher_statistic(data, s).map(|(_, q)| PValueTriple { q_v: 1.0, q_1: q, q_2: q })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub subset: SubsetModel,
    /// `(F_V, F_1, F_2)`; absent for the Fisher statistic.
    pub statistics: Option<StatTriple>,
    /// `Fi_S`; present only for the Fisher statistic.
    pub fisher: Option<f64>,
    pub pvalues: PValueTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSubset {
    pub subset: SubsetModel,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPValues {
    pub p_v: f64,
    pub p_12: f64,
    pub p_global: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub config: TestConfig,
    pub n1: usize,
    pub n2: usize,
    pub p: usize,
    pub reject: bool,
    pub empirical_p: Option<f64>,
    pub empirical_p_v: Option<f64>,
    pub empirical_p_12: Option<f64>,
    /// `S^R`: under permutation calibration the argmin of the weighted
    /// p-values of the more significant part, otherwise the witness subset.
    pub rejected_model: Option<SubsetModel>,
    pub rejected_model_v: Option<SubsetModel>,
    pub rejected_model_12: Option<SubsetModel>,
    pub witness: Option<Witness>,
    pub witness_statistic: Option<WitnessStatistic>,
    pub per_subset: Vec<SubsetRow>,
    pub skipped: Vec<SkippedSubset>,
    pub thresholds: CalibrationThresholds,
}

impl TestReport {
    pub fn pvalue_table(&self) -> Vec<(SubsetModel, PValueTriple)> {
        self.per_subset.iter().map(|r| (r.subset.clone(), r.pvalues)).collect()
    }
}

fn check_data(data: &TwoSampleData) -> Result<()> {
    let got = data.n1().min(data.n2());
    if got < MIN_OBSERVATIONS {
        return Err(Error::TooFewObservations { needed: MIN_OBSERVATIONS, got });
    }
    if data.p() == 0 {
        return Err(Error::DimensionMismatch("no covariates".into()));
    }
    Ok(())
}

fn score_rows(
    data: &TwoSampleData,
    collection: &ModelCollection,
    config: &TestConfig,
) -> (Vec<SubsetRow>, Vec<SkippedSubset>) {
    let results: Vec<(SubsetModel, Result<SubsetRow>)> = collection
        .subsets
        .par_iter()
        .map(|s| {
            let row = match config.statistic {
                StatisticKind::Suggested => evaluate_subset(data, s, config.stat_options).map(|(t, q)| SubsetRow {
                    subset: s.clone(),
                    statistics: Some(t),
                    fisher: None,
                    pvalues: q,
                }),
                StatisticKind::Fisher => fisher_statistic(data, s).map(|(f, q)| SubsetRow {
                    subset: s.clone(),
                    statistics: None,
                    fisher: Some(f),
                    pvalues: PValueTriple { q_v: 1.0, q_1: q, q_2: q },
                }),
            };
            (s.clone(), row)
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (subset, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => skipped.push(SkippedSubset { subset, reason: e.to_string() }),
        }
    }
    (rows, skipped)
}

/// Runs the full adaptive test.
pub fn run_test(data: &TwoSampleData, config: &TestConfig) -> Result<TestReport> {
    config.validate()?;
    check_data(data)?;
    let p = data.p();
    let collection = config.build_collection(data)?;
    let (rows, skipped) = score_rows(data, &collection, config);
    let table: Vec<(SubsetModel, PValueTriple)> =
        rows.iter().map(|r| (r.subset.clone(), r.pvalues)).collect();

    let (thresholds, draws) = match config.calibration {
        Calibration::Bonferroni => {
            (bonferroni_thresholds(config.effective_d_max(data), p, config.alpha, config.statistic)?, None)
        }
        Calibration::Permutation { b } => {
            let draws = permutation_draws(
                data,
                |d| config.build_collection(d),
                |d, s| config.score(d, s),
                b,
                config.seed,
            )?;
            (thresholds_from_draws(&draws, p, config.alpha, config.statistic)?, Some(draws))
        }
    };
    let decision = decide(&table, &thresholds)?;

    let mut report = TestReport {
        config: *config,
        n1: data.n1(),
        n2: data.n2(),
        p,
        reject: decision.reject,
        empirical_p: None,
        empirical_p_v: None,
        empirical_p_12: None,
        rejected_model: decision.witness.as_ref().map(|w| w.subset.clone()),
        rejected_model_v: None,
        rejected_model_12: None,
        witness_statistic: decision.witness.as_ref().map(|w| w.statistic),
        witness: decision.witness,
        per_subset: rows,
        skipped,
        thresholds,
    };

    if let Some(draws) = draws {
        let emp = empirical_pvalues(&table, &draws, p);
        let (s_v, s_12) = match rejected_models(&table, p) {
            Some((v, c)) => (Some(v), Some(c)),
            None => (None, None),
        };
        match config.statistic {
            StatisticKind::Suggested => {
                report.empirical_p = Some(emp.p_global);
                report.empirical_p_v = Some(emp.p_v);
                report.empirical_p_12 = Some(emp.p_12);
                report.rejected_model = match (&s_v, &s_12) {
                    (Some(v), Some(c)) => Some(select_rejected(v, c, emp.p_v, emp.p_12)),
                    _ => None,
                };
                report.rejected_model_v = s_v;
            }
            StatisticKind::Fisher => {
                // a single calibrated part: no doubling
                report.empirical_p = Some(emp.p_12);
                report.empirical_p_12 = Some(emp.p_12);
                report.rejected_model = s_12.clone();
            }
        }
        report.rejected_model_12 = s_12;
    }
    Ok(report)
}

/// Fraction of draws whose weighted minimum is strictly below the observed
/// one, for each part; `p_global = 2·min(p_v, p_12)` clipped to 1.
pub fn empirical_pvalues(
    observed: &[(SubsetModel, PValueTriple)],
    draws: &[PermutationDraw],
    p: usize,
) -> EmpiricalPValues {
    let (lv, l1) = log_weighted_minima(observed.iter().map(|(s, q)| (s, q)), p);
    let (obs_v, obs_1) = (lv.exp(), l1.exp());
    let b = draws.len().max(1) as f64;
    let p_v = draws.iter().filter(|d| d.c_v < obs_v).count() as f64 / b;
    let p_12 = draws.iter().filter(|d| d.c_1 < obs_1).count() as f64 / b;
    EmpiricalPValues { p_v, p_12, p_global: (2.0 * p_v.min(p_12)).min(1.0) }
}

/// `(S^R_V, S^R_12)`: argmins of `q_V·C(p,|S|)` and `(q_1 ∧ q_2)·C(p,|S|)`,
/// ties broken by size then lexicographically.
pub fn rejected_models(observed: &[(SubsetModel, PValueTriple)], p: usize) -> Option<(SubsetModel, SubsetModel)> {
    let weighted = |f: fn(&PValueTriple) -> f64| {
        observed
            .iter()
            .map(|(s, q)| (s, crate::stats::clip_pvalue(f(q)).ln() + crate::numkit::ln_binomial(p, s.len())))
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.size_then_lex(b.0)))
            .map(|(s, _)| s.clone())
    };
    Some((weighted(|q| q.q_v)?, weighted(PValueTriple::q_12)?))
}

/// `S^R`: the argmin from the part with the smaller empirical p-value.
pub fn select_rejected(s_v: &SubsetModel, s_12: &SubsetModel, p_v: f64, p_12: f64) -> SubsetModel {
    if p_v < p_12 {
        s_v.clone()
    } else if p_12 < p_v {
        s_12.clone()
    } else if s_v.size_then_lex(s_12).is_le() {
        s_v.clone()
    } else {
        s_12.clone()
    }
}

/// Classical F statistic for `β_S⁽¹⁾ = β_S⁽²⁾` with its exact p-value on
/// `(|S|, n1 + n2 − 2|S|)` degrees of freedom.
pub fn fisher_statistic(data: &TwoSampleData, s: &SubsetModel) -> Result<(f64, f64)> {
    let k = s.len();
    if k == 0 {
        return Err(Error::EmptySubset);
    }
    let (n1, n2) = (data.n1(), data.n2());
    if 2 * k >= n1 + n2 || k >= n1 || k >= n2 {
        return Err(Error::SubsetTooLarge { size: k, n1, n2 });
    }
    if let Some(&j) = s.indices().iter().find(|&&j| j >= data.p()) {
        return Err(Error::DimensionMismatch(format!("covariate index {j} out of range")));
    }
    let x1 = select_columns(&data.x1, s.indices());
    let x2 = select_columns(&data.x2, s.indices());
    let fit1 = least_squares(&x1, &data.y1)?;
    let fit2 = least_squares(&x2, &data.y2)?;
    let pooled_x = Matrix::from_fn(n1 + n2, k, |i, j| if i < n1 { x1[(i, j)] } else { x2[(i - n1, j)] });
    let pooled_y = Vector::from_fn(n1 + n2, |i, _| if i < n1 { data.y1[i] } else { data.y2[i - n1] });
    let pooled = least_squares(&pooled_x, &pooled_y)?;
    for fit in [&fit1, &fit2, &pooled] {
        if fit.rank < k {
            return Err(Error::RankDeficient { rank: fit.rank, cols: k });
        }
    }
    let within = fit1.residual_sum_squares + fit2.residual_sum_squares;
    if within <= 0.0 {
        return Err(Error::NonFinite("fisher statistic with zero residual"));
    }
    let dof = n1 + n2 - 2 * k;
    let value = ((pooled.residual_sum_squares - within).max(0.0) / within) * dof as f64 / k as f64;
    Ok((value, fisher_sf(k, dof, value)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn gaussian_data(seed: u64, n: usize, p: usize, shift: Option<(usize, f64)>) -> TwoSampleData {
        let mut r = rng::stream(seed, &[]);
        let x1 = Matrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut r));
        let x2 = Matrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut r));
        let mut y1 = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut r));
        let mut y2 = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut r));
        if let Some((j, mag)) = shift {
            y1 += x1.column(j) * mag;
            y2 -= x2.column(j) * mag;
        }
        TwoSampleData::new(x1, y1, x2, y2).unwrap()
    }

    fn triple(q_v: f64, q_1: f64, q_2: f64) -> PValueTriple {
        PValueTriple { q_v, q_1, q_2 }
    }

    #[test]
    fn empirical_pvalue_extremes() {
        let table = vec![(SubsetModel::singleton(0), triple(0.01, 0.02, 0.5))];
        let draws = |c| -> Vec<PermutationDraw> {
            (0..20).map(|_| PermutationDraw { permutation: vec![], c_v: c, c_1: c }).collect()
        };
        let e = empirical_pvalues(&table, &draws(1.0), 4);
        assert_eq!((e.p_v, e.p_12, e.p_global), (0.0, 0.0, 0.0));
        let e = empirical_pvalues(&table, &draws(1e-9), 4);
        assert_eq!((e.p_v, e.p_12, e.p_global), (1.0, 1.0, 1.0));
        // ties are not counted
        let tie = (0.01f64.ln() + crate::numkit::ln_binomial(4, 1)).exp();
        let e = empirical_pvalues(&table, &draws(tie), 4);
        assert_eq!(e.p_v, 0.0);
    }

    #[test]
    fn rejected_model_examples() {
        let s = SubsetModel::new(vec![2, 3]);
        let (v, c) = rejected_models(&[(s.clone(), triple(0.3, 0.2, 0.9))], 5).unwrap();
        assert_eq!((&v, &c), (&s, &s));

        let table = vec![
            (SubsetModel::singleton(0), triple(0.001, 0.5, 0.5)),
            (SubsetModel::singleton(1), triple(0.5, 0.5, 1e-6)),
            (SubsetModel::singleton(2), triple(0.5, 0.01, 0.5)),
        ];
        let (v, c) = rejected_models(&table, 3).unwrap();
        assert_eq!(v, SubsetModel::singleton(0));
        assert_eq!(c, SubsetModel::singleton(1));
        assert_eq!(select_rejected(&v, &c, 0.2, 0.01), c);
        assert_eq!(select_rejected(&v, &c, 0.01, 0.2), v);
        assert_eq!(select_rejected(&v, &c, 0.1, 0.1), v);
    }

    #[test]
    fn fisher_duplicated_sample() {
        let d = gaussian_data(1, 20, 4, None);
        let dup = TwoSampleData::new(d.x1.clone(), d.y1.clone(), d.x1.clone(), d.y1.clone()).unwrap();
        let (f, q) = fisher_statistic(&dup, &SubsetModel::new(vec![0, 2])).unwrap();
        assert!(f < 1e-10);
        assert!(q > 1.0 - 1e-8);
    }

    #[test]
    fn fisher_scalar_oracle() {
        let d = gaussian_data(2, 12, 3, Some((1, 0.7)));
        let j = 1;
        let (a, b) = (d.x1.column(j), d.x2.column(j));
        let rss = |x: &[f64], y: &[f64]| {
            let sxy: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
            let sxx: f64 = x.iter().map(|u| u * u).sum();
            let syy: f64 = y.iter().map(|v| v * v).sum();
            syy - sxy * sxy / sxx
        };
        let r1 = rss(a.as_slice(), d.y1.as_slice());
        let r2 = rss(b.as_slice(), d.y2.as_slice());
        let xs: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        let ys: Vec<f64> = d.y1.iter().chain(d.y2.iter()).copied().collect();
        let rp = rss(&xs, &ys);
        let expected = (rp - r1 - r2) / (r1 + r2) * 22.0;
        let (f, q) = fisher_statistic(&d, &SubsetModel::singleton(j)).unwrap();
        assert!((f - expected).abs() <= 1e-10 * expected.abs());
        assert!((q - fisher_sf(1, 22, expected)).abs() < 1e-12);
    }

    #[test]
    fn report_lists_each_subset_once() {
        let d = gaussian_data(3, 20, 12, Some((4, 1.0)));
        let cfg = TestConfig { calibration: Calibration::Bonferroni, ..Default::default() };
        let report = run_test(&d, &cfg).unwrap();
        let collection = cfg.build_collection(&d).unwrap();
        let mut listed: Vec<SubsetModel> = report
            .per_subset
            .iter()
            .map(|r| r.subset.clone())
            .chain(report.skipped.iter().map(|s| s.subset.clone()))
            .collect();
        listed.sort_by(SubsetModel::size_then_lex);
        assert_eq!(listed, collection.subsets);
        if let Some(w) = &report.witness {
            assert!(collection.subsets.contains(&w.subset));
        }
    }

    #[test]
    fn duplicated_sample_is_accepted() {
        let d = gaussian_data(4, 25, 10, None);
        let dup = TwoSampleData::new(d.x1.clone(), d.y1.clone(), d.x1.clone(), d.y1.clone()).unwrap();
        for statistic in [StatisticKind::Suggested, StatisticKind::Fisher] {
            for calibration in [Calibration::Bonferroni, Calibration::Permutation { b: 40 }] {
                let cfg = TestConfig { calibration, statistic, ..Default::default() };
                let r = run_test(&dup, &cfg).unwrap();
                assert!(!r.reject, "{statistic:?} {calibration:?}");
                if let Some(p) = r.empirical_p {
                    assert!(p > 0.5, "{p}");
                }
            }
        }
    }

    #[test]
    fn strong_shift_is_rejected() {
        let d = gaussian_data(5, 30, 15, Some((3, 2.0)));
        for calibration in [Calibration::Bonferroni, Calibration::Permutation { b: 40 }] {
            let cfg = TestConfig { calibration, ..Default::default() };
            let r = run_test(&d, &cfg).unwrap();
            assert!(r.reject);
            assert!(r.rejected_model.unwrap().contains(3));
        }
    }

    #[test]
    fn deterministic_reports() {
        let d = gaussian_data(6, 20, 8, Some((0, 0.5)));
        let cfg = TestConfig { seed: 99, calibration: Calibration::Permutation { b: 30 }, ..Default::default() };
        let a = serde_json::to_string(&run_test(&d, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_test(&d, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_validation() {
        let d = gaussian_data(7, 3, 2, None);
        assert_eq!(
            run_test(&d, &TestConfig::default()).unwrap_err(),
            Error::TooFewObservations { needed: 4, got: 3 }
        );
        let d = gaussian_data(7, 10, 2, None);
        for bad in [
            TestConfig { alpha: 1.0, ..Default::default() },
            TestConfig { calibration: Calibration::Permutation { b: 10 }, ..Default::default() },
            TestConfig { d_max: Some(0), ..Default::default() },
        ] {
            assert!(matches!(run_test(&d, &bad), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn bonferroni_threshold_monotonicity() {
        // permutation thresholds that dominate Bonferroni ones reject whenever Bonferroni does
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut r = rng::stream(8, &[]);
        let bonf = bonferroni_thresholds(3, 10, 0.05, StatisticKind::Suggested).unwrap();
        let mut looser = bonf.clone();
        looser.log_constant_v = looser.log_constant_v.map(|c| c + 0.5);
        looser.log_constant_12 += 0.5;
        for _ in 0..200 {
            let table: Vec<(SubsetModel, PValueTriple)> = (0..10)
                .map(|j| {
                    let mut q = || (normal.sample(&mut r) * 3.0 - 9.0f64).exp().min(1.0);
                    (SubsetModel::singleton(j), triple(q(), q(), q()))
                })
                .collect();
            if decide(&table, &bonf).unwrap().reject {
                assert!(decide(&table, &looser).unwrap().reject);
            }
        }
    }
}
