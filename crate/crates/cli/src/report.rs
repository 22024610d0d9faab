//! JSON views of the core reports. Subset and node indices are one-based
//! in every emitted document.

use hdht_core::calibrate::{CalibrationThresholds, StatisticKind};
use hdht_core::collections::CollectionKind;
use hdht_core::engine::{Calibration, TestConfig, TestReport};
use hdht_core::ggm::GgmReport;
use hdht_core::validate::ValidationReport;
use hdht_core::SubsetModel;
use serde_json::{json, Value};

pub const SCHEMA_VERSION: &str = "1.0";

fn subset(s: &SubsetModel) -> Value {
    json!(s.one_based())
}

fn opt_subset(s: &Option<SubsetModel>) -> Value {
    s.as_ref().map_or(Value::Null, subset)
}

fn collection_name(kind: CollectionKind) -> String {
    match kind {
        CollectionKind::S1 => "s1".into(),
        CollectionKind::SleqK(k) => format!("s{k}"),
        CollectionKind::Lasso => "lasso".into(),
    }
}

fn config(c: &TestConfig) -> Value {
    let (scheme, b) = match c.calibration {
        Calibration::Bonferroni => ("bonferroni", Value::Null),
        Calibration::Permutation { b } => ("permutation", json!(b)),
    };
    json!({
        "collection": collection_name(c.collection_kind),
        "calibration": scheme,
        "permutations": b,
        "alpha": c.alpha,
        "seed": c.seed,
        "d_max": c.d_max,
        "statistic": match c.statistic {
            StatisticKind::Suggested => "suggested",
            StatisticKind::Fisher => "fisher",
        },
        "standardize": c.lasso.standardize,
    })
}

fn thresholds(t: &CalibrationThresholds) -> Value {
    json!({
        "scheme": t.scheme,
        "d_max": t.d_max,
        "log_constant_v": t.log_constant_v,
        "log_constant_12": t.log_constant_12,
        "constant_v": t.constants.map(|c| c.0),
        "constant_12": t.constants.map(|c| c.1),
    })
}

/// The test report body, without the envelope.
pub fn test_report_body(r: &TestReport) -> Value {
    let rows: Vec<Value> = r
        .per_subset
        .iter()
        .map(|row| {
            let th = r.thresholds.log_thresholds(&row.subset).ok();
            json!({
                "subset": subset(&row.subset),
                "f_v": row.statistics.map(|t| t.f_v),
                "f_1": row.statistics.map(|t| t.f_1),
                "f_2": row.statistics.map(|t| t.f_2),
                "fisher": row.fisher,
                "q_v": row.pvalues.q_v,
                "q_1": row.pvalues.q_1,
                "q_2": row.pvalues.q_2,
                "log_alpha_v": th.and_then(|t| t.v),
                "log_alpha_1": th.map(|t| t.one),
                "log_alpha_2": th.map(|t| t.two),
            })
        })
        .collect();
    let skipped: Vec<Value> =
        r.skipped.iter().map(|s| json!({ "subset": subset(&s.subset), "reason": s.reason })).collect();
    json!({
        "config": config(&r.config),
        "n1": r.n1,
        "n2": r.n2,
        "p": r.p,
        "reject": r.reject,
        "empirical_p": r.empirical_p,
        "empirical_p_v": r.empirical_p_v,
        "empirical_p_12": r.empirical_p_12,
        "rejected_model": opt_subset(&r.rejected_model),
        "rejected_model_v": opt_subset(&r.rejected_model_v),
        "rejected_model_12": opt_subset(&r.rejected_model_12),
        "witness": r.witness.as_ref().map(|w| json!({
            "subset": subset(&w.subset),
            "statistic": w.statistic,
            "log_margin": w.log_margin,
        })),
        "witness_statistic": r.witness_statistic,
        "thresholds": thresholds(&r.thresholds),
        "per_subset": rows,
        "skipped": skipped,
    })
}

pub fn test_report(r: &TestReport, inputs: &[String], labels: Option<&[String]>) -> Value {
    let mut body = test_report_body(r);
    body["schema_version"] = json!(SCHEMA_VERSION);
    body["kind"] = json!("two_sample_test");
    body["inputs"] = json!(inputs);
    body["covariate_labels"] = json!(labels);
    body
}

pub fn ggm_report(r: &GgmReport, inputs: &[String], labels: &[String]) -> Value {
    let label = |i: usize| labels[i].clone();
    let nodes: Vec<Value> = r
        .per_node
        .iter()
        .map(|n| {
            let neighbors = |s: &Option<SubsetModel>| -> Value {
                s.as_ref()
                    .map_or(Value::Null, |s| json!(s.indices().iter().map(|&j| n.index_map[j] + 1).collect::<Vec<_>>()))
            };
            json!({
                "node": n.node + 1,
                "label": label(n.node),
                "reject": n.reject,
                "empirical_p": n.empirical_p,
                "test_reject": n.report.reject,
                "rejected_model": neighbors(&n.report.rejected_model),
                "witness_statistic": n.report.witness_statistic,
                "collection_size": n.report.per_subset.len() + n.report.skipped.len(),
            })
        })
        .collect();
    json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "ggm_test",
        "inputs": inputs,
        "alpha": r.alpha,
        "node_level": r.node_level,
        "permutations_per_node": r.permutations_per_node,
        "config": r.per_node.first().map(|n| config(&TestConfig { alpha: r.alpha, ..n.report.config })),
        "global_reject": r.global_reject,
        "flagged_nodes": r.flagged_nodes.iter().map(|&i| i + 1).collect::<Vec<_>>(),
        "flagged_node_labels": r.flagged_nodes.iter().map(|&i| label(i)).collect::<Vec<_>>(),
        "flagged_edges": r.flagged_edges.iter().map(|&(i, j)| [i + 1, j + 1]).collect::<Vec<_>>(),
        "per_node": nodes,
        "caveat": r.caveat,
    })
}

pub fn validation_report(r: &ValidationReport) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "validation",
        "passed": r.passed,
        "checks": r.checks,
    })
}
