//! Two-sample comparison of Gaussian graphical models by neighborhood
//! regressions: node `i` is regressed on all other nodes in both samples and
//! the per-node two-sample tests are combined at level `α/p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_test, Calibration, TestConfig, TestReport};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Vector};
use crate::TwoSampleData;

/// Caveat attached to every report.
pub const INTERPRETATION_CAVEAT: &str =
    "As a result, only the global test can be strictly speaking interpreted in a statistically correct sense.";

#[derive(Debug, Clone, PartialEq)]
pub struct GgmSamples {
    pub z1: Matrix,
    pub z2: Matrix,
}

impl GgmSamples {
    pub fn new(z1: Matrix, z2: Matrix) -> Result<Self> {
        if z1.ncols() != z2.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "samples have {} and {} nodes",
                z1.ncols(),
                z2.ncols()
            )));
        }
        if z1.iter().chain(z2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation matrix"));
        }
        Ok(Self { z1, z2 })
    }

    pub fn nodes(&self) -> usize {
        self.z1.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResult {
    pub node: usize,
    /// Design column `j` corresponds to node `index_map[j]`.
    pub index_map: Vec<usize>,
    pub report: TestReport,
    /// Empirical p-value compared with `α/p` (permutation calibration only).
    pub empirical_p: Option<f64>,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgmReport {
    pub alpha: f64,
    pub node_level: f64,
    /// Permutations actually drawn per node test (permutation calibration).
    pub permutations_per_node: Option<usize>,
    pub global_reject: bool,
    pub per_node: Vec<NodeResult>,
    pub flagged_nodes: Vec<usize>,
    /// `(i, j)` for each `j` in the rejected model of a rejected node `i`.
    pub flagged_edges: Vec<(usize, usize)>,
    pub caveat: String,
}

/// Smallest `b' ≥ b` such that an empirical p-value from `b'` draws falls
/// at or below `level` with probability at most `level` under exchangeability,
/// i.e. `(⌊b'·level⌋ + 1)/(b' + 1) ≤ level`.
pub fn resolving_permutations(b: usize, level: f64) -> usize {
    let mut m = b.max(crate::calibrate::MIN_PERMUTATIONS);
    loop {
        let k = (m as f64 * level).floor();
        if k + 1.0 <= level * (m as f64 + 1.0) * (1.0 + 1e-12) {
            return m;
        }
        m += 1;
    }
}

/// Response is column `node`; design is every other column in order.
pub fn neighborhood_data(samples: &GgmSamples, node: usize) -> Result<(TwoSampleData, Vec<usize>)> {
    let p = samples.nodes();
    if p < 2 {
        return Err(Error::DimensionMismatch("at least two nodes are needed".into()));
    }
    if node >= p {
        return Err(Error::InvalidParameter(format!("node {node} out of range")));
    }
    let index_map: Vec<usize> = (0..p).filter(|&j| j != node).collect();
    let split = |z: &Matrix| {
        let x = Matrix::from_fn(z.nrows(), p - 1, |i, j| z[(i, index_map[j])]);
        let y = Vector::from_fn(z.nrows(), |i, _| z[(i, node)]);
        (x, y)
    };
    let (x1, y1) = split(&samples.z1);
    let (x2, y2) = split(&samples.z2);
    Ok((TwoSampleData::new(x1, y1, x2, y2)?, index_map))
}

/// Runs one neighborhood test per node at level `α/p`; the global null is
/// rejected when any node test rejects.
pub fn ggm_test(samples: &GgmSamples, config: &TestConfig) -> Result<GgmReport> {
    config.validate()?;
    let p = samples.nodes();
    if p < 2 {
        return Err(Error::DimensionMismatch("at least two nodes are needed".into()));
    }
    let node_level = config.alpha / p as f64;
    // each part of a node test must resolve α/(2p)
    let node_calibration = match config.calibration {
        Calibration::Permutation { b } => Calibration::Permutation { b: resolving_permutations(b, node_level / 2.0) },
        Calibration::Bonferroni => Calibration::Bonferroni,
    };
    let per_node: Vec<NodeResult> = (0..p)
        .into_par_iter()
        .map(|node| {
            let (data, index_map) = neighborhood_data(samples, node)?;
            let node_config = TestConfig {
                alpha: node_level,
                seed: config.seed ^ node as u64,
                calibration: node_calibration,
                ..*config
            };
            let report = run_test(&data, &node_config)?;
            let (empirical_p, reject) = match config.calibration {
                Calibration::Permutation { .. } => {
                    let e = report.empirical_p.unwrap_or(1.0);
                    (Some(e), e <= node_level)
                }
                Calibration::Bonferroni => (None, report.reject),
            };
            Ok(NodeResult { node, index_map, report, empirical_p, reject })
        })
        .collect::<Result<_>>()?;

    let mut flagged_nodes = Vec::new();
    let mut flagged_edges = Vec::new();
    for r in per_node.iter().filter(|r| r.reject) {
        flagged_nodes.push(r.node);
        if let Some(model) = &r.report.rejected_model {
            flagged_edges.extend(model.indices().iter().map(|&j| (r.node, r.index_map[j])));
        }
    }
    Ok(GgmReport {
        alpha: config.alpha,
        node_level,
        permutations_per_node: match node_calibration {
            Calibration::Permutation { b } => Some(b),
            Calibration::Bonferroni => None,
        },
        global_reject: !flagged_nodes.is_empty(),
        per_node,
        flagged_nodes,
        flagged_edges,
        caveat: INTERPRETATION_CAVEAT.to_string(),
    })
}
