//! Model collections: the deterministic families `S₁`, `S_{≤k}` and the
//! data-driven Lasso family read off the regularisation path of the joint
//! reparametrised regression.

pub mod lars;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{SubsetModel, TwoSampleData};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Vector};

pub use lars::{Breakpoint, LarsHomotopy, PathEvent};

/// Default cap on `Σ_{j≤k} C(p, j)·j` for exhaustive enumeration.
pub const DEFAULT_ENUMERATION_BUDGET: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionKind {
    /// All singletons.
    S1,
    /// All nonempty subsets of size at most `k`.
    SleqK(usize),
    /// Supports read off the Lasso path, plus all singletons.
    Lasso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCollection {
    pub subsets: Vec<SubsetModel>,
    pub origin: CollectionKind,
    pub d_max: usize,
}

impl ModelCollection {
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }
}

/// Stacked design `W = [[X1, X1], [X2, −X2]]` and response `(Y1; Y2)`.
///
/// The first `p` coefficients estimate the mean effect `(β1 + β2)/2`, the
/// last `p` the half-difference `(β1 − β2)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamDesign {
    pub w: Matrix,
    pub y: Vector,
    pub p: usize,
    pub n1: usize,
}

impl ReparamDesign {
    /// `Wθ`.
    pub fn apply(&self, theta: &Vector) -> Vector {
        &self.w * theta
    }
}

pub fn build_reparam(data: &TwoSampleData) -> Result<ReparamDesign> {
    let (n1, n2, p) = (data.n1(), data.n2(), data.p());
    if data.x2.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "sample 1 has {p} covariates, sample 2 has {}",
            data.x2.ncols()
        )));
    }
    let w = Matrix::from_fn(n1 + n2, 2 * p, |i, j| {
        let col = j % p;
        if i < n1 {
            data.x1[(i, col)]
        } else if j < p {
            data.x2[(i - n1, col)]
        } else {
            -data.x2[(i - n1, col)]
        }
    });
    let y = Vector::from_fn(n1 + n2, |i, _| if i < n1 { data.y1[i] } else { data.y2[i - n1] });
    Ok(ReparamDesign { w, y, p, n1 })
}

/// The piecewise-linear Lasso path of a reparametrised design.
#[derive(Debug, Clone)]
pub struct LassoPath {
    pub p: usize,
    pub breakpoints: Vec<Breakpoint>,
    /// Smallest penalty covered by the path and the solution there.
    pub end_lambda: f64,
    pub end_theta: Vector,
}

impl LassoPath {
    /// Breakpoint penalties, strictly decreasing.
    pub fn lambdas(&self) -> Vec<f64> {
        self.breakpoints.iter().map(|b| b.lambda).collect()
    }

    /// `(V̂⁽¹⁾, V̂⁽²⁾)` just below breakpoint `k`, in covariate labels `0..p`.
    pub fn support_pair(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        split_support(&self.breakpoints[k].active, self.p)
    }

    /// `θ̂(λ)` by linear interpolation between breakpoints; `None` below the
    /// end of the computed path.
    pub fn coefficients_at(&self, lambda: f64) -> Option<Vector> {
        let m = 2 * self.p;
        let Some(first) = self.breakpoints.first() else {
            return Some(Vector::zeros(m));
        };
        if lambda >= first.lambda {
            return Some(Vector::zeros(m));
        }
        if lambda < self.end_lambda {
            return None;
        }
        let nodes: Vec<(f64, &Vector)> = self
            .breakpoints
            .iter()
            .map(|b| (b.lambda, &b.theta))
            .chain(std::iter::once((self.end_lambda, &self.end_theta)))
            .collect();
        for pair in nodes.windows(2) {
            let ((hi, th_hi), (lo, th_lo)) = (pair[0], pair[1]);
            if lambda <= hi && lambda >= lo {
                if hi == lo {
                    return Some(th_lo.clone());
                }
                let t = (hi - lambda) / (hi - lo);
                return Some(th_hi * (1.0 - t) + th_lo * t);
            }
        }
        None
    }
}

fn split_support(active: &[usize], p: usize) -> (Vec<usize>, Vec<usize>) {
    let v1 = active.iter().copied().filter(|&j| j < p).collect();
    let v2 = active.iter().copied().filter(|&j| j >= p).map(|j| j - p).collect();
    (v1, v2)
}

/// Full Lasso path of `‖y − Wθ‖² + λ‖θ‖₁`, stopped once `max_active`
/// variables would be exceeded.
pub fn lars_path(design: &ReparamDesign, max_active: usize) -> LassoPath {
    let mut homotopy = LarsHomotopy::new(&design.w, &design.y, max_active);
    let mut breakpoints = Vec::new();
    while let Some(b) = homotopy.next_breakpoint() {
        breakpoints.push(b);
    }
    LassoPath {
        p: design.p,
        breakpoints,
        end_lambda: homotopy.end_lambda(),
        end_theta: homotopy.theta().clone(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Rescale every column of `W` to unit norm before computing the path.
    pub standardize: bool,
}

/// The Lasso collection: for each breakpoint while `|V̂⁽¹⁾ ∪ V̂⁽²⁾| < d_max`,
/// keep `V̂⁽¹⁾ ∪ V̂⁽²⁾` and `V̂⁽²⁾`; then add every singleton.
pub fn build_lasso_collection(
    data: &TwoSampleData,
    d_max: usize,
    opts: LassoOptions,
) -> Result<ModelCollection> {
    if d_max == 0 {
        return Err(Error::InvalidParameter("d_max must be at least 1".into()));
    }
    let p = data.p();
    let mut design = build_reparam(data)?;
    if opts.standardize {
        for mut col in design.w.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
    }
    let max_active = design.w.nrows().min(2 * p);
    let mut homotopy = LarsHomotopy::new(&design.w, &design.y, max_active);
    let mut found: BTreeSet<SubsetModel> = BTreeSet::new();
    while let Some(b) = homotopy.next_breakpoint() {
        let (v1, v2) = split_support(&b.active, p);
        let union = SubsetModel::new(v1.iter().chain(v2.iter()).copied().collect());
        if union.len() >= d_max {
            break;
        }
        if !union.is_empty() {
            found.insert(union);
        }
        if !v2.is_empty() {
            found.insert(SubsetModel::new(v2));
        }
    }
    found.extend((0..p).map(SubsetModel::singleton));
    let mut subsets: Vec<SubsetModel> = found.into_iter().collect();
    subsets.sort_by(SubsetModel::size_then_lex);
    Ok(ModelCollection { subsets, origin: CollectionKind::Lasso, d_max })
}

/// Exhaustive `S₁` or `S_{≤k}` in size-then-lexicographic order.
pub fn deterministic_collection(kind: CollectionKind, p: usize, budget: usize) -> Result<ModelCollection> {
    let k = match kind {
        CollectionKind::S1 => 1,
        CollectionKind::SleqK(k) => k,
        CollectionKind::Lasso => {
            return Err(Error::InvalidParameter("the Lasso collection is data-driven".into()))
        }
    };
    if k == 0 {
        return Err(Error::InvalidParameter("subset size bound must be at least 1".into()));
    }
    let k = k.min(p);
    let needed: f64 = (1..=k)
        .map(|j| crate::numkit::ln_binomial(p, j).exp() * j as f64)
        .sum();
    if needed > budget as f64 {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let mut subsets = Vec::new();
    for size in 1..=k {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            subsets.push(SubsetModel::new(idx.clone()));
            // next combination in lexicographic order
            let mut i = size;
            while i > 0 && idx[i - 1] == p - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for t in i..size {
                idx[t] = idx[t - 1] + 1;
            }
        }
    }
    Ok(ModelCollection { subsets, origin: kind, d_max: k })
}
