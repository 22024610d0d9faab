//! Two-sample regression data and candidate supports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Vector};

/// Two design/response pairs sharing the same `p` covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSampleData {
    pub x1: Matrix,
    pub y1: Vector,
    pub x2: Matrix,
    pub y2: Vector,
}

impl TwoSampleData {
    pub fn new(x1: Matrix, y1: Vector, x2: Matrix, y2: Vector) -> Result<Self> {
        if x1.nrows() != y1.len() {
            return Err(Error::DimensionMismatch(format!(
                "sample 1: design has {} rows, response has {}",
                x1.nrows(),
                y1.len()
            )));
        }
        if x2.nrows() != y2.len() {
            return Err(Error::DimensionMismatch(format!(
                "sample 2: design has {} rows, response has {}",
                x2.nrows(),
                y2.len()
            )));
        }
        if x1.ncols() != x2.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "sample 1 has {} covariates, sample 2 has {}",
                x1.ncols(),
                x2.ncols()
            )));
        }
        if x1.iter().chain(x2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design"));
        }
        if y1.iter().chain(y2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn n1(&self) -> usize {
        self.x1.nrows()
    }

    pub fn n2(&self) -> usize {
        self.x2.nrows()
    }

    pub fn p(&self) -> usize {
        self.x1.ncols()
    }

    /// The same data with the roles of the two samples exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x1: self.x2.clone(),
            y1: self.y2.clone(),
            x2: self.x1.clone(),
            y2: self.y1.clone(),
        }
    }

    /// Re-splits the pooled rows after applying `perm`: pooled row `perm[i]`
    /// becomes row `i` of the new data, the first `n1` rows forming sample 1.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let (n1, n2, p) = (self.n1(), self.n2(), self.p());
        debug_assert_eq!(perm.len(), n1 + n2);
        let pooled_x = |r: usize, c: usize| {
            if r < n1 {
                self.x1[(r, c)]
            } else {
                self.x2[(r - n1, c)]
            }
        };
        let pooled_y = |r: usize| if r < n1 { self.y1[r] } else { self.y2[r - n1] };
        Self {
            x1: Matrix::from_fn(n1, p, |i, j| pooled_x(perm[i], j)),
            y1: Vector::from_fn(n1, |i, _| pooled_y(perm[i])),
            x2: Matrix::from_fn(n2, p, |i, j| pooled_x(perm[n1 + i], j)),
            y2: Vector::from_fn(n2, |i, _| pooled_y(perm[n1 + i])),
        }
    }

    /// Default maximal model size `⌊min(n1, n2) / 2⌋`.
    pub fn default_d_max(&self) -> usize {
        self.n1().min(self.n2()) / 2
    }
}

/// A candidate support: strictly increasing, zero-based covariate indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubsetModel(Vec<usize>);

impl SubsetModel {
    /// Sorts and deduplicates the given indices.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn singleton(index: usize) -> Self {
        Self(vec![index])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    /// One-based labels, as reported to users.
    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    /// Orders by size first, then lexicographically.
    pub fn size_then_lex(&self, other: &Self) -> std::cmp::Ordering {
        self.len().cmp(&other.len()).then_with(|| self.0.cmp(&other.0))
    }
}
