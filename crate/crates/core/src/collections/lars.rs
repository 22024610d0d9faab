//! Lasso regularisation path by the homotopy (LARS with drops) method.
//!
//! The path solves `min ‖y − Wθ‖² + λ‖θ‖₁` for every `λ > 0`. Between two
//! consecutive breakpoints the active set is fixed and `θ̂(λ)` is affine in
//! `λ`; at a breakpoint one variable enters or leaves the active set.

use nalgebra::Cholesky;

use crate::numkit::{Matrix, Vector};

/// Relative tolerance when comparing step lengths for ties.
const TIE_TOL: f64 = 1e-12;

/// What happened at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEvent {
    Enter(usize),
    Drop(usize),
}

/// One breakpoint of the path.
#[derive(Debug, Clone)]
pub struct Breakpoint {
    pub lambda: f64,
    pub event: PathEvent,
    /// Active set (sorted) on the open interval just below `lambda`.
    pub active: Vec<usize>,
    /// Solution at exactly `lambda`.
    pub theta: Vector,
}

/// Incremental homotopy solver; each call to [`LarsHomotopy::next_breakpoint`]
/// advances to the next change of the active set.
pub struct LarsHomotopy<'a> {
    w: &'a Matrix,
    y: &'a Vector,
    max_active: usize,
    theta: Vector,
    active: Vec<usize>,
    signs: Vec<f64>,
    /// Half the current penalty, `λ/2 = max_j |w_jᵀ(y − Wθ)|`.
    c_max: f64,
    last_dropped: Option<usize>,
    pending_entry: Option<usize>,
    finished: bool,
    end_lambda: f64,
    steps: usize,
}

impl<'a> LarsHomotopy<'a> {
    pub fn new(w: &'a Matrix, y: &'a Vector, max_active: usize) -> Self {
        assert_eq!(w.nrows(), y.len(), "design and response lengths differ");
        let m = w.ncols();
        let corr = w.tr_mul(y);
        let (first, c_max) = argmax_abs(&corr);
        let scale = y.amax().max(w.amax()).max(1.0);
        let degenerate = c_max <= 1e-14 * scale * scale || max_active == 0 || m == 0;
        Self {
            w,
            y,
            max_active: max_active.min(m),
            theta: Vector::zeros(m),
            active: Vec::new(),
            signs: Vec::new(),
            c_max,
            last_dropped: None,
            pending_entry: if degenerate { None } else { Some(first) },
            finished: degenerate,
            end_lambda: if degenerate { 0.0 } else { 2.0 * c_max },
            steps: 0,
        }
    }

    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    /// Smallest penalty reached so far (the path is valid on `[end_lambda, ∞)`).
    pub fn end_lambda(&self) -> f64 {
        self.end_lambda
    }

    fn residual_correlations(&self) -> Vector {
        self.w.tr_mul(&(self.y - self.w * &self.theta))
    }

    fn sorted_active(&self) -> Vec<usize> {
        let mut a = self.active.clone();
        a.sort_unstable();
        a
    }

    pub fn next_breakpoint(&mut self) -> Option<Breakpoint> {
        if let Some(j) = self.pending_entry.take() {
            // first variable enters at λ₁ = 2 max|w_jᵀy|
            let corr = self.residual_correlations();
            self.active.push(j);
            self.signs.push(corr[j].signum());
            return Some(Breakpoint {
                lambda: 2.0 * self.c_max,
                event: PathEvent::Enter(j),
                active: self.sorted_active(),
                theta: self.theta.clone(),
            });
        }
        if self.finished {
            return None;
        }
        self.steps += 1;
        if self.steps > 50 * self.w.ncols().max(1) {
            self.finished = true;
            return None;
        }

        let k = self.active.len();
        let wa = Matrix::from_fn(self.w.nrows(), k, |i, j| self.w[(i, self.active[j])]);
        let gram = wa.tr_mul(&wa);
        let Some(chol) = Cholesky::new(gram) else {
            self.finished = true;
            return None;
        };
        let s = Vector::from_column_slice(&self.signs);
        let d = chol.solve(&s);
        let u = &wa * &d;
        let a = self.w.tr_mul(&u);
        let corr = self.residual_correlations();
        let c = self.c_max;

        // entry candidates; computed even at the cap so the path stops where
        // the next variable would enter
        let mut best_entry: Option<(f64, usize)> = None;
        for j in 0..self.w.ncols() {
            if self.active.contains(&j) || Some(j) == self.last_dropped {
                continue;
            }
            let mut gamma = f64::INFINITY;
            for (num, den) in [(c - corr[j], 1.0 - a[j]), (c + corr[j], 1.0 + a[j])] {
                if den > 1e-12 {
                    // a correlation already at the current level enters at once
                    let g = num.max(0.0) / den;
                    if g < gamma {
                        gamma = g;
                    }
                }
            }
            let better = match best_entry {
                None => gamma.is_finite(),
                Some((g0, _)) => gamma < g0 * (1.0 - TIE_TOL),
            };
            if better {
                best_entry = Some((gamma, j));
            }
        }

        // drop candidates: an active coefficient crossing zero
        let mut best_drop: Option<(f64, usize, usize)> = None;
        for (pos, &j) in self.active.iter().enumerate() {
            if d[pos] == 0.0 {
                continue;
            }
            let gamma = -self.theta[j] / d[pos];
            if gamma > 1e-14 * c {
                let better = match best_drop {
                    None => true,
                    Some((g0, _, j0)) => {
                        gamma < g0 * (1.0 - TIE_TOL) || (gamma <= g0 * (1.0 + TIE_TOL) && j < j0)
                    }
                };
                if better {
                    best_drop = Some((gamma, pos, j));
                }
            }
        }

        let entry_gamma = best_entry.map_or(f64::INFINITY, |b| b.0);
        let drop_gamma = best_drop.map_or(f64::INFINITY, |b| b.0);
        let gamma = entry_gamma.min(drop_gamma).min(c);

        for (pos, &j) in self.active.iter().enumerate() {
            self.theta[j] += gamma * d[pos];
        }
        self.c_max = (c - gamma).max(0.0);
        self.end_lambda = 2.0 * self.c_max;
        self.last_dropped = None;

        if gamma >= c {
            // reached λ = 0
            self.c_max = 0.0;
            self.end_lambda = 0.0;
            self.finished = true;
            return None;
        }

        let event = if drop_gamma <= entry_gamma {
            let (_, pos, j) = best_drop.unwrap();
            self.active.remove(pos);
            self.signs.remove(pos);
            self.theta[j] = 0.0;
            self.last_dropped = Some(j);
            PathEvent::Drop(j)
        } else {
            let j = best_entry.unwrap().1;
            if k >= self.max_active {
                self.finished = true;
                return None;
            }
            let cj = corr[j] - gamma * a[j];
            self.active.push(j);
            self.signs.push(cj.signum());
            PathEvent::Enter(j)
        };
        Some(Breakpoint {
            lambda: 2.0 * self.c_max,
            event,
            active: self.sorted_active(),
            theta: self.theta.clone(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.finished && self.pending_entry.is_none()
    }
}

fn argmax_abs(v: &Vector) -> (usize, f64) {
    let mut best = (0, 0.0);
    for (j, x) in v.iter().enumerate() {
        if x.abs() > best.1 * (1.0 + TIE_TOL) {
            best = (j, x.abs());
        }
    }
    best
}
