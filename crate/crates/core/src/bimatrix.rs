//! Mixed equilibria of two-player bimatrix games and their derivatives.
//!
//! Both matrices are costs: player 1 picks a row to minimize `A`, player 2 a
//! column to minimize `B`. Equilibria are computed with Lemke-Howson and
//! returned both as simplex strategies `q` and as the solution `p` of the
//! complementarity problem
//!
//! ```text
//! p₁ ≥ 0, Āp₂ − 1 ≥ 0, p₁ᵀ(Āp₂ − 1) = 0
//! p₂ ≥ 0, B̄ᵀp₁ − 1 ≥ 0, p₂ᵀ(B̄ᵀp₁ − 1) = 0
//! ```
//!
//! for the positively shifted matrices `Ā`, `B̄`.

use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::solve_dense;

pub const DEFAULT_SHIFT_MARGIN: f64 = 1.0;

/// Tolerance on the complementarity residual and on weak-complementarity
/// detection.
pub const COMPLEMENTARITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BimatrixError {
    #[error("cost matrices must be nonempty and of equal shape, got {a:?} and {b:?}")]
    Shape { a: (usize, usize), b: (usize, usize) },
    #[error("cost matrices contain non-finite entries")]
    NonFinite,
    #[error("entering label {label} out of range for {labels} labels")]
    InvalidLabel { label: usize, labels: usize },
    #[error("Lemke-Howson exceeded {pivots} pivots (entering label {label})")]
    PivotLimit { label: usize, pivots: usize },
    #[error("degenerate solution: complementarity vector has zero sum")]
    DegenerateSolution,
    #[error("equilibrium is not isolated; the derivatives of the solution are not defined")]
    NonIsolated,
    #[error("cotangent has length {got}, expected {expected}")]
    Cotangent { expected: usize, got: usize },
}

/// Player costs: `a[(i, j)]` is player 1's cost for row `i` against column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrixPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl CostMatrixPair {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, BimatrixError> {
        let pair = Self { a, b };
        pair.validate()?;
        Ok(pair)
    }

    /// Zero-sum game: player 2's cost is `−A`.
    pub fn zero_sum(a: DMatrix<f64>) -> Result<Self, BimatrixError> {
        let b = -&a;
        Self::new(a, b)
    }

    pub fn validate(&self) -> Result<(), BimatrixError> {
        if self.a.shape() != self.b.shape() || self.a.is_empty() {
            return Err(BimatrixError::Shape { a: self.a.shape(), b: self.b.shape() });
        }
        if self.a.iter().chain(self.b.iter()).any(|v| !v.is_finite()) {
            return Err(BimatrixError::NonFinite);
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.a.shape()
    }

    /// Expected costs `(q₁ᵀAq₂, q₁ᵀBq₂)`.
    pub fn expected_costs(&self, q1: &DVector<f64>, q2: &DVector<f64>) -> (f64, f64) {
        (q1.dot(&(&self.a * q2)), q1.dot(&(&self.b * q2)))
    }
}

/// Cost matrices shifted so every entry is at least the margin.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedGame {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
}

pub fn shift_positive(pair: &CostMatrixPair, margin: f64) -> ShiftedGame {
    assert!(margin > 0.0, "shift margin must be positive");
    let alpha = margin - pair.a.min();
    let beta = margin - pair.b.min();
    ShiftedGame { a: pair.a.add_scalar(alpha), b: pair.b.add_scalar(beta), alpha, beta }
}

/// Maps `p ≥ 0` to the simplex.
pub fn normalize(p: &DVector<f64>) -> Result<DVector<f64>, BimatrixError> {
    let s = p.sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(BimatrixError::DegenerateSolution);
    }
    Ok(p / s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BimatrixSolution {
    pub p1: DVector<f64>,
    pub p2: DVector<f64>,
    pub q1: DVector<f64>,
    pub q2: DVector<f64>,
    pub support1: Vec<usize>,
    pub support2: Vec<usize>,
    /// Indices with `pᵢ = 0` whose complementary slack also vanishes.
    pub weak1: Vec<usize>,
    pub weak2: Vec<usize>,
    pub strictly_complementary: bool,
    /// Largest `|pᵢ · slackᵢ|` over both players.
    pub complementarity_residual: f64,
    pub pivots: usize,
}

impl BimatrixSolution {
    /// The trivial solution of a 1×1 game.
    pub fn is_pure(&self) -> bool {
        self.support1.len() == 1 && self.support2.len() == 1
    }
}

/// One Lemke-Howson tableau. Column `c` of the tableau carries label `c`;
/// the last column is the right-hand side.
struct Tableau {
    t: DMatrix<f64>,
    basis: Vec<usize>,
    /// Columns of the initial (slack) basis, used for the lexicographic ratio test.
    slack_cols: core::ops::Range<usize>,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn has_nonbasic(&self, label: usize) -> bool {
        !self.basis.contains(&label)
    }

    /// Lexicographic minimum-ratio test for entering column `c`.
    fn leaving_row(&self, c: usize) -> Option<usize> {
        let rhs = self.rhs_col();
        let tol = 1e-12 * self.t.amax().max(1.0);
        let mut best: Option<usize> = None;
        for r in 0..self.t.nrows() {
            let piv = self.t[(r, c)];
            if piv <= tol {
                continue;
            }
            best = Some(match best {
                None => r,
                Some(b) => {
                    let pb = self.t[(b, c)];
                    let keys = core::iter::once(rhs).chain(self.slack_cols.clone());
                    let mut choice = b;
                    for k in keys {
                        let (x, y) = (self.t[(r, k)] / piv, self.t[(b, k)] / pb);
                        let scale = libm::fabs(x).max(libm::fabs(y)).max(1.0);
                        match x.partial_cmp(&y).unwrap_or(Ordering::Equal) {
                            _ if libm::fabs(x - y) <= 1e-12 * scale => continue,
                            Ordering::Less => {
                                choice = r;
                                break;
                            }
                            _ => break,
                        }
                    }
                    choice
                }
            });
        }
        best
    }

    /// Brings column `c` into the basis and returns the label that left.
    fn pivot(&mut self, c: usize) -> Option<usize> {
        let r = self.leaving_row(c)?;
        let piv = self.t[(r, c)];
        let ncols = self.t.ncols();
        for k in 0..ncols {
            self.t[(r, k)] /= piv;
        }
        for o in 0..self.t.nrows() {
            if o == r {
                continue;
            }
            let f = self.t[(o, c)];
            if f != 0.0 {
                for k in 0..ncols {
                    let v = self.t[(r, k)];
                    self.t[(o, k)] -= f * v;
                }
                self.t[(o, c)] = 0.0;
            }
        }
        Some(core::mem::replace(&mut self.basis[r], c))
    }

    fn basic_values(&self, labels: core::ops::Range<usize>) -> DVector<f64> {
        let rhs = self.rhs_col();
        let mut v = DVector::zeros(labels.len());
        for (r, &b) in self.basis.iter().enumerate() {
            if labels.contains(&b) {
                v[b - labels.start] = self.t[(r, rhs)].max(0.0);
            }
        }
        v
    }
}

/// Lemke-Howson on the positively shifted cost game.
///
/// Labels `0..n₁` are player 1's strategies and `n₁..n₁+n₂` player 2's. Returns
/// the complementarity solution `(p₁, p₂)` and the number of pivots.
pub fn lemke_howson(
    shifted: &ShiftedGame,
    entering_label: usize,
) -> Result<(DVector<f64>, DVector<f64>, usize), BimatrixError> {
    let (n1, n2) = shifted.a.shape();
    let labels = n1 + n2;
    if entering_label >= labels {
        return Err(BimatrixError::InvalidLabel { label: entering_label, labels });
    }
    // Minimizing Ā is maximizing the positive payoff max(Ā) + 1 − Ā.
    let u = shifted.a.map(|v| shifted.a.max() + 1.0 - v);
    let v = shifted.b.map(|x| shifted.b.max() + 1.0 - x);

    // Player 1's polytope {x ≥ 0, Vᵀx ≤ 1}: rows per column strategy.
    let mut tp = DMatrix::zeros(n2, labels + 1);
    for j in 0..n2 {
        for i in 0..n1 {
            tp[(j, i)] = v[(i, j)];
        }
        tp[(j, n1 + j)] = 1.0;
        tp[(j, labels)] = 1.0;
    }
    // Player 2's polytope {y ≥ 0, Uy ≤ 1}: rows per row strategy.
    let mut tq = DMatrix::zeros(n1, labels + 1);
    for i in 0..n1 {
        tq[(i, i)] = 1.0;
        for j in 0..n2 {
            tq[(i, n1 + j)] = u[(i, j)];
        }
        tq[(i, labels)] = 1.0;
    }
    let mut tabs = [
        Tableau { t: tp, basis: (n1..labels).collect(), slack_cols: n1..labels },
        Tableau { t: tq, basis: (0..n1).collect(), slack_cols: 0..n1 },
    ];

    let max_pivots = 50 * labels * labels + 100;
    let mut entering = entering_label;
    let mut side = if entering < n1 { 0 } else { 1 };
    let mut pivots = 0;
    loop {
        if pivots >= max_pivots {
            return Err(BimatrixError::PivotLimit { label: entering_label, pivots });
        }
        debug_assert!(tabs[side].has_nonbasic(entering));
        let left = tabs[side]
            .pivot(entering)
            .ok_or(BimatrixError::PivotLimit { label: entering_label, pivots })?;
        pivots += 1;
        if left == entering_label {
            break;
        }
        entering = left;
        side = 1 - side;
    }

    let x = tabs[0].basic_values(0..n1);
    let y = tabs[1].basic_values(n1..labels);
    let q1 = clean_strategy(&x)?;
    let q2 = clean_strategy(&y)?;
    let (p1, p2) = complementarity_from_strategies(shifted, &q1, &q2);
    Ok((p1, p2, pivots))
}

/// Normalizes and zeroes round-off entries so the support is exact.
fn clean_strategy(x: &DVector<f64>) -> Result<DVector<f64>, BimatrixError> {
    let q = normalize(x)?;
    let cleaned = q.map(|v| if v < 1e-13 { 0.0 } else { v });
    normalize(&cleaned)
}

/// Rescales equilibrium strategies into the complementarity solution:
/// `p₂ = q₂ / min(Āq₂)` and `p₁ = q₁ / min(B̄ᵀq₁)`.
fn complementarity_from_strategies(
    shifted: &ShiftedGame,
    q1: &DVector<f64>,
    q2: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let v1 = (&shifted.a * q2).min();
    let v2 = shifted.b.tr_mul(q1).min();
    (q1 / v2, q2 / v1)
}

/// Mixed equilibrium with the default entering label (player 1's first strategy).
pub fn bmg(pair: &CostMatrixPair) -> Result<BimatrixSolution, BimatrixError> {
    bmg_with_label(pair, 0)
}

pub fn bmg_with_label(pair: &CostMatrixPair, entering_label: usize) -> Result<BimatrixSolution, BimatrixError> {
    pair.validate()?;
    let shifted = shift_positive(pair, DEFAULT_SHIFT_MARGIN);
    let (p1, p2, pivots) = lemke_howson(&shifted, entering_label)?;
    let q1 = normalize(&p1)?;
    let q2 = normalize(&p2)?;

    let slack1 = &shifted.a * &p2 - DVector::from_element(p1.len(), 1.0);
    let slack2 = shifted.b.tr_mul(&p1) - DVector::from_element(p2.len(), 1.0);
    let mut residual: f64 = 0.0;
    let mut classify = |p: &DVector<f64>, slack: &DVector<f64>| {
        let mut support = Vec::new();
        let mut weak = Vec::new();
        for i in 0..p.len() {
            residual = residual.max(libm::fabs(p[i] * slack[i])).max(-slack[i]);
            if p[i] > 0.0 {
                support.push(i);
            } else if libm::fabs(slack[i]) <= COMPLEMENTARITY_TOL {
                weak.push(i);
            }
        }
        (support, weak)
    };
    let (support1, weak1) = classify(&p1, &slack1);
    let (support2, weak2) = classify(&p2, &slack2);
    let strictly_complementary = weak1.is_empty() && weak2.is_empty();
    Ok(BimatrixSolution {
        p1,
        p2,
        q1,
        q2,
        support1,
        support2,
        weak1,
        weak2,
        strictly_complementary,
        complementarity_residual: residual,
        pivots,
    })
}

/// Pulls cotangents on `(q₁, q₂)` back to the cost matrices.
///
/// `p₂` depends only on `A` and `p₁` only on `B` through the square systems
/// `Ā⁺p₂⁺ = 1` and `B̄⁺ᵀp₁⁺ = 1` on the supports. Weakly complementary
/// indices are kept in the supports, which selects one directional
/// derivative. The shifts drop out because `q` is invariant to them.
pub fn bmg_vjp(
    pair: &CostMatrixPair,
    solution: &BimatrixSolution,
    q1_bar: &DVector<f64>,
    q2_bar: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), BimatrixError> {
    let (n1, n2) = pair.shape();
    if q1_bar.len() != n1 {
        return Err(BimatrixError::Cotangent { expected: n1, got: q1_bar.len() });
    }
    if q2_bar.len() != n2 {
        return Err(BimatrixError::Cotangent { expected: n2, got: q2_bar.len() });
    }
    let mut a_bar = DMatrix::zeros(n1, n2);
    let mut b_bar = DMatrix::zeros(n1, n2);
    if n1 == 1 && n2 == 1 {
        return Ok((a_bar, b_bar));
    }

    let rows = merged(&solution.support1, &solution.weak1);
    let cols = merged(&solution.support2, &solution.weak2);
    if rows.len() != cols.len() {
        return Err(BimatrixError::NonIsolated);
    }
    let k = rows.len();
    let shifted = shift_positive(pair, DEFAULT_SHIFT_MARGIN);
    let sub = |m: &DMatrix<f64>| DMatrix::from_fn(k, k, |r, c| m[(rows[r], cols[c])]);
    let a_plus = sub(&shifted.a);
    let b_plus = sub(&shifted.b);

    // q = p / Σp  ⇒  p̄ = (q̄ − (q̄·q) 1) / Σp
    let p_bar = |q_bar: &DVector<f64>, q: &DVector<f64>, p: &DVector<f64>| {
        let s = p.sum();
        let shift = q_bar.dot(q);
        q_bar.map(|v| (v - shift) / s)
    };
    let p1_bar = p_bar(q1_bar, &solution.q1, &solution.p1);
    let p2_bar = p_bar(q2_bar, &solution.q2, &solution.p2);

    // Ā̄⁺_{jk} = −a_j (p₂⁺)_k with a = (Ā⁺)⁻ᵀ p̄₂⁺
    let rhs_a = DVector::from_fn(k, |c, _| p2_bar[cols[c]]);
    let a = solve_dense(a_plus.transpose(), &rhs_a, 1e-12).ok_or(BimatrixError::NonIsolated)?;
    // B̄̄⁺_{jk} = −(p₁⁺)_j b_k with b = (B̄⁺)⁻¹ p̄₁⁺
    let rhs_b = DVector::from_fn(k, |r, _| p1_bar[rows[r]]);
    let b = solve_dense(b_plus, &rhs_b, 1e-12).ok_or(BimatrixError::NonIsolated)?;
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            a_bar[(i, j)] = -a[r] * solution.p2[j];
            b_bar[(i, j)] = -solution.p1[i] * b[c];
        }
    }
    Ok((a_bar, b_bar))
}

fn merged(support: &[usize], weak: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = support.iter().chain(weak).copied().collect();
    v.sort_unstable();
    v
}

/// Checks the cost-minimizing Nash inequalities against every pure
/// deviation; by bilinearity that covers all mixed deviations. Returns the
/// verdict and the largest gain any deviation achieves.
pub fn verify_equilibrium(pair: &CostMatrixPair, q1: &DVector<f64>, q2: &DVector<f64>, tol: f64) -> (bool, f64) {
    let aq2 = &pair.a * q2;
    let btq1 = pair.b.tr_mul(q1);
    let gain1 = q1.dot(&aq2) - aq2.min();
    let gain2 = q2.dot(&btq1) - btq1.min();
    let worst = gain1.max(gain2).max(0.0);
    (worst <= tol, worst)
}

/// Best pure responses (all minimizers within `tol`).
pub fn best_responses(costs: &DVector<f64>, tol: f64) -> Vec<usize> {
    let best = costs.min();
    (0..costs.len()).filter(|&i| costs[i] <= best + tol).collect()
}

/// Convenience for tests and tools: uniform strategy on `n` actions.
pub fn uniform(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}
