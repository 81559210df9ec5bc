//! Derivatives of the trajectory solution map and sticky-constraint penalties.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{LinearConstraintSet, QpSolution, TrajError, TrajProblemSpec};
use crate::linalg::solve_dense;

/// Pulls a cotangent on the trajectory back to the reference.
///
/// Differentiates the KKT system restricted to the strictly active rows.
/// Weakly active rows are treated as inactive, which picks one element of
/// the generalized Jacobian there.
pub fn traj_vjp(
    solution: &QpSolution,
    spec: &TrajProblemSpec,
    cotangent: &DVector<f64>,
) -> Result<DVector<f64>, TrajError> {
    traj_vjp_with_duals(solution, spec, cotangent, None)
}

/// Like [`traj_vjp`], with an additional cotangent on the signed inequality
/// multipliers.
pub fn traj_vjp_with_duals(
    solution: &QpSolution,
    spec: &TrajProblemSpec,
    cotangent: &DVector<f64>,
    dual_cotangent: Option<&DVector<f64>>,
) -> Result<DVector<f64>, TrajError> {
    let red = &*solution.reduced;
    let n = solution.primal.len();
    if cotangent.len() != n {
        return Err(TrajError::Dimension { what: "trajectory cotangent", expected: n, got: cotangent.len() });
    }
    if red.gz.nrows() != spec.reference_dim() {
        return Err(TrajError::Dimension {
            what: "reference map of the solution",
            expected: spec.reference_dim(),
            got: red.gz.nrows(),
        });
    }
    if let Some(d) = dual_cotangent {
        if d.len() != solution.ineq_duals.len() {
            return Err(TrajError::Dimension {
                what: "dual cotangent",
                expected: solution.ineq_duals.len(),
                got: d.len(),
            });
        }
    }
    if cotangent.iter().any(|v| !v.is_finite()) {
        return Err(TrajError::NonFinite("trajectory cotangent"));
    }

    let active: Vec<usize> = (0..red.n_rows())
        .filter(|&j| solution.activity[red.rows[j]].is_strictly_active())
        .collect();

    let w_bar = red.split.null.tr_mul(cotangent);
    let y = red.p_w_factor.solve(&w_bar);
    let na = active.len();
    let mut a_bar = y.clone();
    if na > 0 {
        let mut schur = DMatrix::zeros(na, na);
        let mut rhs = DVector::zeros(na);
        for (r, &i) in active.iter().enumerate() {
            for (c, &j) in active.iter().enumerate() {
                schur[(r, c)] = red.gram[(i, j)];
            }
            rhs[r] = red.a.row(i).dot(&y.transpose());
            if let Some(d) = dual_cotangent {
                rhs[r] -= red.scale[i] * d[red.rows[i]];
            }
        }
        let b = solve_dense(schur, &rhs, 1e-12).ok_or(TrajError::DegenerateDerivative)?;
        for (r, &i) in active.iter().enumerate() {
            a_bar.axpy(-b[r], &red.pinv_at.column(i), 1.0);
        }
    }
    Ok(&red.gz * a_bar)
}

/// Squared violation of the constraints by a trajectory-space reference,
/// `‖(g(ξ) − ub)₊ + (lb − g(ξ))₊‖²`, with equality rows as two-sided bounds.
///
/// Returns the value and its gradient. Only meaningful when `G = I`; it
/// pulls the reference back toward the feasible set so the projection stays
/// differentiable.
pub fn sticky_penalty(reference: &DVector<f64>, constraints: &LinearConstraintSet) -> (f64, DVector<f64>) {
    let n = constraints.decision_dim();
    assert_eq!(reference.len(), n, "reference must live in trajectory space");
    let mut value = 0.0;
    let mut grad = DVector::zeros(n);
    let eq = &constraints.matrices.eq;
    if eq.nrows() > 0 {
        let e = eq * reference - &constraints.eq_rhs;
        value += e.norm_squared();
        grad.gemv_tr(2.0, eq, &e, 1.0);
    }
    let ineq = &constraints.matrices.ineq;
    if ineq.nrows() > 0 {
        let g = ineq * reference;
        let v = DVector::from_iterator(
            g.len(),
            (0..g.len()).map(|i| (g[i] - constraints.upper[i]).max(0.0) - (constraints.lower[i] - g[i]).max(0.0)),
        );
        value += v.norm_squared();
        grad.gemv_tr(2.0, ineq, &v, 1.0);
    }
    (value, grad)
}

/// `weight · ‖λ‖²` on the inequality multipliers and its cotangent on `λ`,
/// to be passed to [`traj_vjp_with_duals`].
pub fn dual_penalty(solution: &QpSolution, weight: f64) -> (f64, DVector<f64>) {
    let lam = &solution.ineq_duals;
    (weight * lam.norm_squared(), lam * (2.0 * weight))
}
