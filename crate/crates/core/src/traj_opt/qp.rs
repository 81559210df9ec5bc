//! Null-space reduced QP: active-set solve with an ADMM fallback.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{ConstraintMatrices, LinearConstraintSet, QpSolution, RowActivity, SolverConfig, TrajError, TrajProblemSpec};
use crate::linalg::{inf_norm, solve_dense, EqualitySplit, SpdFactor};

/// Step sizes available to ADMM; one factorization is cached per entry.
const RHO_LADDER: [f64; 9] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4];
const RHO_START: usize = 3;
const SIGMA: f64 = 1e-6;
/// Active-set rounds tried from a warm-start guess before a cold solve.
const WARM_ROUNDS: usize = 6;

/// Everything about one trajectory QP that does not depend on the reference
/// or the initial state.
///
/// The decision is written `τ = τ_p + Z w` with `Z` an orthonormal basis of
/// the equality null space. Inequality rows of `C Z` are scaled to unit norm;
/// rows that vanish on the null space are constant and only checked for
/// feasibility.
#[derive(Debug)]
pub(crate) struct ReducedProblem {
    pub(crate) matrices: Arc<ConstraintMatrices>,
    pub(crate) split: EqualitySplit,
    pub(crate) hessian: DMatrix<f64>,
    /// `(GᵀG + HᵀH) Z`.
    pub(crate) pz: DMatrix<f64>,
    /// `G Z`.
    pub(crate) gz: DMatrix<f64>,
    pub(crate) p_w: DMatrix<f64>,
    pub(crate) p_w_factor: SpdFactor,
    /// Reduced row `j` is inequality row `rows[j]` scaled by `scale[j]`.
    pub(crate) rows: Vec<usize>,
    pub(crate) scale: Vec<f64>,
    pub(crate) a: DMatrix<f64>,
    /// `P_w⁻¹ Aᵀ`.
    pub(crate) pinv_at: DMatrix<f64>,
    /// `A P_w⁻¹ Aᵀ`, the Schur complement of every active-set KKT system.
    pub(crate) gram: DMatrix<f64>,
    admm_factors: Vec<SpdFactor>,
}

impl ReducedProblem {
    pub(crate) fn new(
        reference_map: &DMatrix<f64>,
        regularizer: &DMatrix<f64>,
        matrices: Arc<ConstraintMatrices>,
    ) -> Result<Self, TrajError> {
        let n = reference_map.ncols();
        if matrices.eq.ncols() != n {
            return Err(TrajError::Dimension { what: "equality columns", expected: n, got: matrices.eq.ncols() });
        }
        if matrices.ineq.ncols() != n {
            return Err(TrajError::Dimension { what: "inequality columns", expected: n, got: matrices.ineq.ncols() });
        }
        let split = EqualitySplit::new(&matrices.eq).ok_or(TrajError::DependentEqualities)?;
        let z = &split.null;
        let k = z.ncols();

        let hessian = reference_map.tr_mul(reference_map) + regularizer.tr_mul(regularizer);
        let pz = &hessian * z;
        let gz = reference_map * z;
        let mut p_w = z.tr_mul(&pz);
        symmetrize(&mut p_w);
        let p_w_factor = SpdFactor::new(p_w.clone()).ok_or(TrajError::NotStrictlyConvex)?;
        let diag_max = (0..k).map(|i| p_w[(i, i)]).fold(0.0, f64::max);
        if k > 0 && p_w_factor.min_pivot_sq() <= 1e-12 * diag_max {
            return Err(TrajError::NotStrictlyConvex);
        }

        let cz = &matrices.ineq * z;
        let mut rows = Vec::new();
        let mut scale = Vec::new();
        for i in 0..cz.nrows() {
            let norm = cz.row(i).norm();
            let full = matrices.ineq.row(i).norm().max(1.0);
            if norm > 1e-10 * full {
                rows.push(i);
                scale.push(1.0 / norm);
            }
        }
        let m = rows.len();
        let mut a = DMatrix::zeros(m, k);
        for (j, (&i, &d)) in rows.iter().zip(&scale).enumerate() {
            for c in 0..k {
                a[(j, c)] = d * cz[(i, c)];
            }
        }

        let mut pinv_at = a.transpose();
        for j in 0..m {
            let mut col = pinv_at.column(j).clone_owned();
            p_w_factor.solve_in_place(col.as_mut_slice());
            pinv_at.set_column(j, &col);
        }
        let mut gram = &a * &pinv_at;
        symmetrize(&mut gram);

        let ata = a.tr_mul(&a);
        let admm_factors = RHO_LADDER
            .iter()
            .map(|&rho| {
                let mut kkt = &p_w + &ata * rho;
                for i in 0..k {
                    kkt[(i, i)] += SIGMA;
                }
                SpdFactor::new(kkt).ok_or(TrajError::NotStrictlyConvex)
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self { matrices, split, hessian, pz, gz, p_w, p_w_factor, rows, scale, a, pinv_at, gram, admm_factors })
    }

    pub(crate) fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Free,
    Lower,
    Upper,
}

/// The reduced problem `min ½wᵀP_w w + qᵀw  s.t. l ≤ A w ≤ u` for one solve.
struct Bounded<'a> {
    red: &'a ReducedProblem,
    q: DVector<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Unconstrained minimizer `−P_w⁻¹ q` and its row values.
    w0: DVector<f64>,
    aw0: DVector<f64>,
    ptol: Vec<f64>,
}

struct ActiveSolution {
    w: DVector<f64>,
    aw: Vec<f64>,
    lambda: Vec<f64>,
    sides: Vec<Side>,
    rounds: usize,
}

impl<'a> Bounded<'a> {
    fn new(red: &'a ReducedProblem, q: DVector<f64>, lower: Vec<f64>, upper: Vec<f64>, tol: f64) -> Self {
        let w0 = -red.p_w_factor.solve(&q);
        let aw0 = &red.a * &w0;
        let ptol = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| {
                let mag = [*l, *u].iter().filter(|v| v.is_finite()).fold(1.0, |acc: f64, v| acc.max(libm::fabs(*v)));
                tol * mag
            })
            .collect();
        Self { red, q, lower, upper, w0, aw0, ptol }
    }

    fn m(&self) -> usize {
        self.lower.len()
    }

    fn is_equality(&self, j: usize) -> bool {
        self.lower[j] == self.upper[j]
    }

    /// Active-set guess from row values: rows at or beyond a bound.
    fn guess_from_values(&self, aw: &[f64], slack: f64) -> Vec<Side> {
        (0..self.m())
            .map(|j| {
                if self.is_equality(j) || aw[j] >= self.upper[j] - slack {
                    Side::Upper
                } else if aw[j] <= self.lower[j] + slack {
                    Side::Lower
                } else {
                    Side::Free
                }
            })
            .collect()
    }

    /// Active-set guess from an ADMM iterate.
    fn guess_from_admm(&self, state: &Admm) -> Vec<Side> {
        (0..self.m())
            .map(|j| {
                let (z, y) = (state.z[j], state.y[j]);
                if self.is_equality(j) || self.upper[j] - z < y {
                    Side::Upper
                } else if z - self.lower[j] < -y {
                    Side::Lower
                } else {
                    Side::Free
                }
            })
            .collect()
    }

    /// Primal-dual active-set iteration from `sides`. Each round solves the
    /// equality-constrained QP on the working set, then drops rows with
    /// wrong-sign multipliers and adds violated rows.
    fn active_set(&self, mut sides: Vec<Side>, max_rounds: usize) -> Option<ActiveSolution> {
        let m = self.m();
        let gram = &self.red.gram;
        let mut seen: Vec<Vec<Side>> = Vec::new();
        for round in 1..=max_rounds {
            let idx: Vec<usize> = (0..m).filter(|&j| sides[j] != Side::Free).collect();
            let nw = idx.len();
            let mut schur = DMatrix::zeros(nw, nw);
            let mut rhs = DVector::zeros(nw);
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    schur[(r, c)] = gram[(i, j)];
                }
                let bound = if sides[i] == Side::Upper { self.upper[i] } else { self.lower[i] };
                rhs[r] = self.aw0[i] - bound;
            }
            let lam_w = match solve_dense(schur.clone(), &rhs, 1e-13) {
                Some(l) => l,
                None => {
                    // Dependent active rows; any multiplier split gives the same primal point.
                    let shift = 1e-10 * schur.amax().max(1.0);
                    for r in 0..nw {
                        schur[(r, r)] += shift;
                    }
                    solve_dense(schur, &rhs, 1e-15)?
                }
            };

            let mut aw: Vec<f64> = self.aw0.iter().copied().collect();
            for (r, &i) in idx.iter().enumerate() {
                let l = lam_w[r];
                if l != 0.0 {
                    for j in 0..m {
                        aw[j] -= gram[(j, i)] * l;
                    }
                }
            }
            let mut lambda = vec![0.0; m];
            for (r, &i) in idx.iter().enumerate() {
                lambda[i] = lam_w[r];
            }
            let dtol = 1e-12 * lam_w.amax().max(1.0);

            let mut next = sides.clone();
            let mut changed = false;
            for j in 0..m {
                match sides[j] {
                    Side::Upper if !self.is_equality(j) && lambda[j] < -dtol => {
                        next[j] = Side::Free;
                        changed = true;
                    }
                    Side::Lower if lambda[j] > dtol => {
                        next[j] = Side::Free;
                        changed = true;
                    }
                    Side::Free if aw[j] > self.upper[j] + self.ptol[j] => {
                        next[j] = Side::Upper;
                        changed = true;
                    }
                    Side::Free if aw[j] < self.lower[j] - self.ptol[j] => {
                        next[j] = Side::Lower;
                        changed = true;
                    }
                    _ => {}
                }
            }
            if !changed {
                // A regularized solve on dependent rows can miss the bounds.
                let off_bound = idx.iter().any(|&i| {
                    let bound = if sides[i] == Side::Upper { self.upper[i] } else { self.lower[i] };
                    libm::fabs(aw[i] - bound) > self.ptol[i].max(1e-9)
                });
                if off_bound {
                    return None;
                }
                let mut w = self.w0.clone();
                for (r, &i) in idx.iter().enumerate() {
                    w.axpy(-lam_w[r], &self.red.pinv_at.column(i), 1.0);
                }
                return Some(ActiveSolution { w, aw, lambda, sides, rounds: round });
            }
            seen.push(core::mem::replace(&mut sides, next));
            if seen.contains(&sides) {
                return None;
            }
        }
        None
    }
}

impl<'a> Bounded<'a> {
    /// Dual active-set method started from the unconstrained minimizer.
    ///
    /// Repeatedly picks the most violated one-sided row and raises its
    /// multiplier while keeping the working set tight, dropping working rows
    /// whose multipliers would turn negative. Terminates in finitely many
    /// steps for strictly convex problems; returns `None` on numerical
    /// breakdown or when the rows are inconsistent.
    fn dual_active_set(&self, max_steps: usize) -> Option<ActiveSolution> {
        let m = self.m();
        let gram = &self.red.gram;
        let mut aw: Vec<f64> = self.aw0.iter().copied().collect();
        let mut in_set = vec![false; m];
        // Working rows as (row, sign): sign · a_row · w ≤ sign · bound.
        let mut work: Vec<(usize, f64)> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut steps = 0;
        loop {
            let mut pick = None;
            let mut worst = 0.0;
            for j in 0..m {
                if in_set[j] {
                    continue;
                }
                let over = aw[j] - self.upper[j];
                let under = self.lower[j] - aw[j];
                if over > self.ptol[j] && over > worst {
                    worst = over;
                    pick = Some((j, 1.0));
                }
                if under > self.ptol[j] && under > worst {
                    worst = under;
                    pick = Some((j, -1.0));
                }
            }
            let Some((p, sp)) = pick else { break };
            let mut up = 0.0;
            loop {
                steps += 1;
                if steps > max_steps {
                    return None;
                }
                let na = work.len();
                let r = if na > 0 {
                    let mut schur = DMatrix::zeros(na, na);
                    let mut rhs = DVector::zeros(na);
                    for (a, &(i, si)) in work.iter().enumerate() {
                        for (b, &(j, sj)) in work.iter().enumerate() {
                            schur[(a, b)] = si * sj * gram[(i, j)];
                        }
                        rhs[a] = si * sp * gram[(i, p)];
                    }
                    SpdFactor::new(schur)?.solve(&rhs)
                } else {
                    DVector::zeros(0)
                };
                let mut az: Vec<f64> = (0..m).map(|i| sp * gram[(i, p)]).collect();
                for (a, &(j, sj)) in work.iter().enumerate() {
                    let c = sj * r[a];
                    if c != 0.0 {
                        for (i, v) in az.iter_mut().enumerate() {
                            *v -= c * gram[(i, j)];
                        }
                    }
                }
                let curvature = sp * az[p];
                let violation = if sp > 0.0 { aw[p] - self.upper[p] } else { self.lower[p] - aw[p] };

                let mut t2 = f64::INFINITY;
                let mut blocking = usize::MAX;
                for a in 0..na {
                    if r[a] > 1e-14 {
                        let t = u[a] / r[a];
                        if t < t2 {
                            t2 = t;
                            blocking = a;
                        }
                    }
                }
                let dependent = curvature <= 1e-12 * gram[(p, p)];
                let t1 = if dependent { f64::INFINITY } else { violation.max(0.0) / curvature };
                if t1.is_infinite() && t2.is_infinite() {
                    return None;
                }
                let t = t1.min(t2);
                if !dependent {
                    for i in 0..m {
                        aw[i] -= t * az[i];
                    }
                }
                for a in 0..na {
                    u[a] = (u[a] - t * r[a]).max(0.0);
                }
                up += t;
                if t1 <= t2 {
                    in_set[p] = true;
                    work.push((p, sp));
                    u.push(up);
                    break;
                }
                let (dropped, _) = work.remove(blocking);
                u.remove(blocking);
                in_set[dropped] = false;
            }
        }

        // Recompute from the multipliers to shed accumulated drift.
        let mut lambda = vec![0.0; m];
        let mut sides = vec![Side::Free; m];
        let mut w = self.w0.clone();
        let mut aw: Vec<f64> = self.aw0.iter().copied().collect();
        for (a, &(j, sj)) in work.iter().enumerate() {
            let l = sj * u[a];
            lambda[j] = l;
            sides[j] = if sj > 0.0 { Side::Upper } else { Side::Lower };
            w.axpy(-l, &self.red.pinv_at.column(j), 1.0);
            for (i, v) in aw.iter_mut().enumerate() {
                *v -= l * gram[(i, j)];
            }
        }
        let feasible = (0..m).all(|j| {
            let tol = 10.0 * self.ptol[j].max(1e-10);
            aw[j] <= self.upper[j] + tol && aw[j] >= self.lower[j] - tol
        });
        feasible.then_some(ActiveSolution { w, aw, lambda, sides, rounds: steps })
    }
}

enum AdmmStatus {
    Converged,
    Infeasible,
    MaxIter,
}

struct Admm {
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
    y_prev: DVector<f64>,
    rho: usize,
    iterations: usize,
    residual: f64,
}

impl Admm {
    fn new(p: &Bounded, x: DVector<f64>) -> Self {
        let z0 = &p.red.a * &x;
        let z = DVector::from_iterator(z0.len(), (0..z0.len()).map(|j| z0[j].clamp(p.lower[j], p.upper[j])));
        let m = p.m();
        Self {
            x,
            z,
            y: DVector::zeros(m),
            y_prev: DVector::zeros(m),
            rho: RHO_START,
            iterations: 0,
            residual: f64::INFINITY,
        }
    }

    fn run(&mut self, p: &Bounded, cfg: &SolverConfig, eps_abs: f64, eps_rel: f64) -> AdmmStatus {
        let a = &p.red.a;
        let k = self.x.len();
        let m = p.m();
        let alpha = cfg.admm_alpha;
        let check = cfg.admm_check_every.max(1);
        let mut rhs = DVector::zeros(k);
        let mut zt = DVector::zeros(m);
        let mut work = DVector::zeros(m);
        while self.iterations < cfg.admm_max_iter {
            let rho = RHO_LADDER[self.rho];
            // x̃ = (P + σI + ρAᵀA)⁻¹ (σx − q + Aᵀ(ρz − y))
            work.copy_from(&self.z);
            work.scale_mut(rho);
            work -= &self.y;
            rhs.copy_from(&self.x);
            rhs.scale_mut(SIGMA);
            rhs -= &p.q;
            rhs.gemv_tr(1.0, a, &work, 1.0);
            p.red.admm_factors[self.rho].solve_in_place(rhs.as_mut_slice());
            zt.gemv(1.0, a, &rhs, 0.0);
            self.x.axpy(alpha, &rhs, 1.0 - alpha);
            for j in 0..m {
                let zh = alpha * zt[j] + (1.0 - alpha) * self.z[j];
                let zn = (zh + self.y[j] / rho).clamp(p.lower[j], p.upper[j]);
                self.y[j] += rho * (zh - zn);
                self.z[j] = zn;
            }
            self.iterations += 1;
            if self.iterations % check != 0 {
                if self.iterations % check == check - 1 {
                    self.y_prev.copy_from(&self.y);
                }
                continue;
            }

            let ax = a * &self.x;
            let px = &p.red.p_w * &self.x;
            let aty = a.tr_mul(&self.y);
            let rp = (&ax - &self.z).amax();
            let rd = (&px + &p.q + &aty).amax();
            self.residual = rp.max(rd);
            let scale_p = ax.amax().max(self.z.amax());
            let scale_d = px.amax().max(aty.amax()).max(p.q.amax());
            if rp <= eps_abs + eps_rel * scale_p && rd <= eps_abs + eps_rel * scale_d {
                return AdmmStatus::Converged;
            }
            if self.infeasibility_certificate(p) {
                return AdmmStatus::Infeasible;
            }

            let ratio = libm::sqrt((rp / scale_p.max(1e-30)) / (rd / scale_d.max(1e-30)).max(1e-30));
            let target = libm::log10(rho * ratio);
            let idx = RHO_LADDER
                .iter()
                .enumerate()
                .min_by(|x, y| {
                    let dx = libm::fabs(libm::log10(*x.1) - target);
                    let dy = libm::fabs(libm::log10(*y.1) - target);
                    dx.total_cmp(&dy)
                })
                .map(|(i, _)| i)
                .unwrap_or(self.rho);
            self.rho = idx;
        }
        AdmmStatus::MaxIter
    }

    /// `δy` certifies infeasibility when `Aᵀδy ≈ 0` while the support
    /// function of the bounds is negative along it.
    fn infeasibility_certificate(&self, p: &Bounded) -> bool {
        let dy = &self.y - &self.y_prev;
        let norm = dy.amax();
        if norm < 1e-10 {
            return false;
        }
        let eps = 1e-6 * norm;
        if p.red.a.tr_mul(&dy).amax() > eps {
            return false;
        }
        let mut support = 0.0;
        for j in 0..p.m() {
            let d = dy[j];
            if d > eps {
                if !p.upper[j].is_finite() {
                    return false;
                }
                support += p.upper[j] * d;
            } else if d < -eps {
                if !p.lower[j].is_finite() {
                    return false;
                }
                support += p.lower[j] * d;
            }
        }
        support < -eps
    }
}

/// Solves the trajectory QP for reference `ξ` under `constraints`.
///
/// `warm_start` is an optional primal guess in trajectory space; it seeds the
/// active-set guess and, if needed, ADMM.
pub fn solve_traj(
    reference: &DVector<f64>,
    spec: &TrajProblemSpec,
    constraints: &LinearConstraintSet,
    warm_start: Option<&DVector<f64>>,
) -> Result<QpSolution, TrajError> {
    let n = spec.decision_dim();
    if reference.len() != spec.reference_dim() {
        return Err(TrajError::Dimension { what: "reference", expected: spec.reference_dim(), got: reference.len() });
    }
    if reference.iter().any(|v| !v.is_finite()) {
        return Err(TrajError::NonFinite("reference"));
    }
    if constraints.decision_dim() != n {
        return Err(TrajError::Dimension { what: "constraint columns", expected: n, got: constraints.decision_dim() });
    }
    if let Some(w) = warm_start {
        if w.len() != n {
            return Err(TrajError::Dimension { what: "warm start", expected: n, got: w.len() });
        }
    }

    let red = if Arc::ptr_eq(&constraints.matrices, &spec.reduced.matrices) {
        spec.reduced.clone()
    } else {
        Arc::new(ReducedProblem::new(spec.reference_map(), spec.regularizer(), constraints.matrices.clone())?)
    };
    let cfg = spec.config();
    let z = &red.split.null;

    let tau_p = red.split.particular(&constraints.eq_rhs);
    let mut q = red.pz.tr_mul(&tau_p);
    q.gemv_tr(-1.0, &red.gz, reference, 1.0);

    let offsets = &constraints.matrices.ineq * &tau_p;
    let is_reduced = {
        let mut v = vec![false; constraints.n_ineq()];
        for &i in &red.rows {
            v[i] = true;
        }
        v
    };
    for i in 0..constraints.n_ineq() {
        if !is_reduced[i] {
            let tol = cfg.feasibility_tol * offsets[i].abs().max(1.0);
            if offsets[i] > constraints.upper[i] + tol || offsets[i] < constraints.lower[i] - tol {
                return Err(TrajError::Infeasible { row: i });
            }
        }
    }
    let mut lower = Vec::with_capacity(red.n_rows());
    let mut upper = Vec::with_capacity(red.n_rows());
    for (&i, &d) in red.rows.iter().zip(&red.scale) {
        lower.push(d * (constraints.lower[i] - offsets[i]));
        upper.push(d * (constraints.upper[i] - offsets[i]));
    }
    let problem = Bounded::new(&red, q, lower, upper, 1e-11);

    let warm_w = warm_start.map(|t| z.tr_mul(&(t - &tau_p)));
    let initial_values: Vec<f64> = match &warm_w {
        Some(w) => (&red.a * w).iter().copied().collect(),
        None => problem.aw0.iter().copied().collect(),
    };
    let slack = if warm_w.is_some() { 1e-6 } else { 0.0 };
    let guess = problem.guess_from_values(&initial_values, slack);

    let mut iterations = 0;
    let mut found = None;
    if cfg.direct_active_set {
        if warm_w.is_some() {
            found = problem.active_set(guess, WARM_ROUNDS);
        }
        if found.is_none() {
            found = problem.dual_active_set(cfg.polish_rounds * problem.m().max(1));
        }
    }
    if found.is_none() {
        let start = warm_w.clone().unwrap_or_else(|| problem.w0.clone());
        let mut admm = Admm::new(&problem, start);
        let (mut eps_abs, mut eps_rel) = (cfg.admm_eps_abs, cfg.admm_eps_rel);
        loop {
            let status = admm.run(&problem, cfg, eps_abs, eps_rel);
            if let AdmmStatus::Infeasible = status {
                return Err(TrajError::InfeasibleCertificate { iterations: admm.iterations });
            }
            found = problem.active_set(problem.guess_from_admm(&admm), cfg.polish_rounds);
            if found.is_some() {
                break;
            }
            if let AdmmStatus::MaxIter = status {
                return Err(TrajError::NonConvergence { iterations: admm.iterations, best_residual: admm.residual });
            }
            eps_abs *= 1e-2;
            eps_rel *= 1e-2;
        }
        iterations += admm.iterations;
    }
    let sol = found.expect("loop exits with a solution");
    iterations += sol.rounds;

    let primal = &tau_p + z * &sol.w;
    let n_ineq = constraints.n_ineq();
    let mut ineq_duals = DVector::zeros(n_ineq);
    let mut activity = vec![RowActivity::Inactive; n_ineq];
    let weak_tol = cfg.weak_tol;
    for (j, (&i, &d)) in red.rows.iter().zip(&red.scale).enumerate() {
        let lam = sol.lambda[j] * d;
        ineq_duals[i] = lam;
        activity[i] = match sol.sides[j] {
            Side::Upper | Side::Lower => {
                let weak = libm::fabs(lam) < weak_tol;
                let upper_side = if problem.is_equality(j) { lam >= 0.0 } else { sol.sides[j] == Side::Upper };
                if upper_side {
                    RowActivity::Upper { weak }
                } else {
                    RowActivity::Lower { weak }
                }
            }
            Side::Free => {
                let to_upper = (problem.upper[j] - sol.aw[j]) / d;
                let to_lower = (sol.aw[j] - problem.lower[j]) / d;
                if to_upper < weak_tol {
                    RowActivity::Upper { weak: true }
                } else if to_lower < weak_tol {
                    RowActivity::Lower { weak: true }
                } else {
                    RowActivity::Inactive
                }
            }
        };
    }
    for i in 0..n_ineq {
        if !is_reduced[i] {
            if constraints.upper[i] - offsets[i] < weak_tol {
                activity[i] = RowActivity::Upper { weak: true };
            } else if offsets[i] - constraints.lower[i] < weak_tol {
                activity[i] = RowActivity::Lower { weak: true };
            }
        }
    }

    // Stationarity in the full space determines the equality multipliers.
    let mut residual = &red.hessian * &primal;
    residual.gemv_tr(-1.0, spec.reference_map(), reference, 1.0);
    residual.gemv_tr(1.0, &constraints.matrices.ineq, &ineq_duals, 1.0);
    let eq_duals = red.split.multipliers(&residual);
    if constraints.matrices.eq.nrows() > 0 {
        residual.gemv_tr(1.0, &constraints.matrices.eq, &eq_duals, 1.0);
    }
    let kkt_residual = inf_norm(residual.as_slice());
    let primal_residual = constraints.max_violation(&primal).max(0.0);

    Ok(QpSolution {
        primal,
        eq_duals,
        ineq_duals,
        activity,
        kkt_residual,
        primal_residual,
        iterations,
        reduced: red,
    })
}
