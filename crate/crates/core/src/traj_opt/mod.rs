//! Reference-tracking trajectory optimization.
//!
//! For one player, a reference `ξ` is mapped to the trajectory
//!
//! ```text
//! τ(ξ) = argmin ½‖Gτ − ξ‖² + ½‖Hτ‖²   s.t.  A_eq τ = b_eq,  lb ≤ Cτ ≤ ub
//! ```
//!
//! The equality rows (dynamics and the pinned initial state) are eliminated
//! with an orthonormal null-space basis. The remaining inequality-constrained
//! QP is solved by ADMM and then polished on the detected active set, which
//! yields exact multipliers and a clean active set for differentiating the
//! solution map (see [`traj_vjp`]).

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::tag_env::{TagEnvSpec, CONTROL_DIM, SPEED_ROWS, STATE_DIM};

mod qp;
mod sensitivity;

pub use qp::solve_traj;
pub use sensitivity::{dual_penalty, sticky_penalty, traj_vjp, traj_vjp_with_duals};

pub(crate) use qp::ReducedProblem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("reference map must have full row rank")]
    RankDeficientReference,
    #[error("equality constraints are linearly dependent")]
    DependentEqualities,
    #[error("objective is not strictly convex on the equality-feasible subspace")]
    NotStrictlyConvex,
    #[error("invalid bounds on inequality row {row}: lower {lower} > upper {upper}")]
    InvalidBounds { row: usize, lower: f64, upper: f64 },
    #[error("initial state is infeasible: {0}")]
    InfeasibleInitialState(&'static str),
    #[error("constraint set is infeasible (inequality row {row})")]
    Infeasible { row: usize },
    #[error("constraint set is infeasible (certificate found after {iterations} iterations)")]
    InfeasibleCertificate { iterations: usize },
    #[error("QP solver did not converge in {iterations} iterations (best residual {best_residual:.3e})")]
    NonConvergence { iterations: usize, best_residual: f64 },
    #[error("reduced KKT system is singular; the solution map is not differentiable here")]
    DegenerateDerivative,
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
}

/// A state-control trajectory over a finite horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// `[x₁ … x_T, u₁ … u_T]`.
    pub fn flatten(&self) -> DVector<f64> {
        let parts: Vec<f64> = self
            .states
            .iter()
            .chain(&self.controls)
            .flat_map(|v| v.iter().copied())
            .collect();
        DVector::from_vec(parts)
    }

    pub fn unflatten(
        flat: &DVector<f64>,
        horizon: usize,
        state_dim: usize,
        control_dim: usize,
    ) -> Result<Self, TrajError> {
        let expected = horizon * (state_dim + control_dim);
        if flat.len() != expected {
            return Err(TrajError::Dimension { what: "trajectory", expected, got: flat.len() });
        }
        let states = (0..horizon)
            .map(|t| flat.rows(t * state_dim, state_dim).into_owned())
            .collect();
        let base = horizon * state_dim;
        let controls = (0..horizon)
            .map(|t| flat.rows(base + t * control_dim, control_dim).into_owned())
            .collect();
        Ok(Self { states, controls })
    }
}

/// The constraint matrices, which do not depend on the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrices {
    pub eq: DMatrix<f64>,
    pub ineq: DMatrix<f64>,
}

/// `A_eq τ = b_eq` and `lb ≤ C τ ≤ ub` for one player and initial state.
#[derive(Debug, Clone)]
pub struct LinearConstraintSet {
    pub matrices: Arc<ConstraintMatrices>,
    pub eq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl LinearConstraintSet {
    pub fn new(
        matrices: Arc<ConstraintMatrices>,
        eq_rhs: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, TrajError> {
        let (n_eq, n) = matrices.eq.shape();
        let (n_ineq, n2) = matrices.ineq.shape();
        if n2 != n && n_eq > 0 && n_ineq > 0 {
            return Err(TrajError::Dimension { what: "inequality columns", expected: n, got: n2 });
        }
        if eq_rhs.len() != n_eq {
            return Err(TrajError::Dimension { what: "equality rhs", expected: n_eq, got: eq_rhs.len() });
        }
        if lower.len() != n_ineq || upper.len() != n_ineq {
            return Err(TrajError::Dimension {
                what: "inequality bounds",
                expected: n_ineq,
                got: lower.len().min(upper.len()),
            });
        }
        for row in 0..n_ineq {
            if lower[row].is_nan() || upper[row].is_nan() || lower[row] > upper[row] {
                return Err(TrajError::InvalidBounds { row, lower: lower[row], upper: upper[row] });
            }
        }
        Ok(Self { matrices, eq_rhs, lower, upper })
    }

    pub fn decision_dim(&self) -> usize {
        self.matrices.eq.ncols().max(self.matrices.ineq.ncols())
    }

    pub fn n_ineq(&self) -> usize {
        self.matrices.ineq.nrows()
    }

    /// Largest violation of any equality or inequality row.
    pub fn max_violation(&self, tau: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        if self.matrices.eq.nrows() > 0 {
            worst = worst.max((&self.matrices.eq * tau - &self.eq_rhs).amax());
        }
        if self.n_ineq() > 0 {
            let c = &self.matrices.ineq * tau;
            for i in 0..c.len() {
                worst = worst.max(c[i] - self.upper[i]).max(self.lower[i] - c[i]);
            }
        }
        worst
    }
}

/// Produces the per-initial-state constraint set of one player.
pub trait ConstraintBuilder: Send + Sync + fmt::Debug {
    fn decision_dim(&self) -> usize;
    /// Shared matrices; every set returned by [`build`](Self::build) points at them.
    fn matrices(&self) -> Arc<ConstraintMatrices>;
    fn build(&self, x0: &[f64]) -> Result<LinearConstraintSet, TrajError>;
}

/// Counts of each family of inequality rows in the tag constraint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagRowCounts {
    pub position: usize,
    pub speed: usize,
    pub control: usize,
    pub terminal: usize,
}

/// Double-integrator dynamics, arena, speed and input limits of the tag game.
#[derive(Debug, Clone)]
pub struct TagConstraints {
    env: TagEnvSpec,
    matrices: Arc<ConstraintMatrices>,
    counts: TagRowCounts,
}

impl TagConstraints {
    pub fn new(env: TagEnvSpec) -> Result<Self, TrajError> {
        env.validate().map_err(|_| TrajError::InfeasibleInitialState("invalid environment limits"))?;
        let t_len = env.horizon;
        let n = env.trajectory_dim();
        let dt = env.dt;

        // x₁ = x0 and x_{t+1} = A x_t + B u_t for t < T.
        let mut eq = DMatrix::zeros(STATE_DIM * t_len, n);
        for d in 0..STATE_DIM {
            eq[(d, d)] = 1.0;
        }
        for t in 0..t_len.saturating_sub(1) {
            let row = STATE_DIM * (t + 1);
            let (xs, xn, us) = (env.state_offset(t), env.state_offset(t + 1), env.control_offset(t));
            for d in 0..2 {
                // position: p' − p − v dt − ½ u dt² = 0
                eq[(row + d, xn + d)] = 1.0;
                eq[(row + d, xs + d)] = -1.0;
                eq[(row + d, xs + 2 + d)] = -dt;
                eq[(row + d, us + d)] = -0.5 * dt * dt;
                // velocity: v' − v − u dt = 0
                eq[(row + 2 + d, xn + 2 + d)] = 1.0;
                eq[(row + 2 + d, xs + 2 + d)] = -1.0;
                eq[(row + 2 + d, us + d)] = -dt;
            }
        }

        let walls = env.arena.halfspaces();
        let counts = TagRowCounts {
            position: walls.len() * t_len,
            speed: SPEED_ROWS * t_len,
            control: CONTROL_DIM * t_len,
            terminal: if env.terminal_braking { walls.len() } else { 0 },
        };
        let rows = counts.position + counts.speed + counts.control + counts.terminal;
        let mut ineq = DMatrix::zeros(rows, n);
        let mut r = 0;
        for t in 0..t_len {
            let s = env.state_offset(t);
            for h in &walls {
                ineq[(r, s)] = h.normal[0];
                ineq[(r, s + 1)] = h.normal[1];
                r += 1;
            }
        }
        for t in 0..t_len {
            let s = env.state_offset(t);
            for nrm in env.speed_normals() {
                ineq[(r, s + 2)] = nrm[0];
                ineq[(r, s + 3)] = nrm[1];
                r += 1;
            }
        }
        for t in 0..t_len {
            let c = env.control_offset(t);
            for d in 0..CONTROL_DIM {
                ineq[(r, c + d)] = 1.0;
                r += 1;
            }
        }
        if env.terminal_braking {
            let s = env.state_offset(t_len - 1);
            let look = env.braking_lookahead();
            for h in &walls {
                ineq[(r, s)] = h.normal[0];
                ineq[(r, s + 1)] = h.normal[1];
                ineq[(r, s + 2)] = look * h.normal[0];
                ineq[(r, s + 3)] = look * h.normal[1];
                r += 1;
            }
        }
        debug_assert_eq!(r, rows);
        Ok(Self { env, matrices: Arc::new(ConstraintMatrices { eq, ineq }), counts })
    }

    pub fn env(&self) -> &TagEnvSpec {
        &self.env
    }

    pub fn row_counts(&self) -> TagRowCounts {
        self.counts
    }
}

impl ConstraintBuilder for TagConstraints {
    fn decision_dim(&self) -> usize {
        self.env.trajectory_dim()
    }

    fn matrices(&self) -> Arc<ConstraintMatrices> {
        self.matrices.clone()
    }

    fn build(&self, x0: &[f64]) -> Result<LinearConstraintSet, TrajError> {
        if x0.len() != STATE_DIM {
            return Err(TrajError::Dimension { what: "initial state", expected: STATE_DIM, got: x0.len() });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(TrajError::NonFinite("initial state"));
        }
        let env = &self.env;
        const TOL: f64 = 1e-9;
        if !env.arena.contains([x0[0], x0[1]], TOL) {
            return Err(TrajError::InfeasibleInitialState("position outside the arena"));
        }
        if !env.velocity_feasible([x0[2], x0[3]], TOL) {
            return Err(TrajError::InfeasibleInitialState("velocity outside the speed limit"));
        }

        let mut eq_rhs = DVector::zeros(self.matrices.eq.nrows());
        eq_rhs.rows_mut(0, STATE_DIM).copy_from_slice(x0);

        let rows = self.matrices.ineq.nrows();
        let mut lower = DVector::from_element(rows, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(rows, f64::INFINITY);
        let walls = env.arena.halfspaces();
        let mut r = 0;
        for _ in 0..env.horizon {
            for h in &walls {
                upper[r] = h.offset;
                r += 1;
            }
        }
        let sb = env.speed_bound();
        for _ in 0..self.counts.speed {
            lower[r] = -sb;
            upper[r] = sb;
            r += 1;
        }
        for _ in 0..self.counts.control {
            lower[r] = -env.u_max;
            upper[r] = env.u_max;
            r += 1;
        }
        for h in walls.iter().take(self.counts.terminal) {
            upper[r] = h.offset;
            r += 1;
        }
        LinearConstraintSet::new(self.matrices.clone(), eq_rhs, lower, upper)
    }
}

/// Box `lb ≤ τ ≤ ub` with no equality rows; the initial state is ignored.
#[derive(Debug, Clone)]
pub struct BoxConstraints {
    lower: DVector<f64>,
    upper: DVector<f64>,
    matrices: Arc<ConstraintMatrices>,
}

impl BoxConstraints {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Self {
        let n = lower.len();
        assert_eq!(n, upper.len());
        let matrices = Arc::new(ConstraintMatrices {
            eq: DMatrix::zeros(0, n),
            ineq: DMatrix::identity(n, n),
        });
        Self { lower, upper, matrices }
    }

    pub fn interval(lower: f64, upper: f64) -> Self {
        Self::new(DVector::from_element(1, lower), DVector::from_element(1, upper))
    }
}

impl ConstraintBuilder for BoxConstraints {
    fn decision_dim(&self) -> usize {
        self.lower.len()
    }

    fn matrices(&self) -> Arc<ConstraintMatrices> {
        self.matrices.clone()
    }

    fn build(&self, _x0: &[f64]) -> Result<LinearConstraintSet, TrajError> {
        LinearConstraintSet::new(
            self.matrices.clone(),
            DVector::zeros(0),
            self.lower.clone(),
            self.upper.clone(),
        )
    }
}

/// How a reference is interpreted; decides which sticky-constraint penalty applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// `G = I`: the reference lives in trajectory space.
    Identity,
    /// Any other reference map (control or goal references).
    General,
}

/// Solver tolerances and ADMM settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SolverConfig {
    /// Stationarity tolerance on the returned KKT point.
    pub kkt_tol: f64,
    /// Primal feasibility tolerance on the returned point.
    pub feasibility_tol: f64,
    /// Multipliers and slacks below this mark a row as weakly active.
    pub weak_tol: f64,
    pub admm_max_iter: usize,
    pub admm_eps_abs: f64,
    pub admm_eps_rel: f64,
    pub admm_alpha: f64,
    pub admm_check_every: usize,
    pub polish_rounds: usize,
    /// Try the active-set iteration from the unconstrained minimizer (or the
    /// warm start) before falling back to ADMM.
    pub direct_active_set: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            feasibility_tol: 1e-8,
            weak_tol: 1e-7,
            admm_max_iter: 20_000,
            admm_eps_abs: 1e-4,
            admm_eps_rel: 1e-4,
            admm_alpha: 1.6,
            admm_check_every: 10,
            polish_rounds: 40,
            direct_active_set: true,
        }
    }
}

/// Activity of one two-sided inequality row at a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowActivity {
    Inactive,
    Lower { weak: bool },
    Upper { weak: bool },
}

impl RowActivity {
    pub fn is_active(self) -> bool {
        !matches!(self, RowActivity::Inactive)
    }

    pub fn is_strictly_active(self) -> bool {
        matches!(self, RowActivity::Lower { weak: false } | RowActivity::Upper { weak: false })
    }

    pub fn is_weak(self) -> bool {
        matches!(self, RowActivity::Lower { weak: true } | RowActivity::Upper { weak: true })
    }
}

/// Primal-dual solution of one trajectory QP.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub eq_duals: DVector<f64>,
    /// Signed: positive when the upper bound is active, negative for the lower.
    pub ineq_duals: DVector<f64>,
    pub activity: Vec<RowActivity>,
    pub kkt_residual: f64,
    pub primal_residual: f64,
    pub iterations: usize,
    pub(crate) reduced: Arc<ReducedProblem>,
}

impl QpSolution {
    pub fn n_strictly_active(&self) -> usize {
        self.activity.iter().filter(|a| a.is_strictly_active()).count()
    }

    pub fn n_weakly_active(&self) -> usize {
        self.activity.iter().filter(|a| a.is_weak()).count()
    }
}

/// The trajectory subproblem of one player: reference map, regularizer and
/// constraint builder, plus cached factorizations.
#[derive(Debug, Clone)]
pub struct TrajProblemSpec {
    reference_map: DMatrix<f64>,
    regularizer: DMatrix<f64>,
    horizon: usize,
    builder: Arc<dyn ConstraintBuilder>,
    config: SolverConfig,
    mode: ReferenceMode,
    reduced: Arc<ReducedProblem>,
}

impl TrajProblemSpec {
    /// Checks that `G` has full row rank and that `GᵀG + HᵀH` is positive
    /// definite on the null space of the equality constraints.
    pub fn new(
        reference_map: DMatrix<f64>,
        regularizer: DMatrix<f64>,
        horizon: usize,
        builder: Arc<dyn ConstraintBuilder>,
        config: SolverConfig,
    ) -> Result<Self, TrajError> {
        let n = builder.decision_dim();
        if reference_map.ncols() != n {
            return Err(TrajError::Dimension { what: "reference map columns", expected: n, got: reference_map.ncols() });
        }
        if regularizer.ncols() != n {
            return Err(TrajError::Dimension { what: "regularizer columns", expected: n, got: regularizer.ncols() });
        }
        let r = reference_map.nrows();
        if r == 0 || r > n || crate::linalg::EqualitySplit::new(&reference_map).is_none() {
            return Err(TrajError::RankDeficientReference);
        }
        let mode = if r == n && reference_map == DMatrix::identity(n, n) {
            ReferenceMode::Identity
        } else {
            ReferenceMode::General
        };
        let reduced = Arc::new(ReducedProblem::new(&reference_map, &regularizer, builder.matrices())?);
        Ok(Self { reference_map, regularizer, horizon, builder, config, mode, reduced })
    }

    /// `G = [0 I]`: the reference is the control sequence.
    pub fn control_reference(env: &TagEnvSpec) -> Result<Self, TrajError> {
        let builder = Arc::new(TagConstraints::new(env.clone())?);
        let (n, r) = (env.trajectory_dim(), env.control_reference_dim());
        let mut g = DMatrix::zeros(r, n);
        g.view_mut((0, env.control_offset(0)), (r, r)).fill_with_identity();
        Self::new(g, DMatrix::zeros(0, n), env.horizon, builder, SolverConfig::default())
    }

    /// The reference is a goal for the terminal position; controls are
    /// regularized with weight `control_weight`.
    pub fn goal_reference(env: &TagEnvSpec, control_weight: f64) -> Result<Self, TrajError> {
        let builder = Arc::new(TagConstraints::new(env.clone())?);
        let n = env.trajectory_dim();
        let mut g = DMatrix::zeros(2, n);
        let s = env.state_offset(env.horizon - 1);
        g[(0, s)] = 1.0;
        g[(1, s + 1)] = 1.0;
        let r = env.control_reference_dim();
        let mut h = DMatrix::zeros(r, n);
        h.view_mut((0, env.control_offset(0)), (r, r))
            .fill_diagonal(libm::sqrt(control_weight));
        Self::new(g, h, env.horizon, builder, SolverConfig::default())
    }

    /// `G = I`, `H = 0`: projection of a trajectory-space reference.
    pub fn identity(env: &TagEnvSpec) -> Result<Self, TrajError> {
        let builder = Arc::new(TagConstraints::new(env.clone())?);
        let n = env.trajectory_dim();
        Self::new(DMatrix::identity(n, n), DMatrix::zeros(0, n), env.horizon, builder, SolverConfig::default())
    }

    /// Scalar decision in `[lower, upper]`, tracked exactly.
    pub fn interval(lower: f64, upper: f64) -> Result<Self, TrajError> {
        let builder = Arc::new(BoxConstraints::interval(lower, upper));
        Self::new(DMatrix::identity(1, 1), DMatrix::zeros(0, 1), 1, builder, SolverConfig::default())
    }

    pub fn with_config(mut self, config: SolverConfig) -> Self {
        self.config = config;
        self
    }

    pub fn reference_map(&self) -> &DMatrix<f64> {
        &self.reference_map
    }

    pub fn regularizer(&self) -> &DMatrix<f64> {
        &self.regularizer
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn reference_dim(&self) -> usize {
        self.reference_map.nrows()
    }

    pub fn decision_dim(&self) -> usize {
        self.reference_map.ncols()
    }

    pub fn mode(&self) -> ReferenceMode {
        self.mode
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn builder(&self) -> &Arc<dyn ConstraintBuilder> {
        &self.builder
    }

    pub fn build_constraints(&self, x0: &[f64]) -> Result<LinearConstraintSet, TrajError> {
        self.builder.build(x0)
    }

    /// Builds the constraints for `x0` and solves.
    pub fn solve(&self, reference: &DVector<f64>, x0: &[f64]) -> Result<QpSolution, TrajError> {
        let constraints = self.build_constraints(x0)?;
        solve_traj(reference, self, &constraints, None)
    }

    /// Objective value `½‖Gτ − ξ‖² + ½‖Hτ‖²`.
    pub fn objective(&self, tau: &DVector<f64>, reference: &DVector<f64>) -> f64 {
        let track = &self.reference_map * tau - reference;
        let mut value = 0.5 * track.norm_squared();
        if self.regularizer.nrows() > 0 {
            value += 0.5 * (&self.regularizer * tau).norm_squared();
        }
        value
    }
}

/// Builds the tag constraint set of a player with initial state `x0`.
pub fn build_constraints(x0: &[f64], env: &TagEnvSpec) -> Result<LinearConstraintSet, TrajError> {
    TagConstraints::new(env.clone())?.build(x0)
}
