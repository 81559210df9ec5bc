//! The lifted game: bundles of references, their candidate trajectories, the
//! induced bimatrix game over candidates, and gradients of the expected costs.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::bimatrix::{bmg_vjp, bmg_with_label, BimatrixError, BimatrixSolution, CostMatrixPair};
use crate::tag_env::{cost_gradients, pursuer_cost, TagEnvSpec};
use crate::traj_opt::{
    dual_penalty, solve_traj, sticky_penalty, traj_vjp_with_duals, LinearConstraintSet, QpSolution, ReferenceMode,
    TrajError, TrajProblemSpec,
};

/// Weight of the sticky-constraint penalty added to each player's objective.
pub const DEFAULT_PENALTY_WEIGHT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Player {
    Pursuer,
    Evader,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::Pursuer, Player::Evader];

    pub fn index(self) -> usize {
        match self {
            Player::Pursuer => 0,
            Player::Evader => 1,
        }
    }

    pub fn other(self) -> Player {
        match self {
            Player::Pursuer => Player::Evader,
            Player::Evader => Player::Pursuer,
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Player::Pursuer => "pursuer",
            Player::Evader => "evader",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("{player} candidate {candidate}: {source}")]
    Traj { player: Player, candidate: usize, source: TrajError },
    #[error("{player} constraints: {source}")]
    Constraints { player: Player, source: TrajError },
    #[error("bimatrix: {0}")]
    Bimatrix(#[from] BimatrixError),
    #[error("{player} bundle: {reason}")]
    Bundle { player: Player, reason: &'static str },
    #[error("gradient play diverged at step {step}")]
    Divergence { step: usize },
}

/// The references `ξ_i¹ … ξ_iⁿ` of one player.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBundle {
    pub player: Player,
    pub references: Vec<DVector<f64>>,
}

impl ReferenceBundle {
    pub fn new(player: Player, references: Vec<DVector<f64>>) -> Self {
        Self { player, references }
    }

    /// References drawn i.i.d. uniform in `[−bound, bound]` per coordinate.
    pub fn random<R: Rng + ?Sized>(player: Player, count: usize, dim: usize, bound: f64, rng: &mut R) -> Self {
        let references = (0..count)
            .map(|_| DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(-bound..=bound))))
            .collect();
        Self { player, references }
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }

    fn validate(&self, dim: usize) -> Result<(), GameError> {
        let player = self.player;
        if self.references.is_empty() {
            return Err(GameError::Bundle { player, reason: "empty bundle" });
        }
        if self.references.iter().any(|r| r.len() != dim) {
            return Err(GameError::Bundle { player, reason: "reference dimension mismatch" });
        }
        if self.references.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(GameError::Bundle { player, reason: "non-finite reference" });
        }
        Ok(())
    }

    /// Euclidean norm of all references stacked.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.references.iter().map(|r| r.norm_squared()).sum())
    }
}

/// Partial derivatives of both players' costs at one candidate pair.
#[derive(Debug, Clone)]
pub struct CostGradients {
    pub f1_tau1: DVector<f64>,
    pub f1_tau2: DVector<f64>,
    pub f2_tau1: DVector<f64>,
    pub f2_tau2: DVector<f64>,
}

/// Player costs `f₁(τ₁, τ₂)`, `f₂(τ₁, τ₂)`, both minimized.
pub trait GameCosts: Send + Sync + fmt::Debug {
    fn evaluate(&self, tau1: &DVector<f64>, tau2: &DVector<f64>) -> (f64, f64);
    fn gradients(&self, tau1: &DVector<f64>, tau2: &DVector<f64>) -> CostGradients;
}

/// Zero-sum tag costs: distance plus control-effort difference for the
/// pursuer, its negation for the evader.
#[derive(Debug, Clone)]
pub struct TagCosts {
    pub env: TagEnvSpec,
}

impl GameCosts for TagCosts {
    fn evaluate(&self, tau1: &DVector<f64>, tau2: &DVector<f64>) -> (f64, f64) {
        let f1 = pursuer_cost(tau1.as_slice(), tau2.as_slice(), &self.env);
        (f1, -f1)
    }

    fn gradients(&self, tau1: &DVector<f64>, tau2: &DVector<f64>) -> CostGradients {
        let (g1, g2) = cost_gradients(tau1.as_slice(), tau2.as_slice(), &self.env);
        CostGradients { f2_tau1: -&g1, f2_tau2: -&g2, f1_tau1: g1, f1_tau2: g2 }
    }
}

/// Scalar interval game: `f₁ = (τ₁ − τ₂)²`, `f₂ = −f₁ − r·τ₂²`.
#[derive(Debug, Clone, Copy)]
pub struct IntervalCosts {
    pub regularization: f64,
}

impl GameCosts for IntervalCosts {
    fn evaluate(&self, tau1: &DVector<f64>, tau2: &DVector<f64>) -> (f64, f64) {
        let d = tau1[0] - tau2[0];
        (d * d, -d * d - self.regularization * tau2[0] * tau2[0])
    }

    fn gradients(&self, tau1: &DVector<f64>, tau2: &DVector<f64>) -> CostGradients {
        let d = tau1[0] - tau2[0];
        let one = |v: f64| DVector::from_element(1, v);
        CostGradients {
            f1_tau1: one(2.0 * d),
            f1_tau2: one(-2.0 * d),
            f2_tau1: one(-2.0 * d),
            f2_tau2: one(2.0 * d - 2.0 * self.regularization * tau2[0]),
        }
    }
}

/// Output of [`LiftedGame::forward`].
#[derive(Debug, Clone)]
pub struct LiftedSolution {
    /// Per player, the QP solution of every candidate.
    pub candidates: [Vec<QpSolution>; 2],
    pub costs: CostMatrixPair,
    pub equilibrium: BimatrixSolution,
    /// Expected costs `(q₁ᵀAq₂, q₁ᵀBq₂)`.
    pub losses: (f64, f64),
}

impl LiftedSolution {
    pub fn trajectory(&self, player: Player, candidate: usize) -> &DVector<f64> {
        &self.candidates[player.index()][candidate].primal
    }

    pub fn trajectories(&self, player: Player) -> impl Iterator<Item = &DVector<f64>> {
        self.candidates[player.index()].iter().map(|c| &c.primal)
    }

    pub fn strategy(&self, player: Player) -> &DVector<f64> {
        match player {
            Player::Pursuer => &self.equilibrium.q1,
            Player::Evader => &self.equilibrium.q2,
        }
    }

    pub fn loss(&self, player: Player) -> f64 {
        match player {
            Player::Pursuer => self.losses.0,
            Player::Evader => self.losses.1,
        }
    }

    /// Draws one candidate index from the player's mixed strategy.
    pub fn sample_candidate<R: Rng + ?Sized>(&self, player: Player, rng: &mut R) -> usize {
        sample_index(self.strategy(player), rng)
    }
}

/// Samples an index with the given probabilities.
pub fn sample_index<R: Rng + ?Sized>(weights: &DVector<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * weights.sum();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Gradients of a scalar with respect to both players' bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleGradients {
    pub pursuer: Vec<DVector<f64>>,
    pub evader: Vec<DVector<f64>>,
}

impl BundleGradients {
    pub fn get(&self, player: Player) -> &Vec<DVector<f64>> {
        match player {
            Player::Pursuer => &self.pursuer,
            Player::Evader => &self.evader,
        }
    }
}

/// Per-player gradients used by simultaneous gradient play, with counts of
/// derivative evaluations that hit a degenerate point.
#[derive(Debug, Clone)]
pub struct PlayerGradients {
    /// `∇_{ξ₁}` of the pursuer's objective and `∇_{ξ₂}` of the evader's.
    pub gradients: [Vec<DVector<f64>>; 2],
    /// Sticky-constraint penalty values included in the objectives.
    pub penalties: [f64; 2],
    pub degenerate: usize,
}

impl PlayerGradients {
    pub fn norm(&self, player: Player) -> f64 {
        libm::sqrt(self.gradients[player.index()].iter().map(|g| g.norm_squared()).sum())
    }
}

/// Both players' trajectory problems plus their costs.
#[derive(Debug, Clone)]
pub struct LiftedGame {
    pub specs: [TrajProblemSpec; 2],
    pub costs: Arc<dyn GameCosts>,
    pub penalty_weight: f64,
    pub entering_label: usize,
    /// Half-width of the box references are initialized in.
    pub init_bound: f64,
}

impl LiftedGame {
    pub fn new(specs: [TrajProblemSpec; 2], costs: Arc<dyn GameCosts>, init_bound: f64) -> Self {
        Self { specs, costs, penalty_weight: DEFAULT_PENALTY_WEIGHT, entering_label: 0, init_bound }
    }

    /// Tag with control references for both players.
    pub fn tag(env: &TagEnvSpec) -> Result<Self, TrajError> {
        let spec = TrajProblemSpec::control_reference(env)?;
        Ok(Self::new([spec.clone(), spec], Arc::new(TagCosts { env: env.clone() }), env.u_max))
    }

    /// Tag with terminal-position goal references.
    pub fn tag_goal(env: &TagEnvSpec, control_weight: f64) -> Result<Self, TrajError> {
        let spec = TrajProblemSpec::goal_reference(env, control_weight)?;
        let (lo, hi) = env.arena.bounding_box();
        let bound = [lo[0], lo[1], hi[0], hi[1]].iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
        Ok(Self::new([spec.clone(), spec], Arc::new(TagCosts { env: env.clone() }), bound))
    }

    /// The scalar interval game on `[−1, 1]`.
    pub fn interval(regularization: f64) -> Result<Self, TrajError> {
        let spec = TrajProblemSpec::interval(-1.0, 1.0)?;
        Ok(Self::new([spec.clone(), spec], Arc::new(IntervalCosts { regularization }), 1.0))
    }

    pub fn spec(&self, player: Player) -> &TrajProblemSpec {
        &self.specs[player.index()]
    }

    pub fn reference_dim(&self, player: Player) -> usize {
        self.spec(player).reference_dim()
    }

    pub fn build_constraints(&self, x1: &[f64], x2: &[f64]) -> Result<[LinearConstraintSet; 2], GameError> {
        let c1 = self.specs[0]
            .build_constraints(x1)
            .map_err(|source| GameError::Constraints { player: Player::Pursuer, source })?;
        let c2 = self.specs[1]
            .build_constraints(x2)
            .map_err(|source| GameError::Constraints { player: Player::Evader, source })?;
        Ok([c1, c2])
    }

    pub fn random_bundle<R: Rng + ?Sized>(&self, player: Player, count: usize, rng: &mut R) -> ReferenceBundle {
        ReferenceBundle::random(player, count, self.reference_dim(player), self.init_bound, rng)
    }

    pub fn forward(
        &self,
        b1: &ReferenceBundle,
        b2: &ReferenceBundle,
        x1: &[f64],
        x2: &[f64],
    ) -> Result<LiftedSolution, GameError> {
        let constraints = self.build_constraints(x1, x2)?;
        self.forward_with(b1, b2, &constraints, None)
    }

    /// Forward pass on prebuilt constraints. `warm` supplies primal guesses
    /// from a previous solution with the same candidate counts.
    pub fn forward_with(
        &self,
        b1: &ReferenceBundle,
        b2: &ReferenceBundle,
        constraints: &[LinearConstraintSet; 2],
        warm: Option<&LiftedSolution>,
    ) -> Result<LiftedSolution, GameError> {
        let bundles = [b1, b2];
        let mut candidates: [Vec<QpSolution>; 2] = [Vec::new(), Vec::new()];
        for player in Player::BOTH {
            let p = player.index();
            let bundle = bundles[p];
            if bundle.player != player {
                return Err(GameError::Bundle { player, reason: "bundle belongs to the other player" });
            }
            bundle.validate(self.specs[p].reference_dim())?;
            for (c, reference) in bundle.references.iter().enumerate() {
                let guess = warm
                    .filter(|w| w.candidates[p].len() == bundle.len())
                    .map(|w| &w.candidates[p][c].primal);
                let sol = solve_traj(reference, &self.specs[p], &constraints[p], guess)
                    .map_err(|source| GameError::Traj { player, candidate: c, source })?;
                candidates[p].push(sol);
            }
        }
        let (n1, n2) = (candidates[0].len(), candidates[1].len());
        let mut a = DMatrix::zeros(n1, n2);
        let mut b = DMatrix::zeros(n1, n2);
        for i in 0..n1 {
            for j in 0..n2 {
                let (f1, f2) = self.costs.evaluate(&candidates[0][i].primal, &candidates[1][j].primal);
                a[(i, j)] = f1;
                b[(i, j)] = f2;
            }
        }
        let costs = CostMatrixPair::new(a, b)?;
        let equilibrium = bmg_with_label(&costs, self.entering_label)?;
        let losses = costs.expected_costs(&equilibrium.q1, &equilibrium.q2);
        Ok(LiftedSolution { candidates, costs, equilibrium, losses })
    }

    /// Cotangents on `(A, B)` of `s₁·L₁ + s₂·L₂`, through both the direct
    /// bilinear path and the equilibrium's dependence on the matrices.
    fn matrix_cotangents(
        &self,
        sol: &LiftedSolution,
        seed: [f64; 2],
        lenient: bool,
        degenerate: &mut usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), GameError> {
        let (a, b) = (&sol.costs.a, &sol.costs.b);
        let (q1, q2) = (&sol.equilibrium.q1, &sol.equilibrium.q2);
        let outer = q1 * q2.transpose();
        let mut a_bar = &outer * seed[0];
        let mut b_bar = &outer * seed[1];
        let q1_bar = a * q2 * seed[0] + b * q2 * seed[1];
        let q2_bar = a.tr_mul(q1) * seed[0] + b.tr_mul(q1) * seed[1];
        match bmg_vjp(&sol.costs, &sol.equilibrium, &q1_bar, &q2_bar) {
            Ok((da, db)) => {
                a_bar += da;
                b_bar += db;
            }
            // Keep only the direct path: treat the mixed strategies as fixed.
            Err(BimatrixError::NonIsolated) if lenient => *degenerate += 1,
            Err(e) => return Err(e.into()),
        }
        Ok((a_bar, b_bar))
    }

    /// Trajectory cotangents of every candidate given cotangents on `(A, B)`.
    fn trajectory_cotangents(&self, sol: &LiftedSolution, a_bar: &DMatrix<f64>, b_bar: &DMatrix<f64>) -> [Vec<DVector<f64>>; 2] {
        let mut out: [Vec<DVector<f64>>; 2] = [
            sol.candidates[0].iter().map(|c| DVector::zeros(c.primal.len())).collect(),
            sol.candidates[1].iter().map(|c| DVector::zeros(c.primal.len())).collect(),
        ];
        for i in 0..sol.candidates[0].len() {
            for j in 0..sol.candidates[1].len() {
                let (wa, wb) = (a_bar[(i, j)], b_bar[(i, j)]);
                if wa == 0.0 && wb == 0.0 {
                    continue;
                }
                let g = self.costs.gradients(&sol.candidates[0][i].primal, &sol.candidates[1][j].primal);
                out[0][i].axpy(wa, &g.f1_tau1, 1.0);
                out[0][i].axpy(wb, &g.f2_tau1, 1.0);
                out[1][j].axpy(wa, &g.f1_tau2, 1.0);
                out[1][j].axpy(wb, &g.f2_tau2, 1.0);
            }
        }
        out
    }

    /// Gradient of `L_which` with respect to both players' bundles.
    pub fn backward(&self, sol: &LiftedSolution, which: Player) -> Result<BundleGradients, GameError> {
        let seed = match which {
            Player::Pursuer => [1.0, 0.0],
            Player::Evader => [0.0, 1.0],
        };
        self.backward_seeded(sol, seed)
    }

    /// Gradient of `s₁·L₁ + s₂·L₂` with respect to both players' bundles.
    pub fn backward_seeded(&self, sol: &LiftedSolution, seed: [f64; 2]) -> Result<BundleGradients, GameError> {
        let mut unused = 0;
        let (a_bar, b_bar) = self.matrix_cotangents(sol, seed, false, &mut unused)?;
        let tau_bar = self.trajectory_cotangents(sol, &a_bar, &b_bar);
        let mut grads: [Vec<DVector<f64>>; 2] = [Vec::new(), Vec::new()];
        for player in Player::BOTH {
            let p = player.index();
            for (c, (cand, bar)) in sol.candidates[p].iter().zip(&tau_bar[p]).enumerate() {
                let g = traj_vjp_with_duals(cand, &self.specs[p], bar, None)
                    .map_err(|source| GameError::Traj { player, candidate: c, source })?;
                grads[p].push(g);
            }
        }
        let [pursuer, evader] = grads;
        Ok(BundleGradients { pursuer, evader })
    }

    /// `∇_{ξ₁}(L₁ + penalty₁)` and `∇_{ξ₂}(L₂ + penalty₂)` at one iterate.
    ///
    /// With `lenient`, degenerate derivative points do not abort: a
    /// non-isolated equilibrium drops the indirect path through the mixed
    /// strategies, and a singular trajectory KKT system zeroes that
    /// candidate's gradient. Both are counted.
    pub fn player_gradients(
        &self,
        sol: &LiftedSolution,
        bundles: [&ReferenceBundle; 2],
        constraints: &[LinearConstraintSet; 2],
        lenient: bool,
    ) -> Result<PlayerGradients, GameError> {
        let mut degenerate = 0;
        let mut gradients: [Vec<DVector<f64>>; 2] = [Vec::new(), Vec::new()];
        let mut penalties = [0.0; 2];
        for player in Player::BOTH {
            let p = player.index();
            let mut seed = [0.0; 2];
            seed[p] = 1.0;
            let (a_bar, b_bar) = self.matrix_cotangents(sol, seed, lenient, &mut degenerate)?;
            let tau_bar = self.trajectory_cotangents(sol, &a_bar, &b_bar);
            let spec = &self.specs[p];
            for (c, cand) in sol.candidates[p].iter().enumerate() {
                let reference = &bundles[p].references[c];
                let mut hinge = None;
                let mut dual_bar = None;
                if self.penalty_weight > 0.0 {
                    match spec.mode() {
                        ReferenceMode::Identity => {
                            let (v, g) = sticky_penalty(reference, &constraints[p]);
                            penalties[p] += self.penalty_weight * v;
                            hinge = Some(g * self.penalty_weight);
                        }
                        ReferenceMode::General => {
                            let (v, g) = dual_penalty(cand, self.penalty_weight);
                            penalties[p] += v;
                            dual_bar = Some(g);
                        }
                    }
                }
                let g = match traj_vjp_with_duals(cand, spec, &tau_bar[p][c], dual_bar.as_ref()) {
                    Ok(g) => g,
                    Err(TrajError::DegenerateDerivative) if lenient => {
                        degenerate += 1;
                        DVector::zeros(reference.len())
                    }
                    Err(source) => return Err(GameError::Traj { player, candidate: c, source }),
                };
                gradients[p].push(match hinge {
                    Some(h) => g + h,
                    None => g,
                });
            }
        }
        Ok(PlayerGradients { gradients, penalties, degenerate })
    }

    /// Simultaneous gradient play on the references from `init`.
    pub fn gradient_play(
        &self,
        init: [ReferenceBundle; 2],
        x1: &[f64],
        x2: &[f64],
        config: &GradientPlayConfig,
    ) -> Result<GradientPlayResult, GameError> {
        let constraints = self.build_constraints(x1, x2)?;
        let [mut b1, mut b2] = init;
        let mut trace = Vec::with_capacity(config.steps);
        let mut grad_norms = Vec::with_capacity(config.steps);
        let mut degenerate_steps = 0;
        let mut converged = false;
        let mut sol = self.forward_with(&b1, &b2, &constraints, None)?;
        for step in 0..config.steps {
            if !sol.losses.0.is_finite() || !sol.losses.1.is_finite() {
                return Err(GameError::Divergence { step });
            }
            let grads = self.player_gradients(&sol, [&b1, &b2], &constraints, true)?;
            if grads.degenerate > 0 {
                degenerate_steps += 1;
            }
            let norms = [grads.norm(Player::Pursuer), grads.norm(Player::Evader)];
            trace.push(sol.losses.0);
            grad_norms.push(norms);
            if norms[0] < config.tolerance && norms[1] < config.tolerance {
                converged = true;
                break;
            }
            if !norms[0].is_finite() || !norms[1].is_finite() {
                return Err(GameError::Divergence { step });
            }
            for (bundle, (g, rate)) in [&mut b1, &mut b2].into_iter().zip(grads.gradients.iter().zip(config.rates)) {
                for (r, d) in bundle.references.iter_mut().zip(g) {
                    r.axpy(-rate, d, 1.0);
                }
            }
            sol = self.forward_with(&b1, &b2, &constraints, Some(&sol))?;
        }
        Ok(GradientPlayResult { bundles: [b1, b2], solution: sol, trace, grad_norms, converged, degenerate_steps })
    }

    /// Gradient play from bundles of `n₁` and `n₂` random references.
    pub fn gradient_play_references<R: Rng + ?Sized>(
        &self,
        x1: &[f64],
        x2: &[f64],
        counts: [usize; 2],
        config: &GradientPlayConfig,
        rng: &mut R,
    ) -> Result<GradientPlayResult, GameError> {
        let b1 = self.random_bundle(Player::Pursuer, counts[0], rng);
        let b2 = self.random_bundle(Player::Evader, counts[1], rng);
        self.gradient_play([b1, b2], x1, x2, config)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GradientPlayConfig {
    pub steps: usize,
    pub rates: [f64; 2],
    /// Early stop once both gradient norms fall below this.
    pub tolerance: f64,
}

impl Default for GradientPlayConfig {
    fn default() -> Self {
        Self { steps: 400, rates: [1.0, 1.0], tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct GradientPlayResult {
    pub bundles: [ReferenceBundle; 2],
    /// Solution at the final bundles.
    pub solution: LiftedSolution,
    /// `L₁` at every evaluated iterate.
    pub trace: Vec<f64>,
    pub grad_norms: Vec<[f64; 2]>,
    pub converged: bool,
    /// Steps where some derivative was taken at a degenerate point.
    pub degenerate_steps: usize,
}

impl GradientPlayResult {
    pub fn value(&self) -> f64 {
        self.solution.losses.0
    }
}
