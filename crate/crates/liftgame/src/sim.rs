//! Closed-loop execution of planned trajectories.

use liftgame_core::tag_env::{controls, step, PlayerState, TagEnvSpec};
use liftgame_core::DVector;
use serde::{Deserialize, Serialize};

/// Tolerance for the executed-state feasibility audit.
pub const EXECUTION_TOL: f64 = 1e-6;

/// Executed motion of both players.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    /// `states[k]` is the state before `controls[k]` is applied; one extra
    /// final state.
    pub states: [Vec<PlayerState>; 2],
    pub controls: [Vec<[f64; 2]>; 2],
    /// Executed states outside the arena or speed limit.
    pub violations: usize,
}

impl ClosedLoop {
    pub fn start(x1: PlayerState, x2: PlayerState) -> Self {
        Self { states: [vec![x1], vec![x2]], controls: [Vec::new(), Vec::new()], violations: 0 }
    }

    pub fn current(&self) -> (PlayerState, PlayerState) {
        (*self.states[0].last().expect("started"), *self.states[1].last().expect("started"))
    }

    pub fn len(&self) -> usize {
        self.controls[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies the first `steps` controls of each plan.
    pub fn execute(&mut self, plans: [&DVector<f64>; 2], steps: usize, env: &TagEnvSpec) {
        for (p, plan) in plans.into_iter().enumerate() {
            let u = controls(plan.as_slice(), env);
            for &ut in u.iter().take(steps) {
                let x = *self.states[p].last().expect("started");
                let next = step(&x, ut, env.dt);
                if !env.state_feasible(&next, EXECUTION_TOL) {
                    self.violations += 1;
                }
                self.controls[p].push(ut);
                self.states[p].push(next);
            }
        }
    }

    /// Pursuer cost of the executed motion over steps `from..`.
    pub fn value_from(&self, from: usize, env: &TagEnvSpec) -> f64 {
        let n = self.len();
        if from >= n {
            return 0.0;
        }
        let mut total = 0.0;
        for k in from..n {
            let (a, b) = (&self.states[0][k], &self.states[1][k]);
            let dx = a.position[0] - b.position[0];
            let dy = a.position[1] - b.position[1];
            let (u, w) = (self.controls[0][k], self.controls[1][k]);
            let effort = u[0] * u[0] + u[1] * u[1] - w[0] * w[0] - w[1] * w[1];
            total += dx * dx + dy * dy + env.effort_weight * effort;
        }
        total / (n - from) as f64
    }

    pub fn value(&self, env: &TagEnvSpec) -> f64 {
        self.value_from(0, env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use liftgame_core::lifted_game::{LiftedGame, Player, ReferenceBundle};
    use liftgame_core::tag_env::pursuer_cost;

    #[test]
    fn full_plan_value_matches_cost() {
        let env = TagEnvSpec::default();
        let game = LiftedGame::tag(&env).unwrap();
        let x1 = PlayerState::new([0.2, 0.1], [0.1, 0.0]);
        let x2 = PlayerState::new([-0.3, 0.2], [0.0, -0.2]);
        let r = env.control_reference_dim();
        let b1 = ReferenceBundle::new(Player::Pursuer, vec![DVector::from_fn(r, |i, _| (i as f64 * 0.3).sin())]);
        let b2 = ReferenceBundle::new(Player::Evader, vec![DVector::from_fn(r, |i, _| (i as f64 * 0.7).cos())]);
        let sol = game.forward(&b1, &b2, &x1.to_array(), &x2.to_array()).unwrap();
        let (t1, t2) = (sol.trajectory(Player::Pursuer, 0), sol.trajectory(Player::Evader, 0));
        let mut cl = ClosedLoop::start(x1, x2);
        cl.execute([t1, t2], env.horizon, &env);
        let expected = pursuer_cost(t1.as_slice(), t2.as_slice(), &env);
        assert!((cl.value(&env) - expected).abs() < 1e-10);
        assert_eq!(cl.violations, 0);
    }
}
