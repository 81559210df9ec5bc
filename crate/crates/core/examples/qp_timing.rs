//! Rough per-solve timing of the trajectory QP in each reference mode.

use liftgame_core::traj_opt::{solve_traj, TrajProblemSpec};
use liftgame_core::{DVector, TagEnvSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let env = TagEnvSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (name, spec) in [
        ("control", TrajProblemSpec::control_reference(&env).unwrap()),
        ("identity", TrajProblemSpec::identity(&env).unwrap()),
        ("goal", TrajProblemSpec::goal_reference(&env, 0.1).unwrap()),
    ] {
        let sets: Vec<_> = (0..20).map(|_| spec.build_constraints(&env.sample_player_state(&mut rng).to_array()).unwrap()).collect();
        let refs: Vec<DVector<f64>> = (0..200)
            .map(|_| DVector::from_iterator(spec.reference_dim(), (0..spec.reference_dim()).map(|_| rng.random_range(-2.0..2.0))))
            .collect();
        let start = Instant::now();
        let mut iters = 0;
        let mut n = 0;
        for (i, r) in refs.iter().enumerate() {
            let s = solve_traj(r, &spec, &sets[i % 20], None).unwrap();
            iters += s.iterations;
            n += 1;
        }
        println!("{name}: {:.3} ms/solve, mean iterations {:.1}", start.elapsed().as_secs_f64() * 1e3 / n as f64, iters as f64 / n as f64);
    }
}
