//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exact property criteria (1-6, 10) fail the run. The empirical ordinal
//! criteria (7, 8, 9, 11) are reported; set `LIFTGAME_ACCEPTANCE_STRICT=1` to
//! make them fatal too.

use std::time::Instant;

use liftgame::config::{Preset, RunConfig, StrategyKind};
use liftgame::experiments::{
    exp_equilibrium_convergence, exp_open_loop_tournament, exp_receding_horizon_tournament, exp_sampled_vs_learned,
    exp_self_play, exp_toy_interval, initial_state, ConvergenceReport, OpenLoopReport, KINDS,
};
use liftgame::stats::combined_sem;
use liftgame_core::bimatrix::{bmg, bmg_vjp, verify_equilibrium, CostMatrixPair};
use liftgame_core::lifted_game::{LiftedGame, LiftedSolution, Player, ReferenceBundle};
use liftgame_core::traj_opt::{traj_vjp, LinearConstraintSet, QpSolution, TrajProblemSpec};
use liftgame_core::{DMatrix, DVector, TagEnvSpec};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// 1. Bimatrix correctness

fn random_pair(n1: usize, n2: usize, rng: &mut ChaCha8Rng) -> CostMatrixPair {
    let mut m = || DMatrix::from_fn(n1, n2, |_, _| rng.random_range(-5.0..5.0));
    CostMatrixPair::new(m(), m()).unwrap()
}

fn integer_pair(n1: usize, n2: usize, rng: &mut ChaCha8Rng) -> CostMatrixPair {
    let mut m = || DMatrix::from_fn(n1, n2, |_, _| rng.random_range(-3i32..=3) as f64);
    CostMatrixPair::new(m(), m()).unwrap()
}

/// Largest `t` with some `y ≥ t` on `support` (zero elsewhere, summing to 1)
/// making every row in `tight` a minimizer of `m y`.
fn support_margin(m: &DMatrix<f64>, support: &[usize], tight: &[usize]) -> Option<f64> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let v = lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY));
    let y: Vec<_> = support.iter().map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    lp.add_constraint(y.iter().map(|&var| (var, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    for &var in &y {
        lp.add_constraint([(var, 1.0), (t, -1.0)], ComparisonOp::Ge, 0.0);
    }
    for row in 0..m.nrows() {
        let mut expr: Vec<_> = support.iter().zip(&y).map(|(&c, &var)| (var, m[(row, c)])).collect();
        expr.push((v, -1.0));
        let op = if tight.contains(&row) { ComparisonOp::Eq } else { ComparisonOp::Ge };
        lp.add_constraint(expr, op, 0.0);
    }
    lp.solve().ok().map(|s| s.objective())
}

fn subsets(n: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << n)).map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect()).collect()
}

fn equilibrium_supports(pair: &CostMatrixPair) -> Vec<(Vec<usize>, Vec<usize>)> {
    let (n1, n2) = pair.shape();
    let bt = pair.b.transpose();
    let mut found = Vec::new();
    for s1 in subsets(n1) {
        for s2 in subsets(n2) {
            if support_margin(&pair.a, &s2, &s1).is_some_and(|t| t > 1e-9)
                && support_margin(&bt, &s1, &s2).is_some_and(|t| t > 1e-9)
            {
                found.push((s1.clone(), s2.clone()));
            }
        }
    }
    found
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (n1, n2) in [(2, 2), (3, 3), (3, 4), (4, 4)] {
        for _ in 0..1000 {
            let pair = random_pair(n1, n2, &mut rng);
            match bmg(&pair) {
                Ok(sol) => {
                    let (ok, v) = verify_equilibrium(&pair, &sol.q1, &sol.q2, 1e-9);
                    worst = worst.max(v);
                    failures += usize::from(!ok);
                }
                Err(_) => failures += 1,
            }
        }
    }
    let mut matched = 0;
    let integer_games = 300;
    for k in 0..integer_games {
        let pair = integer_pair(1 + k % 4, 1 + (k / 4) % 4, &mut rng);
        if let Ok(sol) = bmg(&pair) {
            let (ok, v) = verify_equilibrium(&pair, &sol.q1, &sol.q2, 1e-9);
            worst = worst.max(v);
            if ok && equilibrium_supports(&pair).contains(&(sol.support1.clone(), sol.support2.clone())) {
                matched += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && matched == integer_games && secs < 10.0,
        format!(
            "4000 random games: {failures} failures, worst violation {worst:.1e} (tol 1e-9); integer supports matched {matched}/{integer_games}; {secs:.1} s (limit 10 s)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Bimatrix derivatives

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-6;
    let (mut checked, mut mixed, mut drawn) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    let mut p1_a_nonzero = 0usize;
    while checked < 200 && drawn < 20_000 {
        drawn += 1;
        let pair = random_pair(3, 3, &mut rng);
        let sol = bmg(&pair).unwrap();
        if !sol.strictly_complementary {
            continue;
        }
        let q1_bar = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let q2_bar = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let Ok((a_bar, b_bar)) = bmg_vjp(&pair, &sol, &q1_bar, &q2_bar) else { continue };
        // p₁ and q₁ do not depend on A.
        let (a_only, _) = bmg_vjp(&pair, &sol, &q1_bar, &DVector::zeros(3)).unwrap();
        p1_a_nonzero += usize::from(a_only.amax() != 0.0);

        let mut fd_a = DMatrix::zeros(3, 3);
        let mut fd_b = DMatrix::zeros(3, 3);
        let mut stable = true;
        'outer: for which in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut plus = pair.clone();
                    let mut minus = pair.clone();
                    let (mp, mm) = if which == 0 { (&mut plus.a, &mut minus.a) } else { (&mut plus.b, &mut minus.b) };
                    mp[(i, j)] += h;
                    mm[(i, j)] -= h;
                    let (sp, sm) = (bmg(&plus).unwrap(), bmg(&minus).unwrap());
                    if sp.support1 != sol.support1 || sp.support2 != sol.support2 || sm.support1 != sol.support1 || sm.support2 != sol.support2 {
                        stable = false;
                        break 'outer;
                    }
                    if which == 0 && (sp.p1 != sol.p1 || sm.p1 != sol.p1) {
                        p1_a_nonzero += 1;
                    }
                    let fd = (q1_bar.dot(&(sp.q1 - &sm.q1)) + q2_bar.dot(&(sp.q2 - &sm.q2))) / (2.0 * h);
                    if which == 0 {
                        fd_a[(i, j)] = fd;
                    } else {
                        fd_b[(i, j)] = fd;
                    }
                }
            }
        }
        if !stable {
            continue;
        }
        let num = ((&fd_a - &a_bar).norm_squared() + (&fd_b - &b_bar).norm_squared()).sqrt();
        let den = (fd_a.norm_squared() + fd_b.norm_squared()).sqrt().max((a_bar.norm_squared() + b_bar.norm_squared()).sqrt());
        let err = if den < 1e-8 { num } else { num / den };
        worst = worst.max(err);
        checked += 1;
        mixed += usize::from(sol.support1.len() > 1);
    }
    outcome(
        checked == 200 && worst <= 1e-5 && p1_a_nonzero == 0,
        format!(
            "{checked} nondegenerate 3x3 games ({mixed} mixed), worst relative error {worst:.1e} (tol 1e-5, h 1e-6); dp1/dA nonzero in {p1_a_nonzero} games"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Trajectory QP correctness

fn random_vec(len: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

/// KKT residual of the original problem, computed from scratch:
/// stationarity, sign-consistent complementarity and feasibility.
fn kkt_residual(sol: &QpSolution, spec: &TrajProblemSpec, set: &LinearConstraintSet, reference: &DVector<f64>) -> (f64, f64) {
    let tau = &sol.primal;
    let g = spec.reference_map();
    let h = spec.regularizer();
    let mut grad = g.transpose() * (g * tau - reference);
    if h.nrows() > 0 {
        grad += h.transpose() * (h * tau);
    }
    grad += set.matrices.eq.transpose() * &sol.eq_duals;
    grad += set.matrices.ineq.transpose() * &sol.ineq_duals;
    let mut comp: f64 = 0.0;
    let c = &set.matrices.ineq * tau;
    for i in 0..c.len() {
        let lam = sol.ineq_duals[i];
        let slack = if lam >= 0.0 { set.upper[i] - c[i] } else { c[i] - set.lower[i] };
        comp = comp.max((lam * slack).abs());
    }
    (grad.amax().max(comp), set.max_violation(tau))
}

fn criterion_3() -> Outcome {
    let env = TagEnvSpec::default();
    let control = TrajProblemSpec::control_reference(&env).unwrap();
    let ident = TrajProblemSpec::identity(&env).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_kkt, mut worst_feas, mut worst_fixed): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut errors = 0;
    for _ in 0..500 {
        let x0 = env.sample_player_state(&mut rng).to_array();
        let set = control.build_constraints(&x0).unwrap();
        let xi = random_vec(control.reference_dim(), 2.5, &mut rng);
        let Ok(sol) = control.solve(&xi, &x0) else {
            errors += 1;
            continue;
        };
        let (kkt, feas) = kkt_residual(&sol, &control, &set, &xi);
        worst_kkt = worst_kkt.max(kkt).max(sol.kkt_residual);
        worst_feas = worst_feas.max(feas);
        // A feasible trajectory is its own projection.
        match ident.solve(&sol.primal, &x0) {
            Ok(p) => worst_fixed = worst_fixed.max((&p.primal - &sol.primal).amax()),
            Err(_) => errors += 1,
        }
    }
    outcome(
        errors == 0 && worst_kkt <= 1e-8 && worst_feas <= 1e-6 && worst_fixed <= 1e-8,
        format!(
            "500 tag instances (T=20): {errors} solver errors, KKT residual {worst_kkt:.1e} (tol 1e-8), feasibility {worst_feas:.1e} (tol 1e-6), projection fixed point {worst_fixed:.1e} (tol 1e-8)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Trajectory QP derivatives

fn criterion_4() -> Outcome {
    let env = TagEnvSpec::default();
    let spec = TrajProblemSpec::control_reference(&env).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = 1e-6;
    let (mut checked, mut drawn, mut with_active) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    while checked < 100 && drawn < 2000 {
        drawn += 1;
        let x0 = env.sample_player_state(&mut rng).to_array();
        let xi = random_vec(spec.reference_dim(), 2.0, &mut rng);
        let bar = random_vec(env.trajectory_dim(), 1.0, &mut rng);
        let sol = spec.solve(&xi, &x0).unwrap();
        if sol.n_weakly_active() > 0 {
            continue;
        }
        let analytic = traj_vjp(&sol, &spec, &bar).unwrap();
        let mut fd = DVector::zeros(xi.len());
        let mut stable = true;
        for i in 0..xi.len() {
            let (mut plus, mut minus) = (xi.clone(), xi.clone());
            plus[i] += h;
            minus[i] -= h;
            let (sp, sm) = (spec.solve(&plus, &x0).unwrap(), spec.solve(&minus, &x0).unwrap());
            if sp.activity != sol.activity || sm.activity != sol.activity {
                stable = false;
                break;
            }
            fd[i] = bar.dot(&(sp.primal - sm.primal)) / (2.0 * h);
        }
        if !stable {
            continue;
        }
        let den = fd.norm().max(analytic.norm());
        let err = if den < 1e-8 { (&fd - &analytic).norm() } else { (&fd - &analytic).norm() / den };
        worst = worst.max(err);
        checked += 1;
        with_active += usize::from(sol.n_strictly_active() > 0);
    }
    let interval = TrajProblemSpec::interval(-1.0, 1.0).unwrap();
    let active = interval.solve(&DVector::from_element(1, 2.0), &[]).unwrap();
    let sens = traj_vjp(&active, &interval, &DVector::from_element(1, 1.0)).unwrap()[0];
    outcome(
        checked == 100 && worst <= 1e-4 && sens == 0.0,
        format!(
            "{checked} active-set-stable instances ({with_active} with active rows), worst relative error {worst:.1e} (tol 1e-4); active 1-D sensitivity {sens}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. End-to-end gradient

fn same_structure(a: &LiftedSolution, b: &LiftedSolution) -> bool {
    a.equilibrium.support1 == b.equilibrium.support1
        && a.equilibrium.support2 == b.equilibrium.support2
        && (0..2).all(|p| a.candidates[p].iter().zip(&b.candidates[p]).all(|(x, y)| x.activity == y.activity))
}

/// Relative error of the pursuer-loss gradient against central differences,
/// or `None` if the instance is degenerate or changes structure under ±h.
fn end_to_end_error(game: &LiftedGame, bundles: &[ReferenceBundle; 2], a1: &[f64], a2: &[f64]) -> Option<f64> {
    let h = 1e-6;
    let sol = game.forward(&bundles[0], &bundles[1], a1, a2).ok()?;
    if !sol.equilibrium.strictly_complementary || sol.candidates.iter().flatten().any(|c| c.n_weakly_active() > 0) {
        return None;
    }
    let grads = game.backward(&sol, Player::Pursuer).ok()?;
    let (mut num, mut n_fd, mut n_an) = (0.0, 0.0, 0.0);
    for p in Player::BOTH {
        for c in 0..bundles[p.index()].len() {
            for i in 0..game.reference_dim(p) {
                let perturbed = |delta: f64| {
                    let mut b = bundles.clone();
                    b[p.index()].references[c][i] += delta;
                    game.forward(&b[0], &b[1], a1, a2).ok()
                };
                let (sp, sm) = (perturbed(h)?, perturbed(-h)?);
                if !same_structure(&sp, &sol) || !same_structure(&sm, &sol) {
                    return None;
                }
                let fd = (sp.losses.0 - sm.losses.0) / (2.0 * h);
                let an = grads.get(p)[c][i];
                num += (fd - an) * (fd - an);
                n_fd += fd * fd;
                n_an += an * an;
            }
        }
    }
    let den = f64::sqrt(f64::max(n_fd, n_an));
    Some(if den < 1e-8 { num.sqrt() } else { num.sqrt() / den })
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;

    // Sampled states with the default weights: the effort terms dominate
    // over five steps, so these equilibria are almost always pure.
    let env = TagEnvSpec::default().with_horizon(5);
    let game = LiftedGame::tag(&env).unwrap();
    let (mut plain, mut drawn) = (0, 0);
    while plain < 20 && drawn < 500 {
        drawn += 1;
        let (x1, x2) = initial_state(&env, 505, drawn);
        let bundles = [game.random_bundle(Player::Pursuer, 2, &mut rng), game.random_bundle(Player::Evader, 2, &mut rng)];
        if let Some(err) = end_to_end_error(&game, &bundles, &x1.to_array(), &x2.to_array()) {
            worst = worst.max(err);
            plain += 1;
        }
    }

    // Coincident start and light effort weight: mixed equilibria are common.
    let mut light = TagEnvSpec::default().with_horizon(5);
    light.effort_weight = 1e-3;
    let game = LiftedGame::tag(&light).unwrap();
    let (mut mixed, mut drawn) = (0, 0);
    while mixed < 20 && drawn < 2000 {
        drawn += 1;
        let (x1, _) = initial_state(&light, 506, drawn);
        let a = x1.to_array();
        let bundles = [game.random_bundle(Player::Pursuer, 2, &mut rng), game.random_bundle(Player::Evader, 2, &mut rng)];
        let Ok(sol) = game.forward(&bundles[0], &bundles[1], &a, &a) else { continue };
        if sol.equilibrium.support1.len() < 2 || sol.equilibrium.support2.len() < 2 {
            continue;
        }
        if let Some(err) = end_to_end_error(&game, &bundles, &a, &a) {
            worst = worst.max(err);
            mixed += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        plain == 20 && mixed == 20 && worst <= 1e-3 && secs < 60.0,
        format!(
            "T=5, n=2: {plain} sampled instances plus {mixed} mixed-equilibrium instances, worst relative error {worst:.1e} (tol 1e-3); {secs:.1} s (limit 60 s)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6-11. Studies

fn base_config() -> RunConfig {
    RunConfig { preset: Preset::Ci, seed: 0, ..RunConfig::default() }
}

fn criterion_6() -> Outcome {
    let r = exp_toy_interval(&base_config()).unwrap();
    let reg = &r.regularized;
    let unreg = &r.unregularized;
    let reg_in_set = reg.corner_counts[0] + reg.corner_counts[1];
    let capped = unreg.runs.iter().filter(|x| !x.stopped_early).count();
    let stalled_off_equilibrium = unreg.runs.iter().filter(|x| x.stopped_early && !x.local_equilibrium).count();
    outcome(
        reg_in_set == reg.runs.len() && unreg.at_equilibrium == 0,
        format!(
            "regularized: {reg_in_set}/{} limits in {{(-1,-1),(1,1)}} ({} / {}); unregularized: {} of {} runs end at an equilibrium, {capped} hit the {}-step cap, {stalled_off_equilibrium} stop at a stationary non-equilibrium point",
            reg.runs.len(),
            reg.corner_counts[0],
            reg.corner_counts[1],
            unreg.at_equilibrium,
            unreg.runs.len(),
            r.unregularized.runs.first().map_or(0, |_| base_config().experiments.toy_steps),
        ),
    )
}

fn criterion_7(conv: &ConvergenceReport) -> Outcome {
    let (p, l) = (conv.pure.as_ref().unwrap(), conv.lifted.as_ref().unwrap());
    let (ps, ls) = (p.final_value.unwrap(), l.final_value.unwrap());
    let c = combined_sem(&ps, &ls);
    let gap = ls.mean - ps.mean;
    let converged = conv.runs.iter().map(|r| usize::from(r[0].converged) + usize::from(r[1].converged)).sum::<usize>();
    outcome(
        gap > 2.0 * c,
        format!(
            "{} states: lifted {:.4} ± {:.4}, pure {:.4} ± {:.4}, gap {:.4} = {:.2} combined SEM (need > 2); tail drift pure {:.2}% lifted {:.2}%; {converged}/{} runs met the gradient tolerance",
            conv.runs.len(),
            ls.mean,
            ls.sem_or_zero(),
            ps.mean,
            ps.sem_or_zero(),
            gap,
            gap / c,
            100.0 * p.tail_drift,
            100.0 * l.tail_drift,
            2 * conv.runs.len()
        ),
    )
}

fn grid_text(means: impl Fn(usize, usize) -> f64) -> String {
    let mut parts = Vec::new();
    for (i, pk) in KINDS.iter().enumerate() {
        for (j, ek) in KINDS.iter().enumerate() {
            let k = |x: &StrategyKind| if *x == StrategyKind::Lifted { "L" } else { "P" };
            parts.push(format!("({},{}) {:.4}", k(pk), k(ek), means(i, j)));
        }
    }
    parts.join(", ")
}

fn criterion_8(ol: &OpenLoopReport, conv: &ConvergenceReport) -> Outcome {
    let grid = ol.grid.as_ref().unwrap();
    let (ordered, gaps) = grid.ordering(1.0);
    let ll = grid.get(StrategyKind::Lifted, StrategyKind::Lifted).summary.unwrap();
    let eq = conv.lifted.as_ref().unwrap().final_value.unwrap();
    let agree = (ll.mean - eq.mean).abs() <= 2.0 * combined_sem(&ll, &eq);
    outcome(
        ordered && agree && ol.trials.len() >= 20,
        format!(
            "{} states: {}; ordering gaps in SEM {:.2}, {:.2}, {:.2} (need >= 1 each); (L,L) vs equilibrium value {:.4}: {}",
            ol.trials.len(),
            grid_text(|i, j| grid.cells[i][j].mean()),
            gaps[0],
            gaps[1],
            gaps[2],
            eq.mean,
            if agree { "within 2 SEM" } else { "differs by more than 2 SEM" }
        ),
    )
}

fn criterion_9(ol: &OpenLoopReport) -> Outcome {
    let r = exp_receding_horizon_tournament(&base_config(), None).unwrap();
    let grid = r.grid.as_ref().unwrap();
    let open = ol.grid.as_ref().unwrap();
    use StrategyKind::{Lifted, Pure};
    let m = |p, e| grid.get(p, e).mean();
    let ordered = m(Pure, Lifted) > m(Lifted, Lifted) && m(Lifted, Lifted) > m(Lifted, Pure) && m(Lifted, Pure) > m(Pure, Pure);
    let below = (0..2).all(|i| (0..2).all(|j| grid.cells[i][j].mean() < open.cells[i][j].mean()));
    let violations: usize = r.trials.iter().map(|t| t.violations).sum();
    let states = r.trials.iter().map(|t| t.state).max().map_or(0, |s| s + 1);
    outcome(
        ordered && below,
        format!(
            "{states} states: {}; ordering of means {}; every pairing below open loop: {below}; executed-state violations {violations}",
            grid_text(|i, j| grid.cells[i][j].mean()),
            if ordered { "holds" } else { "does not hold" },
        ),
    )
}

fn criterion_10() -> Outcome {
    let ci = base_config();
    let trace = exp_self_play(&ci).unwrap();
    let window = (trace.turns.len() / 5).max(1);
    let (first, last) = trace.gradient_norm_windows(window);
    let feasible = trace.closed_loop.violations == 0;
    let mut paper = base_config();
    paper.preset = Preset::Paper;
    let long = exp_self_play(&paper).unwrap();
    let drift = long.window_drift(500);
    outcome(
        feasible && last < first,
        format!(
            "CI run {} turns: {} executed-state violations, gradient norm first/last {window}-turn window {first:.4} -> {last:.4}; mean forward pass {:.2} ms (soft target 50 ms); {}-turn run: 500-turn window drift {} (soft target < 5%)",
            trace.turns.len(),
            trace.closed_loop.violations,
            trace.mean_forward_ms(),
            long.turns.len(),
            drift.map_or("n/a".into(), |d| format!("{:.2}%", 100.0 * d)),
        ),
    )
}

fn criterion_11() -> Outcome {
    let mut c = base_config();
    c.experiments.sampled_vs_learned_trials = Some(50);
    let r = exp_sampled_vs_learned(&c).unwrap();
    let base20 = *r.baseline.last().unwrap();
    let base1 = r.baseline[0];
    let learned = r.learned.unwrap();
    let cs = combined_sem(&base20, &learned);
    let gap = base20.mean - learned.mean;
    let worst_is_one = r.baseline.iter().all(|s| s.mean <= base1.mean);
    outcome(
        gap >= cs,
        format!(
            "{} trials: learned 2-candidate {:.4} ± {:.4}, sampled n1=20 {:.4} ± {:.4}, gap {:.2} combined SEM (need >= 1); n1=1 {:.4} is the worst baseline: {worst_is_one}",
            r.trials.len(),
            learned.mean,
            learned.sem_or_zero(),
            base20.mean,
            base20.sem_or_zero(),
            gap / cs,
            base1.mean,
        ),
    )
}

fn main() {
    let strict = std::env::var("LIFTGAME_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut fatal = Vec::new();
    let mut report = |id: u32, name: &str, exact: bool, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        println!(
            "[{}] {id:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass && (exact || strict) {
            fatal.push(id);
        }
    };
    report(1, "bimatrix correctness", true, &mut criterion_1);
    report(2, "bimatrix derivatives", true, &mut criterion_2);
    report(3, "trajectory QP correctness", true, &mut criterion_3);
    report(4, "trajectory QP derivatives", true, &mut criterion_4);
    report(5, "end-to-end gradient", true, &mut criterion_5);
    report(6, "interval game", true, &mut criterion_6);

    let mut cfg = base_config();
    cfg.experiments.convergence_states = Some(20);
    cfg.experiments.open_loop_states = Some(20);
    let conv = exp_equilibrium_convergence(&cfg).unwrap();
    let ol = exp_open_loop_tournament(&cfg).unwrap();
    report(7, "lifted vs pure value gap", false, &mut || criterion_7(&conv));
    report(8, "open-loop tournament ordering", false, &mut || criterion_8(&ol, &conv));
    report(9, "receding-horizon tournament", false, &mut || criterion_9(&ol));
    report(10, "self-play learning", true, &mut criterion_10);
    report(11, "sampled vs learned candidates", false, &mut criterion_11);

    if !fatal.is_empty() {
        eprintln!("acceptance: criteria {fatal:?} failed");
        std::process::exit(1);
    }
}
