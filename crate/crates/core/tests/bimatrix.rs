use liftgame_core::bimatrix::{bmg, bmg_vjp, bmg_with_label, verify_equilibrium, CostMatrixPair};
use liftgame_core::{DMatrix, DVector};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-5.0..5.0))
}

fn integer_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-3i32..=3) as f64)
}

/// Largest `t` such that some `y` with `y ≥ t` on `support`, zero elsewhere,
/// makes every index of `tight` a minimizer of `m y` (cost rows) and all
/// other rows no better. `None` if infeasible.
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

/// Support pairs of all equilibria, by support enumeration with LP
/// feasibility for each pair.
fn enumerate_equilibrium_supports(pair: &CostMatrixPair) -> Vec<(Vec<usize>, Vec<usize>)> {
    let (n1, n2) = pair.shape();
    let mut found = Vec::new();
    for s1 in subsets(n1) {
        for s2 in subsets(n2) {
            // Player 2 mixes on s2 so that every row in s1 is a best response for player 1.
            let ok2 = support_margin(&pair.a, &s2, &s1).is_some_and(|t| t > 1e-9);
            if !ok2 {
                continue;
            }
            let bt = pair.b.transpose();
            let ok1 = support_margin(&bt, &s1, &s2).is_some_and(|t| t > 1e-9);
            if ok1 {
                found.push((s1.clone(), s2.clone()));
            }
        }
    }
    found
}

/// Minimax value of the zero-sum game where player 1 minimizes `A`.
fn minimax_value(a: &DMatrix<f64>) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let v = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let x: Vec<_> = (0..a.nrows()).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    lp.add_constraint(x.iter().map(|&var| (var, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    for j in 0..a.ncols() {
        let mut expr: Vec<_> = x.iter().enumerate().map(|(i, &var)| (var, a[(i, j)])).collect();
        expr.push((v, -1.0));
        lp.add_constraint(expr, ComparisonOp::Le, 0.0);
    }
    lp.solve().unwrap().objective()
}

#[test]
fn rock_paper_scissors() {
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, -1.0, -1.0, 0.0, 1.0, 1.0, -1.0, 0.0]);
    let sol = bmg(&CostMatrixPair::zero_sum(a).unwrap()).unwrap();
    for q in [&sol.q1, &sol.q2] {
        assert!((q - DVector::from_element(3, 1.0 / 3.0)).amax() < 1e-12);
    }
}

#[test]
fn matching_pennies() {
    let pair = CostMatrixPair::zero_sum(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap();
    let sol = bmg(&pair).unwrap();
    assert!((&sol.q1 - DVector::from_element(2, 0.5)).amax() < 1e-12);
    assert!((&sol.q2 - DVector::from_element(2, 0.5)).amax() < 1e-12);
    // Shifted matching pennies: p = (1/4, 1/4) for both players.
    assert!((&sol.p1 - DVector::from_element(2, 0.25)).amax() < 1e-12);
    assert!((&sol.p2 - DVector::from_element(2, 0.25)).amax() < 1e-12);
}

#[test]
fn complementarity_on_random_games() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let pair = CostMatrixPair::new(random_matrix(3, 4, &mut rng), random_matrix(3, 4, &mut rng)).unwrap();
        let sol = bmg(&pair).unwrap();
        worst = worst.max(sol.complementarity_residual);
        assert!((sol.q1.sum() - 1.0).abs() < 1e-10 && (sol.q2.sum() - 1.0).abs() < 1e-10);
        assert!(sol.q1.iter().chain(sol.q2.iter()).all(|&v| v >= 0.0));
        for (i, &v) in sol.p1.iter().enumerate() {
            assert_eq!(v > 0.0, sol.support1.contains(&i));
        }
        assert!(verify_equilibrium(&pair, &sol.q1, &sol.q2, 1e-9).0);
    }
    assert!(worst <= 1e-9, "worst complementarity residual {worst}");
}

#[test]
fn every_label_reaches_an_equilibrium() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let pair = CostMatrixPair::new(random_matrix(4, 3, &mut rng), random_matrix(4, 3, &mut rng)).unwrap();
        for label in 0..7 {
            let sol = bmg_with_label(&pair, label).unwrap();
            assert!(verify_equilibrium(&pair, &sol.q1, &sol.q2, 1e-9).0);
        }
    }
}

#[test]
fn integer_games_match_support_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..150 {
        let n1 = 1 + trial % 4;
        let n2 = 1 + (trial / 4) % 4;
        let pair = CostMatrixPair::new(integer_matrix(n1, n2, &mut rng), integer_matrix(n1, n2, &mut rng)).unwrap();
        let sol = bmg(&pair).unwrap();
        let (ok, worst) = verify_equilibrium(&pair, &sol.q1, &sol.q2, 1e-9);
        assert!(ok, "violation {worst}");
        let supports = enumerate_equilibrium_supports(&pair);
        assert!(
            supports.contains(&(sol.support1.clone(), sol.support2.clone())),
            "support {:?}/{:?} not among {:?}",
            sol.support1,
            sol.support2,
            supports
        );
    }
}

#[test]
fn zero_sum_value_matches_linear_program() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..200 {
        let (n1, n2) = (1 + trial % 5, 1 + (trial / 5) % 5);
        let a = random_matrix(n1, n2, &mut rng);
        let sol = bmg(&CostMatrixPair::zero_sum(a.clone()).unwrap()).unwrap();
        let value = sol.q1.dot(&(&a * &sol.q2));
        let lp = minimax_value(&a);
        assert!((value - lp).abs() < 1e-7, "{value} vs {lp}");
    }
}

#[test]
fn determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pair = CostMatrixPair::new(random_matrix(5, 5, &mut rng), random_matrix(5, 5, &mut rng)).unwrap();
    let a = bmg(&pair).unwrap();
    let b = bmg(&pair).unwrap();
    assert_eq!(a.q1.as_slice(), b.q1.as_slice());
    assert_eq!(a.q2.as_slice(), b.q2.as_slice());
    assert_eq!(a.p1.as_slice(), b.p1.as_slice());
}

fn fd_vjp_error(pair: &CostMatrixPair, q1_bar: &DVector<f64>, q2_bar: &DVector<f64>) -> Option<f64> {
    let sol = bmg(pair).ok()?;
    if !sol.strictly_complementary {
        return None;
    }
    let (a_bar, b_bar) = bmg_vjp(pair, &sol, q1_bar, q2_bar).ok()?;
    let objective = |p: &CostMatrixPair| {
        let s = bmg(p).unwrap();
        (s.q1.dot(q1_bar) + s.q2.dot(q2_bar), s.support1, s.support2)
    };
    let h = 1e-7;
    let (n1, n2) = pair.shape();
    let mut worst: f64 = 0.0;
    for which in 0..2 {
        for i in 0..n1 {
            for j in 0..n2 {
                let mut plus = pair.clone();
                let mut minus = pair.clone();
                let (mp, mm) = if which == 0 { (&mut plus.a, &mut minus.a) } else { (&mut plus.b, &mut minus.b) };
                mp[(i, j)] += h;
                mm[(i, j)] -= h;
                let (fp, s1p, s2p) = objective(&plus);
                let (fm, s1m, s2m) = objective(&minus);
                if s1p != sol.support1 || s1m != sol.support1 || s2p != sol.support2 || s2m != sol.support2 {
                    return None;
                }
                let fd = (fp - fm) / (2.0 * h);
                let analytic = if which == 0 { a_bar[(i, j)] } else { b_bar[(i, j)] };
                worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-2));
            }
        }
    }
    Some(worst)
}

#[test]
fn vjp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0;
    let mut mixed = 0;
    while checked < 60 {
        let pair = CostMatrixPair::new(random_matrix(3, 3, &mut rng), random_matrix(3, 3, &mut rng)).unwrap();
        let q1_bar = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let q2_bar = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        if let Some(err) = fd_vjp_error(&pair, &q1_bar, &q2_bar) {
            assert!(err <= 1e-5, "relative error {err}");
            checked += 1;
            if bmg(&pair).unwrap().support1.len() > 1 {
                mixed += 1;
            }
        }
    }
    assert!(mixed >= 10, "only {mixed} mixed equilibria exercised");
}

#[test]
fn vjp_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let pair = CostMatrixPair::new(random_matrix(3, 3, &mut rng), random_matrix(3, 3, &mut rng)).unwrap();
        let sol = bmg(&pair).unwrap();
        let zero = DVector::zeros(3);
        let (a, b) = bmg_vjp(&pair, &sol, &zero, &zero).unwrap();
        assert_eq!(a.amax(), 0.0);
        assert_eq!(b.amax(), 0.0);
        // q₁ depends on B only and q₂ on A only.
        let bar = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let (a, _) = bmg_vjp(&pair, &sol, &bar, &zero).unwrap();
        assert_eq!(a.amax(), 0.0);
        let (_, b) = bmg_vjp(&pair, &sol, &zero, &bar).unwrap();
        assert_eq!(b.amax(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn shift_invariance(seed in 0u64..100_000, alpha in -10.0f64..10.0, beta in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, n2) = (rng.random_range(1..5), rng.random_range(1..5));
        let pair = CostMatrixPair::new(random_matrix(n1, n2, &mut rng), random_matrix(n1, n2, &mut rng)).unwrap();
        let shifted = CostMatrixPair::new(pair.a.add_scalar(alpha), pair.b.add_scalar(beta)).unwrap();
        let s = bmg(&pair).unwrap();
        let t = bmg(&shifted).unwrap();
        prop_assert!((&s.q1 - &t.q1).amax() <= 1e-9);
        prop_assert!((&s.q2 - &t.q2).amax() <= 1e-9);
    }

    #[test]
    fn output_is_an_equilibrium(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, n2) = (rng.random_range(1..7), rng.random_range(1..7));
        let pair = CostMatrixPair::new(random_matrix(n1, n2, &mut rng), random_matrix(n1, n2, &mut rng)).unwrap();
        let s = bmg(&pair).unwrap();
        prop_assert!(verify_equilibrium(&pair, &s.q1, &s.q2, 1e-9).0);
        prop_assert!(s.complementarity_residual <= 1e-9);
    }
}
