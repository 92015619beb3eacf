use nalgebra::DMatrix;
use sigstop::dual::{
    assemble_lp, build_martingale_basis, evaluate_upper, payoff_at_dates, solve_lp, train_dual,
    LpInstance, LpMethod, LpOptions,
};
use sigstop::features::BasisSpec;
use sigstop::models::rng::PathRng;
use sigstop::models::{simulate_fbm, FbmConfig, PathBatch};
use sigstop::primal::{evaluate_policy, fit_policy, ExerciseData, RegressionPolicy};
use sigstop::signature::uniform_grid;

fn batch(h: f64, n_paths: usize, seed: u64) -> PathBatch {
    simulate_fbm(&FbmConfig {
        hurst: h,
        horizon: 1.0,
        steps: 20,
        n_paths,
        seed,
    })
    .unwrap()
}

fn random_lp(rng: &mut PathRng, m: usize, nd: usize, cols: usize) -> LpInstance {
    let z: Vec<f64> = (0..m * nd).map(|_| rng.uniform()).collect();
    let mut g = DMatrix::zeros(m * nd, cols);
    for r in 0..m * nd {
        if r % nd != 0 {
            for c in 0..cols {
                g[(r, c)] = rng.normal();
            }
        }
    }
    LpInstance::new(m, nd, z, g).unwrap()
}

#[test]
fn policy_fit_is_deterministic_and_round_trips() {
    let exercise = uniform_grid(1.0, 5).unwrap();
    let train = batch(0.3, 2000, 1);
    let basis = BasisSpec::signature(3);
    let data = ExerciseData::build(&train, &basis, &exercise).unwrap();
    let a = fit_policy(&data, &basis, &exercise, false).unwrap();
    let b = fit_policy(&data, &basis, &exercise, false).unwrap();
    assert_eq!(a.policy.to_json(), b.policy.to_json());
    let back = RegressionPolicy::from_json(&a.policy.to_json()).unwrap();
    assert_eq!(back, a.policy);

    let fresh = batch(0.3, 2000, 2);
    let x = evaluate_policy(&a.policy, &fresh).unwrap();
    let y = evaluate_policy(&back, &fresh).unwrap();
    assert_eq!(x.estimate, y.estimate);
    assert!(x.stderr >= 0.0);
}

#[test]
fn tampered_policy_is_rejected() {
    let exercise = uniform_grid(1.0, 4).unwrap();
    let train = batch(0.4, 500, 3);
    let basis = BasisSpec::signature(2);
    let data = ExerciseData::build(&train, &basis, &exercise).unwrap();
    let json = fit_policy(&data, &basis, &exercise, false)
        .unwrap()
        .policy
        .to_json();
    assert!(
        RegressionPolicy::from_json(&json.replace("sigstop-regression-policy", "other")).is_err()
    );
    let mut policy = RegressionPolicy::from_json(&json).unwrap();
    policy.exercise_times[1] = 0.123;
    assert!(evaluate_policy(&policy, &train).is_err());
}

#[test]
fn brownian_stopping_value_is_zero_up_to_noise() {
    // X is a martingale, so no stopping rule beats stopping at once.
    let exercise = uniform_grid(1.0, 10).unwrap();
    let basis = BasisSpec::signature(3);
    let data = ExerciseData::build(&batch(0.5, 5000, 4), &basis, &exercise).unwrap();
    let fit = fit_policy(&data, &basis, &exercise, false).unwrap();
    let lower = evaluate_policy(&fit.policy, &batch(0.5, 20000, 5)).unwrap();
    assert!(
        lower.estimate <= 4.0 * lower.stderr + 1e-12,
        "{}",
        lower.estimate
    );

    let (coeffs, sol) = train_dual(
        &batch(0.5, 500, 6),
        &basis,
        &exercise,
        &LpOptions::default(),
    )
    .unwrap();
    assert!(sol.objective.abs() < 1e-6);
    let upper = evaluate_upper(&coeffs, &batch(0.5, 5000, 7)).unwrap();
    assert!(upper.estimate.abs() < 1e-6, "{}", upper.estimate);
}

#[test]
fn trained_objective_beats_zero_martingale() {
    let exercise = uniform_grid(1.0, 5).unwrap();
    let train = batch(0.2, 300, 8);
    let basis = BasisSpec::signature(2);
    let mb = build_martingale_basis(&train, &basis, &exercise).unwrap();
    let lp = assemble_lp(&payoff_at_dates(&train, &exercise).unwrap(), &mb).unwrap();
    let at_zero = lp.objective(&vec![0.0; lp.n_cols()]);
    let sol = solve_lp(&lp, &LpOptions::default()).unwrap();
    assert!(sol.objective <= at_zero + 1e-12);
    assert!(sol.converged);
}

#[test]
fn simplex_and_interior_point_agree() {
    let mut rng = PathRng::new(17, 0, 0);
    for _ in 0..10 {
        let lp = random_lp(&mut rng, 8, 4, 3);
        let s = solve_lp(
            &lp,
            &LpOptions {
                method: LpMethod::Simplex,
                ..LpOptions::default()
            },
        )
        .unwrap();
        let i = solve_lp(
            &lp,
            &LpOptions {
                method: LpMethod::Ipm,
                ..LpOptions::default()
            },
        )
        .unwrap();
        assert!(
            (s.objective - i.objective).abs() < 1e-6,
            "{} vs {}",
            s.objective,
            i.objective
        );
        assert!((lp.objective(&s.lambda) - s.objective).abs() < 1e-12);
    }
}

#[test]
fn column_scaling_leaves_the_optimum_unchanged() {
    let mut rng = PathRng::new(18, 0, 0);
    let lp = random_lp(&mut rng, 20, 3, 2);
    let mut g = lp.g.clone();
    g.column_mut(1).scale_mut(1000.0);
    let scaled = LpInstance::new(lp.n_paths, lp.n_dates, lp.payoff.clone(), g).unwrap();
    for method in [LpMethod::Simplex, LpMethod::Ipm] {
        let opts = LpOptions {
            method,
            ..LpOptions::default()
        };
        let a = solve_lp(&lp, &opts).unwrap();
        let b = solve_lp(&scaled, &opts).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-6, "{method:?}");
    }
}

#[test]
fn martingale_columns_have_zero_mean() {
    let exercise = uniform_grid(1.0, 4).unwrap();
    let b = batch(0.25, 10_000, 9);
    let mb = build_martingale_basis(&b, &BasisSpec::signature(3), &exercise).unwrap();
    for (c, s) in mb.terminal_summaries().iter().enumerate() {
        assert!(
            s.mean.abs() <= 4.0 * s.stderr(),
            "column {c}: {} ± {}",
            s.mean,
            s.stderr()
        );
    }
    for i in 0..10 {
        for c in 0..mb.n_cols {
            assert_eq!(mb.value(i, 0, c), 0.0);
        }
    }
}

#[test]
fn lp_triplet_dump_lists_every_constraint() {
    let mut rng = PathRng::new(19, 0, 0);
    let lp = random_lp(&mut rng, 3, 2, 2);
    let mut out = Vec::new();
    lp.write_triplets(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("% sigstop-lp 1"));
    assert!(text.contains("dims 6 5"));
    assert_eq!(text.lines().filter(|l| l.starts_with("rhs ")).count(), 6);
    assert_eq!(text.lines().filter(|l| l.starts_with("obj ")).count(), 3);
}
