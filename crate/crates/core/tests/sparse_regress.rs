use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weak_sde::sparse_regress::{
    fold_assignment, kkt_violation, lasso, lasso_cv_grouped, ols_on_support, solve_pipeline, LassoConfig,
};
use weak_sde::weak_system::{stack_systems, Response, TrajectorySystem, WeakSystem};

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0))
}

fn unit_columns(mut a: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in a.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    a
}

/// Synthetic grouped system with `y = A c` plus optional noise.
fn synthetic(seed: u64, groups: usize, rows: usize, coeffs: &[f64], noise: f64) -> WeakSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = coeffs.len();
    let c = DVector::from_column_slice(coeffs);
    let blocks: Vec<TrajectorySystem> = (0..groups)
        .map(|_| {
            let a = random_matrix(&mut rng, rows, k);
            let b = &a * &c + DVector::from_fn(rows, |_, _| noise * rng.random_range(-1.0..1.0));
            let q = DVector::from_element(rows, 1.0);
            TrajectorySystem { a, b, q }
        })
        .collect();
    stack_systems(&blocks, 0.01).unwrap()
}

#[test]
fn tiny_lambda_matches_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = unit_columns(random_matrix(&mut rng, 50, 4));
    let y = DVector::from_fn(50, |_, _| rng.random_range(-1.0..1.0));
    let cfg = LassoConfig { tol: 1e-13, ..LassoConfig::default() };
    let fit = lasso(&a, &y, 1e-10, &cfg, None).unwrap();
    assert!(fit.converged);
    let ols = ols_on_support(&a, &y, &[0, 1, 2, 3]).unwrap();
    for (l, o) in fit.coeffs.iter().zip(&ols) {
        assert!((l - o).abs() < 1e-6, "{l} vs {o}");
    }
}

#[test]
fn noiseless_three_sparse_recovery() {
    let truth = [0.0, 1.5, 0.0, -0.8, 0.0, 2.0];
    let ws = synthetic(7, 30, 10, &truth, 0.0).normalize_columns().unwrap();
    let model = solve_pipeline(&ws, Response::Drift, &LassoConfig::default()).unwrap();
    assert_eq!(model.support, vec![1, 3, 5]);
    for (est, t) in model.coeffs.iter().zip(truth) {
        assert!((est - t).abs() < 1e-10, "{est} vs {t}");
    }
    assert_eq!(model.cv_path.len(), 60);
    assert!(model.all_converged);
    let names: Vec<&str> = model.stage_log.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(&names[..2], ["lasso", "debias"]);
}

#[test]
fn warm_starts_agree_with_cold_starts() {
    let ws = synthetic(3, 10, 10, &[0.3, -1.0, 0.0, 0.5], 0.3).normalize_columns().unwrap();
    let cfg = LassoConfig::default();
    let (a, y) = (ws.a_stack(), ws.b_stack());
    let mut warm: Option<Vec<f64>> = None;
    for &lambda in &cfg.lambda_grid {
        let w = lasso(a, y, lambda, &cfg, warm.as_deref()).unwrap();
        let c = lasso(a, y, lambda, &cfg, None).unwrap();
        for (p, q) in w.coeffs.iter().zip(&c.coeffs) {
            assert!((p - q).abs() <= 10.0 * cfg.tol, "lambda {lambda}: {p} vs {q}");
        }
        warm = Some(w.coeffs);
    }
}

#[test]
fn cv_path_and_refit_are_consistent() {
    let ws = synthetic(5, 25, 8, &[0.0, 2.0, -1.0], 0.05).normalize_columns().unwrap();
    let cfg = LassoConfig::default();
    let model = lasso_cv_grouped(&ws, Response::Drift, &cfg).unwrap();
    let best = model.cv_path.iter().map(|p| p.mean_mse).fold(f64::INFINITY, f64::min);
    let first_best = model.cv_path.iter().find(|p| p.mean_mse == best).unwrap();
    assert_eq!(first_best.lambda, model.lambda_star);
    assert!(model.cv_path.iter().all(|p| p.fold_mse.len() == 5));
    let gram = ws.a_stack().tr_mul(ws.a_stack());
    let aty = ws.a_stack().tr_mul(ws.b_stack());
    assert!(kkt_violation(&gram, &aty, model.normalized_coeffs(), model.lambda_star) <= 10.0 * cfg.tol);
}

#[test]
fn benchmark_folds_hold_24_trajectories() {
    let folds = fold_assignment(120, 5);
    for f in 0..5 {
        assert_eq!(folds.iter().filter(|&&x| x == f).count(), 24);
    }
}

#[test]
fn too_few_groups_is_an_error() {
    let ws = synthetic(2, 3, 10, &[1.0, 0.0], 0.0).normalize_columns().unwrap();
    assert!(lasso_cv_grouped(&ws, Response::Drift, &LassoConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn folds_partition_groups(n in 2usize..300, k in 2usize..10) {
        prop_assume!(k <= n);
        let folds = fold_assignment(n, k);
        prop_assert!(folds.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
        prop_assert_eq!(folds[0], 0);
        prop_assert_eq!(folds[n - 1], k - 1);
        let sizes: Vec<usize> = (0..k).map(|f| folds.iter().filter(|&&x| x == f).count()).collect();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(*lo >= 1 && hi - lo <= 1);
    }

    #[test]
    fn kkt_certificate(seed in 0u64..10_000, log_lambda in -6.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = unit_columns(random_matrix(&mut rng, 40, 5));
        let y = DVector::from_fn(40, |_, _| rng.random_range(-1.0..1.0));
        let cfg = LassoConfig::default();
        let lambda = 10f64.powf(log_lambda);
        let fit = lasso(&a, &y, lambda, &cfg, None).unwrap();
        prop_assert!(fit.converged);
        let v = kkt_violation(&a.tr_mul(&a), &a.tr_mul(&y), &fit.coeffs, lambda);
        prop_assert!(v <= 10.0 * cfg.tol, "violation {}", v);
    }

    #[test]
    fn pipeline_is_scale_equivariant(seed in 0u64..1000, s in 0.1f64..20.0) {
        let truth = [0.0, 1.0, 0.0, -0.5, 0.0];
        let ws = synthetic(seed, 10, 10, &truth, 0.05).normalize_columns().unwrap();
        let blocks: Vec<TrajectorySystem> = (0..10)
            .map(|r| {
                let rows = r * 10..(r + 1) * 10;
                let a = ws.a_stack().rows(rows.start, 10).into_owned();
                let b = ws.b_stack().rows(rows.start, 10) * s;
                TrajectorySystem { a, b, q: DVector::from_element(10, 1.0) }
            })
            .collect();
        let scaled = stack_systems(&blocks, 0.01).unwrap().normalize_columns().unwrap();
        let cfg = LassoConfig::default();
        let scaled_cfg = LassoConfig { lambda_grid: cfg.lambda_grid.iter().map(|l| l * s).collect(), ..cfg.clone() };
        let base = solve_pipeline(&ws, Response::Drift, &cfg).unwrap();
        let other = solve_pipeline(&scaled, Response::Drift, &scaled_cfg).unwrap();
        prop_assert_eq!(&base.support, &other.support);
        for (p, q) in base.normalized_coeffs().iter().zip(other.normalized_coeffs()) {
            prop_assert!((p * s - q).abs() <= 1e-8 * q.abs().max(1.0), "{} vs {}", p * s, q);
        }
    }
}
