use nalgebra::DVector;
use proptest::prelude::*;
use weak_sde::features::{FeatureLibrary, KernelGrid};
use weak_sde::sde_sim::{euler_maruyama, make_multiplicative, make_ou, SimConfig};
use weak_sde::sparse_regress::ols_on_support;
use weak_sde::weak_system::{
    build_temporal_system, build_trajectory_system, build_weak_system, stack_systems, TrajectorySystem,
};
use weak_sde::Ensemble;

/// Plain triple loop; returns each entry with the sum of absolute terms so
/// cancellation-heavy entries are compared on the right scale.
fn naive(traj: &[f64], centers: &[f64], h: f64, deg: usize, dt: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &c in centers {
        let kern = |x: f64| (-(x - c) * (x - c) / (2.0 * h * h)).exp();
        for k in 0..=deg {
            let (mut s, mut abs) = (0.0, 0.0);
            for n in 0..traj.len() - 1 {
                let mut f = 1.0;
                for _ in 0..k {
                    f *= traj[n];
                }
                let t = kern(traj[n]) * f * dt;
                s += t;
                abs += t.abs();
            }
            out.push((s, abs));
        }
        let (mut b, mut babs, mut q) = (0.0, 0.0, 0.0);
        for n in 0..traj.len() - 1 {
            let dx = traj[n + 1] - traj[n];
            b += kern(traj[n]) * dx;
            babs += (kern(traj[n]) * dx).abs();
            q += kern(traj[n]) * dx * dx;
        }
        out.push((b, babs));
        out.push((q, q));
    }
    out
}

fn ou_ensemble(n_traj: usize, n_steps: usize, seed: u64) -> Ensemble {
    let cfg = SimConfig { n_traj, n_steps, master_seed: seed, ..SimConfig::default() };
    euler_maruyama(&make_ou(1.0, 0.7).unwrap(), &cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn builder_matches_triple_loop(
        steps in prop::collection::vec(-0.2f64..0.2, 100),
        x0 in -2.0f64..2.0,
        m in 2usize..12,
        h in 0.1f64..0.8,
        deg in 0usize..5,
    ) {
        let mut traj = vec![x0];
        for s in &steps {
            traj.push(traj[traj.len() - 1] + s);
        }
        let grid = KernelGrid::uniform(-2.5, 2.5, m, h).unwrap();
        let lib = FeatureLibrary::new(deg);
        let dt = 0.002;
        let sys = build_trajectory_system(&traj, &grid, &lib, dt).unwrap();
        let reference = naive(&traj, grid.centers(), h, deg, dt);
        let k = deg + 1;
        for j in 0..m {
            let row = &reference[j * (k + 2)..(j + 1) * (k + 2)];
            let got = (0..k).map(|i| sys.a[(j, i)]).chain([sys.b[j], sys.q[j]]);
            for (g, (want, scale)) in got.zip(row) {
                prop_assert!((g - want).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE), "{g} vs {want}");
            }
        }
    }

    #[test]
    fn normalization_does_not_change_ols(seed in 0u64..1000) {
        let ens = ou_ensemble(3, 400, seed);
        let grid = KernelGrid::uniform(-2.5, 2.5, 12, 0.4).unwrap();
        let lib = FeatureLibrary::new(2);
        let raw = build_weak_system(&ens, &grid, &lib).unwrap();
        let direct = ols_on_support(raw.a_stack(), raw.b_stack(), &[0, 1, 2]).unwrap();
        let norm = raw.normalize_columns().unwrap();
        let solved = ols_on_support(norm.a_stack(), norm.b_stack(), &[0, 1, 2]).unwrap();
        let back = norm.to_raw(&solved);
        for (a, b) in back.iter().zip(&direct) {
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }
        for k in 0..3 {
            prop_assert!((norm.a_stack().column(k).norm() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn stacking_is_concatenation() {
    let ens = ou_ensemble(4, 300, 1);
    let grid = KernelGrid::uniform(-2.5, 2.5, 10, 0.3).unwrap();
    let lib = FeatureLibrary::new(4);
    let ws = build_weak_system(&ens, &grid, &lib).unwrap();
    assert_eq!(ws.a_stack().nrows(), 40);
    for r in 0..4 {
        let sys = build_trajectory_system(ens.trajectory(r), &grid, &lib, ens.dt).unwrap();
        assert_eq!(ws.a_stack().rows(10 * r, 10), sys.a.rows(0, 10));
        assert_eq!(ws.b_stack().rows(10 * r, 10), sys.b.rows(0, 10));
        assert_eq!(ws.q_stack().rows(10 * r, 10), sys.q.rows(0, 10));
        assert!(ws.group_of_row()[10 * r..10 * (r + 1)].iter().all(|&g| g == r));
    }
    assert!(ws.q_stack().iter().all(|&q| q >= 0.0));
    assert_eq!(ws.column_scales(), &[1.0; 5]);
}

#[test]
fn benchmark_stack_has_6000_rows() {
    let ens = ou_ensemble(120, 20, 42);
    let grid = KernelGrid::uniform(-2.5, 2.5, 50, 0.22).unwrap();
    let ws = build_weak_system(&ens, &grid, &FeatureLibrary::new(4)).unwrap();
    assert_eq!(ws.a_stack().shape(), (6000, 5));
    assert_eq!(ws.n_groups(), 120);
}

#[test]
fn repeated_trajectory_gives_same_ols() {
    let ens = ou_ensemble(1, 2000, 9);
    let grid = KernelGrid::uniform(-2.5, 2.5, 20, 0.3).unwrap();
    let lib = FeatureLibrary::new(2);
    let block = build_trajectory_system(ens.trajectory(0), &grid, &lib, ens.dt).unwrap();
    let one = stack_systems(std::slice::from_ref(&block), ens.dt).unwrap();
    let many = stack_systems(&vec![block.clone(); 7], ens.dt).unwrap();
    let c1 = ols_on_support(one.a_stack(), one.b_stack(), &[0, 1, 2]).unwrap();
    let c7 = ols_on_support(many.a_stack(), many.b_stack(), &[0, 1, 2]).unwrap();
    for (a, b) in c1.iter().zip(&c7) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
    }
    assert_eq!(one.a_stack(), &block.a);
}

#[test]
fn zero_drift_correction_leaves_q() {
    let ens = ou_ensemble(3, 500, 2);
    let grid = KernelGrid::uniform(-2.5, 2.5, 10, 0.3).unwrap();
    let lib = FeatureLibrary::new(4);
    let ws = build_weak_system(&ens, &grid, &lib).unwrap().normalize_columns().unwrap();
    let corrected = ws.bias_correct_q(&ens, &grid, &lib, &[0.0; 5]).unwrap();
    assert_eq!(corrected.q_stack(), ws.q_stack());
    assert!(corrected.is_q_corrected());
    assert!(ws.bias_correct_q(&ens, &grid, &lib, &[0.0; 3]).is_err());
}

#[test]
fn correction_is_small_for_ou_and_bounded() {
    let ens = ou_ensemble(20, 5000, 4);
    let grid = KernelGrid::uniform(-2.5, 2.5, 50, 0.22).unwrap();
    let lib = FeatureLibrary::new(4);
    let ws = build_weak_system(&ens, &grid, &lib).unwrap();
    let corrected = ws.bias_correct_q(&ens, &grid, &lib, &[0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
    let total_q: f64 = ws.q_stack().sum();
    let total_c: f64 = corrected.q_correction().unwrap().iter().sum();
    // b²Δt² against aΔt per step: a few Δt in relative size
    let share = total_c / total_q;
    assert!(share > 0.0 && share < 10.0 * ens.dt, "correction share {share}");
    for ((q, c), corr) in ws.q_stack().iter().zip(corrected.q_stack()).zip(corrected.q_correction().unwrap()) {
        assert!(*corr >= 0.0);
        assert!(*c >= -corr);
        assert!((q - c - corr).abs() <= 1e-15 * q.abs().max(1.0));
    }
}

#[test]
fn multiplicative_correction_lowers_x2_term() {
    let spec = make_multiplicative();
    let cfg = SimConfig { n_traj: 40, n_steps: 20_000, master_seed: 7, ..SimConfig::default() };
    let ens = euler_maruyama(&spec, &cfg).unwrap();
    let grid = KernelGrid::uniform(-2.8, 2.8, 50, 0.27).unwrap();
    let lib = FeatureLibrary::new(4);
    let ws = build_weak_system(&ens, &grid, &lib).unwrap();
    let corrected = ws.bias_correct_q(&ens, &grid, &lib, spec.drift_coeffs()).unwrap();
    let raw = ols_on_support(ws.a_stack(), ws.q_stack(), &[0, 2]).unwrap();
    let fixed = ols_on_support(corrected.a_stack(), corrected.q_stack(), &[0, 2]).unwrap();
    // the drift-squared share of the x² coefficient is b²Δt/x² = 4Δt
    let shift = (raw[2] - fixed[2]) / ens.dt;
    assert!((shift - 4.0).abs() < 0.4, "x^2 shift {shift}");
    assert!((raw[0] - fixed[0]).abs() < 0.1 * ens.dt);
}

#[test]
fn unbiased_on_average_over_ensembles() {
    let grid = KernelGrid::uniform(-2.5, 2.5, 8, 0.5).unwrap();
    let lib = FeatureLibrary::new(4);
    let truth = DVector::from_column_slice(&[0.0, -1.0, 0.0, 0.0, 0.0]);
    let n_ens = 240;
    let m = grid.len();
    let residuals: Vec<Vec<f64>> = (0..n_ens)
        .map(|s| {
            let ens = ou_ensemble(4, 1000, 10_000 + s);
            let ws = build_weak_system(&ens, &grid, &lib).unwrap();
            let res = ws.b_stack() - ws.a_stack() * &truth;
            // per-kernel sum over the ensemble's trajectories
            (0..m).map(|j| (0..4).map(|r| res[r * m + j]).sum()).collect()
        })
        .collect();
    for j in 0..m {
        let v: Vec<f64> = residuals.iter().map(|r| r[j]).collect();
        let mean = v.iter().sum::<f64>() / n_ens as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_ens as f64 - 1.0)).sqrt();
        let se = sd / (n_ens as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se, "row {j}: mean {mean}, se {se}");
    }
}

#[test]
fn deterministic_dynamics_satisfy_both_systems() {
    // σ = 0 Euler scheme for the double well
    let dt = 0.002;
    let mut traj = vec![2.0];
    for _ in 0..5000 {
        let x: f64 = traj[traj.len() - 1];
        traj.push(x + (x - x * x * x) * dt);
    }
    let truth = DVector::from_column_slice(&[0.0, 1.0, 0.0, -1.0, 0.0]);
    let lib = FeatureLibrary::new(4);
    let grid = KernelGrid::uniform(-2.5, 2.5, 50, 0.22).unwrap();
    let sys: TrajectorySystem = build_trajectory_system(&traj, &grid, &lib, dt).unwrap();
    let spatial = &sys.b - &sys.a * &truth;
    assert!(spatial.amax() <= 1e-12 * sys.b.amax().max(1.0), "{}", spatial.amax());
    let (a, b) = build_temporal_system(&traj, 10, &lib, dt).unwrap();
    let temporal: DVector<f64> = &b - &a * &truth;
    assert!(temporal.amax() <= 1e-12 * b.amax().max(1.0), "{}", temporal.amax());
}
