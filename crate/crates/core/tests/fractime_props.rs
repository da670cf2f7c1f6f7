use std::f64::consts::PI;

use approx::assert_relative_eq;
use fracphase::fractime::*;
use fracphase::spectral::{Field, PeriodicGrid};
use proptest::prelude::*;
use statrs::function::gamma::gamma;

/// `e^{x²} erfc(x)`: Maclaurin series of erf for small x, Lentz continued
/// fraction for the tail.
fn scaled_erfc(x: f64) -> f64 {
    if x < 1.5 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        (x * x).exp() * (1.0 - 2.0 / PI.sqrt() * sum)
    } else {
        // erfc(x) e^{x²} √π = 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for k in 1..500 {
            let a = k as f64 / 2.0;
            d = x + a * d;
            d = if d.abs() < tiny { tiny } else { d };
            c = x + a / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 / (f * PI.sqrt())
    }
}

#[test]
fn mittag_leffler_half_matches_erfc_identity() {
    assert_relative_eq!(scaled_erfc(1.0), 0.427_583_576_155_807, epsilon = 1e-14);
    assert_relative_eq!(mittag_leffler(0.5, -1.0).unwrap(), 0.42758, epsilon = 1e-5);
    assert_relative_eq!(mittag_leffler(0.5, -1.0).unwrap(), scaled_erfc(1.0), epsilon = 1e-13);
    assert_relative_eq!(mittag_leffler(1.0, -1.0).unwrap(), 0.36788, epsilon = 1e-5);
}

proptest! {
    #[test]
    fn mittag_leffler_half_over_range(x in 0.0f64..50.0) {
        let v = mittag_leffler(0.5, -x).unwrap();
        prop_assert!((v - scaled_erfc(x)).abs() < 1e-12, "x = {x}: {v} vs {}", scaled_erfc(x));
    }

    #[test]
    fn mittag_leffler_is_completely_monotone_in_x(alpha in 0.1f64..1.0, x in 0.0f64..40.0) {
        let a = mittag_leffler(alpha, -x).unwrap();
        let b = mittag_leffler(alpha, -x - 0.5).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(b < a);
    }

    #[test]
    fn caputo_of_constant_is_zero(alpha in 0.05f64..0.99, c in -5.0f64..5.0, n in 2usize..64, graded in any::<bool>()) {
        let spacing = if graded { Spacing::Graded(default_grading(alpha)) } else { Spacing::Uniform };
        let tg = TimeGrid::new(1.0, n, spacing).unwrap();
        let d = caputo_derivative_series(&vec![c; n + 1], alpha, &tg).unwrap();
        prop_assert!(d.iter().all(|v| v.abs() <= 1e-14));
    }

    #[test]
    fn l1_weights_positive_and_telescoping(alpha in 0.05f64..0.99, n in 1usize..200, t_final in 0.1f64..10.0) {
        let tg = TimeGrid::uniform(t_final, n).unwrap();
        let w = l1_weights(alpha, &tg, n);
        prop_assert_eq!(w.len(), n);
        prop_assert!(w.iter().all(|&a| a > 0.0));
        prop_assert!(w.windows(2).all(|p| p[1] > p[0]));
        let tau = t_final / n as f64;
        let sum: f64 = w.iter().map(|a| a * tau).sum::<f64>() * gamma(2.0 - alpha);
        let target = t_final.powf(1.0 - alpha);
        prop_assert!((sum - target).abs() <= 1e-12 * target, "{sum} vs {target}");
    }

    #[test]
    fn cahn_hilliard_conserves_mass(seed in 0u64..1000, alpha in 0.2f64..0.9) {
        use rand::{Rng, SeedableRng};
        let grid = PeriodicGrid::new(1, 32, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let phi0 = Field::new(grid, (0..32).map(|_| 0.2 + 0.5 * (2.0 * rng.gen::<f64>() - 1.0)).collect()).unwrap();
        let p = ModelParams::new(alpha, 0.1, 1.0, Operator::CahnHilliard).unwrap();
        let traj = run(phi0, &p, &TimeGrid::uniform(0.05, 20).unwrap()).unwrap();
        let m0 = traj.masses()[0];
        prop_assert!(traj.masses().iter().all(|m| (m - m0).abs() <= 1e-10 * m0.abs().max(1.0)));
    }
}

#[test]
fn l1_reproduces_linear_function() {
    for &alpha in &[0.2, 0.5, 0.8] {
        for spacing in [Spacing::Uniform, Spacing::Graded(default_grading(alpha))] {
            let tg = TimeGrid::new(1.0, 64, spacing).unwrap();
            let d = caputo_derivative_series(tg.nodes(), alpha, &tg).unwrap();
            for (t, v) in tg.nodes()[1..].iter().zip(&d) {
                assert_relative_eq!(*v, t.powf(1.0 - alpha) / gamma(2.0 - alpha), epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn l1_order_on_quadratic() {
    let alpha = 0.5;
    let errs: Vec<f64> = [128usize, 256, 512, 1024]
        .iter()
        .map(|&n| {
            let tg = TimeGrid::uniform(1.0, n).unwrap();
            let u: Vec<f64> = tg.nodes().iter().map(|t| t * t).collect();
            let d = caputo_derivative_series(&u, alpha, &tg).unwrap();
            tg.nodes()[1..]
                .iter()
                .zip(&d)
                .map(|(t, v)| (v - 2.0 * t.powf(2.0 - alpha) / gamma(3.0 - alpha)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.4, "order {order}");
    }
}

fn smooth_run(n_steps: usize, alpha: f64, linearization: Linearization) -> Trajectory {
    let grid = PeriodicGrid::new(1, 64, 2.0 * PI).unwrap();
    let p = ModelParams::new(alpha, 0.5, 1.0, Operator::AllenCahn)
        .unwrap()
        .with_linearization(linearization);
    let tg = TimeGrid::new(0.5, n_steps, Spacing::Graded(default_grading(alpha))).unwrap();
    let phi0 = Field::from_fn(grid, |x, _| 0.5 * x.cos() + 0.2 * (2.0 * x).sin()).unwrap();
    run(phi0, &p, &tg).unwrap()
}

/// `max_k ||φ_N(t_k) - φ_{2N}(t_k)||`; graded meshes nest, so node `k` on
/// `N` steps is node `2k` on `2N`.
fn max_gap(coarse: &Trajectory, fine: &Trajectory) -> f64 {
    coarse
        .fields()
        .iter()
        .enumerate()
        .map(|(k, f)| f.difference(&fine.fields()[2 * k]).unwrap().l2_norm())
        .fold(0.0, f64::max)
}

fn richardson_orders(alpha: f64, linearization: Linearization, sizes: &[usize]) -> Vec<f64> {
    let runs: Vec<Trajectory> = sizes.iter().map(|&n| smooth_run(n, alpha, linearization)).collect();
    let gaps: Vec<f64> = runs.windows(2).map(|w| max_gap(&w[0], &w[1])).collect();
    gaps.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn nonlinear_self_convergence_order() {
    for &alpha in &[0.3_f64, 0.4, 0.5, 0.6, 0.7, 0.8] {
        let target = (2.0 - alpha).min(1.0 + alpha) - 0.2;
        for order in richardson_orders(alpha, Linearization::PredictorCorrector, &[64, 128, 256, 512]) {
            assert!(order >= target, "alpha {alpha}: order {order} < {target}");
        }
    }
}

#[test]
fn first_order_linearization_converges_at_first_order() {
    for order in richardson_orders(0.5, Linearization::FirstOrder, &[64, 128, 256]) {
        assert!(order > 0.8 && order < 1.3, "order {order}");
    }
}

#[test]
fn linearizations_agree_in_the_limit() {
    let a = smooth_run(512, 0.5, Linearization::FirstOrder);
    let b = smooth_run(512, 0.5, Linearization::SecondOrder);
    let c = smooth_run(512, 0.5, Linearization::PredictorCorrector);
    let (fa, fb, fc) = (a.last().unwrap(), b.last().unwrap(), c.last().unwrap());
    // first-order error at N = 512 is about 1e-3
    assert!(fa.difference(fc).unwrap().l2_norm() < 1e-2 * fc.l2_norm());
    assert!(fb.difference(fc).unwrap().l2_norm() < 1e-4 * fc.l2_norm());
}

#[test]
fn linear_mode_matches_mittag_leffler_on_graded_mesh() {
    let alpha = 0.5;
    let grid = PeriodicGrid::new(1, 16, 2.0 * PI).unwrap();
    let p = ModelParams::new(alpha, 1.0, 1.0, Operator::AllenCahn)
        .unwrap()
        .with_potential(Potential::Zero)
        .with_stabilizer(0.0)
        .unwrap();
    let exact = mittag_leffler(alpha, -1.0).unwrap();
    let err = |n: usize| {
        let tg = TimeGrid::new(1.0, n, Spacing::Graded(default_grading(alpha))).unwrap();
        let phi0 = Field::from_fn(grid, |x, _| x.cos()).unwrap();
        let traj = run(phi0, &p, &tg).unwrap();
        traj.last()
            .unwrap()
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - exact * grid.coordinates(i)[0].cos()).abs())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (err(128), err(256));
    assert!(e2 < 1e-4);
    assert!((e1 / e2).log2() >= 1.3);
}

#[test]
fn near_unit_order_tracks_gradient_flow() {
    use rand::{Rng, SeedableRng};
    let grid = PeriodicGrid::new(1, 64, 1.0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let phi0 = Field::new(grid, (0..64).map(|_| 0.5 * (2.0 * rng.gen::<f64>() - 1.0)).collect()).unwrap();
    let p = ModelParams::new(0.999, 0.1, 1.0, Operator::AllenCahn).unwrap();
    let tg = TimeGrid::uniform(0.5, 500).unwrap();
    let a = run(phi0.clone(), &p, &tg).unwrap();
    let b = run_gradient_flow(phi0, &p, &tg).unwrap();
    let (fa, fb) = (a.last().unwrap(), b.last().unwrap());
    assert!(fa.difference(fb).unwrap().l2_norm() <= 0.02 * fb.l2_norm());
}

#[test]
fn two_dimensional_run_dissipates() {
    let grid = PeriodicGrid::new(2, 32, 2.0 * PI).unwrap();
    let phi0 = Field::from_fn(grid, |x, y| 0.3 * (x.cos() * (2.0 * y).sin())).unwrap();
    for op in [Operator::AllenCahn, Operator::CahnHilliard] {
        let p = ModelParams::new(0.6, 0.2, 1.0, op).unwrap();
        let traj = run(phi0.clone(), &p, &TimeGrid::uniform(0.5, 50).unwrap()).unwrap();
        let e = traj.energies();
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
