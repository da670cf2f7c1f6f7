use fracphase::energy::*;
use fracphase::fractime::*;
use fracphase::spectral::{Field, PeriodicGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use statrs::function::gamma::gamma;

/// Trajectory whose stored energy series is `e(t)` on a uniform grid.
fn synthetic(e: impl Fn(f64) -> f64, n: usize, t_final: f64) -> Trajectory {
    let grid = PeriodicGrid::new(1, 8, 1.0).unwrap();
    let tg = TimeGrid::uniform(t_final, n).unwrap();
    let mut traj = Trajectory::new(tg.clone());
    for &t in tg.nodes() {
        traj.push(Field::zeros(grid), e(t), 0.0);
    }
    traj
}

/// `∫₀¹ θ^m ω(θ) dθ` in closed form.
fn beta_moment(alpha: f64, m: f64) -> f64 {
    // B(α+m, 1-α) / B(α, 1-α)
    gamma(alpha + m) * gamma(1.0) / (gamma(alpha) * gamma(1.0 + m))
}

fn power_moment(alpha: f64, m: f64) -> f64 {
    alpha / (alpha + m)
}

fn random_run(seed: u64, alpha: f64, op: Operator, t_final: f64, n_steps: usize) -> (Trajectory, ModelParams) {
    let grid = PeriodicGrid::new(1, 32, 1.0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let phi0 = Field::new(grid, (0..32).map(|_| 0.5 * (2.0 * rng.gen::<f64>() - 1.0)).collect()).unwrap();
    let p = ModelParams::new(alpha, 0.1, 1.0, op).unwrap();
    let traj = run(phi0, &p, &TimeGrid::uniform(t_final, n_steps).unwrap()).unwrap();
    (traj, p)
}

#[test]
fn moments_oracle_sanity() {
    assert!((beta_moment(0.5, 1.0) - 0.5).abs() < 1e-14);
    assert!((beta_moment(0.3, 2.0) - 0.3 * 1.3 / 2.0).abs() < 1e-14);
    assert!((power_moment(0.5, 0.0) - 1.0).abs() < 1e-15);
}

#[test]
fn invalid_report_inputs() {
    let (traj, p) = random_run(1, 0.5, Operator::AllenCahn, 0.1, 8);
    let opts = ReportOptions {
        stride: 0,
        ..Default::default()
    };
    assert!(matches!(
        dissipation_report(&traj, &[], &p, &opts),
        Err(EnergyError::InvalidParameter(_))
    ));
    let short = synthetic(|t| t, 1, 1.0);
    assert!(matches!(
        weighted_energy_derivative_series(&short, &WeightFunction::beta(0.5), short.times()),
        Err(EnergyError::TooShort { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn beta_and_power_weights_have_unit_mass(alpha in 0.02f64..0.98) {
        for w in [WeightFunction::beta(alpha), WeightFunction::power(alpha)] {
            prop_assert!((w.total_mass(DEFAULT_THETA_NODES) - 1.0).abs() <= 1e-10, "{}", w.name());
        }
    }

    #[test]
    fn weighted_energy_of_linear_series_has_slope_of_first_moment(alpha in 0.05f64..0.95, t in 0.05f64..1.0) {
        let traj = synthetic(|s| 1.0 - s, 16, 1.0);
        for (w, m1) in [
            (WeightFunction::beta(alpha), beta_moment(alpha, 1.0)),
            (WeightFunction::power(alpha), power_moment(alpha, 1.0)),
        ] {
            let v = weighted_energy(&traj, &w, t).unwrap();
            prop_assert!((v - (1.0 - m1 * t)).abs() <= 1e-12);
            let d = weighted_energy_derivative_series(&traj, &w, traj.times()).unwrap();
            prop_assert!(d.iter().all(|x| (x + m1).abs() <= 1e-10));
        }
    }

    #[test]
    fn weighted_energy_of_quadratic_series(alpha in 0.05f64..0.95, t in 0.1f64..1.0) {
        // cubic interpolation of t² on a fine grid; quadrature is not the limiting error
        let traj = synthetic(|s| s * s, 400, 1.0);
        for (w, m2) in [
            (WeightFunction::beta(alpha), beta_moment(alpha, 2.0)),
            (WeightFunction::power(alpha), power_moment(alpha, 2.0)),
        ] {
            let v = weighted_energy(&traj, &w, t).unwrap();
            prop_assert!((v - m2 * t * t).abs() <= 1e-5, "{}: {v} vs {}", w.name(), m2 * t * t);
        }
    }

    #[test]
    fn tabulated_beta_matches_analytic(alpha in 0.05f64..0.95, seed in 0u64..100) {
        let (traj, _) = random_run(seed, alpha, Operator::AllenCahn, 0.2, 20);
        let analytic = WeightFunction::beta(alpha);
        let table = analytic.discretized(64);
        let exps = analytic.exponents();
        let rebuilt = WeightFunction::tabulated(
            "rebuilt",
            exps,
            (0..=64).map(|i| i as f64 / 64.0).collect(),
            (0..=64).map(|i| analytic.smooth_part(i as f64 / 64.0)).collect(),
        ).unwrap();
        for &t in &traj.times()[1..] {
            let a = weighted_energy(&traj, &analytic, t).unwrap();
            prop_assert!((weighted_energy(&traj, &table, t).unwrap() - a).abs() <= 1e-6);
            prop_assert!((weighted_energy(&traj, &rebuilt, t).unwrap() - a).abs() <= 1e-6);
        }
    }

    #[test]
    fn weighted_energies_bounded_and_dissipative(
        seed in 0u64..1000,
        alpha in 0.2f64..0.9,
        cahn_hilliard in any::<bool>(),
    ) {
        let op = if cahn_hilliard { Operator::CahnHilliard } else { Operator::AllenCahn };
        let t_final = if cahn_hilliard { 0.02 } else { 0.5 };
        let (traj, p) = random_run(seed, alpha, op, t_final, 40);
        let e0 = traj.energies()[0];
        let tol = dissipation_tolerance(e0);
        for w in [WeightFunction::beta(alpha), WeightFunction::power(alpha)] {
            let we = WeightedEnergy::new(&traj, &w, DEFAULT_THETA_NODES).unwrap();
            for &t in traj.times() {
                prop_assert!(we.eval(t).unwrap() <= e0 + ENERGY_BOUND_SLACK);
            }
            let d = weighted_energy_derivative_series(&traj, &w, traj.times()).unwrap();
            prop_assert!(d.iter().all(|&x| x <= tol), "{}: max {}", w.name(), d.iter().cloned().fold(f64::MIN, f64::max));
        }
        let report = dissipation_report(
            &traj,
            &[WeightFunction::beta(alpha), WeightFunction::power(alpha)],
            &p,
            &ReportOptions::default(),
        ).unwrap();
        prop_assert!(report.all_asserted_pass());
        prop_assert!(report.weights.iter().all(|w| w.admissible));
    }

    #[test]
    fn csv_rows_are_rectangular_and_round_trip(seed in 0u64..100, stride in 1usize..7) {
        let (traj, p) = random_run(seed, 0.5, Operator::AllenCahn, 0.1, 20);
        let report = dissipation_report(
            &traj,
            &[WeightFunction::beta(0.5), WeightFunction::power(0.5)],
            &p,
            &ReportOptions { stride, ..Default::default() },
        ).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        let width = lines.next().unwrap().split(',').count();
        prop_assert_eq!(width, 2 + 2 * 2 + 2);
        let rows: Vec<&str> = lines.collect();
        prop_assert_eq!(rows.len(), report.times.len());
        for (row, &t) in rows.iter().zip(&report.times) {
            let cells: Vec<&str> = row.split(',').collect();
            prop_assert_eq!(cells.len(), width);
            prop_assert_eq!(cells[0].parse::<f64>().unwrap(), t);
        }
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        prop_assert_eq!(json["weights"].as_array().unwrap().len(), 2);
        prop_assert_eq!(json["final_energy"].as_f64().unwrap(), report.final_energy);
    }
}

#[test]
fn caputo_energy_of_quadratic_series() {
    // L1 on t² converges at order 2 - α; at N = 400 the error is below 1e-3
    let alpha = 0.4;
    let traj = synthetic(|s| s * s, 400, 1.0);
    let d = caputo_energy_series(&traj, alpha).unwrap();
    let exact = 2.0 / gamma(3.0 - alpha);
    assert!((d[d.len() - 1] - exact).abs() < 1e-3);
}
