//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (run with `--nocapture` to see them
//! all). Tolerances are pinned here, not computed.

use std::time::Instant;

use tbi_cli::commands::{cmd_simulate_tbi_point, CommandContext};
use tbi_cli::config::{RunConfig, ShotPlan};
use tbi_cli::TableFormat;

use tbi_core::analysis::{bell_from_fit, fit_cosine, fit_poisson_mixture, FitOptions};
use tbi_core::dynamics::{bell_curve, critical_noise, stationarity_check, RabiParams};
use tbi_core::photophysics::{
    charge_measurement, charge_rates, simulate_charge_trajectory, ChargeState,
    IlluminationSetting, PhotophysicsConfig,
};
use tbi_core::protocol::{rabi_scan, required_shots, run_tbi_experiment, ExperimentConfig};
use tbi_core::readout::{
    calibrate_photon_rates, classify_nuclear, simulate_readout, threshold_fidelity, NuclearState,
};
use tbi_core::rng::Seeder;
use tbi_core::stats::{mean, standard_error};

const TWO_PI: f64 = std::f64::consts::TAU;

#[test]
fn criterion_1_ideal_bound() {
    let start = Instant::now();
    let params = RabiParams::coherent(1.0).unwrap();
    let grid: Vec<f64> = (1..=10_000).map(|i| TWO_PI * i as f64 / 10_000.0).collect();
    let curve = bell_curve(&params, &grid).unwrap();
    let min = curve.iter().min_by(|a, b| a.b.total_cmp(&b.b)).unwrap();
    assert!(
        (min.b + 1.0 / 3.0).abs() <= 1e-6,
        "minimum {} vs -1/3",
        min.b
    );
    assert!(
        (min.q_t - 2.0 / 3.0).abs() <= 1e-3,
        "q at minimum {} vs 2/3",
        min.q_t
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 PASS: ideal bound minimum {:.8} at q_t = {:.6} ({} grid points, {elapsed:?})",
        min.b,
        min.q_t,
        grid.len()
    );
}

#[test]
fn criterion_2_headline_violation() {
    let start = Instant::now();
    let mut shots_simulated: u64 = 0;

    // Readout calibrated to F^2 = 0.91 (the frozen defaults must agree with
    // a fresh calibration).
    let calibrated = calibrate_photon_rates(0.91, 2000, 3.0).unwrap();
    let cfg = ExperimentConfig::paper_default();
    assert!((calibrated.mean_photons_dark - cfg.readout.mean_photons_dark).abs() < 0.05);
    assert_eq!(calibrated.threshold, cfg.readout.threshold);

    // The configured baseline shift must put the fitted bound-curve minimum
    // at -0.209 +- 0.02.
    let seeder = Seeder::new(0xACCE);
    let omega = cfg.rabi.omega;
    let tau_grid: Vec<f64> = (0..=24).map(|i| i as f64 / 24.0 * TWO_PI / omega).collect();
    let shots_per_point = 20_000;
    let scan = rabi_scan(&tau_grid, shots_per_point, &cfg, &seeder, "a2.scan").unwrap();
    shots_simulated += shots_per_point * tau_grid.len() as u64;
    let points: Vec<(f64, f64, f64)> = scan
        .iter()
        .map(|(tau, est)| (*tau, est.q_hat, est.stderr_binomial))
        .collect();
    let fit = fit_cosine(&points, &FitOptions::default()).unwrap();
    let t_grid: Vec<f64> = (1..=4000)
        .map(|i| i as f64 / 4000.0 * std::f64::consts::PI / omega)
        .collect();
    let fit_curve = bell_from_fit(&fit, &t_grid).unwrap();
    let fit_min = fit_curve.iter().min_by(|a, b| a.b.total_cmp(&b.b)).unwrap();
    assert!(
        (fit_min.b + 0.209).abs() <= 0.02,
        "fitted minimum {} vs -0.209 +- 0.02",
        fit_min.b
    );

    // Shot budget from the planned target error, inflated by the observed
    // post-selection acceptance.
    let (n_needed, _) = required_shots(fit.eval(fit_min.t), fit.eval(2.0 * fit_min.t), 0.0039)
        .unwrap();
    let used: u64 = scan.iter().map(|(_, e)| e.n_used).sum();
    let total: u64 = scan.iter().map(|(_, e)| e.n_used + e.n_discarded).sum();
    let acceptance = used as f64 / total as f64;
    let n_raw = (n_needed as f64 / acceptance).ceil() as u64;

    let res = run_tbi_experiment(fit_min.t, n_raw, n_raw, &cfg, &seeder, "a2.point").unwrap();
    shots_simulated += 2 * n_raw;
    assert!(
        res.b >= -0.23 && res.b <= -0.19,
        "B = {} outside [-0.23, -0.19]",
        res.b
    );
    assert!(
        res.b_stderr >= 0.0033 && res.b_stderr <= 0.0047,
        "stderr {} outside [0.0033, 0.0047]",
        res.b_stderr
    );
    let n_sigma = res.n_sigma.unwrap();
    assert!(n_sigma > 50.0, "significance {n_sigma}");
    assert!(
        shots_simulated <= 10_000_000,
        "{shots_simulated} shots exceed the desk-scale budget"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 2 PASS: B = {:.4} +- {:.4} ({:.1} sigma, fit minimum {:.4}, {} shots, {elapsed:?})",
        res.b, res.b_stderr, n_sigma, fit_min.b, shots_simulated
    );
}

#[test]
fn criterion_3_fidelity_round_trip() {
    let start = Instant::now();
    let cfg = calibrate_photon_rates(0.91, 2000, 3.0).unwrap();
    let fid = threshold_fidelity(
        cfg.mean_photons_dark,
        cfg.mean_photons_bright,
        0.5,
        cfg.threshold,
    )
    .unwrap();
    assert!(
        (fid.f_squared - 0.91).abs() <= 0.005,
        "F^2 = {}",
        fid.f_squared
    );

    // Monte Carlo classification agrees with the analytic per-class
    // fidelities within 3 binomial sigma at 1e5 shots.
    let seeder = Seeder::new(0xF1DE);
    let shots_per_class = 50_000u64;
    for (state, expected, label) in [
        (NuclearState::MPlus1, fid.assign_dark, "dark"),
        (NuclearState::MOther, fid.assign_bright, "bright"),
    ] {
        let mut correct = 0u64;
        for i in 0..shots_per_class {
            let mut rng = seeder.stream(label, i);
            let (count, _) = simulate_readout(state, &cfg, &mut rng).unwrap();
            if classify_nuclear(count, cfg.threshold) == state {
                correct += 1;
            }
        }
        let frac = correct as f64 / shots_per_class as f64;
        let sigma = (expected * (1.0 - expected) / shots_per_class as f64).sqrt();
        assert!(
            (frac - expected).abs() <= 3.0 * sigma,
            "{label}: {frac} vs {expected} (sigma {sigma})"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 3 PASS: F^2 = {:.4} (dark {:.4}, bright {:.4}), MC agrees at 1e5 shots ({elapsed:?})",
        fid.f_squared, fid.assign_dark, fid.assign_bright
    );
}

#[test]
fn criterion_4_charge_physics() {
    let start = Instant::now();
    let photo = PhotophysicsConfig::default();
    let orange = IlluminationSetting::orange(0.4e-6);
    let green = IlluminationSetting::green(50e-6);
    let seeder = Seeder::new(0xC4A6);

    // Mean NV- dwell under the orange probe: 600 ms within 3 SE, >= 200 dwells.
    let mut dwells = Vec::new();
    let mut index = 0;
    while dwells.len() < 200 {
        let mut rng = seeder.stream("dwell", index);
        index += 1;
        let traj =
            simulate_charge_trajectory(&photo, &orange, 400.0, &mut rng, None).unwrap();
        dwells.extend(traj.completed_dwells(ChargeState::NvMinus));
    }
    let dwell_mean = mean(&dwells);
    let dwell_se = standard_error(&dwells);
    assert!(
        (dwell_mean - 0.6).abs() <= 3.0 * dwell_se,
        "dwell mean {dwell_mean} +- {dwell_se} vs 0.6 over {} dwells",
        dwells.len()
    );

    // Green steady state: NV0 occupancy 0.30 +- 0.01 over a long trace.
    let mut rng = seeder.stream("green", 0);
    let traj = simulate_charge_trajectory(&photo, &green, 120.0, &mut rng, None).unwrap();
    let occupancy_zero = traj.occupancy(ChargeState::NvZero) / traj.duration;
    assert!(
        (occupancy_zero - 0.30).abs() <= 0.01,
        "NV0 occupancy {occupancy_zero}"
    );

    // Mixture fit of the charge histogram: bright weight 0.70 +- 0.02.
    let mut counts = Vec::with_capacity(50_000);
    for i in 0..50_000u64 {
        let mut rng = seeder.stream("hist", i);
        let initial = if rand::Rng::random::<f64>(&mut rng) < 0.7 {
            ChargeState::NvMinus
        } else {
            ChargeState::NvZero
        };
        let (count, _) = charge_measurement(&photo, &orange, 8e-3, &mut rng, initial).unwrap();
        counts.push(count);
    }
    let fit = fit_poisson_mixture(&counts).unwrap();
    assert!(!fit.degenerate);
    assert!(
        (fit.weight_high() - 0.70).abs() <= 0.02,
        "bright weight {}",
        fit.weight_high()
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 4 PASS: dwell {:.1} ms ({} dwells), NV0 occupancy {:.3}, bright weight {:.3} ({elapsed:?})",
        dwell_mean * 1e3,
        dwells.len(),
        occupancy_zero,
        fit.weight_high()
    );
}

#[test]
fn criterion_5_quadratic_ionization() {
    let start = Instant::now();
    let photo = PhotophysicsConfig::default();
    let full = IlluminationSetting::orange(0.4e-6);
    let half = IlluminationSetting::orange(0.2e-6);

    // Analytic: exactly 4.
    let (ion_full, _) = charge_rates(&photo, &full).unwrap();
    let (ion_half, _) = charge_rates(&photo, &half).unwrap();
    let analytic_ratio = ion_full / ion_half;
    assert!((analytic_ratio - 4.0).abs() < 1e-12);

    // Simulated dwell-mean ratio: 4.0 +- 0.2.
    let seeder = Seeder::new(0x10D1);
    let dwell_mean = |setting: &IlluminationSetting, label: &str, target: usize| -> f64 {
        let mut dwells = Vec::new();
        let mut index = 0;
        while dwells.len() < target {
            let mut rng = seeder.stream(label, index);
            index += 1;
            let traj = simulate_charge_trajectory(
                &photo,
                setting,
                5.0e3,
                &mut rng,
                Some(ChargeState::NvMinus),
            )
            .unwrap();
            dwells.extend(traj.completed_dwells(ChargeState::NvMinus));
        }
        dwells.truncate(target);
        mean(&dwells)
    };
    let ratio = dwell_mean(&half, "half", 10_000) / dwell_mean(&full, "full", 10_000);
    assert!((ratio - 4.0).abs() <= 0.2, "simulated ratio {ratio}");
    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 5 PASS: dwell ratio analytic {analytic_ratio:.1}, simulated {ratio:.3} ({elapsed:?})"
    );
}

#[test]
fn criterion_6_crossover_property() {
    let start = Instant::now();
    let omega = 1.0;
    let cn = critical_noise(omega, 1e-6).unwrap();

    // Independent grid-search oracle for min_t B over omega*t in (0, 4 pi].
    let min_b = |gamma: f64| -> f64 {
        let params = RabiParams::new(omega, gamma, 0.0).unwrap();
        let grid: Vec<f64> = (1..=200_000)
            .map(|i| 4.0 * std::f64::consts::PI * i as f64 / 200_000.0)
            .collect();
        bell_curve(&params, &grid)
            .unwrap()
            .iter()
            .map(|p| p.b)
            .fold(f64::INFINITY, f64::min)
    };
    let below = min_b(0.9 * cn.gamma_star);
    let above = min_b(1.1 * cn.gamma_star);
    assert!(below < -1e-4, "min B at 0.9 gamma* = {below}");
    assert!(above > -1e-6, "min B at 1.1 gamma* = {above}");

    // Scale invariance of gamma*/omega under omega rescaling.
    let cn_scaled = critical_noise(7.5, 1e-6).unwrap();
    let ratio_a = cn.gamma_star / omega;
    let ratio_b = cn_scaled.gamma_star / 7.5;
    assert!(
        (ratio_a - ratio_b).abs() <= 1e-6,
        "gamma*/omega {ratio_a} vs {ratio_b}"
    );

    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 6 PASS: gamma*/omega = {ratio_a:.6} (derived oracle: B(0.9g*) = {below:.2e}, B(1.1g*) = {above:.2e}) ({elapsed:?})"
    );
}

#[test]
fn criterion_7_end_to_end_oracle_equivalence() {
    let start = Instant::now();
    let cfg = ExperimentConfig::ideal();
    let seeder = Seeder::new(0xE2E);
    let omega = cfg.rabi.omega;
    let grid: Vec<f64> = (1..=12).map(|i| 0.24 * i as f64 / omega).collect();
    let analytic = bell_curve(&cfg.rabi, &grid).unwrap();
    let shots = 100_000u64;
    for (i, pt) in analytic.iter().enumerate() {
        let res =
            run_tbi_experiment(pt.t, shots, shots, &cfg, &seeder, &format!("a7[{i}]")).unwrap();
        assert!(
            (res.b - pt.b).abs() <= 3.0 * res.b_stderr,
            "omega t = {:.2}: MC {} +- {} vs analytic {}",
            pt.t * omega,
            res.b,
            res.b_stderr,
            pt.b
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 7 PASS: 12 grid points match the closed form within 3 MC sigma at 1e5 shots/point ({elapsed:?})"
    );
}

#[test]
fn criterion_8_stationarity() {
    let start = Instant::now();
    use rand::Rng;
    let mut rng = Seeder::new(0x57A7).stream("configs", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let omega = rng.random_range(0.5..20.0);
        let params = RabiParams::new(
            omega,
            rng.random_range(0.0..0.5) * omega,
            rng.random_range(0.0..0.5) * omega,
        )
        .unwrap();
        let delta = rng.random_range(0.1..6.0) / omega;
        let starts: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..10.0) / omega).collect();
        let dev = stationarity_check(&params, delta, &starts).unwrap();
        worst = worst.max(dev);
    }
    assert!(worst <= 1e-8, "worst deviation {worst}");
    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 8 PASS: stationarity deviation <= {worst:.2e} across 20 random configurations ({elapsed:?})"
    );
}

#[test]
fn criterion_9_determinism_across_workers() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let summary_path = |workers: usize| {
        let mut config = RunConfig {
            master_seed: 2024,
            workers,
            output_dir: dir.path().join(format!("w{workers}")),
            ..RunConfig::default()
        };
        config.tbi_point.shots = ShotPlan::Fixed {
            n_t: 4000,
            n_2t: 4000,
        };
        let ctx = CommandContext::new(config, TableFormat::Csv);
        cmd_simulate_tbi_point(&ctx).unwrap();
        dir.path().join(format!("w{workers}")).join("tbi_point.json")
    };
    let one = std::fs::read(summary_path(1)).unwrap();
    let four = std::fs::read(summary_path(4)).unwrap();
    assert_eq!(one, four, "summary JSON differs between 1 and 4 workers");
    // The shot-level CSV is byte-identical too.
    let shots_one = std::fs::read(dir.path().join("w1").join("tbi_shots.csv")).unwrap();
    let shots_four = std::fs::read(dir.path().join("w4").join("tbi_shots.csv")).unwrap();
    assert_eq!(shots_one, shots_four);
    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 9 PASS: byte-identical summary JSON ({} bytes) for 1 vs 4 workers ({elapsed:?})",
        one.len()
    );
}
