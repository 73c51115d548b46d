//! Subcommand implementations. Each writes its data files into the output
//! directory, writes a summary JSON next to them, and returns the summary
//! for printing on standard output.

use std::path::{Path, PathBuf};

use serde_json::json;

use tbi_core::analysis::{
    bell_from_fit, extract_dwell_times, fit_cosine, fit_poisson_mixture, FitOptions,
};
use tbi_core::dynamics::{bell_curve, critical_noise, BellPoint};
use tbi_core::photophysics::{
    charge_measurement, render_trace, simulate_charge_trajectory, steady_state_nv_minus,
    ChargeState, IlluminationSetting,
};
use tbi_core::protocol::{required_shots, tbi_from_estimates};
use tbi_core::readout::{
    build_histogram, optimal_threshold, simulate_readout, threshold_fidelity, NuclearState,
    ThresholdObjective,
};
use tbi_core::rng::Seeder;
use tbi_core::stats;

use crate::config::{GridUnits, RunConfig, SettingChoice, ShotPlan};
use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, write_json, CsvData, RunStamp, Table, TableFormat};
use crate::parallel::WorkerPool;

/// Everything a command needs: the validated config plus output options.
pub struct CommandContext {
    pub config: RunConfig,
    pub format: TableFormat,
}

impl CommandContext {
    pub fn new(config: RunConfig, format: TableFormat) -> Self {
        Self { config, format }
    }

    fn stamp(&self) -> RunStamp {
        RunStamp {
            config_sha256: self.config.science_hash(),
            master_seed: self.config.master_seed,
        }
    }

    fn seeder(&self) -> Seeder {
        Seeder::new(self.config.master_seed)
    }

    fn out_dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn pool(&self) -> CliResult<WorkerPool> {
        WorkerPool::new(self.config.workers)
    }

    /// Converts a value in the configured units to seconds.
    fn to_seconds(&self, value: f64, units: GridUnits) -> f64 {
        match units {
            GridUnits::Seconds => value,
            GridUnits::OmegaT => value / self.config.experiment.rabi.omega,
        }
    }

    fn setting(&self, choice: SettingChoice, power: Option<f64>) -> IlluminationSetting {
        let mut setting = match choice {
            SettingChoice::Orange => self.config.experiment.orange,
            SettingChoice::Green => self.config.experiment.green,
        };
        if let Some(p) = power {
            setting.power = p;
        }
        setting
    }
}

fn curve_table(points: &[BellPoint]) -> Table {
    let mut table = Table::new(vec!["t", "q_t", "q_2t", "b"]);
    for p in points {
        table.push(vec![
            fmt_f64(p.t),
            fmt_f64(p.q_t),
            fmt_f64(p.q_2t),
            fmt_f64(p.b),
        ]);
    }
    table
}

fn curve_minimum(points: &[BellPoint]) -> serde_json::Value {
    let min = points
        .iter()
        .min_by(|a, b| a.b.total_cmp(&b.b))
        .expect("non-empty curve");
    json!({ "t": min.t, "q_t": min.q_t, "q_2t": min.q_2t, "b": min.b })
}

/// `bell-curve`: the bound functional over a time grid for the ideal and a
/// damped parameter set.
pub fn cmd_bell_curve(ctx: &CommandContext) -> CliResult<serde_json::Value> {
    let bc = &ctx.config.bell_curve;
    let stamp = ctx.stamp();
    let ideal_grid = bc.grid.build(bc.ideal.omega)?;
    let damped_grid = bc.grid.build(bc.damped.omega)?;
    let ideal = bell_curve(&bc.ideal, &ideal_grid)?;
    let damped = bell_curve(&bc.damped, &damped_grid)?;

    curve_table(&ideal).write(ctx.out_dir(), "bell_curve_ideal", ctx.format, &stamp)?;
    curve_table(&damped).write(ctx.out_dir(), "bell_curve_damped", ctx.format, &stamp)?;

    let summary = json!({
        "command": "bell-curve",
        "config_sha256": stamp.config_sha256,
        "master_seed": stamp.master_seed,
        "grid_points": bc.grid.points,
        "ideal": { "params": bc.ideal, "minimum": curve_minimum(&ideal) },
        "damped": { "params": bc.damped, "minimum": curve_minimum(&damped) },
    });
    write_json(ctx.out_dir(), "bell_curve", &summary)?;
    Ok(summary)
}

/// `critical-noise`: damping rate at which the violation disappears.
pub fn cmd_critical_noise(ctx: &CommandContext) -> CliResult<serde_json::Value> {
    let cn = &ctx.config.critical_noise;
    let result = critical_noise(cn.omega, cn.tol)?;
    let summary = json!({
        "command": "critical-noise",
        "config_sha256": ctx.stamp().config_sha256,
        "omega": cn.omega,
        "tol": cn.tol,
        "gamma_star": result.gamma_star,
        "gamma_star_over_omega": result.gamma_star / cn.omega,
        "minimizer_t": result.minimizer_t,
        "min_b": result.min_b,
    });
    write_json(ctx.out_dir(), "critical_noise", &summary)?;
    Ok(summary)
}

/// `simulate rabi-scan`: survival estimates over a pulse-length grid.
pub fn cmd_simulate_rabi_scan(ctx: &CommandContext) -> CliResult<serde_json::Value> {
    let cfg = &ctx.config;
    let grid = cfg.rabi_scan.grid.build(cfg.experiment.rabi.omega)?;
    let pool = ctx.pool()?;
    let seeder = ctx.seeder();
    let stamp = ctx.stamp();

    let mut table = Table::new(vec![
        "tau",
        "q",
        "stderr",
        "stderr_binomial",
        "n_used",
        "n_discarded",
        "q_corrected",
    ]);
    let mut used_total = 0u64;
    let mut discarded_total = 0u64;
    for (i, &tau) in grid.iter().enumerate() {
        let (est, _) = pool.estimate_q(
            tau,
            cfg.rabi_scan.shots_per_point,
            &cfg.experiment,
            &seeder,
            &format!("simulate.rabi-scan[{i}]"),
        )?;
        used_total += est.n_used;
        discarded_total += est.n_discarded;
        table.push(vec![
            fmt_f64(tau),
            fmt_f64(est.q_hat),
            fmt_f64(est.stderr_batch),
            fmt_f64(est.stderr_binomial),
            est.n_used.to_string(),
            est.n_discarded.to_string(),
            fmt_f64(est.q_hat_corrected),
        ]);
    }
    let path = table.write(ctx.out_dir(), "rabi_scan", ctx.format, &stamp)?;

    let summary = json!({
        "command": "simulate rabi-scan",
        "config_sha256": stamp.config_sha256,
        "master_seed": stamp.master_seed,
        "points": grid.len(),
        "shots_per_point": cfg.rabi_scan.shots_per_point,
        "shots_used": used_total,
        "shots_discarded": discarded_total,
        "acceptance_fraction": used_total as f64 / (used_total + discarded_total) as f64,
        "data": file_name(&path),
    });
    write_json(ctx.out_dir(), "rabi_scan_summary", &summary)?;
    Ok(summary)
}

/// `simulate tbi-point`: high-accuracy bound evaluation at one time, with
/// the shot budget either fixed or planned from a pilot run.
pub fn cmd_simulate_tbi_point(ctx: &CommandContext) -> CliResult<serde_json::Value> {
    let cfg = &ctx.config;
    let t = ctx.to_seconds(cfg.tbi_point.t, cfg.tbi_point.units);
    let pool = ctx.pool()?;
    let seeder = ctx.seeder();
    let stamp = ctx.stamp();

    let (n_t, n_2t, plan) = match cfg.tbi_point.shots {
        ShotPlan::Fixed { n_t, n_2t } => (n_t, n_2t, json!({ "mode": "fixed" })),
        ShotPlan::TargetStderr {
            target,
            pilot_shots,
        } => {
            let (pilot_t, _) = pool.estimate_q(
                t,
                pilot_shots,
                &cfg.experiment,
                &seeder,
                "simulate.tbi-point.pilot.q_t",
            )?;
            let (pilot_2t, _) = pool.estimate_q(
                2.0 * t,
                pilot_shots,
                &cfg.experiment,
                &seeder,
                "simulate.tbi-point.pilot.q_2t",
            )?;
            let (n_used, _) = required_shots(pilot_t.q_hat, pilot_2t.q_hat, target)?;
            let acceptance = 0.5 * (pilot_t.acceptance_fraction() + pilot_2t.acceptance_fraction());
            let n_raw = (n_used as f64 / acceptance).ceil() as u64;
            (
                n_raw,
                n_raw,
                json!({
                    "mode": "target_stderr",
                    "target": target,
                    "pilot_shots": pilot_shots,
                    "pilot_q_t": pilot_t.q_hat,
                    "pilot_q_2t": pilot_2t.q_hat,
                    "required_postselected": n_used,
                    "acceptance_estimate": acceptance,
                }),
            )
        }
    };

    let records_t = pool.run_shots(t, n_t, &cfg.experiment, &seeder, "simulate.tbi-point.q_t")?;
    let records_2t = pool.run_shots(
        2.0 * t,
        n_2t,
        &cfg.experiment,
        &seeder,
        "simulate.tbi-point.q_2t",
    )?;
    let est_t = tbi_core::protocol::estimate_q_from_records(records_t.iter(), &cfg.experiment)?;
    let est_2t = tbi_core::protocol::estimate_q_from_records(records_2t.iter(), &cfg.experiment)?;
    let result = tbi_from_estimates(t, &est_t, &est_2t, cfg.experiment.violation_k_sigma);

    let mut files = json!({});
    if cfg.tbi_point.write_shots {
        let mut table = Table::new(vec![
            "tau",
            "init_state",
            "init_counts",
            "charge_counts",
            "charge_accepted",
            "final_counts",
            "final_state",
            "true_final_state",
        ]);
        for rec in records_t.iter().chain(records_2t.iter()) {
            table.push(vec![
                fmt_f64(rec.tau),
                nuclear_label(rec.init_state).to_string(),
                rec.init_counts.to_string(),
                rec.charge_counts.to_string(),
                rec.charge_accepted.to_string(),
                rec.final_counts.to_string(),
                nuclear_label(rec.final_state_classified).to_string(),
                nuclear_label(rec.true_final_state).to_string(),
            ]);
        }
        let path = table.write(ctx.out_dir(), "tbi_shots", ctx.format, &stamp)?;
        files = json!({ "shots": file_name(&path) });
    }

    let summary = json!({
        "command": "simulate tbi-point",
        "config_sha256": stamp.config_sha256,
        "master_seed": stamp.master_seed,
        "plan": plan,
        "shots_simulated": { "t": n_t, "2t": n_2t },
        "result": result,
        "q_t_corrected": est_t.q_hat_corrected,
        "q_2t_corrected": est_2t.q_hat_corrected,
        "files": files,
    });
    write_json(ctx.out_dir(), "tbi_point", &summary)?;
    Ok(summary)
}

/// `simulate trace`: charge telegraph trajectory rendered into binned
/// fluorescence counts.
pub fn cmd_simulate_trace(ctx: &CommandContext) -> CliResult<serde_json::Value> {
    let (summary, _) = simulate_trace_impl(ctx)?;
    Ok(summary)
}

fn simulate_trace_impl(ctx: &CommandContext) -> CliResult<(serde_json::Value, PathBuf)> {
    let cfg = &ctx.config;
    let tr = &cfg.trace;
    let setting = ctx.setting(tr.setting, tr.power);
    let stamp = ctx.stamp();
    let mut rng = ctx.seeder().stream("simulate.trace", 0);
    let trajectory = simulate_charge_trajectory(
        &cfg.experiment.photophysics,
        &setting,
        tr.duration,
        &mut rng,
        None,
    )?;
    let trace = render_trace(
        &trajectory,
        &cfg.experiment.photophysics,
        &setting,
        tr.bin_width,
        &mut rng,
        tr.record_true_states,
    )?;

    let mut columns = vec!["bin_start_s", "count"];
    if trace.true_states.is_some() {
        columns.push("true_state");
    }
    let mut table = Table::new(columns);
    for (i, &count) in trace.counts.iter().enumerate() {
        let mut row = vec![fmt_f64(i as f64 * trace.bin_width), count.to_string()];
        if let Some(states) = &trace.true_states {
            row.push(charge_label(states[i]).to_string());
        }
        table.push(row);
    }
    let path = table.write(ctx.out_dir(), "trace", ctx.format, &stamp)?;

    let counts_f: Vec<f64> = trace.counts.iter().map(|&c| c as f64).collect();
    let summary = json!({
        "command": "simulate trace",
        "config_sha256": stamp.config_sha256,
        "master_seed": stamp.master_seed,
        "setting": setting,
        "duration_s": tr.duration,
        "bin_width_s": tr.bin_width,
        "bins": trace.counts.len(),
        "mean_count": stats::mean(&counts_f),
        "switches": trajectory.segments.len() - 1,
        "data": file_name(&path),
    });
    write_json(ctx.out_dir(), "trace_summary", &summary)?;
    Ok((summary, path))
}

/// `simulate histogram`: photon-count totals of repeated nuclear readouts
/// on an unpolarized spin.
pub fn cmd_simulate_histogram(ctx: &CommandContext) -> CliResult<serde_json::Value> {
    let cfg = &ctx.config;
    let readout = &cfg.experiment.readout;
    let pool = ctx.pool()?;
    let seeder = ctx.seeder();
    let stamp = ctx.stamp();

    let counts: Vec<u64> = pool.map_indexed(cfg.histogram.shots, |i| {
        let mut rng = seeder.stream("simulate.histogram", i);
        let state = if rand::Rng::random::<f64>(&mut rng) < 0.5 {
            NuclearState::MPlus1
        } else {
            NuclearState::MOther
        };
        let (count, _) = simulate_readout(state, readout, &mut rng)?;
        Ok(count)
    })?;

    let hist = build_histogram(&counts, cfg.histogram.bin_width)?;
    let path = histogram_table(&hist).write(ctx.out_dir(), "histogram", ctx.format, &stamp)?;

    let fid = threshold_fidelity(
        readout.mean_photons_dark,
        readout.mean_photons_bright,
        0.5,
        readout.threshold,
    )?;
    let below = counts.iter().filter(|&&c| c <= readout.threshold).count();
    let summary = json!({
        "command": "simulate histogram",
        "config_sha256": stamp.config_sha256,
        "master_seed": stamp.master_seed,
        "shots": cfg.histogram.shots,
        "threshold": readout.threshold,
        "fraction_low": below as f64 / counts.len() as f64,
        "fidelity": { "assign_dark": fid.assign_dark, "assign_bright": fid.assign_bright,
                      "f_squared": fid.f_squared },
        "data": file_name(&path),
    });
    write_json(ctx.out_dir(), "histogram_summary", &summary)?;
    Ok(summary)
}

/// `simulate charge-histogram`: green reset followed by an orange charge
/// pulse, repeated; the mixture weight of the bright component estimates the
/// steady-state NV- fraction.
pub fn cmd_simulate_charge_histogram(ctx: &CommandContext) -> CliResult<serde_json::Value> {
    let cfg = &ctx.config;
    let pool = ctx.pool()?;
    let seeder = ctx.seeder();
    let stamp = ctx.stamp();
    let p_minus = steady_state_nv_minus(&cfg.experiment.photophysics, &cfg.experiment.green)?;

    let counts: Vec<u64> = pool.map_indexed(cfg.charge_histogram.shots, |i| {
        let mut rng = seeder.stream("simulate.charge-histogram", i);
        let initial = if rand::Rng::random::<f64>(&mut rng) < p_minus {
            ChargeState::NvMinus
        } else {
            ChargeState::NvZero
        };
        let (count, _) = charge_measurement(
            &cfg.experiment.photophysics,
            &cfg.experiment.orange,
            cfg.experiment.charge_pulse,
            &mut rng,
            initial,
        )?;
        Ok(count)
    })?;

    let hist = build_histogram(&counts, cfg.charge_histogram.bin_width)?;
    let path =
        histogram_table(&hist).write(ctx.out_dir(), "charge_histogram", ctx.format, &stamp)?;
    let fit = fit_poisson_mixture(&counts)?;

    let summary = json!({
        "command": "simulate charge-histogram",
        "config_sha256": stamp.config_sha256,
        "master_seed": stamp.master_seed,
        "shots": cfg.charge_histogram.shots,
        "green_steady_state_nv_minus": p_minus,
        "mixture": fit,
        "weight_high": fit.weight_high(),
        "data": file_name(&path),
    });
    write_json(ctx.out_dir(), "charge_histogram_summary", &summary)?;
    Ok(summary)
}

/// `fit cosine`: weighted cosine fit of a scan CSV (tau, q, stderr).
pub fn cmd_fit_cosine(ctx: &CommandContext, input: Option<PathBuf>) -> CliResult<serde_json::Value> {
    let path = resolve_input(ctx, input)?;
    let data = CsvData::read(&path)?;
    let tau = data.numeric_column("tau")?;
    let q = data.numeric_column("q")?;
    let stderr = data.numeric_column("stderr")?;
    let points: Vec<(f64, f64, f64)> = tau
        .into_iter()
        .zip(q)
        .zip(stderr)
        .map(|((t, q), s)| (t, q, s))
        .collect();
    let fit = fit_cosine(
        &points,
        &FitOptions {
            fit_decay: ctx.config.fit.fit_decay,
            ..FitOptions::default()
        },
    )?;

    // Bound curve implied by the fit, over half a fitted period.
    let t_grid: Vec<f64> = (1..=1000)
        .map(|i| i as f64 / 1000.0 * std::f64::consts::PI / fit.omega)
        .collect();
    let curve = bell_from_fit(&fit, &t_grid)?;
    let stamp = ctx.stamp();
    let curve_path = curve_table(&curve).write(ctx.out_dir(), "bell_from_fit", ctx.format, &stamp)?;

    let summary = json!({
        "command": "fit cosine",
        "input": file_name(&path),
        "n_points": points.len(),
        "fit": fit,
        "bell_from_fit": {
            "data": file_name(&curve_path),
            "minimum": curve_minimum(&curve),
        },
    });
    write_json(ctx.out_dir(), "fit_cosine", &summary)?;
    Ok(summary)
}

/// `fit mixture`: two-component Poisson mixture fit of raw counts or of a
/// binned histogram CSV.
pub fn cmd_fit_mixture(ctx: &CommandContext, input: Option<PathBuf>) -> CliResult<serde_json::Value> {
    let path = resolve_input(ctx, input)?;
    let data = CsvData::read(&path)?;
    let samples: Vec<u64> = if data.column_index("bin_lo").is_ok() {
        // Histogram form: expand bin centers by their counts.
        let lo = data.numeric_column("bin_lo")?;
        let hi = data.numeric_column("bin_hi")?;
        let n = data.numeric_column("count")?;
        let mut samples = Vec::new();
        for ((lo, hi), n) in lo.into_iter().zip(hi).zip(n) {
            let center = (0.5 * (lo + hi)).floor().max(0.0) as u64;
            samples.extend(std::iter::repeat_n(center, n as usize));
        }
        samples
    } else {
        data.numeric_column("count")?
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if v < 0.0 || v.fract() != 0.0 {
                    Err(CliError::malformed_csv(format!(
                        "row {}: count '{v}' is not a non-negative integer",
                        i + 1
                    )))
                } else {
                    Ok(v as u64)
                }
            })
            .collect::<CliResult<Vec<u64>>>()?
    };
    let fit = fit_poisson_mixture(&samples)?;
    let summary = json!({
        "command": "fit mixture",
        "input": file_name(&path),
        "n_samples": samples.len(),
        "fit": fit,
        "weight_high": fit.weight_high(),
    });
    write_json(ctx.out_dir(), "fit_mixture", &summary)?;
    Ok(summary)
}

/// `dwell-times`: thresholded, debounced segmentation of a trace CSV. When
/// no input is given, a trace is simulated first from the `trace` section.
pub fn cmd_dwell_times(ctx: &CommandContext, input: Option<PathBuf>) -> CliResult<serde_json::Value> {
    let path = match input.or_else(|| ctx.config.dwell_times.input.clone()) {
        Some(p) => p,
        None => simulate_trace_impl(ctx)?.1,
    };
    let data = CsvData::read(&path)?;
    let starts = data.numeric_column("bin_start_s")?;
    let counts: Vec<u64> = data
        .numeric_column("count")?
        .into_iter()
        .map(|v| v.max(0.0) as u64)
        .collect();
    if starts.len() < 2 {
        return Err(CliError::malformed_csv(format!(
            "{}: need at least two bins to infer the bin width",
            path.display()
        )));
    }
    let bin_width = starts[1] - starts[0];
    let trace = tbi_core::photophysics::FluorescenceTrace {
        bin_width,
        counts,
        true_states: None,
    };

    let threshold = match ctx.config.dwell_times.threshold {
        Some(t) => t,
        None => {
            let fit = fit_poisson_mixture(&trace.counts)?;
            if fit.degenerate {
                return Err(CliError::new(
                    "FIT_FAILED",
                    "trace counts look unimodal; set dwell_times.threshold explicitly",
                ));
            }
            optimal_threshold(
                fit.lambda_low,
                fit.lambda_high,
                fit.weight_low,
                ThresholdObjective::Balanced,
            )?
        }
    };

    let analysis = extract_dwell_times(&trace, threshold, ctx.config.dwell_times.min_run_bins)?;
    let stamp = ctx.stamp();
    let mut table = Table::new(vec!["state", "dwell_s"]);
    for &d in &analysis.dwell_low {
        table.push(vec!["low".into(), fmt_f64(d)]);
    }
    for &d in &analysis.dwell_high {
        table.push(vec!["high".into(), fmt_f64(d)]);
    }
    let out_path = table.write(ctx.out_dir(), "dwell_times", ctx.format, &stamp)?;

    let summary = json!({
        "command": "dwell-times",
        "input": file_name(&path),
        "threshold": threshold,
        "min_run_bins": ctx.config.dwell_times.min_run_bins,
        "degenerate": analysis.degenerate,
        "n_low": analysis.dwell_low.len(),
        "n_high": analysis.dwell_high.len(),
        "mean_dwell_low_s": stats::mean(&analysis.dwell_low),
        "mean_dwell_high_s": stats::mean(&analysis.dwell_high),
        "data": file_name(&out_path),
    });
    write_json(ctx.out_dir(), "dwell_times_summary", &summary)?;
    Ok(summary)
}

fn histogram_table(hist: &tbi_core::readout::HistogramData) -> Table {
    let mut table = Table::new(vec!["bin_lo", "bin_hi", "count"]);
    for (i, &count) in hist.counts.iter().enumerate() {
        table.push(vec![
            fmt_f64(hist.bin_edges[i]),
            fmt_f64(hist.bin_edges[i + 1]),
            count.to_string(),
        ]);
    }
    table
}

fn resolve_input(ctx: &CommandContext, input: Option<PathBuf>) -> CliResult<PathBuf> {
    input
        .or_else(|| ctx.config.fit.input.clone())
        .ok_or_else(|| CliError::config_invalid("no input CSV given (use --input or fit.input)"))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn nuclear_label(state: NuclearState) -> &'static str {
    match state {
        NuclearState::MPlus1 => "m_plus1",
        NuclearState::MOther => "m_other",
    }
}

fn charge_label(state: ChargeState) -> &'static str {
    match state {
        ChargeState::NvMinus => "nv_minus",
        ChargeState::NvZero => "nv_zero",
    }
}
