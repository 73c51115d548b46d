//! Run configuration: one strict JSON document with per-command sections.
//!
//! Unknown keys are rejected and every value is validated before any
//! computation starts. Missing sections fall back to the paper-calibrated
//! defaults, so the binary is usable without a config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tbi_core::dynamics::RabiParams;
use tbi_core::protocol::ExperimentConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Worker threads for shot-level parallelism. Runtime-only: it never
    /// affects results and is excluded from the config hash.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub experiment: ExperimentConfig,
    pub bell_curve: BellCurveConfig,
    pub critical_noise: CriticalNoiseConfig,
    pub rabi_scan: RabiScanConfig,
    pub tbi_point: TbiPointConfig,
    pub trace: TraceConfig,
    pub histogram: HistogramConfig,
    pub charge_histogram: ChargeHistogramConfig,
    pub dwell_times: DwellTimesConfig,
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            workers: 1,
            output_dir: PathBuf::from("out"),
            experiment: ExperimentConfig::paper_default(),
            bell_curve: BellCurveConfig::default(),
            critical_noise: CriticalNoiseConfig::default(),
            rabi_scan: RabiScanConfig::default(),
            tbi_point: TbiPointConfig::default(),
            trace: TraceConfig::default(),
            histogram: HistogramConfig::default(),
            charge_histogram: ChargeHistogramConfig::default(),
            dwell_times: DwellTimesConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&raw)
            .map_err(|e| CliError::config_invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.workers == 0 {
            return Err(CliError::config_invalid("workers must be >= 1"));
        }
        self.experiment.validate().map_err(CliError::from)?;
        self.bell_curve.validate()?;
        self.critical_noise.validate()?;
        self.rabi_scan.validate()?;
        self.tbi_point.validate()?;
        self.trace.validate()?;
        self.histogram.validate()?;
        self.charge_histogram.validate()?;
        self.dwell_times.validate()?;
        Ok(())
    }

    /// SHA-256 over the result-determining part of the configuration.
    /// `workers` and `output_dir` are scheduling/placement concerns and are
    /// pinned to fixed values before hashing, so runs that differ only in
    /// them carry the same identity.
    pub fn science_hash(&self) -> String {
        let mut identity = self.clone();
        identity.workers = 1;
        identity.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&identity).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Time-grid units: absolute seconds, or the dimensionless product
/// `omega * t` (the natural axis when no absolute Rabi frequency is given).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridUnits {
    Seconds,
    OmegaT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub units: GridUnits,
}

impl GridConfig {
    /// Evenly spaced grid including both endpoints, converted to seconds.
    pub fn build(&self, omega: f64) -> CliResult<Vec<f64>> {
        if self.points == 0 {
            return Err(CliError::grid_empty("grid has zero points"));
        }
        let scale = match self.units {
            GridUnits::Seconds => 1.0,
            GridUnits::OmegaT => 1.0 / omega,
        };
        if !(self.start.is_finite() && self.stop.is_finite())
            || self.start < 0.0
            || self.stop < self.start
        {
            return Err(CliError::config_invalid(format!(
                "grid range [{}, {}] invalid",
                self.start, self.stop
            )));
        }
        if self.points == 1 {
            return Ok(vec![self.start * scale]);
        }
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| (self.start + step * i as f64) * scale)
            .collect())
    }

    fn validate(&self) -> CliResult<()> {
        if self.points == 0 {
            return Err(CliError::grid_empty("grid has zero points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellCurveConfig {
    /// Noise-free reference parameters.
    pub ideal: RabiParams,
    /// Damped comparison parameters.
    pub damped: RabiParams,
    pub grid: GridConfig,
}

impl Default for BellCurveConfig {
    fn default() -> Self {
        let omega = std::f64::consts::TAU * 1.0e4;
        Self {
            ideal: RabiParams {
                omega,
                gamma_phi: 0.0,
                gamma_1: 0.0,
            },
            damped: RabiParams {
                omega,
                gamma_phi: 0.2 * omega,
                gamma_1: 0.0,
            },
            grid: GridConfig {
                start: 1e-4,
                stop: std::f64::consts::TAU,
                points: 2000,
                units: GridUnits::OmegaT,
            },
        }
    }
}

impl BellCurveConfig {
    fn validate(&self) -> CliResult<()> {
        self.ideal.validate()?;
        self.damped.validate()?;
        self.grid.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticalNoiseConfig {
    pub omega: f64,
    /// Relative tolerance on `gamma*/omega`.
    pub tol: f64,
}

impl Default for CriticalNoiseConfig {
    fn default() -> Self {
        Self {
            omega: std::f64::consts::TAU * 1.0e4,
            tol: 1e-6,
        }
    }
}

impl CriticalNoiseConfig {
    fn validate(&self) -> CliResult<()> {
        if !(self.omega.is_finite() && self.omega > 0.0 && self.tol.is_finite() && self.tol > 0.0)
        {
            return Err(CliError::config_invalid("critical_noise needs omega > 0, tol > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiScanConfig {
    pub grid: GridConfig,
    pub shots_per_point: u64,
}

impl Default for RabiScanConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig {
                start: 0.0,
                stop: std::f64::consts::TAU,
                points: 25,
                units: GridUnits::OmegaT,
            },
            shots_per_point: 20_000,
        }
    }
}

impl RabiScanConfig {
    fn validate(&self) -> CliResult<()> {
        self.grid.validate()
    }
}

/// Shot budget for a high-accuracy point: fixed counts, or planned from a
/// target error via a pilot run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShotPlan {
    Fixed { n_t: u64, n_2t: u64 },
    TargetStderr { target: f64, pilot_shots: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TbiPointConfig {
    /// Evaluation time of the bound.
    pub t: f64,
    pub units: GridUnits,
    pub shots: ShotPlan,
    /// Also write the per-shot CSV (can be large).
    pub write_shots: bool,
}

impl Default for TbiPointConfig {
    fn default() -> Self {
        Self {
            // The measured minimizer of the fitted bound curve.
            t: 1.242,
            units: GridUnits::OmegaT,
            shots: ShotPlan::TargetStderr {
                target: 0.0039,
                pilot_shots: 20_000,
            },
            write_shots: true,
        }
    }
}

impl TbiPointConfig {
    fn validate(&self) -> CliResult<()> {
        if !self.t.is_finite() || self.t <= 0.0 {
            return Err(CliError::config_invalid("tbi_point.t must be > 0"));
        }
        match self.shots {
            ShotPlan::Fixed { n_t, n_2t } if n_t == 0 || n_2t == 0 => {
                Err(CliError::config_invalid("tbi_point shot counts must be > 0"))
            }
            ShotPlan::TargetStderr { target, pilot_shots } if target <= 0.0 || pilot_shots == 0 => {
                Err(CliError::config_invalid("tbi_point target plan invalid"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingChoice {
    Orange,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub setting: SettingChoice,
    /// Optional power override (W); defaults to the experiment's setting.
    pub power: Option<f64>,
    pub duration: f64,
    pub bin_width: f64,
    pub record_true_states: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            setting: SettingChoice::Orange,
            power: None,
            duration: 60.0,
            bin_width: 0.01,
            record_true_states: true,
        }
    }
}

impl TraceConfig {
    fn validate(&self) -> CliResult<()> {
        if self.duration <= 0.0 || self.bin_width <= 0.0 {
            return Err(CliError::config_invalid("trace duration and bin_width must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub shots: u64,
    pub bin_width: u64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            shots: 20_000,
            bin_width: 1,
        }
    }
}

impl HistogramConfig {
    fn validate(&self) -> CliResult<()> {
        if self.shots == 0 || self.bin_width == 0 {
            return Err(CliError::config_invalid("histogram shots and bin_width must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChargeHistogramConfig {
    pub shots: u64,
    pub bin_width: u64,
}

impl Default for ChargeHistogramConfig {
    fn default() -> Self {
        Self {
            shots: 50_000,
            bin_width: 2,
        }
    }
}

impl ChargeHistogramConfig {
    fn validate(&self) -> CliResult<()> {
        if self.shots == 0 || self.bin_width == 0 {
            return Err(CliError::config_invalid(
                "charge_histogram shots and bin_width must be > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DwellTimesConfig {
    /// Trace CSV to segment; when absent, a trace is simulated from the
    /// `trace` section first.
    pub input: Option<PathBuf>,
    /// Count threshold; when absent it is derived from a mixture fit of the
    /// binned counts.
    pub threshold: Option<u64>,
    pub min_run_bins: usize,
}

impl Default for DwellTimesConfig {
    fn default() -> Self {
        Self {
            input: None,
            threshold: None,
            min_run_bins: 3,
        }
    }
}

impl DwellTimesConfig {
    fn validate(&self) -> CliResult<()> {
        if self.min_run_bins == 0 {
            return Err(CliError::config_invalid("dwell_times.min_run_bins must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Input CSV; may also be given as `--input` on the command line.
    pub input: Option<PathBuf>,
    /// Free the exponential decay of the cosine model.
    pub fit_decay: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            input: None,
            fit_decay: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"master_seed": 1, "bogus": 2}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
        // Nested sections are strict too.
        assert!(serde_json::from_str::<RunConfig>(
            r#"{"experiment": {"unknown_field": 1}}"#
        )
        .is_err());
    }

    #[test]
    fn science_hash_ignores_workers_and_output_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.workers = 8;
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.science_hash(), b.science_hash());
        let mut c = a.clone();
        c.master_seed = 1;
        assert_ne!(a.science_hash(), c.science_hash());
    }

    #[test]
    fn grid_builds_in_both_units() {
        let grid = GridConfig {
            start: 0.0,
            stop: 2.0,
            points: 5,
            units: GridUnits::OmegaT,
        };
        let secs = grid.build(2.0).unwrap();
        assert_eq!(secs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let empty = GridConfig {
            points: 0,
            ..grid
        };
        assert_eq!(empty.build(2.0).unwrap_err().code, "GRID_EMPTY");
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.experiment.baseline_shift = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.workers = 0;
        assert!(cfg.validate().is_err());
    }
}
