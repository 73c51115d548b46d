//! NV charge-state photophysics.
//!
//! The charge state is a two-state continuous-time Markov chain: ionization
//! NV- -> NV0 and recombination NV0 -> NV-. Both are two-photon processes, so
//! the rates scale with the square of the illumination power; detected
//! fluorescence scales linearly. NV- is bright under orange illumination,
//! NV0 is dark (its zero-phonon line lies below the excitation wavelength),
//! which is what makes low-power orange light a non-destructive charge probe.
//!
//! Trajectories are simulated exactly (exponential waiting times between
//! switches); photon counts are Poisson with the piecewise time integral of
//! the state-dependent detection rate.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChargeState {
    NvMinus,
    NvZero,
}

impl ChargeState {
    fn flipped(self) -> Self {
        match self {
            ChargeState::NvMinus => ChargeState::NvZero,
            ChargeState::NvZero => ChargeState::NvMinus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IlluminationLabel {
    Green,
    Orange,
}

/// An illumination condition: which laser, and at what power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlluminationSetting {
    pub label: IlluminationLabel,
    /// Optical power (W), strictly positive.
    pub power: f64,
    /// Wavelength (nm), metadata only.
    pub wavelength_nm: f64,
}

impl IlluminationSetting {
    /// Low-power orange probe, 600 nm at 0.4 uW by default.
    pub fn orange(power: f64) -> Self {
        Self {
            label: IlluminationLabel::Orange,
            power,
            wavelength_nm: 600.0,
        }
    }

    /// Green reset/readout illumination, 532 nm.
    pub fn green(power: f64) -> Self {
        Self {
            label: IlluminationLabel::Green,
            power,
            wavelength_nm: 532.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.power.is_finite() || self.power <= 0.0 {
            return Err(Error::Domain(format!(
                "illumination power must be > 0, got {}",
                self.power
            )));
        }
        Ok(())
    }
}

/// Charge-switching coefficients of one illumination wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelCoefficients {
    /// Ionization rate per W^2 (1/(s W^2)); rate at power P is coeff * P^2.
    pub ionization_coeff: f64,
    /// Recombination rate per W^2 (1/(s W^2)).
    pub recombination_coeff: f64,
    /// Power (W) at which the defaults were calibrated; detection rates are
    /// quoted at this power and scale linearly away from it.
    pub reference_power: f64,
}

/// Charge-state rates and detected photon rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotophysicsConfig {
    pub orange: ChannelCoefficients,
    pub green: ChannelCoefficients,
    /// Detected photons/s from NV- at the orange reference power.
    pub bright_rate: f64,
    /// Detected photons/s from NV0 (includes background) at the same power.
    pub dark_rate: f64,
}

impl Default for PhotophysicsConfig {
    /// Defaults calibrated to the headline charge numbers: NV- lifetime of
    /// 600 ms under the 0.4 uW orange probe (recombination 5x slower, so the
    /// telegraph trace switches both ways), and a green steady state with the
    /// NV in its negative state 70% of the time.
    fn default() -> Self {
        let orange_ref = 0.4e-6;
        let orange_ion = (1.0 / 0.6) / (orange_ref * orange_ref);
        let green_ref = 50e-6;
        Self {
            orange: ChannelCoefficients {
                ionization_coeff: orange_ion,
                recombination_coeff: orange_ion / 5.0,
                reference_power: orange_ref,
            },
            green: ChannelCoefficients {
                ionization_coeff: 300.0 / (green_ref * green_ref),
                recombination_coeff: 700.0 / (green_ref * green_ref),
                reference_power: green_ref,
            },
            bright_rate: 20_000.0,
            dark_rate: 2_000.0,
        }
    }
}

impl PhotophysicsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("orange.ionization_coeff", self.orange.ionization_coeff),
            ("orange.recombination_coeff", self.orange.recombination_coeff),
            ("green.ionization_coeff", self.green.ionization_coeff),
            ("green.recombination_coeff", self.green.recombination_coeff),
            ("bright_rate", self.bright_rate),
            ("dark_rate", self.dark_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("orange.reference_power", self.orange.reference_power),
            ("green.reference_power", self.green.reference_power),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.bright_rate <= self.dark_rate {
            return Err(Error::Domain(format!(
                "bright_rate ({}) must exceed dark_rate ({})",
                self.bright_rate, self.dark_rate
            )));
        }
        Ok(())
    }

    fn channel(&self, label: IlluminationLabel) -> &ChannelCoefficients {
        match label {
            IlluminationLabel::Green => &self.green,
            IlluminationLabel::Orange => &self.orange,
        }
    }
}

/// (ionization, recombination) rates in 1/s under the given setting; both are
/// two-photon processes, quadratic in power.
pub fn charge_rates(config: &PhotophysicsConfig, setting: &IlluminationSetting) -> Result<(f64, f64)> {
    config.validate()?;
    setting.validate()?;
    let ch = config.channel(setting.label);
    let p2 = setting.power * setting.power;
    Ok((ch.ionization_coeff * p2, ch.recombination_coeff * p2))
}

/// Stationary NV- occupancy under the setting: recomb / (ioniz + recomb).
pub fn steady_state_nv_minus(
    config: &PhotophysicsConfig,
    setting: &IlluminationSetting,
) -> Result<f64> {
    let (ion, rec) = charge_rates(config, setting)?;
    if ion + rec <= 0.0 {
        return Err(Error::Domain(
            "steady state undefined: both charge rates are zero".into(),
        ));
    }
    Ok(rec / (ion + rec))
}

/// Detected photon rate (1/s) in a charge state; linear in power relative to
/// the orange reference.
pub fn emission_rate(
    config: &PhotophysicsConfig,
    setting: &IlluminationSetting,
    state: ChargeState,
) -> f64 {
    let scale = setting.power / config.orange.reference_power;
    match state {
        ChargeState::NvMinus => config.bright_rate * scale,
        ChargeState::NvZero => config.dark_rate * scale,
    }
}

/// A charge trajectory: segments of constant state covering `[0, duration)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeTrajectory {
    pub duration: f64,
    /// `(start_time, state)`, first entry starts at 0, strictly increasing.
    pub segments: Vec<(f64, ChargeState)>,
}

impl ChargeTrajectory {
    pub fn initial_state(&self) -> ChargeState {
        self.segments[0].1
    }

    pub fn final_state(&self) -> ChargeState {
        self.segments.last().expect("non-empty").1
    }

    /// Completed dwell times in `state` (the trailing, censored segment is
    /// excluded).
    pub fn completed_dwells(&self, state: ChargeState) -> Vec<f64> {
        let mut dwells = Vec::new();
        for w in self.segments.windows(2) {
            if w[0].1 == state {
                dwells.push(w[1].0 - w[0].0);
            }
        }
        dwells
    }

    /// Time spent in `state` inside the window `[from, to)`.
    fn occupancy_in(&self, state: ChargeState, from: f64, to: f64) -> f64 {
        let mut total = 0.0;
        for (i, &(start, s)) in self.segments.iter().enumerate() {
            let end = self
                .segments
                .get(i + 1)
                .map_or(self.duration, |next| next.0);
            if s == state {
                total += (end.min(to) - start.max(from)).max(0.0);
            }
        }
        total
    }

    /// Total time in `state` over the full trajectory.
    pub fn occupancy(&self, state: ChargeState) -> f64 {
        self.occupancy_in(state, 0.0, self.duration)
    }
}

/// Exact-event simulation of the charge telegraph process.
///
/// Dwell times are exponential with the state's exit rate; a zero exit rate
/// makes the state absorbing. `initial` defaults to a draw from the steady
/// state of the given setting.
pub fn simulate_charge_trajectory<R: Rng + ?Sized>(
    config: &PhotophysicsConfig,
    setting: &IlluminationSetting,
    duration: f64,
    rng: &mut R,
    initial: Option<ChargeState>,
) -> Result<ChargeTrajectory> {
    if !duration.is_finite() || duration <= 0.0 {
        return Err(Error::Domain(format!(
            "duration must be > 0, got {duration}"
        )));
    }
    let (ion, rec) = charge_rates(config, setting)?;
    let state0 = match initial {
        Some(s) => s,
        None => {
            let p_minus = steady_state_nv_minus(config, setting)?;
            if rng.random::<f64>() < p_minus {
                ChargeState::NvMinus
            } else {
                ChargeState::NvZero
            }
        }
    };

    let exit_rate = |s: ChargeState| match s {
        ChargeState::NvMinus => ion,
        ChargeState::NvZero => rec,
    };

    let mut segments = vec![(0.0, state0)];
    let mut t = 0.0;
    let mut state = state0;
    loop {
        let rate = exit_rate(state);
        if rate <= 0.0 {
            break;
        }
        t += Exp::new(rate).expect("rate > 0").sample(rng);
        if t >= duration {
            break;
        }
        state = state.flipped();
        segments.push((t, state));
    }
    Ok(ChargeTrajectory { duration, segments })
}

/// Binned photon counts of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceTrace {
    /// Bin width (s).
    pub bin_width: f64,
    pub counts: Vec<u64>,
    /// Majority charge state per bin, recorded for oracle tests.
    pub true_states: Option<Vec<ChargeState>>,
}

fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("mean > 0").sample(rng) as u64
}

/// Renders a trajectory into Poisson photon counts per bin. Bins crossing a
/// charge switch integrate the rate piecewise. Only whole bins are emitted;
/// a ragged tail shorter than `bin_width` is dropped.
pub fn render_trace<R: Rng + ?Sized>(
    trajectory: &ChargeTrajectory,
    config: &PhotophysicsConfig,
    setting: &IlluminationSetting,
    bin_width: f64,
    rng: &mut R,
    record_states: bool,
) -> Result<FluorescenceTrace> {
    config.validate()?;
    setting.validate()?;
    if !bin_width.is_finite() || bin_width <= 0.0 {
        return Err(Error::Domain(format!(
            "bin_width must be > 0, got {bin_width}"
        )));
    }
    let n_bins = (trajectory.duration / bin_width).floor() as usize;
    let mut counts = Vec::with_capacity(n_bins);
    let mut states = record_states.then(|| Vec::with_capacity(n_bins));
    for i in 0..n_bins {
        let (lo, hi) = (i as f64 * bin_width, (i + 1) as f64 * bin_width);
        let t_minus = trajectory.occupancy_in(ChargeState::NvMinus, lo, hi);
        let t_zero = (hi - lo) - t_minus;
        let mean = t_minus * emission_rate(config, setting, ChargeState::NvMinus)
            + t_zero * emission_rate(config, setting, ChargeState::NvZero);
        counts.push(sample_poisson(rng, mean));
        if let Some(states) = states.as_mut() {
            states.push(if t_minus >= t_zero {
                ChargeState::NvMinus
            } else {
                ChargeState::NvZero
            });
        }
    }
    Ok(FluorescenceTrace {
        bin_width,
        counts,
        true_states: states,
    })
}

/// One charge-state measurement pulse: simulates the trajectory over the
/// pulse, integrates the emitted photons, and reports the true final state.
pub fn charge_measurement<R: Rng + ?Sized>(
    config: &PhotophysicsConfig,
    setting: &IlluminationSetting,
    pulse_duration: f64,
    rng: &mut R,
    initial: ChargeState,
) -> Result<(u64, ChargeState)> {
    let traj = simulate_charge_trajectory(config, setting, pulse_duration, rng, Some(initial))?;
    let mean = traj.occupancy(ChargeState::NvMinus)
        * emission_rate(config, setting, ChargeState::NvMinus)
        + traj.occupancy(ChargeState::NvZero) * emission_rate(config, setting, ChargeState::NvZero);
    Ok((sample_poisson(rng, mean), traj.final_state()))
}
