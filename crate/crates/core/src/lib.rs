//! Desk-scale simulator for a temporal-correlation test on a single nuclear
//! spin read out through an NV center.
//!
//! The crate is organized around the experiment it reproduces:
//!
//! - [`dynamics`]: closed-form and numerically integrated two-level dynamics,
//!   the bound functional `B(t) = Q(0,2t) - Q(0,t)^2`, and the noise level at
//!   which its violation disappears.
//! - [`photophysics`]: the NV charge-state telegraph process under
//!   illumination and the photon streams it emits.
//! - [`readout`]: repetitive nuclear-spin readout, photon-count histograms,
//!   thresholds and assignment fidelities.
//! - [`protocol`]: the four-step shot sequence (initialize, charge check,
//!   drive, final readout) with post-selection and error estimation.
//! - [`analysis`]: cosine fits, Poisson-mixture fits, dwell-time extraction.
//!
//! All stochastic operations take an explicit RNG; [`rng::Seeder`] derives
//! independent, reproducible streams from a master seed so results do not
//! depend on scheduling or worker count.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod photophysics;
pub mod protocol;
pub mod readout;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
