//! Entanglement-based phase transfer between two remote oscillators.
//!
//! Alice and Bob share singlet pairs on degenerate ground levels, lift the
//! |1> component to |2> with weak RWA pulses, then Alice measures in a basis
//! built from a strong non-RWA pulse. Her index list lets Bob post-select a
//! subset whose statistics depend on sin(2 phi) at order eta.

mod estimate;
mod joint;
mod measure;
mod run;

use std::f64::consts::PI;
use std::sync::OnceLock;

pub use estimate::{
    estimate_phase, phase_distance_mod_pi, recover_phase, PhaseEstimate, PhaseRecovery,
};
pub use joint::{
    apply_pi_pulse_12, make_singlet, pi_pulse_12_operator, JointState, Matrix3c, Side,
};
pub use measure::{
    alice_measure_plus, bob_measure, AliceMeasurement, BobMeasurement, BobReadout, MeasurementMode,
    MeasurementPulse, Projection,
};
pub use run::{
    derive_seed, excited_pair, next_grid_time, pair_rng, run_protocol, run_unconditional,
    MeasurementLedger, PairOutcome, RunPlan, UnconditionalStats,
};

use crate::channel::ChannelError;
use crate::dynamics::{DriveField, DynamicsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("pi pulse on 1-2 requires an attenuated (RWA) field")]
    RwaFlagMissing,
    #[error("state has weight {weight:.3e} outside span{{|0>,|2>}} on both sides")]
    WrongStateShape { weight: f64 },
    #[error("channel closed")]
    ChannelClosed,
    #[error("no pair passed Alice's post-selection")]
    EmptyPostSelection,
    #[error("both runs sit exactly at one half; the phase is undefined")]
    PhaseUndefined,
    #[error("state norm {norm} deviates from 1 by more than 1e-9")]
    NotNormalized { norm: f64 },
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
    #[error("no integer m in (1/(8 eta), 1/(4 eta)) for eta = {eta}")]
    NoReversibleMeasurement { eta: f64 },
    #[error("measurement pulse calibration failed (residual {residual:.3e})")]
    CalibrationFailed { residual: f64 },
    #[error("index list names pair {index}, beyond the run")]
    IndexOutOfRange { index: u64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Channel(ChannelError),
}

impl From<ChannelError> for ProtocolError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::Closed => ProtocolError::ChannelClosed,
            other => ProtocolError::Channel(other),
        }
    }
}

/// Default weak-pulse coupling, in units of omega.
pub const WEAK_G0M: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    /// Alice's oscillator; its phase is phi.
    pub alice_field: DriveField,
    /// Bob's oscillator; its phase is chi.
    pub bob_field: DriveField,
    pub eta_measure: f64,
    pub pairs: usize,
    pub seed: u64,
    /// Alice's phase shift before the second run. pi/4 turns sin(2 phi) into cos(2 phi).
    pub phase_offset_run2: f64,
    pub mode: MeasurementMode,
    pub bob_readout: BobReadout,
    pub retry_cap: u32,
    measurement: OnceLock<MeasurementPulse>,
}

impl ProtocolConfig {
    pub fn new(phi: f64, chi: f64, eta_measure: f64, pairs: usize, seed: u64) -> Self {
        ProtocolConfig {
            alice_field: DriveField::step(WEAK_G0M, 1.0, phi).attenuated(),
            bob_field: DriveField::step(WEAK_G0M, 1.0, chi).attenuated(),
            eta_measure,
            pairs,
            seed,
            phase_offset_run2: PI / 4.0,
            mode: MeasurementMode::Projective,
            bob_readout: BobReadout::Ground,
            retry_cap: 16,
            measurement: OnceLock::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.pairs < 1 {
            return Err(ProtocolError::InvalidConfig("pairs must be ≥ 1".into()));
        }
        if !(self.eta_measure > 0.0 && self.eta_measure < 0.25) {
            return Err(ProtocolError::InvalidConfig(format!(
                "eta_measure must lie in (0, 0.25), got {}",
                self.eta_measure
            )));
        }
        self.alice_field.validate()?;
        self.bob_field.validate()?;
        if self.alice_field.omega != self.bob_field.omega {
            return Err(ProtocolError::InvalidConfig(
                "protocol runs need equal oscillator frequencies; use the locking module for mismatch".into(),
            ));
        }
        if !self.phase_offset_run2.is_finite() {
            return Err(ProtocolError::InvalidConfig(
                "phase_offset_run2 must be finite".into(),
            ));
        }
        Ok(())
    }

    /// The calibrated strong measurement pulse, designed once per config.
    pub fn measurement_pulse(&self) -> Result<MeasurementPulse, ProtocolError> {
        if let Some(p) = self.measurement.get() {
            return Ok(*p);
        }
        let p = MeasurementPulse::calibrated(self.eta_measure, self.alice_field.omega)?;
        Ok(*self.measurement.get_or_init(|| p))
    }

    /// Use a given pulse instead of designing one.
    pub fn with_measurement(mut self, pulse: MeasurementPulse) -> Self {
        self.eta_measure = pulse.eta;
        self.measurement = OnceLock::from(pulse);
        self
    }

    pub fn with_mode(mut self, mode: MeasurementMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_bob_readout(mut self, readout: BobReadout) -> Self {
        self.bob_readout = readout;
        self
    }

    /// Both weak pi pulses complete here (the slower of the two).
    pub fn pi_pulse_end(&self) -> f64 {
        let a = self.alice_field.pulse_duration(PI).unwrap_or(f64::INFINITY);
        let b = self.bob_field.pulse_duration(PI).unwrap_or(f64::INFINITY);
        a.max(b)
    }
}
