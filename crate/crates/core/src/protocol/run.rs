use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::joint::{apply_pi_pulse_12, make_singlet, JointState, Side};
use super::measure::{AliceMeasurement, BobMeasurement, Projection};
use super::{ProtocolConfig, ProtocolError};
use crate::channel::{Channel, MessageKind};

const ALICE_STREAM: u64 = 0xA11CE;
const BOB_STREAM: u64 = 0xB0B;

/// Independent seed for a named sub-purpose of `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tag);
    r.next_u64()
}

/// Deterministic per-pair random stream for one party.
pub fn pair_rng(seed: u64, side: Side, pair: u64) -> ChaCha8Rng {
    let tag = match side {
        Side::Alice => ALICE_STREAM,
        Side::Bob => BOB_STREAM,
    };
    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    r.set_stream(pair);
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub alice_found_plus: bool,
    pub bob_outcome: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasurementLedger {
    pub per_pair: Vec<PairOutcome>,
    pub m: usize,
    pub l: usize,
    /// L/M - 1/2; None when M = 0.
    pub zeta_raw: Option<f64>,
    /// eta used to normalize zeta.
    pub eta: f64,
    /// Born probabilities the draws were made with.
    pub alice_probability: f64,
    pub bob_probability: f64,
    pub alice_start: f64,
    pub bob_start: f64,
}

impl MeasurementLedger {
    pub fn from_outcomes(per_pair: Vec<PairOutcome>, eta: f64) -> Self {
        let m = per_pair.iter().filter(|p| p.alice_found_plus).count();
        let l = per_pair
            .iter()
            .filter(|p| p.alice_found_plus && p.bob_outcome == Some(true))
            .count();
        let zeta_raw = (m > 0).then(|| l as f64 / m as f64 - 0.5);
        MeasurementLedger {
            per_pair,
            m,
            l,
            zeta_raw,
            eta,
            alice_probability: f64::NAN,
            bob_probability: f64::NAN,
            alice_start: f64::NAN,
            bob_start: f64::NAN,
        }
    }

    /// zeta_raw / eta, the estimate of sin(2 phi).
    pub fn zeta_normalized(&self) -> Option<f64> {
        self.zeta_raw.map(|z| z / self.eta)
    }

    pub fn pairs(&self) -> usize {
        self.per_pair.len()
    }
}

/// Next start time at or after `t` on the half-period grid, where the
/// absolute clock origin sits. Measuring on the grid makes the effective
/// phase equal the oscillator phase modulo pi.
pub fn next_grid_time(t: f64, omega: f64) -> f64 {
    let half = PI / omega;
    (t / half).ceil() * half
}

/// Singlet with both weak pi pulses applied.
pub fn excited_pair(config: &ProtocolConfig) -> Result<JointState, ProtocolError> {
    let t = config.pi_pulse_end();
    let s = apply_pi_pulse_12(&make_singlet(), Side::Alice, &config.alice_field, t)?;
    apply_pi_pulse_12(&s, Side::Bob, &config.bob_field, t)
}

/// Alice's measurement branches and Bob's start time, shared by all pairs
/// (every pair is prepared identically).
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub alice_start: f64,
    pub projection: Projection,
}

impl RunPlan {
    pub fn new(config: &ProtocolConfig, alice_start: f64) -> Result<Self, ProtocolError> {
        let state = excited_pair(config)?;
        let projection =
            AliceMeasurement::prepare(config, alice_start)?.project(&state, config.mode)?;
        Ok(RunPlan {
            alice_start,
            projection,
        })
    }

    fn alice_done(&self, config: &ProtocolConfig) -> Result<f64, ProtocolError> {
        Ok(self.alice_start + config.measurement_pulse()?.duration)
    }
}

/// The full exchange: pi pulses, completion notices, Alice's measurement,
/// her index list, and Bob's measurement of the listed pairs only.
pub fn run_protocol(
    config: &ProtocolConfig,
    channel: &mut Channel,
) -> Result<MeasurementLedger, ProtocolError> {
    config.validate()?;
    if !channel.is_open() {
        return Err(ProtocolError::ChannelClosed);
    }
    let omega = config.alice_field.omega;
    channel.advance_to(config.pi_pulse_end());
    channel.send_reliably(
        Side::Alice,
        MessageKind::ExcitationComplete,
        config.retry_cap,
    )?;
    channel.send_reliably(Side::Bob, MessageKind::ExcitationComplete, config.retry_cap)?;

    let plan = RunPlan::new(config, next_grid_time(channel.now(), omega))?;
    let p_alice = plan.projection.probability;
    let mut successes = Vec::new();
    let mut per_pair: Vec<PairOutcome> = (0..config.pairs as u64)
        .map(|i| {
            let found = pair_rng(config.seed, Side::Alice, i).random::<f64>() < p_alice;
            if found {
                successes.push(i);
            }
            PairOutcome {
                alice_found_plus: found,
                bob_outcome: None,
            }
        })
        .collect();

    channel.advance_to(plan.alice_done(config)?);
    let delivered = channel.send_reliably(
        Side::Alice,
        MessageKind::IndexList(successes),
        config.retry_cap,
    )?;
    let MessageKind::IndexList(listed) = delivered.kind else {
        unreachable!("send_reliably returns the message it was given");
    };

    let bob_start = next_grid_time(channel.now(), omega);
    let bob = BobMeasurement::prepare(config, bob_start)?;
    let p_bob = bob.success_probability(&plan.projection.success)?;
    for &i in &listed {
        let slot = per_pair
            .get_mut(i as usize)
            .ok_or(ProtocolError::IndexOutOfRange { index: i })?;
        slot.bob_outcome = Some(pair_rng(config.seed, Side::Bob, i).random::<f64>() < p_bob);
    }
    channel.advance_to(bob_start);

    let mut ledger = MeasurementLedger::from_outcomes(per_pair, config.eta_measure);
    ledger.alice_probability = p_alice;
    ledger.bob_probability = p_bob;
    ledger.alice_start = plan.alice_start;
    ledger.bob_start = bob_start;
    Ok(ledger)
}

/// Bob's statistics when he ignores Alice's list and measures every pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UnconditionalStats {
    pub pairs: usize,
    pub bob_successes: usize,
    /// Exact unconditional probability of Bob's outcome.
    pub probability: f64,
}

impl UnconditionalStats {
    pub fn frequency(&self) -> f64 {
        self.bob_successes as f64 / self.pairs as f64
    }
}

/// Draw Alice's outcome, then Bob's outcome in whichever branch occurred.
pub fn run_unconditional(config: &ProtocolConfig) -> Result<UnconditionalStats, ProtocolError> {
    config.validate()?;
    let omega = config.alice_field.omega;
    let plan = RunPlan::new(config, next_grid_time(config.pi_pulse_end(), omega))?;
    let bob = BobMeasurement::prepare(config, next_grid_time(plan.alice_done(config)?, omega))?;
    let p_a = plan.projection.probability;
    let p_s = bob.success_probability(&plan.projection.success)?;
    let p_f = bob.success_probability(&plan.projection.failure)?;
    let bob_successes = (0..config.pairs as u64)
        .filter(|&i| {
            let found = pair_rng(config.seed, Side::Alice, i).random::<f64>() < p_a;
            let p = if found { p_s } else { p_f };
            pair_rng(config.seed, Side::Bob, i).random::<f64>() < p
        })
        .count();
    Ok(UnconditionalStats {
        pairs: config.pairs,
        bob_successes,
        probability: p_a * p_s + (1.0 - p_a) * p_f,
    })
}
