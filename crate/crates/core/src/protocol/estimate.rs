use std::f64::consts::PI;

use serde::Serialize;

use super::run::{derive_seed, run_protocol, MeasurementLedger};
use super::{ProtocolConfig, ProtocolError, Side};
use crate::channel::{Channel, MessageKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhaseEstimate {
    pub sin2phi_hat: f64,
    pub cos2phi_hat: f64,
    pub phi_mod_pi: f64,
    /// Propagated standard error of phi_mod_pi.
    pub stderr: f64,
    pub sin_stderr: f64,
    pub cos_stderr: f64,
}

fn binomial_stderr(ledger: &MeasurementLedger) -> f64 {
    let f = ledger.l as f64 / ledger.m as f64;
    (f * (1.0 - f) / ledger.m as f64).sqrt()
}

/// phi mod pi from a sin(2 phi) run and a cos(2 phi) run.
pub fn estimate_phase(
    ledger_sin: &MeasurementLedger,
    ledger_cos: &MeasurementLedger,
    eta: f64,
) -> Result<PhaseEstimate, ProtocolError> {
    let (Some(zs), Some(zc)) = (ledger_sin.zeta_raw, ledger_cos.zeta_raw) else {
        return Err(ProtocolError::EmptyPostSelection);
    };
    let s = zs / eta;
    let c = zc / eta;
    let ss = binomial_stderr(ledger_sin) / eta;
    let sc = binomial_stderr(ledger_cos) / eta;
    // with eta known the true (sin, cos) lies on the unit circle; linearize there
    let r = s.hypot(c);
    if !(r > 0.0) {
        return Err(ProtocolError::PhaseUndefined);
    }
    let (u, v) = (s / r, c / r);
    let stderr = 0.5 * (v * v * ss * ss + u * u * sc * sc).sqrt();
    Ok(PhaseEstimate {
        sin2phi_hat: s,
        cos2phi_hat: c,
        phi_mod_pi: (0.5 * s.atan2(c)).rem_euclid(PI),
        stderr,
        sin_stderr: ss,
        cos_stderr: sc,
    })
}

/// Distance between two angles modulo pi.
pub fn phase_distance_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseRecovery {
    pub sin_run: MeasurementLedger,
    pub cos_run: MeasurementLedger,
    pub estimate: PhaseEstimate,
}

/// Two protocol runs; between them Alice announces and applies her phase shift.
pub fn recover_phase(
    config: &ProtocolConfig,
    channel: &mut Channel,
) -> Result<PhaseRecovery, ProtocolError> {
    let sin_run = run_protocol(config, channel)?;
    let offset = config.phase_offset_run2;
    channel.send_reliably(
        Side::Alice,
        MessageKind::PhaseShiftAnnounce(offset),
        config.retry_cap,
    )?;
    let mut second = config.clone();
    second.alice_field = config.alice_field.shifted(offset);
    second.seed = derive_seed(config.seed, 2);
    let cos_run = run_protocol(&second, channel)?;
    let estimate = estimate_phase(&sin_run, &cos_run, config.eta_measure)?;
    Ok(PhaseRecovery {
        sin_run,
        cos_run,
        estimate,
    })
}
