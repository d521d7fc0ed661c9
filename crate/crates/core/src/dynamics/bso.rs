use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::integrate::{default_dt_max, integrate_exact};
use super::{DriveField, DynamicsError, Frame, PulseSpec, StateVector};

/// P(phi) = offset [1 + depth sin(2 phi + phase)].
///
/// `depth` is the modulation depth, so the signal 1/2 [1 + 2 eta sin(...)]
/// has depth 2 eta.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FringeFit {
    pub offset: f64,
    pub depth: f64,
    pub phase: f64,
    pub rms_residual: f64,
}

/// Excited population after `pulse` from |0>, for each drive phase.
pub fn bso_scan(
    field_template: &DriveField,
    phases: &[f64],
    pulse: &PulseSpec,
) -> Result<Vec<(f64, f64)>, DynamicsError> {
    if phases.is_empty() {
        return Err(DynamicsError::EmptyScan);
    }
    pulse.validate(field_template.omega)?;
    if (pulse.area - PI / 2.0).abs() > 1e-12 {
        return Err(DynamicsError::InvalidPulse(format!(
            "scan needs a pi/2 pulse, got area {}",
            pulse.area
        )));
    }
    let t0 = field_template.t_on;
    let t1 = t0 + pulse.duration;
    let achieved = field_template.g0_integral(t1);
    if (achieved - pulse.area).abs() > 1e-9 * pulse.area {
        return Err(DynamicsError::InvalidPulse(format!(
            "field gives area {achieved} over the pulse, expected {}",
            pulse.area
        )));
    }
    let dt = default_dt_max(field_template.omega);
    phases
        .iter()
        .map(|&phi| {
            let field = field_template.with_phase(phi);
            let s0 = StateVector::ground(
                Frame::Rotating {
                    reference_phase: phi,
                },
                t0,
            );
            let s1 = integrate_exact(&s0, &field, t0, t1, dt)?;
            Ok((phi, s1.amplitudes[1].norm_sqr()))
        })
        .collect()
}

/// Least-squares fit of offset + c_s sin(2 phi) + c_c cos(2 phi).
pub fn fit_fringe(points: &[(f64, f64)]) -> Result<FringeFit, DynamicsError> {
    if points.len() < 3 {
        return Err(DynamicsError::EmptyScan);
    }
    let design = DMatrix::from_fn(points.len(), 3, |r, c| {
        let x = 2.0 * points[r].0;
        match c {
            0 => 1.0,
            1 => x.sin(),
            _ => x.cos(),
        }
    });
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| DynamicsError::InvalidPulse(format!("fringe fit failed: {e}")))?;
    let (b, cs, cc) = (coef[0], coef[1], coef[2]);
    let resid = &y - design * &coef;
    Ok(FringeFit {
        offset: b,
        depth: cs.hypot(cc) / b,
        phase: cc.atan2(cs),
        rms_residual: (resid.norm_squared() / points.len() as f64).sqrt(),
    })
}

/// `n` phases evenly spaced on [0, pi).
pub fn uniform_phases(n: usize) -> Vec<f64> {
    (0..n).map(|k| PI * k as f64 / n as f64).collect()
}
