use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::joint::{check_normalized, JointState, Matrix3c, Side};
use super::{ProtocolConfig, ProtocolError};
use crate::dynamics::{
    bisect, default_dt_max, propagator, rotating_to_lab, DriveField, Frame, Matrix2c,
};

/// Strong, non-RWA pi/2 pulse used for readout, shaped to satisfy the
/// reversal condition: duration m pi/omega with an exponential switch-on.
///
/// m is the largest integer in (1/(8 eta), 1/(4 eta)). That window is where a
/// pi/2 area and an end-of-pulse eta(T) = `eta` are compatible. Choosing the
/// largest m keeps the ramp slowest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPulse {
    pub eta: f64,
    pub omega: f64,
    pub m: u32,
    pub duration: f64,
    pub g0m: f64,
    pub tau_sw: f64,
    /// g0M rescaled so the phase-averaged transfer is exactly one half.
    pub calibrated: bool,
}

impl MeasurementPulse {
    /// Nominal design: area exactly pi/2 by the envelope integral.
    pub fn design(eta: f64, omega: f64) -> Result<Self, ProtocolError> {
        if !(eta > 0.0 && eta < 0.25) || !(omega > 0.0) {
            return Err(ProtocolError::InvalidConfig(format!(
                "eta_measure must lie in (0, 0.25), got {eta}"
            )));
        }
        let lo = 1.0 / (8.0 * eta);
        let hi = 1.0 / (4.0 * eta);
        let m = (hi.ceil() - 1.0).max(0.0);
        if !(m > lo) || m > u32::MAX as f64 {
            return Err(ProtocolError::NoReversibleMeasurement { eta });
        }
        let m = m as u32;
        let target = 1.0 / (8.0 * eta * m as f64);
        // h(u) = [1 - (1 - e^{-u})/u] / (1 - e^{-u}) rises from 1/2 to 1
        let h = |u: f64| {
            let k = -(-u).exp_m1();
            // u - k by series where it cancels
            let num = if u < 1e-2 {
                u * u * (0.5 - u * (1.0 / 6.0 - u * (1.0 / 24.0 - u / 120.0)))
            } else {
                u - k
            };
            num / (u * k)
        };
        let u = bisect(|u| h(u) - target, 1e-12, 1e4)?;
        let duration = m as f64 * PI / omega;
        let g0m = 4.0 * eta * omega / -(-u).exp_m1();
        Ok(MeasurementPulse {
            eta,
            omega,
            m,
            duration,
            g0m,
            tau_sw: duration / u,
            calibrated: false,
        })
    }

    /// Design with g0M fine-tuned so the transfer averaged over drive phases
    /// (0, pi/4, pi/2, 3pi/4) is exactly 1/2. Removes the O(eta^2) offset the
    /// counter-rotating term adds to the nominal pi/2 pulse.
    pub fn calibrated(eta: f64, omega: f64) -> Result<Self, ProtocolError> {
        let nominal = MeasurementPulse::design(eta, omega)?;
        let mean_transfer = |scale: f64| -> Result<f64, ProtocolError> {
            let p = MeasurementPulse {
                g0m: nominal.g0m * scale,
                ..nominal
            };
            let mut acc = 0.0;
            for k in 0..4 {
                let u = p.lab_unitary(k as f64 * PI / 4.0, 0.0)?;
                acc += u[(0, 1)].norm_sqr();
            }
            Ok(acc / 4.0 - 0.5)
        };
        // first step from d/ds sin^2(s pi/4) = pi/4 at s = 1, then secant
        let (mut s0, mut f0) = (1.0, mean_transfer(1.0)?);
        let mut s1 = 1.0 - f0 / (PI / 4.0);
        if s1 == s0 {
            s1 += 1e-9;
        }
        let mut f1 = mean_transfer(s1)?;
        for _ in 0..40 {
            if f1.abs() < 1e-14 || f1 == f0 {
                break;
            }
            let s2 = s1 - f1 * (s1 - s0) / (f1 - f0);
            s0 = s1;
            f0 = f1;
            s1 = s2;
            f1 = mean_transfer(s1)?;
        }
        if !(f1.abs() < 1e-10) {
            return Err(ProtocolError::CalibrationFailed { residual: f1 });
        }
        Ok(MeasurementPulse {
            g0m: nominal.g0m * s1,
            calibrated: true,
            ..nominal
        })
    }

    /// The oscillator's field with phase advanced by pi, switched on at `t_start`.
    pub fn field(&self, oscillator_phase: f64, t_start: f64) -> DriveField {
        DriveField::exp_switch(self.g0m, self.omega, oscillator_phase + PI, self.tau_sw)
            .starting_at(t_start)
    }

    /// eta at the end of the pulse.
    pub fn readout_eta(&self) -> f64 {
        self.field(0.0, 0.0).eta_at(self.duration)
    }

    /// Lab-frame map on (|0>, |2>) from `t_start` to `t_start + duration`.
    pub fn lab_unitary(
        &self,
        oscillator_phase: f64,
        t_start: f64,
    ) -> Result<Matrix2c, ProtocolError> {
        let f = self.field(oscillator_phase, t_start);
        let t1 = t_start + self.duration;
        let frame = Frame::Rotating {
            reference_phase: oscillator_phase,
        };
        let u = propagator(&f, frame, t_start, t1, default_dt_max(self.omega))?;
        Ok(rotating_to_lab(
            &u,
            self.omega,
            oscillator_phase,
            t_start,
            t1,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasurementMode {
    /// Project directly onto the measured state.
    Projective,
    /// Run the reversed pulse on the atom, then detect |0>.
    Operational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BobReadout {
    /// Detect |0>_B directly.
    Ground,
    /// Bob's own reversed pulse, then detect |2>_B.
    Reversed,
}

/// Outcome branches of a two-outcome measurement on one pair.
#[derive(Clone, Debug)]
pub struct Projection {
    pub probability: f64,
    pub success: JointState,
    pub failure: JointState,
}

fn embed(u: &Matrix2c) -> Matrix3c {
    let mut m = Matrix3c::zeros();
    m[(0, 0)] = u[(0, 0)];
    m[(0, 2)] = u[(0, 1)];
    m[(2, 0)] = u[(1, 0)];
    m[(2, 2)] = u[(1, 1)];
    m[(1, 1)] = Complex64::new(1.0, 0.0);
    m
}

fn check_shape(state: &JointState) -> Result<(), ProtocolError> {
    check_normalized(state)?;
    let w = state.weight_outside_02();
    if w > 1e-12 {
        return Err(ProtocolError::WrongStateShape { weight: w });
    }
    Ok(())
}

fn split(state: &JointState, side: Side, level: usize) -> (f64, JointState, JointState) {
    let mut keep = JointState::zero(state.t);
    let mut rest = JointState::zero(state.t);
    for a in 0..3 {
        for b in 0..3 {
            let l = if side == Side::Alice { a } else { b };
            let target = if l == level { &mut keep } else { &mut rest };
            target.set(a, b, state.amplitude(a, b));
        }
    }
    let p = keep.norm_sqr();
    (p, keep, rest)
}

fn normalize_or_zero(s: JointState) -> JointState {
    if s.norm_sqr() > 0.0 {
        s.normalized()
    } else {
        s
    }
}

/// Alice's |+> measurement at one start time, with her oscillator's phase.
#[derive(Clone, Debug)]
pub struct AliceMeasurement {
    pub pulse: MeasurementPulse,
    pub t_start: f64,
    unitary: Matrix2c,
}

impl AliceMeasurement {
    pub fn prepare(config: &ProtocolConfig, t_start: f64) -> Result<Self, ProtocolError> {
        let pulse = config.measurement_pulse()?;
        AliceMeasurement::with_pulse(pulse, config.alice_field.phi, t_start)
    }

    pub fn with_pulse(
        pulse: MeasurementPulse,
        phase: f64,
        t_start: f64,
    ) -> Result<Self, ProtocolError> {
        let unitary = pulse.lab_unitary(phase, t_start)?;
        Ok(AliceMeasurement {
            pulse,
            t_start,
            unitary,
        })
    }

    /// Lab-frame |+>_A at `t_start`: the state the reversed pulse carries to |0>.
    pub fn plus_state(&self) -> [Complex64; 3] {
        let u = &self.unitary;
        [u[(0, 0)].conj(), Complex64::new(0.0, 0.0), u[(0, 1)].conj()]
    }

    /// Orthogonal partner, carried to |2>.
    pub fn minus_state(&self) -> [Complex64; 3] {
        let u = &self.unitary;
        [u[(1, 0)].conj(), Complex64::new(0.0, 0.0), u[(1, 1)].conj()]
    }

    pub fn project(
        &self,
        state: &JointState,
        mode: MeasurementMode,
    ) -> Result<Projection, ProtocolError> {
        check_shape(state)?;
        let omega = self.pulse.omega;
        let at = state.free_evolve_to(self.t_start, omega);
        match mode {
            MeasurementMode::Projective => {
                let plus = self.plus_state();
                let minus = self.minus_state();
                let mut succ = JointState::zero(self.t_start);
                let mut fail = JointState::zero(self.t_start);
                for b in 0..3 {
                    let cp: Complex64 = (0..3).map(|a| plus[a].conj() * at.amplitude(a, b)).sum();
                    let cm: Complex64 = (0..3).map(|a| minus[a].conj() * at.amplitude(a, b)).sum();
                    for a in 0..3 {
                        succ.set(a, b, plus[a] * cp);
                        fail.set(a, b, minus[a] * cm);
                    }
                }
                let p = succ.norm_sqr();
                Ok(Projection {
                    probability: p,
                    success: normalize_or_zero(succ),
                    failure: normalize_or_zero(fail),
                })
            }
            MeasurementMode::Operational => {
                let t1 = self.t_start + self.pulse.duration;
                // Bob's atom only evolves freely meanwhile
                let mut evolved = at.apply_local(Side::Alice, &embed(&self.unitary));
                let bob_phase = Complex64::from_polar(1.0, -omega * (t1 - self.t_start));
                for a in 0..3 {
                    let v = evolved.amplitude(a, 2);
                    evolved.set(a, 2, v * bob_phase);
                }
                evolved.t = t1;
                let (p, succ, fail) = split(&evolved, Side::Alice, 0);
                Ok(Projection {
                    probability: p,
                    success: normalize_or_zero(succ),
                    failure: normalize_or_zero(fail),
                })
            }
        }
    }
}

/// Bob's success measurement at one start time.
#[derive(Clone, Debug)]
pub struct BobMeasurement {
    pub readout: BobReadout,
    pub t_start: f64,
    omega: f64,
    unitary: Option<Matrix2c>,
}

impl BobMeasurement {
    pub fn prepare(config: &ProtocolConfig, t_start: f64) -> Result<Self, ProtocolError> {
        let unitary = match config.bob_readout {
            BobReadout::Ground => None,
            BobReadout::Reversed => Some(
                config
                    .measurement_pulse()?
                    .lab_unitary(config.bob_field.phi, t_start)?,
            ),
        };
        Ok(BobMeasurement {
            readout: config.bob_readout,
            t_start,
            omega: config.bob_field.omega,
            unitary,
        })
    }

    pub fn with_pulse(
        pulse: &MeasurementPulse,
        phase: f64,
        t_start: f64,
    ) -> Result<Self, ProtocolError> {
        Ok(BobMeasurement {
            readout: BobReadout::Reversed,
            t_start,
            omega: pulse.omega,
            unitary: Some(pulse.lab_unitary(phase, t_start)?),
        })
    }

    pub fn success_probability(&self, state: &JointState) -> Result<f64, ProtocolError> {
        check_shape(state)?;
        let p = match &self.unitary {
            None => state.reduced_populations(Side::Bob)[0],
            Some(u) => {
                let at = state.free_evolve_to(self.t_start, self.omega);
                let after = at.apply_local(Side::Bob, &embed(u));
                after.reduced_populations(Side::Bob)[2]
            }
        };
        // unitary roundoff can push a certain outcome just past 1
        Ok(p.clamp(0.0, 1.0))
    }
}

/// Draw Alice's |+> outcome and return the matching collapsed state.
pub fn alice_measure_plus<R: Rng + ?Sized>(
    state: &JointState,
    config: &ProtocolConfig,
    t_start: f64,
    rng: &mut R,
) -> Result<(bool, JointState), ProtocolError> {
    let proj = AliceMeasurement::prepare(config, t_start)?.project(state, config.mode)?;
    let found = rng.random::<f64>() < proj.probability;
    Ok((found, if found { proj.success } else { proj.failure }))
}

/// Draw Bob's outcome on his conditional state.
pub fn bob_measure<R: Rng + ?Sized>(
    collapsed: &JointState,
    config: &ProtocolConfig,
    t_start: f64,
    rng: &mut R,
) -> Result<bool, ProtocolError> {
    let p = BobMeasurement::prepare(config, t_start)?.success_probability(collapsed)?;
    Ok(rng.random::<f64>() < p)
}
