use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::dynamics::DriveField;

pub type Matrix3c = Matrix3<Complex64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Alice,
    Bob,
}

/// Lab-frame amplitudes of one Alice+Bob pair, index 3 * alice + bob.
///
/// Levels 0 and 1 are degenerate ground states; level 2 sits `omega` above
/// them, the same splitting the drives are resonant with.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub amplitudes: [Complex64; 9],
    pub t: f64,
}

impl JointState {
    pub fn zero(t: f64) -> Self {
        JointState {
            amplitudes: [Complex64::new(0.0, 0.0); 9],
            t,
        }
    }

    pub fn amplitude(&self, alice: usize, bob: usize) -> Complex64 {
        self.amplitudes[3 * alice + bob]
    }

    pub fn set(&mut self, alice: usize, bob: usize, value: Complex64) {
        self.amplitudes[3 * alice + bob] = value;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm_sqr().sqrt();
        for a in &mut self.amplitudes {
            *a /= n;
        }
        self
    }

    /// <self|other> without time alignment.
    pub fn inner(&self, other: &JointState) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Free evolution to `t`: each excited atom picks up exp(-i omega dt).
    pub fn free_evolve_to(&self, t: f64, omega: f64) -> JointState {
        let phase = Complex64::from_polar(1.0, -omega * (t - self.t));
        let mut out = self.clone();
        out.t = t;
        for a in 0..3 {
            for b in 0..3 {
                let excited = (a == 2) as i32 + (b == 2) as i32;
                if excited > 0 {
                    out.amplitudes[3 * a + b] *= phase.powi(excited);
                }
            }
        }
        out
    }

    /// Apply a single-atom operator to one side.
    pub fn apply_local(&self, side: Side, op: &Matrix3c) -> JointState {
        let mut out = JointState::zero(self.t);
        for a in 0..3 {
            for b in 0..3 {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..3 {
                    acc += match side {
                        Side::Alice => op[(a, k)] * self.amplitude(k, b),
                        Side::Bob => op[(b, k)] * self.amplitude(a, k),
                    };
                }
                out.set(a, b, acc);
            }
        }
        out
    }

    /// Level populations of one atom.
    pub fn reduced_populations(&self, side: Side) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..3 {
            for b in 0..3 {
                let w = self.amplitude(a, b).norm_sqr();
                match side {
                    Side::Alice => p[a] += w,
                    Side::Bob => p[b] += w,
                }
            }
        }
        p
    }

    /// Probability weight outside span{|0>,|2>} x span{|0>,|2>}.
    pub fn weight_outside_02(&self) -> f64 {
        let mut w = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                if a == 1 || b == 1 {
                    w += self.amplitude(a, b).norm_sqr();
                }
            }
        }
        w
    }
}

/// (|0>_A |1>_B - |1>_A |0>_B)/sqrt(2) at t = 0.
pub fn make_singlet() -> JointState {
    let mut s = JointState::zero(0.0);
    s.set(0, 1, Complex64::new(FRAC_1_SQRT_2, 0.0));
    s.set(1, 0, Complex64::new(-FRAC_1_SQRT_2, 0.0));
    s
}

/// Lab-frame map of a resonant RWA pi pulse on 1-2 that ends at time t:
/// |1> -> i e^{-i theta}|2>, |2> -> i e^{i theta}|1>, theta = omega t + phase.
pub fn pi_pulse_12_operator(field: &DriveField, t: f64) -> Matrix3c {
    let theta = field.omega * t + field.phi;
    let i = Complex64::new(0.0, 1.0);
    let mut m = Matrix3c::zeros();
    m[(0, 0)] = Complex64::new(1.0, 0.0);
    m[(2, 1)] = i * Complex64::from_polar(1.0, -theta);
    m[(1, 2)] = i * Complex64::from_polar(1.0, theta);
    m
}

/// Weak resonant pi pulse on one side's 1-2 transition, completing at `t_complete`.
///
/// The state is first carried to `t_complete` by free evolution. Under the RWA
/// the pulse then acts as `pi_pulse_12_operator`, independent of its length.
pub fn apply_pi_pulse_12(
    state: &JointState,
    side: Side,
    field: &DriveField,
    t_complete: f64,
) -> Result<JointState, ProtocolError> {
    if !field.rwa {
        return Err(ProtocolError::RwaFlagMissing);
    }
    check_normalized(state)?;
    let at = state.free_evolve_to(t_complete, field.omega);
    Ok(at.apply_local(side, &pi_pulse_12_operator(field, t_complete)))
}

pub(crate) fn check_normalized(state: &JointState) -> Result<(), ProtocolError> {
    let n = state.norm_sqr();
    if (n - 1.0).abs() > 1e-9 {
        return Err(ProtocolError::NotNormalized { norm: n.sqrt() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singlet_amplitudes() {
        let s = make_singlet();
        assert_eq!(s.amplitude(0, 1).re, FRAC_1_SQRT_2);
        assert_eq!(s.amplitude(1, 0).re, -FRAC_1_SQRT_2);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
        let pa = s.reduced_populations(Side::Alice);
        assert!((pa[0] - 0.5).abs() < 1e-15 && (pa[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pi_pulse_needs_attenuated_field() {
        let f = DriveField::step(0.01, 1.0, 0.0);
        assert_eq!(
            apply_pi_pulse_12(&make_singlet(), Side::Alice, &f, 1.0),
            Err(ProtocolError::RwaFlagMissing)
        );
    }

    #[test]
    fn double_pi_pulse_is_full_rabi_cycle() {
        let f = DriveField::step(0.01, 1.0, 0.7).attenuated();
        let s = make_singlet();
        let once = apply_pi_pulse_12(&s, Side::Bob, &f, 5.0).unwrap();
        let twice = apply_pi_pulse_12(&once, Side::Bob, &f, 5.0).unwrap();
        // |1>_B -> -|1>_B, |0>_B untouched
        assert!((twice.amplitude(0, 1) + s.amplitude(0, 1)).norm() < 1e-15);
        assert!((twice.amplitude(1, 0) - s.amplitude(1, 0)).norm() < 1e-15);
    }
}
