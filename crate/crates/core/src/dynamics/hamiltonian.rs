use nalgebra::Matrix2;
use num_complex::Complex64;

use super::{DriveField, Frame};

pub type Matrix2c = Matrix2<Complex64>;

/// Upper-level energy and 0-1 element of a two-level Hamiltonian whose
/// ground energy is zero. Every frame used here has that shape.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Generator {
    pub upper: f64,
    pub off: Complex64,
}

impl Generator {
    pub fn matrix(self) -> Matrix2c {
        Matrix2c::new(
            Complex64::new(0.0, 0.0),
            self.off,
            self.off.conj(),
            Complex64::new(self.upper, 0.0),
        )
    }
}

pub(crate) fn generator(field: &DriveField, t: f64, frame: Frame) -> Generator {
    let g0 = field.g0(t);
    let wt = field.omega * t;
    match frame {
        Frame::Lab => {
            let upper = field.omega + field.detuning;
            let off = if field.rwa {
                Complex64::from_polar(-0.5 * g0, wt + field.phi)
            } else {
                Complex64::new(field.coupling(t), 0.0)
            };
            Generator { upper, off }
        }
        Frame::Rotating { reference_phase } => {
            let co = Complex64::from_polar(1.0, field.phi - reference_phase);
            let alpha = if field.rwa {
                co
            } else {
                co + Complex64::from_polar(1.0, -(2.0 * wt + field.phi + reference_phase))
            };
            Generator {
                upper: field.detuning,
                off: -0.5 * g0 * alpha,
            }
        }
    }
}

/// eps (1 - sigma_z)/2 + g(t) sigma_x with eps = omega + detuning.
/// An attenuated field keeps only the co-rotating half of the coupling.
pub fn lab_hamiltonian(field: &DriveField, t: f64) -> Matrix2c {
    generator(field, t, Frame::Lab).matrix()
}

/// alpha sigma_+ + alpha* sigma_- in the frame co-rotating with the field's phase.
pub fn rotating_hamiltonian(field: &DriveField, t: f64) -> Matrix2c {
    rotating_hamiltonian_in(field, t, field.phi)
}

/// Rotating-frame Hamiltonian for a frame whose reference phase differs from
/// the field's phase (needed when the drive phase is switched mid-sequence).
pub fn rotating_hamiltonian_in(field: &DriveField, t: f64, reference_phase: f64) -> Matrix2c {
    generator(field, t, Frame::Rotating { reference_phase }).matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_drive_is_bare_splitting() {
        let f = DriveField::step(0.0, 1.3, 0.4);
        let h = lab_hamiltonian(&f, 2.0);
        assert_eq!(h[(0, 0)], Complex64::new(0.0, 0.0));
        assert_eq!(h[(1, 1)], Complex64::new(1.3, 0.0));
        assert_eq!(h[(0, 1)].norm(), 0.0);
    }

    #[test]
    fn lab_coupling_at_origin() {
        let f = DriveField::step(0.1, 1.0, 0.0);
        let h = lab_hamiltonian(&f, 0.0);
        assert_eq!(h[(0, 1)], Complex64::new(-0.1, 0.0));
        assert_eq!(h[(1, 0)], Complex64::new(-0.1, 0.0));
        assert_eq!((h - h.adjoint()).norm(), 0.0);
    }

    #[test]
    fn rotating_terms_cancel_and_add() {
        let f = DriveField::step(0.2, 1.0, 0.3);
        let t = (PI / 2.0 - 0.3) / 1.0;
        assert!(rotating_hamiltonian(&f, t)[(0, 1)].norm() < 1e-16);
        let g = DriveField::step(0.2, 1.0, 0.0);
        let h = rotating_hamiltonian(&g, 0.0);
        assert_eq!(h[(0, 1)], Complex64::new(-0.2, 0.0));
        assert_eq!(h.trace(), Complex64::new(0.0, 0.0));
    }
}
