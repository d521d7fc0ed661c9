use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// Picture in which amplitudes are expressed.
///
/// The rotating frame is C~1 = exp(i(omega t + reference_phase)) C1. Its
/// reference phase is stored rather than taken from the field, so a
/// phase-shifted drive can act on a state without silently changing frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Frame {
    Lab,
    Rotating { reference_phase: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub amplitudes: Vec<Complex64>,
    pub frame: Frame,
    pub t: f64,
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>, frame: Frame, t: f64) -> Self {
        StateVector {
            amplitudes,
            frame,
            t,
        }
    }

    /// Two-level ground state |0>.
    pub fn ground(frame: Frame, t: f64) -> Self {
        StateVector::new(
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            frame,
            t,
        )
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// <self|other>, both taken as given (no frame conversion).
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// |<self|other>|^2 after bringing `other` into this state's frame.
    pub fn fidelity(&self, other: &StateVector, omega: f64) -> Result<f64, DynamicsError> {
        let o = other.to_frame(self.frame, omega)?;
        Ok(self.inner(&o).norm_sqr())
    }

    /// Same physical state expressed in another frame. The upper level is the
    /// last component, so this works for the 0-2 pair of a three-level atom too.
    pub fn to_frame(&self, frame: Frame, omega: f64) -> Result<StateVector, DynamicsError> {
        if self.amplitudes.len() != 2 {
            return Err(DynamicsError::WrongDimension(self.amplitudes.len()));
        }
        let theta = |f: Frame| match f {
            Frame::Lab => None,
            Frame::Rotating { reference_phase } => Some(omega * self.t + reference_phase),
        };
        let mut upper = self.amplitudes[1];
        if let Some(th) = theta(self.frame) {
            upper *= Complex64::from_polar(1.0, -th);
        }
        if let Some(th) = theta(frame) {
            upper *= Complex64::from_polar(1.0, th);
        }
        Ok(StateVector::new(
            vec![self.amplitudes[0], upper],
            frame,
            self.t,
        ))
    }
}
