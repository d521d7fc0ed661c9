use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// Switch-on shape of the drive amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Envelope {
    /// g0(t) = g0M from the switch-on time.
    Step,
    /// g0(t) = g0M (1 - exp(-(t - t_on)/tau_sw)).
    ExpSwitch,
}

/// One oscillator's magnetic drive, g(t) = -g0(t) cos(omega t + phi).
///
/// Times are absolute. The envelope starts at `t_on`, while the carrier phase
/// is referenced to t = 0, so shifting `t_on` never changes the carrier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveField {
    pub g0m: f64,
    pub omega: f64,
    pub phi: f64,
    pub tau_sw: f64,
    pub envelope: Envelope,
    pub t_on: f64,
    /// Atomic splitting minus drive frequency. Zero means resonant.
    pub detuning: f64,
    /// Attenuated drive: the counter-rotating term is dropped.
    pub rwa: bool,
}

impl DriveField {
    pub fn step(g0m: f64, omega: f64, phi: f64) -> Self {
        DriveField {
            g0m,
            omega,
            phi,
            tau_sw: 1.0,
            envelope: Envelope::Step,
            t_on: 0.0,
            detuning: 0.0,
            rwa: false,
        }
    }

    pub fn exp_switch(g0m: f64, omega: f64, phi: f64, tau_sw: f64) -> Self {
        DriveField {
            tau_sw,
            envelope: Envelope::ExpSwitch,
            ..DriveField::step(g0m, omega, phi)
        }
    }

    /// Field whose pulse of the given area ends with instantaneous
    /// eta(t) = `eta`, using an exponential switch with tau_sw = ratio/g0M.
    ///
    /// Returns the field and the pulse duration.
    pub fn for_readout(
        eta: f64,
        omega: f64,
        phi: f64,
        area: f64,
        switch_ratio: f64,
    ) -> Result<(DriveField, f64), DynamicsError> {
        if !(eta > 0.0 && omega > 0.0 && area > 0.0 && switch_ratio > 0.0) {
            return Err(DynamicsError::InvalidField(format!(
                "readout design needs positive eta, omega, area and switch ratio (got {eta}, {omega}, {area}, {switch_ratio})"
            )));
        }
        let c = switch_ratio;
        // s = g0M * duration solves s - c (1 - e^{-s/c}) = area
        let s = bisect(|s| s + c * (-s / c).exp_m1() - area, 0.0, area + c)?;
        let kappa = -(-s / c).exp_m1();
        let g0m = 4.0 * eta * omega / kappa;
        let field = DriveField::exp_switch(g0m, omega, phi, c / g0m);
        field.validate()?;
        Ok((field, s / g0m))
    }

    pub fn with_phase(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    pub fn shifted(mut self, dphi: f64) -> Self {
        self.phi += dphi;
        self
    }

    pub fn starting_at(mut self, t_on: f64) -> Self {
        self.t_on = t_on;
        self
    }

    pub fn attenuated(mut self) -> Self {
        self.rwa = true;
        self
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    /// Peak perturbation parameter g0M/(4 omega).
    pub fn eta(&self) -> f64 {
        self.g0m / (4.0 * self.omega)
    }

    /// Instantaneous g0(t)/(4 omega).
    pub fn eta_at(&self, t: f64) -> f64 {
        self.g0(t) / (4.0 * self.omega)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let finite = [
            self.g0m,
            self.omega,
            self.phi,
            self.tau_sw,
            self.t_on,
            self.detuning,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(DynamicsError::InvalidField("non-finite parameter".into()));
        }
        if self.g0m < 0.0 {
            return Err(DynamicsError::InvalidField(format!(
                "g0M must be >= 0, got {}",
                self.g0m
            )));
        }
        if self.omega <= 0.0 {
            return Err(DynamicsError::InvalidField(format!(
                "omega must be > 0, got {}",
                self.omega
            )));
        }
        if self.envelope == Envelope::ExpSwitch && self.tau_sw <= 0.0 {
            return Err(DynamicsError::InvalidField(format!(
                "tau_sw must be > 0 for ExpSwitch, got {}",
                self.tau_sw
            )));
        }
        Ok(())
    }

    /// Envelope amplitude g0(t); zero before switch-on.
    pub fn g0(&self, t: f64) -> f64 {
        let s = t - self.t_on;
        if s < 0.0 {
            return 0.0;
        }
        match self.envelope {
            Envelope::Step => self.g0m,
            Envelope::ExpSwitch => -self.g0m * (-s / self.tau_sw).exp_m1(),
        }
    }

    /// Exact antiderivative of g0 from switch-on to t.
    pub fn g0_integral(&self, t: f64) -> f64 {
        let s = t - self.t_on;
        if s <= 0.0 {
            return 0.0;
        }
        match self.envelope {
            Envelope::Step => self.g0m * s,
            Envelope::ExpSwitch => {
                let tau = self.tau_sw;
                self.g0m * (s + tau * (-s / tau).exp_m1())
            }
        }
    }

    /// Running average g0'(t) of the envelope since switch-on.
    pub fn g0_prime(&self, t: f64) -> f64 {
        let s = t - self.t_on;
        if s <= 0.0 {
            return self.g0(self.t_on);
        }
        self.g0_integral(t) / s
    }

    /// Drive coupling g(t) = -g0(t) cos(omega t + phi).
    pub fn coupling(&self, t: f64) -> f64 {
        -self.g0(t) * (self.omega * t + self.phi).cos()
    }

    /// Duration after switch-on at which g0'(t) t reaches `area`.
    pub fn pulse_duration(&self, area: f64) -> Result<f64, DynamicsError> {
        self.validate()?;
        if !(area > 0.0) || self.g0m == 0.0 {
            return Err(DynamicsError::InvalidPulse(format!(
                "area {area} unreachable with g0M = {}",
                self.g0m
            )));
        }
        match self.envelope {
            Envelope::Step => Ok(area / self.g0m),
            Envelope::ExpSwitch => {
                let hi = area / self.g0m + self.tau_sw;
                bisect(|s| self.g0_integral(self.t_on + s) - area, 0.0, hi)
            }
        }
    }

    /// Rescale g0M (tau_sw fixed) so the pulse of `pulse.duration` has exactly `pulse.area`.
    pub fn tuned_for(&self, pulse: &PulseSpec) -> Result<DriveField, DynamicsError> {
        let current = self.g0_integral(self.t_on + pulse.duration);
        if !(current > 0.0) {
            return Err(DynamicsError::InvalidPulse(
                "zero pulse area cannot be rescaled".into(),
            ));
        }
        // tau_sw held fixed, so the area is linear in g0M
        let mut tuned = *self;
        tuned.g0m *= pulse.area / current;
        Ok(tuned)
    }
}

/// Target rotation of one pulse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub area: f64,
    pub duration: f64,
    pub reversal_integer_m: Option<u32>,
}

impl PulseSpec {
    pub fn new(area: f64, duration: f64) -> Self {
        PulseSpec {
            area,
            duration,
            reversal_integer_m: None,
        }
    }

    /// Pulse whose duration gives `area` under `field`'s envelope.
    pub fn for_field(field: &DriveField, area: f64) -> Result<Self, DynamicsError> {
        Ok(PulseSpec::new(area, field.pulse_duration(area)?))
    }

    /// Pulse lasting m half drive periods, the reversal condition.
    pub fn reversible(m: u32, omega: f64, area: f64) -> Self {
        PulseSpec {
            area,
            duration: m as f64 * PI / omega,
            reversal_integer_m: Some(m),
        }
    }

    pub fn validate(&self, omega: f64) -> Result<(), DynamicsError> {
        if !(self.duration > 0.0) || !(self.area > 0.0) {
            return Err(DynamicsError::InvalidPulse(format!(
                "area and duration must be positive (area {}, duration {})",
                self.area, self.duration
            )));
        }
        if let Some(m) = self.reversal_integer_m {
            if m == 0 || self.duration != m as f64 * PI / omega {
                return Err(DynamicsError::InvalidPulse(format!(
                    "duration {} is not {m} pi/omega",
                    self.duration
                )));
            }
        }
        Ok(())
    }
}

/// Root of a function that changes sign on [lo, hi].
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Result<f64, DynamicsError> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return Err(DynamicsError::InvalidPulse(format!(
            "no sign change on [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
