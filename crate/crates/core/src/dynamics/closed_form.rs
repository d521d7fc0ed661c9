use num_complex::Complex64;

use super::{DriveField, DynamicsError, Envelope};

/// Largest eta for which the first-order form is offered.
pub const ETA_LIMIT: f64 = 0.25;
/// ExpSwitch fields must satisfy tau_sw * g0M >= this.
pub const MIN_SWITCH_RATIO: f64 = 10.0;

fn check(field: &DriveField) -> Result<(), DynamicsError> {
    field.validate()?;
    let eta = field.eta();
    if eta >= ETA_LIMIT {
        return Err(DynamicsError::PerturbativeRegimeViolated { eta });
    }
    // tolerance so fields designed exactly at the minimum survive roundoff
    if field.envelope == Envelope::ExpSwitch && field.tau_sw * field.g0m < MIN_SWITCH_RATIO * (1.0 - 1e-12) {
        return Err(DynamicsError::NonAdiabaticEnvelope {
            tau_sw: field.tau_sw,
            minimum: MIN_SWITCH_RATIO / field.g0m,
        });
    }
    Ok(())
}

/// First-order adiabatic lab-frame amplitudes (C0, C1) from |0> at switch-on.
///
/// The pulse angle uses the exact envelope integral, and eta is the
/// instantaneous g0(t)/(4 omega).
pub fn closed_form(field: &DriveField, t: f64) -> Result<(Complex64, Complex64), DynamicsError> {
    check(field)?;
    let x = 0.5 * field.g0_integral(t);
    let eta = field.eta_at(t);
    let wt = field.omega * t + field.phi;
    let sigma = Complex64::new(0.0, 0.5) * Complex64::from_polar(1.0, -2.0 * wt);
    let (s, c) = x.sin_cos();
    let c0 = c - 2.0 * eta * sigma * s;
    let c1 = Complex64::new(0.0, 1.0)
        * Complex64::from_polar(1.0, -wt)
        * (s + 2.0 * eta * sigma.conj() * c);
    Ok((c0, c1))
}

/// `closed_form` in the frame co-rotating with the field's phase.
pub fn closed_form_rotating(
    field: &DriveField,
    t: f64,
) -> Result<(Complex64, Complex64), DynamicsError> {
    let (c0, c1) = closed_form(field, t)?;
    Ok((
        c0,
        c1 * Complex64::from_polar(1.0, field.omega * t + field.phi),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_in_ground_state() {
        let f = DriveField::step(0.08, 1.0, 0.4);
        let (c0, c1) = closed_form(&f, 0.0).unwrap();
        assert_eq!(c0, Complex64::new(1.0, 0.0));
        // i e^{-i phi} 2 eta Sigma* with Sigma = (i/2) e^{-2 i phi}
        let sigma = Complex64::new(0.0, 0.5) * Complex64::from_polar(1.0, -0.8);
        let expect =
            Complex64::new(0.0, 1.0) * Complex64::from_polar(1.0, -0.4) * 2.0 * 0.02 * sigma.conj();
        assert!((c1 - expect).norm() < 1e-16);
        assert!(c1.norm_sqr() < 1e-3);
    }

    #[test]
    fn guards() {
        assert!(matches!(
            closed_form(&DriveField::step(1.0, 1.0, 0.0), 1.0),
            Err(DynamicsError::PerturbativeRegimeViolated { .. })
        ));
        assert!(matches!(
            closed_form(&DriveField::exp_switch(0.1, 1.0, 0.0, 5.0), 1.0),
            Err(DynamicsError::NonAdiabaticEnvelope { .. })
        ));
    }
}
