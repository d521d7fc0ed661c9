use std::f64::consts::PI;

use super::integrate::{default_dt_max, integrate_exact};
use super::{DriveField, DynamicsError, StateVector};

/// Evolve for `duration` under `field` with its phase advanced by pi,
/// switched on at `state.t`.
///
/// The state's frame is kept as is. Under the RWA the phase flip negates the
/// rotating-frame Hamiltonian; the counter-rotating term does not flip
/// cleanly, which is what breaks exact reversal.
pub fn time_reverse(
    state: &StateVector,
    field: &DriveField,
    duration: f64,
) -> Result<StateVector, DynamicsError> {
    let reversed = field.shifted(PI).starting_at(state.t);
    integrate_exact(
        state,
        &reversed,
        state.t,
        state.t + duration,
        default_dt_max(field.omega),
    )
}

/// |<initial|reverse(forward(initial))|^2, with the forward pulse switched on at `initial.t`.
pub fn reversal_fidelity(
    initial: &StateVector,
    field: &DriveField,
    duration: f64,
) -> Result<f64, DynamicsError> {
    let forward_field = field.starting_at(initial.t);
    let dt = default_dt_max(field.omega);
    let forward = integrate_exact(initial, &forward_field, initial.t, initial.t + duration, dt)?;
    let back = time_reverse(&forward, field, duration)?;
    Ok(initial.inner(&back).norm_sqr())
}
