//! Driven two-level dynamics without the rotating-wave approximation.
//!
//! Three solvers cover the same physics: a guarded RK4 integrator of the
//! Schrodinger equation, the Floquet harmonic ladder, and the first-order
//! adiabatic closed form. On top of them sit the Bloch-Siegert fringe scan
//! and phase-flip time reversal.

mod bso;
mod closed_form;
mod field;
mod floquet;
mod hamiltonian;
mod integrate;
mod reversal;
mod state;

pub use bso::{bso_scan, fit_fringe, uniform_phases, FringeFit};
pub use closed_form::{closed_form, closed_form_rotating, ETA_LIMIT, MIN_SWITCH_RATIO};
pub use field::{bisect, DriveField, Envelope, PulseSpec};
pub use floquet::{
    solve_floquet, solve_floquet_at, solve_floquet_checked, FloquetLadder, FloquetTrajectory,
    DEFAULT_N_MAX, DEFAULT_SAMPLES, TRUNCATION_TOLERANCE,
};
pub use hamiltonian::{lab_hamiltonian, rotating_hamiltonian, rotating_hamiltonian_in, Matrix2c};
pub use integrate::{
    default_dt_max, integrate_exact, propagate, propagator, rotating_to_lab, Propagation,
    REFINEMENT_TOLERANCE,
};
pub use reversal::{reversal_fidelity, time_reverse};
pub use state::{Frame, StateVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("dt_max {dt_max} exceeds {limit} (2 pi / (40 omega))")]
    StepTooCoarse { dt_max: f64, limit: f64 },
    #[error("input state norm {norm} deviates from 1 by more than 1e-6")]
    NotNormalized { norm: f64 },
    #[error("doubling n_max = {n_max} changes amplitudes by {deviation:.3e}")]
    TruncationTooSmall { n_max: usize, deviation: f64 },
    #[error("Floquet truncation order must be >= 1, got {0}")]
    TruncationOrder(usize),
    #[error("eta = {eta} is outside the perturbative regime (must be < 0.25)")]
    PerturbativeRegimeViolated { eta: f64 },
    #[error("tau_sw = {tau_sw} is too fast for the adiabatic form (need >= {minimum})")]
    NonAdiabaticEnvelope { tau_sw: f64, minimum: f64 },
    #[error("invalid drive field: {0}")]
    InvalidField(String),
    #[error("invalid pulse: {0}")]
    InvalidPulse(String),
    #[error("invalid time span [{t0}, {t1}]")]
    InvalidSpan { t0: f64, t1: f64 },
    #[error("expected a two-level state, got {0} amplitudes")]
    WrongDimension(usize),
    #[error("step refinement did not converge (last change {deviation:.3e})")]
    Unconverged { deviation: f64 },
    #[error("scan needs at least one phase (three for a fit)")]
    EmptyScan,
}
