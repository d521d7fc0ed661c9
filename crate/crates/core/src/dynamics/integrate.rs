use std::f64::consts::PI;

use num_complex::Complex64;

use super::hamiltonian::{generator, Matrix2c};
use super::{DriveField, DynamicsError, Frame, StateVector};

/// Refinement stops once two successive step halvings agree to this per amplitude.
pub const REFINEMENT_TOLERANCE: f64 = 1e-10;
const MAX_DOUBLINGS: u32 = 14;
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest step accepted for a drive at `omega` (40 steps per drive period).
pub fn default_dt_max(omega: f64) -> f64 {
    2.0 * PI / (40.0 * omega)
}

/// Result of a guarded integration with its diagnostics.
#[derive(Clone, Debug)]
pub struct Propagation {
    pub state: StateVector,
    pub steps: usize,
    pub dt: f64,
    /// | |psi(t1)|^2 - |psi(t0)|^2 |
    pub norm_drift: f64,
}

pub(crate) struct Refined {
    pub y: Vec<Complex64>,
    pub steps: usize,
    pub dt: f64,
}

fn rk4_fixed<F>(f: &F, y0: &[Complex64], t0: f64, t1: f64, n: usize) -> Vec<Complex64>
where
    F: Fn(f64, &[Complex64], &mut [Complex64]),
{
    let dim = y0.len();
    let h = (t1 - t0) / n as f64;
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (
        vec![Complex64::default(); dim],
        vec![Complex64::default(); dim],
        vec![Complex64::default(); dim],
        vec![Complex64::default(); dim],
    );
    let mut tmp = vec![Complex64::default(); dim];
    for step in 0..n {
        let t = t0 + step as f64 * h;
        f(t, &y, &mut k1);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for j in 0..dim {
            tmp[j] = y[j] + h * k3[j];
        }
        f(t + h, &tmp, &mut k4);
        for j in 0..dim {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// Fixed-step RK4, halving the step until two successive solutions agree.
pub(crate) fn rk4_refined<F>(
    f: F,
    y0: &[Complex64],
    t0: f64,
    t1: f64,
    dt_max: f64,
    tolerance: f64,
) -> Result<Refined, DynamicsError>
where
    F: Fn(f64, &[Complex64], &mut [Complex64]),
{
    let mut n = ((t1 - t0) / dt_max).ceil().max(1.0) as usize;
    let mut coarse = rk4_fixed(&f, y0, t0, t1, n);
    let mut worst = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        n *= 2;
        let fine = rk4_fixed(&f, y0, t0, t1, n);
        worst = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        if worst <= tolerance {
            return Ok(Refined {
                y: fine,
                steps: n,
                dt: (t1 - t0) / n as f64,
            });
        }
        coarse = fine;
    }
    Err(DynamicsError::Unconverged { deviation: worst })
}

fn check_span(t0: f64, t1: f64, dt_max: f64, omega: f64) -> Result<(), DynamicsError> {
    if !(t1 > t0) {
        return Err(DynamicsError::InvalidSpan { t0, t1 });
    }
    let limit = default_dt_max(omega);
    if !(dt_max > 0.0) || dt_max > limit * (1.0 + 1e-12) {
        return Err(DynamicsError::StepTooCoarse { dt_max, limit });
    }
    Ok(())
}

/// Schrodinger evolution of a two-level state in its own frame, with diagnostics.
pub fn propagate(
    state: &StateVector,
    field: &DriveField,
    t0: f64,
    t1: f64,
    dt_max: f64,
) -> Result<Propagation, DynamicsError> {
    field.validate()?;
    if state.amplitudes.len() != 2 {
        return Err(DynamicsError::WrongDimension(state.amplitudes.len()));
    }
    let n0 = state.norm_sqr();
    if (n0 - 1.0).abs() > 1e-6 {
        return Err(DynamicsError::NotNormalized { norm: n0.sqrt() });
    }
    check_span(t0, t1, dt_max, field.omega)?;
    let frame = state.frame;
    let rhs = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let g = generator(field, t, frame);
        dy[0] = -I * (g.off * y[1]);
        dy[1] = -I * (g.off.conj() * y[0] + g.upper * y[1]);
    };
    let r = rk4_refined(rhs, &state.amplitudes, t0, t1, dt_max, REFINEMENT_TOLERANCE)?;
    let out = StateVector::new(r.y, frame, t1);
    let norm_drift = (out.norm_sqr() - n0).abs();
    Ok(Propagation {
        state: out,
        steps: r.steps,
        dt: r.dt,
        norm_drift,
    })
}

/// State at `t1` under the exact (non-RWA unless the field is attenuated)
/// Hamiltonian of the state's frame.
pub fn integrate_exact(
    state: &StateVector,
    field: &DriveField,
    t0: f64,
    t1: f64,
    dt_max: f64,
) -> Result<StateVector, DynamicsError> {
    propagate(state, field, t0, t1, dt_max).map(|p| p.state)
}

/// 2x2 evolution operator U(t1, t0) in `frame`.
pub fn propagator(
    field: &DriveField,
    frame: Frame,
    t0: f64,
    t1: f64,
    dt_max: f64,
) -> Result<Matrix2c, DynamicsError> {
    field.validate()?;
    check_span(t0, t1, dt_max, field.omega)?;
    // column-major: [U00, U10, U01, U11]
    let rhs = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let g = generator(field, t, frame);
        for c in 0..2 {
            let (a, b) = (y[2 * c], y[2 * c + 1]);
            dy[2 * c] = -I * (g.off * b);
            dy[2 * c + 1] = -I * (g.off.conj() * a + g.upper * b);
        }
    };
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let r = rk4_refined(
        rhs,
        &[one, zero, zero, one],
        t0,
        t1,
        dt_max,
        REFINEMENT_TOLERANCE,
    )?;
    Ok(Matrix2c::from_column_slice(&r.y))
}

/// Lab-frame version of a rotating-frame operator: Q(t1)^dag U Q(t0).
pub fn rotating_to_lab(
    u: &Matrix2c,
    omega: f64,
    reference_phase: f64,
    t0: f64,
    t1: f64,
) -> Matrix2c {
    let q = |t: f64| {
        Matrix2c::new(
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::from_polar(1.0, omega * t + reference_phase),
        )
    };
    q(t1).adjoint() * u * q(t0)
}
