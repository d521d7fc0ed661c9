use num_complex::Complex64;

use super::integrate::{default_dt_max, rk4_refined, REFINEMENT_TOLERANCE};
use super::{DriveField, DynamicsError};

pub const DEFAULT_N_MAX: usize = 4;
/// Output samples of `solve_floquet`, endpoints included.
pub const DEFAULT_SAMPLES: usize = 65;
/// Amplitude change tolerated when n_max is doubled.
pub const TRUNCATION_TOLERANCE: f64 = 1e-5;

/// Harmonic amplitudes (a_n, b_n), n in [-n_max, n_max], at time t.
#[derive(Clone, Debug, PartialEq)]
pub struct FloquetLadder {
    pub n_max: usize,
    pub t: f64,
    coefficients: Vec<(Complex64, Complex64)>,
}

impl FloquetLadder {
    pub fn ground(n_max: usize, t: f64) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        let mut coefficients = vec![(zero, zero); 2 * n_max + 1];
        coefficients[n_max].0 = Complex64::new(1.0, 0.0);
        FloquetLadder {
            n_max,
            t,
            coefficients,
        }
    }

    pub fn coefficient(&self, n: i64) -> Option<(Complex64, Complex64)> {
        let idx = n + self.n_max as i64;
        if idx < 0 {
            return None;
        }
        self.coefficients.get(idx as usize).copied()
    }

    pub fn coefficients(&self) -> &[(Complex64, Complex64)] {
        &self.coefficients
    }

    /// Rotating-frame amplitudes sum_n (a_n, b_n) exp(-i n (2 omega t + 2 phi)),
    /// frame referenced to the field's phase.
    pub fn reconstruct(&self, field: &DriveField) -> [Complex64; 2] {
        let psi = 2.0 * (field.omega * self.t + field.phi);
        let mut out = [Complex64::new(0.0, 0.0); 2];
        for (k, (a, b)) in self.coefficients.iter().enumerate() {
            let n = k as f64 - self.n_max as f64;
            let w = Complex64::from_polar(1.0, -n * psi);
            out[0] += a * w;
            out[1] += b * w;
        }
        out
    }

    fn flat(&self) -> Vec<Complex64> {
        self.coefficients
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect()
    }

    fn from_flat(n_max: usize, t: f64, y: &[Complex64]) -> Self {
        let coefficients = y.chunks(2).map(|c| (c[0], c[1])).collect();
        FloquetLadder {
            n_max,
            t,
            coefficients,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FloquetTrajectory {
    pub field: DriveField,
    pub ladders: Vec<FloquetLadder>,
}

impl FloquetTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.ladders.iter().map(|l| l.t).collect()
    }

    pub fn amplitudes(&self) -> Vec<[Complex64; 2]> {
        self.ladders
            .iter()
            .map(|l| l.reconstruct(&self.field))
            .collect()
    }

    pub fn last(&self) -> &FloquetLadder {
        self.ladders
            .last()
            .expect("trajectory has at least one sample")
    }
}

/// Ladder from |0> at t0 to t1, sampled at DEFAULT_SAMPLES even times.
pub fn solve_floquet(
    field: &DriveField,
    t0: f64,
    t1: f64,
    n_max: usize,
) -> Result<FloquetTrajectory, DynamicsError> {
    if !(t1 > t0) {
        return Err(DynamicsError::InvalidSpan { t0, t1 });
    }
    let times: Vec<f64> = (0..DEFAULT_SAMPLES)
        .map(|k| t0 + (t1 - t0) * k as f64 / (DEFAULT_SAMPLES - 1) as f64)
        .collect();
    solve_floquet_at(field, &times, n_max)
}

/// Ladder from |0> at times[0], sampled at each (increasing) time.
pub fn solve_floquet_at(
    field: &DriveField,
    times: &[f64],
    n_max: usize,
) -> Result<FloquetTrajectory, DynamicsError> {
    field.validate()?;
    if n_max < 1 {
        return Err(DynamicsError::TruncationOrder(n_max));
    }
    if times.is_empty() {
        return Err(DynamicsError::InvalidSpan {
            t0: f64::NAN,
            t1: f64::NAN,
        });
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DynamicsError::InvalidSpan {
            t0: times[0],
            t1: times[times.len() - 1],
        });
    }
    let omega = field.omega;
    let nm = n_max as i64;
    // a_n at 2k, b_n at 2k+1 with k = n + n_max
    let rhs = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let half_g = Complex64::new(0.0, 0.5 * field.g0(t));
        for k in 0..(2 * n_max + 1) {
            let n = k as i64 - nm;
            let rot = Complex64::new(0.0, 2.0 * n as f64 * omega);
            let a = y[2 * k];
            let b = y[2 * k + 1];
            let b_prev = if k > 0 {
                y[2 * k - 1]
            } else {
                Complex64::default()
            };
            let a_next = if k < 2 * n_max {
                y[2 * k + 2]
            } else {
                Complex64::default()
            };
            dy[2 * k] = rot * a + half_g * (b + b_prev);
            dy[2 * k + 1] = rot * b + half_g * (a + a_next);
        }
    };
    // the top rung rotates at 2 n_max omega, so RK4 stability caps the step too
    let dt_max = default_dt_max(omega).min(1.0 / (n_max as f64 * omega));
    let mut ladders = vec![FloquetLadder::ground(n_max, times[0])];
    for w in times.windows(2) {
        let y0 = ladders.last().unwrap().flat();
        let r = rk4_refined(rhs, &y0, w[0], w[1], dt_max, REFINEMENT_TOLERANCE)?;
        ladders.push(FloquetLadder::from_flat(n_max, w[1], &r.y));
    }
    Ok(FloquetTrajectory {
        field: *field,
        ladders,
    })
}

/// `solve_floquet_at` plus the doubling check: fails with TruncationTooSmall if
/// the 2 n_max solution differs by more than TRUNCATION_TOLERANCE anywhere.
pub fn solve_floquet_checked(
    field: &DriveField,
    times: &[f64],
    n_max: usize,
) -> Result<FloquetTrajectory, DynamicsError> {
    let base = solve_floquet_at(field, times, n_max)?;
    let doubled = solve_floquet_at(field, times, 2 * n_max)?;
    let deviation = base
        .amplitudes()
        .iter()
        .zip(doubled.amplitudes())
        .flat_map(|(x, y)| [(x[0] - y[0]).norm(), (x[1] - y[1]).norm()])
        .fold(0.0, f64::max);
    if deviation > TRUNCATION_TOLERANCE {
        return Err(DynamicsError::TruncationTooSmall { n_max, deviation });
    }
    Ok(base)
}
