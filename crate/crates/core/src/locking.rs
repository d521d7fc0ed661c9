//! Frequency locking with arrays of entangled pairs.
//!
//! Bob scans the start time of his reversed measurement over one drive
//! period at every array position. The fringe this traces out is shifted by
//! the local phase mismatch between the two oscillators, so the position
//! dependence of the fringe phase measures the frequency offset.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{Channel, MessageKind};
use crate::protocol::{
    derive_seed, next_grid_time, BobMeasurement, BobReadout, ProtocolConfig, ProtocolError,
    RunPlan, Side,
};

/// Fringe harmonic (in units of omega t) that carries the phase mismatch.
const HARMONIC: f64 = 2.0;
/// Adjacent fringe-phase jumps above this are treated as aliased.
pub const ALIAS_LIMIT: f64 = PI / 2.0;
pub const DEFAULT_SCAN_POINTS: usize = 32;
/// Iterations without |delta| shrinking before the loop is declared stuck.
pub const STALL_LIMIT: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LockError {
    #[error("bad array layout: {0}")]
    BadLayout(String),
    #[error("profile positions do not span a range; cannot fit a slope")]
    DegenerateProfile,
    #[error("invalid lock setup: {0}")]
    InvalidSetup(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    Uniform,
    Explicit(Vec<f64>),
}

/// Atom positions along one array, in units of Alice's wavelength.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AtomArray {
    pub positions: Vec<f64>,
    /// This side's oscillator frequency.
    pub omega: f64,
    /// Alice's frequency, which fixes the length unit.
    pub omega_ref: f64,
}

impl AtomArray {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Drive phase seen by atom `i`: the field advances 2 pi per own wavelength.
    pub fn local_phase(&self, global: f64, i: usize) -> f64 {
        global + 2.0 * PI * self.positions[i] * self.omega / self.omega_ref
    }
}

/// Matched Alice and Bob arrays at the same physical positions.
pub fn build_arrays(
    n: usize,
    omega_a: f64,
    omega_b: f64,
    layout: Layout,
) -> Result<(AtomArray, AtomArray), LockError> {
    if n < 2 {
        return Err(LockError::BadLayout(format!(
            "need at least 2 atoms, got {n}"
        )));
    }
    if !(omega_a > 0.0 && omega_b > 0.0) {
        return Err(LockError::BadLayout("frequencies must be positive".into()));
    }
    let positions = match layout {
        Layout::Uniform => (0..n).map(|i| i as f64 / n as f64).collect::<Vec<_>>(),
        Layout::Explicit(p) => {
            if p.len() != n {
                return Err(LockError::BadLayout(format!(
                    "{} positions given for {n} atoms",
                    p.len()
                )));
            }
            if p.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(LockError::BadLayout(
                    "positions must be strictly increasing".into(),
                ));
            }
            if p.iter().any(|x| !(0.0..1.0).contains(x)) {
                return Err(LockError::BadLayout("positions must lie in [0, 1)".into()));
            }
            p
        }
    };
    let alice = AtomArray {
        positions: positions.clone(),
        omega: omega_a,
        omega_ref: omega_a,
    };
    let bob = AtomArray {
        positions,
        omega: omega_b,
        omega_ref: omega_a,
    };
    Ok((alice, bob))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Sampling {
    /// Use Born probabilities directly.
    ExactBorn,
    /// Binomial counts drawn from the Born probabilities.
    Binomial,
}

/// Scan settings shared by every lock iteration.
#[derive(Clone, Debug)]
pub struct LockSetup {
    pub config: ProtocolConfig,
    pub samples_per_atom: u64,
    pub scan_points: usize,
    pub sampling: Sampling,
}

impl LockSetup {
    pub fn new(config: ProtocolConfig, samples_per_atom: u64, sampling: Sampling) -> Self {
        LockSetup {
            config,
            samples_per_atom,
            scan_points: DEFAULT_SCAN_POINTS,
            sampling,
        }
    }

    fn validate(&self) -> Result<(), LockError> {
        if self.samples_per_atom < 1 {
            return Err(LockError::InvalidSetup(
                "samples_per_atom must be ≥ 1".into(),
            ));
        }
        if self.scan_points < 3 {
            return Err(LockError::InvalidSetup(
                "need at least 3 scan points".into(),
            ));
        }
        Ok(())
    }
}

/// Alice's measurement start for the lock scan, on the half-period grid.
pub fn alice_start(config: &ProtocolConfig) -> f64 {
    next_grid_time(config.pi_pulse_end(), config.alice_field.omega)
}

/// `k` start times for Bob spread uniformly over one drive period,
/// beginning once Alice's measurement is over.
pub fn default_time_scan(config: &ProtocolConfig, k: usize) -> Result<Vec<f64>, ProtocolError> {
    let omega = config.alice_field.omega;
    let t0 = alice_start(config) + config.measurement_pulse()?.duration;
    let period = 2.0 * PI / omega;
    Ok((0..k).map(|j| t0 + j as f64 * period / k as f64).collect())
}

/// Start-time offset of the atom at `x`, chosen so its local drive phase at
/// the shifted start matches the atom at x = 0. Both parties apply it using
/// the nominal frequency, so only the mismatch part of the phase survives.
pub fn geometric_delay(x: f64, omega_ref: f64) -> f64 {
    (-2.0 * PI * x).rem_euclid(2.0 * PI) / omega_ref
}

/// One (position, start time) cell of a scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanCell {
    /// Common start time, before the per-position delay.
    pub t_start: f64,
    /// Born probability of Bob's success given Alice's.
    pub probability: f64,
    /// Post-selected pairs (Alice successes). Expected value in exact mode.
    pub selected: f64,
    /// Bob successes among them. Expected value in exact mode.
    pub successes: f64,
}

impl ScanCell {
    pub fn frequency(&self) -> f64 {
        if self.selected > 0.0 {
            self.successes / self.selected
        } else {
            f64::NAN
        }
    }

    /// Binomial variance of the frequency, floored so certain outcomes still carry weight.
    pub fn variance(&self) -> f64 {
        let n = self.selected.max(1.0);
        let p = (self.successes + 0.5) / (n + 1.0);
        p * (1.0 - p) / n
    }
}

/// Fringe phase at one position from demodulating the start-time scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FringePhase {
    pub x: f64,
    pub phase: f64,
    /// Propagated from binomial noise; zero in exact mode.
    pub sigma: f64,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub x: f64,
    pub success_probability: f64,
    pub sample_count: f64,
}

/// Scan outcome: per-position success at the best common start phase, plus
/// the fringe phases used for detuning detection.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockProfile {
    pub per_position: Vec<ProfilePoint>,
    /// Fitted fringe-phase slope, rad per Alice wavelength.
    pub slope_estimate: f64,
    pub delta_omega_hat: f64,
    pub best_start: f64,
    pub fringes: Vec<FringePhase>,
    pub cells: Vec<Vec<ScanCell>>,
    pub sampling: Sampling,
    pub omega_ref: f64,
}

fn demodulate(x: f64, cells: &[ScanCell], omega: f64, sampling: Sampling) -> FringePhase {
    let t0 = cells[0].t_start;
    let value = |c: &ScanCell| match sampling {
        Sampling::ExactBorn => c.probability,
        Sampling::Binomial => c.frequency(),
    };
    let angle = |c: &ScanCell| -HARMONIC * omega * (c.t_start - t0);
    let f: Complex64 = cells
        .iter()
        .map(|c| value(c) * Complex64::from_polar(1.0, angle(c)))
        .sum();
    let phase = f.arg();
    let sigma = match sampling {
        Sampling::ExactBorn => 0.0,
        // only the component of the noise perpendicular to F moves its phase
        Sampling::Binomial => {
            let v: f64 = cells
                .iter()
                .map(|c| c.variance() * (angle(c) - phase).sin().powi(2))
                .sum();
            v.sqrt() / f.norm()
        }
    };
    FringePhase {
        x,
        phase,
        sigma,
        magnitude: f.norm(),
    }
}

/// Scan Bob's start time at every position and build the profile.
pub fn run_lock_scan(
    alice: &AtomArray,
    bob: &AtomArray,
    setup: &LockSetup,
    time_scan: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<LockProfile, LockError> {
    setup.validate()?;
    if alice.len() != bob.len() || alice.len() < 2 {
        return Err(LockError::BadLayout(
            "arrays must have equal length ≥ 2".into(),
        ));
    }
    if time_scan.len() < 3 {
        return Err(LockError::InvalidSetup(
            "time scan needs at least 3 start times".into(),
        ));
    }
    let base = setup.config.clone().with_bob_readout(BobReadout::Reversed);
    base.validate()?;
    base.measurement_pulse()?;
    let omega = base.alice_field.omega;
    let t_a = alice_start(&base);
    let n = setup.samples_per_atom;

    let mut cells = Vec::with_capacity(alice.len());
    for i in 0..alice.len() {
        let mut cfg = base.clone();
        cfg.alice_field = base
            .alice_field
            .with_phase(alice.local_phase(base.alice_field.phi, i));
        cfg.bob_field = base
            .bob_field
            .with_phase(bob.local_phase(base.bob_field.phi, i));
        let delay = geometric_delay(alice.positions[i], alice.omega_ref);
        let plan = RunPlan::new(&cfg, t_a + delay)?;
        let p_a = plan.projection.probability;
        let mut row = Vec::with_capacity(time_scan.len());
        for &t_b in time_scan {
            let p_b = BobMeasurement::prepare(&cfg, t_b + delay)?
                .success_probability(&plan.projection.success)?;
            let (selected, successes) = match setup.sampling {
                Sampling::ExactBorn => (n as f64 * p_a, n as f64 * p_a * p_b),
                Sampling::Binomial => {
                    let m = binomial(n, p_a, rng);
                    (m as f64, binomial(m, p_b, rng) as f64)
                }
            };
            row.push(ScanCell {
                t_start: t_b,
                probability: p_b,
                selected,
                successes,
            });
        }
        cells.push(row);
    }

    let value = |c: &ScanCell| match setup.sampling {
        Sampling::ExactBorn => c.probability,
        Sampling::Binomial => c.frequency(),
    };
    let best = (0..time_scan.len())
        .max_by(|&a, &b| {
            let mean = |j: usize| cells.iter().map(|r| value(&r[j])).sum::<f64>();
            mean(a).total_cmp(&mean(b))
        })
        .expect("time scan is non-empty");
    let per_position = alice
        .positions
        .iter()
        .zip(&cells)
        .map(|(&x, r)| ProfilePoint {
            x,
            success_probability: value(&r[best]),
            sample_count: r[best].selected,
        })
        .collect();
    let fringes = alice
        .positions
        .iter()
        .zip(&cells)
        .map(|(&x, r)| demodulate(x, r, omega, setup.sampling))
        .collect();

    let mut profile = LockProfile {
        per_position,
        slope_estimate: 0.0,
        delta_omega_hat: 0.0,
        best_start: time_scan[best],
        fringes,
        cells,
        sampling: setup.sampling,
        omega_ref: alice.omega_ref,
    };
    let est = detect_detuning(&profile, alice)?;
    profile.slope_estimate = est.slope;
    profile.delta_omega_hat = est.delta_omega_hat;
    Ok(profile)
}

fn binomial(n: u64, p: f64, rng: &mut ChaCha8Rng) -> u64 {
    Binomial::new(n, p.clamp(0.0, 1.0))
        .expect("probability clamped to [0, 1]")
        .sample(rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DetuningEstimate {
    pub delta_omega_hat: f64,
    pub stderr: f64,
    /// Fringe-phase slope, rad per Alice wavelength.
    pub slope: f64,
    /// Some adjacent fringe phases jumped by more than the alias limit.
    pub aliased: bool,
}

/// Frequency offset of Bob relative to Alice; positive means Bob fast.
///
/// The fringe phase at position x is 2 (chi - phi) + const
/// = 4 pi x delta + const, so a straight-line fit in x gives delta.
pub fn detect_detuning(
    profile: &LockProfile,
    arrays: &AtomArray,
) -> Result<DetuningEstimate, LockError> {
    let fr = &profile.fringes;
    if fr.len() < 2 || fr.len() != arrays.len() {
        return Err(LockError::DegenerateProfile);
    }
    let mut unwrapped = Vec::with_capacity(fr.len());
    let mut aliased = false;
    let mut prev = fr[0].phase;
    unwrapped.push(prev);
    for f in &fr[1..] {
        let step = (f.phase - prev + PI).rem_euclid(2.0 * PI) - PI;
        aliased |= step.abs() > ALIAS_LIMIT;
        let next = unwrapped.last().copied().unwrap_or(0.0) + step;
        unwrapped.push(next);
        prev = f.phase;
    }

    let exact = fr.iter().all(|f| f.sigma == 0.0);
    let w: Vec<f64> = fr
        .iter()
        .map(|f| {
            if exact {
                1.0
            } else {
                1.0 / f.sigma.max(1e-300).powi(2)
            }
        })
        .collect();
    let sw: f64 = w.iter().sum();
    let xm = fr.iter().zip(&w).map(|(f, w)| w * f.x).sum::<f64>() / sw;
    let ym = unwrapped.iter().zip(&w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = fr.iter().zip(&w).map(|(f, w)| w * (f.x - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(LockError::DegenerateProfile);
    }
    let sxy: f64 = fr
        .iter()
        .zip(&unwrapped)
        .zip(&w)
        .map(|((f, y), w)| w * (f.x - xm) * (y - ym))
        .sum();
    let slope = sxy / sxx;
    let slope_var = if exact {
        let n = fr.len();
        if n > 2 {
            let ss: f64 = fr
                .iter()
                .zip(&unwrapped)
                .map(|(f, y)| (y - ym - slope * (f.x - xm)).powi(2))
                .sum();
            ss / (n - 2) as f64 / sxx
        } else {
            0.0
        }
    } else {
        1.0 / sxx
    };
    let scale = profile.omega_ref / (2.0 * HARMONIC * PI);
    Ok(DetuningEstimate {
        delta_omega_hat: slope * scale,
        stderr: slope_var.sqrt() * scale,
        slope,
        aliased,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlatnessTest {
    pub chi2: f64,
    pub dof: usize,
    /// Critical value at the requested confidence.
    pub critical: f64,
    pub flat: bool,
}

/// Chi-squared test that per-position success at the best phase is
/// consistent with one common value.
pub fn flatness_test(profile: &LockProfile, confidence: f64) -> FlatnessTest {
    let best = profile
        .cells
        .first()
        .and_then(|r| r.iter().position(|c| c.t_start == profile.best_start))
        .unwrap_or(0);
    let pts: Vec<(f64, f64)> = profile
        .per_position
        .iter()
        .zip(&profile.cells)
        .map(|(p, r)| (p.success_probability, r[best].variance()))
        .collect();
    let sw: f64 = pts.iter().map(|(_, v)| 1.0 / v).sum();
    let mean = pts.iter().map(|(p, v)| p / v).sum::<f64>() / sw;
    let chi2: f64 = pts.iter().map(|(p, v)| (p - mean).powi(2) / v).sum();
    let dof = pts.len().saturating_sub(1).max(1);
    let critical = ChiSquared::new(dof as f64)
        .expect("dof ≥ 1")
        .inverse_cdf(confidence);
    FlatnessTest {
        chi2,
        dof,
        critical,
        flat: chi2 <= critical,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LockRecord {
    pub iteration: u64,
    /// Relative offset omega_B / omega_A - 1 during this iteration's scan.
    pub delta: f64,
    pub delta_omega_hat: f64,
    pub stderr: f64,
    pub omega_b: f64,
    pub aliased: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockController {
    pub gain: f64,
    pub max_step: f64,
    pub history: Vec<LockRecord>,
}

impl LockController {
    pub fn new(gain: f64, max_step: f64) -> Result<Self, LockError> {
        if !(gain > 0.0) || !(max_step > 0.0) {
            return Err(LockError::InvalidSetup(format!(
                "gain and max_step must be > 0, got {gain}, {max_step}"
            )));
        }
        Ok(LockController {
            gain,
            max_step,
            history: Vec::new(),
        })
    }

    /// Correction to subtract from omega_B.
    pub fn step(&self, delta_omega_hat: f64) -> f64 {
        (self.gain * delta_omega_hat).clamp(-self.max_step, self.max_step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LockOutcome {
    pub history: Vec<LockRecord>,
    pub final_delta: f64,
    /// |delta| failed to shrink for `STALL_LIMIT` iterations in a row.
    pub non_convergence: bool,
}

/// Closed loop: scan, estimate, correct omega_B. Iterations are announced
/// over the channel so both sides agree on when the scan restarts.
pub fn lock_loop(
    controller: &mut LockController,
    initial_delta: f64,
    iterations: u64,
    n_atoms: usize,
    setup: &LockSetup,
    channel: &mut Channel,
) -> Result<LockOutcome, LockError> {
    let omega_a = setup.config.alice_field.omega;
    let mut omega_b = omega_a * (1.0 + initial_delta);
    let time_scan = default_time_scan(&setup.config, setup.scan_points)?;
    let mut stalled = 0;
    let mut non_convergence = false;
    for k in 0..iterations {
        channel
            .send_reliably(
                Side::Bob,
                MessageKind::LockIterationSync(k),
                setup.config.retry_cap,
            )
            .map_err(ProtocolError::from)?;
        let delta = omega_b / omega_a - 1.0;
        let (alice, bob) = build_arrays(n_atoms, omega_a, omega_b, Layout::Uniform)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(setup.config.seed, 0x10C0_0000 + k));
        let profile = run_lock_scan(&alice, &bob, setup, &time_scan, &mut rng)?;
        let est = detect_detuning(&profile, &alice)?;
        controller.history.push(LockRecord {
            iteration: k,
            delta,
            delta_omega_hat: est.delta_omega_hat,
            stderr: est.stderr,
            omega_b,
            aliased: est.aliased,
        });
        omega_b -= controller.step(est.delta_omega_hat);
        let new_delta = omega_b / omega_a - 1.0;
        if new_delta.abs() >= delta.abs() {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if stalled >= STALL_LIMIT {
            non_convergence = true;
            break;
        }
    }
    Ok(LockOutcome {
        history: controller.history.clone(),
        final_delta: omega_b / omega_a - 1.0,
        non_convergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_pair_is_nyquist_minimal() {
        let (a, b) = build_arrays(2, 1.0, 1.0, Layout::Uniform).unwrap();
        assert_eq!(a.positions, vec![0.0, 0.5]);
        assert_eq!(a.positions, b.positions);
    }

    #[test]
    fn explicit_layout_must_increase() {
        let bad = Layout::Explicit(vec![0.1, 0.1, 0.3]);
        assert!(matches!(
            build_arrays(3, 1.0, 1.0, bad),
            Err(LockError::BadLayout(_))
        ));
    }

    #[test]
    fn phase_mismatch_spans_two_pi_delta() {
        let delta = 1e-3;
        let (a, b) = build_arrays(8, 1.0, 1.0 + delta, Layout::Uniform).unwrap();
        let mismatch = |i| b.local_phase(0.0, i) - a.local_phase(0.0, i);
        let span = a.positions[7] - a.positions[0];
        assert!((mismatch(7) - mismatch(0) - 2.0 * PI * delta * span).abs() < 1e-15);
    }

    #[test]
    fn controller_clamps() {
        let c = LockController::new(1.0, 1e-4).unwrap();
        assert_eq!(c.step(1.0), 1e-4);
        assert_eq!(c.step(-1.0), -1e-4);
        assert!(LockController::new(0.0, 1.0).is_err());
    }
}
