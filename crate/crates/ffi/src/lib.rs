//! C ABI over the phasesync simulator.
//!
//! Every fallible call returns a [`PsStatus`]. On failure the message is kept
//! per thread and can be fetched with [`ps_last_error_message`]. Strings handed
//! out by this library must be released with [`ps_string_free`].

use std::cell::RefCell;
use std::f64::consts::PI;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use phasesync::channel::{Channel, ChannelModel};
use phasesync::cli::{run_experiment, Experiment, ExperimentConfig};
use phasesync::dynamics::{bso_scan, fit_fringe, uniform_phases, DriveField, PulseSpec};
use phasesync::protocol::{derive_seed, run_protocol, ProtocolConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    UnknownExperiment = 3,
    InvalidConfig = 4,
    RunFailed = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque experiment configuration.
pub struct PsConfig {
    inner: ExperimentConfig,
}

/// Fitted fringe `offset * (1 + depth * sin(2 phi + phase))`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PsFringeFit {
    pub offset: f64,
    pub depth: f64,
    pub phase: f64,
    pub rms_residual: f64,
}

/// Counts and probabilities from one protocol run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PsProtocolSummary {
    pub pairs: u64,
    /// Pairs where Alice found |+>.
    pub m: u64,
    /// Of those, pairs where Bob succeeded.
    pub l: u64,
    pub alice_probability: f64,
    pub bob_probability: f64,
    /// L/M divided by eta, NaN when M = 0.
    pub zeta_normalized: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: PsStatus, msg: impl Into<String>) -> PsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PsStatus) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == PsStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(_) => fail(PsStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, PsStatus> {
    if p.is_null() {
        return Err(fail(PsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. Free with `ps_string_free`.
#[no_mangle]
pub extern "C" fn ps_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(std::ptr::null_mut(), |s| s.clone().into_raw())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration for the named experiment, e.g. "bso-scan".
///
/// # Safety
/// `experiment` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_config_new(
    experiment: *const c_char,
    out: *mut *mut PsConfig,
) -> PsStatus {
    guard(|| {
        if out.is_null() {
            return fail(PsStatus::NullPointer, "out is null");
        }
        let name = match read_str(experiment, "experiment") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let Some(exp) = Experiment::from_name(name) else {
            return fail(
                PsStatus::UnknownExperiment,
                format!("unknown experiment `{name}`"),
            );
        };
        *out = Box::into_raw(Box::new(PsConfig {
            inner: ExperimentConfig::defaults(exp),
        }));
        PsStatus::Ok
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from `ps_config_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_config_free(cfg: *mut PsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Set one parameter from its text form, as `--set key=value` would.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ps_config_set(
    cfg: *mut PsConfig,
    key: *const c_char,
    value: *const c_char,
) -> PsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(PsStatus::NullPointer, "config is null");
        };
        let (key, value) = match (read_str(key, "key"), read_str(value, "value")) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match cfg.inner.set(key, value) {
            Ok(()) => PsStatus::Ok,
            Err(e) => fail(PsStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_config_set_seed(cfg: *mut PsConfig, seed: u64) -> PsStatus {
    guard(|| match cfg.as_mut() {
        Some(c) => {
            c.inner.seed = seed;
            PsStatus::Ok
        }
        None => fail(PsStatus::NullPointer, "config is null"),
    })
}

/// Current value of one parameter as text. Free the result with `ps_string_free`.
///
/// # Safety
/// `cfg` must be a live handle; `key` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_config_get(
    cfg: *const PsConfig,
    key: *const c_char,
    out: *mut *mut c_char,
) -> PsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(PsStatus::NullPointer, "config is null");
        };
        if out.is_null() {
            return fail(PsStatus::NullPointer, "out is null");
        }
        let key = match read_str(key, "key") {
            Ok(k) => k,
            Err(s) => return s,
        };
        match cfg.inner.parameters.get(key) {
            Some(v) => {
                *out = CString::new(v.to_string()).map_or(std::ptr::null_mut(), CString::into_raw);
                PsStatus::Ok
            }
            None => fail(PsStatus::InvalidConfig, format!("unknown key `{key}`")),
        }
    })
}

/// Run the experiment and write the CSV to `out_path`, plus the manifest and
/// transcript beside it. If `summary` is non-NULL it receives the
/// `key: value` summary lines, newline separated.
///
/// # Safety
/// `cfg` must be a live handle; `out_path` NUL-terminated; `summary` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ps_run(
    cfg: *const PsConfig,
    out_path: *const c_char,
    summary: *mut *mut c_char,
) -> PsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(PsStatus::NullPointer, "config is null");
        };
        let path = match read_str(out_path, "out_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let mut run = cfg.inner.clone();
        run.output_path = PathBuf::from(path);
        match run_experiment(&run) {
            Ok(s) => {
                if !summary.is_null() {
                    let text: String = s.lines.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
                    *summary = CString::new(text).map_or(std::ptr::null_mut(), CString::into_raw);
                }
                PsStatus::Ok
            }
            Err(e) => fail(PsStatus::RunFailed, e.to_string()),
        }
    })
}

/// Excited population after a readout pi/2 pulse at `len` phases spread
/// uniformly over [0, pi), with the fringe fit.
///
/// # Safety
/// `phases` and `populations` must each hold `len` doubles; `fit` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ps_bso_scan(
    eta: f64,
    omega: f64,
    len: usize,
    phases: *mut f64,
    populations: *mut f64,
    fit: *mut PsFringeFit,
) -> PsStatus {
    guard(|| {
        if phases.is_null() || populations.is_null() {
            return fail(PsStatus::NullPointer, "output buffer is null");
        }
        if len < 3 {
            return fail(PsStatus::BufferTooSmall, "need at least 3 scan points");
        }
        let result = DriveField::for_readout(eta, omega, 0.0, PI / 2.0, 10.0)
            .and_then(|(field, duration)| {
                bso_scan(
                    &field,
                    &uniform_phases(len),
                    &PulseSpec::new(PI / 2.0, duration),
                )
            })
            .and_then(|scan| fit_fringe(&scan).map(|f| (scan, f)));
        match result {
            Ok((scan, f)) => {
                let ph = std::slice::from_raw_parts_mut(phases, len);
                let pop = std::slice::from_raw_parts_mut(populations, len);
                for (k, (x, p)) in scan.into_iter().enumerate() {
                    ph[k] = x;
                    pop[k] = p;
                }
                if let Some(out) = fit.as_mut() {
                    *out = PsFringeFit {
                        offset: f.offset,
                        depth: f.depth,
                        phase: f.phase,
                        rms_residual: f.rms_residual,
                    };
                }
                PsStatus::Ok
            }
            Err(e) => fail(PsStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// One protocol run over an ideal channel.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_teleport(
    phi: f64,
    chi: f64,
    eta: f64,
    pairs: u64,
    seed: u64,
    out: *mut PsProtocolSummary,
) -> PsStatus {
    guard(|| {
        if out.is_null() {
            return fail(PsStatus::NullPointer, "out is null");
        }
        let config = ProtocolConfig::new(phi, chi, eta, pairs as usize, seed);
        if let Err(e) = config.validate() {
            return fail(PsStatus::InvalidConfig, e.to_string());
        }
        let model = ChannelModel {
            seed: derive_seed(seed, 0xC4A7),
            ..ChannelModel::default()
        };
        let ledger = Channel::new(model)
            .map_err(|e| e.to_string())
            .and_then(|mut ch| run_protocol(&config, &mut ch).map_err(|e| e.to_string()));
        match ledger {
            Ok(l) => {
                *out = PsProtocolSummary {
                    pairs: l.pairs() as u64,
                    m: l.m as u64,
                    l: l.l as u64,
                    alice_probability: l.alice_probability,
                    bob_probability: l.bob_probability,
                    zeta_normalized: l.zeta_normalized().unwrap_or(f64::NAN),
                };
                PsStatus::Ok
            }
            Err(e) => fail(PsStatus::RunFailed, e),
        }
    })
}
