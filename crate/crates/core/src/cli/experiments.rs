use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;

use num_complex::Complex64;

use super::config::{Experiment, ExperimentConfig};
use super::output::{sibling, write_csv_file, Cell, Table};
use crate::channel::{audit_transcript, AuditPolicy, AuditReport, Channel, ChannelModel};
use crate::dynamics::{
    bso_scan, closed_form_rotating, default_dt_max, fit_fringe, integrate_exact, reversal_fidelity,
    solve_floquet_at, uniform_phases, DriveField, Frame, PulseSpec, StateVector,
};
use crate::locking::{
    build_arrays, default_time_scan, detect_detuning, flatness_test, lock_loop, run_lock_scan,
    Layout, LockController, LockSetup, Sampling,
};
use crate::protocol::{
    derive_seed, recover_phase, run_protocol, BobReadout, MeasurementMode, ProtocolConfig,
};

/// Error from a run, with the experiment it came from.
#[derive(Debug, thiserror::Error)]
#[error("{experiment}: {message}")]
pub struct RunError {
    pub experiment: Experiment,
    pub message: String,
}

/// What a run produced besides the CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    /// Human-readable key/value lines for stdout.
    pub lines: Vec<(String, String)>,
    pub audit: Option<AuditReport>,
}

impl RunSummary {
    fn add(&mut self, key: &str, value: impl SummaryValue) {
        self.lines.push((key.to_string(), value.render()));
    }
}

trait SummaryValue {
    fn render(&self) -> String;
}

impl SummaryValue for f64 {
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl SummaryValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
display_value!(usize, u64, bool, String);

/// Everything a run writes, before it touches the filesystem.
pub struct RunOutput {
    pub table: Table,
    pub summary: RunSummary,
    /// JSONL channel transcript, for experiments that talk over the channel.
    pub channel: Option<Channel>,
}

const TRANSCRIPT_SEED_TAG: u64 = 0xC4A7;

fn channel_for(cfg: &ExperimentConfig) -> Result<Channel, String> {
    let model = ChannelModel {
        base_latency: cfg.float("latency"),
        jitter: cfg.float("jitter"),
        drop_probability: cfg.float("drop"),
        seed: derive_seed(cfg.seed, TRANSCRIPT_SEED_TAG),
    };
    Channel::new(model).map_err(|e| e.to_string())
}

fn protocol_config(cfg: &ExperimentConfig, pairs: usize) -> ProtocolConfig {
    let mut p = ProtocolConfig::new(
        cfg.float("phi"),
        cfg.float("chi"),
        cfg.float("eta"),
        pairs,
        cfg.seed,
    );
    if cfg.parameters.contains_key("retry_cap") {
        p.retry_cap = cfg.int("retry_cap").min(u32::MAX as u64) as u32;
    }
    p
}

fn sampling(cfg: &ExperimentConfig) -> Sampling {
    match cfg.text("sampling") {
        "binomial" => Sampling::Binomial,
        _ => Sampling::ExactBorn,
    }
}

fn audit(channel: &Channel, max_index: u64) -> AuditReport {
    audit_transcript(
        channel.transcript(),
        &AuditPolicy {
            max_index,
            ..AuditPolicy::default()
        },
    )
}

/// Run an experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let wrap = |message: String| RunError {
        experiment: cfg.experiment,
        message,
    };
    match cfg.experiment {
        Experiment::BsoScan => bso(cfg),
        Experiment::SolverCompare => solver_compare(cfg),
        Experiment::Reversal => reversal(cfg),
        Experiment::Teleport => teleport(cfg),
        Experiment::PhaseRecover => phase_recover(cfg),
        Experiment::LockScan => lock_scan(cfg),
        Experiment::LockLoop => lock_loop_run(cfg),
    }
    .map_err(wrap)
}

/// Run and write the CSV, the manifest, and the transcript if any.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
    let out = execute(cfg)?;
    let io = |e: std::io::Error| RunError {
        experiment: cfg.experiment,
        message: format!("writing output: {e}"),
    };
    let path = &cfg.output_path;
    write_csv_file(path, &cfg.resolved(), &out.table).map_err(io)?;
    std::fs::write(sibling(path, "manifest.toml"), cfg.manifest()).map_err(io)?;
    if let Some(ch) = &out.channel {
        ch.write_transcript(BufWriter::new(
            File::create(sibling(path, "transcript.jsonl")).map_err(io)?,
        ))
        .map_err(io)?;
    }
    Ok(out.summary)
}

fn bso(cfg: &ExperimentConfig) -> Result<RunOutput, String> {
    let eta = cfg.float("eta");
    let omega = cfg.float("omega");
    let points = cfg.int("points") as usize;
    let (field, duration) =
        DriveField::for_readout(eta, omega, 0.0, PI / 2.0, cfg.float("switch_ratio"))
            .map_err(|e| e.to_string())?;
    let scan = bso_scan(
        &field,
        &uniform_phases(points),
        &PulseSpec::new(PI / 2.0, duration),
    )
    .map_err(|e| e.to_string())?;
    let fit = fit_fringe(&scan).map_err(|e| e.to_string())?;
    let mut table = Table::new(vec![
        "phi",
        "excited_population",
        "fit_amplitude",
        "fit_offset",
    ]);
    for (phi, p) in &scan {
        table.push(vec![
            (*phi).into(),
            (*p).into(),
            fit.depth.into(),
            fit.offset.into(),
        ]);
    }
    let mut summary = RunSummary::default();
    summary.add("eta_readout", field.eta_at(field.t_on + duration));
    summary.add("pulse_duration", duration);
    summary.add("fit_amplitude", fit.depth);
    summary.add("fit_amplitude_over_2eta", fit.depth / (2.0 * eta));
    summary.add("fit_offset", fit.offset);
    summary.add("fit_phase", fit.phase);
    Ok(RunOutput {
        table,
        summary,
        channel: None,
    })
}

fn solver_compare(cfg: &ExperimentConfig) -> Result<RunOutput, String> {
    let eta = cfg.float("eta");
    let omega = cfg.float("omega");
    let phi = cfg.float("phi");
    let samples = (cfg.int("samples") as usize).max(2);
    let (field, duration) = DriveField::for_readout(
        eta,
        omega,
        phi,
        cfg.float("area"),
        cfg.float("switch_ratio"),
    )
    .map_err(|e| e.to_string())?;
    let times: Vec<f64> = (0..samples)
        .map(|k| duration * k as f64 / (samples - 1) as f64)
        .collect();
    let floquet =
        solve_floquet_at(&field, &times, cfg.int("n_max") as usize).map_err(|e| e.to_string())?;
    let frame = Frame::Rotating {
        reference_phase: phi,
    };
    let mut state = StateVector::ground(frame, 0.0);
    let dt = default_dt_max(omega);

    let mut table = Table::new(vec![
        "t",
        "exact_c0_re",
        "exact_c0_im",
        "exact_c1_re",
        "exact_c1_im",
        "floquet_c0_re",
        "floquet_c0_im",
        "floquet_c1_re",
        "floquet_c1_im",
        "closed_c0_re",
        "closed_c0_im",
        "closed_c1_re",
        "closed_c1_im",
        "dev_floquet",
        "dev_closed",
    ]);
    let (mut worst_f, mut worst_c) = (0.0f64, 0.0f64);
    for (k, &t) in times.iter().enumerate() {
        if t > state.t {
            state = integrate_exact(&state, &field, state.t, t, dt).map_err(|e| e.to_string())?;
        }
        let e = [state.amplitudes[0], state.amplitudes[1]];
        let f = floquet.ladders[k].reconstruct(&field);
        let (c0, c1) = closed_form_rotating(&field, t).map_err(|e| e.to_string())?;
        let c = [c0, c1];
        let dev = |a: &[Complex64; 2]| (a[0] - e[0]).norm().max((a[1] - e[1]).norm());
        let (df, dc) = (dev(&f), dev(&c));
        worst_f = worst_f.max(df);
        worst_c = worst_c.max(dc);
        let mut row: Vec<Cell> = vec![t.into()];
        for z in e.iter().chain(&f).chain(&c) {
            row.push(z.re.into());
            row.push(z.im.into());
        }
        row.push(df.into());
        row.push(dc.into());
        table.push(row);
    }
    let mut summary = RunSummary::default();
    summary.add("max_dev_floquet", worst_f);
    summary.add("max_dev_closed", worst_c);
    summary.add("bound_5eta2", 5.0 * eta * eta);
    Ok(RunOutput {
        table,
        summary,
        channel: None,
    })
}

fn reversal(cfg: &ExperimentConfig) -> Result<RunOutput, String> {
    let eta = cfg.float("eta");
    let omega = cfg.float("omega");
    let phi = cfg.float("phi");
    let field = DriveField::step(4.0 * eta * omega, omega, phi);
    let rwa = field.attenuated();
    let initial = StateVector::ground(
        Frame::Rotating {
            reference_phase: phi,
        },
        0.0,
    );
    let mut table = Table::new(vec![
        "m",
        "duration",
        "on_condition",
        "fidelity",
        "deficit",
        "rwa_fidelity",
    ]);
    let (mut worst_on, mut best_off) = (0.0f64, f64::INFINITY);
    for m in 1..=cfg.int("m_max") {
        for half in [0.0, 0.5] {
            let mm = m as f64 + half;
            let duration = mm * PI / omega;
            let fid = reversal_fidelity(&initial, &field, duration).map_err(|e| e.to_string())?;
            let fid_rwa = reversal_fidelity(&initial, &rwa, duration).map_err(|e| e.to_string())?;
            let on = half == 0.0;
            if on {
                worst_on = worst_on.max(1.0 - fid);
            } else {
                best_off = best_off.min(1.0 - fid);
            }
            table.push(vec![
                mm.into(),
                duration.into(),
                on.into(),
                fid.into(),
                (1.0 - fid).into(),
                fid_rwa.into(),
            ]);
        }
    }
    let mut summary = RunSummary::default();
    summary.add("worst_on_condition_deficit", worst_on);
    summary.add("smallest_off_condition_deficit", best_off);
    summary.add("bound_10eta4", 10.0 * eta.powi(4));
    summary.add("bound_eta2_over_2", eta * eta / 2.0);
    Ok(RunOutput {
        table,
        summary,
        channel: None,
    })
}

fn teleport(cfg: &ExperimentConfig) -> Result<RunOutput, String> {
    let mut p = protocol_config(cfg, cfg.int("pairs") as usize);
    if cfg.text("mode") == "operational" {
        p = p.with_mode(MeasurementMode::Operational);
    }
    if cfg.text("readout") == "reversed" {
        p = p.with_bob_readout(BobReadout::Reversed);
    }
    p.validate().map_err(|e| e.to_string())?;
    let mut channel = channel_for(cfg)?;
    let ledger = run_protocol(&p, &mut channel).map_err(|e| e.to_string())?;
    let mut table = Table::new(vec!["pair", "alice_found_plus", "bob_outcome"]);
    for (i, o) in ledger.per_pair.iter().enumerate() {
        table.push(vec![
            i.into(),
            o.alice_found_plus.into(),
            o.bob_outcome.into(),
        ]);
    }
    let mut summary = RunSummary::default();
    summary.add("M", ledger.m);
    summary.add("L", ledger.l);
    summary.add(
        "zeta_raw",
        ledger.zeta_raw.map_or("undefined".into(), |z| z.render()),
    );
    summary.add(
        "zeta_normalized",
        ledger
            .zeta_normalized()
            .map_or("undefined".into(), |z| z.render()),
    );
    summary.add("alice_probability", ledger.alice_probability);
    summary.add("bob_probability", ledger.bob_probability);
    let report = audit(&channel, p.pairs as u64);
    summary.add("audit_violations", report.violations.len());
    summary.audit = Some(report);
    Ok(RunOutput {
        table,
        summary,
        channel: Some(channel),
    })
}

fn phase_recover(cfg: &ExperimentConfig) -> Result<RunOutput, String> {
    let mut p = protocol_config(cfg, cfg.int("pairs") as usize);
    p.phase_offset_run2 = cfg.float("offset");
    p.validate().map_err(|e| e.to_string())?;
    let mut channel = channel_for(cfg)?;
    let r = recover_phase(&p, &mut channel).map_err(|e| e.to_string())?;
    let e = &r.estimate;
    let phi_true = cfg.float("phi");
    let err = crate::protocol::phase_distance_mod_pi(e.phi_mod_pi, phi_true);
    let mut table = Table::new(vec![
        "phi_true",
        "sin2phi_hat",
        "cos2phi_hat",
        "phi_mod_pi",
        "stderr",
        "error_mod_pi",
        "m_sin",
        "l_sin",
        "m_cos",
        "l_cos",
    ]);
    table.push(vec![
        phi_true.into(),
        e.sin2phi_hat.into(),
        e.cos2phi_hat.into(),
        e.phi_mod_pi.into(),
        e.stderr.into(),
        err.into(),
        r.sin_run.m.into(),
        r.sin_run.l.into(),
        r.cos_run.m.into(),
        r.cos_run.l.into(),
    ]);
    let mut summary = RunSummary::default();
    summary.add("phi_mod_pi", e.phi_mod_pi);
    summary.add("stderr", e.stderr);
    summary.add("error_mod_pi", err);
    summary.add("error_in_stderrs", err / e.stderr);
    let report = audit(&channel, p.pairs as u64);
    summary.add("audit_violations", report.violations.len());
    summary.audit = Some(report);
    Ok(RunOutput {
        table,
        summary,
        channel: Some(channel),
    })
}

fn lock_setup(cfg: &ExperimentConfig, phi: f64, chi: f64) -> LockSetup {
    let p = ProtocolConfig::new(phi, chi, cfg.float("eta"), 1, cfg.seed);
    let mut s = LockSetup::new(p, cfg.int("samples"), sampling(cfg));
    s.scan_points = cfg.int("scan_points") as usize;
    s
}

fn lock_scan(cfg: &ExperimentConfig) -> Result<RunOutput, String> {
    use rand::SeedableRng;
    let setup = lock_setup(cfg, cfg.float("phi"), cfg.float("chi"));
    let (alice, bob) = build_arrays(
        cfg.int("n_atoms") as usize,
        1.0,
        1.0 + cfg.float("delta"),
        Layout::Uniform,
    )
    .map_err(|e| e.to_string())?;
    let scan = default_time_scan(&setup.config, setup.scan_points).map_err(|e| e.to_string())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5CA7));
    let profile =
        run_lock_scan(&alice, &bob, &setup, &scan, &mut rng).map_err(|e| e.to_string())?;
    let est = detect_detuning(&profile, &alice).map_err(|e| e.to_string())?;
    let flat = flatness_test(&profile, cfg.float("confidence"));
    let mut table = Table::new(vec![
        "x",
        "success_probability",
        "sample_count",
        "fringe_phase",
        "fringe_sigma",
    ]);
    for (pt, fr) in profile.per_position.iter().zip(&profile.fringes) {
        table.push(vec![
            pt.x.into(),
            pt.success_probability.into(),
            pt.sample_count.into(),
            fr.phase.into(),
            fr.sigma.into(),
        ]);
    }
    let mut summary = RunSummary::default();
    summary.add("delta_omega_hat", est.delta_omega_hat);
    summary.add("stderr", est.stderr);
    summary.add("aliased", est.aliased);
    summary.add("chi2", flat.chi2);
    summary.add("chi2_critical", flat.critical);
    summary.add("flat", flat.flat);
    Ok(RunOutput {
        table,
        summary,
        channel: None,
    })
}

fn lock_loop_run(cfg: &ExperimentConfig) -> Result<RunOutput, String> {
    let mut setup = lock_setup(cfg, 0.0, 0.0);
    setup.config.retry_cap = cfg.int("retry_cap").min(u32::MAX as u64) as u32;
    let mut controller =
        LockController::new(cfg.float("gain"), cfg.float("max_step")).map_err(|e| e.to_string())?;
    let mut channel = channel_for(cfg)?;
    let outcome = lock_loop(
        &mut controller,
        cfg.float("initial_delta"),
        cfg.int("iterations"),
        cfg.int("n_atoms") as usize,
        &setup,
        &mut channel,
    )
    .map_err(|e| e.to_string())?;
    let mut table = Table::new(vec![
        "iteration",
        "delta",
        "delta_omega_hat",
        "stderr",
        "omega_b",
        "aliased",
    ]);
    for r in &outcome.history {
        table.push(vec![
            r.iteration.into(),
            r.delta.into(),
            r.delta_omega_hat.into(),
            r.stderr.into(),
            r.omega_b.into(),
            r.aliased.into(),
        ]);
    }
    let mut summary = RunSummary::default();
    summary.add("final_delta", outcome.final_delta);
    summary.add("non_convergence", outcome.non_convergence);
    let report = audit(&channel, 0);
    summary.add("audit_violations", report.violations.len());
    summary.audit = Some(report);
    Ok(RunOutput {
        table,
        summary,
        channel: Some(channel),
    })
}
