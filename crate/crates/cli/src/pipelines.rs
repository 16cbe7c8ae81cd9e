//! One function per command; each returns the files to emit.

use ctf_sim::calibration::{self, fit, fit_report, params_file_contents};
use ctf_sim::device::sweep::{normalize_splits, splits, sweep_counts, sweep_gaps};
use ctf_sim::device::{run_schedule, ModelParams};
use ctf_sim::extraction::{detect_t_crit, full_extraction, synthetic_inputs, ExtractionConfig, GapCurve, DEFAULT_MIN_T_NV_S};
use ctf_sim::protocol::{
    log_read_grid, with_intermediate_reads, ExperimentSchedule, Pulse, PulseTrain, ScheduleItem, DEFAULT_AMPLITUDE_V,
    DEFAULT_GAP_GRID_S, TABLE1_COUNTS,
};
use ctf_sim::rpu::{compensation_comparison, error_decomposition, write_error_csv, ERROR_DEFINITIONS, RNG_NAME};

use crate::config::{Command, Resolved};
use crate::error::CliError;

/// Stream lengths of the error decomposition.
pub const RPU_COUNTS: [u32; 13] = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000];
/// Pulse counts splitting `T_tar` in the compensation comparison.
pub const COMPENSATION_COUNTS: [u32; 6] = [1, 10, 25, 50, 100, 500];
/// Widths of the default simulate schedule, 1000 pulses each.
pub const SIMULATE_WIDTHS_S: [f64; 6] = [2.5e-6, 5e-6, 10e-6, 25e-6, 50e-6, 100e-6];
pub const SIMULATE_PULSES: u32 = 1000;

#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub notes: Vec<String>,
}

/// CSV text with a leading `#` timestamp line.
pub(crate) struct Csv {
    w: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub(crate) fn new(stamp: &str, header: &[&str]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(format!("# generated {stamp}\n").as_bytes());
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(header).expect("in-memory write");
        Self { w }
    }

    pub(crate) fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        self.w.write_record(fields).expect("in-memory write");
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.w.into_inner().expect("in-memory write")
    }
}

/// Prefixes the output of a library CSV writer with the timestamp line.
fn stamped(stamp: &str, step: &str, write: impl FnOnce(&mut Vec<u8>) -> ctf_sim::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = format!("# generated {stamp}\n").into_bytes();
    write(&mut buf).map_err(|e| CliError::from_core(step, e))?;
    Ok(buf)
}

fn core<T>(step: &str, r: ctf_sim::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::from_core(step, e))
}

pub fn dispatch(
    command: Command,
    inputs: &Resolved,
    schedule: Option<&ExperimentSchedule>,
    seed: u64,
    stamp: &str,
) -> Result<Outputs, CliError> {
    match command {
        Command::Simulate => simulate(inputs, schedule, stamp),
        Command::SweepN => sweep_n(inputs, stamp),
        Command::SweepGap => sweep_gap(inputs, stamp),
        Command::Splits => split_curves(inputs, stamp),
        Command::Extract => extract(inputs, stamp),
        Command::Calibrate => calibrate(inputs),
        Command::RpuError => rpu_error(inputs, seed, stamp),
    }
}

/// Schedule used by `simulate` when no protocol file is given.
pub fn default_schedule(gap_s: f64) -> ctf_sim::Result<ExperimentSchedule> {
    let mut items = Vec::new();
    for w in SIMULATE_WIDTHS_S {
        let train = PulseTrain::new(Pulse::new(DEFAULT_AMPLITUDE_V, w)?, SIMULATE_PULSES, gap_s)?;
        items.push(ScheduleItem::Initialize);
        items.push(ScheduleItem::Program(with_intermediate_reads(&train, &log_read_grid(SIMULATE_PULSES))?));
    }
    ExperimentSchedule::new("fig6a", items)
}

fn simulate(inputs: &Resolved, schedule: Option<&ExperimentSchedule>, stamp: &str) -> Result<Outputs, CliError> {
    let owned;
    let schedule = match schedule {
        Some(s) => s,
        None => {
            owned = core("default_schedule", default_schedule(inputs.knobs.t_gap_s))?;
            &owned
        }
    };
    let traces = core("simulate", run_schedule(schedule, &inputs.params, &inputs.knobs.variant()))?;
    let mut out = Outputs::default();
    let mut all = Csv::new(stamp, &["train", "t_pw_s", "N", "t_gap_s", "pulse_index", "vt_V"]);
    for (k, trace) in traces.iter().enumerate() {
        let t = trace.train();
        for (i, v) in trace.entries() {
            all.row([
                k.to_string(),
                t.width_s().to_string(),
                t.count().to_string(),
                t.gap_s().to_string(),
                i.to_string(),
                v.to_string(),
            ]);
        }
        let file = stamped(stamp, "write_trace", |b| trace.write_csv(b))?;
        out.files.push((format!("trace_{k:03}.csv"), file));
    }
    out.files.insert(0, ("fig6a.csv".into(), all.finish()));
    out.notes.push(format!("schedule `{}` with {} trains", schedule.label(), traces.len()));
    out.notes
        .push("read i samples V_T after pulse i and its trailing gap; reads do not disturb the device".into());
    out.notes
        .push("trains run back to back carry device state; initialization markers reset it".into());
    Ok(out)
}

fn sweep_n(inputs: &Resolved, stamp: &str) -> Result<Outputs, CliError> {
    let k = &inputs.knobs;
    let pts = core("sweep_counts", sweep_counts(&inputs.params, &TABLE1_COUNTS, k.t_on_s, k.t_gap_s, &k.variant()))?;
    let mut csv = Csv::new(stamp, &["N", "t_pw_s", "t_gap_s", "vt_V", "d_vt_V"]);
    for p in &pts {
        csv.row([
            p.count.to_string(),
            p.t_pw_s.to_string(),
            p.t_gap_s.to_string(),
            p.vt_v.to_string(),
            (p.vt_v - inputs.params.vt0_v).to_string(),
        ]);
    }
    Ok(Outputs {
        files: vec![("fig3a.csv".into(), csv.finish())],
        notes: vec![format!("variant {}", k.variant)],
    })
}

fn sweep_gap(inputs: &Resolved, stamp: &str) -> Result<Outputs, CliError> {
    let k = &inputs.knobs;
    let grid = core(
        "sweep_gaps",
        sweep_gaps(&inputs.params, &TABLE1_COUNTS, k.t_on_s, &DEFAULT_GAP_GRID_S, &k.variant()),
    )?;
    let mut vt = Csv::new(stamp, &["N", "t_pw_s", "t_gap_s", "vt_V"]);
    let mut crit = Vec::new();
    let mut notes = vec![format!("variant {}", k.variant)];
    for row in &grid {
        for p in row {
            vt.row([p.count.to_string(), p.t_pw_s.to_string(), p.t_gap_s.to_string(), p.vt_v.to_string()]);
        }
        let curve = core(
            "gap_curve",
            GapCurve::new(row[0].count, row[0].t_pw_s, row.iter().map(|p| (p.t_gap_s, p.vt_v)).collect()),
        )?;
        match detect_t_crit(&curve, k.epsilon_v) {
            Ok(t) => crit.push((curve.t_pw_s(), t)),
            Err(e) => notes.push(format!("N = {}: t_crit not extracted: {e}", curve.count())),
        }
    }
    crit.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut c = Csv::new(stamp, &["t_pw_s", "t_crit_s"]);
    for (w, t) in crit {
        c.row([w.to_string(), t.to_string()]);
    }
    Ok(Outputs {
        files: vec![("fig3b.csv".into(), vt.finish()), ("fig3c.csv".into(), c.finish())],
        notes,
    })
}

/// Stack splits of the fragmentation comparison, before normalization.
pub fn default_splits(base: &ModelParams, to_sens: f64, ctl_sens: f64) -> Vec<(String, ModelParams)> {
    vec![
        splits::blocking_oxide(base, 12.0),
        splits::blocking_oxide(base, 15.0),
        splits::blocking_oxide(base, 20.0),
        splits::tunnel_oxide(base, 3.0, to_sens),
        splits::tunnel_oxide(base, 5.0, to_sens),
        splits::trap_layer_anneal(base, ctl_sens),
    ]
}

fn split_curves(inputs: &Resolved, stamp: &str) -> Result<Outputs, CliError> {
    let k = &inputs.knobs;
    let raw = default_splits(&inputs.params, k.to_split_sens, k.ctl_split_sens);
    let normalized = core("normalize_splits", normalize_splits(&raw, k.t_on_s, k.t_gap_s, &k.variant()))?;
    let res = core(
        "split_sweep",
        ctf_sim::device::split_sweep_with(&normalized, &TABLE1_COUNTS, k.t_on_s, k.t_gap_s),
    )?;
    let mut curves = Csv::new(stamp, &["label", "N", "t_pw_s", "vt_V"]);
    let mut summary = Csv::new(
        stamp,
        &["label", "bo_scale", "to_sens", "ctl_sens", "vt_single_V", "reduction_1000_V", "shift_1000_V"],
    );
    for c in &res.curves {
        for (n, v) in c.counts.iter().zip(&c.vt_v) {
            curves.row([c.label.clone(), n.to_string(), (k.t_on_s / f64::from(*n)).to_string(), v.to_string()]);
        }
        summary.row([
            c.label.clone(),
            c.params.bo_scale.to_string(),
            c.params.to_sens.to_string(),
            c.params.ctl_sens.to_string(),
            c.vt_single_v.to_string(),
            c.reduction_1000_v.to_string(),
            c.shift_1000_v.to_string(),
        ]);
    }
    Ok(Outputs {
        files: vec![("fig4c.csv".into(), curves.finish()), ("splits_summary.csv".into(), summary.finish())],
        notes: vec![
            format!("variant {}", k.variant),
            "each split's programming strength is rescaled to the single-pulse V_T of the first split".into(),
        ],
    })
}

fn extract(inputs: &Resolved, stamp: &str) -> Result<Outputs, CliError> {
    let k = &inputs.knobs;
    let data = core(
        "synthetic_inputs",
        synthetic_inputs(&inputs.params, k.t_on_s, &TABLE1_COUNTS, &DEFAULT_GAP_GRID_S),
    )?;
    let config = ExtractionConfig {
        n_fix: k.n_fix,
        epsilon_v: k.epsilon_v,
        min_t_nv_s: DEFAULT_MIN_T_NV_S,
    };
    let report = core(
        "full_extraction",
        full_extraction(&data.traces, &data.one_shot, &data.gap_curves, &data.vt_targets, &config),
    )?;
    let toml = core("extraction_report", report.to_toml_string())?;
    Ok(Outputs {
        files: vec![
            ("extraction_report.toml".into(), toml.into_bytes()),
            ("t_trap_vs_target.csv".into(), stamped(stamp, "t_trap_csv", |b| report.write_t_trap_csv(b))?),
            ("t_crit_vs_tpw.csv".into(), stamped(stamp, "t_crit_csv", |b| report.write_t_crit_csv(b))?),
        ],
        notes: vec![
            "inputs are simulated with the dead-zone model from the resolved parameters".into(),
            format!("{} targets extracted, {} skipped", report.targets.len(), report.skipped.len()),
        ],
    })
}

fn calibrate(inputs: &Resolved) -> Result<Outputs, CliError> {
    let anchors = inputs.knobs.anchors();
    let result = core("calibrate", fit(&anchors, &inputs.params, inputs.knobs.budget))?;
    let params = core("params_file", params_file_contents(&result, &anchors))?;
    let report = core("fit_report", fit_report(&result, &anchors))?;
    let mut notes = vec![format!(
        "free parameters: tau_trap_s, A_V, u_c; fixed: t0_s, tau_detrap_s (cutoff fraction {})",
        calibration::CUTOFF_FRACTION
    )];
    if !result.converged {
        notes.push(format!("fit did not converge within {} evaluations", inputs.knobs.budget));
    }
    Ok(Outputs {
        files: vec![("params.toml".into(), params.into_bytes()), ("fit_report.toml".into(), report.into_bytes())],
        notes,
    })
}

fn rpu_error(inputs: &Resolved, seed: u64, stamp: &str) -> Result<Outputs, CliError> {
    let k = &inputs.knobs;
    let t_on = k.t_on_s;
    let reports = core(
        "error_decomposition",
        error_decomposition(&RPU_COUNTS, k.p_x, k.p_d, |n| t_on / f64::from(n), k.base_gap_s, &inputs.params, k.trials, seed),
    )?;
    let widths: Vec<f64> = COMPENSATION_COUNTS.iter().map(|&n| k.t_tar_s / f64::from(n)).collect();
    let points = core("compensation", compensation_comparison(k.t_tar_s, &widths, k.t_gap_s, &inputs.params))?;
    let mut comp = Csv::new(
        stamp,
        &[
            "t_pw_s",
            "uncompensated_N",
            "compensated_N",
            "uncompensated_vt_V",
            "compensated_vt_V",
            "uncompensated_deficiency_V",
            "compensated_deficiency_V",
        ],
    );
    for p in &points {
        comp.row([
            p.t_pw_s.to_string(),
            p.uncompensated_count.to_string(),
            p.compensated_count.to_string(),
            p.uncompensated_vt_v.to_string(),
            p.compensated_vt_v.to_string(),
            p.uncompensated_deficiency_v.to_string(),
            p.compensated_deficiency_v.to_string(),
        ]);
    }
    let mut notes = vec![format!("rng: {RNG_NAME}; trial k uses seed {seed} + k")];
    notes.extend(ERROR_DEFINITIONS.iter().map(|(k, v)| format!("{k}: {v}")));
    notes.push(format!("pulse width t_pw = {t_on} s / n; idle slot {} s", k.base_gap_s));
    Ok(Outputs {
        files: vec![
            ("fig7.csv".into(), stamped(stamp, "fig7_csv", |b| write_error_csv(&reports, b))?),
            ("fig6e.csv".into(), comp.finish()),
        ],
        notes,
    })
}
