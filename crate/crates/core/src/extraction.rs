//! Timescale extraction from threshold-voltage data.
//!
//! `t_crit` comes from gap sweeps: the gap beyond which the final threshold
//! sits on its large-gap plateau. `t_trap` comes from the write-time balance
//! `t_pw n_req = T_NV + n_req t_trap`, with `t_pw` read off the `n_req`
//! curves at a fixed pulse count and `T_NV` read off single-pulse data.
//! All interpolation is linear in log(time).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::device::{run_train, vt_from_write_time, ModelParams, Variant, VtTrace};
use crate::error::{Error, Result};
use crate::protocol::{table1_trains, with_intermediate_reads, Pulse, PulseTrain, DEFAULT_AMPLITUDE_V};

pub const DEFAULT_EPSILON_V: f64 = 5e-3;
pub const DEFAULT_N_FIX: u32 = 200;
/// One-shot write times below this are outside the method's validity.
pub const DEFAULT_MIN_T_NV_S: f64 = 100e-6;

/// Final threshold of one train measured at several gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCurve {
    count: u32,
    t_pw_s: f64,
    points: Vec<(f64, f64)>,
}

impl GapCurve {
    /// `points` are `(t_gap, V_T,N)`; gaps must be positive, strictly
    /// increasing, at least four, spanning three decades or more.
    pub fn new(count: u32, t_pw_s: f64, points: Vec<(f64, f64)>) -> Result<Self> {
        if !(t_pw_s > 0.0) {
            return Err(Error::invalid(format!("gap curve t_pw must be positive, got {t_pw_s}")));
        }
        if points.len() < 4 {
            return Err(Error::invalid(format!("gap curve needs at least 4 points, got {}", points.len())));
        }
        if points.iter().any(|p| !(p.0 > 0.0) || !p.1.is_finite()) {
            return Err(Error::invalid("gap curve gaps must be positive and voltages finite"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("gap curve gaps must be strictly increasing"));
        }
        let span = (points[points.len() - 1].0 / points[0].0).log10();
        if span < 3.0 - 1e-9 {
            return Err(Error::invalid(format!("gap curve spans {span:.2} decades, need at least 3")));
        }
        Ok(Self { count, t_pw_s, points })
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn t_pw_s(&self) -> f64 {
        self.t_pw_s
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Pulses needed to reach one target threshold, per pulse width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NreqCurve {
    vt_tar_v: f64,
    points: Vec<(f64, u32)>,
}

impl NreqCurve {
    /// `points` are `(t_pw, n_req)` with strictly increasing widths and
    /// non-increasing counts.
    pub fn new(vt_tar_v: f64, points: Vec<(f64, u32)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("empty n_req curve"));
        }
        if points.iter().any(|p| !(p.0 > 0.0)) {
            return Err(Error::invalid("n_req curve widths must be positive"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("n_req curve widths must be strictly increasing"));
        }
        if points.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(Error::invalid("n_req must be non-increasing in pulse width"));
        }
        Ok(Self { vt_tar_v, points })
    }

    pub fn vt_tar_v(&self) -> f64 {
        self.vt_tar_v
    }

    pub fn points(&self) -> &[(f64, u32)] {
        &self.points
    }
}

/// Linear interpolation of `ln x` against `y` between two samples.
fn log_interp(y: f64, (x0, y0): (f64, f64), (x1, y1): (f64, f64)) -> f64 {
    if y1 == y0 {
        return x0;
    }
    let f = (y - y0) / (y1 - y0);
    (x0.ln() + f * (x1.ln() - x0.ln())).exp()
}

/// Smallest gap beyond which the final threshold stays within `epsilon_v`
/// of its plateau, the mean over the largest decade of gaps.
pub fn detect_t_crit(curve: &GapCurve, epsilon_v: f64) -> Result<f64> {
    if !(epsilon_v > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon_v}")));
    }
    let pts = curve.points();
    let g_max = pts[pts.len() - 1].0;
    let top: Vec<f64> = pts.iter().filter(|p| p.0 >= g_max / 10.0 * (1.0 - 1e-12)).map(|p| p.1).collect();
    let sat = top.iter().sum::<f64>() / top.len() as f64;

    let within = |v: f64| (v - sat).abs() < epsilon_v;
    let first_settled = match pts.iter().rposition(|p| !within(p.1)) {
        None => return Ok(pts[0].0),
        Some(i) if i + 1 == pts.len() => {
            return Err(Error::NotSaturated {
                deviation_v: (pts[i].1 - sat).abs(),
                epsilon_v,
            })
        }
        Some(i) => i + 1,
    };
    let (a, b) = (pts[first_settled - 1], pts[first_settled]);
    let edge = sat + epsilon_v.copysign(a.1 - sat);
    Ok(log_interp(edge, a, b))
}

/// Smallest read index whose threshold reaches `vt_tar_v`.
pub fn n_required(trace: &VtTrace, vt_tar_v: f64) -> Result<u32> {
    trace
        .entries()
        .iter()
        .find(|e| e.1 >= vt_tar_v)
        .map(|e| e.0)
        .ok_or(Error::TargetUnreachable {
            target_v: vt_tar_v,
            max_vt_v: trace.max_vt(),
        })
}

/// Pulse width at which exactly `n_fix` pulses reach the curve's target,
/// interpolated log-log between the bracketing widths.
pub fn tpw_at_fixed_nreq(curve: &NreqCurve, n_fix: u32) -> Result<f64> {
    let pts = curve.points();
    if let Some(p) = pts.iter().find(|p| p.1 == n_fix) {
        return Ok(p.0);
    }
    let lo = pts.iter().map(|p| p.1).min().unwrap_or(0);
    let hi = pts.iter().map(|p| p.1).max().unwrap_or(0);
    if n_fix == 0 || n_fix < lo || n_fix > hi {
        return Err(Error::OutOfRange(format!(
            "n_fix = {n_fix} outside n_req range [{lo}, {hi}] for target {} V",
            curve.vt_tar_v()
        )));
    }
    let i = pts
        .windows(2)
        .position(|w| w[0].1 > n_fix && w[1].1 < n_fix)
        .expect("bracket exists inside the range of a monotone curve");
    let (a, b) = (pts[i], pts[i + 1]);
    let ln_t = log_interp(
        (n_fix as f64).ln(),
        (a.0, (a.1 as f64).ln()),
        (b.0, (b.1 as f64).ln()),
    );
    Ok(ln_t)
}

/// Pulse width whose single-pulse threshold equals `vt_tar_v`, reported as
/// the effective write time `T_NV`.
pub fn tnv_from_one_shot(one_shot: &[(f64, f64)], vt_tar_v: f64) -> Result<f64> {
    if one_shot.len() < 2 {
        return Err(Error::invalid("one-shot data needs at least two points"));
    }
    if one_shot.iter().any(|p| !(p.0 > 0.0)) || one_shot.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::invalid("one-shot widths must be positive and strictly increasing"));
    }
    if one_shot.windows(2).any(|w| w[1].1 < w[0].1) {
        return Err(Error::invalid("one-shot V_T,1 must be non-decreasing in width"));
    }
    let (first, last) = (one_shot[0], one_shot[one_shot.len() - 1]);
    if vt_tar_v < first.1 || vt_tar_v > last.1 {
        return Err(Error::OutOfRange(format!(
            "target {vt_tar_v} V outside one-shot range [{}, {}] V",
            first.1, last.1
        )));
    }
    let i = one_shot.iter().position(|p| p.1 >= vt_tar_v).expect("target within range");
    if one_shot[i].1 == vt_tar_v || i == 0 {
        return Ok(one_shot[i].0);
    }
    Ok(log_interp(vt_tar_v, one_shot[i - 1], one_shot[i]))
}

/// `t_trap = t_pw - T_NV / n_req`.
pub fn t_trap_eq3(t_pw_s: f64, t_nv_s: f64, n_req: u32) -> Result<f64> {
    if n_req == 0 {
        return Err(Error::invalid("n_req must be at least 1"));
    }
    let t_tar = t_pw_s * f64::from(n_req);
    let mut t_trap = t_pw_s - t_nv_s / f64::from(n_req);
    // rounding of an exactly balanced input
    if t_trap < 0.0 && t_trap > -4.0 * f64::EPSILON * t_pw_s {
        t_trap = 0.0;
    }
    if t_trap < 0.0 {
        return Err(Error::InconsistentInputs(format!(
            "T_NV = {t_nv_s:e} s exceeds T_tar = t_pw n_req = {t_tar:e} s (t_trap = {t_trap:e} s)"
        )));
    }
    Ok(t_trap)
}

/// Tunables of [`full_extraction`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub n_fix: u32,
    pub epsilon_v: f64,
    pub min_t_nv_s: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            n_fix: DEFAULT_N_FIX,
            epsilon_v: DEFAULT_EPSILON_V,
            min_t_nv_s: DEFAULT_MIN_T_NV_S,
        }
    }
}

/// Trapping time extracted for one target threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetExtraction {
    pub vt_tar_v: f64,
    pub n_req: u32,
    pub t_pw_200_s: f64,
    pub t_tar_s: f64,
    pub t_nv_s: f64,
    pub t_trap_s: f64,
}

impl TargetExtraction {
    /// `|T_tar - (T_NV + n_req t_trap)| / T_tar`.
    pub fn identity_residual(&self) -> f64 {
        let n = f64::from(self.n_req);
        (self.t_pw_200_s * n - (self.t_nv_s + n * self.t_trap_s)).abs() / self.t_tar_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTarget {
    pub vt_tar_v: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub config: ExtractionConfig,
    /// Distinct pulse widths of the input traces.
    pub trace_widths_s: Vec<f64>,
    pub one_shot_points: usize,
    pub targets: Vec<TargetExtraction>,
    pub skipped: Vec<SkippedTarget>,
    /// `(t_pw, t_crit)` sorted by width.
    pub t_crit_by_tpw: Vec<(f64, f64)>,
}

impl ExtractionReport {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_t_trap_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["vt_tar_V", "t_trap_s"])?;
        for t in &self.targets {
            w.write_record([t.vt_tar_v.to_string(), t.t_trap_s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_t_crit_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_pw_s", "t_crit_s"])?;
        for (t_pw, t_crit) in &self.t_crit_by_tpw {
            w.write_record([t_pw.to_string(), t_crit.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the `n_req` curve of one target from traces at several widths.
/// Widths whose trace never reaches the target are left out; repeated
/// widths keep the smallest count.
pub fn nreq_curve(traces: &[VtTrace], vt_tar_v: f64) -> Result<NreqCurve> {
    let mut pts: Vec<(f64, u32)> = Vec::new();
    for tr in traces {
        match n_required(tr, vt_tar_v) {
            Ok(n) => pts.push((tr.train().width_s(), n)),
            Err(Error::TargetUnreachable { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    pts.dedup_by(|b, a| a.0 == b.0);
    if pts.is_empty() {
        let max_vt_v = traces.iter().map(VtTrace::max_vt).fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::TargetUnreachable {
            target_v: vt_tar_v,
            max_vt_v,
        });
    }
    NreqCurve::new(vt_tar_v, pts)
}

/// Runs the whole extraction: `t_trap` per target and `t_crit` per gap curve.
///
/// Targets whose one-shot write time falls below `config.min_t_nv_s` are
/// reported as skipped. Any other failure aborts with the step label.
pub fn full_extraction(
    traces: &[VtTrace],
    one_shot: &[(f64, f64)],
    gap_curves: &[GapCurve],
    vt_targets: &[f64],
    config: &ExtractionConfig,
) -> Result<ExtractionReport> {
    let mut widths: Vec<f64> = traces.iter().map(|t| t.train().width_s()).collect();
    widths.sort_by(f64::total_cmp);
    widths.dedup();
    if widths.len() < 4 {
        return Err(Error::invalid(format!("traces span {} pulse widths, need at least 4", widths.len())));
    }
    if config.n_fix == 0 {
        return Err(Error::invalid("n_fix must be at least 1"));
    }

    let mut targets = Vec::new();
    let mut skipped = Vec::new();
    for &vt_tar in vt_targets {
        let t_nv = tnv_from_one_shot(one_shot, vt_tar).map_err(|e| e.at_step("tnv_from_one_shot"))?;
        if t_nv < config.min_t_nv_s {
            skipped.push(SkippedTarget {
                vt_tar_v: vt_tar,
                reason: format!("T_NV = {t_nv:e} s below the {:e} s validity guard", config.min_t_nv_s),
            });
            continue;
        }
        let curve = nreq_curve(traces, vt_tar).map_err(|e| e.at_step("n_required"))?;
        let t_pw = tpw_at_fixed_nreq(&curve, config.n_fix).map_err(|e| e.at_step("tpw_at_fixed_nreq"))?;
        let t_trap = t_trap_eq3(t_pw, t_nv, config.n_fix).map_err(|e| e.at_step("t_trap_eq3"))?;
        targets.push(TargetExtraction {
            vt_tar_v: vt_tar,
            n_req: config.n_fix,
            t_pw_200_s: t_pw,
            t_tar_s: t_pw * f64::from(config.n_fix),
            t_nv_s: t_nv,
            t_trap_s: t_trap,
        });
    }

    let mut t_crit_by_tpw = gap_curves
        .iter()
        .map(|c| Ok((c.t_pw_s(), detect_t_crit(c, config.epsilon_v)?)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_step("detect_t_crit"))?;
    t_crit_by_tpw.sort_by(|a, b| a.0.total_cmp(&b.0));

    Ok(ExtractionReport {
        config: *config,
        trace_widths_s: widths,
        one_shot_points: one_shot.len(),
        targets,
        skipped,
        t_crit_by_tpw,
    })
}

/// Simulated inputs for [`full_extraction`].
#[derive(Debug, Clone)]
pub struct ExtractionInputs {
    pub traces: Vec<VtTrace>,
    pub one_shot: Vec<(f64, f64)>,
    pub gap_curves: Vec<GapCurve>,
    pub vt_targets: Vec<f64>,
}

/// Log-spaced grid with `per_decade` points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, per_decade: u32) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * f64::from(per_decade)).round() as u32;
    (0..=n)
        .map(|k| lo * 10f64.powf(f64::from(k) / f64::from(per_decade)))
        .collect()
}

/// Effective write times at which the default synthetic targets sit.
pub const SYNTHETIC_TARGET_T_NV_S: [f64; 5] = [2e-4, 5e-4, 1e-3, 2e-3, 5e-3];

/// Generates extraction inputs from the dead-zone model: fully read traces
/// of 2000 pulses at 10 s gaps over 1 us to 1 ms widths, single pulses from
/// 1 us to 100 ms, and gap sweeps of the standard fragmentation trains at `t_on_s`.
pub fn synthetic_inputs(params: &ModelParams, t_on_s: f64, counts: &[u32], gaps: &[f64]) -> Result<ExtractionInputs> {
    use rayon::prelude::*;
    const TRACE_PULSES: u32 = 2000;
    const LONG_GAP_S: f64 = 10.0;
    let all_reads: Vec<u32> = (0..=TRACE_PULSES).collect();
    let traces = log_grid(1e-6, 1e-3, 10)
        .par_iter()
        .map(|&w| {
            let train = PulseTrain::new(Pulse::new(DEFAULT_AMPLITUDE_V, w)?, TRACE_PULSES, LONG_GAP_S)?;
            run_train(&with_intermediate_reads(&train, &all_reads)?, params, &Variant::DeadZone)
        })
        .collect::<Result<Vec<_>>>()?;
    let one_shot = log_grid(1e-6, 1e-1, 20)
        .iter()
        .map(|&w| {
            let train = PulseTrain::new(Pulse::new(DEFAULT_AMPLITUDE_V, w)?, 1, LONG_GAP_S)?;
            Ok((w, run_train(&train, params, &Variant::DeadZone)?.final_vt()))
        })
        .collect::<Result<Vec<_>>>()?;
    let gap_curves = table1_trains(t_on_s, counts, LONG_GAP_S)?
        .par_iter()
        .map(|train| {
            let pts = gaps
                .iter()
                .map(|&g| Ok((g, run_train(&train.with_gap(g)?, params, &Variant::DeadZone)?.final_vt())))
                .collect::<Result<Vec<_>>>()?;
            GapCurve::new(train.count(), train.width_s(), pts)
        })
        .collect::<Result<Vec<_>>>()?;
    let vt_targets = SYNTHETIC_TARGET_T_NV_S.iter().map(|&t| vt_from_write_time(t, params)).collect();
    Ok(ExtractionInputs {
        traces,
        one_shot,
        gap_curves,
        vt_targets,
    })
}
