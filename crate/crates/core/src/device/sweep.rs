//! Model dispatch and parameter sweeps over pulse count, gap and stack split.

use std::str::FromStr;

use rayon::prelude::*;

use crate::device::deadzone::{closed_form_vtn, run_train_deadzone, run_train_deadzone_from};
use crate::device::ode::{run_train_ode, run_train_ode_from};
use crate::device::state::DeviceState;
use crate::device::params::{ModelParams, OdeParams};
use crate::device::trace::VtTrace;
use crate::error::{Error, Result};
use crate::protocol::{table1_trains, ExperimentSchedule, PulseTrain, ScheduleItem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    DeadZone,
    Ode {
        ode: OdeParams,
        /// Initial RK4 step; `None` uses `t_pw / 20`.
        dt_max_s: Option<f64>,
    },
}

impl Variant {
    pub fn ode_default() -> Self {
        Variant::Ode {
            ode: OdeParams::default(),
            dt_max_s: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::DeadZone => "deadzone",
            Variant::Ode { .. } => "ode",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deadzone" => Ok(Variant::DeadZone),
            "ode" => Ok(Variant::ode_default()),
            other => Err(Error::invalid(format!("unknown model variant `{other}` (expected deadzone | ode)"))),
        }
    }
}

/// Simulates `train` from a freshly initialized device.
pub fn run_train(train: &PulseTrain, params: &ModelParams, variant: &Variant) -> Result<VtTrace> {
    params.validate()?;
    match variant {
        Variant::DeadZone => Ok(run_train_deadzone(train, params)),
        Variant::Ode { ode, dt_max_s } => {
            let dt = dt_max_s.unwrap_or(train.width_s() / 20.0);
            run_train_ode(train, params, ode, dt)
        }
    }
}

/// Runs every train of a schedule in order. Initialization markers reset the
/// device; consecutive trains without a marker continue from the previous
/// state, gaps included.
pub fn run_schedule(schedule: &ExperimentSchedule, params: &ModelParams, variant: &Variant) -> Result<Vec<VtTrace>> {
    params.validate()?;
    let fresh = || match variant {
        Variant::DeadZone => DeviceState::initialized_write_time(),
        Variant::Ode { .. } => DeviceState::initialized_charge(),
    };
    let mut state = fresh();
    let mut out = Vec::new();
    for item in schedule.items() {
        match item {
            ScheduleItem::Initialize => state = fresh(),
            ScheduleItem::Program(train) => {
                let (trace, end) = match variant {
                    Variant::DeadZone => run_train_deadzone_from(train, params, state),
                    Variant::Ode { ode, dt_max_s } => {
                        let dt = dt_max_s.unwrap_or(train.width_s() / 20.0);
                        let (run, end) = run_train_ode_from(train, params, ode, dt, state)?;
                        (run.trace, end)
                    }
                };
                state = end;
                out.push(trace);
            }
        }
    }
    Ok(out)
}

/// Final threshold only; the dead-zone variant takes the closed form.
pub fn final_vt(train: &PulseTrain, params: &ModelParams, variant: &Variant) -> Result<f64> {
    match variant {
        Variant::DeadZone => {
            params.validate()?;
            Ok(closed_form_vtn(train.count(), train.width_s(), train.gap_s(), params))
        }
        Variant::Ode { .. } => Ok(run_train(train, params, variant)?.final_vt()),
    }
}

/// `V_T,N` for one fragmentation of `t_on_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountPoint {
    pub count: u32,
    pub t_pw_s: f64,
    pub t_gap_s: f64,
    pub vt_v: f64,
}

/// `V_T,N` for every pulse count at a fixed total ON time and gap.
pub fn sweep_counts(
    params: &ModelParams,
    counts: &[u32],
    t_on_s: f64,
    gap_s: f64,
    variant: &Variant,
) -> Result<Vec<CountPoint>> {
    let trains = table1_trains(t_on_s, counts, gap_s)?;
    trains
        .par_iter()
        .map(|t| {
            Ok(CountPoint {
                count: t.count(),
                t_pw_s: t.width_s(),
                t_gap_s: gap_s,
                vt_v: final_vt(t, params, variant)?,
            })
        })
        .collect()
}

/// `V_T,N` over the full count x gap grid, grouped by count.
pub fn sweep_gaps(
    params: &ModelParams,
    counts: &[u32],
    t_on_s: f64,
    gaps: &[f64],
    variant: &Variant,
) -> Result<Vec<Vec<CountPoint>>> {
    if gaps.is_empty() {
        return Err(Error::invalid("gap list is empty"));
    }
    counts
        .par_iter()
        .map(|&n| {
            gaps.iter()
                .map(|&g| Ok(sweep_counts(params, &[n], t_on_s, g, variant)?.remove(0)))
                .collect()
        })
        .collect()
}

/// Tolerance on single-pulse threshold agreement across splits.
pub const SPLIT_NORMALIZATION_TOL_V: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCurve {
    pub label: String,
    pub params: ModelParams,
    pub counts: Vec<u32>,
    pub vt_v: Vec<f64>,
    /// `V_T,1` of this split.
    pub vt_single_v: f64,
    /// `V_T,1 - V_T,1000`: loss caused by fragmenting into 1000 pulses.
    pub reduction_1000_v: f64,
    /// `V_T,1000 - V_T,0`.
    pub shift_1000_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub t_on_s: f64,
    pub gap_s: f64,
    pub curves: Vec<SplitCurve>,
}

/// Fragmentation curves for several stack splits.
///
/// Every split must program to the same `V_T,1` (within
/// [`SPLIT_NORMALIZATION_TOL_V`]) as the first one; see [`normalize_splits`].
pub fn split_sweep(
    splits: &[(String, ModelParams)],
    counts: &[u32],
    t_on_s: f64,
    gap_s: f64,
    variant: &Variant,
) -> Result<SweepResult> {
    let with_variant: Vec<_> = splits
        .iter()
        .map(|(l, p)| (l.clone(), *p, *variant))
        .collect();
    split_sweep_with(&with_variant, counts, t_on_s, gap_s)
}

/// [`split_sweep`] where each split carries its own model variant, as
/// returned by [`normalize_splits`].
pub fn split_sweep_with(
    splits: &[(String, ModelParams, Variant)],
    counts: &[u32],
    t_on_s: f64,
    gap_s: f64,
) -> Result<SweepResult> {
    if splits.is_empty() {
        return Err(Error::invalid("no splits given"));
    }
    let single: Vec<f64> = splits
        .par_iter()
        .map(|(_, p, v)| single_pulse_vt(p, t_on_s, gap_s, v))
        .collect::<Result<_>>()?;
    let reference = single[0];
    for ((label, _, _), v) in splits.iter().zip(&single) {
        if (v - reference).abs() > SPLIT_NORMALIZATION_TOL_V {
            return Err(Error::PreconditionViolation {
                label: label.clone(),
                reason: format!(
                    "single-pulse V_T {v:.4} V differs from reference {reference:.4} V by more than {SPLIT_NORMALIZATION_TOL_V} V"
                ),
            });
        }
    }
    let curves = splits
        .par_iter()
        .zip(single.par_iter())
        .map(|((label, p, variant), &vt1)| {
            let pts = sweep_counts(p, counts, t_on_s, gap_s, variant)?;
            let vt1000 = match pts.iter().find(|c| c.count == 1000) {
                Some(c) => c.vt_v,
                None => sweep_counts(p, &[1000], t_on_s, gap_s, variant)?[0].vt_v,
            };
            Ok(SplitCurve {
                label: label.clone(),
                params: *p,
                counts: pts.iter().map(|c| c.count).collect(),
                vt_v: pts.iter().map(|c| c.vt_v).collect(),
                vt_single_v: vt1,
                reduction_1000_v: vt1 - vt1000,
                shift_1000_v: vt1000 - p.vt0_v,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        t_on_s,
        gap_s,
        curves,
    })
}

fn single_pulse_vt(params: &ModelParams, t_on_s: f64, gap_s: f64, variant: &Variant) -> Result<f64> {
    Ok(sweep_counts(params, &[1], t_on_s, gap_s, variant)?[0].vt_v)
}

/// Rescales each split's programming strength so its single-pulse threshold
/// matches the first split, the way the bias of each split is chosen on the
/// bench. The dead-zone variant scales `A`; the continuous variant scales `J0`.
///
/// Returns the adjusted splits and, for the continuous variant, the per-split
/// tunneling parameters.
pub fn normalize_splits(
    splits: &[(String, ModelParams)],
    t_on_s: f64,
    gap_s: f64,
    variant: &Variant,
) -> Result<Vec<(String, ModelParams, Variant)>> {
    let Some((_, first)) = splits.first() else {
        return Err(Error::invalid("no splits given"));
    };
    let target = single_pulse_vt(first, t_on_s, gap_s, variant)?;
    splits
        .iter()
        .map(|(label, p)| {
            let scale = solve_strength(target, |s| {
                let (pp, vv) = scaled(p, variant, s);
                single_pulse_vt(&pp, t_on_s, gap_s, &vv)
            })
            .map_err(|e| match e {
                Error::NumericFailure { reason, .. } => Error::PreconditionViolation {
                    label: label.clone(),
                    reason,
                },
                other => other,
            })?;
            let (pp, vv) = scaled(p, variant, scale);
            Ok((label.clone(), pp, vv))
        })
        .collect()
}

fn scaled(p: &ModelParams, variant: &Variant, s: f64) -> (ModelParams, Variant) {
    match variant {
        Variant::DeadZone => (
            ModelParams {
                a_v: p.a_v * s,
                ..*p
            },
            Variant::DeadZone,
        ),
        Variant::Ode { ode, dt_max_s } => (
            *p,
            Variant::Ode {
                ode: OdeParams {
                    j0_per_s: ode.j0_per_s * s,
                    ..*ode
                },
                dt_max_s: *dt_max_s,
            },
        ),
    }
}

/// Bisection in log-scale for the strength factor hitting `target`.
fn solve_strength(target: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let (mut lo, mut hi) = (1e-3f64.ln(), 1e3f64.ln());
    let f_lo = f(lo.exp())?;
    let f_hi = f(hi.exp())?;
    if !(f_lo <= target && target <= f_hi) {
        return Err(Error::NumericFailure {
            step: "normalize_splits".into(),
            reason: format!("single-pulse target {target} V outside reachable [{f_lo}, {f_hi}] V"),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid.exp())?;
        if (v - target).abs() < 1e-9 {
            return Ok(mid.exp());
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Stack-split variants relative to the base stack (4 nm tunnel oxide,
/// as-deposited nitride, 12 nm blocking oxide).
pub mod splits {
    use super::ModelParams;

    /// Blocking-oxide thickness split; trapping time scales with thickness.
    pub fn blocking_oxide(base: &ModelParams, thickness_nm: f64) -> (String, ModelParams) {
        (
            format!("BO {thickness_nm} nm"),
            ModelParams {
                bo_scale: thickness_nm / 12.0,
                ..*base
            },
        )
    }

    /// Tunnel-oxide thickness split; `sensitivity` is the fractional change
    /// of trapping time per fractional change of thickness.
    pub fn tunnel_oxide(base: &ModelParams, thickness_nm: f64, sensitivity: f64) -> (String, ModelParams) {
        (
            format!("TO {thickness_nm} nm"),
            ModelParams {
                to_sens: sensitivity * (thickness_nm / 4.0 - 1.0),
                ..*base
            },
        )
    }

    /// Post-deposition anneal of the trap layer.
    pub fn trap_layer_anneal(base: &ModelParams, sensitivity: f64) -> (String, ModelParams) {
        (
            "CTL PDA".to_string(),
            ModelParams {
                ctl_sens: sensitivity,
                ..*base
            },
        )
    }
}
