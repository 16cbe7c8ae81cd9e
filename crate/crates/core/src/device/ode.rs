//! Continuous trap/tunneling model integrated in time.
//!
//! ON: `du/dt = (1 - u) / tau'`, `dq/dt = J0 exp(-beta / (V + kappa u - eta q))`.
//! OFF: `du/dt = -u / tau_detrap`, `dq/dt = 0` (solved exactly).
//!
//! ON intervals are integrated with classical RK4 on a uniform grid; the
//! whole train is re-run with the step halved until the final threshold
//! moves by less than [`ODE_TOL_V`].

use crate::device::deadzone::{decay_occupancy, trace_indices};
use crate::device::params::{ModelParams, OdeParams, REFERENCE_AMPLITUDE_V};
use crate::device::state::{DeviceState, Storage};
use crate::device::trace::VtTrace;
use crate::error::{Error, Result};
use crate::protocol::{Pulse, PulseTrain};

/// Convergence threshold on `V_T,N` between successive step halvings.
pub const ODE_TOL_V: f64 = 1e-6;
pub const MAX_HALVINGS: u32 = 20;
/// RK4 steps are additionally capped at this fraction of the trapping time.
const STIFFNESS_FRACTION: f64 = 0.5;

fn rhs(u: f64, q: f64, bias: f64, inv_tau: f64, ode: &OdeParams) -> (f64, f64) {
    ((1.0 - u) * inv_tau, ode.injection_rate(bias, u, q))
}

/// Integrates one pulse with `steps` RK4 steps; returns end `(u, q)`.
fn integrate_pulse(u0: f64, q0: f64, pulse: &Pulse, steps: u64, tau: f64, ode: &OdeParams) -> (f64, f64) {
    let bias = pulse.amplitude_v() / REFERENCE_AMPLITUDE_V;
    let h = pulse.width_s() / steps as f64;
    if tau == 0.0 {
        // occupancy saturates instantly at program bias
        let mut q = q0;
        for _ in 0..steps {
            let f = |q: f64| ode.injection_rate(bias, 1.0, q);
            let k1 = f(q);
            let k2 = f(q + 0.5 * h * k1);
            let k3 = f(q + 0.5 * h * k2);
            let k4 = f(q + h * k3);
            q += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        return (1.0, q);
    }
    let inv_tau = 1.0 / tau;
    let (mut u, mut q) = (u0, q0);
    for _ in 0..steps {
        let (a1, b1) = rhs(u, q, bias, inv_tau, ode);
        let (a2, b2) = rhs(u + 0.5 * h * a1, q + 0.5 * h * b1, bias, inv_tau, ode);
        let (a3, b3) = rhs(u + 0.5 * h * a2, q + 0.5 * h * b2, bias, inv_tau, ode);
        let (a4, b4) = rhs(u + h * a3, q + h * b3, bias, inv_tau, ode);
        u += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        q += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    }
    (u.clamp(0.0, 1.0), q)
}

/// Applies one pulse and the following gap to a charge-tracking state.
pub fn apply_pulse_ode(
    state: &DeviceState,
    pulse: &Pulse,
    gap_after_s: f64,
    params: &ModelParams,
    ode: &OdeParams,
    step_s: f64,
) -> DeviceState {
    let q0 = match state.storage() {
        Storage::Charge { q_ctl_v } => q_ctl_v,
        Storage::WriteTime { .. } => panic!("ODE pulse applied to a write-time state"),
    };
    let steps = (pulse.width_s() / step_s).ceil().max(1.0) as u64;
    let tau = params.effective_tau_trap_s();
    let (u, q) = integrate_pulse(state.occupancy(), q0, pulse, steps, tau, ode);
    DeviceState::new(
        decay_occupancy(u, gap_after_s, params),
        Storage::Charge { q_ctl_v: q.max(q0) },
        state.clock_s() + pulse.width_s() + gap_after_s,
    )
}

fn integrate_train(
    train: &PulseTrain,
    params: &ModelParams,
    ode: &OdeParams,
    step_s: f64,
    start: DeviceState,
) -> (Vec<(u32, f64)>, DeviceState) {
    let reads = trace_indices(train);
    let mut entries = Vec::with_capacity(reads.len());
    let mut next = reads.iter().peekable();
    let mut state = start;
    if next.peek() == Some(&&0) {
        entries.push((0, state.vt(params)));
        next.next();
    }
    for i in 1..=train.count() {
        state = apply_pulse_ode(&state, train.pulse(), train.gap_s(), params, ode, step_s);
        if next.peek() == Some(&&i) {
            entries.push((i, state.vt(params)));
            next.next();
        }
    }
    (entries, state)
}

/// Largest RK4 step used before any halving.
pub fn base_step(train: &PulseTrain, params: &ModelParams, dt_max_s: f64) -> f64 {
    let tau = params.effective_tau_trap_s();
    if tau > 0.0 {
        dt_max_s.min(STIFFNESS_FRACTION * tau)
    } else {
        dt_max_s
    }
    .min(train.width_s())
}

/// Runs the continuous model with step halving until `V_T,N` converges.
pub fn run_train_ode(train: &PulseTrain, params: &ModelParams, ode: &OdeParams, dt_max_s: f64) -> Result<VtTrace> {
    Ok(run_train_ode_report(train, params, ode, dt_max_s)?.trace)
}

/// Outcome of a converged integration.
#[derive(Debug, Clone)]
pub struct OdeRun {
    pub trace: VtTrace,
    /// Step size of the accepted run.
    pub step_s: f64,
    pub halvings: u32,
    /// `|V_T,N(h) - V_T,N(2h)|` at acceptance.
    pub last_change_v: f64,
}

pub fn run_train_ode_report(
    train: &PulseTrain,
    params: &ModelParams,
    ode: &OdeParams,
    dt_max_s: f64,
) -> Result<OdeRun> {
    Ok(run_train_ode_from(train, params, ode, dt_max_s, DeviceState::initialized_charge())?.0)
}

/// As [`run_train_ode_report`] from an arbitrary charge-tracking state; also
/// returns the state after the last gap of the accepted run.
pub fn run_train_ode_from(
    train: &PulseTrain,
    params: &ModelParams,
    ode: &OdeParams,
    dt_max_s: f64,
    start: DeviceState,
) -> Result<(OdeRun, DeviceState)> {
    params.validate()?;
    ode.validate()?;
    if start.charge_v().is_none() {
        return Err(Error::invalid("continuous model needs a charge-tracking state"));
    }
    let limit = train.width_s() / 20.0;
    if !(dt_max_s > 0.0 && dt_max_s <= limit * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!(
            "dt_max must lie in (0, t_pw/20 = {limit:e}], got {dt_max_s:e}"
        )));
    }
    let h0 = base_step(train, params, dt_max_s);
    let (mut prev, _) = integrate_train(train, params, ode, h0, start);
    let mut last = f64::NAN;
    for k in 1..=MAX_HALVINGS {
        let h = h0 / f64::from(1u32 << k);
        let (cur, end) = integrate_train(train, params, ode, h, start);
        let (a, b) = (final_of(&prev), final_of(&cur));
        last = (a - b).abs();
        if a.is_finite() && b.is_finite() && last < ODE_TOL_V {
            let run = OdeRun {
                trace: VtTrace::new(cur, *params, train.clone()),
                step_s: h,
                halvings: k,
                last_change_v: last,
            };
            return Ok((run, end));
        }
        prev = cur;
    }
    Err(Error::NumericFailure {
        step: "run_train_ode".into(),
        reason: format!("no convergence after {MAX_HALVINGS} halvings (last change {last:e} V)"),
    })
}

fn final_of(entries: &[(u32, f64)]) -> f64 {
    entries.last().map(|e| e.1).unwrap_or(f64::NAN)
}

/// Injection rate sampled across one pulse entered at `(u0, q0)`: `(t, rate)` pairs.
pub fn pulse_rate_profile(
    u0: f64,
    q0: f64,
    pulse: &Pulse,
    params: &ModelParams,
    ode: &OdeParams,
    samples: usize,
) -> Vec<(f64, f64)> {
    let bias = pulse.amplitude_v() / REFERENCE_AMPLITUDE_V;
    let tau = params.effective_tau_trap_s();
    let dt = pulse.width_s() / samples as f64;
    let sub = 64;
    let (mut u, mut q) = (u0, q0);
    let mut out = Vec::with_capacity(samples + 1);
    out.push((0.0, ode.injection_rate(bias, if tau == 0.0 { 1.0 } else { u }, q)));
    for s in 1..=samples {
        let seg = Pulse::new(pulse.amplitude_v(), dt).expect("positive segment");
        (u, q) = integrate_pulse(u, q, &seg, sub, tau, ode);
        out.push((s as f64 * dt, ode.injection_rate(bias, u, q)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::table1_trains;

    #[test]
    fn rejects_coarse_step() {
        let train = table1_trains(1e-3, &[10], 1.0).unwrap().remove(0);
        let p = ModelParams::analytic_pin();
        let o = OdeParams::default();
        assert!(run_train_ode(&train, &p, &o, train.width_s() / 10.0).is_err());
        assert!(run_train_ode(&train, &p, &o, 0.0).is_err());
    }

    #[test]
    fn stored_charge_is_monotone() {
        let p = ModelParams::analytic_pin();
        let o = OdeParams::default();
        let train = table1_trains(2.5e-3, &[100], 1e-4).unwrap().remove(0);
        let train = crate::protocol::with_intermediate_reads(&train, &(0..=100).collect::<Vec<_>>()).unwrap();
        let tr = run_train_ode(&train, &p, &o, train.width_s() / 20.0).unwrap();
        assert!(tr.entries().windows(2).all(|w| w[1].1 >= w[0].1));
        assert_eq!(tr.entries()[0], (0, p.vt0_v));
    }

    #[test]
    fn halving_changes_final_vt_by_less_than_tolerance() {
        let p = ModelParams::analytic_pin();
        let o = OdeParams::default();
        let train = table1_trains(2.5e-3, &[1000], 10.0).unwrap().remove(0);
        let run = run_train_ode_report(&train, &p, &o, train.width_s() / 20.0).unwrap();
        assert!(run.last_change_v < ODE_TOL_V);
        let (finer, _) = integrate_train(&train, &p, &o, run.step_s / 2.0, DeviceState::initialized_charge());
        assert!((final_of(&finer) - run.trace.final_vt()).abs() < ODE_TOL_V);
    }

    #[test]
    fn current_is_step_like_within_a_pulse() {
        let p = ModelParams::analytic_pin();
        let o = OdeParams::default();
        let pulse = Pulse::new(12.5, 25e-6).unwrap();
        let prof = pulse_rate_profile(0.0, 0.0, &pulse, &p, &o, 50);
        let start = prof[0].1;
        let peak = prof.iter().map(|x| x.1).fold(0.0, f64::max);
        assert!(peak / start > 1e6, "ratio {}", peak / start);
        // most of the rise happens within a few trapping times
        let t_half = prof.iter().find(|x| x.1 > 0.5 * peak).unwrap().0;
        assert!(t_half < 5e-6, "half-rise at {t_half}");
    }
}
