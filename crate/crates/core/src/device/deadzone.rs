//! Hard-threshold dead-zone model.
//!
//! During each pulse the blocking-oxide occupancy charges as
//! `1 - (1 - u) exp(-t / tau')`; tunneling into the trap layer is off until
//! `u` reaches `u_c` and fully on afterwards. Between pulses the occupancy
//! decays as `u exp(-t / tau_detrap)`. The stored charge is tracked as the
//! accumulated effective write time `T_NV`.

use crate::device::params::ModelParams;
use crate::device::state::{DeviceState, Storage};
use crate::device::trace::VtTrace;
use crate::protocol::{Pulse, PulseTrain};

/// Time for the occupancy to climb from `u0` to `u_c` at program bias.
pub fn dead_time(u0: f64, params: &ModelParams) -> f64 {
    if u0 >= params.u_c {
        return 0.0;
    }
    let tau = params.effective_tau_trap_s();
    if tau == 0.0 {
        return 0.0;
    }
    tau * ((1.0 - u0) / (1.0 - params.u_c)).ln()
}

/// Occupancy at the end of `width_s` of program bias, starting from `u0`.
pub fn charge_occupancy(u0: f64, width_s: f64, params: &ModelParams) -> f64 {
    let tau = params.effective_tau_trap_s();
    if tau == 0.0 {
        return 1.0;
    }
    1.0 - (1.0 - u0) * (-width_s / tau).exp()
}

/// Occupancy after `gap_s` at zero bias.
pub fn decay_occupancy(u0: f64, gap_s: f64, params: &ModelParams) -> f64 {
    u0 * (-gap_s / params.tau_detrap_s).exp()
}

/// Effective write time contributed by one pulse entered at occupancy `u0`.
pub fn effective_write_time(u0: f64, width_s: f64, params: &ModelParams) -> f64 {
    (width_s - dead_time(u0, params)).max(0.0)
}

/// Applies one pulse followed by `gap_after_s` of zero bias.
///
/// `state` must carry write-time storage.
pub fn apply_pulse_deadzone(
    state: &DeviceState,
    pulse: &Pulse,
    gap_after_s: f64,
    params: &ModelParams,
) -> DeviceState {
    let width = pulse.width_s();
    let u = state.occupancy();
    let gained = effective_write_time(u, width, params);
    let t_nv = match state.storage() {
        Storage::WriteTime { t_nv_s } => t_nv_s + gained,
        Storage::Charge { .. } => panic!("dead-zone pulse applied to a charge-tracking state"),
    };
    let charged = charge_occupancy(u, width, params);
    DeviceState::new(
        decay_occupancy(charged, gap_after_s, params),
        Storage::WriteTime { t_nv_s: t_nv },
        state.clock_s() + width + gap_after_s,
    )
}

/// Threshold voltage for an accumulated effective write time.
pub fn vt_from_write_time(t_nv_s: f64, params: &ModelParams) -> f64 {
    (params.vt0_v + params.a_v * (t_nv_s / params.t0_s).ln_1p()).min(params.vt_max_v)
}

/// Steps the train pulse by pulse from a freshly initialized device.
pub fn run_train_deadzone(train: &PulseTrain, params: &ModelParams) -> VtTrace {
    run_train_deadzone_from(train, params, DeviceState::initialized_write_time()).0
}

/// Steps the train from `start`; also returns the state after the last gap.
///
/// # Panics
/// If `start` does not carry write-time storage.
pub fn run_train_deadzone_from(train: &PulseTrain, params: &ModelParams, start: DeviceState) -> (VtTrace, DeviceState) {
    let mut state = start;
    let reads = trace_indices(train);
    let mut entries = Vec::with_capacity(reads.len());
    let mut next = reads.iter().peekable();
    if next.peek() == Some(&&0) {
        entries.push((0, state.vt(params)));
        next.next();
    }
    for i in 1..=train.count() {
        state = apply_pulse_deadzone(&state, train.pulse(), train.gap_s(), params);
        if next.peek() == Some(&&i) {
            entries.push((i, state.vt(params)));
            next.next();
        }
    }
    (VtTrace::new(entries, *params, train.clone()), state)
}

/// Read indices of a train plus the initial and final reads.
pub(crate) fn trace_indices(train: &PulseTrain) -> Vec<u32> {
    let mut reads = Vec::with_capacity(train.read_points().len() + 2);
    reads.push(0);
    reads.extend(train.read_points().iter().copied().filter(|&r| r != 0));
    if reads.last() != Some(&train.count()) {
        reads.push(train.count());
    }
    reads
}

/// `T_NV` after `count` uniform pulses, without stepping the state.
///
/// The entry occupancy of pulse `i` solves the linear recurrence
/// `u[i+1] = g (1 - a) + a g u[i]` with `a = exp(-t_pw / tau')` and
/// `g = exp(-t_gap / tau_detrap)`, i.e. `u[i] = u* (1 - (a g)^i)`. Terms are
/// summed individually until `(a g)^i` underflows against 1, after which all
/// remaining pulses see the fixed point `u*`.
pub fn closed_form_write_time(count: u32, t_pw_s: f64, t_gap_s: f64, params: &ModelParams) -> f64 {
    let tau = params.effective_tau_trap_s();
    let a = if tau == 0.0 { 0.0 } else { (-t_pw_s / tau).exp() };
    let g = (-t_gap_s / params.tau_detrap_s).exp();
    let r = a * g;
    let u_star = if r < 1.0 { g * (1.0 - a) / (1.0 - r) } else { 0.0 };

    let mut total = 0.0;
    let mut r_pow = 1.0;
    for i in 0..count {
        if r_pow < f64::EPSILON * 1e-2 {
            let steady = effective_write_time(u_star, t_pw_s, params);
            return total + steady * (count - i) as f64;
        }
        let u = u_star * (1.0 - r_pow);
        total += effective_write_time(u, t_pw_s, params);
        r_pow *= r;
    }
    total
}

/// Final threshold of a uniform train, computed from [`closed_form_write_time`].
pub fn closed_form_vtn(count: u32, t_pw_s: f64, t_gap_s: f64, params: &ModelParams) -> f64 {
    vt_from_write_time(closed_form_write_time(count, t_pw_s, t_gap_s, params), params)
}

/// Entry occupancy of pulse `index` (0-based) of a uniform train.
pub fn entry_occupancy(index: u32, t_pw_s: f64, t_gap_s: f64, params: &ModelParams) -> f64 {
    let tau = params.effective_tau_trap_s();
    let a = if tau == 0.0 { 0.0 } else { (-t_pw_s / tau).exp() };
    let g = (-t_gap_s / params.tau_detrap_s).exp();
    let r = a * g;
    if r >= 1.0 {
        return 0.0;
    }
    g * (1.0 - a) / (1.0 - r) * (1.0 - r.powi(index as i32))
}

/// Fixed-point entry occupancy of a long uniform train.
pub fn steady_occupancy(t_pw_s: f64, t_gap_s: f64, params: &ModelParams) -> f64 {
    let tau = params.effective_tau_trap_s();
    let a = if tau == 0.0 { 0.0 } else { (-t_pw_s / tau).exp() };
    let g = (-t_gap_s / params.tau_detrap_s).exp();
    let r = a * g;
    if r >= 1.0 {
        0.0
    } else {
        g * (1.0 - a) / (1.0 - r)
    }
}
