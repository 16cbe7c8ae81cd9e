//! Fitting of the dead-zone parameters to the fragmentation anchors.
//!
//! The loss compares the simulated count-sweep fall and cutoff width with
//! their anchors. It is minimized with a bounded Nelder-Mead simplex over
//! `(ln tau_trap, A, u_c)`. `t0` and `tau_detrap` are held at the seed values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::deadzone::closed_form_vtn;
use crate::device::ModelParams;
use crate::error::{Error, Result};
use crate::protocol::{DEFAULT_GAP_GRID_S, DEFAULT_LONG_GAP_S, DEFAULT_T_ON_S, TABLE1_COUNTS};

/// Fraction of the single-pulse shift below which a train counts as cut off.
pub const CUTOFF_FRACTION: f64 = 0.05;
/// Residual charged when a gap sweep is not monotone.
pub const MONOTONE_PENALTY: f64 = 1e3;
/// Voltage scale of the fall residual when the anchor itself is zero.
const ZERO_FALL_SCALE_V: f64 = 0.01;
pub const DEFAULT_BUDGET: usize = 2000;
const OBJECTIVE_TOL: f64 = 1e-4;
const DIAMETER_TOL: f64 = 1e-6;

/// Box constraints of the search.
const LN_TAU_BOUNDS: (f64, f64) = (-27.6, -6.9); // 1e-12 s .. 1e-3 s
// the upper limit keeps a T_ON pulse below the VTmax clamp with the default VT0
const A_BOUNDS: (f64, f64) = (0.05, 0.5);
const U_C_BOUNDS: (f64, f64) = (0.5, 0.99);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    /// `V_T,N(1) - V_T,N(1000)` at the long gap.
    pub d_vt_log_fall_v: f64,
    /// Width below which programming is cut off.
    pub knee_tpw_s: f64,
    pub vt0_v: f64,
    pub t_on_s: f64,
    /// Weights of the fall, knee and monotonicity residuals.
    pub weights: [f64; 3],
}

impl Default for AnchorSet {
    fn default() -> Self {
        Self {
            d_vt_log_fall_v: 0.30,
            knee_tpw_s: 2e-6,
            vt0_v: -1.2,
            t_on_s: DEFAULT_T_ON_S,
            weights: [1.0, 1.0, 1.0],
        }
    }
}

impl AnchorSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_vt_log_fall_v >= 0.0 && self.d_vt_log_fall_v.is_finite()) {
            return Err(Error::invalid("d_vt_log_fall must be >= 0"));
        }
        if !(self.knee_tpw_s > 0.0 && self.t_on_s > 0.0) {
            return Err(Error::invalid("knee_tpw and t_on must be positive"));
        }
        if !self.vt0_v.is_finite() {
            return Err(Error::invalid("vt0 must be finite"));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Signed relative residuals: fall, knee, monotonicity.
    pub residuals: [f64; 3],
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective after each iteration.
    pub history: Vec<f64>,
}

/// `V_T,N(1) - V_T,N(1000)` of the fixed-`T_ON` count sweep at the long gap.
pub fn simulated_fall(params: &ModelParams, t_on_s: f64) -> f64 {
    closed_form_vtn(1, t_on_s, DEFAULT_LONG_GAP_S, params)
        - closed_form_vtn(1000, t_on_s / 1000.0, DEFAULT_LONG_GAP_S, params)
}

fn shift_at_width(params: &ModelParams, t_on_s: f64, t_pw_s: f64) -> f64 {
    let count = (t_on_s / t_pw_s).round().clamp(1.0, u32::MAX as f64) as u32;
    closed_form_vtn(count, t_pw_s, DEFAULT_LONG_GAP_S, params) - params.vt0_v
}

/// Largest width whose fixed-`T_ON` train shifts `V_T` by less than
/// [`CUTOFF_FRACTION`] of the single-pulse shift; 0 if none does.
pub fn simulated_cutoff(params: &ModelParams, t_on_s: f64) -> f64 {
    let threshold = CUTOFF_FRACTION * shift_at_width(params, t_on_s, t_on_s);
    let below = |w: f64| shift_at_width(params, t_on_s, w) < threshold;
    let (mut lo, mut hi) = (1e-12f64.ln(), t_on_s.ln());
    if !below(lo.exp()) {
        return 0.0;
    }
    if below(hi.exp()) {
        return t_on_s;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if below(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.exp()
}

/// Whether every standard fragmentation train is non-increasing in gap over the default grid.
pub fn gap_sweeps_monotone(params: &ModelParams, t_on_s: f64) -> bool {
    TABLE1_COUNTS.iter().all(|&n| {
        let t_pw = t_on_s / f64::from(n);
        DEFAULT_GAP_GRID_S
            .windows(2)
            .all(|g| closed_form_vtn(n, t_pw, g[1], params) <= closed_form_vtn(n, t_pw, g[0], params) + 1e-12)
    })
}

pub fn residuals(params: &ModelParams, anchors: &AnchorSet) -> [f64; 3] {
    let scale = if anchors.d_vt_log_fall_v > 0.0 {
        anchors.d_vt_log_fall_v
    } else {
        ZERO_FALL_SCALE_V
    };
    let fall = (simulated_fall(params, anchors.t_on_s) - anchors.d_vt_log_fall_v) / scale;
    let knee = (simulated_cutoff(params, anchors.t_on_s) - anchors.knee_tpw_s) / anchors.knee_tpw_s;
    let mono = if gap_sweeps_monotone(params, anchors.t_on_s) {
        0.0
    } else {
        MONOTONE_PENALTY
    };
    [fall, knee, mono]
}

/// Weighted sum of squared residuals.
pub fn objective(params: &ModelParams, anchors: &AnchorSet) -> f64 {
    weighted(&residuals(params, anchors), anchors)
}

fn weighted(r: &[f64; 3], anchors: &AnchorSet) -> f64 {
    r.iter().zip(&anchors.weights).map(|(r, w)| w * r * r).sum()
}

fn to_point(p: &ModelParams) -> [f64; 3] {
    [p.tau_trap_s.max(1e-300).ln(), p.a_v, p.u_c]
}

fn from_point(x: &[f64; 3], seed: &ModelParams, anchors: &AnchorSet) -> ModelParams {
    ModelParams {
        tau_trap_s: x[0].clamp(LN_TAU_BOUNDS.0, LN_TAU_BOUNDS.1).exp(),
        a_v: x[1].clamp(A_BOUNDS.0, A_BOUNDS.1),
        u_c: x[2].clamp(U_C_BOUNDS.0, U_C_BOUNDS.1),
        vt0_v: anchors.vt0_v,
        ..*seed
    }
}

/// Deterministic Nelder-Mead fit started at `seed`.
///
/// Stops when the best objective drops below 1e-4 after the simplex has
/// shrunk to a relative diameter of 1e-6, or when `budget` evaluations are
/// spent; in the latter case `converged` reflects the objective alone.
pub fn fit(anchors: &AnchorSet, seed: &ModelParams, budget: usize) -> Result<FitResult> {
    anchors.validate()?;
    seed.validate()?;
    if budget < 100 {
        return Err(Error::invalid(format!("budget must be at least 100 evaluations, got {budget}")));
    }
    let f = |x: &[f64; 3]| objective(&from_point(x, seed, anchors), anchors);

    let x0 = to_point(seed);
    let steps = [0.1, 0.05 * x0[1].abs().max(0.01), 0.02];
    let mut simplex: Vec<[f64; 3]> = vec![x0];
    for (k, s) in steps.iter().enumerate() {
        let mut x = x0;
        // step inward when the seed sits on an upper bound
        let upper = [LN_TAU_BOUNDS.1, A_BOUNDS.1, U_C_BOUNDS.1][k];
        x[k] += if x[k] + s > upper { -s } else { *s };
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.par_iter().map(f).collect();
    let mut evaluations = simplex.len();
    let mut history = Vec::new();
    let mut iterations = 0;

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        let mut order: Vec<usize> = (0..simplex.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i]).collect();
        values = order.iter().map(|&i| values[i]).collect();
        history.push(values[0]);

        let diameter = simplex[1..]
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs() / b.abs().max(1e-3))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter < DIAMETER_TOL || evaluations + 4 > budget {
            let best = from_point(&simplex[0], seed, anchors);
            let residuals = residuals(&best, anchors);
            let objective = weighted(&residuals, anchors);
            return Ok(FitResult {
                params: best,
                residuals,
                objective,
                iterations,
                evaluations,
                converged: objective < OBJECTIVE_TOL || diameter < DIAMETER_TOL,
                history,
            });
        }
        iterations += 1;

        let n = simplex.len() - 1;
        let mut centroid = [0.0; 3];
        for x in &simplex[..n] {
            for k in 0..3 {
                centroid[k] += x[k] / n as f64;
            }
        }
        let along = |t: f64| -> [f64; 3] {
            let mut y = [0.0; 3];
            for k in 0..3 {
                y[k] = centroid[k] + t * (simplex[n][k] - centroid[k]);
            }
            y
        };
        let xr = along(-alpha);
        let fr = f(&xr);
        evaluations += 1;
        if fr < values[0] {
            let xe = along(-alpha * gamma);
            let fe = f(&xe);
            evaluations += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-rho);
                (xc, f(&xc))
            } else {
                let xc = along(rho);
                (xc, f(&xc))
            };
            evaluations += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                let best = simplex[0];
                let shrunk: Vec<[f64; 3]> = simplex[1..]
                    .iter()
                    .map(|x| {
                        let mut y = [0.0; 3];
                        for k in 0..3 {
                            y[k] = best[k] + sigma * (x[k] - best[k]);
                        }
                        y
                    })
                    .collect();
                let vals: Vec<f64> = shrunk.par_iter().map(f).collect();
                evaluations += shrunk.len();
                for (i, (x, v)) in shrunk.into_iter().zip(vals).enumerate() {
                    simplex[i + 1] = x;
                    values[i + 1] = v;
                }
            }
        }
    }
}

/// Version tag written into generated parameter files.
pub const PARAMS_FILE_VERSION: u32 = 1;

/// Parameter file for `result`, headed by comment lines describing the fit.
pub fn params_file_contents(result: &FitResult, anchors: &AnchorSet) -> Result<String> {
    let mut out = format!(
        "# ctf-sim model parameters, format version {PARAMS_FILE_VERSION}\n\
         # generated by calibrate: fall anchor {} V, knee {} s, T_ON {} s\n\
         # objective {:e} after {} iterations ({} evaluations), converged = {}\n",
        anchors.d_vt_log_fall_v,
        anchors.knee_tpw_s,
        anchors.t_on_s,
        result.objective,
        result.iterations,
        result.evaluations,
        result.converged
    );
    out.push_str(&result.params.to_toml_string()?);
    Ok(out)
}

#[derive(Serialize)]
struct FitReport<'a> {
    anchors: &'a AnchorSet,
    objective: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
    residual_fall: f64,
    residual_knee: f64,
    residual_monotone: f64,
    simulated_fall_v: f64,
    simulated_cutoff_s: f64,
    params: &'a ModelParams,
}

/// Structured-text fit report: anchors, residuals and fitted parameters.
pub fn fit_report(result: &FitResult, anchors: &AnchorSet) -> Result<String> {
    let report = FitReport {
        anchors,
        objective: result.objective,
        iterations: result.iterations,
        evaluations: result.evaluations,
        converged: result.converged,
        residual_fall: result.residuals[0],
        residual_knee: result.residuals[1],
        residual_monotone: result.residuals[2],
        simulated_fall_v: simulated_fall(&result.params, anchors.t_on_s),
        simulated_cutoff_s: simulated_cutoff(&result.params, anchors.t_on_s),
        params: &result.params,
    };
    toml::to_string(&report).map_err(|e| Error::Parse(e.to_string()))
}
