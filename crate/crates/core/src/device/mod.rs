//! Threshold-voltage evolution of the charge-trap stack under pulse trains.
//!
//! Two model variants share [`ModelParams`]: a hard-threshold dead-zone model
//! with a closed form ([`deadzone`]) and a continuous trap/tunneling ODE
//! ([`ode`]).

pub mod deadzone;
pub mod ode;
pub mod params;
pub mod state;
pub mod sweep;
pub mod trace;

pub use deadzone::{apply_pulse_deadzone, closed_form_vtn, dead_time, vt_from_write_time};
pub use ode::{run_train_ode, ODE_TOL_V};
pub use params::{ModelParams, OdeParams};
pub use state::{vt_of, DeviceState, Storage};
pub use sweep::{run_schedule, run_train, split_sweep, split_sweep_with, SweepResult, Variant};
pub use trace::VtTrace;
