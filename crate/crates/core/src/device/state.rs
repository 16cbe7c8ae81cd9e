use crate::device::deadzone::vt_from_write_time;
use crate::device::params::ModelParams;

/// What the device remembers in its trap layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Storage {
    /// Accumulated effective write time (dead-zone model).
    WriteTime { t_nv_s: f64 },
    /// Stored charge expressed as threshold shift (continuous model).
    Charge { q_ctl_v: f64 },
}

/// Instantaneous device state: blocking-oxide occupancy, trap-layer storage
/// and elapsed simulated time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceState {
    occupancy: f64,
    storage: Storage,
    clock_s: f64,
}

impl DeviceState {
    /// # Panics
    /// If `occupancy` is outside `[0, 1]` or the storage is negative.
    pub fn new(occupancy: f64, storage: Storage, clock_s: f64) -> Self {
        assert!((0.0..=1.0).contains(&occupancy), "occupancy {occupancy} outside [0, 1]");
        match storage {
            Storage::WriteTime { t_nv_s } => assert!(t_nv_s >= 0.0, "negative write time"),
            Storage::Charge { q_ctl_v } => assert!(q_ctl_v >= 0.0, "negative stored charge"),
        }
        Self {
            occupancy,
            storage,
            clock_s,
        }
    }

    pub fn initialized_write_time() -> Self {
        Self::new(0.0, Storage::WriteTime { t_nv_s: 0.0 }, 0.0)
    }

    pub fn initialized_charge() -> Self {
        Self::new(0.0, Storage::Charge { q_ctl_v: 0.0 }, 0.0)
    }

    pub fn occupancy(&self) -> f64 {
        self.occupancy
    }

    pub fn storage(&self) -> Storage {
        self.storage
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    pub fn write_time_s(&self) -> Option<f64> {
        match self.storage {
            Storage::WriteTime { t_nv_s } => Some(t_nv_s),
            Storage::Charge { .. } => None,
        }
    }

    pub fn charge_v(&self) -> Option<f64> {
        match self.storage {
            Storage::Charge { q_ctl_v } => Some(q_ctl_v),
            Storage::WriteTime { .. } => None,
        }
    }

    /// Threshold voltage read out of the state. Blocking-oxide occupancy
    /// does not enter: those traps are inactive at read bias.
    pub fn vt(&self, params: &ModelParams) -> f64 {
        vt_of(self, params)
    }
}

pub fn vt_of(state: &DeviceState, params: &ModelParams) -> f64 {
    match state.storage {
        Storage::WriteTime { t_nv_s } => vt_from_write_time(t_nv_s, params),
        Storage::Charge { q_ctl_v } => (params.vt0_v + q_ctl_v).min(params.vt_max_v),
    }
}
