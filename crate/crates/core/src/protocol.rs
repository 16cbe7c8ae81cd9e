//! Program pulse trains and experiment schedules.
//!
//! A [`PulseTrain`] is `count` identical rectangular pulses separated by a
//! fixed OFF gap. The total ON time is `count * width`; rise and fall edges
//! are carried as metadata and never counted as ON time. An
//! [`ExperimentSchedule`] interleaves trains with initialization markers,
//! each marker resetting the device to its initial threshold.
//!
//! Schedules are stored as TOML documents:
//!
//! ```toml
//! label = "table1"
//!
//! [[trains]]
//! kind = "init"
//!
//! [[trains]]
//! kind = "program"
//! amplitude_V = 12.5
//! t_pw_s = 0.0025
//! N = 1
//! t_gap_s = 10.0
//! reads = [0, 1]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Program amplitude used for every train unless overridden.
pub const DEFAULT_AMPLITUDE_V: f64 = 12.5;
/// Fixed rise/fall edge duration, excluded from ON time.
pub const DEFAULT_RISE_FALL_S: f64 = 150e-9;
/// Total ON time of the base program pulse.
pub const DEFAULT_T_ON_S: f64 = 2.5e-3;
/// Pulse counts of the fragmentation experiment.
pub const TABLE1_COUNTS: [u32; 10] = [1, 10, 25, 50, 100, 500, 1000, 2000, 5000, 10000];
/// Nine log-spaced decades from 100 ns to 10 s.
pub const DEFAULT_GAP_GRID_S: [f64; 9] = [1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];
/// Gap long enough that consecutive pulses do not interact.
pub const DEFAULT_LONG_GAP_S: f64 = 10.0;

/// A single rectangular program pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    amplitude_v: f64,
    width_s: f64,
    rise_fall_s: f64,
}

impl Pulse {
    pub fn new(amplitude_v: f64, width_s: f64) -> Result<Self> {
        Self::with_rise_fall(amplitude_v, width_s, DEFAULT_RISE_FALL_S)
    }

    pub fn with_rise_fall(amplitude_v: f64, width_s: f64, rise_fall_s: f64) -> Result<Self> {
        if !amplitude_v.is_finite() {
            return Err(Error::invalid(format!("pulse amplitude must be finite, got {amplitude_v}")));
        }
        if !(width_s.is_finite() && width_s > 0.0) {
            return Err(Error::invalid(format!("pulse width must be > 0, got {width_s}")));
        }
        if !(rise_fall_s.is_finite() && rise_fall_s >= 0.0) {
            return Err(Error::invalid(format!("rise/fall time must be >= 0, got {rise_fall_s}")));
        }
        Ok(Self {
            amplitude_v,
            width_s,
            rise_fall_s,
        })
    }

    pub fn amplitude_v(&self) -> f64 {
        self.amplitude_v
    }

    pub fn width_s(&self) -> f64 {
        self.width_s
    }

    pub fn rise_fall_s(&self) -> f64 {
        self.rise_fall_s
    }
}

/// `count` pulses separated by `gap_s`, with the pulse indices at which the
/// threshold voltage is read.
///
/// Read index `k` means "after `k` pulses"; 0 is the initialized state.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pulse: Pulse,
    count: u32,
    gap_s: f64,
    read_points: Vec<u32>,
}

impl PulseTrain {
    /// Train read only before and after programming.
    pub fn new(pulse: Pulse, count: u32, gap_s: f64) -> Result<Self> {
        Self::with_reads(pulse, count, gap_s, vec![0, count])
    }

    pub fn with_reads(pulse: Pulse, count: u32, gap_s: f64, read_points: Vec<u32>) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("pulse count must be >= 1"));
        }
        if !(gap_s.is_finite() && gap_s >= 0.0) {
            return Err(Error::invalid(format!("t_gap must be >= 0, got {gap_s}")));
        }
        check_reads(&read_points, count)?;
        Ok(Self {
            pulse,
            count,
            gap_s,
            read_points,
        })
    }

    pub fn pulse(&self) -> &Pulse {
        &self.pulse
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn gap_s(&self) -> f64 {
        self.gap_s
    }

    pub fn width_s(&self) -> f64 {
        self.pulse.width_s
    }

    pub fn read_points(&self) -> &[u32] {
        &self.read_points
    }

    /// Total ON time, `count * width`.
    pub fn t_on_s(&self) -> f64 {
        self.count as f64 * self.pulse.width_s
    }

    /// Copy with a different gap; everything else unchanged.
    pub fn with_gap(&self, gap_s: f64) -> Result<Self> {
        Self::with_reads(self.pulse, self.count, gap_s, self.read_points.clone())
    }
}

fn check_reads(reads: &[u32], count: u32) -> Result<()> {
    if let Some(&bad) = reads.iter().find(|&&r| r > count) {
        return Err(Error::invalid(format!("read index {bad} outside [0, {count}]")));
    }
    if reads.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("read indices must be strictly increasing"));
    }
    Ok(())
}

/// Splits `t_on_s` into one train per pulse count, each pulse `t_on_s / n` wide.
pub fn table1_trains(t_on_s: f64, counts: &[u32], gap_s: f64) -> Result<Vec<PulseTrain>> {
    if !(t_on_s.is_finite() && t_on_s > 0.0) {
        return Err(Error::invalid(format!("T_ON must be > 0, got {t_on_s}")));
    }
    if counts.is_empty() {
        return Err(Error::invalid("pulse count list is empty"));
    }
    counts
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::invalid("pulse count must be >= 1"));
            }
            let pulse = Pulse::new(DEFAULT_AMPLITUDE_V, t_on_s / n as f64)?;
            PulseTrain::new(pulse, n, gap_s)
        })
        .collect()
}

/// One copy of `train` per gap value, in the given order.
pub fn gap_sweep(train: &PulseTrain, gaps: &[f64]) -> Result<Vec<PulseTrain>> {
    if gaps.is_empty() {
        return Err(Error::invalid("gap list is empty"));
    }
    gaps.iter().map(|&g| train.with_gap(g)).collect()
}

/// Copy of `train` that reads the threshold at the given pulse indices.
pub fn with_intermediate_reads(train: &PulseTrain, indices: &[u32]) -> Result<PulseTrain> {
    PulseTrain::with_reads(train.pulse, train.count, train.gap_s, indices.to_vec())
}

/// `[0, 1, 2, 5, 10, 20, 50, ...]` up to and including `count`.
pub fn log_read_grid(count: u32) -> Vec<u32> {
    let mut reads = vec![0u32];
    let mut decade = 1u64;
    'outer: loop {
        for m in [1u64, 2, 5] {
            let r = m * decade;
            if r >= count as u64 {
                break 'outer;
            }
            reads.push(r as u32);
        }
        decade *= 10;
    }
    reads.push(count);
    reads
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleItem {
    /// Erase back to the initial threshold and clear trap occupancy.
    Initialize,
    Program(PulseTrain),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSchedule {
    label: String,
    items: Vec<ScheduleItem>,
}

impl ExperimentSchedule {
    pub fn new(label: impl Into<String>, items: Vec<ScheduleItem>) -> Result<Self> {
        let mut initialized = false;
        for (i, item) in items.iter().enumerate() {
            match item {
                ScheduleItem::Initialize => initialized = true,
                ScheduleItem::Program(_) if !initialized => {
                    return Err(Error::invalid(format!(
                        "train {i} is not preceded by an initialization marker"
                    )))
                }
                ScheduleItem::Program(_) => {}
            }
        }
        Ok(Self {
            label: label.into(),
            items,
        })
    }

    /// Each train preceded by its own initialization.
    pub fn from_trains(label: impl Into<String>, trains: Vec<PulseTrain>) -> Self {
        let items = trains
            .into_iter()
            .flat_map(|t| [ScheduleItem::Initialize, ScheduleItem::Program(t)])
            .collect();
        Self {
            label: label.into(),
            items,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn items(&self) -> &[ScheduleItem] {
        &self.items
    }

    pub fn trains(&self) -> impl Iterator<Item = &PulseTrain> {
        self.items.iter().filter_map(|item| match item {
            ScheduleItem::Program(t) => Some(t),
            ScheduleItem::Initialize => None,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let file = ProtocolFile {
            label: self.label.clone(),
            trains: self
                .items
                .iter()
                .map(|item| match item {
                    ScheduleItem::Initialize => TrainEntry::Init,
                    ScheduleItem::Program(t) => TrainEntry::Program(ProgramEntry::from(t)),
                })
                .collect(),
        };
        toml::to_string(&file).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        ProtocolFile::parse(text)?.into_schedule()
    }
}

/// On-disk layout of a schedule, before semantic validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolFile {
    pub label: String,
    #[serde(default)]
    pub trains: Vec<TrainEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainEntry {
    Init,
    Program(ProgramEntry),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramEntry {
    #[serde(rename = "amplitude_V")]
    pub amplitude_v: f64,
    pub t_pw_s: f64,
    #[serde(rename = "N")]
    pub n: u32,
    pub t_gap_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reads: Option<Vec<u32>>,
    /// Declared total ON time; checked against `N * t_pw_s` when present.
    #[serde(rename = "T_ON_s", default, skip_serializing_if = "Option::is_none")]
    pub t_on_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rise_fall_s: Option<f64>,
}

impl From<&PulseTrain> for ProgramEntry {
    fn from(t: &PulseTrain) -> Self {
        let rf = t.pulse.rise_fall_s;
        Self {
            amplitude_v: t.pulse.amplitude_v,
            t_pw_s: t.pulse.width_s,
            n: t.count,
            t_gap_s: t.gap_s,
            reads: Some(t.read_points.clone()),
            t_on_s: None,
            rise_fall_s: (rf != DEFAULT_RISE_FALL_S).then_some(rf),
        }
    }
}

/// Relative tolerance for the declared `T_ON_s` consistency check.
pub const T_ON_REL_TOL: f64 = 1e-9;

impl ProgramEntry {
    /// Field-level problems as `(field, message)`; empty iff [`Self::to_train`] succeeds.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !self.amplitude_v.is_finite() {
            out.push(("amplitude_V", format!("must be finite, got {}", self.amplitude_v)));
        }
        if !(self.t_pw_s.is_finite() && self.t_pw_s > 0.0) {
            out.push(("t_pw_s", format!("must be > 0, got {}", self.t_pw_s)));
        }
        if self.n == 0 {
            out.push(("N", "must be >= 1".to_string()));
        }
        if !(self.t_gap_s.is_finite() && self.t_gap_s >= 0.0) {
            out.push(("t_gap_s", format!("must be >= 0, got {}", self.t_gap_s)));
        }
        if let Some(rf) = self.rise_fall_s {
            if !(rf.is_finite() && rf >= 0.0) {
                out.push(("rise_fall_s", format!("must be >= 0, got {rf}")));
            }
        }
        if let Some(reads) = &self.reads {
            if let Err(e) = check_reads(reads, self.n) {
                out.push(("reads", e.to_string()));
            }
        }
        if let Some(t_on) = self.t_on_s {
            let actual = self.n as f64 * self.t_pw_s;
            if (actual - t_on).abs() > T_ON_REL_TOL * t_on.abs().max(actual.abs()) {
                out.push((
                    "T_ON_s",
                    format!("arithmetic mismatch: N * t_pw_s = {actual} s but T_ON_s = {t_on} s"),
                ));
            }
        }
        out
    }

    pub fn to_train(&self) -> Result<PulseTrain> {
        if let Some(t_on) = self.t_on_s {
            let actual = self.n as f64 * self.t_pw_s;
            if (actual - t_on).abs() > T_ON_REL_TOL * t_on.abs().max(actual.abs()) {
                return Err(Error::invalid(format!(
                    "N * t_pw_s = {actual} s does not match declared T_ON_s = {t_on} s"
                )));
            }
        }
        let pulse = Pulse::with_rise_fall(
            self.amplitude_v,
            self.t_pw_s,
            self.rise_fall_s.unwrap_or(DEFAULT_RISE_FALL_S),
        )?;
        let reads = self.reads.clone().unwrap_or_else(|| vec![0, self.n]);
        PulseTrain::with_reads(pulse, self.n, self.t_gap_s, reads)
    }
}

impl ProtocolFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn into_schedule(self) -> Result<ExperimentSchedule> {
        let items = self
            .trains
            .iter()
            .map(|entry| match entry {
                TrainEntry::Init => Ok(ScheduleItem::Initialize),
                TrainEntry::Program(p) => p.to_train().map(ScheduleItem::Program),
            })
            .collect::<Result<Vec<_>>>()?;
        ExperimentSchedule::new(self.label, items)
    }
}
