//! Run configuration, presets and `--set` overrides.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use ctf_sim::calibration::AnchorSet;
use ctf_sim::device::{ModelParams, Variant};
use ctf_sim::extraction::{DEFAULT_EPSILON_V, DEFAULT_N_FIX};
use ctf_sim::protocol::{DEFAULT_LONG_GAP_S, DEFAULT_T_ON_S};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    SweepN,
    SweepGap,
    Splits,
    Extract,
    Calibrate,
    RpuError,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::SweepN,
        Command::SweepGap,
        Command::Splits,
        Command::Extract,
        Command::Calibrate,
        Command::RpuError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::SweepN => "sweep-n",
            Command::SweepGap => "sweep-gap",
            Command::Splits => "splits",
            Command::Extract => "extract",
            Command::Calibrate => "calibrate",
            Command::RpuError => "rpu-error",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Command::ALL.iter().map(|c| c.name()).collect();
                CliError::Usage(format!("unknown command `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// Built-in reproduction targets: a command plus default overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub command: Command,
    pub overrides: &'static [(&'static str, &'static str)],
}

pub const PRESETS: [Preset; 6] = [
    Preset {
        name: "fig3a",
        command: Command::SweepN,
        overrides: &[("t_gap_s", "10")],
    },
    Preset {
        name: "fig3b",
        command: Command::SweepGap,
        overrides: &[],
    },
    Preset {
        name: "fig4c",
        command: Command::Splits,
        overrides: &[("variant", "ode")],
    },
    Preset {
        name: "fig6a",
        command: Command::Simulate,
        overrides: &[],
    },
    Preset {
        name: "fig6e",
        command: Command::RpuError,
        overrides: &[("t_tar_s", "2e-3")],
    },
    Preset {
        name: "fig7",
        command: Command::RpuError,
        overrides: &[("base_gap_s", "10"), ("p_x", "0.5"), ("p_d", "0.5")],
    },
];

pub fn preset(name: &str) -> Result<&'static Preset, CliError> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        CliError::Usage(format!("unknown preset `{name}`; expected one of {}", names.join(", ")))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub preset: Option<String>,
    /// `None` selects the calibrated parameters shipped with the library.
    pub params_file: Option<PathBuf>,
    pub protocol_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// `key=value` pairs in the order given; later entries win.
    pub overrides: Vec<(String, String)>,
}

impl RunConfig {
    pub fn new(command: Command, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            command,
            preset: None,
            params_file: None,
            protocol_file: None,
            output_dir: output_dir.into(),
            seed: 0,
            overrides: Vec::new(),
        }
    }

    /// Configuration of a named preset; user overrides go after the preset's own.
    pub fn from_preset(name: &str, output_dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let p = preset(name)?;
        let mut cfg = Self::new(p.command, output_dir);
        cfg.preset = Some(p.name.to_string());
        cfg.overrides = p
            .overrides
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Ok(cfg)
    }

    pub fn with_override(mut self, key: &str, value: &str) -> Self {
        self.overrides.push((key.to_string(), value.to_string()));
        self
    }
}

/// Parses one `key=value` argument.
pub fn parse_override(arg: &str) -> Result<(String, String), CliError> {
    match arg.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(CliError::Usage(format!("override `{arg}` is not of the form key=value"))),
    }
}

/// Run knobs other than model parameters, with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Knobs {
    pub variant: String,
    pub t_on_s: f64,
    pub t_gap_s: f64,
    #[serde(rename = "epsilon_V")]
    pub epsilon_v: f64,
    pub n_fix: u32,
    pub trials: u32,
    pub base_gap_s: f64,
    pub p_x: f64,
    pub p_d: f64,
    pub t_tar_s: f64,
    pub budget: usize,
    #[serde(rename = "anchor_fall_V")]
    pub anchor_fall_v: f64,
    pub anchor_knee_s: f64,
    #[serde(rename = "anchor_VT0_V")]
    pub anchor_vt0_v: f64,
    /// Trapping-time sensitivity applied to the tunnel-oxide splits.
    pub to_split_sens: f64,
    /// Trapping-time change of the annealed trap-layer split.
    pub ctl_split_sens: f64,
}

impl Default for Knobs {
    fn default() -> Self {
        let a = AnchorSet::default();
        Self {
            variant: "deadzone".into(),
            t_on_s: DEFAULT_T_ON_S,
            t_gap_s: DEFAULT_LONG_GAP_S,
            epsilon_v: DEFAULT_EPSILON_V,
            n_fix: DEFAULT_N_FIX,
            trials: 1000,
            base_gap_s: DEFAULT_LONG_GAP_S,
            p_x: 0.5,
            p_d: 0.5,
            t_tar_s: 2e-3,
            budget: ctf_sim::calibration::DEFAULT_BUDGET,
            anchor_fall_v: a.d_vt_log_fall_v,
            anchor_knee_s: a.knee_tpw_s,
            anchor_vt0_v: a.vt0_v,
            to_split_sens: 0.0,
            ctl_split_sens: 0.0,
        }
    }
}

pub const KNOB_NAMES: [&str; 16] = [
    "variant",
    "t_on_s",
    "t_gap_s",
    "epsilon_V",
    "n_fix",
    "trials",
    "base_gap_s",
    "p_x",
    "p_d",
    "t_tar_s",
    "budget",
    "anchor_fall_V",
    "anchor_knee_s",
    "anchor_VT0_V",
    "to_split_sens",
    "ctl_split_sens",
];

impl Knobs {
    /// Applies one override; `Ok(false)` when the key is not a knob.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("`{v}` is not a valid number"))
        }
        match key {
            "variant" => {
                value.parse::<Variant>().map_err(|e| e.to_string())?;
                self.variant = value.to_string();
            }
            "t_on_s" => self.t_on_s = num(value)?,
            "t_gap_s" => self.t_gap_s = num(value)?,
            "epsilon_V" => self.epsilon_v = num(value)?,
            "n_fix" => self.n_fix = num(value)?,
            "trials" => self.trials = num(value)?,
            "base_gap_s" => self.base_gap_s = num(value)?,
            "p_x" => self.p_x = num(value)?,
            "p_d" => self.p_d = num(value)?,
            "t_tar_s" => self.t_tar_s = num(value)?,
            "budget" => self.budget = num(value)?,
            "anchor_fall_V" => self.anchor_fall_v = num(value)?,
            "anchor_knee_s" => self.anchor_knee_s = num(value)?,
            "anchor_VT0_V" => self.anchor_vt0_v = num(value)?,
            "to_split_sens" => self.to_split_sens = num(value)?,
            "ctl_split_sens" => self.ctl_split_sens = num(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Range problems as `(field, message)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.t_on_s) {
            out.push(("t_on_s", format!("must be > 0, got {}", self.t_on_s)));
        }
        if !(self.t_gap_s.is_finite() && self.t_gap_s >= 0.0) {
            out.push(("t_gap_s", format!("must be >= 0, got {}", self.t_gap_s)));
        }
        if !pos(self.epsilon_v) {
            out.push(("epsilon_V", format!("must be > 0, got {}", self.epsilon_v)));
        }
        if self.n_fix == 0 {
            out.push(("n_fix", "must be >= 1".into()));
        }
        if self.trials < 100 {
            out.push(("trials", format!("must be >= 100, got {}", self.trials)));
        }
        if !pos(self.base_gap_s) {
            out.push(("base_gap_s", format!("must be > 0, got {}", self.base_gap_s)));
        }
        for (name, p) in [("p_x", self.p_x), ("p_d", self.p_d)] {
            if !(p > 0.0 && p <= 1.0) {
                out.push((name, format!("must lie in (0, 1], got {p}")));
            }
        }
        if !pos(self.t_tar_s) {
            out.push(("t_tar_s", format!("must be > 0, got {}", self.t_tar_s)));
        }
        if self.budget < 100 {
            out.push(("budget", format!("must be >= 100, got {}", self.budget)));
        }
        for (name, v) in [("to_split_sens", self.to_split_sens), ("ctl_split_sens", self.ctl_split_sens)] {
            if !(v.is_finite() && v > -1.0) {
                out.push((name, format!("must be finite and > -1, got {v}")));
            }
        }
        if let Err(e) = self.anchors().validate() {
            out.push(("anchors", e.to_string()));
        }
        out
    }

    pub fn variant(&self) -> Variant {
        self.variant.parse().expect("checked when set")
    }

    pub fn anchors(&self) -> AnchorSet {
        AnchorSet {
            d_vt_log_fall_v: self.anchor_fall_v,
            knee_tpw_s: self.anchor_knee_s,
            vt0_v: self.anchor_vt0_v,
            t_on_s: self.t_on_s,
            ..AnchorSet::default()
        }
    }
}

/// Model parameters and knobs after applying every override.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub params: ModelParams,
    pub knobs: Knobs,
}
