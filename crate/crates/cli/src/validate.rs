//! Pre-run checks reported as diagnostics with file and line context.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ctf_sim::device::ModelParams;
use ctf_sim::protocol::{ExperimentSchedule, ProtocolFile, TrainEntry};

use crate::config::{Command, Knobs, Resolved, RunConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File(PathBuf),
    Override,
    OutputDir,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub origin: Origin,
    /// 1-based line within the file, when known.
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
    io: bool,
}

impl Diagnostic {
    fn new(origin: Origin, line: Option<usize>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            origin,
            line,
            field: field.into(),
            message: message.into(),
            io: false,
        }
    }

    fn io(origin: Origin, field: &str, message: impl Into<String>) -> Self {
        Self {
            io: true,
            ..Self::new(origin, None, field, message)
        }
    }

    /// True for missing or unreadable files and unusable output directories.
    pub fn is_io(&self) -> bool {
        self.io
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.origin, self.line) {
            (Origin::File(p), Some(l)) => write!(f, "{}:{l}: ", p.display())?,
            (Origin::File(p), None) => write!(f, "{}: ", p.display())?,
            (Origin::Override, _) => f.write_str("--set: ")?,
            (Origin::OutputDir, _) => f.write_str("--out: ")?,
        }
        write!(f, "`{}` {}", self.field, self.message)
    }
}

/// Every precondition problem of `config`; empty iff [`crate::run`] would
/// get past its checks.
pub fn validate(config: &RunConfig) -> Vec<Diagnostic> {
    match check(config) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    }
}

/// Loaded and overridden inputs, or every diagnostic found.
pub(crate) fn check(config: &RunConfig) -> Result<(Resolved, Option<ExperimentSchedule>), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let params = match &config.params_file {
        // calibration starts from the analytic pin unless a seed file is given
        None if config.command == Command::Calibrate => Some(ModelParams::analytic_pin()),
        None => Some(ModelParams::default()),
        Some(path) => load_params(path, &mut diags),
    };
    let schedule = config
        .protocol_file
        .as_ref()
        .and_then(|path| load_protocol(path, &mut diags));
    let mut knobs = Knobs::default();
    let mut params_over = params;
    for (key, value) in &config.overrides {
        match knobs.set(key, value) {
            Ok(true) => continue,
            Ok(false) => {}
            Err(msg) => {
                diags.push(Diagnostic::new(Origin::Override, None, key, msg));
                continue;
            }
        }
        if !ModelParams::FIELD_NAMES.contains(&key.as_str()) {
            diags.push(Diagnostic::new(Origin::Override, None, key, "is not a model parameter or run setting"));
            continue;
        }
        match value.parse::<f64>() {
            Ok(v) => {
                if let Some(p) = params_over.as_mut() {
                    p.set(key, v).expect("field name checked");
                }
            }
            Err(_) => diags.push(Diagnostic::new(Origin::Override, None, key, format!("`{value}` is not a valid number"))),
        }
    }
    for (field, msg) in knobs.violations() {
        diags.push(Diagnostic::new(Origin::Override, None, field, msg));
    }
    let dead_zone_only = matches!(config.command, Command::Extract | Command::Calibrate | Command::RpuError);
    if dead_zone_only && knobs.variant != "deadzone" {
        diags.push(Diagnostic::new(
            Origin::Override,
            None,
            "variant",
            format!("`{}` only supports the deadzone variant", config.command),
        ));
    }
    let touched = config.overrides.iter().any(|(k, _)| ModelParams::FIELD_NAMES.contains(&k.as_str()));
    if let (Some(p), true) = (params_over, touched) {
        for (field, msg) in p.violations() {
            diags.push(Diagnostic::new(Origin::Override, None, field, msg));
        }
    }
    check_output_dir(&config.output_dir, &mut diags);
    match (params_over, diags.is_empty()) {
        (Some(params), true) => Ok((Resolved { params, knobs }, schedule)),
        _ => Err(diags),
    }
}

fn read(path: &Path, field: &str, diags: &mut Vec<Diagnostic>) -> Option<String> {
    match fs::read_to_string(path) {
        Ok(t) => Some(t),
        Err(e) => {
            diags.push(Diagnostic::io(Origin::File(path.to_path_buf()), field, format!("cannot be read: {e}")));
            None
        }
    }
}

fn parse_error(path: &Path, text: &str, e: &toml::de::Error) -> Diagnostic {
    let line = e.span().map(|s| line_of_offset(text, s.start));
    Diagnostic::new(Origin::File(path.to_path_buf()), line, "syntax", e.message().to_string())
}

fn load_params(path: &Path, diags: &mut Vec<Diagnostic>) -> Option<ModelParams> {
    let text = read(path, "params", diags)?;
    let params: ModelParams = match toml::from_str(&text) {
        Ok(p) => p,
        Err(e) => {
            diags.push(parse_error(path, &text, &e));
            return None;
        }
    };
    let v = params.violations();
    for (field, msg) in &v {
        diags.push(Diagnostic::new(
            Origin::File(path.to_path_buf()),
            key_line(&text, None, field),
            *field,
            msg.clone(),
        ));
    }
    v.is_empty().then_some(params)
}

fn load_protocol(path: &Path, diags: &mut Vec<Diagnostic>) -> Option<ExperimentSchedule> {
    let text = read(path, "protocol", diags)?;
    let file: ProtocolFile = match toml::from_str(&text) {
        Ok(f) => f,
        Err(e) => {
            diags.push(parse_error(path, &text, &e));
            return None;
        }
    };
    let before = diags.len();
    for (i, entry) in file.trains.iter().enumerate() {
        if let TrainEntry::Program(p) = entry {
            for (field, msg) in p.violations() {
                let line = key_line(&text, Some(i), field).or_else(|| block_line(&text, i));
                diags.push(Diagnostic::new(Origin::File(path.to_path_buf()), line, field, msg));
            }
        }
    }
    if diags.len() > before {
        return None;
    }
    let first_program = file.trains.iter().position(|t| matches!(t, TrainEntry::Program(_)));
    match file.into_schedule() {
        Ok(s) => Some(s),
        Err(e) => {
            let line = first_program.and_then(|i| block_line(&text, i));
            diags.push(Diagnostic::new(Origin::File(path.to_path_buf()), line, "trains", e.to_string()));
            None
        }
    }
}

fn check_output_dir(dir: &Path, diags: &mut Vec<Diagnostic>) {
    let mut probe = dir;
    loop {
        match fs::metadata(probe) {
            Ok(m) if !m.is_dir() => {
                diags.push(Diagnostic::io(Origin::OutputDir, "output_dir", format!("{} is not a directory", probe.display())));
                return;
            }
            Ok(m) => {
                if m.permissions().readonly() {
                    diags.push(Diagnostic::io(Origin::OutputDir, "output_dir", format!("{} is read-only", probe.display())));
                }
                return;
            }
            Err(_) => match probe.parent() {
                Some(p) if !p.as_os_str().is_empty() => probe = p,
                _ => return,
            },
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn is_key(line: &str, key: &str) -> bool {
    line.trim_start()
        .strip_prefix(key)
        .is_some_and(|rest| rest.trim_start().starts_with('='))
}

/// Line of the `[[trains]]` header of block `index`.
fn block_line(text: &str, index: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == "[[trains]]")
        .nth(index)
        .map(|(n, _)| n + 1)
}

/// Line of `key = ...`, either at top level or inside `[[trains]]` block `block`.
fn key_line(text: &str, block: Option<usize>, key: &str) -> Option<usize> {
    let mut current: Option<usize> = None;
    let mut seen = 0;
    for (n, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = (t == "[[trains]]").then(|| {
                seen += 1;
                seen - 1
            });
            if block.is_none() {
                current = Some(usize::MAX);
            }
            continue;
        }
        if current == block && is_key(line, key) {
            return Some(n + 1);
        }
    }
    None
}
