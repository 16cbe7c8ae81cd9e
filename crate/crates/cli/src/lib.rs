//! Command-line harness: runs the named reproductions and writes CSV and
//! TOML artifacts plus a manifest recording how they were produced.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipelines;
pub mod validate;

use std::fs;
use std::time::Instant;

use chrono::{DateTime, SecondsFormat, Utc};

pub use config::{Command, RunConfig};
pub use error::CliError;
pub use manifest::{EmittedFile, RunManifest, MANIFEST_NAME};
pub use validate::{validate, Diagnostic};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "CTF_SIM_THREADS";

/// Worker count from [`THREADS_ENV`]; `None` leaves the choice to rayon.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
        },
    }
}

/// Timestamp for CSV comment lines: `SOURCE_DATE_EPOCH` when set, else now.
pub fn timestamp() -> Result<DateTime<Utc>, CliError> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Err(_) => Ok(Utc::now()),
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(|s| DateTime::from_timestamp(s, 0))
            .ok_or_else(|| CliError::Usage(format!("SOURCE_DATE_EPOCH must be integer seconds, got `{v}`"))),
    }
}

/// Runs the configured pipeline and writes its artifacts, the manifest last.
///
/// A stale manifest in the output directory is removed first, so after a
/// failure the directory never holds a manifest describing other files.
pub fn run(config: &RunConfig) -> Result<RunManifest, CliError> {
    let (inputs, schedule) = validate::check(config).map_err(CliError::Invalid)?;
    let started = Instant::now();
    let stamp = timestamp()?;
    let stamp_text = stamp.to_rfc3339_opts(SecondsFormat::Secs, true);
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let old = dir.join(MANIFEST_NAME);
    if old.exists() {
        fs::remove_file(&old).map_err(|e| CliError::io(&old, e))?;
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let outputs = pool.install(|| {
        pipelines::dispatch(config.command, &inputs, schedule.as_ref(), config.seed, &stamp_text)
    })?;

    let mut files = Vec::with_capacity(outputs.files.len());
    for (name, bytes) in &outputs.files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        files.push(EmittedFile::describe(name, bytes));
    }

    let (params_file, params_sha256) = match &config.params_file {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
            (p.display().to_string(), manifest::sha256_hex(&bytes))
        }
        None if config.command == Command::Calibrate => (
            "<analytic seed>".to_string(),
            manifest::sha256_hex(ctf_sim::device::ModelParams::analytic_pin().to_toml_string().unwrap_or_default().as_bytes()),
        ),
        None => (
            "<shipped defaults>".to_string(),
            manifest::sha256_hex(ctf_sim::device::params::SHIPPED_DEFAULTS.as_bytes()),
        ),
    };
    let protocol_sha256 = match &config.protocol_file {
        Some(p) => Some(manifest::sha256_hex(&fs::read(p).map_err(|e| CliError::io(p, e))?)),
        None => None,
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: config.command.name().to_string(),
        preset: config.preset.clone(),
        seed: config.seed,
        params_file,
        params_sha256,
        protocol_file: config.protocol_file.as_ref().map(|p| p.display().to_string()),
        protocol_sha256,
        output_dir: dir.display().to_string(),
        overrides: config.overrides.iter().map(|(k, v)| [k.clone(), v.clone()]).collect(),
        started_at: stamp_text,
        duration_s: started.elapsed().as_secs_f64(),
        threads: pool.current_num_threads(),
        notes: outputs.notes,
        params: inputs.params,
        settings: inputs.knobs,
        files,
    };
    manifest.write_atomic(dir)?;
    Ok(manifest)
}
