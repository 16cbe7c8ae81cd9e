use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ctf_sim_cli::config::{parse_override, preset, Command, PRESETS};
use ctf_sim_cli::{run, validate, CliError, RunConfig};

/// Charge-trap flash fragmentation simulator.
#[derive(Debug, Parser)]
#[command(name = "ctf-sim", version, about)]
struct Args {
    /// simulate | sweep-n | sweep-gap | splits | extract | calibrate | rpu-error
    command: Option<String>,
    /// Named reproduction: fig3a, fig3b, fig4c, fig6a, fig6e, fig7
    #[arg(long)]
    preset: Option<String>,
    /// Model parameter file (defaults to the shipped calibration)
    #[arg(long)]
    params: Option<PathBuf>,
    /// Experiment schedule for `simulate`
    #[arg(long)]
    protocol: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// key=value override of a model parameter or run setting (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Only validate the configuration and print diagnostics
    #[arg(long)]
    check: bool,
}

fn build(args: &Args) -> Result<RunConfig, CliError> {
    let mut config = match (&args.preset, &args.command) {
        (Some(name), cmd) => {
            let p = preset(name)?;
            if let Some(c) = cmd {
                let c: Command = c.parse()?;
                if c != p.command {
                    return Err(CliError::Usage(format!("preset `{name}` runs `{}`, not `{c}`", p.command)));
                }
            }
            RunConfig::from_preset(name, &args.out)?
        }
        (None, Some(c)) => RunConfig::new(c.parse()?, &args.out),
        (None, None) => {
            let names: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
            return Err(CliError::Usage(format!(
                "give a command or --preset ({})",
                names.join(", ")
            )));
        }
    };
    config.params_file = args.params.clone();
    config.protocol_file = args.protocol.clone();
    config.seed = args.seed;
    for s in &args.set {
        config.overrides.push(parse_override(s)?);
    }
    Ok(config)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match build(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if args.check {
        let diags = validate(&config);
        for d in &diags {
            println!("{d}");
        }
        if diags.is_empty() {
            println!("ok");
            return ExitCode::SUCCESS;
        }
        let code = CliError::Invalid(diags).exit_code();
        return ExitCode::from(code as u8);
    }
    match run(&config) {
        Ok(m) => {
            for f in &m.files {
                println!("{}", config.output_dir.join(&f.path).display());
            }
            println!("{}", config.output_dir.join(ctf_sim_cli::MANIFEST_NAME).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
