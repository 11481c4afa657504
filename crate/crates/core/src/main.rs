use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hydroprim::cli::{configure_threads, parse_config, run, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "hydroprim", version, about = "Spectral-Galerkin primitive equations solver")]
struct Args {
    #[command(subcommand)]
    command: Sub,

    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run every reduction on one thread.
    #[arg(long, global = true)]
    strict_deterministic: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Integrate in time, writing diagnostics CSV and checkpoints.
    Simulate,
    /// Solve for a time-periodic orbit of the forced system.
    Periodic,
    /// Check a stored run against the named properties.
    Verify {
        /// Comma-separated checks; defaults to `[verify] checks`.
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
    },
    /// Print basis metadata.
    Basis,
}

fn execute(args: Args) -> Result<(serde_json::Value, i32), CliError> {
    let threads = configure_threads(args.strict_deterministic)?;
    let cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => {
            let cfg = RunConfig::defaults(".");
            let v = cfg.violations();
            if !v.is_empty() {
                return Err(CliError::Invalid(v));
            }
            cfg
        }
    };
    let cmd = match args.command {
        Sub::Simulate => Command::Simulate,
        Sub::Periodic => Command::Periodic,
        Sub::Verify { checks } => Command::Verify(checks),
        Sub::Basis => Command::Basis,
    };
    let mut report = run(&cmd, &cfg)?;
    report.json["threads"] = threads.into();
    report.json["exit_code"] = report.exit_code.into();
    Ok((report.json, report.exit_code))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (json, code) = match execute(Args::parse()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            (e.to_json(), e.exit_code())
        }
    };
    println!("{}", serde_json::to_string_pretty(&json).expect("JSON values serialize"));
    ExitCode::from(code as u8)
}
