//! Config-driven batch runs of the estimators; the `ghmm` binary is a thin wrapper.

mod commands;
mod config;
mod error;
mod io;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use serde_json::json;

pub use commands::{run, Command, Output};
pub use config::RunConfig;
pub use error::CliError;
use io::write_file;

#[derive(Debug, Parser)]
#[command(
    name = "ghmm",
    version,
    about = "Likelihood, Fisher information and KL estimates for hidden Markov models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| CliError::validation("--config", "a config file is required"))?;
    let mut cfg = RunConfig::load(&config_path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::validation("--threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let name = cli.command.name();
    let output = run(cli.command, &cfg, &config_path)?;
    let elapsed = started.elapsed().as_secs_f64();
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Io(format!("{}: {e}", cli.out.display())))?;
    write_file(&cli.out.join(format!("{name}.csv")), &output.table.render())?;
    let doc = json!({
        "command": name,
        "seed": cfg.seed,
        "config": cfg,
        "result": output.result,
    });
    write_file(
        &cli.out.join(format!("{name}.json")),
        &serde_json::to_string_pretty(&doc).expect("json"),
    )?;
    let meta = json!({
        "command": name,
        "seed": cfg.seed,
        "config": cfg,
        "versions": { "ghmm": env!("CARGO_PKG_VERSION") },
        "threads": rayon::current_num_threads(),
        "timings": { "total_seconds": elapsed },
    });
    write_file(
        &cli.out.join("run_meta.json"),
        &serde_json::to_string_pretty(&meta).expect("json"),
    )?;
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}
