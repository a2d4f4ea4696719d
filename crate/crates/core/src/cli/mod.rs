//! Command-line experiment runner.

pub mod config;
pub mod experiment;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{Config, Kind};
pub use experiment::{demo_config, run_config, RunReport, Setup, DEMOS};

use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "germlab",
    version,
    about = "Coherence scans, reconstruction and gluing experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiments described by a config file.
    Run { config: PathBuf },
    /// Parse a config file and build its objects without running anything.
    Validate { config: PathBuf },
    /// Run a built-in demo.
    Demo { name: String },
}

/// Exit status for a finished run or an error.
pub fn exit_code(result: &Result<RunReport>) -> i32 {
    match result {
        Ok(r) if r.failed_checks.is_empty() => 0,
        Ok(_) => 1,
        Err(Error::Config(_) | Error::Domain(_) | Error::Construction(_) | Error::Io(_)) => 2,
        Err(Error::NonConvergence { .. }) => 3,
        Err(Error::Verification(_) | Error::InsufficientData(_)) => 1,
    }
}

fn read_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Config::parse(&text)
}

/// Output directory: GERMLAB_OUTDIR, then output.dir, then `out`.
pub fn output_dir(cfg: &Config) -> PathBuf {
    std::env::var_os("GERMLAB_OUTDIR")
        .map(PathBuf::from)
        .or_else(|| cfg.get("output.dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn with_threads<T: Send>(f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match std::env::var("GERMLAB_THREADS") {
        Err(_) => f(),
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                Error::Config(format!("GERMLAB_THREADS = `{v}` is not a worker count"))
            })?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(f)
        }
    }
}

/// Executes a parsed command line; returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = with_threads(|| match &cli.command {
        Command::Run { config } => {
            let cfg = read_config(config)?;
            let dir = output_dir(&cfg);
            run_config(cfg, dir)
        }
        Command::Demo { name } => {
            let cfg = demo_config(name)?;
            let dir = output_dir(&cfg).join(name);
            run_config(cfg, dir)
        }
        Command::Validate { config } => {
            let cfg = read_config(config)?;
            let kinds = cfg.kinds()?;
            if kinds == [Kind::Demo] {
                demo_config(cfg.require("experiment.name")?)?;
            } else {
                Setup::new(cfg)?;
            }
            Ok(RunReport {
                failed_checks: Vec::new(),
                summary: "config ok\n".into(),
                files: Vec::new(),
            })
        }
    });
    match &result {
        Ok(r) => {
            print!("{}", r.summary);
            for f in &r.files {
                println!("wrote {}", f.display());
            }
            if !r.failed_checks.is_empty() {
                eprintln!(
                    "germlab: {} check(s) failed: {}",
                    r.failed_checks.len(),
                    r.failed_checks.join("; ")
                );
            }
        }
        Err(e) => eprintln!("germlab: {e}"),
    }
    exit_code(&result)
}
