//! `mscat`: scenario runner for the multichannel scattering pipeline.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or the
//! computation errors, 2 when the configuration is invalid.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "mscat", version, about = "Multichannel smooth scattering on finite Hermitian matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for internal sweeps (never changes the output).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Exact identities of the two-space triple and the assumption audit.
    Verify,
    /// Boundary values of the resolvent and the exceptional-set scan.
    Limabs,
    /// Stationary scattering matrix on the λ-grid.
    Smatrix,
    /// Time-dependent wave operators: convergence logs and defects.
    Waveops,
    /// Residuals of the Faddeev system.
    Faddeev,
}

enum Failure {
    Config(ConfigError),
    Run(mscat::Error),
    Io(PathBuf, std::io::Error),
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let path = cli.config.as_deref().ok_or_else(|| Failure::Config(ConfigError::Invalid("--config is required".into())))?;
    let cfg = RunConfig::load(path).map_err(Failure::Config)?;
    if cli.threads == Some(0) {
        return Err(Failure::Config(ConfigError::Invalid("--threads must be positive".into())));
    }
    let out = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Config(ConfigError::Invalid(format!("thread pool: {e}"))))?;
    let outcome = pool.install(|| -> Result<Outcome, Failure> {
        let res = match cli.command {
            Command::Faddeev => {
                let sys = cfg.faddeev_system().map_err(Failure::Config)?;
                commands::faddeev(&cfg, &sys)
            }
            cmd => {
                let sys = cfg.system().map_err(Failure::Config)?;
                match cmd {
                    Command::Verify => commands::verify(&cfg, &sys),
                    Command::Limabs => commands::limabs(&cfg, &sys),
                    Command::Smatrix => commands::smatrix(&cfg, &sys),
                    Command::Waveops => commands::waveops(&cfg, &sys),
                    Command::Faddeev => unreachable!(),
                }
            }
        };
        res.map_err(Failure::Run)
    })?;
    write_all(&out, &outcome)?;
    Ok(outcome.pass)
}

fn write_all(dir: &Path, outcome: &Outcome) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(dir.into(), e))?;
    for (name, body) in &outcome.files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Failure::Io(p.clone(), e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("mscat: some checks failed");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("mscat: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("mscat: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Io(p, e)) => {
            eprintln!("mscat: cannot write {}: {e}", p.display());
            ExitCode::from(1)
        }
    }
}
