mod args;
mod commands;
mod config;
mod exit;
mod manifest;

use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use log::{error, info};

use crate::args::{Cli, Command};
use crate::config::RunConfig;
use crate::exit::{InputError, Mismatch, NotConverged};
use crate::manifest::{sha256_file, Manifest, MANIFEST_FILE};

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).parse_default_env().try_init().ok();
}

fn init_threads(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(InputError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting worker pool")?;
    }
    Ok(())
}

/// Runs one resolved configuration and records its manifest.
fn execute(cfg: &RunConfig) -> Result<Manifest> {
    info!("{} into {}", cfg.subcommand, cfg.out_dir.display());
    let outcome = commands::run(cfg)?;
    let status = if outcome.converged { "ok" } else { "not_converged" };
    let manifest = Manifest::build(cfg, &outcome.outputs, status)?;
    manifest.write(&cfg.out_dir)?;
    if !outcome.converged {
        return Err(NotConverged(format!("{}; outputs in {} are flagged", outcome.note, cfg.out_dir.display())).into());
    }
    Ok(manifest)
}

fn rerun(path: &Path, cli: &Cli) -> Result<()> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let recorded = Manifest::read(&path)?;
    for input in &recorded.inputs {
        let now = sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(InputError(format!("input {} changed since the recorded run", input.path)).into());
        }
    }
    let mut cfg = recorded.config.clone();
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    let fresh = match execute(&cfg) {
        Ok(m) => m,
        Err(e) if e.is::<NotConverged>() && recorded.status == "not_converged" => Manifest::read(&cfg.out_dir.join(MANIFEST_FILE))?,
        Err(e) => return Err(e),
    };
    let differing: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|o| !fresh.outputs.contains(o))
        .map(|o| o.path.clone())
        .collect();
    if !differing.is_empty() || fresh.outputs.len() != recorded.outputs.len() {
        return Err(Mismatch(differing).into());
    }
    println!("reproduced {} outputs of `{}` bit-identically", fresh.outputs.len(), cfg.subcommand);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<()> {
        if let Command::Rerun(a) = &cli.command {
            init_logging(cli.verbose);
            init_threads(cli.jobs)?;
            return rerun(&a.manifest, &cli);
        }
        let cfg = RunConfig::resolve(&cli)?;
        init_logging(cfg.verbosity);
        init_threads(cfg.jobs)?;
        execute(&cfg).map(|_| ())
    })();
    match result {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(e) => {
            let code = exit::code(&e);
            init_logging(0);
            error!("{e:#}");
            ExitCode::from(code)
        }
    }
}
