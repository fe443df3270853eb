// Copyright 2026 nanofb Contributors
// SPDX-License-Identifier: Apache-2.0

//! `nanofb`: derive parameters, run gain sweeps, cross-check engines and
//! record single trajectories.
//!
//! Exit codes: 0 success, 2 configuration error, 3 divergence or failed
//! regime check under `--strict`, 4 crosscheck failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nanofb_core::config::{load_config, load_preset, Engine, RunConfig};
use nanofb_core::runner::{derive_report, run_crosscheck, run_simulate, run_sweep, save_sweep};
use nanofb_core::Error;

#[derive(Parser)]
#[command(name = "nanofb", version, about = "Feedback squeezing and cooling of a SQUID-coupled nanomechanical beam")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the derived-parameter table and the regime report.
    Derive(Common),
    /// Run the gain sweep and write sweep.csv plus a manifest.
    Sweep(Common),
    /// Compare engines on a small instance.
    Crosscheck(Common),
    /// Record one trajectory at the first gain pair.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat key = value).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped preset name.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ntraj: Option<usize>,
    /// full, reduced-sme, reduced-gaussian or filter-selfloop.
    #[arg(long)]
    engine: Option<String>,
    /// Abort on failed regime checks or divergence.
    #[arg(long)]
    strict: bool,
    /// Output directory; defaults to the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Strict(String),
    Crosscheck,
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Strict(_) => 3,
            Failure::Crosscheck => 4,
        }
    }
}

fn classify(e: Error, strict: bool) -> Failure {
    match e {
        Error::Config(_) | Error::DetuningSign(_) => Failure::Config(e.to_string()),
        Error::Regime(_) if strict => Failure::Strict(e.to_string()),
        Error::Regime(_) => Failure::Config(e.to_string()),
        Error::Blowup { .. } | Error::NonConvergence { .. } | Error::NearSingularGain { .. } | Error::OutOfValidity(_)
            if strict =>
        {
            Failure::Strict(e.to_string())
        }
        other => Failure::Other(other.to_string()),
    }
}

fn resolve(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => load_config(path),
        (None, Some(name)) => load_preset(name),
        (None, None) => return Err(Failure::Config("give --config PATH or --preset NAME".into())),
    }
    .map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.ntraj {
        cfg.n_traj = n;
    }
    if let Some(name) = &c.engine {
        cfg.engine = Engine::from_name(name).ok_or_else(|| Failure::Config(format!("unknown engine {name}")))?;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn run(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Derive(c) => {
            let cfg = resolve(c)?;
            let report = derive_report(&cfg).map_err(|e| classify(e, c.strict))?;
            println!("{report}");
            if c.strict && report.contains("FAIL") {
                return Err(Failure::Strict("regime checks failed".into()));
            }
        }
        Command::Sweep(c) => {
            let cfg = resolve(c)?;
            let out = run_sweep(&cfg, c.strict).map_err(|e| classify(e, c.strict))?;
            let dir = PathBuf::from(&cfg.output_dir);
            save_sweep(&out, &dir).map_err(|e| Failure::Other(e.to_string()))?;
            let flagged = out.rows.iter().filter(|r| !r.flags.is_empty()).count();
            println!("{} sweep points written to {}", out.rows.len(), dir.join("sweep.csv").display());
            if flagged > 0 {
                println!("{flagged} rows carry flags; see the flags column");
            }
        }
        Command::Crosscheck(c) => {
            let cfg = resolve(c)?;
            let report = run_crosscheck(&cfg).map_err(|e| classify(e, c.strict))?;
            report.save(&PathBuf::from(&cfg.output_dir)).map_err(|e| Failure::Other(e.to_string()))?;
            println!("{}", report.render());
            if !report.pass() {
                return Err(Failure::Crosscheck);
            }
        }
        Command::Simulate(c) => {
            let cfg = resolve(c)?;
            let out = run_simulate(&cfg).map_err(|e| classify(e, c.strict))?;
            let dir = PathBuf::from(&cfg.output_dir);
            out.save(&dir).map_err(|e| Failure::Other(e.to_string()))?;
            println!("trajectory written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) | Failure::Strict(m) | Failure::Other(m) => eprintln!("error: {m}"),
                Failure::Crosscheck => eprintln!("crosscheck failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
