//! Batch front-end: kernel certification, solves, sweeps, censuses and
//! spectra driven by a TOML run configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::Status;
use config::{Experiment, RunConfig};

#[derive(Parser)]
#[command(name = "quasilinear", version, about = "Critical points of the quasilinear Dirichlet problem on grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML). Optional for kernel-check.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `threads` in the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Certify the scalar inequalities of the change of variable.
    KernelCheck,
    /// Ground state for one exponent.
    Solve,
    /// Level sweep (or concentration probe) over an exponent list.
    Sweep,
    /// Multiplicity census, plus barycenter localization on annuli.
    Census,
    /// Morse index and compactness profile of a field.
    Spectra,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::KernelCheck => Experiment::KernelCheck,
            Command::Solve => Experiment::Solve,
            Command::Sweep => Experiment::Sweep,
            Command::Census => Experiment::Census,
            Command::Spectra => Experiment::Spectra,
        }
    }
}

fn usage(errors: &[String]) -> ExitCode {
    eprintln!("configuration error{}:", if errors.len() == 1 { "" } else { "s" });
    for e in errors {
        eprintln!("  {e}");
    }
    ExitCode::from(Status::Usage.code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Status::Usage.code() } else { 0 });
        }
    };
    let t0 = Instant::now();
    let cmd = cli.command.experiment();
    let mut cfg = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match RunConfig::parse(&text) {
                Ok(c) => c,
                Err(errors) => return usage(&errors),
            },
            Err(e) => return usage(&[format!("{}: {e}", path.display())]),
        },
        None if cmd == Experiment::KernelCheck => RunConfig::default(),
        None => return usage(&["--config is required for this command".into()]),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    let resolved = match cfg.validate(cmd) {
        Ok(r) => r,
        Err(errors) => return usage(&errors),
    };
    let Some(out) = cfg.out.clone() else {
        return usage(&["out: no output directory (use --out or `out` in the config)".into()]);
    };
    if let Err(e) = std::fs::create_dir_all(&out) {
        return usage(&[format!("out: cannot create {}: {e}", out.display())]);
    }
    if let Some(n) = cfg.threads {
        if let Err(e) = quasilinear::par::configure_threads(n) {
            return usage(&[format!("threads: {e}")]);
        }
    }
    let validate_secs = t0.elapsed().as_secs_f64();
    match commands::run(cmd, &cfg, &resolved, &out, validate_secs, cli.quiet) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Status::Failed.code())
        }
    }
}
