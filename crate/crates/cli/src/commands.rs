use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use quasilinear::experiments::{
    barycenter_census, concentration_probe, level_sweep, multiplicity_census, tilted_start, ConcentrationOptions,
    LocalizationOptions, MultiplicityOptions, SweepOptions,
};
use quasilinear::io::{read_field, write_field, write_json};
use quasilinear::kernel::{certify_inequalities, CertifyOptions, SampleGrids};
use quasilinear::nehari::{ground_state, Init, Preset};
use quasilinear::spectra::{compactness_probe_with, morse_index_with, MorseOptions};
use quasilinear::functional::Functional;
use quasilinear::{par, Shape};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Experiment, Resolved, RunConfig, SweepMode};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    Usage,
    NotConverged,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Failed => 1,
            Status::Usage => 2,
            Status::NotConverged => 3,
        }
    }
}

pub struct Outcome {
    pub status: Status,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    command: &'static str,
    package_version: &'static str,
    core_version: &'static str,
    parallel: bool,
    threads: usize,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    wall_seconds: WallTimes,
    outputs: Vec<OutputEntry>,
    /// Hash over the output list (name and content hash per file).
    outputs_sha256: String,
    exit_code: u8,
    summary: String,
}

#[derive(Serialize, Default)]
struct WallTimes {
    validate: f64,
    compute: f64,
    write: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Runs one command end to end and writes `manifest.json` next to the outputs.
pub fn run(cmd: Experiment, cfg: &RunConfig, resolved: &Resolved, out: &Path, validate_secs: f64, quiet: bool) -> Result<Status, String> {
    let t0 = Instant::now();
    let outcome = match cmd {
        Experiment::KernelCheck => kernel_check(cfg, out),
        Experiment::Solve => solve(cfg, resolved, out),
        Experiment::Sweep => sweep(cfg, resolved, out, quiet),
        Experiment::Census => census(cfg, resolved, out, quiet),
        Experiment::Spectra => spectra(cfg, resolved, out),
    }
    .map_err(|e| e.to_string())?;
    let compute = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut files = outcome.files.clone();
    files.sort();
    let mut outputs = Vec::new();
    for f in &files {
        let bytes = fs::read(f).map_err(|e| format!("{}: {e}", f.display()))?;
        outputs.push(OutputEntry {
            file: f.strip_prefix(out).unwrap_or(f).display().to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let listing: String = outputs.iter().map(|o| format!("{}:{}\n", o.file, o.sha256)).collect();
    // the output location is not part of what was computed
    let hashed = RunConfig { out: None, ..cfg.clone() };
    let config_json = serde_json::to_vec(&hashed).map_err(|e| e.to_string())?;
    let write = t1.elapsed().as_secs_f64();
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        command: cmd.name(),
        package_version: env!("CARGO_PKG_VERSION"),
        core_version: quasilinear::VERSION,
        parallel: quasilinear::PARALLEL,
        threads: par::threads(),
        seed: cfg.seed,
        config_sha256: sha256_hex(&config_json),
        config: cfg,
        wall_seconds: WallTimes {
            validate: validate_secs,
            compute,
            write,
        },
        outputs_sha256: sha256_hex(listing.as_bytes()),
        outputs,
        exit_code: outcome.status.code(),
        summary: outcome.summary.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest).map_err(|e| e.to_string())?;
    if !quiet {
        println!("{}", outcome.summary);
    }
    Ok(outcome.status)
}

fn kernel_check(cfg: &RunConfig, out: &Path) -> quasilinear::Result<Outcome> {
    let k = &cfg.kernel;
    let mut grids = SampleGrids::standard();
    if let Some(t) = &k.t {
        grids.t.clone_from(t);
    }
    if let Some(l) = &k.lambda {
        grids.lambda.clone_from(l);
    }
    if let Some(p) = &k.p {
        grids.p.clone_from(p);
    }
    let cert = certify_inequalities(
        &grids,
        CertifyOptions {
            tolerance: k.tolerance,
            bias: k.bias,
            lambda_t_samples: k.lambda_t_samples,
        },
    )?;
    let path = out.join("certificate.json");
    write_json(&path, &cert)?;
    let (status, summary) = if cert.all_pass {
        (Status::Ok, format!("kernel-check: all {} samples pass", cert.total_samples))
    } else {
        let w = cert.worst_offender().expect("a failing summary exists");
        (
            Status::Failed,
            format!(
                "kernel-check: FAILED; worst offender {} ({}) margin {:e} at {:?}",
                w.id, w.statement, w.worst_margin, w.worst_sample
            ),
        )
    };
    Ok(Outcome {
        status,
        summary,
        files: vec![path],
    })
}

fn start_field(cfg: &RunConfig, grid: &std::sync::Arc<quasilinear::DomainGrid>) -> quasilinear::Result<Init> {
    Ok(match &cfg.solve.start {
        Preset::Torsion if cfg.solve.tilt != 0.0 => Init::Field(tilted_start(grid, cfg.solve.tilt)?),
        p => Init::Preset(p.clone()),
    })
}

fn morse_options(cfg: &RunConfig) -> MorseOptions {
    MorseOptions {
        method: cfg.spectra.method,
        degeneracy_tol: cfg.spectra.degeneracy_tol,
        lanczos_tol: cfg.spectra.lanczos_tol,
        seed: cfg.seed,
    }
}

fn solve(cfg: &RunConfig, r: &Resolved, out: &Path) -> quasilinear::Result<Outcome> {
    let grid = r.grid.as_ref().expect("validated");
    let params = &r.exponents[0];
    let mut rep = ground_state(grid, params, &start_field(cfg, grid)?, &cfg.solver)?;
    if cfg.solve.morse_k >= 3 {
        rep.attach_morse(cfg.solve.morse_k, &morse_options(cfg))?;
    }
    let json = out.join("solve.json");
    write_json(&json, &rep)?;
    let (a, b) = write_field(&out.join("ground_state"), &rep.field)?;
    let status = if rep.converged { Status::Ok } else { Status::NotConverged };
    Ok(Outcome {
        status,
        summary: format!(
            "solve: p={} energy={:.12e} converged={} positive={} morse_index={}",
            rep.p,
            rep.energy,
            rep.converged,
            rep.positive,
            rep.morse_index.map_or("-".into(), |m| m.to_string())
        ),
        files: vec![json, a, b],
    })
}

fn sweep(cfg: &RunConfig, r: &Resolved, out: &Path, quiet: bool) -> quasilinear::Result<Outcome> {
    let grid = r.grid.as_ref().expect("validated");
    match cfg.sweep.mode {
        SweepMode::Level => {
            let s = level_sweep(
                grid,
                &r.exponents,
                &SweepOptions {
                    solver: cfg.solver,
                    tilt: cfg.sweep.tilt,
                },
            )?;
            let files = s.write_artifacts(out)?;
            if !quiet {
                for rec in &s.records {
                    eprintln!(
                        "  p={:.6} m_p={:.10e} t*={:.6} gap={:.3e} converged={}",
                        rec.p, rec.m_p, rec.t_star, rec.level_gap, rec.converged
                    );
                }
            }
            let t = &s.trends;
            Ok(Outcome {
                status: if t.all_converged { Status::Ok } else { Status::NotConverged },
                summary: format!(
                    "sweep: {} records; m_star_estimate={:.10e}; m increasing={} |t*-1| decreasing={} gap decreasing={} norm bounded={}",
                    s.records.len(),
                    s.m_star_estimate,
                    t.m_increasing,
                    t.t_gap_decreasing,
                    t.level_gap_decreasing,
                    t.norm_bounded
                ),
                files,
            })
        }
        SweepMode::Concentration => {
            let c = concentration_probe(
                grid,
                &r.exponents,
                &ConcentrationOptions {
                    solver: cfg.solver,
                    floor_spacings: cfg.sweep.floor_spacings,
                    conformal_init: cfg.sweep.conformal_init,
                },
            )?;
            let files = c.write_artifacts(out)?;
            let conv = c.rows.iter().all(|r| r.converged);
            Ok(Outcome {
                status: if conv { Status::Ok } else { Status::NotConverged },
                summary: format!(
                    "concentration: {} rows; width decreasing={} sup increasing={} under-resolved={}",
                    c.rows.len(),
                    c.width_decreasing,
                    c.sup_increasing,
                    c.under_resolved
                ),
                files,
            })
        }
    }
}

fn census(cfg: &RunConfig, r: &Resolved, out: &Path, quiet: bool) -> quasilinear::Result<Outcome> {
    let grid = r.grid.as_ref().expect("validated");
    let params = &r.exponents[0];
    let c = &cfg.census;
    let m = multiplicity_census(
        grid,
        params,
        &MultiplicityOptions {
            solver: cfg.solver,
            seeds: c.seeds,
            bump_radius: c.bump_radius,
            morse_k: c.morse_k,
        },
    )?;
    let mut files = m.write_artifacts(out)?;
    let mut status = if m.solutions.iter().all(|s| s.converged) {
        Status::Ok
    } else {
        Status::NotConverged
    };
    let mut summary = format!(
        "census: {} distinct solutions ({} positive, {} symmetry classes); category bound {} met={}; Morse bound {} met={}",
        m.found,
        m.found_positive,
        m.symmetry_classes,
        m.expected_category_bound,
        m.meets_category_bound,
        m.expected_morse_bound,
        m.meets_morse_bound
    );
    let holed = matches!(grid.shape_tag, Shape::Annulus { .. });
    if c.localization && holed {
        let l = barycenter_census(
            grid,
            params,
            &LocalizationOptions {
                solver: cfg.solver,
                n_starts: c.n_starts,
                epsilon: c.epsilon,
                r_plus: c.r_plus,
                max_descent: c.max_descent,
                perturbation: c.perturbation,
                ring_seeds: c.ring_seeds,
                bump_radius: c.bump_radius,
                seed: cfg.seed,
            },
        )?;
        files.extend(l.write_artifacts(out, "localization")?);
        if l.inconclusive {
            status = Status::NotConverged;
            if !quiet {
                eprintln!("localization: no point passed the energy filter; try a larger census.epsilon");
            }
        }
        summary.push_str(&format!(
            "; localization {}/{} inside (r+={})",
            l.n_inside, l.n_passed, l.r_plus
        ));
    } else if c.localization && !quiet {
        eprintln!("localization skipped: needs an annulus");
    }
    Ok(Outcome { status, summary, files })
}

#[derive(Serialize)]
struct SpectraReport {
    schema_version: u32,
    p: f64,
    source: String,
    morse: quasilinear::spectra::MorseReport,
    compactness: quasilinear::spectra::CompactnessProfile,
    decay_factor: Option<f64>,
}

fn spectra(cfg: &RunConfig, r: &Resolved, out: &Path) -> quasilinear::Result<Outcome> {
    let grid = r.grid.as_ref().expect("validated");
    let params = r.exponents[0];
    let fun = Functional {
        params,
        positive_part: cfg.solver.positive_part,
    };
    let (field, source, mut files) = match &cfg.spectra.input {
        Some(path) => {
            let f = read_field(path)?;
            if *f.grid != **grid {
                return Err(quasilinear::Error::GridMismatch);
            }
            (f, path.display().to_string(), Vec::new())
        }
        None => {
            let rep = ground_state(grid, &params, &start_field(cfg, grid)?, &cfg.solver)?;
            let (a, b) = write_field(&out.join("ground_state"), &rep.field)?;
            (rep.field, "ground_state".to_string(), vec![a, b])
        }
    };
    let morse = morse_index_with(&fun, &field, cfg.spectra.k, &morse_options(cfg))?;
    let compactness = compactness_probe_with(&fun, &field, cfg.spectra.n_modes)?;
    let n = cfg.spectra.n_modes;
    let report = SpectraReport {
        schema_version: quasilinear::experiments::REPORT_SCHEMA_VERSION,
        p: params.p,
        source,
        decay_factor: compactness.decay_factor(n),
        morse,
        compactness,
    };
    let json = out.join("spectra.json");
    write_json(&json, &report)?;
    files.push(json);
    let status = if report.morse.warning.is_some() {
        Status::NotConverged
    } else {
        Status::Ok
    };
    Ok(Outcome {
        status,
        summary: format!(
            "spectra: morse_index={} eigenvalues={:?} decay_factor={:?}",
            report.morse.index, report.morse.eigenvalues, report.decay_factor
        ),
        files,
    })
}
