//! Run configuration: a TOML file, validated completely before any compute.
//!
//! Every section is a flat table, so each key can be checked on its own and
//! all problems are reported together, each with its dotted path.

use std::path::PathBuf;

use quasilinear::domain::{build_domain, DomainGrid};
use quasilinear::experiments::{ConcentrationOptions, LocalizationOptions, MultiplicityOptions, SweepOptions};
use quasilinear::nehari::{Preset, SolverOptions};
use quasilinear::spectra::EigenMethod;
use quasilinear::{DomainSpec, ExponentParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    KernelCheck,
    Solve,
    Sweep,
    Census,
    Spectra,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::KernelCheck => "kernel-check",
            Experiment::Solve => "solve",
            Experiment::Sweep => "sweep",
            Experiment::Census => "census",
            Experiment::Spectra => "spectra",
        }
    }
}

/// Exactly one of `p`, `p_list`, `fractions` (of the critical exponent).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExponentSection {
    pub p: Option<f64>,
    pub p_list: Option<Vec<f64>>,
    pub fractions: Option<Vec<f64>>,
    /// Upper exponent for `N = 2`, where none is dictated by the theory.
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    pub start: Preset,
    /// Linear tilt of the torsion start; ignored for other presets.
    pub tilt: f64,
    /// Eigenvalues for the Morse index; `0` skips it.
    pub morse_k: usize,
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection {
            start: Preset::Torsion,
            tilt: 0.0,
            morse_k: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Level,
    Concentration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub mode: SweepMode,
    pub tilt: f64,
    pub floor_spacings: f64,
    pub conformal_init: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        let c = ConcentrationOptions::default();
        SweepSection {
            mode: SweepMode::Level,
            tilt: SweepOptions::default().tilt,
            floor_spacings: c.floor_spacings,
            conformal_init: c.conformal_init,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CensusSection {
    pub seeds: usize,
    pub bump_radius: Option<f64>,
    pub morse_k: usize,
    /// Also run the barycenter census (holed shapes only).
    pub localization: bool,
    pub n_starts: usize,
    pub epsilon: f64,
    pub r_plus: Option<f64>,
    pub max_descent: usize,
    pub perturbation: f64,
    pub ring_seeds: usize,
}

impl Default for CensusSection {
    fn default() -> Self {
        let m = MultiplicityOptions::default();
        let l = LocalizationOptions::default();
        CensusSection {
            seeds: m.seeds,
            bump_radius: m.bump_radius,
            morse_k: m.morse_k,
            localization: true,
            n_starts: l.n_starts,
            epsilon: l.epsilon,
            r_plus: l.r_plus,
            max_descent: l.max_descent,
            perturbation: l.perturbation,
            ring_seeds: l.ring_seeds,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectraSection {
    pub k: usize,
    pub n_modes: usize,
    pub method: EigenMethod,
    pub degeneracy_tol: f64,
    pub lanczos_tol: f64,
    /// Field dump (`.json` header) to analyse; without it a ground state is
    /// computed first.
    pub input: Option<PathBuf>,
}

impl Default for SpectraSection {
    fn default() -> Self {
        SpectraSection {
            k: 6,
            n_modes: 50,
            method: EigenMethod::Auto,
            degeneracy_tol: 1e-7,
            lanczos_tol: 1e-10,
            input: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub tolerance: f64,
    /// Testing hook: constant added to every `f` value.
    pub bias: f64,
    pub lambda_t_samples: usize,
    pub t: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
}

impl Default for KernelSection {
    fn default() -> Self {
        let o = quasilinear::kernel::CertifyOptions::default();
        KernelSection {
            tolerance: o.tolerance,
            bias: o.bias,
            lambda_t_samples: o.lambda_t_samples,
            t: None,
            lambda: None,
            p: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub domain: Option<DomainSpec>,
    pub exponent: ExponentSection,
    pub solver: SolverOptions,
    pub solve: SolveSection,
    pub sweep: SweepSection,
    pub census: CensusSection,
    pub spectra: SpectraSection,
    pub kernel: KernelSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: None,
            seed: 7,
            threads: None,
            out: None,
            domain: None,
            exponent: ExponentSection::default(),
            solver: SolverOptions::default(),
            solve: SolveSection::default(),
            sweep: SweepSection::default(),
            census: CensusSection::default(),
            spectra: SpectraSection::default(),
            kernel: KernelSection::default(),
        }
    }
}

fn first_line(e: &toml::de::Error) -> String {
    e.message().trim().to_string()
}

fn scalar<T: DeserializeOwned>(key: &str, v: &toml::Value, errors: &mut Vec<String>) -> Option<T> {
    match v.clone().try_into::<T>() {
        Ok(x) => Some(x),
        Err(e) => {
            errors.push(format!("{key}: {}", first_line(&e)));
            None
        }
    }
}

/// Deserializes a flat section key by key so that every bad key is reported.
fn section<T: DeserializeOwned + Default>(name: &str, v: &toml::Value, errors: &mut Vec<String>) -> T {
    let Some(table) = v.as_table() else {
        errors.push(format!("{name}: expected a table"));
        return T::default();
    };
    let before = errors.len();
    for (k, val) in table {
        let mut one = toml::Table::new();
        one.insert(k.clone(), val.clone());
        if let Err(e) = toml::Value::Table(one).try_into::<T>() {
            errors.push(format!("{name}.{k}: {}", first_line(&e)));
        }
    }
    if errors.len() > before {
        return T::default();
    }
    match v.clone().try_into::<T>() {
        Ok(x) => x,
        Err(e) => {
            errors.push(format!("{name}: {}", first_line(&e)));
            T::default()
        }
    }
}

impl RunConfig {
    /// Parses the file; structural errors (unknown keys, wrong types) are
    /// returned together.
    pub fn parse(text: &str) -> Result<RunConfig, Vec<String>> {
        let table: toml::Table = toml::from_str(text).map_err(|e| vec![format!("syntax: {}", first_line(&e))])?;
        let mut errors = Vec::new();
        let mut cfg = RunConfig::default();
        for (key, v) in &table {
            match key.as_str() {
                "experiment" => cfg.experiment = scalar(key, v, &mut errors),
                "seed" => cfg.seed = scalar(key, v, &mut errors).unwrap_or(cfg.seed),
                "threads" => cfg.threads = scalar(key, v, &mut errors),
                "out" => cfg.out = scalar(key, v, &mut errors),
                "domain" => cfg.domain = scalar(key, v, &mut errors),
                "exponent" => cfg.exponent = section(key, v, &mut errors),
                "solver" => cfg.solver = section(key, v, &mut errors),
                "solve" => cfg.solve = section(key, v, &mut errors),
                "sweep" => cfg.sweep = section(key, v, &mut errors),
                "census" => cfg.census = section(key, v, &mut errors),
                "spectra" => cfg.spectra = section(key, v, &mut errors),
                "kernel" => cfg.kernel = section(key, v, &mut errors),
                other => errors.push(format!("{other}: unknown key")),
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    /// Semantic checks for one command. Returns the built grid and the
    /// exponent list when everything is consistent.
    pub fn validate(&self, cmd: Experiment) -> Result<Resolved, Vec<String>> {
        let mut errors = Vec::new();
        if let Some(e) = self.experiment {
            if e != cmd {
                errors.push(format!("experiment: config selects `{}` but the command is `{}`", e.name(), cmd.name()));
            }
        }
        if self.threads == Some(0) {
            errors.push("threads: must be at least 1".into());
        }
        if cmd == Experiment::KernelCheck {
            self.validate_kernel(&mut errors);
            return if errors.is_empty() {
                Ok(Resolved::default())
            } else {
                Err(errors)
            };
        }
        if let Err(e) = self.solver.validate() {
            let msg = e.to_string();
            let body = msg.strip_prefix("invalid input: ").unwrap_or(&msg);
            errors.extend(body.split("; ").map(|m| format!("solver: {m}")));
        }
        let grid = match &self.domain {
            None => {
                errors.push("domain: required for this command".into());
                None
            }
            Some(spec) => match build_domain(spec) {
                Ok(g) => Some(g),
                Err(e) => {
                    errors.push(format!("domain: {e}"));
                    None
                }
            },
        };
        let exponents = grid
            .as_ref()
            .and_then(|g| self.exponents(g.dim, cmd, &mut errors))
            .unwrap_or_default();
        match cmd {
            Experiment::Solve => {
                if self.solve.morse_k != 0 && self.solve.morse_k < 3 {
                    errors.push("solve.morse_k: must be 0 or at least 3".into());
                }
                if !(self.solve.tilt.abs() < 1.0) {
                    errors.push("solve.tilt: must lie in (-1, 1)".into());
                }
            }
            Experiment::Sweep => {
                if !(self.sweep.tilt.abs() < 1.0) {
                    errors.push("sweep.tilt: must lie in (-1, 1)".into());
                }
                if !(self.sweep.floor_spacings > 0.0) {
                    errors.push("sweep.floor_spacings: must be positive".into());
                }
            }
            Experiment::Census => {
                let c = &self.census;
                if c.seeds == 0 {
                    errors.push("census.seeds: must be positive".into());
                }
                if c.morse_k != 0 && c.morse_k < 3 {
                    errors.push("census.morse_k: must be 0 or at least 3".into());
                }
                if c.n_starts == 0 {
                    errors.push("census.n_starts: must be positive".into());
                }
                if !(c.epsilon > 0.0) {
                    errors.push("census.epsilon: must be positive".into());
                }
                if !(0.0..1.0).contains(&c.perturbation) {
                    errors.push("census.perturbation: must lie in [0, 1)".into());
                }
            }
            Experiment::Spectra => {
                let s = &self.spectra;
                if s.k < 3 {
                    errors.push("spectra.k: must be at least 3".into());
                }
                if s.n_modes == 0 {
                    errors.push("spectra.n_modes: must be positive".into());
                } else if let Some(g) = &grid {
                    if s.n_modes > g.n_interior() {
                        errors.push(format!("spectra.n_modes: grid has only {} nodes", g.n_interior()));
                    }
                }
                if !(s.degeneracy_tol > 0.0) || !(s.lanczos_tol > 0.0) {
                    errors.push("spectra: tolerances must be positive".into());
                }
            }
            Experiment::KernelCheck => unreachable!(),
        }
        if errors.is_empty() {
            Ok(Resolved { grid, exponents })
        } else {
            Err(errors)
        }
    }

    fn validate_kernel(&self, errors: &mut Vec<String>) {
        let k = &self.kernel;
        if !(k.tolerance >= 0.0) {
            errors.push("kernel.tolerance: must be nonnegative".into());
        }
        if !k.bias.is_finite() {
            errors.push("kernel.bias: must be finite".into());
        }
        if k.lambda_t_samples == 0 {
            errors.push("kernel.lambda_t_samples: must be positive".into());
        }
        for (name, list) in [("t", &k.t), ("lambda", &k.lambda), ("p", &k.p)] {
            if let Some(l) = list {
                if l.is_empty() {
                    errors.push(format!("kernel.{name}: sample override is empty"));
                } else if l.iter().any(|x| !x.is_finite()) {
                    errors.push(format!("kernel.{name}: samples must be finite"));
                }
            }
        }
        if k.lambda.as_ref().is_some_and(|l| l.iter().any(|x| *x < 0.0)) {
            errors.push("kernel.lambda: samples must be nonnegative".into());
        }
        if k.p.as_ref().is_some_and(|l| l.iter().any(|x| *x <= 4.0)) {
            errors.push("kernel.p: samples must exceed 4".into());
        }
    }

    fn exponents(&self, dim: usize, cmd: Experiment, errors: &mut Vec<String>) -> Option<Vec<ExponentParams>> {
        let e = &self.exponent;
        let given = [e.p.is_some(), e.p_list.is_some(), e.fractions.is_some()];
        if given.iter().filter(|x| **x).count() != 1 {
            errors.push("exponent: give exactly one of p, p_list, fractions".into());
            return None;
        }
        if dim == 2 && e.cap.is_none() {
            errors.push("exponent.cap: required in dimension 2".into());
            return None;
        }
        if dim >= 3 && e.cap.is_some() {
            errors.push("exponent.cap: only meaningful in dimension 2".into());
        }
        let make = |p: f64| match e.cap {
            Some(c) if dim == 2 => ExponentParams::with_cap(p, dim, c),
            _ => ExponentParams::new(p, dim),
        };
        let list: Vec<Result<ExponentParams, _>> = if let Some(p) = e.p {
            vec![make(p)]
        } else if let Some(l) = &e.p_list {
            l.iter().map(|&p| make(p)).collect()
        } else {
            let fr = e.fractions.as_ref().expect("checked above");
            fr.iter().map(|&f| ExponentParams::at_fraction(f, dim, e.cap)).collect()
        };
        if list.is_empty() {
            errors.push("exponent: the list is empty".into());
            return None;
        }
        let mut out = Vec::new();
        for (i, r) in list.into_iter().enumerate() {
            match r {
                Ok(x) => out.push(x),
                Err(err) => errors.push(format!("exponent[{i}]: {err}")),
            }
        }
        if out.len() > 1 && cmd != Experiment::Sweep {
            errors.push(format!("exponent: `{}` takes a single exponent", cmd.name()));
        }
        if out.windows(2).any(|w| w[1].p <= w[0].p) {
            errors.push("exponent: list must be strictly increasing".into());
        }
        if cmd == Experiment::Sweep && out.iter().any(|x| x.is_critical()) && self.sweep.mode == SweepMode::Level {
            errors.push("exponent: level sweeps need exponents below the critical value".into());
        }
        Some(out)
    }
}

#[derive(Debug, Default)]
pub struct Resolved {
    pub grid: Option<Arc<DomainGrid>>,
    pub exponents: Vec<ExponentParams>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
seed = 3
[domain]
dim = 3
resolution = 12
shape = { kind = "ball", center = [0.0, 0.0, 0.0], radius = 0.5 }
[exponent]
p = 6.0
[solver]
gtol = 1e-7
"#;

    #[test]
    fn parses_and_validates() {
        let c = RunConfig::parse(GOOD).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.solver.gtol, 1e-7);
        let r = c.validate(Experiment::Solve).unwrap();
        assert_eq!(r.exponents.len(), 1);
        assert!(c.validate(Experiment::KernelCheck).is_ok());
    }

    #[test]
    fn reports_every_structural_error() {
        let text = "colour = 1\n[solver]\ngtoll = 1e-3\nmax_iter = \"many\"\n[census]\nseeds = -1\n";
        let errs = RunConfig::parse(text).unwrap_err();
        assert_eq!(errs.len(), 4, "{errs:?}");
        for key in ["colour", "solver.gtoll", "solver.max_iter", "census.seeds"] {
            assert!(errs.iter().any(|e| e.starts_with(key)), "{key} missing from {errs:?}");
        }
    }

    #[test]
    fn reports_every_semantic_error() {
        let text = "[exponent]\np = 3.0\n[solver]\ngtol = 2.0\nbacktrack = 1.5\n[domain]\ndim = 3\nresolution = 12\nshape = { kind = \"ball\", center = [0.0, 0.0, 0.0], radius = 0.5 }\n";
        let errs = RunConfig::parse(text).unwrap().validate(Experiment::Solve).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("gtol")));
        assert!(errs.iter().any(|e| e.contains("backtrack")));
        assert!(errs.iter().any(|e| e.starts_with("exponent[0]")));
    }

    #[test]
    fn empty_kernel_samples_are_rejected() {
        let c = RunConfig::parse("[kernel]\nt = []\n").unwrap();
        let errs = c.validate(Experiment::KernelCheck).unwrap_err();
        assert!(errs[0].contains("empty"));
    }

    #[test]
    fn two_dimensions_need_a_cap() {
        let text = "[domain]\ndim = 2\nresolution = 20\nshape = { kind = \"annulus\", center = [0.0, 0.0], r_inner = 0.2, r_outer = 0.5 }\n[exponent]\nfractions = [0.98]\n";
        let c = RunConfig::parse(text).unwrap();
        assert!(c.validate(Experiment::Census).is_err());
        let c = RunConfig::parse(&format!("{text}cap = 12.0\n")).unwrap();
        let r = c.validate(Experiment::Census).unwrap();
        assert!(r.exponents[0].outside_hypotheses);
    }
}
