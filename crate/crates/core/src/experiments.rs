//! Studies built on the solver: level sweeps towards the critical exponent,
//! barycenter localization, concentration on star-shaped domains and
//! multiplicity censuses.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainGrid, Field, Shape};
use crate::error::{Error, Result};
use crate::functional::{ExponentParams, Functional};
use crate::io::{gnuplot_script, write_csv, write_field, write_json, PlotPanel};
use crate::linalg::laplacian_inverse;
use crate::nehari::{
    ground_state, multistart_deflate, project_with, relative_distance, seed_layout, CriticalPointReport, Init,
    Preset, SolverOptions,
};
use crate::par;
use crate::spectra::{morse_index_with, MorseOptions};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Torsion function times `1 + tilt·ℓ(x)` with `ℓ` a fixed linear form scaled
/// to `|ℓ| ≤ 1` on the grid. A nonzero tilt lets the descent leave the
/// subspace of grid-symmetric fields.
pub fn tilted_start(grid: &Arc<DomainGrid>, tilt: f64) -> Result<Field> {
    let mut f = Init::Preset(Preset::Torsion).materialize(grid)?;
    if tilt != 0.0 {
        let c = grid.shape_tag.center();
        let dir = [1.0, 0.7, 0.3];
        let ell = |x: &[f64]| (0..grid.dim).map(|k| (x[k] - c[k]) * dir[k]).sum::<f64>();
        let scale = (0..grid.n_interior()).map(|i| ell(grid.coord(i)).abs()).fold(1e-300, f64::max);
        for i in 0..grid.n_interior() {
            f.values[i] *= 1.0 + tilt * ell(grid.coord(i)) / scale;
        }
    }
    Ok(f)
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] > w[0])
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Level sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    pub solver: SolverOptions,
    pub tilt: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            solver: SolverOptions::default(),
            tilt: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub p: f64,
    pub fraction: f64,
    pub m_p: f64,
    /// Multiplier projecting the ground state onto the critical Nehari set.
    pub t_star: f64,
    /// `I_*(t_* g_p)`
    pub i_star: f64,
    /// `|m_p − I_*(t_* g_p)|`
    pub level_gap: f64,
    pub barycenter: Vec<f64>,
    pub width: f64,
    pub sup_norm: f64,
    pub norm: f64,
    pub grad_norm: f64,
    pub nehari_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTrends {
    /// Trend flags are only meaningful when every exponent converged.
    pub all_converged: bool,
    pub m_increasing: bool,
    pub t_gap_decreasing: bool,
    pub final_t_gap: f64,
    pub norm_max_over_median: f64,
    pub norm_bounded: bool,
    pub level_gap_decreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSweep {
    pub schema_version: u32,
    pub dim: usize,
    pub crit: f64,
    pub spacing: f64,
    pub records: Vec<SweepRecord>,
    /// `I_*(t_* g_p)` at the last exponent.
    pub m_star_estimate: f64,
    /// Polynomial extrapolation of `m_p` to `p = crit` through the last
    /// (up to three) records.
    pub m_star_extrapolated: Option<f64>,
    /// Smallest `I_*` seen on any projected field in this run.
    pub m_star_disc_min: f64,
    pub trends: SweepTrends,
    #[serde(skip)]
    pub fields: Vec<Field>,
}

fn check_exponents(list: &[ExponentParams]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::InvalidInput("exponent list is empty".into()));
    }
    let ps: Vec<f64> = list.iter().map(|e| e.p).collect();
    if !strictly_increasing(&ps) {
        return Err(Error::InvalidInput("exponents must be strictly increasing".into()));
    }
    if list.iter().any(|e| e.dim != list[0].dim || e.crit != list[0].crit) {
        return Err(Error::InvalidInput("exponents must share dimension and critical value".into()));
    }
    Ok(())
}

/// Neville evaluation at `x = 0` of the polynomial through `(x_i, y_i)`.
fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let n = xs.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (xs[i + k] * p[i] - xs[i] * p[i + 1]) / (xs[i + k] - xs[i]);
        }
    }
    p[0]
}

/// Ground states for each exponent (solved independently) and their
/// projections onto the critical Nehari set.
pub fn level_sweep(grid: &Arc<DomainGrid>, exponents: &[ExponentParams], options: &SweepOptions) -> Result<LevelSweep> {
    check_exponents(exponents)?;
    if exponents.iter().any(|e| e.is_critical()) {
        return Err(Error::InvalidInput("sweep exponents must lie below the critical value".into()));
    }
    if exponents[0].dim != grid.dim {
        return Err(Error::InvalidInput("exponent dimension differs from the grid".into()));
    }
    options.solver.validate()?;
    let start = tilted_start(grid, options.tilt)?;
    let reports: Vec<Result<CriticalPointReport>> = par::map_tasks(exponents, |e| {
        ground_state(grid, e, &Init::Field(start.clone()), &options.solver)
    });
    let crit = exponents[0].critical();
    let crit_fun = Functional {
        params: crit,
        positive_part: options.solver.positive_part,
    };
    let mut records = Vec::new();
    let mut fields = Vec::new();
    let mut m_star_disc_min = f64::INFINITY;
    for (e, rep) in exponents.iter().zip(reports) {
        let rep = rep?;
        let pr = project_with(&crit_fun, grid, &rep.field.values)?;
        m_star_disc_min = m_star_disc_min.min(pr.energy);
        records.push(SweepRecord {
            p: e.p,
            fraction: e.p / e.crit,
            m_p: rep.energy,
            t_star: pr.t,
            i_star: pr.energy,
            level_gap: (rep.energy - pr.energy).abs(),
            barycenter: rep.barycenter.clone(),
            width: grid.gradient_width(&rep.field.values).unwrap_or(0.0),
            sup_norm: rep.sup_norm(),
            norm: rep.norm,
            grad_norm: rep.grad_norm,
            nehari_residual: rep.nehari_residual,
            converged: rep.converged,
            iterations: rep.iterations,
        });
        fields.push(rep.field);
    }
    let m: Vec<f64> = records.iter().map(|r| r.m_p).collect();
    let tg: Vec<f64> = records.iter().map(|r| (r.t_star - 1.0).abs()).collect();
    let lg: Vec<f64> = records.iter().map(|r| r.level_gap).collect();
    let norms: Vec<f64> = records.iter().map(|r| r.norm).collect();
    let nmax = norms.iter().copied().fold(0.0, f64::max);
    let ratio = nmax / median(&norms);
    let trends = SweepTrends {
        all_converged: records.iter().all(|r| r.converged),
        m_increasing: strictly_increasing(&m),
        t_gap_decreasing: strictly_decreasing(&tg),
        final_t_gap: *tg.last().expect("nonempty"),
        norm_max_over_median: ratio,
        norm_bounded: ratio <= 2.0,
        level_gap_decreasing: strictly_decreasing(&lg),
    };
    let m_star_extrapolated = (records.len() >= 2).then(|| {
        let tail = &records[records.len().saturating_sub(3)..];
        let xs: Vec<f64> = tail.iter().map(|r| crit.p - r.p).collect();
        let ys: Vec<f64> = tail.iter().map(|r| r.m_p).collect();
        extrapolate_to_zero(&xs, &ys)
    });
    Ok(LevelSweep {
        schema_version: REPORT_SCHEMA_VERSION,
        dim: grid.dim,
        crit: crit.p,
        spacing: grid.spacing,
        m_star_estimate: records.last().expect("nonempty").i_star,
        m_star_extrapolated,
        m_star_disc_min,
        records,
        trends,
        fields,
    })
}

impl LevelSweep {
    pub fn csv_rows(&self) -> (Vec<&'static str>, Vec<Vec<f64>>) {
        let header = vec![
            "p", "fraction", "m_p", "t_star", "i_star", "level_gap", "width", "sup_norm", "norm", "beta_x", "beta_y",
            "beta_z", "converged",
        ];
        let rows = self
            .records
            .iter()
            .map(|r| {
                let b = |k: usize| r.barycenter.get(k).copied().unwrap_or(0.0);
                vec![
                    r.p,
                    r.fraction,
                    r.m_p,
                    r.t_star,
                    r.i_star,
                    r.level_gap,
                    r.width,
                    r.sup_norm,
                    r.norm,
                    b(0),
                    b(1),
                    b(2),
                    f64::from(u8::from(r.converged)),
                ]
            })
            .collect();
        (header, rows)
    }

    /// `sweep.json`, `sweep.csv`, `sweep.gp` and one field dump per exponent.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        let json = dir.join("sweep.json");
        write_json(&json, self)?;
        out.push(json);
        let (h, rows) = self.csv_rows();
        let csv = dir.join("sweep.csv");
        write_csv(&csv, &h, &rows)?;
        out.push(csv);
        let panel = |title: &str, y: usize, ylabel: &str| PlotPanel {
            title: title.into(),
            csv: "sweep.csv".into(),
            x: 1,
            y,
            xlabel: "p".into(),
            ylabel: ylabel.into(),
        };
        let script = gnuplot_script(
            "sweep",
            &[
                panel("ground level", 3, "m_p"),
                panel("gradient width", 7, "width"),
                PlotPanel {
                    title: "barycenters".into(),
                    csv: "sweep.csv".into(),
                    x: 10,
                    y: 11,
                    xlabel: "beta_x".into(),
                    ylabel: "beta_y".into(),
                },
            ],
        );
        let gp = dir.join("sweep.gp");
        std::fs::write(&gp, script)?;
        out.push(gp);
        for (r, f) in self.records.iter().zip(&self.fields) {
            let (a, b) = write_field(&dir.join(format!("ground_p{:.6}", r.p)), f)?;
            out.push(a);
            out.push(b);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Barycenter localization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationOptions {
    pub solver: SolverOptions,
    pub n_starts: usize,
    /// Energy window as a fraction of the ground level.
    pub epsilon: f64,
    /// Radius of the outer neighbourhood; defaults from the shape.
    pub r_plus: Option<f64>,
    /// Generated points take a random number of descent steps in `0..=max_descent`.
    pub max_descent: usize,
    /// Relative amplitude of the multiplicative perturbation, below 1.
    pub perturbation: f64,
    pub ring_seeds: usize,
    pub bump_radius: Option<f64>,
    pub seed: u64,
}

impl Default for LocalizationOptions {
    fn default() -> Self {
        LocalizationOptions {
            solver: SolverOptions::default(),
            n_starts: 24,
            epsilon: 0.1,
            r_plus: None,
            max_descent: 8,
            perturbation: 0.3,
            ring_seeds: 8,
            bump_radius: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationPoint {
    pub start: usize,
    pub descent_steps: usize,
    pub energy: f64,
    pub barycenter: Vec<f64>,
    pub distance_to_domain: f64,
    pub inside: bool,
    pub passed_filter: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationReport {
    pub schema_version: u32,
    pub p: f64,
    pub outside_hypotheses: bool,
    /// Smallest energy of any Nehari point evaluated (ring ground states and
    /// generated points alike).
    pub m_p: f64,
    pub epsilon: f64,
    pub threshold: f64,
    pub r_plus: f64,
    pub n_generated: usize,
    pub n_passed: usize,
    pub n_inside: usize,
    /// `n_inside / n_passed`, if any point passed the filter.
    pub fraction: Option<f64>,
    pub inconclusive: bool,
    pub points: Vec<LocalizationPoint>,
}

fn default_r_plus(shape: &Shape, h: f64) -> f64 {
    match shape {
        Shape::Annulus { r_inner, .. } => 0.5 * r_inner,
        Shape::RectangleWithHole { hole_lo, hole_hi, .. } => {
            0.25 * hole_lo.iter().zip(hole_hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min)
        }
        _ => 2.0 * h,
    }
}

/// Ring of bump centres for the holed shapes (middle radius, `x₀x₁` plane).
fn ring_geometry(grid: &DomainGrid) -> Result<(Vec<f64>, f64, f64)> {
    match &grid.shape_tag {
        Shape::Annulus { center, r_inner, r_outer } => {
            Ok((center.clone(), 0.5 * (r_inner + r_outer), 0.5 * (r_outer - r_inner) - grid.spacing))
        }
        other => Err(Error::UnsupportedShape {
            op: "barycenter_census",
            shape: other.tag().to_string(),
        }),
    }
}

/// Smooth multiplicative noise `1 + δ ξ(x)` with `|ξ| ≤ 1`.
fn perturb(field: &mut Field, rng: &mut ChaCha8Rng, delta: f64, wavelength: f64) {
    let dim = field.grid.dim;
    let waves: Vec<(Vec<f64>, f64)> = (0..4)
        .map(|_| {
            let k: Vec<f64> = (0..dim)
                .map(|_| rng.random_range(-1.0..1.0) * std::f64::consts::TAU / wavelength)
                .collect();
            (k, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    for i in 0..field.values.len() {
        let x = field.grid.coord(i);
        let xi: f64 = waves
            .iter()
            .map(|(k, ph)| (k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph).cos())
            .sum::<f64>()
            / waves.len() as f64;
        field.values[i] *= 1.0 + delta * xi;
    }
}

/// Low-energy Nehari points from perturbed, partially descended bumps and
/// the share whose barycenter lies within `r_plus` of the domain.
pub fn barycenter_census(
    grid: &Arc<DomainGrid>,
    params: &ExponentParams,
    options: &LocalizationOptions,
) -> Result<LocalizationReport> {
    options.solver.validate()?;
    if options.n_starts == 0 || !(options.epsilon > 0.0) || !(options.perturbation >= 0.0 && options.perturbation < 1.0) {
        return Err(Error::InvalidInput(
            "census needs n_starts > 0, epsilon > 0 and perturbation in [0, 1)".into(),
        ));
    }
    let (center, ring, clearance) = ring_geometry(grid)?;
    let br = options.bump_radius.unwrap_or(clearance);
    let r_plus = options.r_plus.unwrap_or_else(|| default_r_plus(&grid.shape_tag, grid.spacing));
    let fun = Functional {
        params: *params,
        positive_part: options.solver.positive_part,
    };

    // reference level from the ring of unperturbed bumps
    let seeds = seed_layout(grid, params, options.ring_seeds.max(1), Some(br))?;
    let refs: Vec<Result<CriticalPointReport>> =
        par::map_tasks(&seeds, |s| ground_state(grid, params, &Init::Field(s.clone()), &options.solver));
    let mut m_p = f64::INFINITY;
    for r in refs {
        m_p = m_p.min(r?.energy);
    }

    let starts: Vec<usize> = (0..options.n_starts).collect();
    // (start index, energy, barycenter) of each generated Nehari point
    type Generated = Option<(usize, f64, Vec<f64>)>;
    let generated: Vec<Result<Generated>> = par::map_tasks(&starts, |&k| {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(k as u64 + 1);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let jitter = rng.random_range(-0.5..0.5) * grid.spacing;
        let steps = rng.random_range(0..=options.max_descent);
        let mut c = center.clone();
        c[0] += (ring + jitter) * angle.cos();
        c[1] += (ring + jitter) * angle.sin();
        let mut bump = match crate::nehari::make_bump_seed_with(grid, params, &c, br, options.solver.positive_part) {
            Ok(b) => b,
            Err(Error::Domain(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        perturb(&mut bump, &mut rng, options.perturbation, 2.0 * br);
        if steps == 0 {
            let pr = project_with(&fun, grid, &bump.values)?;
            let v: Vec<f64> = bump.values.iter().map(|x| x * pr.t).collect();
            let beta = grid.barycenter(&v).unwrap_or_default();
            Ok(Some((0, pr.energy, beta)))
        } else {
            let opts = SolverOptions {
                max_iter: steps,
                ..options.solver
            };
            let rep = ground_state(grid, params, &Init::Field(bump), &opts)?;
            Ok(Some((rep.iterations, rep.energy, rep.barycenter)))
        }
    });
    let mut raw = Vec::new();
    for (k, g) in generated.into_iter().enumerate() {
        if let Some((steps, e, beta)) = g? {
            m_p = m_p.min(e);
            raw.push((k, steps, e, beta));
        }
    }
    let threshold = m_p * (1.0 + options.epsilon);
    let points: Vec<LocalizationPoint> = raw
        .into_iter()
        .map(|(k, steps, e, beta)| {
            let d = grid.distance_to_domain(&beta);
            LocalizationPoint {
                start: k,
                descent_steps: steps,
                energy: e,
                inside: d <= r_plus,
                distance_to_domain: d,
                passed_filter: e < threshold,
                barycenter: beta,
            }
        })
        .collect();
    let n_passed = points.iter().filter(|p| p.passed_filter).count();
    let n_inside = points.iter().filter(|p| p.passed_filter && p.inside).count();
    Ok(LocalizationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        p: params.p,
        outside_hypotheses: params.outside_hypotheses,
        m_p,
        epsilon: options.epsilon,
        threshold,
        r_plus,
        n_generated: points.len(),
        n_passed,
        n_inside,
        fraction: (n_passed > 0).then(|| n_inside as f64 / n_passed as f64),
        inconclusive: n_passed == 0,
        points,
    })
}

impl LocalizationReport {
    pub fn write_artifacts(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let json = dir.join(format!("{stem}.json"));
        write_json(&json, self)?;
        let rows: Vec<Vec<f64>> = self
            .points
            .iter()
            .map(|p| {
                let b = |k: usize| p.barycenter.get(k).copied().unwrap_or(0.0);
                vec![
                    p.start as f64,
                    p.energy,
                    b(0),
                    b(1),
                    b(2),
                    p.distance_to_domain,
                    f64::from(u8::from(p.passed_filter)),
                    f64::from(u8::from(p.inside)),
                ]
            })
            .collect();
        let csv = dir.join(format!("{stem}.csv"));
        write_csv(&csv, &["start", "energy", "beta_x", "beta_y", "beta_z", "distance", "passed", "inside"], &rows)?;
        let gp = dir.join(format!("{stem}.gp"));
        std::fs::write(
            &gp,
            gnuplot_script(
                stem,
                &[PlotPanel {
                    title: "barycenters of low-energy points".into(),
                    csv: format!("{stem}.csv"),
                    x: 3,
                    y: 4,
                    xlabel: "beta_x".into(),
                    ylabel: "beta_y".into(),
                }],
            ),
        )?;
        Ok(vec![json, csv, gp])
    }
}

// ---------------------------------------------------------------------------
// Concentration on star-shaped domains
// ---------------------------------------------------------------------------

/// `z_R(x) = R^{(N−2)/2} z(c + R (x − ξ))` with `c` the barycenter of `z`,
/// sampled on `target` by multilinear interpolation (zero off the mask).
pub fn conformal_rescale(z: &Field, scale: f64, xi: &[f64], target: &Arc<DomainGrid>) -> Result<Field> {
    let src = &*z.grid;
    if src.dim != target.dim || xi.len() != target.dim || !(scale > 0.0) {
        return Err(Error::InvalidInput("conformal_rescale: dimension mismatch or nonpositive scale".into()));
    }
    let c = src.barycenter(&z.values).unwrap_or_else(|| src.shape_tag.center());
    let amp = scale.powf(0.5 * (src.dim as f64 - 2.0));
    // box-indexed copy of z with zeros off the mask
    let total: usize = src.shape.iter().product();
    let mut boxed = vec![0.0; total];
    for (i, &node) in src.interior_nodes().iter().enumerate() {
        boxed[node] = z.values[i];
    }
    let d = src.dim;
    let sample = |y: &[f64]| -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..d {
            let s = (y[k] - src.origin[k]) / src.spacing;
            if s < 0.0 || s >= (src.shape[k] - 1) as f64 {
                return 0.0;
            }
            base[k] = s.floor() as usize;
            frac[k] = s - base[k] as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for k in 0..3 {
                let bit = if k < d { corner >> k & 1 } else { 0 };
                if k < d {
                    w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                }
                idx += (base[k] + bit) * stride;
                stride *= src.shape[k];
            }
            acc += w * boxed[idx];
        }
        acc
    };
    Ok(Field::from_fn(target, |x| {
        let y: Vec<f64> = (0..d).map(|k| c[k] + scale * (x[k] - xi[k])).collect();
        amp * sample(&y)
    }))
}

fn sobolev_cache() -> &'static Mutex<HashMap<u64, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `S_h = min ‖∇v‖² / ‖v‖²_{2*}` over grid functions, by the power iteration
/// `v ← (-Δ_h)^{-1}(|v|^{2*−2} v)` with normalisation. `None` for `N < 3`.
pub fn discrete_sobolev_constant(grid: &Arc<DomainGrid>) -> Result<Option<f64>> {
    if grid.dim < 3 {
        return Ok(None);
    }
    if let Some(s) = sobolev_cache().lock().unwrap_or_else(|e| e.into_inner()).get(&grid.uid()) {
        return Ok(Some(*s));
    }
    let q = 2.0 * grid.dim as f64 / (grid.dim as f64 - 2.0);
    let hn = grid.cell_volume();
    let lq = |v: &[f64]| (par::sum(v.len(), |i| v[i].abs().powf(q)) * hn).powf(1.0 / q);
    let mut v = tilted_start(grid, 0.3)?.values;
    let mut best = f64::INFINITY;
    for _ in 0..2000 {
        let n = lq(&v);
        v.iter_mut().for_each(|x| *x /= n);
        let quotient = grid.grad_norm_sq(&v);
        let improved = best - quotient;
        best = best.min(quotient);
        if improved >= 0.0 && improved <= 1e-12 * quotient {
            break;
        }
        let rhs: Vec<f64> = v.iter().map(|x| x.abs().powf(q - 2.0) * x).collect();
        v = laplacian_inverse(grid, &rhs, 1e-12)?;
    }
    sobolev_cache().lock().unwrap_or_else(|e| e.into_inner()).insert(grid.uid(), best);
    Ok(Some(best))
}

/// `(1/N)(S/2)^{N/2}`.
pub fn ps_threshold(dim: usize, s: f64) -> f64 {
    (0.5 * s).powf(0.5 * dim as f64) / dim as f64
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationOptions {
    pub solver: SolverOptions,
    /// Widths at or below this many grid spacings count as resolution-limited.
    pub floor_spacings: f64,
    /// Start each exponent from the previous solution, rescaled conformally by
    /// the ratio of the last two widths.
    pub conformal_init: bool,
}

impl Default for ConcentrationOptions {
    fn default() -> Self {
        ConcentrationOptions {
            solver: SolverOptions {
                symmetric: true,
                ..SolverOptions::default()
            },
            floor_spacings: 3.0,
            conformal_init: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationRow {
    pub p: f64,
    pub fraction: f64,
    pub energy: f64,
    pub width: f64,
    pub width_over_h: f64,
    pub sup_norm: f64,
    pub pohozaev_residual: f64,
    /// Residual over the potential term `(N/p)∫|f(v)|^p`.
    pub pohozaev_relative: f64,
    pub barycenter: Vec<f64>,
    pub converged: bool,
    pub at_floor: bool,
    pub rescale_factor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub schema_version: u32,
    pub rows: Vec<ConcentrationRow>,
    pub width_decreasing: bool,
    pub sup_increasing: bool,
    pub barycenter_drift: f64,
    /// First row whose width is at the resolution floor.
    pub floor_index: Option<usize>,
    pub under_resolved: bool,
    pub s_disc: Option<f64>,
    pub ps_threshold: Option<f64>,
    /// `I_*(t_* v)` for the last solution.
    pub m_star_estimate: f64,
}

/// Solutions along increasing exponents on a star-shaped grid, with their
/// width, amplitude and Pohozaev residual.
pub fn concentration_probe(
    grid: &Arc<DomainGrid>,
    exponents: &[ExponentParams],
    options: &ConcentrationOptions,
) -> Result<ConcentrationReport> {
    check_exponents(exponents)?;
    if !grid.shape_tag.is_star_shaped() {
        return Err(Error::UnsupportedShape {
            op: "concentration_probe",
            shape: grid.shape_tag.tag().to_string(),
        });
    }
    options.solver.validate()?;
    let c = grid.shape_tag.center();
    let h = grid.spacing;
    let mut rows: Vec<ConcentrationRow> = Vec::new();
    let mut prev: Option<Field> = None;
    let mut last_field = None;
    for e in exponents {
        let (init, factor) = match (&prev, rows.len()) {
            (Some(f), n) if options.conformal_init => {
                let factor = if n >= 2 {
                    (rows[n - 2].width / rows[n - 1].width).clamp(1.0, 2.0)
                } else {
                    1.0
                };
                (conformal_rescale(f, factor, &c, grid)?, factor)
            }
            _ => (Init::Preset(Preset::Torsion).materialize(grid)?, 1.0),
        };
        let rep = ground_state(grid, e, &Init::Field(init), &options.solver)?;
        let fun = Functional {
            params: *e,
            positive_part: options.solver.positive_part,
        };
        let (gt, bt, pt) = fun.pohozaev_terms(&rep.field)?;
        let width = grid.gradient_width(&rep.field.values).unwrap_or(0.0);
        rows.push(ConcentrationRow {
            p: e.p,
            fraction: e.p / e.crit,
            energy: rep.energy,
            width,
            width_over_h: width / h,
            sup_norm: rep.sup_norm(),
            pohozaev_residual: gt + bt - pt,
            pohozaev_relative: (gt + bt - pt) / pt,
            barycenter: rep.barycenter.clone(),
            converged: rep.converged,
            at_floor: width <= options.floor_spacings * h,
            rescale_factor: factor,
        });
        prev = Some(rep.field.clone());
        last_field = Some(rep.field);
    }
    let widths: Vec<f64> = rows.iter().map(|r| r.width).collect();
    let sups: Vec<f64> = rows.iter().map(|r| r.sup_norm).collect();
    let drift = rows
        .iter()
        .map(|r| r.barycenter.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let floor_index = rows.iter().position(|r| r.at_floor);
    let crit = Functional {
        params: exponents[0].critical(),
        positive_part: options.solver.positive_part,
    };
    let last = last_field.expect("nonempty");
    let m_star = project_with(&crit, grid, &last.values)?.energy;
    let s_disc = discrete_sobolev_constant(grid)?;
    Ok(ConcentrationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        width_decreasing: strictly_decreasing(&widths),
        sup_increasing: strictly_increasing(&sups),
        barycenter_drift: drift,
        under_resolved: floor_index == Some(0),
        floor_index,
        ps_threshold: s_disc.map(|s| ps_threshold(grid.dim, s)),
        s_disc,
        m_star_estimate: m_star,
        rows,
    })
}

impl ConcentrationReport {
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let json = dir.join("concentration.json");
        write_json(&json, self)?;
        let rows: Vec<Vec<f64>> = self
            .rows
            .iter()
            .map(|r| vec![r.p, r.fraction, r.energy, r.width, r.width_over_h, r.sup_norm, r.pohozaev_residual])
            .collect();
        let csv = dir.join("concentration.csv");
        write_csv(&csv, &["p", "fraction", "energy", "width", "width_over_h", "sup_norm", "pohozaev"], &rows)?;
        let gp = dir.join("concentration.gp");
        let panel = |title: &str, y: usize, ylabel: &str| PlotPanel {
            title: title.into(),
            csv: "concentration.csv".into(),
            x: 1,
            y,
            xlabel: "p".into(),
            ylabel: ylabel.into(),
        };
        std::fs::write(
            &gp,
            gnuplot_script(
                "concentration",
                &[panel("gradient width", 4, "width"), panel("sup norm", 6, "sup v"), panel("Pohozaev residual", 7, "R")],
            ),
        )?;
        Ok(vec![json, csv, gp])
    }
}

// ---------------------------------------------------------------------------
// Multiplicity census
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiplicityOptions {
    pub solver: SolverOptions,
    pub seeds: usize,
    pub bump_radius: Option<f64>,
    /// Eigenvalues per Morse computation; `0` skips the indices.
    pub morse_k: usize,
}

impl Default for MultiplicityOptions {
    fn default() -> Self {
        MultiplicityOptions {
            solver: SolverOptions::default(),
            seeds: 8,
            bump_radius: None,
            morse_k: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CensusSolution {
    pub energy: f64,
    pub morse_index: Option<usize>,
    pub morse_saturated: bool,
    pub barycenter: Vec<f64>,
    pub positive: bool,
    pub converged: bool,
    pub grad_norm: f64,
    pub sup_norm: f64,
    /// Solutions mapped onto each other by a grid symmetry share a class.
    pub symmetry_class: usize,
    pub seeds: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplicityReport {
    pub schema_version: u32,
    pub shape: String,
    pub p: f64,
    pub outside_hypotheses: bool,
    pub category: usize,
    pub poincare_at_one: usize,
    /// `cat Ω`
    pub expected_category_bound: usize,
    /// `2 P₁(Ω) − 1`
    pub expected_morse_bound: usize,
    pub found: usize,
    pub found_positive: usize,
    pub symmetry_classes: usize,
    pub meets_category_bound: bool,
    pub meets_morse_bound: bool,
    pub seed_assignment: Vec<Option<usize>>,
    pub deflation_found: usize,
    pub solutions: Vec<CensusSolution>,
    #[serde(skip)]
    pub fields: Vec<Field>,
}

/// Multistart from the shape's seed layout, with Morse indices and the
/// expected lower bounds for the shape.
pub fn multiplicity_census(
    grid: &Arc<DomainGrid>,
    params: &ExponentParams,
    options: &MultiplicityOptions,
) -> Result<MultiplicityReport> {
    if options.seeds == 0 {
        return Err(Error::InvalidInput("census needs at least one seed".into()));
    }
    let seeds = seed_layout(grid, params, options.seeds, options.bump_radius)?;
    let ms = multistart_deflate(grid, params, &seeds, &options.solver)?;
    let fun = Functional {
        params: *params,
        positive_part: options.solver.positive_part,
    };
    let group = grid.symmetry_group();
    let mut classes: Vec<usize> = Vec::new();
    for i in 0..ms.solutions.len() {
        let mut cls = None;
        for (j, &cj) in classes.iter().enumerate() {
            let same = group.iter().any(|g| {
                relative_distance(&ms.solutions[i].field.permuted(g), &ms.solutions[j].field) < options.solver.dedupe_radius
            });
            if same {
                cls = Some(cj);
                break;
            }
        }
        let next = classes.iter().copied().max().map_or(0, |m| m + 1);
        classes.push(cls.unwrap_or(next));
    }
    let morse: Vec<Option<(usize, bool)>> = par::map_tasks(&ms.solutions, |s| {
        (options.morse_k >= 3)
            .then(|| morse_index_with(&fun, &s.field, options.morse_k, &MorseOptions::default()).ok())
            .flatten()
            .map(|m| (m.index, m.saturated))
    });
    let solutions: Vec<CensusSolution> = ms
        .solutions
        .iter()
        .enumerate()
        .map(|(i, s)| CensusSolution {
            energy: s.energy,
            morse_index: morse[i].map(|m| m.0),
            morse_saturated: morse[i].is_some_and(|m| m.1),
            barycenter: s.barycenter.clone(),
            positive: s.positive,
            converged: s.converged,
            grad_norm: s.grad_norm,
            sup_norm: s.sup_norm(),
            symmetry_class: classes[i],
            seeds: ms
                .assignment
                .iter()
                .enumerate()
                .filter(|(_, a)| **a == Some(i))
                .map(|(k, _)| k)
                .collect(),
            distances: s.deflation_distances.clone(),
        })
        .collect();
    let cat = grid.shape_tag.category();
    let p1 = grid.shape_tag.poincare_at_one();
    let found_positive = solutions.iter().filter(|s| s.positive).count();
    Ok(MultiplicityReport {
        schema_version: REPORT_SCHEMA_VERSION,
        shape: grid.shape_tag.tag().to_string(),
        p: params.p,
        outside_hypotheses: params.outside_hypotheses,
        category: cat,
        poincare_at_one: p1,
        expected_category_bound: cat,
        expected_morse_bound: 2 * p1 - 1,
        found: solutions.len(),
        found_positive,
        symmetry_classes: classes.iter().copied().max().map_or(0, |m| m + 1),
        meets_category_bound: found_positive >= cat,
        meets_morse_bound: found_positive >= 2 * p1 - 1,
        seed_assignment: ms.assignment,
        deflation_found: ms.deflation_found,
        fields: ms.solutions.into_iter().map(|s| s.field).collect(),
        solutions,
    })
}

impl MultiplicityReport {
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        let json = dir.join("census.json");
        write_json(&json, self)?;
        out.push(json);
        let rows: Vec<Vec<f64>> = self
            .solutions
            .iter()
            .map(|s| {
                let b = |k: usize| s.barycenter.get(k).copied().unwrap_or(0.0);
                vec![
                    s.energy,
                    s.morse_index.map_or(f64::NAN, |m| m as f64),
                    b(0),
                    b(1),
                    b(2),
                    s.symmetry_class as f64,
                ]
            })
            .collect();
        let csv = dir.join("census.csv");
        write_csv(&csv, &["energy", "morse_index", "beta_x", "beta_y", "beta_z", "class"], &rows)?;
        out.push(csv);
        let gp = dir.join("census.gp");
        std::fs::write(
            &gp,
            gnuplot_script(
                "census",
                &[PlotPanel {
                    title: "solution barycenters".into(),
                    csv: "census.csv".into(),
                    x: 3,
                    y: 4,
                    xlabel: "beta_x".into(),
                    ylabel: "beta_y".into(),
                }],
            ),
        )?;
        out.push(gp);
        for (i, f) in self.fields.iter().enumerate() {
            let (a, b) = write_field(&dir.join(format!("solution_{i}")), f)?;
            out.push(a);
            out.push(b);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, DomainSpec};

    #[test]
    fn neville_extrapolation_is_exact_on_quadratics() {
        let xs = [0.3, 0.2, 0.1];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - x + 3.0 * x * x).collect();
        assert!((extrapolate_to_zero(&xs, &ys) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_validates_exponents() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 8)).unwrap();
        let a = ExponentParams::new(8.0, 3).unwrap();
        let b = ExponentParams::new(6.0, 3).unwrap();
        assert!(level_sweep(&g, &[a, b], &SweepOptions::default()).is_err());
        assert!(level_sweep(&g, &[], &SweepOptions::default()).is_err());
        assert!(level_sweep(&g, &[a.critical()], &SweepOptions::default()).is_err());
    }

    #[test]
    fn single_exponent_sweep() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let e = ExponentParams::new(7.0, 3).unwrap();
        let s = level_sweep(&g, &[e], &SweepOptions::default()).unwrap();
        assert_eq!(s.records.len(), 1);
        assert_eq!(s.m_star_estimate, s.records[0].i_star);
        assert!(s.m_star_extrapolated.is_none());
        assert!(s.m_star_estimate >= s.m_star_disc_min);
    }

    #[test]
    fn identity_rescale_reproduces_symmetric_field() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 11)).unwrap();
        let z = Field::from_fn(&g, |x| 0.25 - x.iter().map(|a| a * a).sum::<f64>());
        let same = conformal_rescale(&z, 1.0, &[0.0, 0.0, 0.0], &g).unwrap();
        for (a, b) in same.values.iter().zip(&z.values) {
            assert!((a - b).abs() < 1e-12);
        }
        // the rescaling keeps the Dirichlet energy up to interpolation error
        let s = conformal_rescale(&z, 1.5, &[0.0, 0.0, 0.0], &g).unwrap();
        assert!(s.max_abs() > z.max_abs());
    }

    #[test]
    fn sobolev_constant_is_positive_and_cached() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let s = discrete_sobolev_constant(&g).unwrap().unwrap();
        assert!(s > 0.0);
        assert_eq!(discrete_sobolev_constant(&g).unwrap(), Some(s));
        let disk = build_domain(&DomainSpec::ball(2, 0.5, 10)).unwrap();
        assert_eq!(discrete_sobolev_constant(&disk).unwrap(), None);
    }

    #[test]
    fn probes_reject_wrong_shapes() {
        let ann = build_domain(&DomainSpec::annulus(3, 0.2, 0.5, 12)).unwrap();
        let e = ExponentParams::new(8.0, 3).unwrap();
        assert!(matches!(
            concentration_probe(&ann, &[e], &ConcentrationOptions::default()),
            Err(Error::UnsupportedShape { .. })
        ));
        let ball = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        assert!(matches!(
            barycenter_census(&ball, &e, &LocalizationOptions::default()),
            Err(Error::UnsupportedShape { .. })
        ));
    }
}
