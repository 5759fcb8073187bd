//! Nehari projection and constrained minimization.
//!
//! Iterates live on the manifold: a step along the preconditioned gradient is
//! followed by the radial retraction `ṽ ↦ t(ṽ) ṽ`, so the energy along the
//! iteration is the reduced energy `E(v) = I(t(v) v)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::domain::{DomainGrid, DomainSpec, Field, Shape};
use crate::error::{Error, Result};
use crate::functional::{ExponentParams, Functional};
use crate::linalg::solve_laplacian;
use crate::par;
use crate::spectra::{morse_index_with, MorseOptions, MorseReport};

const MAX_DOUBLINGS: usize = 200;

/// The multiplier `t` with `t v` on the Nehari manifold.
#[derive(Debug, Clone, Serialize)]
pub struct NehariProjection {
    pub t: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
    /// `G(t v)`
    pub residual: f64,
    /// `|G(t v)| / ‖t v‖²`
    pub relative_residual: f64,
    /// `I(t v)`
    pub energy: f64,
    /// Evaluated pairs `(t, ψ(t))` with `ψ(t) = ∫ g(tv) v / t`, sorted by `t`.
    #[serde(skip)]
    pub samples: Vec<(f64, f64)>,
}

/// Projection for the plain functional.
pub fn project(v: &Field, params: &ExponentParams) -> Result<NehariProjection> {
    project_with(&Functional::new(*params), &v.grid, &v.values)
}

/// Solves `‖v‖² = ψ(t)` for `t > 0`; `ψ` is increasing, so the root is unique.
pub fn project_with(fun: &Functional, grid: &DomainGrid, v: &[f64]) -> Result<NehariProjection> {
    let a = grid.grad_norm_sq(v);
    if !(a.sqrt() > 1e-14) {
        return Err(Error::InvalidInput("cannot project the zero field".into()));
    }
    let mut samples = Vec::new();
    // φ(t) = ψ(t)/‖v‖² − 1 and dφ/dt
    let mut eval = |t: f64| {
        let s = fun.ray_sums(grid, v, t);
        let psi = s.work / (t * t);
        samples.push((t, psi));
        let phi = psi / a - 1.0;
        let dphi = (s.curvature - s.work) / (t * t * t * a);
        (phi, dphi, s)
    };

    let mut evals = 0;
    let (mut lo, mut hi);
    let (phi1, _, _) = eval(1.0);
    evals += 1;
    if phi1 == 0.0 {
        lo = 1.0;
        hi = 1.0;
    } else if phi1 < 0.0 {
        lo = 1.0;
        hi = 2.0;
        loop {
            let (phi, _, _) = eval(hi);
            evals += 1;
            if phi >= 0.0 {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if evals > MAX_DOUBLINGS {
                return Err(Error::Divergence(
                    "Nehari bracket not found: no sign change after 200 doublings".into(),
                ));
            }
        }
    } else {
        hi = 1.0;
        lo = 0.5;
        loop {
            let (phi, _, _) = eval(lo);
            evals += 1;
            if phi <= 0.0 {
                break;
            }
            hi = lo;
            lo *= 0.5;
            if evals > MAX_DOUBLINGS {
                return Err(Error::Divergence(
                    "Nehari bracket not found: no sign change after 200 halvings".into(),
                ));
            }
        }
    }
    let bracket = (lo, hi);

    // safeguarded Newton inside the bracket
    let mut t = if lo == hi { lo } else { (lo * hi).sqrt() };
    let mut it = 0;
    let mut last;
    loop {
        let (phi, dphi, sums) = eval(t);
        it += 1;
        last = (phi, sums);
        if phi == 0.0 || it > 200 {
            break;
        }
        if phi < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - phi / dphi;
        let next = if dphi > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            (lo * hi).sqrt()
        };
        if (next - t).abs() <= 4.0 * f64::EPSILON * t || hi - lo <= 4.0 * f64::EPSILON * hi {
            t = next.clamp(lo, hi);
            let (phi, _, sums) = eval(t);
            last = (phi, sums);
            break;
        }
        t = next;
    }
    let (phi, sums) = last;
    let norm_sq = t * t * a;
    let residual = -phi * norm_sq;
    let energy = 0.5 * norm_sq - sums.potential / fun.params.p;
    samples.sort_by(|x, y| x.0.total_cmp(&y.0));
    samples.dedup_by(|x, y| x.0 == y.0);
    Ok(NehariProjection {
        t,
        iterations: evals + it,
        bracket,
        residual,
        relative_residual: phi.abs(),
        energy,
        samples,
    })
}

/// `E(v) = I(t(v) v)`.
pub fn reduced_energy(v: &Field, params: &ExponentParams) -> Result<f64> {
    Ok(project(v, params)?.energy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Stop when the gradient norm falls below `gtol` times its initial value.
    pub gtol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub positive_part: bool,
    pub dedupe_radius: f64,
    /// Penalty strength; `0` disables deflation.
    pub deflation_rho: f64,
    pub deflation_iter: usize,
    /// Stored pairs for the quasi-Newton update; `0` gives preconditioned
    /// steepest descent.
    pub memory: usize,
    /// Restrict the search to fields invariant under the grid's symmetry
    /// group.
    pub symmetric: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gtol: 1e-8,
            max_iter: 20_000,
            armijo_c: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            max_step: 16.0,
            positive_part: true,
            dedupe_radius: 0.05,
            deflation_rho: 0.0,
            deflation_iter: 300,
            memory: 8,
            symmetric: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.gtol > 0.0 && self.gtol < 1.0) {
            bad.push(format!("gtol must lie in (0, 1), got {}", self.gtol));
        }
        if self.max_iter == 0 {
            bad.push("max_iter must be positive".to_string());
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 0.5) {
            bad.push(format!("armijo_c must lie in (0, 0.5), got {}", self.armijo_c));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            bad.push(format!("backtrack must lie in (0, 1), got {}", self.backtrack));
        }
        if !(self.initial_step > 0.0 && self.max_step >= self.initial_step) {
            bad.push("need 0 < initial_step <= max_step".to_string());
        }
        if !(self.dedupe_radius > 0.0) {
            bad.push(format!("dedupe_radius must be positive, got {}", self.dedupe_radius));
        }
        if !(self.deflation_rho >= 0.0) {
            bad.push(format!("deflation_rho must be nonnegative, got {}", self.deflation_rho));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(bad.join("; ")))
        }
    }

    fn functional(&self, params: &ExponentParams) -> Functional {
        Functional {
            params: *params,
            positive_part: self.positive_part,
        }
    }
}

/// Starting guesses that need no field from the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preset {
    /// `(-Δ_h)^{-1} 1`, positive on any connected mask.
    Torsion,
    Gaussian { center: Vec<f64>, width: f64 },
}

#[derive(Debug, Clone)]
pub enum Init {
    Field(Field),
    Preset(Preset),
}

impl Init {
    pub fn materialize(&self, grid: &Arc<DomainGrid>) -> Result<Field> {
        match self {
            Init::Field(f) => {
                if **grid != *f.grid {
                    return Err(Error::GridMismatch);
                }
                Ok(f.clone())
            }
            Init::Preset(Preset::Torsion) => {
                let ones = vec![1.0; grid.n_interior()];
                let mut x = vec![0.0; ones.len()];
                solve_laplacian(grid, &ones, &mut x, 1e-12, 50 * ones.len() + 100)?;
                Field::new(grid, x)
            }
            Init::Preset(Preset::Gaussian { center, width }) => {
                if center.len() != grid.dim || !(*width > 0.0) {
                    return Err(Error::InvalidInput("gaussian preset needs a center of the grid dimension and a positive width".into()));
                }
                Ok(Field::from_fn(grid, |x| {
                    let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-r2 / (2.0 * width * width)).exp()
                }))
            }
        }
    }
}

/// A converged (or best-effort) critical point.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalPointReport {
    #[serde(skip)]
    pub field: Field,
    #[serde(skip)]
    pub params: ExponentParams,
    pub p: f64,
    pub energy: f64,
    /// `‖(-Δ_h)^{-1} I'(v)‖_{H¹₀}` at the final iterate.
    pub grad_norm: f64,
    pub initial_grad_norm: f64,
    pub nehari_residual: f64,
    pub norm: f64,
    pub barycenter: Vec<f64>,
    pub morse_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub morse: Option<MorseReport>,
    pub positive: bool,
    pub deflation_distances: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Set at the critical exponent, where the infimum is not attained.
    pub critical_exponent: bool,
    pub positive_part: bool,
}

impl CriticalPointReport {
    pub fn sup_norm(&self) -> f64 {
        self.field.max_abs()
    }

    /// Computes the `k` smallest Hessian eigenvalues and stores the report.
    pub fn attach_morse(&mut self, k: usize, opts: &MorseOptions) -> Result<&MorseReport> {
        let fun = Functional {
            params: self.params,
            positive_part: self.positive_part,
        };
        let m = morse_index_with(&fun, &self.field, k, opts)?;
        self.morse_index = Some(m.index);
        Ok(self.morse.insert(m))
    }
}

/// Direction, gradient norm and Laplacian solve state at one iterate.
struct Descent {
    d: Vec<f64>,
    gn: f64,
    z: Vec<f64>,
}

fn descent_direction(
    fun: &Functional,
    grid: &DomainGrid,
    w: &[f64],
    z_prev: &[f64],
    rel: f64,
    group: Option<&[Vec<usize>]>,
) -> Result<Descent> {
    let force = fun.force_values(w);
    let mut z = z_prev.to_vec();
    solve_laplacian(grid, &force, &mut z, rel, 50 * w.len() + 500)?;
    let mut d: Vec<f64> = w.iter().zip(&z).map(|(a, b)| a - b).collect();
    if let Some(g) = group {
        grid.symmetrize(g, &mut d);
    }
    let gn = grid.grad_norm_sq(&d).max(0.0).sqrt();
    Ok(Descent { d, gn, z })
}

fn cg_tolerance(gn: f64, norm: f64) -> f64 {
    (1e-3 * gn / norm).clamp(1e-14, 1e-6)
}

/// Minimizes the reduced energy from `init` on the Nehari manifold.
pub fn ground_state(
    grid: &Arc<DomainGrid>,
    params: &ExponentParams,
    init: &Init,
    options: &SolverOptions,
) -> Result<CriticalPointReport> {
    options.validate()?;
    let start = init.materialize(grid)?;
    let fun = options.functional(params);
    let mut w = start.values;
    if options.symmetric {
        grid.symmetrize(&grid.symmetry_group(), &mut w);
    }
    let proj = project_with(&fun, grid, &w)?;
    w.iter_mut().for_each(|x| *x *= proj.t);
    descend(&fun, grid, w, proj.energy, options, None)
}

/// Penalty factor `Π_k (1 + ρ / d_k²)` with `d_k` the relative `H¹₀` distance
/// to each known solution, and its `H¹₀` gradient.
struct Deflation<'a> {
    known: &'a [Vec<f64>],
    known_norm_sq: Vec<f64>,
    rho: f64,
}

impl<'a> Deflation<'a> {
    fn new(grid: &DomainGrid, known: &'a [Vec<f64>], rho: f64) -> Self {
        let known_norm_sq = known.iter().map(|k| grid.grad_norm_sq(k)).collect();
        Deflation { known, known_norm_sq, rho }
    }

    fn factor(&self, grid: &DomainGrid, w: &[f64]) -> (f64, Vec<f64>) {
        let mut m = 1.0;
        let mut d2s = Vec::with_capacity(self.known.len());
        for (k, n2) in self.known.iter().zip(&self.known_norm_sq) {
            let diff: Vec<f64> = w.iter().zip(k).map(|(a, b)| a - b).collect();
            let d2 = (grid.grad_norm_sq(&diff) / n2).max(1e-300);
            m *= 1.0 + self.rho / d2;
            d2s.push(d2);
        }
        (m, d2s)
    }

    /// `H¹₀` gradient of the factor: `Σ_k (M / (1 + ρ/d_k²)) · (−2ρ/d_k⁴) (w − w_k)/‖w_k‖²`.
    fn gradient(&self, w: &[f64], m: f64, d2s: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        for ((k, n2), d2) in self.known.iter().zip(&self.known_norm_sq).zip(d2s) {
            let c = m / (1.0 + self.rho / d2) * (-2.0 * self.rho / (d2 * d2)) / n2;
            g.iter_mut().zip(w.iter().zip(k)).for_each(|(gi, (a, b))| *gi += c * (a - b));
        }
        g
    }
}

/// Limited-memory BFGS history in the `H¹₀` inner product `⟨a, b⟩ = h^N aᵀ(-Δ_h)b`.
struct History {
    cap: usize,
    pairs: Vec<Pair>,
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    ls: Vec<f64>,
    ly: Vec<f64>,
    rho: f64,
}

impl History {
    fn push(&mut self, grid: &DomainGrid, s: Vec<f64>, y: Vec<f64>) {
        if self.cap == 0 {
            return;
        }
        let ls = grid.laplacian(&s);
        let sy = par::dot(&ls, &y);
        // skip pairs without positive curvature
        if !(sy > 1e-14 * par::dot(&ls, &s).sqrt() * grid.laplacian(&y).iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()) {
            return;
        }
        let ly = grid.laplacian(&y);
        if self.pairs.len() == self.cap {
            self.pairs.remove(0);
        }
        self.pairs.push(Pair { rho: 1.0 / sy, s, y, ls, ly });
    }

    /// Two-loop recursion applied to the `H¹₀` gradient `d`.
    fn direction(&self, d: &[f64]) -> Vec<f64> {
        let mut q = d.to_vec();
        let mut a = vec![0.0; self.pairs.len()];
        for (k, pr) in self.pairs.iter().enumerate().rev() {
            a[k] = pr.rho * par::dot(&pr.ls, &q);
            q.iter_mut().zip(&pr.y).for_each(|(x, y)| *x -= a[k] * y);
        }
        if let Some(last) = self.pairs.last() {
            let gamma = 1.0 / (last.rho * par::dot(&last.ly, &last.y));
            q.iter_mut().for_each(|x| *x *= gamma);
        }
        for (k, pr) in self.pairs.iter().enumerate() {
            let b = pr.rho * par::dot(&pr.ly, &q);
            q.iter_mut().zip(&pr.s).for_each(|(x, s)| *x += (a[k] - b) * s);
        }
        q
    }
}

fn descend(
    fun: &Functional,
    grid: &Arc<DomainGrid>,
    mut w: Vec<f64>,
    mut energy: f64,
    options: &SolverOptions,
    deflation: Option<&Deflation>,
) -> Result<CriticalPointReport> {
    let n = w.len();
    let mut z = vec![0.0; n];
    let mut norm = grid.grad_norm_sq(&w).sqrt();
    // the first solve sets the scale for the adaptive CG tolerance
    let group = options.symmetric.then(|| grid.symmetry_group());
    let group = group.as_deref();
    let mut desc = descent_direction(fun, grid, &w, &z, 1e-10, group)?;
    z.clone_from(&desc.z);
    let gn0 = desc.gn;
    let target = options.gtol * gn0;
    let max_iter = if deflation.is_some() { options.deflation_iter } else { options.max_iter };
    let mut history = History {
        cap: if deflation.is_some() { 0 } else { options.memory },
        pairs: Vec::new(),
    };
    let mut step = options.initial_step;
    let mut iterations = 0;
    let mut converged = desc.gn <= target;
    let mut stalled = 0;

    while !converged && iterations < max_iter {
        iterations += 1;
        // objective value and search direction (possibly deflated)
        let (obj, dir, slope) = match deflation {
            None if !history.pairs.is_empty() => {
                let r = history.direction(&desc.d);
                let slope = par::dot(&grid.laplacian(&r), &desc.d) * grid.cell_volume();
                if slope > 0.0 {
                    (energy, r, slope)
                } else {
                    history.pairs.clear();
                    (energy, desc.d.clone(), desc.gn * desc.gn)
                }
            }
            None => (energy, desc.d.clone(), desc.gn * desc.gn),
            Some(df) => {
                let (m, d2s) = df.factor(grid, &w);
                let gm = df.gradient(&w, m, &d2s);
                let mut dir: Vec<f64> = desc.d.iter().zip(&gm).map(|(d, g)| m * d + energy * g).collect();
                // remove the radial component so the step stays tangent
                let lw = grid.laplacian(&w);
                let c = par::dot(&dir, &lw) / par::dot(&w, &lw);
                dir.iter_mut().zip(&w).for_each(|(d, x)| *d -= c * x);
                let s = grid.grad_norm_sq(&dir);
                (energy * m, dir, s)
            }
        };
        let quasi_newton = deflation.is_none() && !history.pairs.is_empty();
        let floor = 10.0 * f64::EPSILON * obj.abs();
        let mut accepted = None;
        let mut alpha = if quasi_newton { 1.0 } else { step };
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&dir).map(|(a, d)| a - alpha * d).collect();
            if let Ok(pr) = project_with(fun, grid, &trial) {
                let moved: Vec<f64> = trial.iter().map(|x| x * pr.t).collect();
                let val = match deflation {
                    None => pr.energy,
                    Some(df) => pr.energy * df.factor(grid, &moved).0,
                };
                let decrease = options.armijo_c * alpha * slope;
                let ok = val <= obj - decrease || (decrease < floor && val <= obj + floor);
                if ok {
                    accepted = Some((moved, pr.energy));
                    break;
                }
            }
            alpha *= options.backtrack;
        }
        let Some((moved, e_new)) = accepted else {
            stalled += 1;
            history.pairs.clear();
            if stalled > 2 {
                break;
            }
            step = options.initial_step;
            continue;
        };
        stalled = 0;
        if !quasi_newton {
            step = if alpha >= step { (2.0 * alpha).min(options.max_step) } else { alpha };
        }
        let s_vec: Vec<f64> = moved.iter().zip(&w).map(|(a, b)| a - b).collect();
        w = moved;
        energy = e_new;
        norm = grid.grad_norm_sq(&w).sqrt();
        let next = descent_direction(fun, grid, &w, &z, cg_tolerance(desc.gn, norm), group)?;
        let y_vec: Vec<f64> = next.d.iter().zip(&desc.d).map(|(a, b)| a - b).collect();
        history.push(grid, s_vec, y_vec);
        desc = next;
        z.clone_from(&desc.z);
        if deflation.is_none() {
            converged = desc.gn <= target;
        }
    }

    let field = Field::new(grid, w)?;
    let nehari = fun.nehari_values(grid, &field.values);
    let max = field.max();
    let positive = max > 0.0 && field.min() >= -1e-12 * max;
    Ok(CriticalPointReport {
        params: fun.params,
        p: fun.params.p,
        energy,
        grad_norm: desc.gn,
        initial_grad_norm: gn0,
        nehari_residual: nehari,
        norm,
        barycenter: grid.barycenter(&field.values).unwrap_or_default(),
        morse_index: None,
        morse: None,
        positive,
        deflation_distances: Vec::new(),
        converged,
        iterations,
        critical_exponent: fun.params.is_critical(),
        positive_part: fun.positive_part,
        field,
    })
}

/// Relative `H¹₀` distance `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_distance(a: &Field, b: &Field) -> f64 {
    let g = &a.grid;
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let scale = g.grad_norm_sq(&a.values).max(g.grad_norm_sq(&b.values));
    if scale == 0.0 {
        0.0
    } else {
        (g.grad_norm_sq(&diff) / scale).sqrt()
    }
}

/// Outcome of [`multistart_deflate`].
#[derive(Debug, Clone, Serialize)]
pub struct Multistart {
    /// Distinct solutions, ascending in energy.
    pub solutions: Vec<CriticalPointReport>,
    /// For each seed, the index into `solutions` it converged to, if any.
    pub assignment: Vec<Option<usize>>,
    pub seed_energies: Vec<f64>,
    pub seed_converged: Vec<bool>,
    /// Solutions added by deflated restarts.
    pub deflation_found: usize,
}

/// Runs [`ground_state`] from each seed, clusters the results and, if
/// `deflation_rho > 0`, restarts each seed under the penalty to look for
/// further solutions.
pub fn multistart_deflate(
    grid: &Arc<DomainGrid>,
    params: &ExponentParams,
    seeds: &[Field],
    options: &SolverOptions,
) -> Result<Multistart> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("multistart needs at least one seed".into()));
    }
    options.validate()?;
    let runs: Vec<Result<CriticalPointReport>> =
        par::map_tasks(seeds, |s| ground_state(grid, params, &Init::Field(s.clone()), options));
    let runs: Vec<CriticalPointReport> = runs.into_iter().collect::<Result<_>>()?;

    let mut reps: Vec<CriticalPointReport> = Vec::new();
    let mut assignment = Vec::with_capacity(runs.len());
    let seed_energies = runs.iter().map(|r| r.energy).collect();
    let seed_converged = runs.iter().map(|r| r.converged).collect();
    for r in runs {
        if !r.converged {
            assignment.push(None);
            continue;
        }
        assignment.push(Some(insert_distinct(&mut reps, r, options.dedupe_radius)));
    }

    let mut deflation_found = 0;
    if options.deflation_rho > 0.0 && !reps.is_empty() {
        let fun = options.functional(params);
        for s in seeds {
            let known: Vec<Vec<f64>> = reps.iter().map(|r| r.field.values.clone()).collect();
            let df = Deflation::new(grid, &known, options.deflation_rho);
            let Ok(pr) = project_with(&fun, grid, &s.values) else { continue };
            let w: Vec<f64> = s.values.iter().map(|x| x * pr.t).collect();
            let escaped = descend(&fun, grid, w, pr.energy, options, Some(&df))?;
            let polished = descend(&fun, grid, escaped.field.values.clone(), escaped.energy, options, None)?;
            if polished.converged {
                let before = reps.len();
                insert_distinct(&mut reps, polished, options.dedupe_radius);
                deflation_found += reps.len() - before;
            }
        }
    }

    // sort by energy and remap assignments
    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by(|&a, &b| reps[a].energy.total_cmp(&reps[b].energy));
    let mut rank = vec![0; reps.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let mut slots: Vec<Option<CriticalPointReport>> = reps.into_iter().map(Some).collect();
    let mut solutions: Vec<CriticalPointReport> = order.iter().map(|&o| slots[o].take().unwrap()).collect();
    let assignment = assignment.into_iter().map(|a| a.map(|i| rank[i])).collect();
    for i in 0..solutions.len() {
        let dists = (0..solutions.len())
            .filter(|&j| j != i)
            .map(|j| relative_distance(&solutions[i].field, &solutions[j].field))
            .collect();
        solutions[i].deflation_distances = dists;
    }
    Ok(Multistart {
        solutions,
        assignment,
        seed_energies,
        seed_converged,
        deflation_found,
    })
}

fn insert_distinct(reps: &mut Vec<CriticalPointReport>, r: CriticalPointReport, radius: f64) -> usize {
    for (i, q) in reps.iter().enumerate() {
        if relative_distance(&q.field, &r.field) < radius {
            return i;
        }
    }
    reps.push(r);
    reps.len() - 1
}

/// Nodes per axis of the auxiliary ball grid used to build bump profiles.
pub const BUMP_RESOLUTION: usize = 20;

type ProfileKey = (u64, u64, usize, usize, bool);

/// Radially averaged profile `(radius, value)` of a ball ground state.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub radius: f64,
    pub samples: Vec<(f64, f64)>,
}

impl RadialProfile {
    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.radius {
            return 0.0;
        }
        let s = &self.samples;
        if r <= s[0].0 {
            return s[0].1;
        }
        let k = s.partition_point(|x| x.0 <= r);
        if k >= s.len() {
            // linear decay to zero at the rim
            let (r0, v0) = s[s.len() - 1];
            return v0 * (self.radius - r) / (self.radius - r0);
        }
        let (r0, v0) = s[k - 1];
        let (r1, v1) = s[k];
        v0 + (v1 - v0) * (r - r0) / (r1 - r0)
    }
}

fn profile_cache() -> &'static Mutex<HashMap<ProfileKey, Arc<RadialProfile>>> {
    static CACHE: OnceLock<Mutex<HashMap<ProfileKey, Arc<RadialProfile>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Ground state on `B_r` in the grid's dimension, radially binned. Cached
/// per `(p, r, resolution)`; the lock is held while building so each profile
/// is computed once.
pub fn bump_profile(dim: usize, params: &ExponentParams, r: f64, positive_part: bool) -> Result<Arc<RadialProfile>> {
    let key = (params.p.to_bits(), r.to_bits(), BUMP_RESOLUTION, dim, positive_part);
    let mut cache = profile_cache().lock().unwrap_or_else(|e| e.into_inner());
    if let Some(p) = cache.get(&key) {
        return Ok(Arc::clone(p));
    }
    let grid = crate::domain::build_domain(&DomainSpec::ball(dim, r, BUMP_RESOLUTION))?;
    let opts = SolverOptions {
        gtol: 1e-7,
        positive_part,
        ..SolverOptions::default()
    };
    let gs = ground_state(&grid, params, &Init::Preset(Preset::Torsion), &opts)?;
    let nbins = BUMP_RESOLUTION;
    let width = r / nbins as f64;
    let mut acc = vec![(0.0, 0.0, 0usize); nbins + 1];
    for i in 0..grid.n_interior() {
        let rad = grid.coord(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        let b = ((rad / width) as usize).min(nbins);
        acc[b].0 += rad;
        acc[b].1 += gs.field.values[i];
        acc[b].2 += 1;
    }
    let samples: Vec<(f64, f64)> = acc
        .iter()
        .filter(|a| a.2 > 0)
        .map(|a| (a.0 / a.2 as f64, a.1 / a.2 as f64))
        .collect();
    let prof = Arc::new(RadialProfile { radius: r, samples });
    cache.insert(key, Arc::clone(&prof));
    Ok(prof)
}

/// Translated, zero-extended ball ground state `Ψ(y)` centred at `center`.
pub fn make_bump_seed(
    grid: &Arc<DomainGrid>,
    params: &ExponentParams,
    center: &[f64],
    r: f64,
) -> Result<Field> {
    make_bump_seed_with(grid, params, center, r, true)
}

pub fn make_bump_seed_with(
    grid: &Arc<DomainGrid>,
    params: &ExponentParams,
    center: &[f64],
    r: f64,
    positive_part: bool,
) -> Result<Field> {
    if !(r > 0.0) || !grid.contains_ball(center, r) {
        return Err(Error::Domain(format!(
            "bump of radius {r} at {center:?} is not contained in the domain"
        )));
    }
    let prof = bump_profile(grid.dim, params, r, positive_part)?;
    let f = Field::from_fn(grid, |x| {
        let d = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prof.eval(d)
    });
    if f.max_abs() == 0.0 {
        return Err(Error::Domain("bump seed has no grid support; increase resolution".into()));
    }
    Ok(f)
}

/// Shape-appropriate seed layout: a ring of `count` bumps in the `x₀x₁` plane
/// for annuli and holed rectangles, the centre plus axis offsets for balls and
/// rectangles.
pub fn seed_layout(grid: &Arc<DomainGrid>, params: &ExponentParams, count: usize, r: Option<f64>) -> Result<Vec<Field>> {
    let dim = grid.dim;
    let c = grid.shape_tag.center();
    let at = |offset: &[f64]| -> Vec<f64> { c.iter().zip(offset).map(|(a, b)| a + b).collect() };
    match &grid.shape_tag {
        Shape::Annulus { r_inner, r_outer, .. } => {
            let ring = 0.5 * (r_inner + r_outer);
            let br = r.unwrap_or(0.5 * (r_outer - r_inner) - grid.spacing);
            (0..count)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                    let mut off = vec![0.0; dim];
                    off[0] = ring * a.cos();
                    off[1] = ring * a.sin();
                    make_bump_seed(grid, params, &at(&off), br)
                })
                .collect()
        }
        Shape::RectangleWithHole { lo, hi, hole_lo, hole_hi } => {
            // ring through the middle of the frame
            let half: Vec<f64> = (0..2)
                .map(|k| 0.25 * ((hi[k] - lo[k]) + (hole_hi[k] - hole_lo[k])))
                .collect();
            let br = r.unwrap_or_else(|| {
                (0..dim)
                    .map(|k| 0.25 * ((hi[k] - lo[k]) - (hole_hi[k] - hole_lo[k])))
                    .fold(f64::INFINITY, f64::min)
                    - grid.spacing
            });
            (0..count)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                    let (ca, sa) = (a.cos(), a.sin());
                    let s = (half[0] / ca.abs().max(1e-12)).min(half[1] / sa.abs().max(1e-12));
                    let mut off = vec![0.0; dim];
                    off[0] = s * ca;
                    off[1] = s * sa;
                    make_bump_seed(grid, params, &at(&off), br)
                })
                .collect()
        }
        Shape::Ball { radius, .. } => {
            let br = r.unwrap_or(0.5 * radius);
            let shift = 0.25 * radius;
            (0..count)
                .map(|k| {
                    let mut off = vec![0.0; dim];
                    if k > 0 {
                        let axis = (k - 1) / 2 % dim;
                        off[axis] = if k % 2 == 1 { shift } else { -shift };
                    }
                    make_bump_seed(grid, params, &at(&off), br)
                })
                .collect()
        }
        Shape::Rectangle { lo, hi } => {
            let ext = (0..dim).map(|k| hi[k] - lo[k]).fold(f64::INFINITY, f64::min);
            let br = r.unwrap_or(0.25 * ext);
            let shift = 0.125 * ext;
            (0..count)
                .map(|k| {
                    let mut off = vec![0.0; dim];
                    if k > 0 {
                        let axis = (k - 1) / 2 % dim;
                        off[axis] = if k % 2 == 1 { shift } else { -shift };
                    }
                    make_bump_seed(grid, params, &at(&off), br)
                })
                .collect()
        }
    }
}
