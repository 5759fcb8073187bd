//! Morse indices from the pencil `H w = μ (-Δ_h) w`, `H = -Δ_h − diag(q)`,
//! and the decay of the compact part `K = (-Δ_h)^{-1} diag(q)` on Laplacian
//! modes.
//!
//! With `θ` an eigenvalue of `K`, `μ = 1 − θ`; `q ≥ 0`, so `μ ≤ 1`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domain::Field;
use crate::error::{Error, Result};
use crate::functional::{ExponentParams, Functional};
use crate::linalg::{dense_generalized, dense_laplacian, laplacian_inverse, top_eigenpairs};
use crate::par;

/// Largest interior-node count solved densely.
pub const DENSE_LIMIT: usize = 1000;
/// Largest interior-node count for the dense Laplacian modes of the probe.
pub const DENSE_MODES_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MorseOptions {
    pub method: EigenMethod,
    /// Relative to the spectral scale `max |μ|`.
    pub degeneracy_tol: f64,
    pub lanczos_tol: f64,
    pub seed: u64,
}

impl Default for MorseOptions {
    fn default() -> Self {
        MorseOptions {
            method: EigenMethod::Auto,
            degeneracy_tol: 1e-7,
            lanczos_tol: 1e-10,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MorseReport {
    /// Number of eigenvalues below `−degeneracy_tol`.
    pub index: usize,
    /// The `k` smallest `μ`, ascending.
    pub eigenvalues: Vec<f64>,
    pub k: usize,
    /// `min |μ|` over the returned eigenvalues.
    pub gap: f64,
    pub near_degenerate: Vec<f64>,
    /// `‖H w − μ (-Δ_h) w‖ / ‖(-Δ_h) w‖` per returned pair.
    pub residuals: Vec<f64>,
    pub method: EigenMethod,
    /// All `k` eigenvalues are negative, so `index` is only a lower bound.
    pub saturated: bool,
    /// Relative `H¹₀` gradient norm of the input; large values mean the
    /// input is not a critical point and the index is not meaningful.
    pub relative_gradient: f64,
    pub warning: Option<String>,
}

/// Morse index of `v` for the plain functional.
pub fn morse_index(v: &Field, params: &ExponentParams, k: usize) -> Result<MorseReport> {
    morse_index_with(&Functional::new(*params), v, k, &MorseOptions::default())
}

pub fn morse_index_with(fun: &Functional, v: &Field, k: usize, opts: &MorseOptions) -> Result<MorseReport> {
    let grid = &*v.grid;
    let n = grid.n_interior();
    if k < 3 {
        return Err(Error::InvalidInput(format!("morse_index needs k >= 3, got {k}")));
    }
    let k = k.min(n);
    let q = fun.curvature_values(&v.values);

    let method = match opts.method {
        EigenMethod::Auto if n <= DENSE_LIMIT => EigenMethod::Dense,
        EigenMethod::Auto => EigenMethod::Lanczos,
        m => m,
    };
    let (mu, vecs): (Vec<f64>, Vec<Vec<f64>>) = if q.iter().all(|x| *x == 0.0) {
        // K = 0: the pencil is the identity
        (vec![1.0; k], Vec::new())
    } else {
        match method {
            EigenMethod::Dense => {
                let (vals, vm) = dense_generalized(grid, &q)?;
                let vecs = (0..k).map(|c| vm.column(c).iter().copied().collect()).collect();
                (vals[..k].to_vec(), vecs)
            }
            _ => {
                let pairs = top_eigenpairs(
                    n,
                    |x| {
                        let qx: Vec<f64> = x.iter().zip(&q).map(|(a, b)| a * b).collect();
                        laplacian_inverse(grid, &qx, 1e-13)
                    },
                    |x| grid.laplacian(x),
                    k,
                    opts.lanczos_tol,
                    opts.seed,
                )?;
                if pairs.values.len() < k {
                    return Err(Error::Eigen(format!(
                        "Lanczos returned {} of {k} requested pairs",
                        pairs.values.len()
                    )));
                }
                (pairs.values.iter().map(|t| 1.0 - t).collect(), pairs.vectors)
            }
        }
    };

    let residuals: Vec<f64> = if vecs.is_empty() {
        vec![0.0; mu.len()]
    } else {
        mu.iter()
            .zip(&vecs)
            .map(|(m, w)| {
                let lw = grid.laplacian(w);
                let r: f64 = lw
                    .iter()
                    .zip(w.iter().zip(&q))
                    .map(|(l, (x, qq))| {
                        let hw = l - qq * x;
                        (hw - m * l).powi(2)
                    })
                    .sum();
                (r / par::dot(&lw, &lw)).sqrt()
            })
            .collect()
    };

    let scale = mu.iter().fold(1.0_f64, |a, m| a.max(m.abs()));
    let tol = opts.degeneracy_tol * scale;
    let index = mu.iter().filter(|m| **m < -tol).count();
    let near_degenerate = mu.iter().copied().filter(|m| m.abs() <= tol).collect();
    let gap = mu.iter().fold(f64::INFINITY, |a, m| a.min(m.abs()));
    let rel_grad = relative_gradient(fun, v)?;
    let warning = (rel_grad > 1e-6).then(|| {
        format!("input is not a converged critical point (relative gradient {rel_grad:.2e})")
    });
    Ok(MorseReport {
        index,
        saturated: index == mu.len(),
        eigenvalues: mu,
        k,
        gap,
        near_degenerate,
        residuals,
        method,
        relative_gradient: rel_grad,
        warning,
    })
}

/// `‖v − (-Δ_h)^{-1} g(v)‖_{H¹₀} / ‖v‖_{H¹₀}`; zero for `v = 0`.
pub fn relative_gradient(fun: &Functional, v: &Field) -> Result<f64> {
    let grid = &*v.grid;
    let norm = grid.grad_norm_sq(&v.values);
    if norm == 0.0 {
        return Ok(0.0);
    }
    let z = laplacian_inverse(grid, &fun.force_values(&v.values), 1e-12)?;
    let d: Vec<f64> = v.values.iter().zip(&z).map(|(a, b)| a - b).collect();
    Ok((grid.grad_norm_sq(&d) / norm).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct CompactnessProfile {
    /// Laplacian eigenvalues of the probed modes, ascending.
    pub laplacian_eigenvalues: Vec<f64>,
    /// `‖K w_n‖ / ‖w_n‖` in the `H¹₀` norm, per mode.
    pub ratios: Vec<f64>,
    /// Root mean square of `ratios` over each (numerically) repeated
    /// eigenvalue, repeated per mode; independent of the eigenbasis chosen.
    pub cluster_ratios: Vec<f64>,
}

impl CompactnessProfile {
    pub fn decay_factor(&self, mode: usize) -> Option<f64> {
        let first = *self.cluster_ratios.first()?;
        let last = *self.cluster_ratios.get(mode.checked_sub(1)?)?;
        Some(first / last)
    }
}

/// Applies `K` to the first `n_modes` Laplacian eigenvectors.
pub fn compactness_probe(v: &Field, params: &ExponentParams, n_modes: usize) -> Result<CompactnessProfile> {
    compactness_probe_with(&Functional::new(*params), v, n_modes)
}

pub fn compactness_probe_with(fun: &Functional, v: &Field, n_modes: usize) -> Result<CompactnessProfile> {
    let grid = &*v.grid;
    let n = grid.n_interior();
    if n_modes == 0 || n_modes > n {
        return Err(Error::InvalidInput(format!(
            "n_modes must lie in 1..={n}, got {n_modes}"
        )));
    }
    let (lams, modes) = laplacian_modes(grid, n_modes)?;
    let q = fun.curvature_values(&v.values);
    let ratios: Vec<f64> = modes
        .iter()
        .map(|w| -> Result<f64> {
            let qw: Vec<f64> = w.iter().zip(&q).map(|(a, b)| a * b).collect();
            if qw.iter().all(|x| *x == 0.0) {
                return Ok(0.0);
            }
            let kw = laplacian_inverse(grid, &qw, 1e-13)?;
            Ok((grid.grad_norm_sq(&kw) / grid.grad_norm_sq(w)).sqrt())
        })
        .collect::<Result<_>>()?;
    let mut cluster_ratios = vec![0.0; ratios.len()];
    let mut start = 0;
    while start < ratios.len() {
        let mut end = start + 1;
        while end < ratios.len() && (lams[end] - lams[start]).abs() <= 1e-9 * lams[start] {
            end += 1;
        }
        let rms = (ratios[start..end].iter().map(|r| r * r).sum::<f64>() / (end - start) as f64).sqrt();
        cluster_ratios[start..end].iter_mut().for_each(|c| *c = rms);
        start = end;
    }
    Ok(CompactnessProfile {
        laplacian_eigenvalues: lams,
        ratios,
        cluster_ratios,
    })
}

fn laplacian_modes(grid: &crate::domain::DomainGrid, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = grid.n_interior();
    if n <= DENSE_MODES_LIMIT {
        let eig = SymmetricEigen::new(dense_laplacian(grid));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vm: &DMatrix<f64> = &eig.eigenvectors;
        let vals = order[..count].iter().map(|&k| eig.eigenvalues[k]).collect();
        let vecs = order[..count].iter().map(|&k| vm.column(k).iter().copied().collect()).collect();
        Ok((vals, vecs))
    } else {
        let pairs = top_eigenpairs(n, |x| laplacian_inverse(grid, x, 1e-13), |x| x.to_vec(), count, 1e-9, 7)?;
        if pairs.values.len() < count {
            return Err(Error::Eigen("not enough Laplacian modes converged".into()));
        }
        Ok((pairs.values.iter().map(|t| 1.0 / t).collect(), pairs.vectors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, DomainSpec};
    use crate::nehari::{ground_state, Init, Preset, SolverOptions};

    #[test]
    fn zero_field_has_index_zero() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let rep = morse_index(&Field::zeros(&g), &ExponentParams::new(6.0, 3).unwrap(), 4).unwrap();
        assert_eq!(rep.index, 0);
        assert!(rep.eigenvalues.iter().all(|m| *m == 1.0));
        let prof = compactness_probe(&Field::zeros(&g), &ExponentParams::new(6.0, 3).unwrap(), 5).unwrap();
        assert!(prof.ratios.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn small_k_rejected() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        assert!(morse_index(&Field::zeros(&g), &ExponentParams::new(6.0, 3).unwrap(), 2).is_err());
    }

    #[test]
    fn ground_state_index_dense_and_lanczos_agree() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let prm = ExponentParams::new(6.0, 3).unwrap();
        let gs = ground_state(&g, &prm, &Init::Preset(Preset::Torsion), &SolverOptions::default()).unwrap();
        let fun = Functional::new(prm);
        let dense = morse_index_with(&fun, &gs.field, 5, &MorseOptions { method: EigenMethod::Dense, ..Default::default() }).unwrap();
        let lz = morse_index_with(&fun, &gs.field, 5, &MorseOptions { method: EigenMethod::Lanczos, ..Default::default() }).unwrap();
        assert_eq!(dense.index, 1);
        assert_eq!(lz.index, 1);
        for (a, b) in dense.eigenvalues.iter().zip(&lz.eigenvalues) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(dense.residuals.iter().chain(&lz.residuals).all(|r| *r < 1e-8));
        assert!(dense.warning.is_none());
    }
}
