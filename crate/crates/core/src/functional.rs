//! The energy `I_p(v) = ½∫|∇v|² − (1/p)∫|f(v)|^p` and its derivatives on a
//! masked grid.
//!
//! Gradients are reported as nodal fields in the `h^N`-weighted inner
//! product, so `I_p'(v)[w] = h^N Σ gradient(v)·w`.

use serde::{Deserialize, Serialize};

use crate::domain::{DomainGrid, Field, Shape, GHOST};
use crate::error::{Error, Result};
use crate::kernel::TransformSample;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentParams {
    pub p: f64,
    pub dim: usize,
    /// `2N/(N−2)`; for `N = 2` half of the configured cap.
    pub two_star: f64,
    /// Upper end of the admissible range, `2·2* = 4N/(N−2)` for `N ≥ 3`.
    pub crit: f64,
    /// Set when `N = 2`: the exponent cap is a user choice, not a theorem.
    pub outside_hypotheses: bool,
}

impl ExponentParams {
    /// Exponent `p ∈ (4, 4N/(N−2)]` in dimension `N ≥ 3`.
    pub fn new(p: f64, dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::InvalidInput(
                "dimension 2 has no critical exponent; use ExponentParams::with_cap".into(),
            ));
        }
        let two_star = 2.0 * dim as f64 / (dim as f64 - 2.0);
        Self::checked(p, dim, two_star, 2.0 * two_star, false)
    }

    /// Exploration mode for `N = 2` with a user-chosen upper exponent.
    pub fn with_cap(p: f64, dim: usize, cap: f64) -> Result<Self> {
        if dim >= 3 {
            return Self::new(p, dim);
        }
        if !(cap > 4.0 && cap.is_finite()) {
            return Err(Error::InvalidInput(format!("exponent cap must exceed 4, got {cap}")));
        }
        Self::checked(p, dim, 0.5 * cap, cap, true)
    }

    /// `p = fraction · crit`.
    pub fn at_fraction(fraction: f64, dim: usize, cap: Option<f64>) -> Result<Self> {
        let crit = if dim >= 3 {
            4.0 * dim as f64 / (dim as f64 - 2.0)
        } else {
            cap.ok_or_else(|| Error::InvalidInput("dimension 2 needs an exponent cap".into()))?
        };
        match cap {
            Some(c) if dim < 3 => Self::with_cap(fraction * crit, dim, c),
            _ => Self::new(fraction * crit, dim),
        }
    }

    fn checked(p: f64, dim: usize, two_star: f64, crit: f64, outside: bool) -> Result<Self> {
        if !(p > 4.0 && p <= crit * (1.0 + 1e-14)) {
            return Err(Error::InvalidInput(format!(
                "exponent p = {p} outside (4, {crit}]"
            )));
        }
        Ok(ExponentParams {
            p: p.min(crit),
            dim,
            two_star,
            crit,
            outside_hypotheses: outside,
        })
    }

    /// The same setting at the critical exponent.
    pub fn critical(&self) -> Self {
        ExponentParams { p: self.crit, ..*self }
    }

    pub fn is_critical(&self) -> bool {
        self.p >= self.crit
    }
}

/// Pointwise pieces of the nonlinearity at one value of `v`.
#[derive(Debug, Clone, Copy)]
pub struct NodeTerms {
    /// `|f(v)|^p`
    pub potential: f64,
    /// `|f|^{p−2} f f'`
    pub force: f64,
    /// `|f|^{p−2}((p−1) f'^2 + f f'')`
    pub curvature: f64,
}

/// `|f|^{p−2}` computed as `exp((p−2) ln|f|)`, zero at `f = 0`.
#[inline]
fn abs_pow(f: f64, e: f64) -> f64 {
    let a = f.abs();
    if a == 0.0 {
        0.0
    } else {
        (e * a.ln()).exp()
    }
}

#[inline]
pub fn node_terms(v: f64, p: f64, positive_part: bool) -> NodeTerms {
    let s = if positive_part && v < 0.0 { 0.0 } else { v };
    if s == 0.0 {
        return NodeTerms {
            potential: 0.0,
            force: 0.0,
            curvature: 0.0,
        };
    }
    let TransformSample { f, fp, fpp, .. } = TransformSample::at(s);
    let fpm2 = abs_pow(f, p - 2.0);
    NodeTerms {
        potential: fpm2 * f * f,
        force: fpm2 * f * fp,
        curvature: fpm2 * ((p - 1.0) * fp * fp + f * fpp),
    }
}

/// Energy and its derivatives for one exponent, with or without the
/// positive-part nonlinearity `f(v⁺)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    pub params: ExponentParams,
    pub positive_part: bool,
}

/// Scalar sums along the ray `t ↦ t v` used by the Nehari projection.
#[derive(Debug, Clone, Copy)]
pub struct RaySums {
    /// `h^N Σ |f(t v)|^p`
    pub potential: f64,
    /// `h^N Σ |f|^{p−2} f f'(t v) · t v`
    pub work: f64,
    /// `h^N Σ curvature(t v) · (t v)^2`
    pub curvature: f64,
}

impl Functional {
    pub fn new(params: ExponentParams) -> Self {
        Functional {
            params,
            positive_part: false,
        }
    }

    pub fn positive(params: ExponentParams) -> Self {
        Functional {
            params,
            positive_part: true,
        }
    }

    #[inline]
    pub fn terms(&self, v: f64) -> NodeTerms {
        node_terms(v, self.params.p, self.positive_part)
    }

    /// Sums of the nonlinear terms at `t v` in one pass.
    pub fn ray_sums(&self, grid: &DomainGrid, v: &[f64], t: f64) -> RaySums {
        let [a, b, c] = par::sum_vec::<3, _>(v.len(), |i| {
            let s = t * v[i];
            let nt = self.terms(s);
            [nt.potential, nt.force * s, nt.curvature * s * s]
        });
        let w = grid.cell_volume();
        RaySums {
            potential: a * w,
            work: b * w,
            curvature: c * w,
        }
    }

    pub fn energy_values(&self, grid: &DomainGrid, v: &[f64]) -> f64 {
        let pot = par::sum(v.len(), |i| self.terms(v[i]).potential) * grid.cell_volume();
        0.5 * grid.grad_norm_sq(v) - pot / self.params.p
    }

    pub fn gradient_values(&self, grid: &DomainGrid, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.gradient_into(grid, v, &mut out);
        out
    }

    pub fn gradient_into(&self, grid: &DomainGrid, v: &[f64], out: &mut [f64]) {
        grid.laplacian_into(v, out);
        // second pass keeps the stencil loop free of kernel evaluations
        let force: Vec<f64> = {
            let mut f = vec![0.0; v.len()];
            par::fill(&mut f, |i| self.terms(v[i]).force);
            f
        };
        out.iter_mut().zip(&force).for_each(|(o, f)| *o -= f);
    }

    /// Nonlinear force `|f(v)|^{p−2} f(v) f'(v)` per node.
    pub fn force_values(&self, v: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; v.len()];
        par::fill(&mut f, |i| self.terms(v[i]).force);
        f
    }

    /// `(p−1)|f|^{p−2} f'^2 + |f|^{p−2} f f''` per node: the multiplier of the
    /// compact part of the second variation.
    pub fn curvature_values(&self, v: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; v.len()];
        par::fill(&mut q, |i| self.terms(v[i]).curvature);
        q
    }

    pub fn nehari_values(&self, grid: &DomainGrid, v: &[f64]) -> f64 {
        grid.grad_norm_sq(v) - self.ray_sums(grid, v, 1.0).work
    }

    pub fn energy(&self, v: &Field) -> f64 {
        self.energy_values(&v.grid, &v.values)
    }

    pub fn gradient(&self, v: &Field) -> Field {
        Field {
            grid: v.grid.clone(),
            values: self.gradient_values(&v.grid, &v.values),
        }
    }

    /// `G_p(v) = I_p'(v)[v]`.
    pub fn nehari_residual(&self, v: &Field) -> f64 {
        self.nehari_values(&v.grid, &v.values)
    }

    /// Second variation at `v` applied to `w`.
    pub fn hessian_apply(&self, v: &Field, w: &Field) -> Result<Field> {
        if !v.same_grid(w) {
            return Err(Error::GridMismatch);
        }
        let mut out = v.grid.laplacian(&w.values);
        let q = self.curvature_values(&v.values);
        out.iter_mut()
            .zip(q.iter().zip(&w.values))
            .for_each(|(o, (q, w))| *o -= q * w);
        Ok(Field {
            grid: v.grid.clone(),
            values: out,
        })
    }

    /// Gradient-norm, boundary flux and potential terms of the Pohozaev
    /// balance, in that order.
    pub fn pohozaev_terms(&self, v: &Field) -> Result<(f64, f64, f64)> {
        let grid = &*v.grid;
        if !grid.shape_tag.is_star_shaped() {
            return Err(Error::UnsupportedShape {
                op: "pohozaev_residual",
                shape: grid.shape_tag.tag().to_string(),
            });
        }
        let n = grid.dim as f64;
        let grad = 0.5 * (n - 2.0) * grid.grad_norm_sq(&v.values);
        let flux = boundary_flux(grid, &v.values);
        let pot = n / self.params.p * self.ray_sums(grid, &v.values, 1.0).potential;
        Ok((grad, flux, pot))
    }

    /// `(N−2)/2 ‖v‖² + ½∫_∂Ω |∇v|² (x·ν) − (N/p)∫|f(v)|^p`.
    pub fn pohozaev_residual(&self, v: &Field) -> Result<f64> {
        let (g, b, p) = self.pohozaev_terms(v)?;
        Ok(g + b - p)
    }
}

/// `½ Σ_faces |∇v|² (x_face − c)·ν h^{N−1}` on the staircase boundary. The
/// normal derivative is the one-sided difference to the ghost zero; the
/// tangential components are central differences at the interior node.
fn boundary_flux(grid: &DomainGrid, v: &[f64]) -> f64 {
    let h = grid.spacing;
    let c = grid.shape_tag.center();
    let faces = grid.boundary_faces();
    let area = h.powi(grid.dim as i32 - 1);
    let sum = par::sum(faces.len(), |fi| {
        let (i, axis, sign) = faces[fi];
        let nb = grid.neighbors(i);
        let mut g2 = (v[i] / h).powi(2);
        for k in 0..grid.dim {
            if k == axis {
                continue;
            }
            let val = |j: u32| if j == GHOST { 0.0 } else { v[j as usize] };
            let d = (val(nb[2 * k + 1]) - val(nb[2 * k])) / (2.0 * h);
            g2 += d * d;
        }
        let x = grid.coord(i);
        let xn = (x[axis] + sign * 0.5 * h - c[axis]) * sign;
        g2 * xn
    });
    0.5 * sum * area
}

/// `I_p(v)`.
pub fn energy(v: &Field, params: &ExponentParams) -> f64 {
    Functional::new(*params).energy(v)
}

/// Nodal gradient `-Δ_h v − |f(v)|^{p−2} f(v) f'(v)`.
pub fn gradient(v: &Field, params: &ExponentParams) -> Field {
    Functional::new(*params).gradient(v)
}

pub fn nehari_residual(v: &Field, params: &ExponentParams) -> f64 {
    Functional::new(*params).nehari_residual(v)
}

pub fn hessian_apply(v: &Field, w: &Field, params: &ExponentParams) -> Result<Field> {
    Functional::new(*params).hessian_apply(v, w)
}

pub fn energy_positive_part(v: &Field, params: &ExponentParams) -> f64 {
    Functional::positive(*params).energy(v)
}

pub fn gradient_positive_part(v: &Field, params: &ExponentParams) -> Field {
    Functional::positive(*params).gradient(v)
}

pub fn pohozaev_residual(v: &Field, params: &ExponentParams) -> Result<f64> {
    Functional::new(*params).pohozaev_residual(v)
}

/// Whether a shape admits the Pohozaev diagnostic.
pub fn supports_pohozaev(shape: &Shape) -> bool {
    shape.is_star_shaped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, inner, laplacian_apply, DomainSpec};
    use crate::kernel::f_of;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_field(grid: &Arc<DomainGrid>, seed: u64, lo: f64, hi: f64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..grid.n_interior()).map(|_| rng.random_range(lo..hi)).collect();
        Field::new(grid, vals).unwrap()
    }

    #[test]
    fn params_validation() {
        let p = ExponentParams::new(6.0, 3).unwrap();
        assert_eq!(p.two_star, 6.0);
        assert_eq!(p.crit, 12.0);
        assert!(ExponentParams::new(4.0, 3).is_err());
        assert!(ExponentParams::new(12.5, 3).is_err());
        assert!(ExponentParams::new(6.0, 2).is_err());
        let q = ExponentParams::with_cap(10.0, 2, 12.0).unwrap();
        assert!(q.outside_hypotheses);
        let r = ExponentParams::at_fraction(0.99, 3, None).unwrap();
        assert!((r.p - 11.88).abs() < 1e-12);
    }

    #[test]
    fn zero_field() {
        let g = build_domain(&DomainSpec::unit_cube(3, 9)).unwrap();
        let z = Field::zeros(&g);
        let prm = ExponentParams::new(6.0, 3).unwrap();
        assert_eq!(energy(&z, &prm), 0.0);
        assert!(gradient(&z, &prm).values.iter().all(|x| *x == 0.0));
        assert_eq!(nehari_residual(&z, &prm), 0.0);
        assert_eq!(pohozaev_residual(&z, &prm).unwrap(), 0.0);
        let w = random_field(&g, 3, -1.0, 1.0);
        let hw = hessian_apply(&z, &w, &prm).unwrap();
        let lw = laplacian_apply(&w);
        assert!(hw.values.iter().zip(&lw.values).all(|(a, b)| a == b));
    }

    #[test]
    fn single_node_energy_formula() {
        let g = build_domain(&DomainSpec::unit_cube(3, 9)).unwrap();
        let prm = ExponentParams::new(6.0, 3).unwrap();
        let i = g.n_interior() / 2;
        let c = 1.7;
        let mut v = Field::zeros(&g);
        v.values[i] = c;
        let h = g.spacing;
        let hn = h.powi(3);
        let fc = f_of(c).unwrap().f;
        let expected = 0.5 * (6.0 * c * c / (h * h)) * hn - hn * fc.abs().powf(6.0) / 6.0;
        assert!((energy(&v, &prm) - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn energy_decreases_along_negative_gradient() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let prm = ExponentParams::new(6.0, 3).unwrap();
        let v = random_field(&g, 11, 0.0, 3.0);
        let d = gradient(&v, &prm);
        let e0 = energy(&v, &prm);
        let step = 1e-6;
        let moved = Field::new(
            &g,
            v.values.iter().zip(&d.values).map(|(a, b)| a - step * b).collect(),
        )
        .unwrap();
        assert!(energy(&moved, &prm) < e0);
    }

    fn fd_check(grid: &Arc<DomainGrid>, p: f64, seeds: std::ops::Range<u64>) {
        let prm = ExponentParams::new(p, 3).unwrap();
        let fun = Functional::new(prm);
        let hn = grid.cell_volume();
        for seed in seeds {
            let v = random_field(grid, seed, -1.5, 1.5);
            let w = random_field(grid, seed + 1000, -1.0, 1.0);
            let eps = 1e-5;
            let plus = Field::new(grid, v.values.iter().zip(&w.values).map(|(a, b)| a + eps * b).collect()).unwrap();
            let minus = Field::new(grid, v.values.iter().zip(&w.values).map(|(a, b)| a - eps * b).collect()).unwrap();
            let fd = (fun.energy(&plus) - fun.energy(&minus)) / (2.0 * eps);
            let an = inner(&fun.gradient(&v), &w).unwrap() * hn;
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-12), "p={p} seed={seed}: {fd} vs {an}");

            let gp = fun.gradient(&plus);
            let gm = fun.gradient(&minus);
            let hw = fun.hessian_apply(&v, &w).unwrap();
            let num: f64 = gp.values.iter().zip(&gm.values).zip(&hw.values)
                .map(|((a, b), h)| ((a - b) / (2.0 * eps) - h).powi(2)).sum();
            let den: f64 = hw.values.iter().map(|h| h * h).sum();
            assert!((num / den).sqrt() <= 1e-5, "hessian fd p={p} seed={seed}: {}", (num / den).sqrt());
        }
    }

    #[test]
    fn finite_difference_checks() {
        let cube = build_domain(&DomainSpec::unit_cube(3, 9)).unwrap();
        fd_check(&cube, 6.0, 0..3);
        fd_check(&cube, 10.0, 3..6);
    }

    #[test]
    fn hessian_is_symmetric() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let prm = ExponentParams::new(8.0, 3).unwrap();
        for seed in 0..4 {
            let v = random_field(&g, seed, -2.0, 2.0);
            let w = random_field(&g, seed + 10, -1.0, 1.0);
            let u = random_field(&g, seed + 20, -1.0, 1.0);
            let a = inner(&hessian_apply(&v, &w, &prm).unwrap(), &u).unwrap();
            let b = inner(&w, &hessian_apply(&v, &u, &prm).unwrap()).unwrap();
            assert!((a - b).abs() <= 1e-11 * a.abs().max(b.abs()));
        }
    }

    #[test]
    fn positive_part_variants() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let prm = ExponentParams::new(6.0, 3).unwrap();
        let neg = random_field(&g, 5, -2.0, 0.0);
        let half_norm = 0.5 * g.grad_norm_sq(&neg.values);
        assert_eq!(energy_positive_part(&neg, &prm), half_norm);
        let gp = gradient_positive_part(&neg, &prm);
        assert_eq!(gp.values, laplacian_apply(&neg).values);
        let pos = random_field(&g, 6, 0.0, 2.0);
        assert_eq!(energy_positive_part(&pos, &prm), energy(&pos, &prm));
        assert_eq!(gradient_positive_part(&pos, &prm).values, gradient(&pos, &prm).values);

        // directional derivative of the positive-part energy on a mixed-sign field
        let v = random_field(&g, 7, -1.5, 1.5);
        let w = random_field(&g, 8, -1.0, 1.0);
        let fun = Functional::positive(prm);
        let eps = 1e-6;
        let shift = |s: f64| Field::new(&g, v.values.iter().zip(&w.values).map(|(a, b)| a + s * b).collect()).unwrap();
        let fd = (fun.energy(&shift(eps)) - fun.energy(&shift(-eps))) / (2.0 * eps);
        let an = inner(&fun.gradient(&v), &w).unwrap() * g.cell_volume();
        assert!((fd - an).abs() <= 1e-6 * an.abs());
    }

    #[test]
    fn nehari_sign_for_small_multiples() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let prm = ExponentParams::new(6.0, 3).unwrap();
        for seed in 0..5 {
            let v = random_field(&g, seed, -1.0, 1.0).scaled(1e-3);
            assert!(nehari_residual(&v, &prm) > 0.0);
        }
    }

    #[test]
    fn pohozaev_rejects_annulus_and_scales() {
        let ann = build_domain(&DomainSpec::annulus(3, 0.2, 0.5, 12)).unwrap();
        let prm = ExponentParams::new(6.0, 3).unwrap();
        assert!(matches!(
            pohozaev_residual(&Field::zeros(&ann), &prm),
            Err(Error::UnsupportedShape { .. })
        ));

        let ball = build_domain(&DomainSpec::ball(3, 0.5, 12)).unwrap();
        let fun = Functional::new(prm);
        let v = random_field(&ball, 9, 0.0, 2.0);
        let (g1, b1, _) = fun.pohozaev_terms(&v).unwrap();
        for lam in [0.5, 3.0] {
            let (g, b, _) = fun.pohozaev_terms(&v.scaled(lam)).unwrap();
            assert!((g - lam * lam * g1).abs() <= 1e-12 * g.abs());
            assert!((b - lam * lam * b1).abs() <= 1e-12 * b.abs());
        }
        // staircase faces integrate x·ν to N·volume
        let faces = ball.boundary_faces();
        let c = ball.shape_tag.center();
        let h = ball.spacing;
        let s: f64 = faces.iter().map(|&(i, k, sg)| (ball.coord(i)[k] + sg * 0.5 * h - c[k]) * sg).sum::<f64>() * h * h;
        let vol = ball.n_interior() as f64 * ball.cell_volume();
        assert!((s - 3.0 * vol).abs() < 1e-9 * vol);
    }

    #[test]
    fn util_chain_holds_nodewise() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let v = random_field(&g, 2, -50.0, 50.0);
        for &x in &v.values {
            let s = f_of(x).unwrap();
            let mid = s.f * s.fp * x;
            assert!(0.5 * s.f * s.f <= mid * (1.0 + 1e-14) && mid <= s.f * s.f * (1.0 + 1e-14));
        }
    }
}
