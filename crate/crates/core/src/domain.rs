//! Masked uniform Cartesian grids in two or three dimensions.
//!
//! A grid covers a bounding box with `n_k` nodes per axis at a single spacing
//! `h`. The mask marks nodes strictly inside Ω; every box face node is outside,
//! so each interior node has all `2N` stencil neighbours in the box. Values at
//! exterior nodes are the Dirichlet zero and are never stored: a [`Field`]
//! holds one value per interior node.
//!
//! Boundary treatment is staircase (node-centre membership), so quadratures
//! carry an `O(h)` boundary error.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Marker for a neighbour slot that points at an exterior (ghost) node.
pub const GHOST: u32 = u32::MAX;

static NEXT_GRID_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rectangle {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        center: Vec<f64>,
        r_inner: f64,
        r_outer: f64,
    },
    RectangleWithHole {
        lo: Vec<f64>,
        hi: Vec<f64>,
        hole_lo: Vec<f64>,
        hole_hi: Vec<f64>,
    },
}

impl Shape {
    pub fn tag(&self) -> &'static str {
        match self {
            Shape::Rectangle { .. } => "rectangle",
            Shape::Ball { .. } => "ball",
            Shape::Annulus { .. } => "annulus",
            Shape::RectangleWithHole { .. } => "rectangle_with_hole",
        }
    }

    /// Ljusternik–Schnirelmann category of the (closure of the) shape.
    pub fn category(&self) -> usize {
        match self {
            Shape::Rectangle { .. } | Shape::Ball { .. } => 1,
            Shape::Annulus { .. } | Shape::RectangleWithHole { .. } => 2,
        }
    }

    /// Poincaré polynomial evaluated at 1 (sum of Betti numbers).
    pub fn poincare_at_one(&self) -> usize {
        self.category()
    }

    /// Star-shaped with respect to the box centre.
    pub fn is_star_shaped(&self) -> bool {
        matches!(self, Shape::Rectangle { .. } | Shape::Ball { .. })
    }

    /// Symmetry centre used for reflections and Pohozaev weights.
    pub fn center(&self) -> Vec<f64> {
        match self {
            Shape::Ball { center, .. } | Shape::Annulus { center, .. } => center.clone(),
            Shape::Rectangle { lo, hi } | Shape::RectangleWithHole { lo, hi, .. } => {
                lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect()
            }
        }
    }
}

/// Shape, dimension and nodes per axis (along the longest axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dim: usize,
    pub shape: Shape,
    pub resolution: usize,
}

impl DomainSpec {
    pub fn ball(dim: usize, radius: f64, resolution: usize) -> Self {
        DomainSpec {
            dim,
            shape: Shape::Ball {
                center: vec![0.0; dim],
                radius,
            },
            resolution,
        }
    }

    pub fn annulus(dim: usize, r_inner: f64, r_outer: f64, resolution: usize) -> Self {
        DomainSpec {
            dim,
            shape: Shape::Annulus {
                center: vec![0.0; dim],
                r_inner,
                r_outer,
            },
            resolution,
        }
    }

    pub fn unit_cube(dim: usize, resolution: usize) -> Self {
        DomainSpec {
            dim,
            shape: Shape::Rectangle {
                lo: vec![0.0; dim],
                hi: vec![1.0; dim],
            },
            resolution,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DomainGrid {
    uid: u64,
    pub dim: usize,
    /// Nodes per axis; unused axes have length 1.
    pub shape: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
    /// One entry per box node, x fastest.
    pub mask: Vec<bool>,
    pub shape_tag: Shape,
    interior: Vec<usize>,
    node_to_interior: Vec<u32>,
    neighbors: Vec<[u32; 6]>,
    coords: Vec<[f64; 3]>,
}

impl PartialEq for DomainGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.shape == other.shape
            && self.spacing == other.spacing
            && self.origin == other.origin
            && self.mask == other.mask
    }
}

fn check_len(name: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{name} must have {dim} finite components"
        )));
    }
    Ok(())
}

/// Builds the masked grid for a shape description.
pub fn build_domain(spec: &DomainSpec) -> Result<Arc<DomainGrid>> {
    DomainGrid::new(spec).map(Arc::new)
}

impl DomainGrid {
    pub fn new(spec: &DomainSpec) -> Result<Self> {
        let dim = spec.dim;
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidInput(format!("dimension must be 2 or 3, got {dim}")));
        }
        if spec.resolution < 8 {
            return Err(Error::InvalidInput(format!(
                "resolution must be at least 8, got {}",
                spec.resolution
            )));
        }
        let n = spec.resolution;
        let (lo, hi): (Vec<f64>, Vec<f64>) = match &spec.shape {
            Shape::Ball { center, radius } => {
                check_len("center", center, dim)?;
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidInput("ball radius must be positive".into()));
                }
                (
                    center.iter().map(|c| c - radius).collect(),
                    center.iter().map(|c| c + radius).collect(),
                )
            }
            Shape::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                check_len("center", center, dim)?;
                if !(*r_inner > 0.0 && r_outer > r_inner && r_outer.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "annulus radii must satisfy 0 < r_inner < r_outer (got {r_inner}, {r_outer})"
                    )));
                }
                (
                    center.iter().map(|c| c - r_outer).collect(),
                    center.iter().map(|c| c + r_outer).collect(),
                )
            }
            Shape::Rectangle { lo, hi } => {
                check_len("lo", lo, dim)?;
                check_len("hi", hi, dim)?;
                if lo.iter().zip(hi).any(|(a, b)| b <= a) {
                    return Err(Error::InvalidInput("rectangle needs lo < hi on every axis".into()));
                }
                (lo.clone(), hi.clone())
            }
            Shape::RectangleWithHole {
                lo,
                hi,
                hole_lo,
                hole_hi,
            } => {
                for (name, v) in [("lo", lo), ("hi", hi), ("hole_lo", hole_lo), ("hole_hi", hole_hi)] {
                    check_len(name, v, dim)?;
                }
                let nested = (0..dim)
                    .all(|k| lo[k] < hole_lo[k] && hole_lo[k] < hole_hi[k] && hole_hi[k] < hi[k]);
                if !nested {
                    return Err(Error::InvalidInput(
                        "hole must lie strictly inside the rectangle".into(),
                    ));
                }
                (lo.clone(), hi.clone())
            }
        };

        let extent_max = (0..dim).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let h = extent_max / (n - 1) as f64;
        let mut shape = [1usize; 3];
        let mut origin = [0.0; 3];
        for k in 0..dim {
            let nk = ((hi[k] - lo[k]) / h).round() as usize + 1;
            if nk < 3 {
                return Err(Error::InvalidInput(format!("axis {k} has fewer than 3 nodes")));
            }
            shape[k] = nk;
            // centre the node lattice on the box so reflections are exact
            let span = (nk - 1) as f64 * h;
            origin[k] = 0.5 * (lo[k] + hi[k]) - 0.5 * span;
        }

        let total = shape[0] * shape[1] * shape[2];
        let eps = 1e-9 * h;
        let mut mask = vec![false; total];
        for (idx, m) in mask.iter_mut().enumerate() {
            let ijk = unravel(idx, &shape);
            let on_face = (0..dim).any(|k| ijk[k] == 0 || ijk[k] == shape[k] - 1);
            if on_face {
                continue;
            }
            let x = node_coord(&origin, h, &ijk);
            *m = match &spec.shape {
                Shape::Ball { center, radius } => dist(&x, center, dim) < radius - eps,
                Shape::Annulus {
                    center,
                    r_inner,
                    r_outer,
                } => {
                    let r = dist(&x, center, dim);
                    r > r_inner + eps && r < r_outer - eps
                }
                Shape::Rectangle { lo, hi } => (0..dim).all(|k| x[k] > lo[k] + eps && x[k] < hi[k] - eps),
                Shape::RectangleWithHole {
                    lo,
                    hi,
                    hole_lo,
                    hole_hi,
                } => {
                    let inside = (0..dim).all(|k| x[k] > lo[k] + eps && x[k] < hi[k] - eps);
                    let in_hole = (0..dim).all(|k| x[k] >= hole_lo[k] - eps && x[k] <= hole_hi[k] + eps);
                    inside && !in_hole
                }
            };
        }

        let grid = Self::from_mask(dim, shape, h, origin, mask, spec.shape.clone())?;
        if matches!(spec.shape, Shape::Annulus { .. } | Shape::RectangleWithHole { .. })
            && grid.component_count() != 1
        {
            return Err(Error::InvalidInput(
                "mask is disconnected at this resolution; increase resolution".into(),
            ));
        }
        Ok(grid)
    }

    /// Assembles index tables for an explicit mask. Box faces must be exterior.
    pub fn from_mask(
        dim: usize,
        shape: [usize; 3],
        spacing: f64,
        origin: [f64; 3],
        mask: Vec<bool>,
        shape_tag: Shape,
    ) -> Result<Self> {
        let total = shape[0] * shape[1] * shape[2];
        if mask.len() != total {
            return Err(Error::InvalidInput("mask length does not match shape".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidInput("spacing must be positive".into()));
        }
        let mut interior = Vec::new();
        let mut node_to_interior = vec![GHOST; total];
        for (idx, &m) in mask.iter().enumerate() {
            if m {
                let ijk = unravel(idx, &shape);
                if (0..dim).any(|k| ijk[k] == 0 || ijk[k] == shape[k] - 1) {
                    return Err(Error::InvalidInput(
                        "interior node on the box face: mask needs a ghost layer".into(),
                    ));
                }
                node_to_interior[idx] = interior.len() as u32;
                interior.push(idx);
            }
        }
        if interior.len() < 8 {
            return Err(Error::InvalidInput(format!(
                "only {} interior nodes; at least 8 are required",
                interior.len()
            )));
        }
        let strides = [1, shape[0], shape[0] * shape[1]];
        let neighbors = interior
            .iter()
            .map(|&idx| {
                let mut nb = [GHOST; 6];
                for k in 0..dim {
                    nb[2 * k] = node_to_interior[idx - strides[k]];
                    nb[2 * k + 1] = node_to_interior[idx + strides[k]];
                }
                nb
            })
            .collect();
        let coords = interior
            .iter()
            .map(|&idx| node_coord(&origin, spacing, &unravel(idx, &shape)))
            .collect();
        Ok(DomainGrid {
            uid: NEXT_GRID_ID.fetch_add(1, Ordering::Relaxed),
            dim,
            shape,
            spacing,
            origin,
            mask,
            shape_tag,
            interior,
            node_to_interior,
            neighbors,
            coords,
        })
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    /// Box node index of each interior node.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Interior index of a box node, if it is interior.
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        let i = *self.node_to_interior.get(node)?;
        (i != GHOST).then_some(i as usize)
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i][..2 * self.dim]
    }

    pub fn coord(&self, i: usize) -> &[f64] {
        &self.coords[i][..self.dim]
    }

    /// `h^N`, the midpoint quadrature weight.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Centre of the bounding box.
    pub fn box_center(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|k| self.origin[k] + 0.5 * (self.shape[k] - 1) as f64 * self.spacing)
            .collect()
    }

    /// `out = -Δ_h v` with zero ghost values (positive definite sign).
    pub fn laplacian_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n_interior());
        let inv_h2 = 1.0 / (self.spacing * self.spacing);
        let diag = 2.0 * self.dim as f64;
        let d2 = 2 * self.dim;
        par::fill(out, |i| {
            let mut acc = diag * v[i];
            for &j in &self.neighbors[i][..d2] {
                if j != GHOST {
                    acc -= v[j as usize];
                }
            }
            acc * inv_h2
        });
    }

    pub fn laplacian(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.laplacian_into(v, &mut out);
        out
    }

    /// `∫|∇v|²` from forward differences over every mask-adjacent pair,
    /// ghost values zero.
    pub fn grad_norm_sq(&self, v: &[f64]) -> f64 {
        let d = self.dim;
        let s = par::sum(v.len(), |i| {
            let nb = &self.neighbors[i];
            let mut acc = 0.0;
            for k in 0..d {
                // forward pair (i, i + e_k)
                let fwd = nb[2 * k + 1];
                let diff = if fwd == GHOST { -v[i] } else { v[fwd as usize] - v[i] };
                acc += diff * diff;
                // backward pair with a ghost: counted here since no interior node owns it
                if nb[2 * k] == GHOST {
                    acc += v[i] * v[i];
                }
            }
            acc
        });
        s * self.spacing.powi(d as i32 - 2)
    }

    /// Nodal density of `|∇v|²`: each pair's squared difference quotient is
    /// split evenly between its endpoints, and ghost halves go to the interior
    /// endpoint. Integrates to [`Self::grad_norm_sq`].
    pub fn gradient_density(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let inv_h2 = 1.0 / (self.spacing * self.spacing);
        let mut out = vec![0.0; v.len()];
        par::fill(&mut out, |i| {
            let nb = &self.neighbors[i];
            let mut acc = 0.0;
            for &j in &nb[..2 * d] {
                if j == GHOST {
                    acc += v[i] * v[i];
                } else {
                    let diff = v[j as usize] - v[i];
                    acc += 0.5 * diff * diff;
                }
            }
            acc * inv_h2
        });
        out
    }

    /// Midpoint quadrature `h^N Σ g`.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        par::sum(g.len(), |i| g[i]) * self.cell_volume()
    }

    /// `h^N Σ x g`.
    pub fn moment(&self, g: &[f64]) -> Vec<f64> {
        let m = par::sum_vec::<3, _>(g.len(), |i| {
            let x = &self.coords[i];
            [x[0] * g[i], x[1] * g[i], x[2] * g[i]]
        });
        m[..self.dim].iter().map(|x| x * self.cell_volume()).collect()
    }

    /// `∫ x|∇v|² / ∫|∇v|²`, or `None` for `v = 0`.
    pub fn barycenter(&self, v: &[f64]) -> Option<Vec<f64>> {
        let dens = self.gradient_density(v);
        let mass = self.integrate(&dens);
        if mass <= 0.0 {
            return None;
        }
        Some(self.moment(&dens).into_iter().map(|m| m / mass).collect())
    }

    /// `(∫|x − β|²|∇v|² / ∫|∇v|²)^{1/2}` about the barycenter.
    pub fn gradient_width(&self, v: &[f64]) -> Option<f64> {
        let dens = self.gradient_density(v);
        let mass = self.integrate(&dens);
        if mass <= 0.0 {
            return None;
        }
        let beta: Vec<f64> = self.moment(&dens).into_iter().map(|m| m / mass).collect();
        let second = par::sum(v.len(), |i| {
            let x = self.coord(i);
            let r2: f64 = x.iter().zip(&beta).map(|(a, b)| (a - b) * (a - b)).sum();
            r2 * dens[i]
        }) * self.cell_volume();
        Some((second / mass).sqrt())
    }

    /// Interior-index permutation for the reflection `i_k -> n_k - 1 - i_k`,
    /// or `None` if the mask is not invariant under it.
    pub fn reflection_map(&self, axis: usize) -> Option<Vec<usize>> {
        if axis >= self.dim {
            return None;
        }
        let mut map = Vec::with_capacity(self.n_interior());
        for &idx in &self.interior {
            let mut ijk = unravel(idx, &self.shape);
            ijk[axis] = self.shape[axis] - 1 - ijk[axis];
            let j = self.node_to_interior[ravel(&ijk, &self.shape)];
            if j == GHOST {
                return None;
            }
            map.push(j as usize);
        }
        Some(map)
    }

    /// Permutation for swapping two axes (diagonal reflection).
    pub fn swap_map(&self, a: usize, b: usize) -> Option<Vec<usize>> {
        if a >= self.dim || b >= self.dim || self.shape[a] != self.shape[b] {
            return None;
        }
        let mut map = Vec::with_capacity(self.n_interior());
        for &idx in &self.interior {
            let mut ijk = unravel(idx, &self.shape);
            ijk.swap(a, b);
            let j = self.node_to_interior[ravel(&ijk, &self.shape)];
            if j == GHOST {
                return None;
            }
            map.push(j as usize);
        }
        Some(map)
    }

    /// Interior permutations for every signed axis permutation that maps the
    /// mask onto itself (the identity first).
    pub fn symmetry_group(&self) -> Vec<Vec<usize>> {
        let d = self.dim;
        let mut perms: Vec<Vec<usize>> = vec![(0..d).collect()];
        // all permutations of the active axes, by insertion
        for _ in 1..d {
            let mut next = Vec::new();
            for pm in &perms {
                for a in 0..d {
                    for b in (a + 1)..d {
                        let mut q = pm.clone();
                        q.swap(a, b);
                        if !next.contains(&q) && !perms.contains(&q) {
                            next.push(q);
                        }
                    }
                }
            }
            perms.extend(next);
        }
        let mut maps = Vec::new();
        for pm in &perms {
            if (0..d).any(|k| self.shape[pm[k]] != self.shape[k]) {
                continue;
            }
            'flips: for flips in 0..(1usize << d) {
                let mut map = Vec::with_capacity(self.n_interior());
                for &idx in &self.interior {
                    let src = unravel(idx, &self.shape);
                    let mut ijk = [0usize; 3];
                    for k in 0..d {
                        let v = src[pm[k]];
                        ijk[k] = if flips >> k & 1 == 1 { self.shape[k] - 1 - v } else { v };
                    }
                    let j = self.node_to_interior[ravel(&ijk, &self.shape)];
                    if j == GHOST {
                        continue 'flips;
                    }
                    map.push(j as usize);
                }
                if !maps.contains(&map) {
                    maps.push(map);
                }
            }
        }
        maps
    }

    /// Average of `v` over [`Self::symmetry_group`].
    pub fn symmetrize(&self, group: &[Vec<usize>], v: &mut [f64]) {
        if group.len() <= 1 {
            return;
        }
        let inv = 1.0 / group.len() as f64;
        let src = v.to_vec();
        par::fill(v, |i| group.iter().map(|m| src[m[i]]).sum::<f64>() * inv);
    }

    /// Number of 2N-connected components of the mask.
    pub fn component_count(&self) -> usize {
        let n = self.n_interior();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            queue.push_back(s);
            while let Some(i) = queue.pop_front() {
                for &j in self.neighbors(i) {
                    if j != GHOST && !seen[j as usize] {
                        seen[j as usize] = true;
                        queue.push_back(j as usize);
                    }
                }
            }
        }
        count
    }

    /// Euler characteristic of a 2-D mask: foreground components (4-connected)
    /// minus holes (bounded 8-connected components of the complement).
    pub fn euler_characteristic_2d(&self) -> Option<i64> {
        if self.dim != 2 {
            return None;
        }
        let (nx, ny) = (self.shape[0], self.shape[1]);
        let mut seen = vec![false; self.mask.len()];
        let mut background = 0i64;
        let mut queue = VecDeque::new();
        for s in 0..self.mask.len() {
            if self.mask[s] || seen[s] {
                continue;
            }
            background += 1;
            seen[s] = true;
            queue.push_back(s);
            while let Some(idx) = queue.pop_front() {
                let (i, j) = ((idx % nx) as i64, (idx / nx) as i64);
                for di in -1..=1 {
                    for dj in -1..=1 {
                        let (a, b) = (i + di, j + dj);
                        if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                            continue;
                        }
                        let t = a as usize + nx * b as usize;
                        if !self.mask[t] && !seen[t] {
                            seen[t] = true;
                            queue.push_back(t);
                        }
                    }
                }
            }
        }
        Some(self.component_count() as i64 - (background - 1))
    }

    /// Distance from a point to the nearest interior node centre.
    pub fn distance_to_domain(&self, x: &[f64]) -> f64 {
        self.coords
            .iter()
            .map(|c| dist(c, x, self.dim))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether every node within distance `r` of `center` is interior and the
    /// ball reaches no box face.
    pub fn contains_ball(&self, center: &[f64], r: f64) -> bool {
        if center.len() != self.dim {
            return false;
        }
        let h = self.spacing;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..self.dim {
            let top = (self.shape[k] - 1) as f64;
            let a = (center[k] - r - self.origin[k]) / h;
            let b = (center[k] + r - self.origin[k]) / h;
            if a <= 0.0 || b >= top {
                return false;
            }
            lo[k] = a.floor() as usize;
            hi[k] = (b.ceil() as usize).min(self.shape[k] - 1);
        }
        let mut ijk = [0usize; 3];
        for k2 in lo[2]..=hi[2] {
            for k1 in lo[1]..=hi[1] {
                for k0 in lo[0]..=hi[0] {
                    ijk[0] = k0;
                    ijk[1] = k1;
                    ijk[2] = k2;
                    let x = node_coord(&self.origin, h, &ijk);
                    if dist(&x, center, self.dim) <= r && !self.mask[ravel(&ijk, &self.shape)] {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Exterior faces of the staircase boundary: (interior index, axis, ±1).
    pub fn boundary_faces(&self) -> Vec<(usize, usize, f64)> {
        let mut faces = Vec::new();
        for (i, nb) in self.neighbors.iter().enumerate() {
            for k in 0..self.dim {
                if nb[2 * k] == GHOST {
                    faces.push((i, k, -1.0));
                }
                if nb[2 * k + 1] == GHOST {
                    faces.push((i, k, 1.0));
                }
            }
        }
        faces
    }

    /// Run-length encoding of the mask, starting with a run of `false`.
    pub fn mask_rle(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &m in &self.mask {
            if m == current {
                len += 1;
            } else {
                runs.push(len);
                current = m;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }
}

fn unravel(idx: usize, shape: &[usize; 3]) -> [usize; 3] {
    [idx % shape[0], (idx / shape[0]) % shape[1], idx / (shape[0] * shape[1])]
}

fn ravel(ijk: &[usize; 3], shape: &[usize; 3]) -> usize {
    ijk[0] + shape[0] * (ijk[1] + shape[1] * ijk[2])
}

fn node_coord(origin: &[f64; 3], h: f64, ijk: &[usize; 3]) -> [f64; 3] {
    [
        origin[0] + ijk[0] as f64 * h,
        origin[1] + ijk[1] as f64 * h,
        origin[2] + ijk[2] as f64 * h,
    ]
}

fn dist(a: &[f64], b: &[f64], dim: usize) -> f64 {
    (0..dim).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// Nodal values of `v` on the interior of a grid; exterior values are zero.
#[derive(Debug, Clone)]
pub struct Field {
    pub grid: Arc<DomainGrid>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<DomainGrid>) -> Self {
        Field {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.n_interior()],
        }
    }

    pub fn new(grid: &Arc<DomainGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_interior() {
            return Err(Error::InvalidInput(format!(
                "field has {} values, grid has {} interior nodes",
                values.len(),
                grid.n_interior()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        Ok(Field {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub fn from_fn(grid: &Arc<DomainGrid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.n_interior()).map(|i| f(grid.coord(i))).collect();
        Field {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `v ∘ reflection` for a permutation from [`DomainGrid::reflection_map`].
    pub fn permuted(&self, map: &[usize]) -> Field {
        Field {
            grid: Arc::clone(&self.grid),
            values: map.iter().map(|&j| self.values[j]).collect(),
        }
    }
}

/// Plain nodal inner product `Σ a b` (no quadrature weight).
pub fn inner(a: &Field, b: &Field) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    Ok(par::dot(&a.values, &b.values))
}

pub fn laplacian_apply(v: &Field) -> Field {
    Field {
        grid: Arc::clone(&v.grid),
        values: v.grid.laplacian(&v.values),
    }
}

pub fn grad_norm_sq(v: &Field) -> f64 {
    v.grid.grad_norm_sq(&v.values)
}

pub fn integrate(g: &Field) -> f64 {
    g.grid.integrate(&g.values)
}

pub fn moment(g: &Field) -> Vec<f64> {
    g.grid.moment(&g.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Arc<DomainGrid>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..grid.n_interior()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::new(grid, vals).unwrap()
    }

    #[test]
    fn square_interior_count() {
        let g = build_domain(&DomainSpec::unit_cube(2, 9)).unwrap();
        assert_eq!(g.n_interior(), 49);
        assert_eq!(g.spacing, 0.125);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(build_domain(&DomainSpec::unit_cube(2, 7)).is_err());
        assert!(build_domain(&DomainSpec::annulus(2, 0.5, 0.25, 20)).is_err());
        assert!(build_domain(&DomainSpec::ball(4, 0.5, 10)).is_err());
        assert!(build_domain(&DomainSpec::ball(3, -1.0, 10)).is_err());
    }

    #[test]
    fn ball_mask_is_reflection_symmetric() {
        let spec = DomainSpec {
            dim: 3,
            shape: Shape::Ball {
                center: vec![0.5; 3],
                radius: 0.5,
            },
            resolution: 12,
        };
        let g = build_domain(&spec).unwrap();
        for axis in 0..3 {
            assert!(g.reflection_map(axis).is_some());
        }
        assert!(g.swap_map(0, 1).is_some());
        assert!(g.n_interior() >= 8);
    }

    #[test]
    fn annulus_has_one_hole() {
        let g = build_domain(&DomainSpec::annulus(2, 0.25, 0.5, 33)).unwrap();
        assert_eq!(g.component_count(), 1);
        assert_eq!(g.euler_characteristic_2d(), Some(0));
        let disk = build_domain(&DomainSpec::ball(2, 0.5, 33)).unwrap();
        assert_eq!(disk.euler_characteristic_2d(), Some(1));
    }

    #[test]
    fn laplacian_of_quadratic() {
        let g = build_domain(&DomainSpec::unit_cube(2, 11)).unwrap();
        let v = Field::from_fn(&g, |x| x[0] * (1.0 - x[0]));
        let lv = laplacian_apply(&v);
        // the profile vanishes on x = 0, 1 but not on y = 0, 1: check rows away from those
        for i in 0..g.n_interior() {
            let x = g.coord(i);
            if x[1] > 0.15 && x[1] < 0.85 {
                assert!((lv.values[i] - 2.0).abs() < 1e-10, "{}", lv.values[i]);
            }
        }
        let zero = laplacian_apply(&Field::zeros(&g));
        assert!(zero.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_is_symmetric_and_local() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 12)).unwrap();
        let v = random_field(&g, 1);
        let w = random_field(&g, 2);
        let a = inner(&laplacian_apply(&v), &w).unwrap();
        let b = inner(&v, &laplacian_apply(&w)).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));

        let center = (0..g.n_interior())
            .find(|&i| g.neighbors(i).iter().all(|&j| j != GHOST))
            .unwrap();
        let mut e = Field::zeros(&g);
        e.values[center] = 1.0;
        let le = laplacian_apply(&e);
        assert_eq!(le.values.iter().filter(|x| **x != 0.0).count(), 2 * g.dim + 1);
    }

    #[test]
    fn summation_by_parts() {
        let g = build_domain(&DomainSpec::annulus(3, 0.2, 0.5, 12)).unwrap();
        for seed in 0..10 {
            let v = random_field(&g, seed);
            let a = grad_norm_sq(&v);
            let b = inner(&v, &laplacian_apply(&v)).unwrap() * g.cell_volume();
            assert!((a - b).abs() <= 1e-10 * a, "{a} vs {b}");
            let dens = g.gradient_density(&v.values);
            assert!((g.integrate(&dens) - a).abs() <= 1e-10 * a);
        }
        assert_eq!(grad_norm_sq(&Field::zeros(&g)), 0.0);
    }

    #[test]
    fn volume_of_unit_square() {
        let g = build_domain(&DomainSpec::unit_cube(2, 41)).unwrap();
        let one = Field::from_fn(&g, |_| 1.0);
        let vol = integrate(&one);
        assert!((vol - 1.0).abs() < 3.0 * g.spacing, "{vol}");
    }

    #[test]
    fn discrete_poincare_positivity() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        // smallest eigenvalue of the box Dirichlet stencil bounds the masked one below
        let h = g.spacing;
        let lam1: f64 = (0..3)
            .map(|k| {
                let n = g.shape[k] as f64 - 1.0;
                4.0 / (h * h) * (std::f64::consts::PI / (2.0 * n)).sin().powi(2)
            })
            .sum();
        for seed in 0..5 {
            let v = random_field(&g, seed);
            let l2 = g.integrate(&v.values.iter().map(|x| x * x).collect::<Vec<_>>());
            assert!(grad_norm_sq(&v) >= lam1 * l2);
        }
    }

    #[test]
    fn laplacian_commutes_with_reflections() {
        let g = build_domain(&DomainSpec::annulus(3, 0.2, 0.5, 12)).unwrap();
        let v = random_field(&g, 7);
        for axis in 0..3 {
            let map = g.reflection_map(axis).unwrap();
            let a = laplacian_apply(&v.permuted(&map));
            let b = laplacian_apply(&v).permuted(&map);
            assert!(a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }

    #[test]
    fn barycenter_of_symmetric_field() {
        let g = build_domain(&DomainSpec::ball(3, 0.5, 12)).unwrap();
        let v = Field::from_fn(&g, |x| 0.25 - x.iter().map(|a| a * a).sum::<f64>());
        let b = g.barycenter(&v.values).unwrap();
        assert!(b.iter().all(|x| x.abs() < 1e-12));
        assert!(g.barycenter(&vec![0.0; g.n_interior()]).is_none());
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = build_domain(&DomainSpec::ball(3, 0.5, 10)).unwrap();
        let b = build_domain(&DomainSpec::ball(3, 0.5, 12)).unwrap();
        assert!(matches!(
            inner(&Field::zeros(&a), &Field::zeros(&b)),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn symmetry_group_sizes() {
        let cube = build_domain(&DomainSpec::unit_cube(3, 9)).unwrap();
        assert_eq!(cube.symmetry_group().len(), 48);
        let disk = build_domain(&DomainSpec::ball(2, 0.5, 12)).unwrap();
        let group = disk.symmetry_group();
        assert_eq!(group.len(), 8);
        let mut v: Vec<f64> = (0..disk.n_interior()).map(|i| (i as f64).sin()).collect();
        disk.symmetrize(&group, &mut v);
        for m in &group {
            assert!(m.iter().enumerate().all(|(i, &j)| (v[i] - v[j]).abs() < 1e-15));
        }
    }

    #[test]
    fn contains_ball_checks_mask() {
        let g = build_domain(&DomainSpec::annulus(3, 0.2, 0.5, 20)).unwrap();
        assert!(g.contains_ball(&[0.35, 0.0, 0.0], 0.1));
        assert!(!g.contains_ball(&[0.0, 0.0, 0.0], 0.1));
        assert!(!g.contains_ball(&[0.45, 0.0, 0.0], 0.1));
    }
}
