//! Linear-elastic 3D frame analysis of partially printed wire-frames.
//!
//! Struts are Euler–Bernoulli beam elements with a solid circular section.
//! Units: millimeters, newtons, megapascals.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Height band above the lowest node whose nodes count as grounded, mm.
pub const GROUND_TOLERANCE: f64 = 0.5;

const DOF: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Young's modulus, Pa.
    pub youngs_modulus: f64,
    pub poisson: f64,
    /// kg/m³.
    pub density: f64,
    /// Strut diameter, mm.
    pub diameter: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            youngs_modulus: 3.84e9,
            poisson: 0.35,
            density: 1040.0,
            diameter: 1.0,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let ok = self.youngs_modulus > 0.0
            && self.poisson > 0.0
            && self.poisson < 0.5
            && self.density >= 0.0
            && self.diameter > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid material {self:?}")));
        }
        Ok(())
    }

    /// Young's modulus in N/mm².
    pub fn e_mpa(&self) -> f64 {
        self.youngs_modulus * 1e-6
    }

    pub fn shear_mpa(&self) -> f64 {
        self.e_mpa() / (2.0 * (1.0 + self.poisson))
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter.powi(2) / 4.0
    }

    pub fn second_moment(&self) -> f64 {
        std::f64::consts::PI * self.diameter.powi(4) / 64.0
    }

    pub fn polar_moment(&self) -> f64 {
        std::f64::consts::PI * self.diameter.powi(4) / 32.0
    }
}

/// Nodes within `GROUND_TOLERANCE` of the lowest node.
pub fn grounded_nodes(graph: &Graph) -> Vec<bool> {
    let zmin = graph
        .nodes()
        .iter()
        .map(|n| n.position[2])
        .fold(f64::INFINITY, f64::min);
    graph
        .nodes()
        .iter()
        .map(|n| n.position[2] <= zmin + GROUND_TOLERANCE)
        .collect()
}

/// The printed part of a wire-frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameModel {
    pub positions: Vec<[f64; 3]>,
    pub struts: Vec<(NodeId, NodeId)>,
    pub grounded: Vec<bool>,
    pub material: Material,
    /// Gravitational acceleration along -z, m/s².
    pub gravity: f64,
    /// Additional point forces, N.
    pub point_loads: Vec<(NodeId, [f64; 3])>,
}

impl FrameModel {
    pub fn new(positions: Vec<[f64; 3]>, grounded: Vec<bool>, material: Material) -> Self {
        FrameModel {
            positions,
            struts: Vec::new(),
            grounded,
            material,
            gravity: STANDARD_GRAVITY,
            point_loads: Vec::new(),
        }
    }

    /// Empty model over a graph's nodes with the default grounding rule.
    pub fn for_graph(graph: &Graph, material: Material) -> Self {
        let positions = graph.nodes().iter().map(|n| n.position).collect();
        Self::new(positions, grounded_nodes(graph), material)
    }

    pub fn with_strut(&self, a: NodeId, b: NodeId) -> Self {
        let mut m = self.clone();
        m.struts.push((a, b));
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    /// Translations per model node, mm. Nodes without struts stay zero.
    pub displacements: Vec<[f64; 3]>,
    pub u_max: f64,
    /// `‖K u − f‖ / ‖f‖` (zero when the load vanishes).
    pub residual: f64,
}

/// Upper-triangular profile storage of a symmetric matrix.
struct Skyline {
    /// First stored row of each column.
    first: Vec<usize>,
    /// Offset of each column's first stored entry in `values`.
    start: Vec<usize>,
    values: Vec<f64>,
}

impl Skyline {
    fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut at = 0;
        for (j, &f) in first.iter().enumerate() {
            start.push(at);
            at += j - f + 1;
        }
        start.push(at);
        Skyline {
            first,
            start,
            values: vec![0.0; at],
        }
    }

    fn n(&self) -> usize {
        self.first.len()
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && i >= self.first[j]);
        self.start[j] + (i - self.first[j])
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.values[k] += v;
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        for j in 0..self.n() {
            for i in self.first[j]..=j {
                let v = self.values[self.idx(i, j)];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// In-place `K = Uᵀ U`. Returns false when the matrix is not positive
    /// definite.
    fn factor(&mut self) -> bool {
        let n = self.n();
        for j in 0..n {
            let fj = self.first[j];
            for i in fj..j {
                let fi = self.first[i];
                let from = fi.max(fj);
                let mut s = self.values[self.idx(i, j)];
                for k in from..i {
                    s -= self.values[self.idx(k, i)] * self.values[self.idx(k, j)];
                }
                let d = self.values[self.idx(i, i)];
                let at = self.idx(i, j);
                self.values[at] = s / d;
            }
            let mut s = self.values[self.idx(j, j)];
            for k in fj..j {
                let u = self.values[self.idx(k, j)];
                s -= u * u;
            }
            if !(s > 0.0) || !s.is_finite() {
                return false;
            }
            let at = self.idx(j, j);
            self.values[at] = s.sqrt();
        }
        true
    }

    fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = b.to_vec();
        // Uᵀ y = b
        for j in 0..n {
            let mut s = y[j];
            for k in self.first[j]..j {
                s -= self.values[self.idx(k, j)] * y[k];
            }
            y[j] = s / self.values[self.idx(j, j)];
        }
        // U x = y
        for j in (0..n).rev() {
            y[j] /= self.values[self.idx(j, j)];
            let xj = y[j];
            for k in self.first[j]..j {
                y[k] -= self.values[self.idx(k, j)] * xj;
            }
        }
        y
    }
}

/// 12x12 element stiffness in local coordinates.
fn local_stiffness(mat: &Material, len: f64) -> [[f64; 12]; 12] {
    let e = mat.e_mpa();
    let ea = e * mat.area() / len;
    let gj = mat.shear_mpa() * mat.polar_moment() / len;
    let ei = e * mat.second_moment();
    let (b12, b6, b4, b2) = (12.0 * ei / len.powi(3), 6.0 * ei / len.powi(2), 4.0 * ei / len, 2.0 * ei / len);
    let mut k = [[0.0; 12]; 12];
    let mut set = |i: usize, j: usize, v: f64| {
        k[i][j] = v;
        k[j][i] = v;
    };
    set(0, 0, ea);
    set(6, 6, ea);
    set(0, 6, -ea);
    set(3, 3, gj);
    set(9, 9, gj);
    set(3, 9, -gj);
    // bending in the local x-y plane (v, θz)
    set(1, 1, b12);
    set(7, 7, b12);
    set(1, 7, -b12);
    set(1, 5, b6);
    set(1, 11, b6);
    set(5, 7, -b6);
    set(7, 11, -b6);
    set(5, 5, b4);
    set(11, 11, b4);
    set(5, 11, b2);
    // bending in the local x-z plane (w, θy)
    set(2, 2, b12);
    set(8, 8, b12);
    set(2, 8, -b12);
    set(2, 4, -b6);
    set(2, 10, -b6);
    set(4, 8, b6);
    set(8, 10, b6);
    set(4, 4, b4);
    set(10, 10, b4);
    set(4, 10, b2);
    k
}

/// Rows are the local axes in global coordinates.
fn local_axes(d: [f64; 3], len: f64) -> [[f64; 3]; 3] {
    let ex = [d[0] / len, d[1] / len, d[2] / len];
    let reference = if ex[2].abs() > 0.99 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let ey = cross(reference, ex);
    let n = (ey[0] * ey[0] + ey[1] * ey[1] + ey[2] * ey[2]).sqrt();
    let ey = [ey[0] / n, ey[1] / n, ey[2] / n];
    let ez = cross(ex, ey);
    [ex, ey, ez]
}

fn global_stiffness(mat: &Material, pa: &[f64; 3], pb: &[f64; 3]) -> [[f64; 12]; 12] {
    let d = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let kl = local_stiffness(mat, len);
    let r = local_axes(d, len);
    // T = blockdiag(R, R, R, R); K = Tᵀ k T
    let t = |i: usize, j: usize| -> f64 {
        if i / 3 == j / 3 {
            r[i % 3][j % 3]
        } else {
            0.0
        }
    };
    let mut kt = [[0.0; 12]; 12];
    for i in 0..12 {
        for j in 0..12 {
            let mut s = 0.0;
            for k in (j / 3) * 3..(j / 3) * 3 + 3 {
                s += kl[i][k] * t(k, j);
            }
            kt[i][j] = s;
        }
    }
    let mut kg = [[0.0; 12]; 12];
    for i in 0..12 {
        for j in 0..12 {
            let mut s = 0.0;
            for k in (i / 3) * 3..(i / 3) * 3 + 3 {
                s += t(k, i) * kt[k][j];
            }
            kg[i][j] = s;
        }
    }
    kg
}

/// Reverse Cuthill–McKee order of the free nodes.
fn rcm_order(free: &[NodeId], adj: &[Vec<usize>]) -> Vec<usize> {
    let n = free.len();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (adj[i].len(), free[i]));
    for &s in &by_degree {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&w| !seen[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), free[w]));
            for w in next {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Static displacement of the frame under gravity and point loads.
pub fn solve_displacement(model: &FrameModel) -> Result<DisplacementField> {
    model.material.validate()?;
    let nn = model.positions.len();
    if model.grounded.len() != nn {
        return Err(Error::Argument("grounded flags do not match node count".into()));
    }
    let mut used = vec![false; nn];
    for &(a, b) in &model.struts {
        if a >= nn || b >= nn || a == b {
            return Err(Error::Argument(format!("invalid strut ({a}, {b})")));
        }
        used[a] = true;
        used[b] = true;
    }

    // Support check: every strut component must touch a grounded node.
    let mut parent: Vec<usize> = (0..nn).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for &(a, b) in &model.struts {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut supported = vec![false; nn];
    for v in 0..nn {
        if used[v] && model.grounded[v] {
            let r = find(&mut parent, v);
            supported[r] = true;
        }
    }
    let unsupported: Vec<NodeId> = (0..nn)
        .filter(|&v| used[v] && !supported[find(&mut parent, v)])
        .collect();
    if !unsupported.is_empty() {
        return Err(Error::Structural {
            detail: "printed struts not connected to the ground".into(),
            unsupported,
        });
    }

    let free: Vec<NodeId> = (0..nn).filter(|&v| used[v] && !model.grounded[v]).collect();
    let mut slot = vec![usize::MAX; nn];
    for (k, &v) in free.iter().enumerate() {
        slot[v] = k;
    }
    let mut adj = vec![Vec::new(); free.len()];
    for &(a, b) in &model.struts {
        if slot[a] != usize::MAX && slot[b] != usize::MAX {
            adj[slot[a]].push(slot[b]);
            adj[slot[b]].push(slot[a]);
        }
    }
    let order = rcm_order(&free, &adj);
    let mut block = vec![0usize; free.len()];
    for (pos, &k) in order.iter().enumerate() {
        block[k] = pos;
    }
    let ndof = free.len() * DOF;
    let dof_base = |v: NodeId| -> Option<usize> {
        if slot[v] == usize::MAX {
            None
        } else {
            Some(block[slot[v]] * DOF)
        }
    };

    let mut displacements = vec![[0.0; 3]; nn];
    let mut load = vec![0.0; ndof];
    // Weight per unit length, N/mm.
    let line_weight = model.material.density * model.gravity * 1e-9 * model.material.area();
    for &(a, b) in &model.struts {
        let len = crate::graph::distance(&model.positions[a], &model.positions[b]);
        let half = 0.5 * line_weight * len;
        for v in [a, b] {
            if let Some(base) = dof_base(v) {
                load[base + 2] -= half;
            }
        }
    }
    for &(v, f) in &model.point_loads {
        if v >= nn {
            return Err(Error::Argument(format!("point load on unknown node {v}")));
        }
        if let Some(base) = dof_base(v) {
            for d in 0..3 {
                load[base + d] += f[d];
            }
        }
    }
    if ndof == 0 {
        return Ok(DisplacementField {
            displacements,
            u_max: 0.0,
            residual: 0.0,
        });
    }

    let mut first: Vec<usize> = (0..ndof).collect();
    for &(a, b) in &model.struts {
        let bases: Vec<usize> = [a, b].iter().filter_map(|&v| dof_base(v)).collect();
        let lo = *bases.iter().min().unwrap_or(&0);
        for &base in &bases {
            for d in 0..DOF {
                first[base + d] = first[base + d].min(lo);
            }
        }
    }
    let mut k = Skyline::new(first);
    for &(a, b) in &model.struts {
        let kg = global_stiffness(&model.material, &model.positions[a], &model.positions[b]);
        let bases = [dof_base(a), dof_base(b)];
        for (ni, bi) in bases.iter().enumerate() {
            let Some(bi) = bi else { continue };
            for (nj, bj) in bases.iter().enumerate() {
                let Some(bj) = bj else { continue };
                for di in 0..DOF {
                    for dj in 0..DOF {
                        let (r, c) = (bi + di, bj + dj);
                        if r <= c {
                            k.add(r, c, kg[ni * DOF + di][nj * DOF + dj]);
                        }
                    }
                }
            }
        }
    }
    let assembled = Skyline {
        first: k.first.clone(),
        start: k.start.clone(),
        values: k.values.clone(),
    };
    if !k.factor() {
        return Err(Error::Structural {
            detail: "singular stiffness matrix".into(),
            unsupported: free,
        });
    }
    let mut u = k.solve_factored(&load);
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let fnorm = norm(&load);
    let residual_of = |u: &[f64]| -> Vec<f64> {
        assembled
            .mul(u)
            .iter()
            .zip(&load)
            .map(|(ku, f)| f - ku)
            .collect()
    };
    let mut r = residual_of(&u);
    // One refinement pass is enough for the conditioning seen here.
    if fnorm > 0.0 && norm(&r) / fnorm >= 1e-10 {
        let du = k.solve_factored(&r);
        u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
        r = residual_of(&u);
    }
    let residual = if fnorm > 0.0 { norm(&r) / fnorm } else { norm(&r) };

    let mut u_max: f64 = 0.0;
    for &v in &free {
        let base = dof_base(v).expect("free node has dofs");
        let t = [u[base], u[base + 1], u[base + 2]];
        u_max = u_max.max((t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt());
        displacements[v] = t;
    }
    Ok(DisplacementField {
        displacements,
        u_max,
        residual,
    })
}

/// Peak displacement once strut `(a, b)` is added; the model is unchanged.
pub fn u_max_after(model: &FrameModel, a: NodeId, b: NodeId) -> Result<f64> {
    Ok(solve_displacement(&model.with_strut(a, b))?.u_max)
}
