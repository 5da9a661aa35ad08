//! Swept-volume collision checks between a convex printer head and printed
//! struts, plus the minimal-rotation orientation search.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, Graph};

pub type Vec3 = [f64; 3];

/// Separation at or below which two convex sets count as intersecting, mm.
pub const CONTACT_TOLERANCE: f64 = 1e-6;

/// Reward for an unavoidable collision.
pub const COLLISION_PENALTY: f64 = -1000.0;

/// Number of hemisphere samples in the orientation search.
pub const ORIENTATION_SAMPLES: usize = 200;

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    (n > 1e-12).then(|| scale(a, 1.0 / n))
}

/// Angle between two directions, radians.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let c = dot(a, b) / (norm(a) * norm(b));
    c.clamp(-1.0, 1.0).acos()
}

/// Two unit vectors orthogonal to `axis` and to each other.
fn frame_for(axis: Vec3) -> (Vec3, Vec3) {
    let reference = if axis[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let u = normalize(cross(reference, axis)).expect("reference not parallel to axis");
    let w = cross(axis, u);
    (u, w)
}

/// Convex polytope given by its vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub vertices: Vec<Vec3>,
}

impl Polytope {
    pub fn new(vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.is_empty() || vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::Argument("polytope needs finite vertices".into()));
        }
        Ok(Polytope { vertices })
    }

    fn support(&self, d: Vec3) -> Vec3 {
        let mut best = self.vertices[0];
        let mut best_val = dot(best, d);
        for &v in &self.vertices[1..] {
            let val = dot(v, d);
            if val > best_val {
                best = v;
                best_val = val;
            }
        }
        best
    }

    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Unit cube `[0,1]³` shifted by `origin`.
    pub fn cube(origin: Vec3, side: f64) -> Self {
        let mut vertices = Vec::with_capacity(8);
        for k in 0..8 {
            vertices.push(add(
                origin,
                [
                    side * (k & 1) as f64,
                    side * ((k >> 1) & 1) as f64,
                    side * ((k >> 2) & 1) as f64,
                ],
            ));
        }
        Polytope { vertices }
    }

    /// Whether `p` lies inside (or on) the hull.
    pub fn contains(&self, p: Vec3) -> bool {
        distance(self, &Polytope { vertices: vec![p] }) <= 1e-9
    }
}

/// Closest point to the origin on the hull of up to four points, returned
/// together with the indices of the smallest supporting subset.
fn closest_on_simplex(pts: &[Vec3]) -> (Vec3, Vec<usize>) {
    let n = pts.len();
    let mut best: Option<(f64, Vec3, Vec<usize>)> = None;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|&k| mask & (1 << k) != 0).collect();
        let Some((p, lambdas)) = affine_projection(pts, &idx) else { continue };
        if lambdas.iter().any(|&l| l <= 0.0) && idx.len() > 1 {
            continue;
        }
        let d = dot(p, p);
        if best.as_ref().is_none_or(|b| d < b.0 - 1e-18 || (d <= b.0 + 1e-18 && idx.len() < b.2.len())) {
            best = Some((d, p, idx));
        }
    }
    let (_, p, idx) = best.expect("vertex subsets are always feasible");
    (p, idx)
}

/// Projection of the origin onto the affine hull of `pts[idx]`, with its
/// barycentric weights; `None` when the points are affinely dependent.
fn affine_projection(pts: &[Vec3], idx: &[usize]) -> Option<(Vec3, Vec<f64>)> {
    let p0 = pts[idx[0]];
    if idx.len() == 1 {
        return Some((p0, vec![1.0]));
    }
    let e: Vec<Vec3> = idx[1..].iter().map(|&k| sub(pts[k], p0)).collect();
    let k = e.len();
    // Gram system G t = -E p0.
    let mut g = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for a in 0..k {
        for b in 0..k {
            g[a][b] = dot(e[a], e[b]);
        }
        rhs[a] = -dot(e[a], p0);
    }
    let t = solve_small(&g, &rhs, k)?;
    let mut p = p0;
    for a in 0..k {
        p = add(p, scale(e[a], t[a]));
    }
    let mut lambdas = vec![1.0 - t[..k].iter().sum::<f64>()];
    lambdas.extend_from_slice(&t[..k]);
    Some((p, lambdas))
}

fn solve_small(g: &[[f64; 3]; 3], rhs: &[f64; 3], k: usize) -> Option<[f64; 3]> {
    let mut a = *g;
    let mut b = *rhs;
    let scale_ref = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if scale_ref == 0.0 {
        return None;
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale_ref {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..k {
            let f = a[r][col] / a[col][col];
            for c in col..k {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..k).rev() {
        let mut s = b[r];
        for c in r + 1..k {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Euclidean distance between two convex hulls (zero when they overlap),
/// by the Gilbert–Johnson–Keerthi iteration on the Minkowski difference.
pub fn distance(a: &Polytope, b: &Polytope) -> f64 {
    let support = |d: Vec3| sub(a.support(d), b.support(scale(d, -1.0)));
    let mut v = sub(a.vertices[0], b.vertices[0]);
    let mut simplex: Vec<Vec3> = vec![v];
    for _ in 0..64 {
        let vv = dot(v, v);
        if vv <= 1e-24 {
            return 0.0;
        }
        let w = support(scale(v, -1.0));
        // Progress test: the lower bound v·w/|v| has caught up with |v|.
        if vv - dot(v, w) <= 1e-12 * vv.max(1e-12) {
            return vv.sqrt();
        }
        if simplex.contains(&w) {
            return vv.sqrt();
        }
        simplex.push(w);
        let (p, keep) = closest_on_simplex(&simplex);
        simplex = keep.iter().map(|&k| simplex[k]).collect();
        v = p;
        if simplex.len() == 4 {
            // Origin enclosed by a full-dimensional simplex.
            return 0.0;
        }
    }
    norm(v)
}

/// Intersection test with the contact tolerance.
pub fn polytopes_intersect(a: &Polytope, b: &Polytope) -> bool {
    let (alo, ahi) = a.aabb();
    let (blo, bhi) = b.aabb();
    for k in 0..3 {
        if alo[k] > bhi[k] + CONTACT_TOLERANCE || blo[k] > ahi[k] + CONTACT_TOLERANCE {
            return false;
        }
    }
    distance(a, b) <= CONTACT_TOLERANCE
}

/// Printer head in its local frame: tip at the origin, axis along +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadShape {
    pub vertices: Vec<Vec3>,
}

impl Default for HeadShape {
    fn default() -> Self {
        HeadShape::frustum(0.5, 15.0, 40.0, 8)
    }
}

impl HeadShape {
    /// Hull of two regular polygons: radius `tip` at z = 0 and `top` at
    /// z = `height`.
    pub fn frustum(tip: f64, top: f64, height: f64, sides: usize) -> Self {
        let mut vertices = Vec::with_capacity(2 * sides);
        for (r, z) in [(tip, 0.0), (top, height)] {
            for k in 0..sides {
                let t = 2.0 * PI * k as f64 / sides as f64;
                vertices.push([r * t.cos(), r * t.sin(), z]);
            }
        }
        HeadShape { vertices }
    }

    pub fn from_vertices(vertices: Vec<Vec3>) -> Result<Self> {
        Polytope::new(vertices.clone())?;
        Ok(HeadShape { vertices })
    }

    /// Vertices placed with the tip at `at` and the axis along `axis`.
    pub fn placed(&self, at: Vec3, axis: Vec3) -> Vec<Vec3> {
        let rot = rotation_from_z(axis);
        self.vertices
            .iter()
            .map(|&v| {
                let r = [dot(rot[0], v), dot(rot[1], v), dot(rot[2], v)];
                add(at, r)
            })
            .collect()
    }
}

/// Rotation matrix (rows) taking +z to `axis`.
fn rotation_from_z(axis: Vec3) -> [Vec3; 3] {
    let a = normalize(axis).unwrap_or([0.0, 0.0, 1.0]);
    let z = [0.0, 0.0, 1.0];
    let c = dot(z, a);
    if c > 1.0 - 1e-15 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    if c < -1.0 + 1e-15 {
        // Half turn about x.
        return [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    }
    let k = normalize(cross(z, a)).expect("non-parallel");
    let s = (1.0 - c * c).sqrt();
    let t = 1.0 - c;
    [
        [t * k[0] * k[0] + c, t * k[0] * k[1] - s * k[2], t * k[0] * k[2] + s * k[1]],
        [t * k[0] * k[1] + s * k[2], t * k[1] * k[1] + c, t * k[1] * k[2] - s * k[0]],
        [t * k[0] * k[2] - s * k[1], t * k[1] * k[2] + s * k[0], t * k[2] * k[2] + c],
    ]
}

/// Hull of the head placed at `from` and at `to` with fixed orientation.
/// Points inside the hull of the others are dropped.
pub fn swept_volume(from: Vec3, to: Vec3, axis: Vec3, head: &HeadShape) -> Polytope {
    let mut pts = head.placed(from, axis);
    if from != to {
        pts.extend(head.placed(to, axis));
    }
    let mut keep: Vec<Vec3> = Vec::with_capacity(pts.len());
    for (k, &p) in pts.iter().enumerate() {
        if keep.contains(&p) {
            continue;
        }
        let others: Vec<Vec3> = pts
            .iter()
            .enumerate()
            .filter(|&(j, q)| j != k && *q != p)
            .map(|(_, &q)| q)
            .collect();
        if others.is_empty() || distance(&Polytope { vertices: others }, &Polytope { vertices: vec![p] }) > 1e-9 {
            keep.push(p);
        }
    }
    Polytope { vertices: keep }
}

/// Eight-sided prism circumscribing the cylinder of `diameter` around the
/// segment `a`–`b`.
pub fn strut_prism(a: Vec3, b: Vec3, diameter: f64) -> Polytope {
    let axis = normalize(sub(b, a)).unwrap_or([0.0, 0.0, 1.0]);
    let (u, w) = frame_for(axis);
    let r = 0.5 * diameter / (PI / 8.0).cos();
    let mut vertices = Vec::with_capacity(16);
    for end in [a, b] {
        for k in 0..8 {
            let t = 2.0 * PI * k as f64 / 8.0 + PI / 8.0;
            vertices.push(add(end, add(scale(u, r * t.cos()), scale(w, r * t.sin()))));
        }
    }
    Polytope { vertices }
}

/// Printed struts as convex obstacles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldObstacles {
    /// `(edge, prism)` per printed strut.
    pub struts: Vec<(EdgeId, Polytope)>,
    pub environment: Vec<Polytope>,
}

impl WorldObstacles {
    pub fn add_strut(&mut self, graph: &Graph, e: EdgeId, diameter: f64) {
        let edge = graph.edge(e);
        let prism = strut_prism(*graph.position(edge.a), *graph.position(edge.b), diameter);
        self.struts.push((e, prism));
    }

    /// Whether any obstacle outside `exclude` meets `vol`.
    pub fn intersects(&self, vol: &Polytope, exclude: &[EdgeId]) -> bool {
        self.struts
            .iter()
            .filter(|(e, _)| !exclude.contains(e))
            .any(|(_, p)| polytopes_intersect(vol, p))
            || self.environment.iter().any(|p| polytopes_intersect(vol, p))
    }
}

/// Deterministic low-discrepancy directions on the upper hemisphere.
pub fn hemisphere_samples(count: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Candidate orientations sorted by angle to `current`; `current` itself
/// comes first.
pub fn orientation_candidates(current: Vec3) -> Vec<Vec3> {
    let current = normalize(current).unwrap_or([0.0, 0.0, 1.0]);
    let mut cands: Vec<(f64, usize, Vec3)> = hemisphere_samples(ORIENTATION_SAMPLES)
        .into_iter()
        .enumerate()
        .map(|(k, d)| (angle_between(current, d), k + 1, d))
        .collect();
    cands.push((0.0, 0, current));
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    cands.into_iter().map(|(_, _, d)| d).collect()
}

/// First collision-free orientation in order of rotation from `current`.
pub fn min_rotation_orientation(
    world: &WorldObstacles,
    from: Vec3,
    to: Vec3,
    current: Vec3,
    head: &HeadShape,
    exclude: &[EdgeId],
) -> Option<Vec3> {
    orientation_candidates(current)
        .into_iter()
        .find(|&q| !world.intersects(&swept_volume(from, to, q, head), exclude))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Constant head orientation (3-axis printing).
    Fixed,
    /// The head may tilt between moves (5-axis printing).
    Reorientable,
}

/// Collision term of a move and the orientation to use for it.
///
/// Fixed mode yields `0` or the collision penalty; reorientable mode yields
/// minus the rotation angle, or the penalty when no sample is free.
pub fn collision_reward(
    world: &WorldObstacles,
    from: Vec3,
    to: Vec3,
    current: Vec3,
    head: &HeadShape,
    mode: HeadMode,
    exclude: &[EdgeId],
) -> (f64, Vec3) {
    match mode {
        HeadMode::Fixed => {
            let hit = world.intersects(&swept_volume(from, to, current, head), exclude);
            (if hit { COLLISION_PENALTY } else { 0.0 }, current)
        }
        HeadMode::Reorientable => match min_rotation_orientation(world, from, to, current, head, exclude) {
            Some(q) => (-angle_between(current, q), q),
            None => (COLLISION_PENALTY, current),
        },
    }
}
