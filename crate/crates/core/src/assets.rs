//! Generators for the bundled example models.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{distance, Graph, NodeId};
use crate::io::GraphFile;
use crate::Result;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// Triangular lattice patch of `cols x rows` nodes with spacing `pitch`.
pub fn triangular_grid(cols: usize, rows: usize, pitch: f64) -> Graph {
    let mut pos = Vec::with_capacity(cols * rows);
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let shift = if r % 2 == 1 { 0.5 } else { 0.0 };
            pos.push([(c as f64 + shift) * pitch, r as f64 * SQRT3_2 * pitch, 0.0]);
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                let up = v + cols;
                edges.push((v, up));
                if r % 2 == 1 && c + 1 < cols {
                    edges.push((v, up + 1));
                }
                if r % 2 == 0 && c > 0 {
                    edges.push((v, up - 1));
                }
            }
        }
    }
    Graph::new(pos, &edges).expect("lattice is well formed")
}

/// Drops nodes of degree ≤ 1 until none remain and renumbers.
fn prune_pendants(pos: Vec<[f64; 3]>, edges: Vec<(usize, usize)>) -> Graph {
    let mut alive = vec![true; pos.len()];
    let mut live_edges = edges;
    loop {
        let mut deg = vec![0usize; pos.len()];
        for &(a, b) in &live_edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        let before = live_edges.len();
        for v in 0..pos.len() {
            if alive[v] && deg[v] <= 1 {
                alive[v] = false;
            }
        }
        live_edges.retain(|&(a, b)| alive[a] && alive[b]);
        if live_edges.len() == before {
            break;
        }
    }
    let mut id = vec![usize::MAX; pos.len()];
    let mut kept = Vec::new();
    for (v, p) in pos.into_iter().enumerate() {
        if alive[v] {
            id[v] = kept.len();
            kept.push(p);
        }
    }
    let e: Vec<(usize, usize)> = live_edges.into_iter().map(|(a, b)| (id[a], id[b])).collect();
    Graph::new(kept, &e).expect("pruned lattice is well formed")
}

/// Honeycomb lattice on a `cols x rows` brick layout with edge length
/// `pitch`; pendant nodes are pruned.
pub fn honeycomb_grid(cols: usize, rows: usize, pitch: f64) -> Graph {
    let mut pos = Vec::with_capacity(cols * rows);
    let mut edges = Vec::new();
    for j in 0..rows {
        for i in 0..cols {
            let lift = if (i + j) % 2 == 0 { 0.5 } else { 0.0 };
            pos.push([i as f64 * SQRT3_2 * pitch, (j as f64 * 1.5 + lift) * pitch, 0.0]);
            let v = j * cols + i;
            if i + 1 < cols {
                edges.push((v, v + 1));
            }
            if (i + j) % 2 == 0 && j + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    prune_pendants(pos, edges)
}

/// Full `w x h` raster as an ASCII PGM.
pub fn square_pgm(w: usize, h: usize) -> String {
    let mut s = format!("P2\n{w} {h}\n1\n");
    for _ in 0..h {
        let row: Vec<&str> = (0..w).map(|_| "1").collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Rectangular frame lattice: `nx x ny` nodes per layer, `layers` layers,
/// axis-aligned struts of length `pitch` (mm).
pub fn frame_lattice(nx: usize, ny: usize, layers: usize, pitch: f64) -> Graph {
    let id = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    let mut pos = Vec::new();
    let mut edges = Vec::new();
    for z in 0..layers {
        for y in 0..ny {
            for x in 0..nx {
                pos.push([x as f64 * pitch, y as f64 * pitch, z as f64 * pitch]);
                if x + 1 < nx {
                    edges.push((id(x, y, z), id(x + 1, y, z)));
                }
                if y + 1 < ny {
                    edges.push((id(x, y, z), id(x, y + 1, z)));
                }
                if z + 1 < layers {
                    edges.push((id(x, y, z), id(x, y, z + 1)));
                }
            }
        }
    }
    Graph::new(pos, &edges).expect("lattice is well formed")
}

/// Triangulated height field `z = amp · sin(x/λ) · cos(y/λ)` over a
/// triangular lattice; interior valence 6.
pub fn wavy_mesh(cols: usize, rows: usize, pitch: f64, amp: f64) -> Graph {
    let flat = triangular_grid(cols, rows, pitch);
    let lambda = 4.0 * pitch;
    let pos: Vec<[f64; 3]> = flat
        .nodes()
        .iter()
        .map(|n| {
            let [x, y, _] = n.position;
            [x, y, amp * (x / lambda).sin() * (y / lambda).cos()]
        })
        .collect();
    let edges: Vec<(usize, usize)> = flat.edges().iter().map(|e| (e.a, e.b)).collect();
    Graph::new(pos, &edges).expect("mesh is well formed")
}

/// Same graph with node ids permuted by a seeded shuffle, as vertex order
/// in exported meshes carries no geometric meaning.
pub fn scramble_ids(graph: &Graph, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut id: Vec<usize> = (0..graph.node_count()).collect();
    id.shuffle(&mut rng);
    let mut pos = vec![[0.0; 3]; graph.node_count()];
    for (v, n) in graph.nodes().iter().enumerate() {
        pos[id[v]] = n.position;
    }
    let edges: Vec<(usize, usize)> = graph.edges().iter().map(|e| (id[e.a], id[e.b])).collect();
    Graph::new(pos, &edges).expect("permutation keeps the graph valid")
}

/// The bundled mesh: a wavy triangulated patch with scrambled ids.
pub fn bundled_mesh() -> Graph {
    scramble_ids(&wavy_mesh(20, 20, 10.0, 8.0), 20)
}

/// Node closest to the centroid of all nodes; lowest id on ties.
pub fn central_node(graph: &Graph) -> NodeId {
    let n = graph.node_count().max(1) as f64;
    let mut c = [0.0; 3];
    for node in graph.nodes() {
        for k in 0..3 {
            c[k] += node.position[k] / n;
        }
    }
    (0..graph.node_count())
        .min_by(|&a, &b| distance(graph.position(a), &c).total_cmp(&distance(graph.position(b), &c)))
        .expect("graph has nodes")
}

/// Connected random graph of at most `max_nodes` nodes and valence ≤ 6:
/// a jittered triangular patch with a random subset of edges removed.
pub fn random_patch(rng: &mut ChaCha8Rng, max_nodes: usize) -> Graph {
    loop {
        let side = ((max_nodes as f64).sqrt().floor() as usize).max(2);
        let cols = rng.gen_range(3..=side);
        let rows = rng.gen_range(3..=(max_nodes / cols).max(3)).min(max_nodes / cols);
        let base = triangular_grid(cols, rows.max(2), 10.0);
        let pos: Vec<[f64; 3]> = base
            .nodes()
            .iter()
            .map(|n| {
                let [x, y, z] = n.position;
                [x + rng.gen_range(-2.0..2.0), y + rng.gen_range(-2.0..2.0), z]
            })
            .collect();
        let keep = rng.gen_range(0.55..0.9);
        let edges: Vec<(usize, usize)> = base
            .edges()
            .iter()
            .filter(|_| rng.gen::<f64>() < keep)
            .map(|e| (e.a, e.b))
            .collect();
        let g = Graph::new(pos, &edges).expect("patch is well formed");
        // Keep the largest component only.
        let comps = g.components();
        let big = comps.iter().max_by_key(|c| c.len()).expect("at least one component");
        if big.len() < 6 {
            continue;
        }
        let mut id = vec![usize::MAX; g.node_count()];
        let mut p = Vec::new();
        for &v in big {
            id[v] = p.len();
            p.push(*g.position(v));
        }
        let e: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .filter(|e| id[e.a] != usize::MAX)
            .map(|e| (id[e.a], id[e.b]))
            .collect();
        return Graph::new(p, &e).expect("component is well formed");
    }
}

/// Bundled asset names and contents.
pub fn bundled() -> Vec<(&'static str, String)> {
    let json = |g: &Graph| {
        let mut s = serde_json::to_string(&GraphFile::from_graph(g)).expect("graph serializes");
        s.push('\n');
        s
    };
    vec![
        ("ccf_triangular.json", json(&triangular_grid(11, 11, 10.0))),
        ("ccf_honeycomb.json", json(&honeycomb_grid(16, 14, 6.0))),
        ("metal_square_60.pgm", square_pgm(60, 60)),
        ("wireframe_lattice.json", json(&frame_lattice(5, 5, 4, 15.0))),
        ("wavy_mesh.json", json(&bundled_mesh())),
    ]
}

/// Directory of the committed assets.
pub fn asset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

pub fn write_bundled(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (name, body) in bundled() {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_counts() {
        let g = triangular_grid(11, 11, 10.0);
        // 3ab - 2a - 2b + 1 edges for an a x b patch.
        assert_eq!(g.node_count(), 121);
        assert_eq!(g.edge_count(), 3 * 121 - 22 - 22 + 1);
        assert!(g.edges().iter().all(|e| (e.length - 10.0).abs() < 1e-9));
        assert_eq!(g.max_degree(), 6);
    }

    #[test]
    fn honeycomb_is_regular() {
        let g = honeycomb_grid(16, 14, 6.0);
        assert!(g.edges().iter().all(|e| (e.length - 6.0).abs() < 1e-9));
        assert!((0..g.node_count()).all(|v| (2..=3).contains(&g.degree(v))));
        assert!((300..=600).contains(&g.edge_count()), "{}", g.edge_count());
    }

    #[test]
    fn lattice_sizes() {
        let w = frame_lattice(5, 5, 4, 15.0);
        assert!((150..=300).contains(&w.edge_count()));
        let t = triangular_grid(11, 11, 10.0);
        assert!((300..=600).contains(&t.edge_count()));
        let m = wavy_mesh(20, 20, 10.0, 8.0);
        assert_eq!(m.max_degree(), 6);
        assert_eq!(m.components().len(), 1);
    }

    #[test]
    fn scrambling_keeps_geometry() {
        let g = wavy_mesh(6, 5, 10.0, 3.0);
        let s = scramble_ids(&g, 1);
        assert_eq!((s.node_count(), s.edge_count()), (g.node_count(), g.edge_count()));
        let mut a: Vec<f64> = g.edges().iter().map(|e| e.length).collect();
        let mut b: Vec<f64> = s.edges().iter().map(|e| e.length).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert_ne!(g.nodes(), s.nodes());
        assert_eq!(s.position(central_node(&s)), g.position(central_node(&g)));
    }

    #[test]
    fn random_patches_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = random_patch(&mut rng, 40);
            assert!(g.node_count() <= 40 && g.node_count() >= 6);
            assert!(g.max_degree() <= 6);
            assert_eq!(g.components().len(), 1);
        }
    }
}
