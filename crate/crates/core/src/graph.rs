//! Graph representation, local search graphs, coverage bookkeeping and
//! toolpath records.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Entity, Error, Result};

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Millimeters.
    pub position: [f64; 3],
}

/// Undirected edge stored canonically with `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub length: f64,
}

impl Edge {
    pub fn other(&self, v: NodeId) -> NodeId {
        if v == self.a {
            self.b
        } else {
            self.a
        }
    }

    pub fn touches(&self, v: NodeId) -> bool {
        self.a == v || self.b == v
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    /// Per node: `(neighbor, edge)` sorted by neighbor id.
    adjacency: Vec<Vec<(NodeId, EdgeId)>>,
    edge_index: HashMap<(NodeId, NodeId), EdgeId>,
}

pub fn distance(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

impl Graph {
    /// Builds a graph from node positions and index pairs. Edge lengths are
    /// computed from the positions.
    pub fn new(positions: Vec<[f64; 3]>, edge_pairs: &[(usize, usize)]) -> Result<Self> {
        for (i, p) in positions.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Argument(format!("node {i} has a non-finite position")));
            }
        }
        let nodes: Vec<Node> = positions
            .into_iter()
            .enumerate()
            .map(|(id, position)| Node { id, position })
            .collect();
        let n = nodes.len();
        let mut edges = Vec::with_capacity(edge_pairs.len());
        let mut edge_index = HashMap::with_capacity(edge_pairs.len());
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in edge_pairs {
            if i >= n || j >= n {
                return Err(Error::Argument(format!("edge ({i}, {j}) references a missing node")));
            }
            if i == j {
                return Err(Error::Argument(format!("edge ({i}, {j}) is a self loop")));
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            if edge_index.contains_key(&(a, b)) {
                return Err(Error::Argument(format!("duplicate edge ({a}, {b})")));
            }
            let length = distance(&nodes[a].position, &nodes[b].position);
            if length <= 0.0 {
                return Err(Error::Argument(format!("edge ({a}, {b}) has zero length")));
            }
            let id = edges.len();
            edges.push(Edge { a, b, length });
            edge_index.insert((a, b), id);
            adjacency[a].push((b, id));
            adjacency[b].push((a, id));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Graph {
            nodes,
            edges,
            adjacency,
            edge_index,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    pub fn position(&self, v: NodeId) -> &[f64; 3] {
        &self.nodes[v].position
    }

    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, EdgeId)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_between(&self, u: NodeId, v: NodeId) -> Option<EdgeId> {
        let key = if u < v { (u, v) } else { (v, u) };
        self.edge_index.get(&key).copied()
    }

    pub fn distance(&self, u: NodeId, v: NodeId) -> f64 {
        distance(&self.nodes[u].position, &self.nodes[v].position)
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(0.0, f64::max)
    }

    pub fn mean_edge_length(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        self.edges.iter().map(|e| e.length).sum::<f64>() / self.edges.len() as f64
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v < self.nodes.len()
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(w, _) in &self.adjacency[u] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// BFS hop rings around `center`, up to `rings` hops. Returns
    /// `(node, ring)` in BFS order.
    pub fn rings(&self, center: NodeId, rings: usize) -> Vec<(NodeId, usize)> {
        let mut ring_of: HashMap<NodeId, usize> = HashMap::new();
        ring_of.insert(center, 0);
        let mut order = vec![(center, 0)];
        let mut frontier = vec![center];
        for r in 1..=rings {
            let mut next = Vec::new();
            for &u in &frontier {
                for &(w, _) in &self.adjacency[u] {
                    if let std::collections::hash_map::Entry::Vacant(slot) = ring_of.entry(w) {
                        slot.insert(r);
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort_unstable();
            order.extend(next.iter().map(|&w| (w, r)));
            frontier = next;
        }
        order
    }
}

/// Local search graph: the `n`-ring BFS neighbourhood of a center node.
#[derive(Debug, Clone, PartialEq)]
pub struct Lsg {
    pub center: NodeId,
    pub rings: usize,
    /// Member nodes sorted by id.
    nodes: Vec<NodeId>,
    /// Ring index, parallel to `nodes`.
    ring: Vec<usize>,
    /// Member edges sorted by id.
    edges: Vec<EdgeId>,
}

impl Lsg {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.nodes.binary_search(&v).is_ok()
    }

    pub fn ring_of(&self, v: NodeId) -> Option<usize> {
        self.nodes.binary_search(&v).ok().map(|i| self.ring[i])
    }

    pub fn contains_edge(&self, e: EdgeId) -> bool {
        self.edges.binary_search(&e).is_ok()
    }

    pub fn max_edge_length(&self, graph: &Graph) -> f64 {
        self.edges
            .iter()
            .map(|&e| graph.edge(e).length)
            .fold(0.0, f64::max)
    }
}

pub fn extract_lsg(graph: &Graph, center: NodeId, rings: usize) -> Result<Lsg> {
    if !graph.contains(center) {
        return Err(Error::Argument(format!("node {center} is not in the graph")));
    }
    let mut members = graph.rings(center, rings);
    members.sort_unstable();
    let (nodes, ring): (Vec<_>, Vec<_>) = members.into_iter().unzip();
    let mut edges = Vec::new();
    for &u in &nodes {
        for &(w, e) in graph.neighbors(u) {
            if u < w && nodes.binary_search(&w).is_ok() {
                edges.push(e);
            }
        }
    }
    edges.sort_unstable();
    Ok(Lsg {
        center,
        rings,
        nodes,
        ring,
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageMode {
    Wireframe,
    Ccf,
    Metal,
}

impl CoverageMode {
    /// Maximum traversals per edge.
    pub fn edge_cap(self) -> u8 {
        match self {
            CoverageMode::Wireframe => 1,
            CoverageMode::Ccf => 2,
            CoverageMode::Metal => u8::MAX,
        }
    }
}

impl std::str::FromStr for CoverageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wireframe" | "wire-frame" => Ok(CoverageMode::Wireframe),
            "ccf" => Ok(CoverageMode::Ccf),
            "metal" | "lpbf" => Ok(CoverageMode::Metal),
            other => Err(Error::Argument(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for CoverageMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CoverageMode::Wireframe => "wireframe",
            CoverageMode::Ccf => "ccf",
            CoverageMode::Metal => "metal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Edge(EdgeId),
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageState {
    pub mode: CoverageMode,
    edge_visits: Vec<u8>,
    node_visited: Vec<bool>,
}

impl CoverageState {
    pub fn new(graph: &Graph, mode: CoverageMode) -> Self {
        CoverageState {
            mode,
            edge_visits: vec![0; graph.edge_count()],
            node_visited: vec![false; graph.node_count()],
        }
    }

    pub fn edge_visits(&self, e: EdgeId) -> u8 {
        self.edge_visits[e]
    }

    pub fn node_visited(&self, v: NodeId) -> bool {
        self.node_visited[v]
    }

    /// Records a move. Exceeding the mode's cap is an error and leaves the
    /// state unchanged.
    pub fn apply(&mut self, mv: Move) -> Result<()> {
        match mv {
            Move::Edge(e) => {
                let Some(count) = self.edge_visits.get(e).copied() else {
                    return Err(Error::Argument(format!("edge {e} does not exist")));
                };
                if count >= self.mode.edge_cap() {
                    return Err(Error::CoverageViolation {
                        entity: Entity::Edge(e),
                        detail: format!("{} mode allows {} traversal(s)", self.mode, self.mode.edge_cap()),
                    });
                }
                self.edge_visits[e] = count + 1;
            }
            Move::Node(v) => {
                let Some(visited) = self.node_visited.get(v).copied() else {
                    return Err(Error::Argument(format!("node {v} does not exist")));
                };
                if visited && self.mode == CoverageMode::Metal {
                    return Err(Error::CoverageViolation {
                        entity: Entity::Node(v),
                        detail: "metal mode visits every node exactly once".into(),
                    });
                }
                self.node_visited[v] = true;
            }
        }
        Ok(())
    }

    /// Whether the edge may still be traversed under the mode's cap.
    pub fn edge_open(&self, e: EdgeId) -> bool {
        self.edge_visits[e] < self.mode.edge_cap()
    }

    pub fn is_complete(&self) -> bool {
        match self.mode {
            CoverageMode::Wireframe | CoverageMode::Ccf => self.edge_visits.iter().all(|&c| c >= 1),
            CoverageMode::Metal => self.node_visited.iter().all(|&v| v),
        }
    }

    /// Entities still uncovered: edge ids for edge modes, node ids for metal.
    pub fn uncovered(&self) -> Vec<usize> {
        match self.mode {
            CoverageMode::Wireframe | CoverageMode::Ccf => (0..self.edge_visits.len())
                .filter(|&e| self.edge_visits[e] == 0)
                .collect(),
            CoverageMode::Metal => (0..self.node_visited.len())
                .filter(|&v| !self.node_visited[v])
                .collect(),
        }
    }

    pub fn covered_edge_count(&self) -> usize {
        self.edge_visits.iter().filter(|&&c| c > 0).count()
    }
}

pub fn coverage_complete(cov: &CoverageState, graph: &Graph) -> bool {
    debug_assert_eq!(cov.edge_visits.len(), graph.edge_count());
    cov.is_complete()
}

/// Per-step diagnostics. Every field is deterministic for a fixed seed;
/// wall-clock timings live in the plan result instead.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub q_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub collision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub u_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub turn_angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub traversal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub orientation: Option<[f64; 3]>,
    #[serde(default)]
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolpathStep {
    pub node: NodeId,
    pub jump: bool,
    pub reward: f64,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Toolpath {
    pub steps: Vec<ToolpathStep>,
    /// Length of deposited (non-jump) travel, millimeters.
    pub total_length: f64,
}

impl Toolpath {
    pub fn push(&mut self, graph: &Graph, step: ToolpathStep) {
        if !step.jump {
            if let Some(prev) = self.steps.last() {
                self.total_length += graph.distance(prev.node, step.node);
            }
        }
        self.steps.push(step);
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.steps.iter().map(|s| s.node)
    }

    pub fn jump_count(&self) -> usize {
        self.steps.iter().skip(1).filter(|s| s.jump).count()
    }

    /// Checks that consecutive non-jump steps are graph-adjacent.
    pub fn is_adjacency_consistent(&self, graph: &Graph) -> bool {
        self.steps
            .windows(2)
            .all(|w| w[1].jump || graph.edge_between(w[0].node, w[1].node).is_some())
    }

    /// Edges traversed by non-jump steps, in order.
    pub fn traversed_edges(&self, graph: &Graph) -> Vec<EdgeId> {
        self.steps
            .windows(2)
            .filter(|w| !w[1].jump)
            .filter_map(|w| graph.edge_between(w[0].node, w[1].node))
            .collect()
    }

    /// Turning angles at every interior junction of continuous runs.
    pub fn turning_angles(&self, graph: &Graph) -> Vec<f64> {
        let mut out = Vec::new();
        for w in self.steps.windows(3) {
            if w[1].jump || w[2].jump {
                continue;
            }
            out.push(turning_angle(
                graph.position(w[0].node),
                graph.position(w[1].node),
                graph.position(w[2].node),
            ));
        }
        out
    }
}

/// Angle between the incoming direction `a -> b` and the outgoing direction
/// `b -> c`: 0 for straight continuation, π for a reversal.
pub fn turning_angle(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - b[0], c[1] - b[1], c[2] - b[2]];
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let cos = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv);
    cos.clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn path_graph(n: usize) -> Graph {
        let pos = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(pos, &edges).unwrap()
    }

    fn triangular_patch(radius: i32) -> Graph {
        // Hexagonal patch of a triangular lattice, valence 6 in the interior.
        let mut pos = Vec::new();
        let mut index = HashMap::new();
        for q in -radius..=radius {
            for r in -radius..=radius {
                if (q + r).abs() > radius {
                    continue;
                }
                index.insert((q, r), pos.len());
                let x = q as f64 + 0.5 * r as f64;
                let y = r as f64 * 3f64.sqrt() / 2.0;
                pos.push([x, y, 0.0]);
            }
        }
        let mut edges = Vec::new();
        for (&(q, r), &i) in &index {
            for (dq, dr) in [(1, 0), (0, 1), (-1, 1)] {
                if let Some(&j) = index.get(&(q + dq, r + dr)) {
                    edges.push((i, j));
                }
            }
        }
        Graph::new(pos, &edges).unwrap()
    }

    #[test]
    fn path_graph_lsg_counts() {
        let g = path_graph(7);
        let lsg = extract_lsg(&g, 3, 3).unwrap();
        assert_eq!(lsg.node_count(), 7);
        assert_eq!(lsg.edges().len(), 6);
        assert_eq!(lsg.ring_of(0), Some(3));
        assert_eq!(lsg.ring_of(3), Some(0));
    }

    #[test]
    fn zero_ring_lsg_is_center_only() {
        let g = path_graph(5);
        let lsg = extract_lsg(&g, 2, 0).unwrap();
        assert_eq!(lsg.nodes(), &[2]);
        assert!(lsg.edges().is_empty());
    }

    #[test]
    fn valence_six_two_rings_bounded() {
        let g = triangular_patch(4);
        let center = (0..g.node_count())
            .find(|&v| g.position(v)[0] == 0.0 && g.position(v)[1] == 0.0)
            .unwrap();
        let lsg = extract_lsg(&g, center, 2).unwrap();
        assert!(lsg.node_count() <= 1 + 3 * 2 * 3);
        assert_eq!(lsg.node_count(), 19);
    }

    #[test]
    fn invalid_center_rejected() {
        let g = path_graph(3);
        assert!(matches!(extract_lsg(&g, 9, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn excluded_edges_have_outside_endpoint() {
        let g = triangular_patch(3);
        let lsg = extract_lsg(&g, 0, 1).unwrap();
        for (e, edge) in g.edges().iter().enumerate() {
            let inside = lsg.contains(edge.a) && lsg.contains(edge.b);
            assert_eq!(inside, lsg.contains_edge(e));
        }
    }

    #[test]
    fn duplicate_edges_rejected() {
        let err = Graph::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], &[(0, 1), (1, 0)]);
        assert!(err.is_err());
    }

    #[test]
    fn coverage_caps_per_mode() {
        let g = path_graph(3);
        let mut wf = CoverageState::new(&g, CoverageMode::Wireframe);
        wf.apply(Move::Edge(0)).unwrap();
        assert!(matches!(
            wf.apply(Move::Edge(0)),
            Err(Error::CoverageViolation { entity: Entity::Edge(0), .. })
        ));
        assert_eq!(wf.edge_visits(0), 1);

        let mut ccf = CoverageState::new(&g, CoverageMode::Ccf);
        ccf.apply(Move::Edge(0)).unwrap();
        ccf.apply(Move::Edge(0)).unwrap();
        assert!(ccf.apply(Move::Edge(0)).is_err());

        let mut metal = CoverageState::new(&g, CoverageMode::Metal);
        metal.apply(Move::Node(1)).unwrap();
        assert!(matches!(
            metal.apply(Move::Node(1)),
            Err(Error::CoverageViolation { entity: Entity::Node(1), .. })
        ));
    }

    #[test]
    fn coverage_completion() {
        let g = path_graph(3);
        let mut wf = CoverageState::new(&g, CoverageMode::Wireframe);
        assert!(!coverage_complete(&wf, &g));
        wf.apply(Move::Edge(0)).unwrap();
        wf.apply(Move::Edge(1)).unwrap();
        assert!(coverage_complete(&wf, &g));

        let mut metal = CoverageState::new(&g, CoverageMode::Metal);
        metal.apply(Move::Node(0)).unwrap();
        metal.apply(Move::Node(1)).unwrap();
        assert!(!coverage_complete(&metal, &g));
        assert_eq!(metal.uncovered(), vec![2]);
    }

    #[test]
    fn turning_angle_conventions() {
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0];
        assert!(turning_angle(&a, &b, &[2.0, 0.0, 0.0]).abs() < 1e-12);
        assert!((turning_angle(&a, &b, &[0.0, 0.0, 0.0]) - std::f64::consts::PI).abs() < 1e-12);
        let t = turning_angle(&a, &b, &[1.0, 1.0, 0.0]);
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn components_reported() {
        let g = Graph::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0], [6.0, 0.0, 0.0]],
            &[(0, 1), (2, 3)],
        )
        .unwrap();
        assert_eq!(g.components(), vec![vec![0, 1], vec![2, 3]]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_graph() -> impl Strategy<Value = Graph> {
            (3usize..25, proptest::collection::vec((0usize..25, 0usize..25), 1..60)).prop_map(
                |(n, pairs)| {
                    let pos = (0..n)
                        .map(|i| [(i * 7 % 11) as f64, (i * 3 % 5) as f64, i as f64])
                        .collect();
                    let mut seen = std::collections::HashSet::new();
                    let edges: Vec<_> = pairs
                        .into_iter()
                        .map(|(a, b)| (a % n, b % n))
                        .filter(|&(a, b)| a != b && seen.insert((a.min(b), a.max(b))))
                        .collect();
                    Graph::new(pos, &edges).unwrap()
                },
            )
        }

        proptest! {
            #[test]
            fn lsg_rings_nest(g in random_graph(), seed in 0usize..100, n in 0usize..4) {
                let v = seed % g.node_count();
                let small = extract_lsg(&g, v, n).unwrap();
                let large = extract_lsg(&g, v, n + 1).unwrap();
                for &u in small.nodes() {
                    prop_assert!(large.contains(u));
                }
            }

            #[test]
            fn lsg_growth_bound(g in random_graph(), seed in 0usize..100, n in 0usize..4) {
                let v = seed % g.node_count();
                let k = g.max_degree();
                let lsg = extract_lsg(&g, v, n).unwrap();
                if k > 2 {
                    let bound = 1.0 + k as f64 * (((k - 1) as f64).powi(n as i32) - 1.0) / (k as f64 - 2.0);
                    prop_assert!(lsg.node_count() as f64 <= bound + 1e-9);
                }
                for (&u, &r) in lsg.nodes().iter().zip(lsg.ring.iter()) {
                    // ring equals BFS hop distance
                    let hops = g.rings(v, r).into_iter().find(|&(w, _)| w == u).map(|(_, h)| h);
                    prop_assert_eq!(hops, Some(r));
                }
            }
        }
    }
}
