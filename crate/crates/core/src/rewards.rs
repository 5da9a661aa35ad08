//! Step rewards for the three printing applications and the shared
//! position discount.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::collision::{collision_reward, HeadMode, HeadShape, Vec3, WorldObstacles, COLLISION_PENALTY};
use crate::error::{Error, Result};
use crate::fea::{grounded_nodes, solve_displacement, FrameModel, Material};
use crate::graph::{CoverageMode, EdgeId, Graph, NodeId, StepDiagnostics};

/// Reward for forbidden moves (collisions, reprints, revisits).
pub const PENALTY: f64 = -1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountParams {
    pub sigma: f64,
    pub mu: f64,
}

impl Default for DiscountParams {
    fn default() -> Self {
        DiscountParams { sigma: 0.865, mu: 1.0 }
    }
}

impl DiscountParams {
    /// `Γ(i) = 0.9·exp(−(i−μ)²/(2σ²)) + 0.1`.
    pub fn at(&self, i: usize) -> f64 {
        let x = i as f64 - self.mu;
        0.9 * (-(x * x) / (2.0 * self.sigma * self.sigma)).exp() + 0.1
    }
}

/// Position discount with default parameters.
pub fn discount(i: usize) -> f64 {
    DiscountParams::default().at(i)
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Turning-angle reward `A(α)`: about 1 up to 60°, 0.9 up to 120°, then 0.
pub fn ccf_turn_reward(alpha: f64) -> f64 {
    let w = PI / 60.0;
    logistic((PI / 3.0 - alpha) / w) + 0.9 * (logistic((alpha - PI / 3.0) / w) - logistic((alpha - 2.0 * PI / 3.0) / w))
}

/// Traversal reward: free the first time, `−L/L_max` the second time.
pub fn ccf_traversal_reward(visits_before: u8, length: f64, l_max: f64) -> f64 {
    match visits_before {
        0 => 0.0,
        1 => -length / l_max,
        _ => PENALTY,
    }
}

/// Heat added at distance `d` from the laser spot.
pub fn heat_kernel(d: f64, radius: f64, h_max: f64) -> f64 {
    if d < radius {
        h_max * (1.0 - (d / radius).powf(0.3))
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReward {
    pub reward: f64,
    pub terms: StepDiagnostics,
}

/// Application context that scores and records moves. Rollouts work on
/// forks; the planner commits moves on the original.
pub trait RewardModel: Clone + Send + Sync {
    /// Copy for one rollout, with per-rollout state reset.
    fn fork(&self) -> Self;
    /// Scores the `i`-th move `from -> to` (1-based) and records it.
    fn step(&mut self, graph: &Graph, i: usize, from: NodeId, to: NodeId) -> StepReward;
    /// Records a discontinuity that places the tool at `to`.
    fn jump(&mut self, graph: &Graph, to: NodeId);
}

type FeaCache = Arc<Mutex<HashMap<Vec<u64>, Option<f64>>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireframeParams {
    pub material: Material,
    pub head_mode: HeadMode,
    pub discount: DiscountParams,
}

impl Default for WireframeParams {
    fn default() -> Self {
        WireframeParams {
            material: Material::default(),
            head_mode: HeadMode::Fixed,
            discount: DiscountParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WireframeContext {
    pub params: WireframeParams,
    pub head: HeadShape,
    pub orientation: Vec3,
    printed: Vec<bool>,
    grounded: Arc<Vec<bool>>,
    positions: Arc<Vec<[f64; 3]>>,
    world: WorldObstacles,
    /// Set on forks: after a collision every later move of the rollout is
    /// scored as a collision without further checks.
    rollout: bool,
    collided: bool,
    cache: FeaCache,
}

impl WireframeContext {
    pub fn new(graph: &Graph, params: WireframeParams, head: HeadShape) -> Result<Self> {
        params.material.validate()?;
        Ok(WireframeContext {
            params,
            head,
            orientation: [0.0, 0.0, 1.0],
            printed: vec![false; graph.edge_count()],
            grounded: Arc::new(grounded_nodes(graph)),
            positions: Arc::new(graph.nodes().iter().map(|n| n.position).collect()),
            world: WorldObstacles::default(),
            rollout: false,
            collided: false,
            cache: Arc::new(Mutex::new(HashMap::new())),
        })
    }

    pub fn grounded(&self) -> &[bool] {
        &self.grounded
    }

    pub fn printed(&self) -> &[bool] {
        &self.printed
    }

    fn key(&self, extra: Option<EdgeId>) -> Vec<u64> {
        let mut bits = vec![0u64; self.printed.len().div_ceil(64)];
        for (e, &p) in self.printed.iter().enumerate() {
            if p || Some(e) == extra {
                bits[e / 64] |= 1 << (e % 64);
            }
        }
        bits
    }

    fn model(&self, graph: &Graph, extra: Option<EdgeId>) -> FrameModel {
        let mut model = FrameModel::new((*self.positions).clone(), (*self.grounded).clone(), self.params.material);
        for (e, &p) in self.printed.iter().enumerate() {
            if p || Some(e) == extra {
                let edge = graph.edge(e);
                model.struts.push((edge.a, edge.b));
            }
        }
        model
    }

    /// Peak displacement of the printed struts plus `extra`; `None` when
    /// part of the structure is not connected to the ground.
    pub fn u_max_with(&self, graph: &Graph, extra: Option<EdgeId>) -> Result<Option<f64>> {
        let key = self.key(extra);
        if let Some(&v) = self.cache.lock().expect("fea cache poisoned").get(&key) {
            return Ok(v);
        }
        let value = match solve_displacement(&self.model(graph, extra)) {
            Ok(field) => Some(field.u_max),
            Err(Error::Structural { .. }) => None,
            Err(e) => return Err(e),
        };
        self.cache.lock().expect("fea cache poisoned").insert(key, value);
        Ok(value)
    }

    /// Collision term for printing `e` from `from` to `to`.
    pub fn collision_term(&self, graph: &Graph, from: NodeId, to: NodeId) -> (f64, Vec3) {
        let mut exclude: Vec<EdgeId> = graph.neighbors(from).iter().map(|&(_, e)| e).collect();
        exclude.extend(graph.neighbors(to).iter().map(|&(_, e)| e));
        collision_reward(
            &self.world,
            *graph.position(from),
            *graph.position(to),
            self.orientation,
            &self.head,
            self.params.head_mode,
            &exclude,
        )
    }
}

impl RewardModel for WireframeContext {
    fn fork(&self) -> Self {
        let mut c = self.clone();
        c.rollout = true;
        c.collided = false;
        c
    }

    fn step(&mut self, graph: &Graph, i: usize, from: NodeId, to: NodeId) -> StepReward {
        let gamma = self.params.discount.at(i);
        let mut terms = StepDiagnostics::default();
        let Some(e) = graph.edge_between(from, to) else {
            return StepReward { reward: gamma * PENALTY, terms };
        };
        let (c, q) = if self.printed[e] || self.collided {
            (COLLISION_PENALTY, self.orientation)
        } else {
            self.collision_term(graph, from, to)
        };
        if c <= COLLISION_PENALTY && self.rollout {
            self.collided = true;
        }
        terms.collision = Some(c);
        terms.orientation = Some(q);
        let u = if c <= COLLISION_PENALTY || self.printed[e] {
            0.0
        } else {
            match self.u_max_with(graph, Some(e)) {
                Ok(Some(u)) => {
                    terms.u_max = Some(u);
                    u
                }
                _ => -PENALTY,
            }
        };
        if !self.printed[e] {
            self.printed[e] = true;
            self.world.add_strut(graph, e, self.params.material.diameter);
        }
        self.orientation = q;
        StepReward {
            reward: gamma * (c - u),
            terms,
        }
    }

    fn jump(&mut self, _graph: &Graph, _to: NodeId) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct CcfParams {
    pub discount: DiscountParams,
}


#[derive(Debug, Clone, PartialEq)]
pub struct CcfContext {
    pub params: CcfParams,
    visits: Vec<u8>,
    l_max: f64,
    /// Node the tool came from before reaching the current node.
    prev: Option<NodeId>,
}

impl CcfContext {
    pub fn new(graph: &Graph, params: CcfParams) -> Self {
        CcfContext {
            params,
            visits: vec![0; graph.edge_count()],
            l_max: graph.max_edge_length(),
            prev: None,
        }
    }

    pub fn visits(&self) -> &[u8] {
        &self.visits
    }

    pub fn previous(&self) -> Option<NodeId> {
        self.prev
    }
}

impl RewardModel for CcfContext {
    fn fork(&self) -> Self {
        self.clone()
    }

    fn step(&mut self, graph: &Graph, i: usize, from: NodeId, to: NodeId) -> StepReward {
        let gamma = self.params.discount.at(i);
        let mut terms = StepDiagnostics::default();
        let Some(e) = graph.edge_between(from, to) else {
            return StepReward { reward: gamma * PENALTY, terms };
        };
        let alpha = match self.prev {
            Some(p) => crate::graph::turning_angle(graph.position(p), graph.position(from), graph.position(to)),
            None => 0.0,
        };
        let turn = ccf_turn_reward(alpha);
        let trav = ccf_traversal_reward(self.visits[e], graph.edge(e).length, self.l_max);
        self.visits[e] = self.visits[e].saturating_add(1);
        self.prev = Some(from);
        terms.turn_angle = Some(alpha);
        terms.traversal = Some(trav);
        StepReward {
            reward: gamma * (turn + trav),
            terms,
        }
    }

    fn jump(&mut self, _graph: &Graph, _to: NodeId) {
        self.prev = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetalParams {
    pub h_max: f64,
    /// Kernel radius as a multiple of the mean edge length.
    pub radius_factor: f64,
    pub diffusion: f64,
    pub decay: f64,
    /// Rings of the diffusion neighbourhood.
    pub diffusion_rings: usize,
    pub discount: DiscountParams,
}

impl Default for MetalParams {
    fn default() -> Self {
        MetalParams {
            h_max: 100.0,
            radius_factor: 3.0,
            diffusion: 0.2,
            decay: 0.05,
            diffusion_rings: 4,
            discount: DiscountParams::default(),
        }
    }
}

/// Uniform-grid lookup of nodes within a radius.
#[derive(Debug)]
struct SpatialHash {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<NodeId>>,
}

impl SpatialHash {
    fn new(graph: &Graph, cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<NodeId>> = HashMap::new();
        for n in graph.nodes() {
            cells.entry(Self::key(&n.position, cell)).or_default().push(n.id);
        }
        SpatialHash { cell, cells }
    }

    fn key(p: &[f64; 3], cell: f64) -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    /// Node ids within `radius` of `p`, ascending.
    fn within(&self, graph: &Graph, p: &[f64; 3], radius: f64) -> Vec<(NodeId, f64)> {
        let (cx, cy, cz) = Self::key(p, self.cell);
        let reach = (radius / self.cell).ceil() as i64;
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &v in ids {
                            let d = crate::graph::distance(p, graph.position(v));
                            if d < radius {
                                out.push((v, d));
                            }
                        }
                    }
                }
            }
        }
        out.sort_by_key(|&(v, _)| v);
        out
    }
}

#[derive(Debug, Clone)]
pub struct MetalContext {
    pub params: MetalParams,
    pub radius: f64,
    temperature: Vec<f64>,
    visited: Vec<bool>,
    hash: Arc<SpatialHash>,
}

impl MetalContext {
    pub fn new(graph: &Graph, params: MetalParams) -> Result<Self> {
        if params.diffusion < 0.0 || params.diffusion * graph.max_degree() as f64 >= 1.0 {
            return Err(Error::Config(format!(
                "diffusion rate {} unstable for maximum degree {}",
                params.diffusion,
                graph.max_degree()
            )));
        }
        if !(0.0..1.0).contains(&params.decay) || params.h_max < 0.0 || params.radius_factor <= 0.0 {
            return Err(Error::Config(format!("invalid thermal parameters {params:?}")));
        }
        let mean = graph.mean_edge_length();
        let radius = params.radius_factor * if mean > 0.0 { mean } else { 1.0 };
        Ok(MetalContext {
            params,
            radius,
            temperature: vec![0.0; graph.node_count()],
            visited: vec![false; graph.node_count()],
            hash: Arc::new(SpatialHash::new(graph, radius)),
        })
    }

    pub fn temperature(&self) -> &[f64] {
        &self.temperature
    }

    pub fn set_temperature(&mut self, t: Vec<f64>) -> Result<()> {
        if t.len() != self.temperature.len() || t.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Argument("temperatures must be finite, non-negative and one per node".into()));
        }
        self.temperature = t;
        Ok(())
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    /// Number of nodes hotter than `threshold`.
    pub fn hot_area(&self, threshold: f64) -> usize {
        self.temperature.iter().filter(|&&t| t > threshold).count()
    }

    /// Adds the laser kernel centred at `center`.
    pub fn deposit_heat(&mut self, graph: &Graph, center: NodeId) {
        for (v, d) in self.hash.within(graph, graph.position(center), self.radius) {
            self.temperature[v] += heat_kernel(d, self.radius, self.params.h_max);
        }
    }

    /// One explicit diffusion step on the ring neighbourhood of `center`
    /// (outermost ring held fixed), then global decay.
    pub fn diffuse(&mut self, graph: &Graph, center: NodeId) {
        let region = graph.rings(center, self.params.diffusion_rings);
        let beta = self.params.diffusion;
        if beta > 0.0 {
            let updates: Vec<(NodeId, f64)> = region
                .iter()
                .filter(|&&(_, ring)| ring < self.params.diffusion_rings)
                .map(|&(v, _)| {
                    let tv = self.temperature[v];
                    let lap: f64 = graph.neighbors(v).iter().map(|&(w, _)| self.temperature[w] - tv).sum();
                    (v, tv + beta * lap)
                })
                .collect();
            for (v, t) in updates {
                self.temperature[v] = t;
            }
        }
        let keep = 1.0 - self.params.decay;
        if keep != 1.0 {
            self.temperature.iter_mut().for_each(|t| *t *= keep);
        }
    }

    fn visit(&mut self, graph: &Graph, v: NodeId) {
        self.visited[v] = true;
        self.deposit_heat(graph, v);
        self.diffuse(graph, v);
    }
}

impl RewardModel for MetalContext {
    fn fork(&self) -> Self {
        self.clone()
    }

    fn step(&mut self, graph: &Graph, i: usize, _from: NodeId, to: NodeId) -> StepReward {
        let gamma = self.params.discount.at(i);
        let t = self.temperature[to];
        let reward = if self.visited[to] { PENALTY } else { -gamma * t };
        let terms = StepDiagnostics {
            temperature: Some(t),
            ..Default::default()
        };
        self.visit(graph, to);
        StepReward { reward, terms }
    }

    fn jump(&mut self, graph: &Graph, to: NodeId) {
        self.visit(graph, to);
    }
}

/// Mode-dispatching reward context used by the planner.
#[derive(Debug, Clone)]
pub enum RewardContext {
    Wireframe(WireframeContext),
    Ccf(CcfContext),
    Metal(MetalContext),
}

impl RewardContext {
    pub fn mode(&self) -> CoverageMode {
        match self {
            RewardContext::Wireframe(_) => CoverageMode::Wireframe,
            RewardContext::Ccf(_) => CoverageMode::Ccf,
            RewardContext::Metal(_) => CoverageMode::Metal,
        }
    }
}

impl RewardModel for RewardContext {
    fn fork(&self) -> Self {
        match self {
            RewardContext::Wireframe(c) => RewardContext::Wireframe(c.fork()),
            RewardContext::Ccf(c) => RewardContext::Ccf(c.fork()),
            RewardContext::Metal(c) => RewardContext::Metal(c.fork()),
        }
    }

    fn step(&mut self, graph: &Graph, i: usize, from: NodeId, to: NodeId) -> StepReward {
        match self {
            RewardContext::Wireframe(c) => c.step(graph, i, from, to),
            RewardContext::Ccf(c) => c.step(graph, i, from, to),
            RewardContext::Metal(c) => c.step(graph, i, from, to),
        }
    }

    fn jump(&mut self, graph: &Graph, to: NodeId) {
        match self {
            RewardContext::Wireframe(c) => c.jump(graph, to),
            RewardContext::Ccf(c) => c.jump(graph, to),
            RewardContext::Metal(c) => c.jump(graph, to),
        }
    }
}

/// Table-driven rewards `Γ(i) · table[(from, to)]` for tests and
/// harnesses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedRewards {
    pub table: HashMap<(NodeId, NodeId), f64>,
    pub discount: DiscountParams,
}

impl ScriptedRewards {
    pub fn new(entries: &[((NodeId, NodeId), f64)]) -> Self {
        ScriptedRewards {
            table: entries.iter().copied().collect(),
            discount: DiscountParams::default(),
        }
    }
}

impl RewardModel for ScriptedRewards {
    fn fork(&self) -> Self {
        self.clone()
    }

    fn step(&mut self, _graph: &Graph, i: usize, from: NodeId, to: NodeId) -> StepReward {
        let r = self.table.get(&(from, to)).copied().unwrap_or(0.0);
        StepReward {
            reward: self.discount.at(i) * r,
            terms: StepDiagnostics::default(),
        }
    }

    fn jump(&mut self, _graph: &Graph, _to: NodeId) {}
}
