//! Whole-graph planning: the LSG loop, prior reuse, jumps and restarts.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{bfs_best_next, bfs_search, greedy_next};
use crate::collision::{HeadShape, COLLISION_PENALTY};
use crate::encoding::{build_state, pattern_ordering, state_dim, History, MovingState, NodeOrdering};
use crate::fea::grounded_nodes;
use crate::graph::{extract_lsg, CoverageMode, CoverageState, EdgeId, Graph, Move, NodeId, Toolpath, ToolpathStep};
use crate::learner::{legal_actions, select_best_neighbor, train_until_converged, LearnConfig, RolloutStart};
use crate::prior::{PriorEntry, PriorStore, DEFAULT_PRIOR_COUNT};
use crate::qnet::NetShape;
use crate::rewards::{
    CcfContext, CcfParams, MetalContext, MetalParams, RewardContext, RewardModel, WireframeContext, WireframeParams,
};
use crate::{Error, Result};

/// Turning angles above this are sharp turns for fiber placement.
pub const SHARP_TURN: f64 = 2.0 * std::f64::consts::FRAC_PI_3;

/// Sharp-turn test with a 1e-9 rad allowance so that exact lattice angles of
/// 2π/3 are not counted through rounding.
pub fn is_sharp(alpha: f64) -> bool {
    alpha > SHARP_TURN + 1e-9
}

/// Environment variable bounding restart parallelism.
pub const THREADS_ENV: &str = "TOOLPATH_THREADS";

/// Channel widths of the Q-network; `m` follows from the ring count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub e2e1: usize,
    pub e2e2: usize,
    pub e2n: usize,
    pub hidden: usize,
}

impl Default for Widths {
    fn default() -> Self {
        let s = NetShape::standard(1);
        Widths {
            e2e1: s.e2e1,
            e2e2: s.e2e2,
            e2n: s.e2n,
            hidden: s.hidden,
        }
    }
}

impl Widths {
    pub fn shape(&self, m: usize) -> NetShape {
        NetShape {
            m,
            e2e1: self.e2e1,
            e2e2: self.e2e2,
            e2n: self.e2n,
            hidden: self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub mode: CoverageMode,
    /// LSG ring count `n`.
    pub rings: usize,
    /// Prior store capacity `K`.
    pub priors: usize,
    /// Seed training from the nearest stored prior; otherwise each LSG
    /// starts from the network trained at the previous one.
    pub prior_reuse: bool,
    pub widths: Widths,
    pub learn: LearnConfig,
    pub wireframe: WireframeParams,
    pub ccf: CcfParams,
    pub metal: MetalParams,
    pub seed: u64,
    pub restarts: usize,
    /// Commit forced moves (a single legal action) without training.
    pub skip_trivial: bool,
    /// Stop after this many toolpath steps.
    pub max_steps: Option<usize>,
    /// Fixed start node instead of sampling from the mode's start set.
    pub start_node: Option<NodeId>,
    /// Order LSG nodes by the pinned planar embedding rather than by id.
    pub pattern_encoding: bool,
    /// Include the two previous adjacency channels.
    pub use_history: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            mode: CoverageMode::Ccf,
            rings: 6,
            priors: DEFAULT_PRIOR_COUNT,
            prior_reuse: true,
            widths: Widths::default(),
            learn: LearnConfig::default(),
            wireframe: WireframeParams::default(),
            ccf: CcfParams::default(),
            metal: MetalParams::default(),
            seed: 0,
            restarts: 1,
            skip_trivial: true,
            max_steps: None,
            start_node: None,
            pattern_encoding: true,
            use_history: true,
        }
    }
}

impl PlanConfig {
    pub fn for_mode(mode: CoverageMode) -> Self {
        PlanConfig {
            mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rings == 0 {
            return Err(Error::Config("LSG ring count must be at least 1".into()));
        }
        if self.priors == 0 {
            return Err(Error::Config("prior count must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restart budget must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("step budget must be positive".into()));
        }
        self.shape().validate()?;
        self.learn.validate()
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.rings)
    }

    pub fn shape(&self) -> NetShape {
        self.widths.shape(self.state_dim())
    }

    pub fn reward_context(&self, graph: &Graph) -> Result<RewardContext> {
        Ok(match self.mode {
            CoverageMode::Wireframe => {
                RewardContext::Wireframe(WireframeContext::new(graph, self.wireframe, HeadShape::default())?)
            }
            CoverageMode::Ccf => RewardContext::Ccf(CcfContext::new(graph, self.ccf)),
            CoverageMode::Metal => RewardContext::Metal(MetalContext::new(graph, self.metal)?),
        })
    }
}

/// Aggregate quality measures of a toolpath.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub steps: usize,
    pub jumps: usize,
    pub total_length: f64,
    pub sharp_turns: usize,
    pub complete: bool,
    /// Stopped by the step budget before coverage finished.
    pub truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub peak_u_max: Option<f64>,
    #[serde(default)]
    pub collisions: usize,
    #[serde(default)]
    pub floating_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub peak_hot_area: Option<usize>,
    pub episodes: usize,
}

impl PlanSummary {
    pub fn feasible(&self) -> bool {
        (self.complete || self.truncated) && self.collisions == 0
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub mode: CoverageMode,
    pub seed: u64,
    pub start: NodeId,
    pub toolpath: Toolpath,
    pub summary: PlanSummary,
    /// Wall-clock milliseconds spent deciding each step.
    pub wall_ms: Vec<f64>,
    /// Final temperature field in metal mode.
    pub temperature: Option<Vec<f64>>,
}

/// Whether edge `e` may still be entered under the mode's coverage rules.
pub fn edge_open(graph: &Graph, cov: &CoverageState, e: EdgeId) -> bool {
    match cov.mode {
        CoverageMode::Wireframe | CoverageMode::Ccf => cov.edge_open(e),
        CoverageMode::Metal => {
            let edge = graph.edge(e);
            !(cov.node_visited(edge.a) && cov.node_visited(edge.b))
        }
    }
}

/// Nodes a run may start from: grounded nodes for wire-frames, odd-degree
/// nodes (else all) for fiber paths, boundary nodes for metal grids.
pub fn start_set(graph: &Graph, mode: CoverageMode) -> Vec<NodeId> {
    let all = (0..graph.node_count()).filter(|&v| graph.degree(v) > 0 || mode == CoverageMode::Metal);
    let set: Vec<NodeId> = match mode {
        CoverageMode::Wireframe => {
            let g = grounded_nodes(graph);
            all.filter(|&v| g[v]).collect()
        }
        CoverageMode::Ccf => {
            let odd: Vec<NodeId> = all.clone().filter(|&v| graph.degree(v) % 2 == 1).collect();
            if odd.is_empty() {
                all.collect()
            } else {
                odd
            }
        }
        CoverageMode::Metal => {
            let boundary: Vec<NodeId> = all.clone().filter(|&v| graph.degree(v) < 4).collect();
            if boundary.is_empty() {
                all.collect()
            } else {
                boundary
            }
        }
    };
    set
}

/// Where to continue after a dead end at `current`, or `None` when nothing
/// is left to cover.
pub fn jump_target(graph: &Graph, cov: &CoverageState, current: NodeId) -> Option<NodeId> {
    let here = graph.position(current);
    let dist = |v: NodeId| crate::graph::distance(here, graph.position(v));
    let pick = |cands: &mut dyn Iterator<Item = NodeId>, farthest: bool| -> Option<NodeId> {
        let mut best: Option<(NodeId, f64)> = None;
        for v in cands {
            let d = dist(v);
            let better = match best {
                None => true,
                Some((_, b)) => {
                    if farthest {
                        d > b
                    } else {
                        d < b
                    }
                }
            };
            if better {
                best = Some((v, d));
            }
        }
        best.map(|(v, _)| v)
    };
    match cov.mode {
        CoverageMode::Metal => pick(&mut (0..graph.node_count()).filter(|&v| !cov.node_visited(v)), true),
        CoverageMode::Wireframe | CoverageMode::Ccf => {
            let uncovered = |v: NodeId| graph.neighbors(v).iter().any(|&(_, e)| cov.edge_visits(e) == 0);
            let covered = |v: NodeId| graph.neighbors(v).iter().any(|&(_, e)| cov.edge_visits(e) > 0);
            pick(
                &mut (0..graph.node_count()).filter(|&v| v != current && uncovered(v) && covered(v)),
                false,
            )
            .or_else(|| pick(&mut (0..graph.node_count()).filter(|&v| uncovered(v)), false))
        }
    }
}

/// Moving state around `history.c` under the current coverage.
pub fn current_state(
    graph: &Graph,
    config: &PlanConfig,
    cov: &CoverageState,
    history: &History,
) -> Result<(NodeOrdering, MovingState)> {
    let lsg = extract_lsg(graph, history.c, config.rings)?;
    let m = config.state_dim();
    let history = if config.use_history {
        *history
    } else {
        History::start(history.c)
    };
    let ordering = if config.pattern_encoding {
        pattern_ordering(graph, &lsg, &history, m)?
    } else {
        NodeOrdering::by_id(&lsg, m)?
    };
    let state = build_state(graph, &lsg, &ordering, &history, |e| edge_open(graph, cov, e))?;
    Ok((ordering, state))
}

/// The start node a plan with this configuration begins from.
pub fn start_node(graph: &Graph, config: &PlanConfig) -> Result<NodeId> {
    sample_start(graph, config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

fn sample_start(graph: &Graph, config: &PlanConfig, rng: &mut ChaCha8Rng) -> Result<NodeId> {
    if let Some(v) = config.start_node {
        if v >= graph.node_count() {
            return Err(Error::Config(format!("start node {v} does not exist")));
        }
        return Ok(v);
    }
    let set = start_set(graph, config.mode);
    if set.is_empty() {
        return Err(Error::PlanningFailure {
            detail: format!("no valid start node for {} mode", config.mode),
            uncovered: CoverageState::new(graph, config.mode).uncovered(),
        });
    }
    Ok(set[rng.gen_range(0..set.len())])
}

/// Plans a complete toolpath with a fresh prior store.
pub fn plan_toolpath(graph: &Graph, config: &PlanConfig) -> Result<PlanResult> {
    config.validate()?;
    let mut store = PriorStore::new(config.priors, config.shape())?;
    plan_toolpath_with_store(graph, config, &mut store)
}

/// Plans a complete toolpath, reading and updating `store`.
pub fn plan_toolpath_with_store(graph: &Graph, config: &PlanConfig, store: &mut PriorStore) -> Result<PlanResult> {
    if store.shape() != config.shape() {
        return Err(Error::Config(format!(
            "prior store holds networks of shape {:?}, configuration needs {:?}",
            store.shape(),
            config.shape()
        )));
    }
    plan_with_policy(graph, config, Policy::Dqn(store))
}

/// How each non-forced step is chosen.
pub enum Policy<'a> {
    /// Train on the LSG and follow the learned Q-values.
    Dqn(&'a mut PriorStore),
    /// Best immediate reward.
    Greedy,
    /// Exhaustive enumeration of LSG paths of `rings` steps.
    Bfs,
    /// As `Dqn`, also scoring every learned choice against exhaustive search.
    Audited(&'a mut PriorStore, &'a mut Vec<DecisionAudit>),
}

/// One non-trivial decision of an audited plan.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionAudit {
    /// Index of the step this decision produced.
    pub step: usize,
    pub chosen: NodeId,
    /// Best `rings`-step return starting with the chosen move.
    pub chosen_return: f64,
    /// Best `rings`-step return over all first moves.
    pub best_return: f64,
    pub episodes: usize,
}

impl DecisionAudit {
    /// Relative shortfall of the chosen move against the optimum.
    pub fn gap(&self) -> f64 {
        (self.best_return - self.chosen_return) / self.best_return.abs().max(1e-12)
    }
}

/// The planning loop of [`plan_toolpath`] with an arbitrary step policy.
pub fn plan_with_policy(graph: &Graph, config: &PlanConfig, mut policy: Policy) -> Result<PlanResult> {
    config.validate()?;
    if graph.node_count() == 0 {
        return Err(Error::Argument("graph has no nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = sample_start(graph, config, &mut rng)?;
    let mut ctx = config.reward_context(graph)?;
    let mut cov = CoverageState::new(graph, config.mode);
    let mut toolpath = Toolpath::default();
    let mut wall_ms = Vec::new();
    let mut tracker = Tracker::new(config);

    let t0 = Instant::now();
    ctx.jump(graph, start);
    cov.apply(Move::Node(start))?;
    toolpath.push(
        graph,
        ToolpathStep {
            node: start,
            jump: true,
            reward: 0.0,
            diagnostics: Default::default(),
        },
    );
    tracker.after_step(&ctx);
    wall_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    let mut segment = vec![start];
    let mut truncated = false;
    // Without prior reuse each decision starts from the previous one's net.
    let mut last_net = None;

    while !cov.is_complete() {
        if config.max_steps.is_some_and(|b| toolpath.steps.len() >= b) {
            truncated = true;
            break;
        }
        let t0 = Instant::now();
        let current = *segment.last().expect("segment is never empty");
        let history = History::from_tail(&segment).expect("segment is never empty");
        let (ordering, state) = current_state(graph, config, &cov, &history)?;
        let here = ordering.index_of(current).expect("center is always ordered");
        let legal = legal_actions(&state, here);

        if legal.is_empty() {
            let Some(target) = jump_target(graph, &cov, current) else {
                break;
            };
            ctx.jump(graph, target);
            cov.apply(Move::Node(target))?;
            toolpath.push(
                graph,
                ToolpathStep {
                    node: target,
                    jump: true,
                    reward: 0.0,
                    diagnostics: Default::default(),
                },
            );
            tracker.after_step(&ctx);
            segment = vec![target];
            wall_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            continue;
        }

        let (action, q_value, episodes) = if legal.len() == 1 && config.skip_trivial {
            (legal[0], None, 0)
        } else {
            let state = Arc::new(state);
            let start = RolloutStart {
                graph,
                ordering: &ordering,
                state: &state,
                current: here,
                steps: config.rings,
            };
            match &mut policy {
                Policy::Dqn(store) | Policy::Audited(store, _) => {
                    let initial = match last_net.take() {
                        _ if config.prior_reuse => store.select_prior(&state, &mut rng)?,
                        Some(net) => net,
                        None => crate::qnet::QNetwork::init(config.shape(), &mut rng)?,
                    };
                    let outcome = train_until_converged(&initial, &start, &ctx, &config.learn, config.rings, &mut rng)?;
                    let (a, q) = select_best_neighbor(&outcome.net, &state, here)?.expect("legal set is nonempty");
                    if config.prior_reuse {
                        store.insert_and_merge(PriorEntry {
                            state: (*state).clone(),
                            net: outcome.net,
                        })?;
                    } else {
                        last_net = Some(outcome.net);
                    }
                    if let Policy::Audited(_, log) = &mut policy {
                        let chosen = ordering.node_at(a).expect("actions index real nodes");
                        let best = bfs_search(&start, &ctx, None)?.expect("legal set is nonempty");
                        let mine = bfs_search(&start, &ctx, Some(chosen))?.expect("chosen move is legal");
                        log.push(DecisionAudit {
                            step: toolpath.steps.len(),
                            chosen,
                            chosen_return: mine.best_reward,
                            best_return: best.best_reward,
                            episodes: outcome.episodes,
                        });
                    }
                    (a, q, outcome.episodes)
                }
                Policy::Greedy => {
                    let v = greedy_next(&start, &ctx)?.expect("legal set is nonempty");
                    (ordering.index_of(v).expect("chosen node is ordered"), None, 0)
                }
                Policy::Bfs => {
                    let (v, res) = bfs_best_next(&start, &ctx)?.expect("legal set is nonempty");
                    (ordering.index_of(v).expect("chosen node is ordered"), Some(res.best_reward), 0)
                }
            }
        };

        let next = ordering.node_at(action).expect("actions index real nodes");
        let edge = graph.edge_between(current, next).expect("actions follow edges");
        let mut step = ctx.step(graph, 1, current, next);
        step.terms.q_value = q_value;
        step.terms.episodes = episodes;
        match config.mode {
            CoverageMode::Metal => cov.apply(Move::Node(next))?,
            _ => {
                cov.apply(Move::Edge(edge))?;
                cov.apply(Move::Node(next))?;
            }
        }
        tracker.record(&step.terms);
        toolpath.push(
            graph,
            ToolpathStep {
                node: next,
                jump: false,
                reward: step.reward,
                diagnostics: step.terms,
            },
        );
        tracker.after_step(&ctx);
        segment.push(next);
        wall_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }

    let complete = cov.is_complete();
    let mut summary = summarize(graph, &toolpath, config.mode);
    summary.complete = complete;
    summary.truncated = truncated && !complete;
    tracker.finish(&mut summary);
    let temperature = match &ctx {
        RewardContext::Metal(m) => Some(m.temperature().to_vec()),
        _ => None,
    };
    Ok(PlanResult {
        mode: config.mode,
        seed: config.seed,
        start,
        toolpath,
        summary,
        wall_ms,
        temperature,
    })
}

/// Scores a given node sequence with the planner's reward context and
/// coverage rules. Each item is `(node, jump)`; the first is the start.
pub fn replay_toolpath(graph: &Graph, config: &PlanConfig, steps: &[(NodeId, bool)]) -> Result<PlanResult> {
    let Some(&(start, _)) = steps.first() else {
        return Err(Error::Argument("empty toolpath".into()));
    };
    let mut ctx = config.reward_context(graph)?;
    let mut cov = CoverageState::new(graph, config.mode);
    let mut toolpath = Toolpath::default();
    let mut tracker = Tracker::new(config);
    let mut prev = start;
    for (k, &(node, jump)) in steps.iter().enumerate() {
        if node >= graph.node_count() {
            return Err(Error::Argument(format!("node {node} does not exist")));
        }
        let (reward, diagnostics) = if k == 0 || jump {
            ctx.jump(graph, node);
            cov.apply(Move::Node(node))?;
            (0.0, Default::default())
        } else {
            let edge = graph
                .edge_between(prev, node)
                .ok_or_else(|| Error::Argument(format!("step {k}: {prev} and {node} are not adjacent")))?;
            let step = ctx.step(graph, 1, prev, node);
            if config.mode != CoverageMode::Metal {
                cov.apply(Move::Edge(edge))?;
            }
            cov.apply(Move::Node(node))?;
            tracker.record(&step.terms);
            (step.reward, step.terms)
        };
        toolpath.push(
            graph,
            ToolpathStep {
                node,
                jump: k == 0 || jump,
                reward,
                diagnostics,
            },
        );
        tracker.after_step(&ctx);
        prev = node;
    }
    let mut summary = summarize(graph, &toolpath, config.mode);
    summary.complete = cov.is_complete();
    summary.truncated = !summary.complete;
    tracker.finish(&mut summary);
    let temperature = match &ctx {
        RewardContext::Metal(m) => Some(m.temperature().to_vec()),
        _ => None,
    };
    Ok(PlanResult {
        mode: config.mode,
        seed: config.seed,
        start,
        toolpath,
        summary,
        wall_ms: Vec::new(),
        temperature,
    })
}

/// Running peaks gathered while planning.
struct Tracker {
    hot_threshold: f64,
    peak_u: Option<f64>,
    collisions: usize,
    floating: usize,
    peak_hot: Option<usize>,
}

impl Tracker {
    fn new(config: &PlanConfig) -> Self {
        Tracker {
            hot_threshold: 0.5 * config.metal.h_max,
            peak_u: None,
            collisions: 0,
            floating: 0,
            peak_hot: None,
        }
    }

    fn record(&mut self, terms: &crate::graph::StepDiagnostics) {
        if let Some(u) = terms.u_max {
            self.peak_u = Some(self.peak_u.map_or(u, |p| p.max(u)));
        }
        if terms.collision.is_some_and(|c| c <= COLLISION_PENALTY) {
            self.collisions += 1;
        } else if terms.collision.is_some() && terms.u_max.is_none() {
            self.floating += 1;
        }
    }

    fn after_step(&mut self, ctx: &RewardContext) {
        if let RewardContext::Metal(m) = ctx {
            let a = m.hot_area(self.hot_threshold);
            self.peak_hot = Some(self.peak_hot.map_or(a, |p| p.max(a)));
        }
    }

    fn finish(&self, s: &mut PlanSummary) {
        s.peak_u_max = self.peak_u;
        s.collisions = self.collisions;
        s.floating_steps = self.floating;
        s.peak_hot_area = self.peak_hot;
    }
}

/// Mode-independent totals of a toolpath.
pub fn summarize(graph: &Graph, toolpath: &Toolpath, mode: CoverageMode) -> PlanSummary {
    let sharp_turns = if mode == CoverageMode::Metal {
        0
    } else {
        toolpath.turning_angles(graph).into_iter().filter(|&a| is_sharp(a)).count()
    };
    PlanSummary {
        steps: toolpath.steps.len(),
        jumps: toolpath.jump_count(),
        total_length: toolpath.total_length,
        sharp_turns,
        episodes: toolpath.steps.iter().map(|s| s.diagnostics.episodes).sum(),
        ..Default::default()
    }
}

/// Ordering key of a run: lower is better.
fn objective(mode: CoverageMode, s: &PlanSummary) -> (f64, f64) {
    match mode {
        CoverageMode::Wireframe => (s.peak_u_max.unwrap_or(f64::INFINITY), s.floating_steps as f64),
        CoverageMode::Ccf => (s.sharp_turns as f64, s.total_length),
        CoverageMode::Metal => (s.peak_hot_area.unwrap_or(0) as f64, s.total_length),
    }
}

/// Seeds of the restart runs, derived from the base seed.
pub fn restart_seeds(config: &PlanConfig) -> Vec<u64> {
    if config.restarts == 1 {
        return vec![config.seed];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.restarts).map(|_| rng.gen()).collect()
}

/// Worker threads for restart runs, from the environment or the machine.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug)]
pub struct RestartOutcome {
    pub best: PlanResult,
    pub best_run: usize,
    /// Per-run summary, or the error that stopped the run.
    pub runs: Vec<std::result::Result<PlanSummary, String>>,
}

/// Runs independent seeded plans and keeps the best feasible one. Each run
/// starts from a copy of `store`, so results do not depend on scheduling.
pub fn plan_with_restarts(graph: &Graph, config: &PlanConfig, store: &PriorStore, threads: usize) -> Result<RestartOutcome> {
    config.validate()?;
    let seeds = restart_seeds(config);
    let threads = threads.clamp(1, seeds.len());
    let run = |seed: u64| {
        let cfg = PlanConfig {
            seed,
            ..config.clone()
        };
        let mut s = store.clone();
        plan_toolpath_with_store(graph, &cfg, &mut s)
    };
    let mut results: Vec<Option<Result<PlanResult>>> = (0..seeds.len()).map(|_| None).collect();
    if threads == 1 {
        for (k, &seed) in seeds.iter().enumerate() {
            results[k] = Some(run(seed));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let seeds = &seeds;
                    let run = &run;
                    scope.spawn(move || {
                        (t..seeds.len())
                            .step_by(threads)
                            .map(|k| (k, run(seeds[k])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (k, r) in h.join().expect("restart worker panicked") {
                    results[k] = Some(r);
                }
            }
        });
    }

    let mut best: Option<(usize, PlanResult)> = None;
    let mut runs = Vec::with_capacity(results.len());
    let mut last_uncovered = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r.expect("every run reports") {
            Ok(res) => {
                runs.push(Ok(res.summary.clone()));
                if !res.summary.feasible() {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((_, b)) => objective(config.mode, &res.summary) < objective(config.mode, &b.summary),
                };
                if better {
                    best = Some((k, res));
                }
            }
            Err(e) => {
                if let Error::PlanningFailure { uncovered, .. } = &e {
                    last_uncovered = uncovered.clone();
                }
                runs.push(Err(e.to_string()));
            }
        }
    }
    match best {
        Some((best_run, best)) => Ok(RestartOutcome { best, best_run, runs }),
        None => Err(Error::PlanningFailure {
            detail: format!(
                "all {} run(s) infeasible: {}",
                runs.len(),
                runs.iter()
                    .map(|r| match r {
                        Ok(s) => format!(
                            "complete={} collisions={} jumps={}",
                            s.complete, s.collisions, s.jumps
                        ),
                        Err(e) => e.clone(),
                    })
                    .collect::<Vec<_>>()
                    .join("; ")
            ),
            uncovered: last_uncovered,
        }),
    }
}
