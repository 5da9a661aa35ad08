//! Comparison planners: exhaustive LSG search, greedy steps, DFS with
//! backtracking, and raster scanning for grids.

use crate::encoding::{advance_state, MovingState};
use crate::graph::{CoverageMode, CoverageState, Graph, Move, NodeId};
use crate::learner::{legal_actions, RolloutStart};
use crate::planner::{edge_open, jump_target, PlanConfig};
use crate::rewards::{RewardContext, RewardModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BfsResult {
    /// Best path, excluding the start node.
    pub best_path: Vec<NodeId>,
    /// Its return `Σ Γ(i)·r_i`.
    pub best_reward: f64,
    /// Number of complete paths evaluated.
    pub explored: usize,
}

struct Search<'s, 'a> {
    start: &'s RolloutStart<'a>,
    path: Vec<NodeId>,
    best: Option<(Vec<NodeId>, f64)>,
    explored: usize,
}

impl Search<'_, '_> {
    fn node(&self, index: usize) -> Result<NodeId> {
        self.start
            .ordering
            .node_at(index)
            .ok_or_else(|| Error::Argument(format!("matrix index {index} is padding")))
    }

    fn visit<M: RewardModel>(&mut self, state: &MovingState, cur: usize, i: usize, ctx: &M, total: f64) -> Result<()> {
        let legal = if i > self.start.steps {
            Vec::new()
        } else {
            legal_actions(state, cur)
        };
        if legal.is_empty() {
            self.explored += 1;
            let better = match &self.best {
                None => true,
                Some((p, b)) => total > *b || (total == *b && self.path < *p),
            };
            if better {
                self.best = Some((self.path.clone(), total));
            }
            return Ok(());
        }
        for a in legal {
            let (from, to) = (self.node(cur)?, self.node(a)?);
            let mut c = ctx.clone();
            let r = c.step(self.start.graph, i, from, to).reward;
            let next = advance_state(state, cur, a)?;
            self.path.push(to);
            self.visit(&next, a, i + 1, &c, total + r)?;
            self.path.pop();
        }
        Ok(())
    }
}

/// Enumerates every maximal legal path of up to `start.steps` moves and
/// returns the best, optionally restricted to paths whose first move goes
/// to `first`. `None` when no such path exists.
pub fn bfs_search<M: RewardModel>(start: &RolloutStart, model: &M, first: Option<NodeId>) -> Result<Option<BfsResult>> {
    let mut search = Search {
        start,
        path: Vec::new(),
        best: None,
        explored: 0,
    };
    let state: &MovingState = start.state;
    let root = model.fork();
    match first {
        None => {
            if legal_actions(state, start.current).is_empty() {
                return Ok(None);
            }
            search.visit(state, start.current, 1, &root, 0.0)?;
        }
        Some(v) => {
            let Some(a) = start.ordering.index_of(v) else {
                return Ok(None);
            };
            if !legal_actions(state, start.current).contains(&a) {
                return Ok(None);
            }
            let mut c = root.clone();
            let r = c.step(start.graph, 1, search.node(start.current)?, v).reward;
            let next = advance_state(state, start.current, a)?;
            search.path.push(v);
            search.visit(&next, a, 2, &c, r)?;
        }
    }
    Ok(search.best.map(|(best_path, best_reward)| BfsResult {
        best_path,
        best_reward,
        explored: search.explored,
    }))
}

/// First node of the best enumerated path; ties go to the lexicographically
/// smallest path.
pub fn bfs_best_next<M: RewardModel>(start: &RolloutStart, model: &M) -> Result<Option<(NodeId, BfsResult)>> {
    Ok(bfs_search(start, model, None)?.map(|r| (r.best_path[0], r)))
}

/// Return of following `path` (excluding the start node) from `start`.
pub fn path_return<M: RewardModel>(start: &RolloutStart, model: &M, path: &[NodeId]) -> Result<f64> {
    let mut ctx = model.fork();
    let mut state = start.state.as_ref().clone();
    let mut cur = start.current;
    let mut total = 0.0;
    for (k, &v) in path.iter().enumerate() {
        let a = start
            .ordering
            .index_of(v)
            .filter(|a| legal_actions(&state, cur).contains(a))
            .ok_or_else(|| Error::IllegalAction(cur, start.ordering.index_of(v).unwrap_or(usize::MAX)))?;
        let from = start.ordering.node_at(cur).expect("current index is real");
        total += ctx.step(start.graph, k + 1, from, v).reward;
        state = advance_state(&state, cur, a)?;
        cur = a;
    }
    Ok(total)
}

/// Legal next node with the best one-step reward; ties go to the lowest id.
pub fn greedy_next<M: RewardModel>(start: &RolloutStart, model: &M) -> Result<Option<NodeId>> {
    let from = start
        .ordering
        .node_at(start.current)
        .ok_or_else(|| Error::Argument("current index is padding".into()))?;
    let mut best: Option<(NodeId, f64)> = None;
    for a in legal_actions(start.state, start.current) {
        let v = start.ordering.node_at(a).expect("legal actions index real nodes");
        let r = model.fork().step(start.graph, 1, from, v).reward;
        let better = match best {
            None => true,
            Some((bv, br)) => r > br || (r == br && v < bv),
        };
        if better {
            best = Some((v, r));
        }
    }
    Ok(best.map(|(v, _)| v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfsResult {
    /// `(node, jump)` sequence, starting with the start node.
    pub steps: Vec<(NodeId, bool)>,
    /// Budget ran out before coverage completed.
    pub partial: bool,
    pub expansions: usize,
    pub backtracks: usize,
}

struct Frame {
    node: NodeId,
    jump: bool,
    ctx: RewardContext,
    cov: CoverageState,
    candidates: Vec<NodeId>,
    next: usize,
}

/// Open neighbours of `v` by descending one-step reward, ties by lowest id.
fn ranked_moves(graph: &Graph, v: NodeId, ctx: &RewardContext, cov: &CoverageState) -> Vec<NodeId> {
    let mut moves: Vec<(NodeId, f64)> = graph
        .neighbors(v)
        .iter()
        .filter(|&&(_, e)| edge_open(graph, cov, e))
        .map(|&(w, _)| (w, ctx.fork().step(graph, 1, v, w).reward))
        .collect();
    moves.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    moves.dedup_by_key(|m| m.0);
    moves.into_iter().map(|(w, _)| w).collect()
}

fn component_has_uncovered(graph: &Graph, comp: &[usize], v: NodeId, cov: &CoverageState) -> bool {
    match cov.mode {
        CoverageMode::Metal => (0..graph.node_count()).any(|u| comp[u] == comp[v] && !cov.node_visited(u)),
        _ => graph
            .edges()
            .iter()
            .enumerate()
            .any(|(e, edge)| comp[edge.a] == comp[v] && cov.edge_visits(e) == 0),
    }
}

/// Whole-graph depth-first search over continuous toolpaths. Moves are tried
/// in order of immediate reward; a node with no open move while its
/// component is still uncovered is a dead end and triggers backtracking.
/// Exhausted components are left by a jump. Stops after `budget` expansions.
pub fn dfs_backtrack_plan(graph: &Graph, config: &PlanConfig, start: NodeId, budget: usize) -> Result<DfsResult> {
    if start >= graph.node_count() {
        return Err(Error::Argument(format!("start node {start} does not exist")));
    }
    let mut comp = vec![0usize; graph.node_count()];
    for (k, c) in graph.components().iter().enumerate() {
        for &v in c {
            comp[v] = k;
        }
    }
    let mut ctx = config.reward_context(graph)?;
    let mut cov = CoverageState::new(graph, config.mode);
    ctx.jump(graph, start);
    cov.apply(Move::Node(start))?;
    let candidates = ranked_moves(graph, start, &ctx, &cov);
    let mut frames = vec![Frame {
        node: start,
        jump: true,
        ctx,
        cov,
        candidates,
        next: 0,
    }];
    let mut expansions = 0usize;
    let mut backtracks = 0usize;
    let mut partial = false;
    let mut best_partial: Vec<(NodeId, bool)> = vec![(start, true)];

    loop {
        let top = frames.last_mut().expect("search stack is never empty here");
        if top.cov.is_complete() {
            break;
        }
        if top.next < top.candidates.len() {
            if expansions >= budget {
                partial = true;
                break;
            }
            expansions += 1;
            let w = top.candidates[top.next];
            top.next += 1;
            let from = top.node;
            let mut ctx = top.ctx.clone();
            let mut cov = top.cov.clone();
            let edge = graph.edge_between(from, w).expect("candidates are neighbours");
            ctx.step(graph, 1, from, w);
            if config.mode != CoverageMode::Metal {
                cov.apply(Move::Edge(edge))?;
            }
            cov.apply(Move::Node(w))?;
            let mut frame = Frame {
                node: w,
                jump: false,
                candidates: ranked_moves(graph, w, &ctx, &cov),
                ctx,
                cov,
                next: 0,
            };
            if !frame.cov.is_complete() && !component_has_uncovered(graph, &comp, w, &frame.cov) {
                // Component done: continue elsewhere through a jump.
                if let Some(t) = jump_target(graph, &frame.cov, w) {
                    frames.push(frame);
                    let prev = frames.last().expect("just pushed");
                    let mut ctx = prev.ctx.clone();
                    let mut cov = prev.cov.clone();
                    ctx.jump(graph, t);
                    cov.apply(Move::Node(t))?;
                    frame = Frame {
                        node: t,
                        jump: true,
                        candidates: ranked_moves(graph, t, &ctx, &cov),
                        ctx,
                        cov,
                        next: 0,
                    };
                }
            }
            frames.push(frame);
            if frames.len() > best_partial.len() {
                best_partial = frames.iter().map(|f| (f.node, f.jump)).collect();
            }
        } else {
            if frames.len() == 1 {
                partial = true;
                break;
            }
            frames.pop();
            // Undo any jump frame together with the move that led to it.
            while frames.len() > 1 && frames.last().is_some_and(|f| f.jump) {
                frames.pop();
            }
            backtracks += 1;
        }
    }
    let steps = if partial {
        best_partial
    } else {
        frames.iter().map(|f| (f.node, f.jump)).collect()
    };
    Ok(DfsResult {
        steps,
        partial,
        expansions,
        backtracks,
    })
}

/// Boustrophedon raster order: rows by ascending y, alternating direction
/// in x. Rows are nodes sharing y to within 1e-6.
pub fn zigzag_order(graph: &Graph) -> Vec<NodeId> {
    let q = |x: f64| (x * 1e6).round() as i64;
    let mut nodes: Vec<(i64, i64, NodeId)> = (0..graph.node_count())
        .map(|v| {
            let p = graph.position(v);
            (q(p[1]), q(p[0]), v)
        })
        .collect();
    nodes.sort();
    let mut out = Vec::with_capacity(nodes.len());
    let mut row = 0usize;
    let mut k = 0;
    while k < nodes.len() {
        let y = nodes[k].0;
        let end = nodes[k..].iter().position(|n| n.0 != y).map_or(nodes.len(), |p| k + p);
        let mut ids: Vec<NodeId> = nodes[k..end].iter().map(|n| n.2).collect();
        if row % 2 == 1 {
            ids.reverse();
        }
        out.extend(ids);
        row += 1;
        k = end;
    }
    out
}

/// Marks consecutive non-adjacent nodes of an order as jumps.
pub fn order_to_steps(graph: &Graph, order: &[NodeId]) -> Vec<(NodeId, bool)> {
    order
        .iter()
        .enumerate()
        .map(|(k, &v)| (v, k == 0 || graph.edge_between(order[k - 1], v).is_none()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{build_state, pattern_ordering, History, NodeOrdering};
    use crate::graph::extract_lsg;
    use crate::planner::replay_toolpath;
    use crate::rewards::ScriptedRewards;
    use std::sync::Arc;

    /// Hexagon-free 6-node graph: 0 connects to 1 and 2; 1-3, 2-3, 2-4,
    /// 3-5, 4-5.
    fn six() -> Graph {
        Graph::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                [1.0, -1.0, 0.0],
                [2.0, 0.0, 0.0],
                [2.0, -2.0, 0.0],
                [3.0, -1.0, 0.0],
            ],
            &[(0, 1), (0, 2), (1, 3), (2, 3), (2, 4), (3, 5), (4, 5)],
        )
        .unwrap()
    }

    fn setup(g: &Graph, center: NodeId, rings: usize) -> (NodeOrdering, Arc<MovingState>) {
        let lsg = extract_lsg(g, center, rings).unwrap();
        let h = History::start(center);
        let ord = pattern_ordering(g, &lsg, &h, 50 * rings).unwrap();
        let st = build_state(g, &lsg, &ord, &h, |_| true).unwrap();
        (ord, Arc::new(st))
    }

    fn scripted() -> ScriptedRewards {
        let mut table = Vec::new();
        for (a, b, r) in [
            (0, 1, 1.0),
            (0, 2, 0.5),
            (1, 3, -1.0),
            (2, 3, 2.0),
            (2, 4, 0.0),
            (3, 2, 0.0),
            (3, 1, 0.0),
            (4, 2, 0.0),
        ] {
            table.push(((a, b), r));
        }
        ScriptedRewards::new(&table)
    }

    #[test]
    fn bfs_matches_hand_enumeration() {
        // Two-step paths from 0 and their returns Γ(1) r1 + Γ(2) r2:
        //   0-1-3: 1.0 - Γ(2)        0-2-3: 0.5 + 2 Γ(2)
        //   0-2-4: 0.5
        // With Γ(2) ≈ 0.557 the best path is 0-2-3.
        let g = six();
        let (ord, st) = setup(&g, 0, 2);
        let start = RolloutStart {
            graph: &g,
            ordering: &ord,
            state: &st,
            current: ord.index_of(0).unwrap(),
            steps: 2,
        };
        let model = scripted();
        let g2 = model.discount.at(2);
        let (next, res) = bfs_best_next(&start, &model).unwrap().unwrap();
        assert_eq!(next, 2);
        assert_eq!(res.best_path, vec![2, 3]);
        assert!((res.best_reward - (0.5 + 2.0 * g2)).abs() < 1e-12);
        assert_eq!(res.explored, 3);
        let only_one = bfs_search(&start, &model, Some(1)).unwrap().unwrap();
        assert!((only_one.best_reward - (1.0 - g2)).abs() < 1e-12);
        assert!((path_return(&start, &model, &[2, 4]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_step_bfs_is_greedy() {
        let g = six();
        let (ord, st) = setup(&g, 0, 1);
        let start = RolloutStart {
            graph: &g,
            ordering: &ord,
            state: &st,
            current: ord.index_of(0).unwrap(),
            steps: 1,
        };
        let model = scripted();
        assert_eq!(greedy_next(&start, &model).unwrap(), Some(1));
        assert_eq!(bfs_best_next(&start, &model).unwrap().unwrap().0, 1);
    }

    #[test]
    fn greedy_ties_to_lowest_id() {
        let g = six();
        let (ord, st) = setup(&g, 0, 1);
        let start = RolloutStart {
            graph: &g,
            ordering: &ord,
            state: &st,
            current: ord.index_of(0).unwrap(),
            steps: 1,
        };
        let model = ScriptedRewards::new(&[((0, 1), 0.3), ((0, 2), 0.3)]);
        assert_eq!(greedy_next(&start, &model).unwrap(), Some(1));
    }

    #[test]
    fn bfs_is_optimal_and_bounded() {
        // Triangular patch, CCF rewards: re-scan every enumerated path.
        let mut pos = Vec::new();
        let mut edges = Vec::new();
        let h = 3f64.sqrt() / 2.0;
        for y in 0..4 {
            for x in 0..4 {
                pos.push([x as f64 + 0.5 * y as f64, y as f64 * h, 0.0]);
                let v = y * 4 + x;
                if x + 1 < 4 {
                    edges.push((v, v + 1));
                }
                if y + 1 < 4 {
                    edges.push((v, v + 4));
                    if x > 0 {
                        edges.push((v, v + 3));
                    }
                }
            }
        }
        let g = Graph::new(pos, &edges).unwrap();
        let cfg = PlanConfig::for_mode(CoverageMode::Ccf);
        let ctx = cfg.reward_context(&g).unwrap();
        let (ord, st) = setup(&g, 5, 3);
        let start = RolloutStart {
            graph: &g,
            ordering: &ord,
            state: &st,
            current: ord.index_of(5).unwrap(),
            steps: 3,
        };
        let res = bfs_search(&start, &ctx, None).unwrap().unwrap();
        assert!(res.explored <= g.max_degree().pow(3));
        for first in g.neighbors(5).iter().map(|&(w, _)| w) {
            let r = bfs_search(&start, &ctx, Some(first)).unwrap().unwrap();
            assert!(r.best_reward <= res.best_reward);
            assert!((path_return(&start, &ctx, &r.best_path).unwrap() - r.best_reward).abs() < 1e-12);
        }
    }

    #[test]
    fn dfs_on_tree_needs_no_backtracking() {
        // A path graph is a tree that one continuous stroke covers.
        let g = Graph::new(
            (0..5).map(|k| [k as f64, 0.0, 0.0]).collect(),
            &[(0, 1), (1, 2), (2, 3), (3, 4)],
        )
        .unwrap();
        let cfg = PlanConfig::for_mode(CoverageMode::Wireframe);
        let r = dfs_backtrack_plan(&g, &cfg, 0, 1000).unwrap();
        assert!(!r.partial);
        assert_eq!(r.backtracks, 0);
        assert_eq!(r.steps.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn dfs_escapes_hand_built_trap() {
        // Triangle 0-1-2 with pendant 3 on node 2, visited once each. From 0
        // the cooler (farther) neighbour 2 is tried first, but every path
        // through it strands a node; backtracking finds 0-1-2-3.
        let g = Graph::new(
            vec![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.5, 0.0, 0.0], [3.0, 0.0, 0.0]],
            &[(0, 1), (1, 2), (0, 2), (2, 3)],
        )
        .unwrap();
        let cfg = PlanConfig::for_mode(CoverageMode::Metal);
        let r = dfs_backtrack_plan(&g, &cfg, 0, 1000).unwrap();
        assert!(!r.partial);
        assert!(r.backtracks >= 1);
        assert_eq!(r.steps, vec![(0, true), (1, false), (2, false), (3, false)]);
        let replay = replay_toolpath(&g, &cfg, &r.steps).unwrap();
        assert!(replay.summary.complete);
    }

    #[test]
    fn dfs_budget_flags_partial() {
        let g = six();
        let cfg = PlanConfig::for_mode(CoverageMode::Ccf);
        let r = dfs_backtrack_plan(&g, &cfg, 0, 2).unwrap();
        assert!(r.partial);
        assert_eq!(r.expansions, 2);
    }

    #[test]
    fn dfs_ccf_respects_coverage() {
        let g = six();
        let cfg = PlanConfig::for_mode(CoverageMode::Ccf);
        let r = dfs_backtrack_plan(&g, &cfg, 0, 100_000).unwrap();
        assert!(!r.partial);
        let replay = replay_toolpath(&g, &cfg, &r.steps).unwrap();
        assert!(replay.summary.complete);
    }

    #[test]
    fn dfs_jumps_between_components() {
        let g = Graph::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0], [6.0, 0.0, 0.0]],
            &[(0, 1), (2, 3)],
        )
        .unwrap();
        let cfg = PlanConfig::for_mode(CoverageMode::Ccf);
        let r = dfs_backtrack_plan(&g, &cfg, 0, 1000).unwrap();
        assert_eq!(r.steps, vec![(0, true), (1, false), (2, true), (3, false)]);
    }

    #[test]
    fn zigzag_alternates_rows() {
        let mut pos = Vec::new();
        let mut edges = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                pos.push([x as f64, y as f64, 0.0]);
                if x < 2 {
                    edges.push((y * 3 + x, y * 3 + x + 1));
                }
                if y < 2 {
                    edges.push((y * 3 + x, (y + 1) * 3 + x));
                }
            }
        }
        let g = Graph::new(pos, &edges).unwrap();
        let order = zigzag_order(&g);
        assert_eq!(order, vec![0, 1, 2, 5, 4, 3, 6, 7, 8]);
        assert!(order_to_steps(&g, &order).iter().skip(1).all(|s| !s.1));
    }
}
