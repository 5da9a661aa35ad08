//! Per-LSG deep Q-learning: ε-greedy rollouts, replay, Bellman regression
//! and convergence detection.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{advance_state, MovingState, NodeOrdering};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::qnet::{Adam, GradientSet, QNetwork};
use crate::rewards::RewardModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    /// Bellman discount.
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// Training runs for more than `min_episodes_per_ring · n` episodes…
    pub min_episodes_per_ring: usize,
    /// …and stops once the best return is unchanged for this many times n.
    pub patience_per_ring: usize,
    pub max_episodes: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_interval: usize,
    pub learning_rate: f64,
    pub updates_per_episode: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            gamma: 0.9,
            epsilon_start: 0.9,
            epsilon_decay: 0.98,
            epsilon_min: 0.05,
            min_episodes_per_ring: 10,
            patience_per_ring: 5,
            max_episodes: 500,
            batch_size: 32,
            buffer_capacity: 2000,
            target_interval: 10,
            learning_rate: 1e-3,
            updates_per_episode: 1,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.gamma < 1.0
            && (0.0..=1.0).contains(&self.epsilon_start)
            && (0.0..=1.0).contains(&self.epsilon_min)
            && self.epsilon_decay > 0.0
            && self.epsilon_decay <= 1.0
            && self.max_episodes > 0
            && self.batch_size > 0
            && self.buffer_capacity > 0
            && self.target_interval > 0
            && self.learning_rate > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid learner configuration {self:?}")));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        (self.epsilon_start * self.epsilon_decay.powi(episode as i32)).max(self.epsilon_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Arc<MovingState>,
    /// Matrix index of the node moved to; also the current index in
    /// `next_state`.
    pub action: usize,
    pub reward: f64,
    pub next_state: Arc<MovingState>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Up to `batch` distinct buffer indices, ascending.
    pub fn sample_indices(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = batch.min(self.items.len());
        let mut idx = sample(rng, self.items.len(), k).into_vec();
        idx.sort_unstable();
        idx
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }
}

/// Matrix indices reachable from `current` through nonzero channel-A
/// entries.
pub fn legal_actions(state: &MovingState, current: usize) -> Vec<usize> {
    state.open_neighbors(current)
}

/// Highest-valued index among `legal`; ties go to the lowest index.
fn argmax_over(q: &[f64], legal: &[usize]) -> usize {
    let mut best = legal[0];
    for &a in &legal[1..] {
        if q[a] > q[best] {
            best = a;
        }
    }
    best
}

/// `y = r + γ·max_{a'} Q_target(s', a')` over legal next actions; `y = r`
/// when there are none.
pub fn bellman_target(reward: f64, next_state: &MovingState, next_current: usize, target: &QNetwork, gamma: f64) -> Result<f64> {
    let legal = legal_actions(next_state, next_current);
    if legal.is_empty() {
        return Ok(reward);
    }
    let q = target.forward(next_state)?;
    let best = legal.iter().map(|&a| q[a]).fold(f64::NEG_INFINITY, f64::max);
    Ok(reward + gamma * best)
}

/// Greedy choice among legal neighbours of `current`.
pub fn select_best_neighbor(net: &QNetwork, state: &MovingState, current: usize) -> Result<Option<(usize, Option<f64>)>> {
    let legal = legal_actions(state, current);
    match legal.len() {
        0 => Ok(None),
        1 => Ok(Some((legal[0], None))),
        _ => {
            let q = net.forward(state)?;
            let a = argmax_over(&q, &legal);
            Ok(Some((a, Some(q[a]))))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub experiences: Vec<Experience>,
    pub total_reward: f64,
    /// Matrix indices visited, starting with the current index.
    pub path: Vec<usize>,
}

/// Where a rollout starts.
#[derive(Debug, Clone, Copy)]
pub struct RolloutStart<'a> {
    pub graph: &'a Graph,
    pub ordering: &'a NodeOrdering,
    pub state: &'a Arc<MovingState>,
    pub current: usize,
    pub steps: usize,
}

impl RolloutStart<'_> {
    fn node(&self, index: usize) -> Result<NodeId> {
        self.ordering
            .node_at(index)
            .ok_or_else(|| Error::Argument(format!("matrix index {index} is padding")))
    }
}

/// One ε-greedy rollout of up to `start.steps` moves on a fork of `model`.
pub fn rollout_episode<M: RewardModel>(
    net: &QNetwork,
    start: &RolloutStart,
    model: &M,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let mut ctx = model.fork();
    let mut state = Arc::clone(start.state);
    let mut cur = start.current;
    let mut ep = Episode {
        experiences: Vec::with_capacity(start.steps),
        total_reward: 0.0,
        path: vec![cur],
    };
    for i in 1..=start.steps {
        let legal = legal_actions(&state, cur);
        if legal.is_empty() {
            break;
        }
        let explore = rng.gen::<f64>() < epsilon;
        let action = if explore {
            legal[rng.gen_range(0..legal.len())]
        } else if legal.len() == 1 {
            legal[0]
        } else {
            argmax_over(&net.forward(&state)?, &legal)
        };
        let reward = ctx.step(start.graph, i, start.node(cur)?, start.node(action)?).reward;
        let next = Arc::new(advance_state(&state, cur, action)?);
        ep.experiences.push(Experience {
            state: Arc::clone(&state),
            action,
            reward,
            next_state: Arc::clone(&next),
        });
        ep.total_reward += reward;
        ep.path.push(action);
        state = next;
        cur = action;
    }
    Ok(ep)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QNetwork,
    pub episodes: usize,
    pub gradient_steps: usize,
    pub best_total: f64,
    /// Matrix-index path of the best rollout.
    pub best_path: Vec<usize>,
    /// Running maximum of the episode return after each episode.
    pub best_history: Vec<f64>,
}

/// One minibatch regression step; returns the mean squared loss.
pub fn train_step(
    net: &mut QNetwork,
    target: &QNetwork,
    opt: &mut Adam,
    buffer: &ReplayBuffer,
    config: &LearnConfig,
    grads: &mut GradientSet,
    rng: &mut ChaCha8Rng,
    episode: usize,
) -> Result<f64> {
    let idx = buffer.sample_indices(config.batch_size, rng);
    if idx.is_empty() {
        return Ok(0.0);
    }
    grads.clear();
    let scale = 1.0 / idx.len() as f64;
    let batch: Vec<&Experience> = idx.iter().map(|&k| buffer.get(k)).collect();

    // Targets: one batched pass of the frozen network over non-terminal next states.
    let legal: Vec<Vec<usize>> = batch.iter().map(|e| legal_actions(&e.next_state, e.action)).collect();
    let live: Vec<&MovingState> = batch
        .iter()
        .zip(&legal)
        .filter(|(_, l)| !l.is_empty())
        .map(|(e, _)| e.next_state.as_ref())
        .collect();
    let mut next_q = target.forward_batch(&live)?.into_iter();
    let mut ys = Vec::with_capacity(batch.len());
    for (e, l) in batch.iter().zip(&legal) {
        if l.is_empty() {
            ys.push(e.reward);
        } else {
            let q = next_q.next().expect("one pass per live state").q;
            let best = l.iter().map(|&a| q[a]).fold(f64::NEG_INFINITY, f64::max);
            ys.push(e.reward + config.gamma * best);
        }
    }

    let states: Vec<&MovingState> = batch.iter().map(|e| e.state.as_ref()).collect();
    let caches = net.forward_batch(&states)?;
    let mut loss = 0.0;
    let mut dqs = vec![vec![0.0; net.m()]; batch.len()];
    for (b, e) in batch.iter().enumerate() {
        let err = caches[b].q[e.action] - ys[b];
        loss += err * err * scale;
        dqs[b][e.action] = 2.0 * err * scale;
    }
    let dq_refs: Vec<&[f64]> = dqs.iter().map(|d| d.as_slice()).collect();
    net.backward_batch(&states, &caches, &dq_refs, grads)?;
    if !loss.is_finite() {
        return Err(Error::TrainingDivergence {
            episode,
            detail: format!("loss {loss}"),
        });
    }
    opt.step(net, grads, episode)?;
    Ok(loss)
}

/// Trains from `initial` until the best return stalls or the episode cap
/// is reached.
pub fn train_until_converged<M: RewardModel>(
    initial: &QNetwork,
    start: &RolloutStart,
    model: &M,
    config: &LearnConfig,
    rings: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if initial.m() != start.state.m() {
        return Err(Error::Argument(format!(
            "network dimension {} does not match state dimension {}",
            initial.m(),
            start.state.m()
        )));
    }
    let mut net = initial.clone();
    let mut target = net.copy_to_target();
    let mut opt = Adam::new(net.params().len(), config.learning_rate);
    let mut grads = GradientSet::zeros(net.shape());
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let min_episodes = config.min_episodes_per_ring * rings;
    let patience = config.patience_per_ring * rings;

    let mut best = f64::NEG_INFINITY;
    let mut best_path = Vec::new();
    let mut since_improved = 0usize;
    let mut history = Vec::new();
    let mut steps = 0usize;
    let mut episodes = 0usize;
    loop {
        let ep = rollout_episode(&net, start, model, config.epsilon(episodes), rng)?;
        if ep.total_reward > best {
            best = ep.total_reward;
            best_path = ep.path.clone();
            since_improved = 0;
        } else {
            since_improved += 1;
        }
        history.push(best);
        for e in ep.experiences {
            buffer.push(e);
        }
        for _ in 0..config.updates_per_episode {
            train_step(&mut net, &target, &mut opt, &buffer, config, &mut grads, rng, episodes)?;
            steps += 1;
            if steps.is_multiple_of(config.target_interval) {
                target = net.copy_to_target();
            }
        }
        episodes += 1;
        let converged = episodes > min_episodes && since_improved >= patience;
        if converged || episodes >= config.max_episodes {
            break;
        }
    }
    Ok(TrainOutcome {
        net,
        episodes,
        gradient_steps: steps,
        best_total: best,
        best_path,
        best_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{build_state, state_dim, History};
    use crate::graph::extract_lsg;
    use crate::qnet::NetShape;
    use crate::rewards::ScriptedRewards;
    use rand::SeedableRng;

    fn star(k: usize) -> Graph {
        let mut pos = vec![[0.0, 0.0, 0.0]];
        let mut edges = Vec::new();
        for j in 0..k {
            let t = j as f64 * std::f64::consts::TAU / k as f64;
            pos.push([t.cos(), t.sin(), 0.0]);
            edges.push((0, j + 1));
        }
        Graph::new(pos, &edges).unwrap()
    }

    fn tiny_shape(m: usize) -> NetShape {
        NetShape {
            m,
            e2e1: 2,
            e2e2: 2,
            e2n: 2,
            hidden: 8,
        }
    }

    struct Setup {
        graph: Graph,
        ordering: NodeOrdering,
        state: Arc<MovingState>,
        current: usize,
    }

    fn setup(graph: Graph, center: NodeId, rings: usize) -> Setup {
        let lsg = extract_lsg(&graph, center, rings).unwrap();
        let ordering = NodeOrdering::by_id(&lsg, state_dim(rings)).unwrap();
        let state = Arc::new(build_state(&graph, &lsg, &ordering, &History::start(center), |_| true).unwrap());
        let current = ordering.index_of(center).unwrap();
        Setup {
            graph,
            ordering,
            state,
            current,
        }
    }

    #[test]
    fn legal_actions_follow_nonzero_entries() {
        let s = setup(star(3), 0, 1);
        assert_eq!(legal_actions(&s.state, s.current).len(), 3);
        let mut st = (*s.state).clone();
        for a in [1, 2, 3] {
            st = advance_state(&st, 0, a).unwrap();
        }
        assert!(legal_actions(&st, 0).is_empty());
    }

    #[test]
    fn bellman_cases() {
        let shape = tiny_shape(50);
        let mut net = QNetwork::zeros(shape).unwrap();
        let s = setup(star(3), 0, 1);
        // terminal
        let leaf = advance_state(&s.state, 0, 1).unwrap();
        assert_eq!(bellman_target(1.0, &leaf, 1, &net, 0.9).unwrap(), 1.0);
        // constant Q = 2 via the output bias
        for b in net.segment_mut(crate::qnet::Segment::Fc2Bias) {
            *b = 2.0;
        }
        let y = bellman_target(1.0, &s.state, 0, &net, 0.9).unwrap();
        assert!((y - 2.8).abs() < 1e-12);
        let zero = QNetwork::zeros(shape).unwrap();
        assert_eq!(bellman_target(-1000.0, &s.state, 0, &zero, 0.9).unwrap(), -1000.0);
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let s = setup(star(3), 0, 1);
        let net = QNetwork::zeros(tiny_shape(50)).unwrap();
        let model = ScriptedRewards::default();
        let start = RolloutStart {
            graph: &s.graph,
            ordering: &s.ordering,
            state: &s.state,
            current: s.current,
            steps: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            let ep = rollout_episode(&net, &start, &model, 1.0, &mut rng).unwrap();
            counts[ep.path[1] - 1] += 1;
        }
        let expected = n as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square with 2 degrees of freedom: p = 0.01 at 9.21
        assert!(chi2 < 9.21, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn greedy_rollout_deterministic_and_full_length() {
        // A 7-node path has no dead ends within 6 steps from one end.
        let pos: Vec<[f64; 3]> = (0..7).map(|k| [k as f64, 0.0, 0.0]).collect();
        let edges: Vec<(usize, usize)> = (0..6).map(|k| (k, k + 1)).collect();
        let g = Graph::new(pos, &edges).unwrap();
        let s = setup(g, 0, 6);
        let net = QNetwork::init(tiny_shape(s.state.m()), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let start = RolloutStart {
            graph: &s.graph,
            ordering: &s.ordering,
            state: &s.state,
            current: s.current,
            steps: 6,
        };
        let model = ScriptedRewards::default();
        let a = rollout_episode(&net, &start, &model, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = rollout_episode(&net, &start, &model, 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.experiences.len(), 6);
    }

    #[test]
    fn dead_end_truncates() {
        let s = setup(star(3), 1, 2);
        let net = QNetwork::zeros(tiny_shape(s.state.m())).unwrap();
        let start = RolloutStart {
            graph: &s.graph,
            ordering: &s.ordering,
            state: &s.state,
            current: s.current,
            steps: 5,
        };
        let ep = rollout_episode(&net, &start, &ScriptedRewards::default(), 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // 1 -> 0 -> leaf, then dead end
        assert_eq!(ep.experiences.len(), 2);
    }

    #[test]
    fn best_neighbor_rules() {
        let s = setup(star(3), 0, 1);
        let mut net = QNetwork::zeros(tiny_shape(50)).unwrap();
        // tie -> lowest index
        let (a, _) = select_best_neighbor(&net, &s.state, s.current).unwrap().unwrap();
        assert_eq!(a, 1);
        // Q maximal at a padding index still yields a neighbour
        net.segment_mut(crate::qnet::Segment::Fc2Bias)[40] = 100.0;
        net.segment_mut(crate::qnet::Segment::Fc2Bias)[3] = 1.0;
        let (a, q) = select_best_neighbor(&net, &s.state, s.current).unwrap().unwrap();
        assert_eq!((a, q), (3, Some(1.0)));
        // single legal neighbour regardless of Q
        let leafy = setup(star(1), 0, 1);
        let (a, q) = select_best_neighbor(&net, &leafy.state, leafy.current).unwrap().unwrap();
        assert_eq!((a, q), (1, None));
    }

    #[test]
    fn training_caps_and_monotone_best() {
        let s = setup(star(4), 0, 1);
        let net = QNetwork::init(tiny_shape(s.state.m()), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let model = ScriptedRewards::new(&[((0, 3), 1.0), ((0, 1), -1.0)]);
        let start = RolloutStart {
            graph: &s.graph,
            ordering: &s.ordering,
            state: &s.state,
            current: s.current,
            steps: 1,
        };
        let config = LearnConfig {
            batch_size: 8,
            ..LearnConfig::default()
        };
        let out = train_until_converged(&net, &start, &model, &config, 1, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert!(out.episodes > 10 && out.episodes <= 500);
        assert!(out.best_history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(out.best_total, 1.0);
        let capped = LearnConfig {
            max_episodes: 7,
            ..config
        };
        let out = train_until_converged(&net, &start, &model, &capped, 1, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(out.episodes, 7);
    }

    #[test]
    fn training_learns_the_best_neighbor() {
        let s = setup(star(4), 0, 1);
        let net = QNetwork::init(tiny_shape(s.state.m()), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let model = ScriptedRewards::new(&[((0, 1), -1.0), ((0, 2), -0.5), ((0, 3), 1.0), ((0, 4), 0.0)]);
        let start = RolloutStart {
            graph: &s.graph,
            ordering: &s.ordering,
            state: &s.state,
            current: s.current,
            steps: 1,
        };
        let config = LearnConfig {
            min_episodes_per_ring: 200,
            learning_rate: 1e-2,
            ..LearnConfig::default()
        };
        let out = train_until_converged(&net, &start, &model, &config, 1, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let (a, _) = select_best_neighbor(&out.net, &s.state, s.current).unwrap().unwrap();
        assert_eq!(s.ordering.node_at(a), Some(3));
        // identical seeds reproduce the trained parameters exactly
        let again = train_until_converged(&net, &start, &model, &config, 1, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(out.net, again.net);
    }

    #[test]
    fn replay_buffer_ring_and_sampling() {
        let st = Arc::new(MovingState::from_entries(4, 2, Default::default()).unwrap());
        let mut buf = ReplayBuffer::new(3);
        for k in 0..5 {
            buf.push(Experience {
                state: Arc::clone(&st),
                action: 1,
                reward: k as f64,
                next_state: Arc::clone(&st),
            });
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| buf.get(i).reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
        let idx = buf.sample_indices(10, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(idx, vec![0, 1, 2]);
    }
}
