//! Python bindings: graphs, planner configuration, planning and baselines.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::toolpath_rl::baselines::{dfs_backtrack_plan, order_to_steps, zigzag_order};
use ::toolpath_rl::encoding::{similarity as state_similarity, History, MovingState};
use ::toolpath_rl::graph::{CoverageMode, CoverageState};
use ::toolpath_rl::io::{parse_graph, GraphFile, ToolpathFile};
use ::toolpath_rl::planner::{
    current_state, plan_toolpath, plan_with_policy, replay_toolpath, start_node, PlanConfig as CoreConfig,
    PlanResult as CoreResult, Policy,
};
use ::toolpath_rl::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(err) => PyIOError::new_err(err.to_string()),
        Error::Parse { .. } | Error::Argument(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Undirected graph with node positions in millimetres.
#[pyclass(frozen)]
struct Graph {
    inner: ::toolpath_rl::graph::Graph,
}

#[pymethods]
impl Graph {
    #[new]
    fn new(nodes: Vec<[f64; 3]>, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        let inner = ::toolpath_rl::graph::Graph::new(nodes, &edges).map_err(to_py)?;
        Ok(Graph { inner })
    }

    /// Reads JSON, OBJ or PGM by extension.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = parse_graph(std::path::Path::new(path)).map_err(to_py)?;
        Ok(Graph { inner })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn degree(&self, v: usize) -> PyResult<usize> {
        if !self.inner.contains(v) {
            return Err(PyValueError::new_err(format!("node {v} does not exist")));
        }
        Ok(self.inner.degree(v))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&GraphFile::from_graph(&self.inner)).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={})", self.inner.node_count(), self.inner.edge_count())
    }
}

/// Planner configuration; any field can be read or replaced through JSON.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct PlanConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PlanConfig {
    #[new]
    #[pyo3(signature = (mode = "ccf", rings = 6, seed = 0))]
    fn new(mode: &str, rings: usize, seed: u64) -> PyResult<Self> {
        let mode: CoverageMode = mode.parse().map_err(to_py)?;
        let mut inner = CoreConfig::for_mode(mode);
        inner.rings = rings;
        inner.seed = seed;
        Ok(PlanConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PlanConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    #[getter]
    fn rings(&self) -> usize {
        self.inner.rings
    }

    #[setter]
    fn set_rings(&mut self, v: usize) {
        self.inner.rings = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn max_steps(&self) -> Option<usize> {
        self.inner.max_steps
    }

    #[setter]
    fn set_max_steps(&mut self, v: Option<usize>) {
        self.inner.max_steps = v;
    }

    /// Channel widths `(e2e1, e2e2, e2n, hidden)`.
    fn set_widths(&mut self, e2e1: usize, e2e2: usize, e2n: usize, hidden: usize) {
        self.inner.widths = ::toolpath_rl::planner::Widths { e2e1, e2e2, e2n, hidden };
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }
}

/// A planned toolpath and its summary.
#[pyclass(frozen)]
struct PlanResult {
    file: ToolpathFile,
    inner: CoreResult,
}

#[pymethods]
impl PlanResult {
    /// Visited nodes in order, jumps included.
    #[getter]
    fn nodes(&self) -> Vec<usize> {
        self.inner.toolpath.nodes().collect()
    }

    #[getter]
    fn jumps(&self) -> Vec<bool> {
        self.inner.toolpath.steps.iter().map(|s| s.jump).collect()
    }

    #[getter]
    fn start(&self) -> usize {
        self.inner.start
    }

    #[getter]
    fn complete(&self) -> bool {
        self.inner.summary.complete
    }

    #[getter]
    fn feasible(&self) -> bool {
        self.inner.summary.feasible()
    }

    #[getter]
    fn total_length(&self) -> f64 {
        self.inner.summary.total_length
    }

    #[getter]
    fn sharp_turns(&self) -> usize {
        self.inner.summary.sharp_turns
    }

    #[getter]
    fn peak_u_max(&self) -> Option<f64> {
        self.inner.summary.peak_u_max
    }

    #[getter]
    fn peak_hot_area(&self) -> Option<usize> {
        self.inner.summary.peak_hot_area
    }

    #[getter]
    fn temperature(&self) -> Option<Vec<f64>> {
        self.inner.temperature.clone()
    }

    /// Summary totals as a JSON object.
    fn summary_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// The toolpath file document.
    fn to_json(&self) -> String {
        self.file.to_json()
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.summary;
        format!(
            "PlanResult(steps={}, length={:.3}, sharp_turns={}, complete={})",
            s.steps, s.total_length, s.sharp_turns, s.complete
        )
    }
}

fn wrap(graph: &Graph, config: &PlanConfig, inner: CoreResult) -> PlanResult {
    let file = ToolpathFile::from_result(&graph.inner, &config.inner, &inner);
    PlanResult { file, inner }
}

/// Plans a toolpath with the learned policy.
#[pyfunction]
fn plan(py: Python<'_>, graph: &Graph, config: &PlanConfig) -> PyResult<PlanResult> {
    let r = py.detach(|| plan_toolpath(&graph.inner, &config.inner)).map_err(to_py)?;
    Ok(wrap(graph, config, r))
}

/// Plans with a baseline: `"bfs"`, `"greedy"`, `"dfs"` or `"zigzag"`.
#[pyfunction]
#[pyo3(signature = (graph, config, algo, budget = 1_000_000))]
fn baseline(py: Python<'_>, graph: &Graph, config: &PlanConfig, algo: &str, budget: usize) -> PyResult<PlanResult> {
    let (g, c) = (&graph.inner, &config.inner);
    let r = py
        .detach(|| match algo {
            "bfs" => plan_with_policy(g, c, Policy::Bfs),
            "greedy" => plan_with_policy(g, c, Policy::Greedy),
            "dfs" => {
                let start = start_node(g, c)?;
                let d = dfs_backtrack_plan(g, c, start, budget)?;
                replay_toolpath(g, c, &d.steps)
            }
            "zigzag" => replay_toolpath(g, c, &order_to_steps(g, &zigzag_order(g))),
            other => Err(Error::Argument(format!("unknown baseline {other:?}"))),
        })
        .map_err(to_py)?;
    Ok(wrap(graph, config, r))
}

/// Encoded state of the LSG around `center`, reached from `prev`.
#[pyclass(frozen)]
struct State {
    inner: MovingState,
}

#[pymethods]
impl State {
    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn occupied(&self) -> usize {
        self.inner.occupied()
    }

    /// Row-major dense copy of channel `c` (0, 1 or 2).
    fn channel(&self, c: usize) -> PyResult<Vec<f64>> {
        if c > 2 {
            return Err(PyValueError::new_err("channel must be 0, 1 or 2"));
        }
        Ok(self.inner.channel_dense(c))
    }

    fn similarity(&self, other: &State) -> PyResult<f64> {
        state_similarity(&self.inner, &other.inner).map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (graph, config, center, prev = None))]
fn lsg_state(graph: &Graph, config: &PlanConfig, center: usize, prev: Option<usize>) -> PyResult<State> {
    let history = match prev {
        Some(p) => History::from_tail(&[p, center]).expect("tail is nonempty"),
        None => History::start(center),
    };
    let cov = CoverageState::new(&graph.inner, config.inner.mode);
    let (_, inner) = current_state(&graph.inner, &config.inner, &cov, &history).map_err(to_py)?;
    Ok(State { inner })
}

#[pymodule]
fn toolpath_rl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<PlanConfig>()?;
    m.add_class::<PlanResult>()?;
    m.add_class::<State>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(lsg_state, m)?)?;
    Ok(())
}
