//! Graph inputs (JSON, OBJ, PGM rasters) and the toolpath interchange file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{CoverageMode, Graph, NodeId, StepDiagnostics, Toolpath, ToolpathStep};
use crate::planner::{PlanConfig, PlanResult, PlanSummary};
use crate::{Error, Result};

pub const GRAPH_VERSION: u32 = 1;
pub const TOOLPATH_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    #[serde(default = "graph_version")]
    pub version: u32,
    pub nodes: Vec<[f64; 3]>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default = "default_units")]
    pub units: String,
}

fn graph_version() -> u32 {
    GRAPH_VERSION
}

fn default_units() -> String {
    "mm".into()
}

impl GraphFile {
    pub fn from_graph(graph: &Graph) -> Self {
        GraphFile {
            version: GRAPH_VERSION,
            nodes: graph.nodes().iter().map(|n| n.position).collect(),
            edges: graph.edges().iter().map(|e| [e.a, e.b]).collect(),
            units: default_units(),
        }
    }

    pub fn to_graph(&self) -> Result<Graph> {
        if self.version != GRAPH_VERSION {
            return Err(Error::parse("version", format!("unsupported graph version {}", self.version)));
        }
        if self.units != "mm" {
            return Err(Error::parse("units", format!("expected \"mm\", found {:?}", self.units)));
        }
        let n = self.nodes.len();
        let mut seen = std::collections::HashSet::new();
        for (k, &[i, j]) in self.edges.iter().enumerate() {
            let loc = format!("edges[{k}]");
            if i >= n || j >= n {
                return Err(Error::parse(loc, format!("index out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::parse(loc, "self loop"));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::parse(loc, format!("duplicate edge ({i}, {j})")));
            }
        }
        for (k, p) in self.nodes.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::parse(format!("nodes[{k}]"), "non-finite coordinate"));
            }
        }
        let pairs: Vec<(usize, usize)> = self.edges.iter().map(|&[i, j]| (i, j)).collect();
        Graph::new(self.nodes.clone(), &pairs).map_err(|e| Error::parse("edges", e.to_string()))
    }
}

pub fn parse_graph_json(text: &str) -> Result<Graph> {
    let file: GraphFile = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    file.to_graph()
}

/// Wavefront OBJ with `v x y z` vertices and `l i j ...` polylines
/// (1-based, negative indices relative to the end). Other records are
/// ignored.
pub fn parse_graph_obj(text: &str) -> Result<Graph> {
    let mut nodes: Vec<[f64; 3]> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (ln, raw) in text.lines().enumerate() {
        let loc = || format!("line {}", ln + 1);
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|e| Error::parse(loc(), format!("bad coordinate {s:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(Error::parse(loc(), "vertex needs three finite coordinates"));
                }
                nodes.push([coords[0], coords[1], coords[2]]);
            }
            Some("l") => {
                let idx: Vec<usize> = parts
                    .map(|s| {
                        let first = s.split('/').next().unwrap_or(s);
                        let k: i64 = first
                            .parse()
                            .map_err(|e| Error::parse(loc(), format!("bad index {s:?}: {e}")))?;
                        let n = nodes.len() as i64;
                        let z = if k > 0 { k - 1 } else { n + k };
                        if k == 0 || z < 0 || z >= n {
                            return Err(Error::parse(loc(), format!("index {k} out of range")));
                        }
                        Ok(z as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 2 {
                    return Err(Error::parse(loc(), "line element needs two indices"));
                }
                for w in idx.windows(2) {
                    let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
                    if a == b {
                        return Err(Error::parse(loc(), "self loop"));
                    }
                    if !seen.insert((a, b)) {
                        return Err(Error::parse(loc(), format!("duplicate edge ({}, {})", a + 1, b + 1)));
                    }
                    edges.push((w[0], w[1]));
                }
            }
            _ => {}
        }
    }
    Graph::new(nodes, &edges).map_err(|e| Error::parse("geometry", e.to_string()))
}

/// Reads a graph by extension: `.obj` as OBJ, `.pgm` as a raster with unit
/// pixel pitch, anything else as JSON.
pub fn parse_graph(path: &Path) -> Result<Graph> {
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pgm") => parse_pgm_grid(&std::fs::read(path)?, 1.0),
        Some("obj") => parse_graph_obj(&std::fs::read_to_string(path)?),
        _ => parse_graph_json(&std::fs::read_to_string(path)?),
    }
}

/// Whitespace/comment-aware PGM header tokenizer.
struct PgmReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmReader<'_> {
    fn token(&mut self, what: &str) -> Result<&str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(format!("byte {start}"), format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::parse(format!("byte {start}"), "non-ASCII header"))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let t = self.token(what)?;
        t.parse()
            .map_err(|_| Error::parse(format!("byte {at}"), format!("{what} is not a number: {t:?}")))
    }
}

/// Raster grid: one node per foreground pixel (value > 0) at its centre,
/// edges between 4-adjacent foreground pixels. Accepts P2 and P5.
pub fn parse_pgm_grid(bytes: &[u8], pitch: f64) -> Result<Graph> {
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(Error::Argument(format!("pixel pitch must be positive, got {pitch}")));
    }
    let mut r = PgmReader { bytes, pos: 0 };
    let magic = r.token("magic number")?.to_string();
    if magic != "P2" && magic != "P5" {
        return Err(Error::parse("header", format!("unsupported magic {magic:?}")));
    }
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::parse("header", "dimensions and maxval must be positive (maxval ≤ 65535)"));
    }
    let count = width * height;
    let mut values = Vec::with_capacity(count);
    if magic == "P2" {
        for k in 0..count {
            let v = r.number(&format!("pixel {k}"))?;
            if v > maxval {
                return Err(Error::parse(format!("pixel {k}"), format!("value {v} exceeds maxval {maxval}")));
            }
            values.push(v);
        }
    } else {
        let start = r.pos + 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if start + need > bytes.len() {
            return Err(Error::parse("raster", format!("expected {need} bytes of pixel data")));
        }
        let data = &bytes[start..start + need];
        for k in 0..count {
            values.push(if wide {
                u16::from_be_bytes([data[2 * k], data[2 * k + 1]]) as usize
            } else {
                data[k] as usize
            });
        }
    }
    let mut id = vec![usize::MAX; count];
    let mut nodes = Vec::new();
    for row in 0..height {
        for col in 0..width {
            if values[row * width + col] > 0 {
                id[row * width + col] = nodes.len();
                nodes.push([(col as f64 + 0.5) * pitch, (row as f64 + 0.5) * pitch, 0.0]);
            }
        }
    }
    let mut edges = Vec::new();
    for row in 0..height {
        for col in 0..width {
            let a = id[row * width + col];
            if a == usize::MAX {
                continue;
            }
            if col + 1 < width && id[row * width + col + 1] != usize::MAX {
                edges.push((a, id[row * width + col + 1]));
            }
            if row + 1 < height && id[(row + 1) * width + col] != usize::MAX {
                edges.push((a, id[(row + 1) * width + col]));
            }
        }
    }
    Graph::new(nodes, &edges)
}

/// Hex SHA-256 of the configuration's canonical JSON.
pub fn config_hash(config: &PlanConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolpathHeader {
    pub mode: CoverageMode,
    pub config_hash: String,
    pub seed: u64,
    pub start: NodeId,
    pub totals: PlanSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileStep {
    pub node: NodeId,
    pub position: [f64; 3],
    pub jump: bool,
    pub reward: f64,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolpathFile {
    pub version: u32,
    pub header: ToolpathHeader,
    pub config: PlanConfig,
    pub steps: Vec<FileStep>,
}

impl ToolpathFile {
    /// Wall-clock timings are deliberately left out so that equal inputs
    /// give equal files.
    pub fn from_result(graph: &Graph, config: &PlanConfig, result: &PlanResult) -> Self {
        ToolpathFile {
            version: TOOLPATH_VERSION,
            header: ToolpathHeader {
                mode: result.mode,
                config_hash: config_hash(config),
                seed: result.seed,
                start: result.start,
                totals: result.summary.clone(),
            },
            config: config.clone(),
            steps: result
                .toolpath
                .steps
                .iter()
                .map(|s| FileStep {
                    node: s.node,
                    position: *graph.position(s.node),
                    jump: s.jump,
                    reward: s.reward,
                    diagnostics: s.diagnostics.clone(),
                })
                .collect(),
        }
    }

    pub fn toolpath(&self, graph: &Graph) -> Toolpath {
        let mut t = Toolpath::default();
        for s in &self.steps {
            t.push(
                graph,
                ToolpathStep {
                    node: s.node,
                    jump: s.jump,
                    reward: s.reward,
                    diagnostics: s.diagnostics.clone(),
                },
            );
        }
        t
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("toolpath serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ToolpathFile = serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        if file.version != TOOLPATH_VERSION {
            return Err(Error::parse("version", format!("unsupported toolpath version {}", file.version)));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
