//! Q-network over moving states: two edge-to-edge layers, one
//! edge-to-node layer and two dense layers.
//!
//! Parameters live in one flat vector. The `m x m` activation grids of the
//! edge-to-edge layers are never stored: an activation at `(i, j)` is
//! `relu(row[i] + col[j])`, so only the row and column vectors are kept and
//! grids are regenerated row by row when needed.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::MovingState;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TPQN";
const FORMAT_VERSION: u32 = 1;

/// Input channels of a moving state.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub m: usize,
    pub e2e1: usize,
    pub e2e2: usize,
    pub e2n: usize,
    pub hidden: usize,
}

impl NetShape {
    /// Default widths 3 -> 8 -> 16 -> 16 -> 256 -> m.
    pub fn standard(m: usize) -> Self {
        NetShape {
            m,
            e2e1: 8,
            e2e2: 16,
            e2n: 16,
            hidden: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.e2e1 == 0 || self.e2e2 == 0 || self.e2n == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("network widths must be positive: {self:?}")));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let mm = self.m * self.m;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Layout {
            w1: take(self.e2e1 * INPUT_CHANNELS * mm),
            b1: take(self.e2e1),
            w2: take(self.e2e2 * self.e2e1 * mm),
            b2: take(self.e2e2),
            w3: take(self.e2n * self.e2e2 * mm),
            b3: take(self.e2n),
            f1w: take(self.hidden * self.e2n * self.m),
            f1b: take(self.hidden),
            f2w: take(self.m * self.hidden),
            f2b: take(self.m),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().f2b.end
    }
}

#[derive(Debug, Clone)]
struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
    f1w: Range<usize>,
    f1b: Range<usize>,
    f2w: Range<usize>,
    f2b: Range<usize>,
}

/// Named parameter blocks of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    E2e1Weights,
    E2e1Bias,
    E2e2Weights,
    E2e2Bias,
    E2nWeights,
    E2nBias,
    Fc1Weights,
    Fc1Bias,
    Fc2Weights,
    Fc2Bias,
}

impl Segment {
    pub const ALL: [Segment; 10] = [
        Segment::E2e1Weights,
        Segment::E2e1Bias,
        Segment::E2e2Weights,
        Segment::E2e2Bias,
        Segment::E2nWeights,
        Segment::E2nBias,
        Segment::Fc1Weights,
        Segment::Fc1Bias,
        Segment::Fc2Weights,
        Segment::Fc2Bias,
    ];
}

impl Layout {
    fn range(&self, seg: Segment) -> Range<usize> {
        match seg {
            Segment::E2e1Weights => self.w1.clone(),
            Segment::E2e1Bias => self.b1.clone(),
            Segment::E2e2Weights => self.w2.clone(),
            Segment::E2e2Bias => self.b2.clone(),
            Segment::E2nWeights => self.w3.clone(),
            Segment::E2nBias => self.b3.clone(),
            Segment::Fc1Weights => self.f1w.clone(),
            Segment::Fc1Bias => self.f1b.clone(),
            Segment::Fc2Weights => self.f2w.clone(),
            Segment::Fc2Bias => self.f2b.clone(),
        }
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..n {
        s += a[k] * b[k];
    }
    s
}

/// Fills `out[k] = relu(row + col[k])`.
#[inline]
fn activation_row(row: f64, col: &[f64], out: &mut [f64]) {
    for (o, &c) in out.iter_mut().zip(col) {
        *o = relu(row + c);
    }
}

/// `acc[k] += w[k] z[k]`, returning `Σ_k w[k] z[k]`.
#[inline]
fn fused_row(w: &[f64], z: &[f64], acc: &mut [f64]) -> f64 {
    let n = w.len();
    let (z, acc) = (&z[..n], &mut acc[..n]);
    let mut s = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = c * 4;
        for t in 0..4 {
            let v = w[k + t] * z[k + t];
            s[t] += v;
            acc[k + t] += v;
        }
    }
    let mut total = (s[0] + s[1]) + (s[2] + s[3]);
    for k in chunks * 4..n {
        let v = w[k] * z[k];
        total += v;
        acc[k] += v;
    }
    total
}

/// One weight row of an edge layer backward: output gradient at `(i, k)` is
/// `di + dcol[k]`.
#[inline]
fn backprop_row(w: &[f64], gw: &mut [f64], di: f64, dcol: &[f64], z: &[f64], dz: &mut [f64]) {
    let n = w.len();
    let (gw, dcol, z, dz) = (&mut gw[..n], &dcol[..n], &z[..n], &mut dz[..n]);
    for k in 0..n {
        let coeff = di + dcol[k];
        gw[k] += coeff * z[k];
        dz[k] += w[k] * coeff;
    }
}

/// Routes `dz` through the relu of `row + col[k]`; column parts go to `dcol`,
/// the row total is returned.
#[inline]
fn mask_row(row: f64, col: &[f64], dz: &[f64], dcol: &mut [f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..col.len() {
        if row + col[k] > 0.0 {
            s += dz[k];
            dcol[k] += dz[k];
        }
    }
    s
}

/// Dense stack of `channels` square `m x m` grids, row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub channels: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl Stack {
    pub fn zeros(channels: usize, m: usize) -> Self {
        Stack {
            channels,
            m,
            data: vec![0.0; channels * m * m],
        }
    }

    pub fn from_state(state: &MovingState) -> Self {
        let m = state.m();
        let mut data = Vec::with_capacity(INPUT_CHANNELS * m * m);
        for c in 0..INPUT_CHANNELS {
            data.extend(state.channel_dense(c));
        }
        Stack {
            channels: INPUT_CHANNELS,
            m,
            data,
        }
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.m + i) * self.m + j]
    }

    fn grid(&self, c: usize) -> &[f64] {
        let mm = self.m * self.m;
        &self.data[c * mm..(c + 1) * mm]
    }
}

fn check_layer(input: &Stack, weights: &[f64], bias: &[f64]) -> Result<usize> {
    let mm = input.m * input.m;
    if input.data.len() != input.channels * mm {
        return Err(Error::Argument("stack data does not match its shape".into()));
    }
    let out = bias.len();
    if weights.len() != out * input.channels * mm {
        return Err(Error::Argument(format!(
            "weights hold {} values; expected {} x {} grids of {}x{}",
            weights.len(),
            out,
            input.channels,
            input.m,
            input.m
        )));
    }
    Ok(out)
}

/// Row and column sums of `W ∘ A` for every output channel, summed over
/// input channels; bias is added to the row sums.
fn row_col_sums(input: &Stack, weights: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (m, cin) = (input.m, input.channels);
    let mm = m * m;
    let out = bias.len();
    let mut rows = vec![0.0; out * m];
    let mut cols = vec![0.0; out * m];
    for o in 0..out {
        rows[o * m..(o + 1) * m].fill(bias[o]);
        for c in 0..cin {
            let w = &weights[(o * cin + c) * mm..(o * cin + c + 1) * mm];
            let a = input.grid(c);
            for i in 0..m {
                for k in 0..m {
                    let p = w[i * m + k] * a[i * m + k];
                    rows[o * m + i] += p;
                    cols[o * m + k] += p;
                }
            }
        }
    }
    (rows, cols)
}

/// Edge-to-edge pre-activation: `a*_ij = Σ_k w_ik a_ik + Σ_k w_kj a_kj`
/// summed over input channels, plus bias.
pub fn e2e_preactivation(input: &Stack, weights: &[f64], bias: &[f64]) -> Result<Stack> {
    let out = check_layer(input, weights, bias)?;
    let m = input.m;
    let (rows, cols) = row_col_sums(input, weights, bias);
    let mut res = Stack::zeros(out, m);
    for o in 0..out {
        for i in 0..m {
            for j in 0..m {
                res.data[(o * m + i) * m + j] = rows[o * m + i] + cols[o * m + j];
            }
        }
    }
    Ok(res)
}

/// Rectified edge-to-edge layer. `weights` holds `out x in` grids of
/// `m x m`, grid `(o, c)` at offset `(o * in + c) * m²`.
pub fn e2e_forward(input: &Stack, weights: &[f64], bias: &[f64]) -> Result<Stack> {
    let mut s = e2e_preactivation(input, weights, bias)?;
    s.data.iter_mut().for_each(|x| *x = relu(*x));
    Ok(s)
}

/// Rectified edge-to-node layer: `f_i = Σ_k w_ik a_ik + Σ_k w_ki a_ki`
/// plus bias. Output is laid out `[channel * m + node]`.
pub fn e2n_forward(input: &Stack, weights: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    check_layer(input, weights, bias)?;
    let (rows, cols) = row_col_sums(input, weights, bias);
    Ok(rows.iter().zip(&cols).map(|(r, c)| relu(r + c)).collect())
}

/// Intermediate values of one forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    m: usize,
    row1: Vec<f64>,
    col1: Vec<f64>,
    row2: Vec<f64>,
    col2: Vec<f64>,
    pre3: Vec<f64>,
    pre4: Vec<f64>,
    hidden: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    shape: NetShape,
    params: Vec<f64>,
}

/// Accumulated loss gradients, shape-matched to a network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    shape: NetShape,
    pub values: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(shape: NetShape) -> Self {
        GradientSet {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn clear(&mut self) {
        self.values.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn segment(&self, seg: Segment) -> &[f64] {
        &self.values[self.shape.layout().range(seg)]
    }
}

impl QNetwork {
    /// Zero-parameter network.
    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        Ok(QNetwork {
            shape,
            params: vec![0.0; shape.param_count()],
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(shape: NetShape, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        let m = shape.m;
        let l = shape.layout();
        let fans = [
            (l.w1.clone(), 2 * INPUT_CHANNELS * m),
            (l.w2.clone(), 2 * shape.e2e1 * m),
            (l.w3.clone(), 2 * shape.e2e2 * m),
            (l.f1w.clone(), shape.e2n * m),
            (l.f2w.clone(), shape.hidden),
        ];
        for (range, fan) in fans {
            let bound = 1.0 / (fan as f64).sqrt();
            for p in &mut net.params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if params.len() != shape.param_count() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Argument("non-finite parameter".into()));
        }
        Ok(QNetwork { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn m(&self) -> usize {
        self.shape.m
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn segment(&self, seg: Segment) -> &[f64] {
        &self.params[self.shape.layout().range(seg)]
    }

    pub fn segment_mut(&mut self, seg: Segment) -> &mut [f64] {
        let r = self.shape.layout().range(seg);
        &mut self.params[r]
    }

    /// Deep copy used as the frozen target network.
    pub fn copy_to_target(&self) -> QNetwork {
        self.clone()
    }

    fn check_state(&self, state: &MovingState) -> Result<()> {
        if state.m() != self.shape.m {
            return Err(Error::Argument(format!(
                "state dimension {} does not match network dimension {}",
                state.m(),
                self.shape.m
            )));
        }
        Ok(())
    }

    /// Q-values for all `m` indices.
    pub fn forward(&self, state: &MovingState) -> Result<Vec<f64>> {
        Ok(self.forward_cached(state)?.q)
    }

    pub fn forward_cached(&self, state: &MovingState) -> Result<ForwardCache> {
        Ok(self.forward_batch(&[state])?.pop().expect("one cache per state"))
    }

    /// Forward passes over a minibatch. Weight grids are walked once for the
    /// whole batch, which is what makes training affordable at larger `m`.
    pub fn forward_batch(&self, states: &[&MovingState]) -> Result<Vec<ForwardCache>> {
        for s in states {
            self.check_state(s)?;
        }
        let NetShape {
            m,
            e2e1: c1,
            e2e2: c2,
            e2n: c3,
            hidden,
        } = self.shape;
        let mm = m * m;
        let l = self.shape.layout();
        let p = &self.params;
        let nb = states.len();

        // Edge-to-edge 1 on the sparse symmetric input.
        let w1 = &p[l.w1.clone()];
        let mut caches: Vec<ForwardCache> = states
            .iter()
            .map(|state| {
                let mut row1 = vec![0.0; c1 * m];
                let mut col1 = vec![0.0; c1 * m];
                for o in 0..c1 {
                    row1[o * m..(o + 1) * m].fill(p[l.b1.start + o]);
                }
                for c in 0..INPUT_CHANNELS {
                    for &(i, j, v) in state.channel(c) {
                        let (i, j) = (i as usize, j as usize);
                        for o in 0..c1 {
                            let g = &w1[(o * INPUT_CHANNELS + c) * mm..];
                            let wij = g[i * m + j] * v;
                            let wji = g[j * m + i] * v;
                            row1[o * m + i] += wij;
                            col1[o * m + j] += wij;
                            row1[o * m + j] += wji;
                            col1[o * m + i] += wji;
                        }
                    }
                }
                let mut row2 = vec![0.0; c2 * m];
                for q in 0..c2 {
                    row2[q * m..(q + 1) * m].fill(p[l.b2.start + q]);
                }
                let mut pre3 = vec![0.0; c3 * m];
                for q in 0..c3 {
                    pre3[q * m..(q + 1) * m].fill(p[l.b3.start + q]);
                }
                ForwardCache {
                    m,
                    row1,
                    col1,
                    row2,
                    col2: vec![0.0; c2 * m],
                    pre3,
                    pre4: Vec::new(),
                    hidden: Vec::new(),
                    q: Vec::new(),
                }
            })
            .collect();

        let mut z = vec![0.0; nb * m];

        // Edge-to-edge 2.
        let w2 = &p[l.w2.clone()];
        for o in 0..c1 {
            for i in 0..m {
                for (b, c) in caches.iter().enumerate() {
                    activation_row(c.row1[o * m + i], &c.col1[o * m..(o + 1) * m], &mut z[b * m..(b + 1) * m]);
                }
                for q in 0..c2 {
                    let wrow = &w2[(q * c1 + o) * mm + i * m..][..m];
                    for (b, c) in caches.iter_mut().enumerate() {
                        let s = fused_row(wrow, &z[b * m..(b + 1) * m], &mut c.col2[q * m..(q + 1) * m]);
                        c.row2[q * m + i] += s;
                    }
                }
            }
        }

        // Edge-to-node.
        let w3 = &p[l.w3.clone()];
        for o in 0..c2 {
            for i in 0..m {
                for (b, c) in caches.iter().enumerate() {
                    activation_row(c.row2[o * m + i], &c.col2[o * m..(o + 1) * m], &mut z[b * m..(b + 1) * m]);
                }
                for q in 0..c3 {
                    let wrow = &w3[(q * c2 + o) * mm + i * m..][..m];
                    for (b, c) in caches.iter_mut().enumerate() {
                        let acc = &mut c.pre3[q * m..(q + 1) * m];
                        let s = fused_row(wrow, &z[b * m..(b + 1) * m], acc);
                        acc[i] += s;
                    }
                }
            }
        }

        // Dense layers.
        let nf = c3 * m;
        let feats: Vec<Vec<f64>> = caches
            .iter()
            .map(|c| c.pre3.iter().map(|&x| relu(x)).collect())
            .collect();
        let f1w = &p[l.f1w.clone()];
        for c in caches.iter_mut() {
            c.pre4 = vec![0.0; hidden];
        }
        for h in 0..hidden {
            let wrow = &f1w[h * nf..(h + 1) * nf];
            for (c, feat) in caches.iter_mut().zip(&feats) {
                c.pre4[h] = p[l.f1b.start + h] + dot(wrow, feat);
            }
        }
        let f2w = &p[l.f2w.clone()];
        for c in caches.iter_mut() {
            c.hidden = c.pre4.iter().map(|&x| relu(x)).collect();
            c.q = (0..m)
                .map(|j| p[l.f2b.start + j] + dot(&f2w[j * hidden..(j + 1) * hidden], &c.hidden))
                .collect();
        }
        Ok(caches)
    }

    /// Accumulates into `grads` the gradient of `Σ_j dq[j] · Q_j(state)`.
    /// `cache` must come from `forward_cached` on the same state.
    pub fn backward(
        &self,
        state: &MovingState,
        cache: &ForwardCache,
        dq: &[f64],
        grads: &mut GradientSet,
    ) -> Result<()> {
        self.backward_batch(&[state], std::slice::from_ref(cache), &[dq], grads)
    }

    /// Minibatch form of [`QNetwork::backward`]; gradients of all samples are
    /// summed into `grads`.
    pub fn backward_batch(
        &self,
        states: &[&MovingState],
        caches: &[ForwardCache],
        dqs: &[&[f64]],
        grads: &mut GradientSet,
    ) -> Result<()> {
        let NetShape {
            m,
            e2e1: c1,
            e2e2: c2,
            e2n: c3,
            hidden,
        } = self.shape;
        if states.len() != caches.len() || states.len() != dqs.len() {
            return Err(Error::Argument("batch inputs differ in length".into()));
        }
        for ((s, c), dq) in states.iter().zip(caches).zip(dqs) {
            self.check_state(s)?;
            if c.m != m || c.q.len() != m || dq.len() != m {
                return Err(Error::Argument("forward cache or output gradient does not match the network".into()));
            }
        }
        if grads.shape != self.shape {
            return Err(Error::Argument("gradient set shape does not match the network".into()));
        }
        let mm = m * m;
        let nb = states.len();
        let l = self.shape.layout();
        let p = &self.params;
        let g = &mut grads.values;
        let nf = c3 * m;

        // Output and hidden layers.
        let mut dhids = Vec::with_capacity(nb);
        for (cache, dq) in caches.iter().zip(dqs) {
            let mut dhid = vec![0.0; hidden];
            for j in 0..m {
                let d = dq[j];
                if d == 0.0 {
                    continue;
                }
                g[l.f2b.start + j] += d;
                let base = l.f2w.start + j * hidden;
                for h in 0..hidden {
                    g[base + h] += d * cache.hidden[h];
                    dhid[h] += p[base + h] * d;
                }
            }
            for h in 0..hidden {
                if cache.pre4[h] <= 0.0 {
                    dhid[h] = 0.0;
                }
            }
            dhids.push(dhid);
        }
        let feats: Vec<Vec<f64>> = caches
            .iter()
            .map(|c| c.pre3.iter().map(|&x| relu(x)).collect())
            .collect();
        let mut dfeats = vec![vec![0.0; nf]; nb];
        for h in 0..hidden {
            let base = l.f1w.start + h * nf;
            for b in 0..nb {
                let d = dhids[b][h];
                if d == 0.0 {
                    continue;
                }
                g[l.f1b.start + h] += d;
                let feat = &feats[b];
                let df = &mut dfeats[b];
                for x in 0..nf {
                    g[base + x] += d * feat[x];
                    df[x] += p[base + x] * d;
                }
            }
        }
        let d3s: Vec<Vec<f64>> = dfeats
            .iter()
            .zip(caches)
            .map(|(df, c)| df.iter().zip(&c.pre3).map(|(&d, &x)| if x > 0.0 { d } else { 0.0 }).collect())
            .collect();
        for d3 in &d3s {
            for q in 0..c3 {
                g[l.b3.start + q] += d3[q * m..(q + 1) * m].iter().sum::<f64>();
            }
        }

        let mut z = vec![0.0; nb * m];
        let mut dz = vec![0.0; nb * m];

        // Edge-to-node.
        let mut drow2 = vec![vec![0.0; c2 * m]; nb];
        let mut dcol2 = vec![vec![0.0; c2 * m]; nb];
        for o in 0..c2 {
            for i in 0..m {
                for (b, c) in caches.iter().enumerate() {
                    activation_row(c.row2[o * m + i], &c.col2[o * m..(o + 1) * m], &mut z[b * m..(b + 1) * m]);
                }
                dz.fill(0.0);
                for q in 0..c3 {
                    let off = (q * c2 + o) * mm + i * m;
                    let wrow = &p[l.w3.start + off..][..m];
                    let grow = &mut g[l.w3.start + off..][..m];
                    for b in 0..nb {
                        let dq3 = &d3s[b][q * m..(q + 1) * m];
                        backprop_row(wrow, grow, dq3[i], dq3, &z[b * m..(b + 1) * m], &mut dz[b * m..(b + 1) * m]);
                    }
                }
                for (b, c) in caches.iter().enumerate() {
                    let r = c.row2[o * m + i];
                    let col = &c.col2[o * m..(o + 1) * m];
                    drow2[b][o * m + i] += mask_row(r, col, &dz[b * m..(b + 1) * m], &mut dcol2[b][o * m..(o + 1) * m]);
                }
            }
        }
        for d in &drow2 {
            for o in 0..c2 {
                g[l.b2.start + o] += d[o * m..(o + 1) * m].iter().sum::<f64>();
            }
        }

        // Edge-to-edge 2.
        let mut drow1 = vec![vec![0.0; c1 * m]; nb];
        let mut dcol1 = vec![vec![0.0; c1 * m]; nb];
        for o in 0..c1 {
            for i in 0..m {
                for (b, c) in caches.iter().enumerate() {
                    activation_row(c.row1[o * m + i], &c.col1[o * m..(o + 1) * m], &mut z[b * m..(b + 1) * m]);
                }
                dz.fill(0.0);
                for q in 0..c2 {
                    let off = (q * c1 + o) * mm + i * m;
                    let wrow = &p[l.w2.start + off..][..m];
                    let grow = &mut g[l.w2.start + off..][..m];
                    for b in 0..nb {
                        let dc2 = &dcol2[b][q * m..(q + 1) * m];
                        let di = drow2[b][q * m + i];
                        backprop_row(wrow, grow, di, dc2, &z[b * m..(b + 1) * m], &mut dz[b * m..(b + 1) * m]);
                    }
                }
                for (b, c) in caches.iter().enumerate() {
                    let r = c.row1[o * m + i];
                    let col = &c.col1[o * m..(o + 1) * m];
                    drow1[b][o * m + i] += mask_row(r, col, &dz[b * m..(b + 1) * m], &mut dcol1[b][o * m..(o + 1) * m]);
                }
            }
        }

        // Edge-to-edge 1 on the sparse input.
        for (b, state) in states.iter().enumerate() {
            let (dr, dc) = (&drow1[b], &dcol1[b]);
            for o in 0..c1 {
                g[l.b1.start + o] += dr[o * m..(o + 1) * m].iter().sum::<f64>();
            }
            for c in 0..INPUT_CHANNELS {
                for &(i, j, v) in state.channel(c) {
                    let (i, j) = (i as usize, j as usize);
                    for o in 0..c1 {
                        let base = l.w1.start + (o * INPUT_CHANNELS + c) * mm;
                        g[base + i * m + j] += (dr[o * m + i] + dc[o * m + j]) * v;
                        g[base + j * m + i] += (dr[o * m + j] + dc[o * m + i]) * v;
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of `Σ_j dq[j] · Q_j(state)` as a fresh set.
    pub fn q_backward(&self, state: &MovingState, cache: &ForwardCache, dq: &[f64]) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros(self.shape);
        self.backward(state, cache, dq, &mut grads)?;
        Ok(grads)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * self.params.len() + 64);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let s = self.shape;
        for v in [s.m, s.e2e1, s.e2e2, s.e2n, s.hidden, self.params.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::parse("network header", "bad magic tag"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::parse("network header", format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut fields = [0usize; 6];
        for f in &mut fields {
            r.read_exact(&mut b8)?;
            *f = u64::from_le_bytes(b8) as usize;
        }
        let shape = NetShape {
            m: fields[0],
            e2e1: fields[1],
            e2e2: fields[2],
            e2n: fields[3],
            hidden: fields[4],
        };
        shape.validate()?;
        if fields[5] != shape.param_count() {
            return Err(Error::parse(
                "network header",
                format!("parameter count {} does not match shape", fields[5]),
            ));
        }
        let mut params = Vec::with_capacity(fields[5]);
        for _ in 0..fields[5] {
            r.read_exact(&mut b8)?;
            params.push(f64::from_le_bytes(b8));
        }
        QNetwork::from_params(shape, params).map_err(|e| Error::parse("network body", e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        Self::read_from(&mut cursor)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: vec![0.0; param_count],
            second: vec![0.0; param_count],
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    /// One bias-corrected update. `episode` only labels divergence errors.
    pub fn step(&mut self, net: &mut QNetwork, grads: &GradientSet, episode: usize) -> Result<()> {
        if grads.values.len() != net.params.len() || self.first.len() != net.params.len() {
            return Err(Error::Argument("optimizer, gradient and network shapes differ".into()));
        }
        if !grads.is_finite() {
            return Err(Error::TrainingDivergence {
                episode,
                detail: "non-finite gradient".into(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in net.params.iter_mut().enumerate() {
            let gk = grads.values[k];
            let m1 = self.beta1 * self.first[k] + (1.0 - self.beta1) * gk;
            let m2 = self.beta2 * self.second[k] + (1.0 - self.beta2) * gk * gk;
            self.first[k] = m1;
            self.second[k] = m2;
            *p -= self.lr * (m1 / c1) / ((m2 / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}
