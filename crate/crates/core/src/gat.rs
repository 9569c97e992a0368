//! Graph attention scoring network with hand-written gradients.
//!
//! Architecture, with `L` the embedding width and `H` the head count:
//!
//! 1. Embeddings: `hv = lrelu(Wv xv + bv)`, `hc = lrelu(Wc xc + bc)`,
//!    `he = We xe + be` (edges are linear).
//! 2. Round 1, constraints attend to variables; round 2, variables attend to
//!    the updated constraints. Each round has its own parameters. For an
//!    edge `e = (s -> d)` and head `k`, with `[k]` the `k`-th width-`L` slice
//!    of an `H*L` projection:
//!    `score = a_k . lrelu(Ws s[k] + Wt d[k] + Wq he[k])`, softmax over the
//!    edges entering `d`, `agg_d[k] = sum alpha * (Ws s)[k]`, then
//!    `d' = d + lrelu(M agg_d + m)`. Nodes without edges keep `d' = d`.
//! 3. Head: `p = sigmoid(w2 . lrelu(W1 hv' + b1) + b2)`.
//!
//! Flat parameter layout (row-major matrices, `out x in`):
//!
//! | block            | shape                          |
//! |------------------|--------------------------------|
//! | var embedding    | `L x var_in`, `L`              |
//! | cons embedding   | `L x cons_in`, `L`             |
//! | edge embedding   | `L x edge_in`, `L`             |
//! | round r (r=1,2)  | `Ws, Wt, Wq: HL x L`; `a: H x L`; `M: L x HL`; `m: L` |
//! | output MLP       | `L x L`, `L`, `L`, `1`         |

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BipartiteGraph, CONS_FEATURES, EDGE_FEATURES, VAR_FEATURES};
use crate::util::{derive_seed, write_atomic};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BCE_CLIP: f64 = 1e-7;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const MAGIC: &[u8; 8] = b"IDPASGAT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GatError {
    #[error("embedding width {embed} is not divisible by head count {heads}")]
    Heads { embed: usize, heads: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("label vector has length {got}, expected {expected} integer variables")]
    Labels { expected: usize, got: usize },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("empty {0} dataset")]
    Empty(&'static str),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatDims {
    pub embed: usize,
    pub heads: usize,
    pub var_in: usize,
    pub cons_in: usize,
    pub edge_in: usize,
    pub identity_width: usize,
}

impl GatDims {
    /// Dimensions for graphs from [`crate::graph`] with `identity_width` bits.
    pub fn for_graphs(embed: usize, heads: usize, identity_width: usize) -> Self {
        GatDims {
            embed,
            heads,
            var_in: VAR_FEATURES + identity_width,
            cons_in: CONS_FEATURES,
            edge_in: EDGE_FEATURES,
            identity_width,
        }
    }

    pub fn validate(&self) -> Result<(), GatError> {
        if self.embed == 0 || self.heads == 0 || self.embed % self.heads != 0 {
            return Err(GatError::Heads { embed: self.embed, heads: self.heads });
        }
        if self.var_in == 0 || self.cons_in == 0 || self.edge_in == 0 {
            return Err(GatError::Dimension("input widths must be positive".into()));
        }
        Ok(())
    }

    /// `L(var_in + cons_in + edge_in + 3) + 2(4HL^2 + HL + L) + L^2 + 2L + 1`.
    pub fn param_count(&self) -> usize {
        let (l, h) = (self.embed, self.heads);
        l * (self.var_in + self.cons_in + self.edge_in + 3) + 2 * (4 * h * l * l + h * l + l) + l * l + 2 * l + 1
    }

    pub fn check_graph(&self, g: &BipartiteGraph) -> Result<(), GatError> {
        if g.var_width() != self.var_in || g.identity_width != self.identity_width {
            return Err(GatError::Dimension(format!(
                "graph has {} variable features ({} identity bits), model expects {} ({})",
                g.var_width(),
                g.identity_width,
                self.var_in,
                self.identity_width
            )));
        }
        if self.cons_in != CONS_FEATURES || self.edge_in != EDGE_FEATURES {
            return Err(GatError::Dimension("model constraint/edge widths differ from the encoder".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct RoundLayout {
    ws: usize,
    wt: usize,
    wq: usize,
    att: usize,
    mw: usize,
    mb: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    var_w: usize,
    var_b: usize,
    cons_w: usize,
    cons_b: usize,
    edge_w: usize,
    edge_b: usize,
    rounds: [RoundLayout; 2],
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn new(d: &GatDims) -> Self {
        let (l, hl) = (d.embed, d.heads * d.embed);
        let mut at = 0;
        let mut take = |len: usize| {
            let o = at;
            at += len;
            o
        };
        let var_w = take(l * d.var_in);
        let var_b = take(l);
        let cons_w = take(l * d.cons_in);
        let cons_b = take(l);
        let edge_w = take(l * d.edge_in);
        let edge_b = take(l);
        let mut round = || RoundLayout {
            ws: take(hl * l),
            wt: take(hl * l),
            wq: take(hl * l),
            att: take(hl),
            mw: take(l * hl),
            mb: take(l),
        };
        let rounds = [round(), round()];
        let w1 = take(l * l);
        let b1 = take(l);
        let w2 = take(l);
        let b2 = take(1);
        Layout { var_w, var_b, cons_w, cons_b, edge_w, edge_b, rounds, w1, b1, w2, b2, total: at }
    }

    /// `(offset, len, fan_in)` for every weight block; biases are omitted.
    fn weight_blocks(&self, d: &GatDims) -> Vec<(usize, usize, usize)> {
        let (l, hl) = (d.embed, d.heads * d.embed);
        let mut v = vec![
            (self.var_w, l * d.var_in, d.var_in),
            (self.cons_w, l * d.cons_in, d.cons_in),
            (self.edge_w, l * d.edge_in, d.edge_in),
        ];
        for r in &self.rounds {
            v.extend([(r.ws, hl * l, l), (r.wt, hl * l, l), (r.wq, hl * l, l), (r.att, hl, l), (r.mw, l * hl, hl)]);
        }
        v.extend([(self.w1, l * l, l), (self.w2, l, l)]);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub dims: GatDims,
    pub values: Vec<f64>,
}

impl GatParams {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero,
    /// drawn in layout order from ChaCha8 seeded with `seed`.
    pub fn init(dims: GatDims, seed: u64) -> Result<Self, GatError> {
        dims.validate()?;
        let layout = Layout::new(&dims);
        assert_eq!(layout.total, dims.param_count(), "layout disagrees with the closed-form count");
        let mut values = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (off, len, fan_in) in layout.weight_blocks(&dims) {
            let r = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[off..off + len] {
                *v = rng.random_range(-r..=r);
            }
        }
        Ok(GatParams { dims, values })
    }

    pub fn zeros_like(&self) -> Self {
        GatParams { dims: self.dims, values: vec![0.0; self.values.len()] }
    }

    fn check_shape(&self, other: &GatParams) -> Result<(), GatError> {
        if self.dims != other.dims || self.values.len() != other.values.len() {
            return Err(GatError::Dimension(format!("parameter shapes differ: {:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }

    /// Offset of the output bias in `values`.
    pub fn output_bias_index(&self) -> usize {
        Layout::new(&self.dims).b2
    }

    /// Range of the second round's parameters in `values`.
    pub fn round2_range(&self) -> std::ops::Range<usize> {
        let l = Layout::new(&self.dims);
        l.rounds[1].ws..l.w1
    }

    /// Range of the output MLP's final weight vector `w2`.
    pub fn output_weight_range(&self) -> std::ops::Range<usize> {
        let l = Layout::new(&self.dims);
        l.w2..l.b2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// One score per variable, in `(0, 1)`.
    pub scores: Vec<f64>,
    /// True for integer variables; other scores must not be used.
    pub valid: Vec<bool>,
}

impl Prediction {
    /// Scores of integer variables in index order.
    pub fn integer_scores(&self) -> Vec<f64> {
        self.scores.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(s, _)| *s).collect()
    }
}

fn lrelu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn lrelu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = W x + b` for `W` of shape `out.len() x x.len()`.
fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut s = b.map_or(0.0, |b| b[r]);
        for (a, v) in row.iter().zip(x) {
            s += a * v;
        }
        *o = s;
    }
}

/// `dx += W^T dy`.
fn affine_back_input(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (r, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `dW += dy x^T`.
fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, v) in row.iter_mut().zip(x) {
            *d += g * v;
        }
    }
}

/// Edges of one message-passing round, grouped by destination.
struct RoundEdges {
    /// `(source, destination)` per edge, indexed like the graph's edge list.
    ends: Vec<(usize, usize)>,
    by_dst: Vec<Vec<usize>>,
}

impl RoundEdges {
    fn new(ends: Vec<(usize, usize)>, n_dst: usize) -> Self {
        let mut by_dst = vec![Vec::new(); n_dst];
        for (e, &(_, d)) in ends.iter().enumerate() {
            by_dst[d].push(e);
        }
        RoundEdges { ends, by_dst }
    }
}

struct RoundCache {
    sp: Vec<f64>,
    u: Vec<f64>,
    alpha: Vec<f64>,
    agg: Vec<f64>,
    mpre: Vec<f64>,
}

struct Cache {
    pv: Vec<f64>,
    hv: Vec<f64>,
    pc: Vec<f64>,
    hc: Vec<f64>,
    he: Vec<f64>,
    r1: RoundCache,
    hc1: Vec<f64>,
    r2: RoundCache,
    hv2: Vec<f64>,
    zpre: Vec<f64>,
    z: Vec<f64>,
    scores: Vec<f64>,
}

fn round_forward(
    p: &[f64],
    rl: &RoundLayout,
    d: &GatDims,
    src: &[f64],
    dst: &[f64],
    he: &[f64],
    edges: &RoundEdges,
) -> (Vec<f64>, RoundCache) {
    let (l, h) = (d.embed, d.heads);
    let hl = h * l;
    let ns = src.len() / l;
    let nd = dst.len() / l;
    let ne = edges.ends.len();
    let ws = &p[rl.ws..rl.ws + hl * l];
    let wt = &p[rl.wt..rl.wt + hl * l];
    let wq = &p[rl.wq..rl.wq + hl * l];
    let att = &p[rl.att..rl.att + hl];
    let mw = &p[rl.mw..rl.mw + l * hl];
    let mb = &p[rl.mb..rl.mb + l];

    let mut sp = vec![0.0; ns * hl];
    for s in 0..ns {
        affine(ws, None, &src[s * l..(s + 1) * l], &mut sp[s * hl..(s + 1) * hl]);
    }
    let mut tp = vec![0.0; nd * hl];
    for t in 0..nd {
        if !edges.by_dst[t].is_empty() {
            affine(wt, None, &dst[t * l..(t + 1) * l], &mut tp[t * hl..(t + 1) * hl]);
        }
    }
    let mut u = vec![0.0; ne * hl];
    let mut score = vec![0.0; ne * h];
    let mut q = vec![0.0; hl];
    for (e, &(s, t)) in edges.ends.iter().enumerate() {
        affine(wq, None, &he[e * l..(e + 1) * l], &mut q);
        let ue = &mut u[e * hl..(e + 1) * hl];
        for o in 0..hl {
            ue[o] = sp[s * hl + o] + tp[t * hl + o] + q[o];
        }
        for k in 0..h {
            let mut sc = 0.0;
            for c in 0..l {
                sc += att[k * l + c] * lrelu(ue[k * l + c]);
            }
            score[e * h + k] = sc;
        }
    }
    let mut alpha = vec![0.0; ne * h];
    let mut agg = vec![0.0; nd * hl];
    let mut mpre = vec![0.0; nd * l];
    let mut out = dst.to_vec();
    for t in 0..nd {
        let inc = &edges.by_dst[t];
        if inc.is_empty() {
            continue;
        }
        for k in 0..h {
            let mx = inc.iter().map(|&e| score[e * h + k]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &e in inc {
                let w = (score[e * h + k] - mx).exp();
                alpha[e * h + k] = w;
                z += w;
            }
            for &e in inc {
                alpha[e * h + k] /= z;
                let a = alpha[e * h + k];
                let s = edges.ends[e].0;
                for c in 0..l {
                    agg[t * hl + k * l + c] += a * sp[s * hl + k * l + c];
                }
            }
        }
        affine(mw, Some(mb), &agg[t * hl..(t + 1) * hl], &mut mpre[t * l..(t + 1) * l]);
        for c in 0..l {
            out[t * l + c] += lrelu(mpre[t * l + c]);
        }
    }
    (out, RoundCache { sp, u, alpha, agg, mpre })
}


/// Backpropagates `d_out` through one round, accumulating parameter
/// gradients into `g`. Returns gradients for the source features, the
/// destination features, and the edge embeddings.
#[allow(clippy::too_many_arguments)]
fn round_backward(
    p: &[f64],
    g: &mut [f64],
    rl: &RoundLayout,
    d: &GatDims,
    src: &[f64],
    dst: &[f64],
    he: &[f64],
    edges: &RoundEdges,
    cache: &RoundCache,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (l, h) = (d.embed, d.heads);
    let hl = h * l;
    let ns = src.len() / l;
    let nd = dst.len() / l;
    let ne = edges.ends.len();
    let att = &p[rl.att..rl.att + hl];
    let mw = &p[rl.mw..rl.mw + l * hl];

    let mut d_sp = vec![0.0; ns * hl];
    let mut d_tp = vec![0.0; nd * hl];
    let mut d_u = vec![0.0; ne * hl];
    let mut d_agg = vec![0.0; hl];
    let mut d_mpre = vec![0.0; l];
    let mut d_alpha = Vec::new();

    for t in 0..nd {
        let inc = &edges.by_dst[t];
        if inc.is_empty() {
            continue;
        }
        for c in 0..l {
            d_mpre[c] = d_out[t * l + c] * lrelu_grad(cache.mpre[t * l + c]);
        }
        outer_acc(&mut g[rl.mw..rl.mw + l * hl], &d_mpre, &cache.agg[t * hl..(t + 1) * hl]);
        for c in 0..l {
            g[rl.mb + c] += d_mpre[c];
        }
        d_agg.fill(0.0);
        affine_back_input(mw, &d_mpre, &mut d_agg);

        for k in 0..h {
            let dak = &d_agg[k * l..(k + 1) * l];
            let mut weighted = 0.0;
            d_alpha.clear();
            for &e in inc {
                let s = edges.ends[e].0;
                let a = cache.alpha[e * h + k];
                let base = s * hl + k * l;
                let mut da = 0.0;
                for c in 0..l {
                    da += dak[c] * cache.sp[base + c];
                    d_sp[base + c] += a * dak[c];
                }
                weighted += a * da;
                d_alpha.push(da);
            }
            for (idx, &e) in inc.iter().enumerate() {
                let d_score = cache.alpha[e * h + k] * (d_alpha[idx] - weighted);
                let base = e * hl + k * l;
                for c in 0..l {
                    let uc = cache.u[base + c];
                    g[rl.att + k * l + c] += d_score * lrelu(uc);
                    d_u[base + c] = d_score * att[k * l + c] * lrelu_grad(uc);
                }
            }
        }
    }

    let mut d_he = vec![0.0; ne * l];
    for (e, &(s, t)) in edges.ends.iter().enumerate() {
        let du = &d_u[e * hl..(e + 1) * hl];
        for o in 0..hl {
            d_sp[s * hl + o] += du[o];
            d_tp[t * hl + o] += du[o];
        }
        outer_acc(&mut g[rl.wq..rl.wq + hl * l], du, &he[e * l..(e + 1) * l]);
        affine_back_input(&p[rl.wq..rl.wq + hl * l], du, &mut d_he[e * l..(e + 1) * l]);
    }

    let mut d_src = vec![0.0; ns * l];
    for s in 0..ns {
        let ds = &d_sp[s * hl..(s + 1) * hl];
        outer_acc(&mut g[rl.ws..rl.ws + hl * l], ds, &src[s * l..(s + 1) * l]);
        affine_back_input(&p[rl.ws..rl.ws + hl * l], ds, &mut d_src[s * l..(s + 1) * l]);
    }
    let mut d_dst = d_out.to_vec();
    for t in 0..nd {
        let dt = &d_tp[t * hl..(t + 1) * hl];
        outer_acc(&mut g[rl.wt..rl.wt + hl * l], dt, &dst[t * l..(t + 1) * l]);
        affine_back_input(&p[rl.wt..rl.wt + hl * l], dt, &mut d_dst[t * l..(t + 1) * l]);
    }
    (d_src, d_dst, d_he)
}

fn embed(w: &[f64], b: &[f64], x: &[f64], width: usize, l: usize, act: bool) -> (Vec<f64>, Vec<f64>) {
    let rows = if width == 0 { 0 } else { x.len() / width };
    let mut pre = vec![0.0; rows * l];
    for r in 0..rows {
        affine(w, Some(b), &x[r * width..(r + 1) * width], &mut pre[r * l..(r + 1) * l]);
    }
    let post = if act { pre.iter().map(|&v| lrelu(v)).collect() } else { pre.clone() };
    (pre, post)
}

fn embed_backward(g: &mut [f64], w_off: usize, b_off: usize, x: &[f64], width: usize, l: usize, pre: Option<&[f64]>, d_post: &[f64]) {
    let rows = d_post.len() / l;
    let mut dp = vec![0.0; l];
    for r in 0..rows {
        for c in 0..l {
            let gc = d_post[r * l + c];
            dp[c] = match pre {
                Some(pre) => gc * lrelu_grad(pre[r * l + c]),
                None => gc,
            };
        }
        outer_acc(&mut g[w_off..w_off + l * width], &dp, &x[r * width..(r + 1) * width]);
        for c in 0..l {
            g[b_off + c] += dp[c];
        }
    }
}

struct GraphEdges {
    r1: RoundEdges,
    r2: RoundEdges,
    features: Vec<f64>,
}

fn graph_edges(graph: &BipartiteGraph) -> GraphEdges {
    let r1 = RoundEdges::new(graph.edges.iter().map(|&(v, c, _)| (v, c)).collect(), graph.n_cons);
    let r2 = RoundEdges::new(graph.edges.iter().map(|&(v, c, _)| (c, v)).collect(), graph.n_vars);
    GraphEdges { r1, r2, features: graph.edges.iter().map(|e| e.2).collect() }
}

fn forward_cached(params: &GatParams, graph: &BipartiteGraph) -> Result<(Cache, GraphEdges), GatError> {
    let d = &params.dims;
    d.check_graph(graph)?;
    if params.values.len() != d.param_count() {
        return Err(GatError::Dimension(format!("{} parameters, expected {}", params.values.len(), d.param_count())));
    }
    let p = &params.values;
    let lay = Layout::new(d);
    let l = d.embed;
    let ge = graph_edges(graph);
    let (pv, hv) = embed(&p[lay.var_w..lay.var_b], &p[lay.var_b..lay.var_b + l], &graph.var_features, d.var_in, l, true);
    let (pc, hc) = embed(&p[lay.cons_w..lay.cons_b], &p[lay.cons_b..lay.cons_b + l], &graph.cons_features, d.cons_in, l, true);
    let (_, he) = embed(&p[lay.edge_w..lay.edge_b], &p[lay.edge_b..lay.edge_b + l], &ge.features, d.edge_in, l, false);
    let (hc1, r1) = round_forward(p, &lay.rounds[0], d, &hv, &hc, &he, &ge.r1);
    let (hv2, r2) = round_forward(p, &lay.rounds[1], d, &hc1, &hv, &he, &ge.r2);
    let n = graph.n_vars;
    let mut zpre = vec![0.0; n * l];
    let mut scores = vec![0.0; n];
    for i in 0..n {
        affine(&p[lay.w1..lay.b1], Some(&p[lay.b1..lay.b1 + l]), &hv2[i * l..(i + 1) * l], &mut zpre[i * l..(i + 1) * l]);
    }
    let z: Vec<f64> = zpre.iter().map(|&v| lrelu(v)).collect();
    for i in 0..n {
        let mut s = p[lay.b2];
        for c in 0..l {
            s += p[lay.w2 + c] * z[i * l + c];
        }
        scores[i] = sigmoid(s);
    }
    Ok((Cache { pv, hv, pc, hc, he, r1, hc1, r2, hv2, zpre, z, scores }, ge))
}

pub fn forward(params: &GatParams, graph: &BipartiteGraph) -> Result<Prediction, GatError> {
    let (cache, _) = forward_cached(params, graph)?;
    Ok(Prediction { scores: cache.scores, valid: graph.integer_mask.clone() })
}

/// Approximate multiply-add count of one forward pass, used to charge
/// inference to a work clock.
pub fn forward_work(dims: &GatDims, graph: &BipartiteGraph) -> f64 {
    let (l, hl) = (dims.embed as f64, (dims.heads * dims.embed) as f64);
    let (n, m, e) = (graph.n_vars as f64, graph.n_cons as f64, graph.edges.len() as f64);
    let embed = l * (n * dims.var_in as f64 + m * dims.cons_in as f64 + e * dims.edge_in as f64);
    let round = (n + m) * hl * l + e * (hl * l + 3.0 * hl) + (n.max(m)) * l * hl;
    embed + 2.0 * round + n * (l * l + l)
}

/// Per-variable positive label counts over a pool of label vectors.
struct LabelCounts {
    ones: Vec<f64>,
    pools: f64,
}

fn label_counts(valid: &[bool], labels: &[Vec<u8>]) -> Result<LabelCounts, GatError> {
    let n_int = valid.iter().filter(|v| **v).count();
    let mut ones = vec![0.0; n_int];
    for y in labels {
        if y.len() != n_int {
            return Err(GatError::Labels { expected: n_int, got: y.len() });
        }
        for (o, &b) in ones.iter_mut().zip(y) {
            *o += f64::from(b);
        }
    }
    Ok(LabelCounts { ones, pools: labels.len() as f64 })
}

/// Summed binary cross-entropy over every label vector and integer variable,
/// with predictions clipped to `[BCE_CLIP, 1 - BCE_CLIP]`.
pub fn bce_loss(pred: &Prediction, labels: &[Vec<u8>]) -> Result<f64, GatError> {
    let counts = label_counts(&pred.valid, labels)?;
    Ok(bce_from_counts(&pred.integer_scores(), &counts))
}

fn bce_from_counts(scores: &[f64], counts: &LabelCounts) -> f64 {
    scores
        .iter()
        .zip(&counts.ones)
        .map(|(&p, &c1)| {
            let pc = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            -(c1 * pc.ln() + (counts.pools - c1) * (1.0 - pc).ln())
        })
        .sum()
}

/// Loss and its exact gradient with respect to every parameter.
pub fn loss_and_grad(params: &GatParams, graph: &BipartiteGraph, labels: &[Vec<u8>]) -> Result<(f64, GatParams), GatError> {
    let (cache, ge) = forward_cached(params, graph)?;
    let counts = label_counts(&graph.integer_mask, labels)?;
    let d = &params.dims;
    let p = &params.values;
    let lay = Layout::new(d);
    let l = d.embed;
    let n = graph.n_vars;
    let mut g = vec![0.0; p.len()];

    let mut loss = 0.0;
    let mut d_logit = vec![0.0; n];
    let mut k = 0;
    for i in 0..n {
        if !graph.integer_mask[i] {
            continue;
        }
        let pi = cache.scores[i];
        let (c1, u) = (counts.ones[k], counts.pools);
        k += 1;
        let pc = pi.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
        loss -= c1 * pc.ln() + (u - c1) * (1.0 - pc).ln();
        if pc == pi {
            d_logit[i] = u * pi - c1;
        }
    }

    let mut d_hv2 = vec![0.0; n * l];
    let mut dz = vec![0.0; l];
    for i in 0..n {
        let dl = d_logit[i];
        if dl == 0.0 {
            continue;
        }
        g[lay.b2] += dl;
        for c in 0..l {
            g[lay.w2 + c] += dl * cache.z[i * l + c];
            dz[c] = dl * p[lay.w2 + c] * lrelu_grad(cache.zpre[i * l + c]);
        }
        outer_acc(&mut g[lay.w1..lay.b1], &dz, &cache.hv2[i * l..(i + 1) * l]);
        for c in 0..l {
            g[lay.b1 + c] += dz[c];
        }
        affine_back_input(&p[lay.w1..lay.b1], &dz, &mut d_hv2[i * l..(i + 1) * l]);
    }

    let (d_hc1, mut d_hv, d_he2) =
        round_backward(p, &mut g, &lay.rounds[1], d, &cache.hc1, &cache.hv, &cache.he, &ge.r2, &cache.r2, &d_hv2);
    let (d_hv_src, d_hc, d_he1) =
        round_backward(p, &mut g, &lay.rounds[0], d, &cache.hv, &cache.hc, &cache.he, &ge.r1, &cache.r1, &d_hc1);
    for (a, b) in d_hv.iter_mut().zip(&d_hv_src) {
        *a += b;
    }
    let d_he: Vec<f64> = d_he1.iter().zip(&d_he2).map(|(a, b)| a + b).collect();

    embed_backward(&mut g, lay.var_w, lay.var_b, &graph.var_features, d.var_in, l, Some(&cache.pv), &d_hv);
    embed_backward(&mut g, lay.cons_w, lay.cons_b, &graph.cons_features, d.cons_in, l, Some(&cache.pc), &d_hc);
    embed_backward(&mut g, lay.edge_w, lay.edge_b, &ge.features, d.edge_in, l, None, &d_he);
    Ok((loss, GatParams { dims: *d, values: g }))
}

pub fn grad(params: &GatParams, graph: &BipartiteGraph, labels: &[Vec<u8>]) -> Result<GatParams, GatError> {
    loss_and_grad(params, graph, labels).map(|r| r.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub rng_seed: u64,
    pub best_val_loss: f64,
    /// File name of the best checkpoint, relative to its directory.
    pub best_checkpoint: Option<String>,
}

impl TrainState {
    pub fn new(params: &GatParams, rng_seed: u64) -> Self {
        let n = params.values.len();
        TrainState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            rng_seed,
            best_val_loss: f64::INFINITY,
            best_checkpoint: None,
        }
    }
}

/// One bias-corrected Adam update. Returns the new parameters.
pub fn adam_step(params: &GatParams, grads: &GatParams, state: &mut TrainState, lr: f64) -> Result<GatParams, GatError> {
    params.check_shape(grads)?;
    if state.m.len() != params.values.len() || state.v.len() != params.values.len() {
        return Err(GatError::Dimension("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let mut out = params.clone();
    for i in 0..out.values.len() {
        let gi = grads.values[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * gi;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * gi * gi;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        out.values[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even if epochs remain.
    pub max_steps: Option<u64>,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 16, epochs: 100, max_steps: None, lr: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainExample {
    pub graph: BipartiteGraph,
    pub labels: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub step: u64,
    /// Mean per-instance loss of the epoch's batches, measured before each update.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: GatParams,
    pub best_epoch: usize,
    pub state: TrainState,
    pub last: GatParams,
    pub curve: Vec<CurvePoint>,
}

/// Summed loss over a dataset, evaluated in parallel and reduced in order.
pub fn dataset_loss(params: &GatParams, data: &[TrainExample]) -> Result<f64, GatError> {
    let losses: Result<Vec<f64>, GatError> =
        data.par_iter().map(|ex| forward(params, &ex.graph).and_then(|p| bce_loss(&p, &ex.labels))).collect();
    Ok(losses?.iter().sum())
}

/// Trains with summed-loss minibatches, reshuffled every epoch, keeping the
/// parameters with the lowest validation loss. If `checkpoint` is given the
/// best parameters are written there whenever they improve.
pub fn train(
    train_set: &[TrainExample],
    val_set: &[TrainExample],
    dims: GatDims,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome, GatError> {
    if train_set.is_empty() {
        return Err(GatError::Empty("training"));
    }
    if val_set.is_empty() {
        return Err(GatError::Empty("validation"));
    }
    if cfg.batch_size == 0 {
        return Err(GatError::Dimension("batch size must be positive".into()));
    }
    let mut params = GatParams::init(dims, derive_seed(cfg.seed, "init", 0))?;
    let mut state = TrainState::new(&params, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle", 0));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut curve = Vec::new();

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|s| state.step >= s) {
                break 'epochs;
            }
            let parts: Result<Vec<(f64, GatParams)>, GatError> =
                batch.par_iter().map(|&i| loss_and_grad(&params, &train_set[i].graph, &train_set[i].labels)).collect();
            let mut g = params.zeros_like();
            let mut loss = 0.0;
            for (l, gi) in parts? {
                loss += l;
                for (a, b) in g.values.iter_mut().zip(&gi.values) {
                    *a += b;
                }
            }
            if !loss.is_finite() || g.values.iter().any(|v| !v.is_finite()) {
                return Err(GatError::Diverged { step: state.step, loss });
            }
            epoch_loss += loss;
            seen += batch.len();
            params = adam_step(&params, &g, &mut state, cfg.lr)?;
        }
        if seen == 0 {
            break;
        }
        let val_loss = dataset_loss(&params, val_set)? / val_set.len() as f64;
        if !val_loss.is_finite() {
            return Err(GatError::Diverged { step: state.step, loss: val_loss });
        }
        curve.push(CurvePoint { epoch, step: state.step, train_loss: epoch_loss / seen as f64, val_loss });
        log::debug!("epoch {epoch} step {} train {:.4} val {val_loss:.4}", state.step, epoch_loss / seen as f64);
        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            best = params.clone();
            best_epoch = epoch;
            if let Some(path) = checkpoint {
                let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
                state.best_checkpoint = Some(name);
                save_checkpoint(&best, Some(&state), path)?;
            }
        }
    }
    Ok(TrainOutcome { best, best_epoch, state, last: params, curve })
}

pub fn write_curve_csv(curve: &[CurvePoint], path: &Path) -> Result<(), GatError> {
    let mut s = String::from("epoch,step,train_loss,val_loss\n");
    for c in curve {
        s.push_str(&format!("{},{},{},{}\n", c.epoch, c.step, c.train_loss, c.val_loss));
    }
    write_atomic(path, s.as_bytes())?;
    Ok(())
}

fn put_u32(b: &mut Vec<u8>, v: usize) {
    b.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(b: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

/// Binary checkpoint: magic `IDPASGAT`, u32 version, six u32 dims
/// (L, H, var_in, cons_in, edge_in, B), u64 parameter count, the parameters
/// as little-endian f64, then a u8 state flag. With state: u64 step, u64
/// rng seed, f64 best validation loss, u32-length-prefixed UTF-8 checkpoint
/// reference, then the first and second moments.
pub fn checkpoint_bytes(params: &GatParams, state: Option<&TrainState>) -> Vec<u8> {
    let d = &params.dims;
    let mut b = Vec::with_capacity(64 + params.values.len() * 24);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.embed, d.heads, d.var_in, d.cons_in, d.edge_in, d.identity_width] {
        put_u32(&mut b, v);
    }
    b.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    put_f64s(&mut b, &params.values);
    match state {
        None => b.push(0),
        Some(s) => {
            b.push(1);
            b.extend_from_slice(&s.step.to_le_bytes());
            b.extend_from_slice(&s.rng_seed.to_le_bytes());
            b.extend_from_slice(&s.best_val_loss.to_le_bytes());
            let r = s.best_checkpoint.as_deref().unwrap_or("");
            put_u32(&mut b, r.len());
            b.extend_from_slice(r.as_bytes());
            put_f64s(&mut b, &s.m);
            put_f64s(&mut b, &s.v);
        }
    }
    b
}

pub fn save_checkpoint(params: &GatParams, state: Option<&TrainState>, path: &Path) -> Result<(), GatError> {
    write_atomic(path, &checkpoint_bytes(params, state))?;
    Ok(())
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.b.len() - self.at < n {
            return Err(format!("truncated at byte {}", self.at));
        }
        let s = &self.b[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(GatParams, Option<TrainState>), String> {
    let mut r = Reader { b: bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let dims = GatDims {
        embed: r.u32()?,
        heads: r.u32()?,
        var_in: r.u32()?,
        cons_in: r.u32()?,
        edge_in: r.u32()?,
        identity_width: r.u32()?,
    };
    dims.validate().map_err(|e| e.to_string())?;
    if dims.var_in != VAR_FEATURES + dims.identity_width {
        return Err(format!("variable width {} inconsistent with {} identity bits", dims.var_in, dims.identity_width));
    }
    let count = r.u64()? as usize;
    if count != dims.param_count() {
        return Err(format!("parameter count {count} does not match dims ({})", dims.param_count()));
    }
    let values = r.f64s(count)?;
    let params = GatParams { dims, values };
    let state = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step = r.u64()?;
            let rng_seed = r.u64()?;
            let best_val_loss = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let len = r.u32()?;
            let s = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?;
            let best_checkpoint = (!s.is_empty()).then(|| s.to_string());
            let m = r.f64s(count)?;
            let v = r.f64s(count)?;
            Some(TrainState { step, m, v, rng_seed, best_val_loss, best_checkpoint })
        }
        f => return Err(format!("bad state flag {f}")),
    };
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok((params, state))
}

pub fn load_checkpoint(path: &Path) -> Result<(GatParams, Option<TrainState>), GatError> {
    let bytes = fs::read(path)?;
    checkpoint_from_bytes(&bytes).map_err(|msg| GatError::Checkpoint { path: path.display().to_string(), msg })
}

/// Loads a checkpoint and checks it against the expected dimensions.
pub fn load_checkpoint_for(path: &Path, dims: &GatDims) -> Result<GatParams, GatError> {
    let (p, _) = load_checkpoint(path)?;
    if p.dims != *dims {
        return Err(GatError::Checkpoint {
            path: path.display().to_string(),
            msg: format!("dimensions {:?} do not match expected {:?}", p.dims, dims),
        });
    }
    Ok(p)
}
