//! GAT and GIN message passing over local snapshot graphs.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamId, ParamSet, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GnnKind {
    Gat,
    Gin,
}

impl FromStr for GnnKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(Self::Gat),
            "gin" => Ok(Self::Gin),
            other => Err(format!("unknown GNN `{other}` (expected gat|gin)")),
        }
    }
}

impl fmt::Display for GnnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gat => "gat",
            Self::Gin => "gin",
        })
    }
}

/// Aggregation structure on `n` local nodes: node `dst[e]` receives from
/// `src[e]` with weight `weight[e]`. Self-edges are not listed.
#[derive(Clone, Debug)]
pub struct Adjacency {
    n: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    weight: Vec<f64>,
    // with self-edges appended, for attention
    loop_src: Arc<[usize]>,
    loop_dst: Arc<[usize]>,
    log_weight: Tensor,
    weight_col: Tensor,
}

impl Adjacency {
    /// `edges` are `(from, to, weight)` triples; weights must be positive.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, AutodiffError> {
        for &(s, d, w) in edges {
            if s >= n || d >= n {
                return Err(AutodiffError::InvalidArgument(format!("edge {s}->{d} outside {n} nodes")));
            }
            if s == d {
                return Err(AutodiffError::InvalidArgument(format!("explicit self-edge on node {s}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(AutodiffError::InvalidArgument(format!("edge {s}->{d} has weight {w}")));
            }
        }
        let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let weight: Vec<f64> = edges.iter().map(|e| e.2).collect();
        let loop_src: Vec<usize> = src.iter().copied().chain(0..n).collect();
        let loop_dst: Vec<usize> = dst.iter().copied().chain(0..n).collect();
        let log_w: Vec<f64> = weight.iter().map(|w| w.ln()).chain(std::iter::repeat_n(0.0, n)).collect();
        Ok(Self {
            n,
            weight_col: Tensor::column(&weight),
            log_weight: Tensor::column(&log_w),
            src: src.into(),
            dst: dst.into(),
            weight,
            loop_src: loop_src.into(),
            loop_dst: loop_dst.into(),
        })
    }

    pub fn empty(n: usize) -> Self {
        Self::new(n, &[]).expect("no edges to validate")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.src.len()).map(|e| (self.src[e], self.dst[e], self.weight[e]))
    }

    /// Relabels nodes: new index of old node `i` is `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let edges: Vec<_> = self.edges().map(|(s, d, w)| (perm[s], perm[d], w)).collect();
        Self::new(self.n, &edges).expect("permutation keeps edges valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeadCombine {
    Concat,
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatHead {
    /// `[d, D]`
    pub w: ParamId,
    /// `[D, 1]`, applied to the receiving node
    pub a_dst: ParamId,
    /// `[D, 1]`, applied to the sending node
    pub a_src: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatParams {
    pub heads: Vec<GatHead>,
    pub combine: HeadCombine,
    pub slope: f64,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    Learnable(ParamId),
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GinParams {
    pub epsilon: Epsilon,
    /// `(weight [in, out], bias [1, out])` per MLP layer; ReLU between layers.
    pub mlp: Vec<(ParamId, ParamId)>,
    pub dropout: f64,
}

fn var(vars: &[Var], id: ParamId) -> Var {
    vars[id.0]
}

/// Attention coefficients of one head over `adjacency` plus self-edges,
/// in edge order followed by one self-edge per node. Returns `(alpha, Wh)`.
pub fn gat_attention(
    tape: &mut Tape,
    vars: &[Var],
    x: Var,
    adjacency: &Adjacency,
    head: &GatHead,
    slope: f64,
) -> Result<(Var, Var), AutodiffError> {
    let wh = tape.matmul(x, var(vars, head.w))?;
    let s_dst = tape.matmul(wh, var(vars, head.a_dst))?;
    let s_src = tape.matmul(wh, var(vars, head.a_src))?;
    let l_dst = tape.gather_rows(s_dst, adjacency.loop_dst.clone())?;
    let l_src = tape.gather_rows(s_src, adjacency.loop_src.clone())?;
    let logits = tape.add(l_dst, l_src)?;
    let mut logits = tape.leaky_relu(logits, slope)?;
    if adjacency.edge_count() > 0 {
        let log_w = tape.constant(adjacency.log_weight.clone());
        logits = tape.add(logits, log_w)?;
    }
    let alpha = tape.segment_softmax(logits, adjacency.loop_dst.clone(), adjacency.n)?;
    Ok((alpha, wh))
}

/// Dense `[n, n]` attention of one head: row `i` holds the weights node `i`
/// gives each sender, exactly zero outside its in-neighbors and itself.
/// Parallel edges merge into one entry with their weights summed.
pub fn attention_matrix(
    tape: &mut Tape,
    vars: &[Var],
    x: Var,
    adjacency: &Adjacency,
    head: &GatHead,
    slope: f64,
) -> Result<Var, AutodiffError> {
    let n = adjacency.n;
    let wh = tape.matmul(x, var(vars, head.w))?;
    let s_dst = tape.matmul(wh, var(vars, head.a_dst))?;
    let s_src = tape.matmul(wh, var(vars, head.a_src))?;
    let s_src = tape.transpose(s_src)?;
    let logits = tape.add(s_dst, s_src)?;
    let logits = tape.leaky_relu(logits, slope)?;
    let mut mask = vec![false; n * n];
    let mut weight = vec![0.0; n * n];
    for i in 0..n {
        mask[i * n + i] = true;
        weight[i * n + i] = 1.0;
    }
    for (s, d, w) in adjacency.edges() {
        mask[d * n + s] = true;
        weight[d * n + s] += w;
    }
    let log_w = Tensor::new(vec![n, n], weight.iter().map(|&w| if w > 0.0 { w.ln() } else { 0.0 }).collect())?;
    let log_w = tape.constant(log_w);
    let logits = tape.add(logits, log_w)?;
    tape.masked_softmax_rows(logits, &mask)
}

/// One GAT layer: per head `Z_i = sum_j alpha_ij W h_j` over in-neighbors and self.
pub fn gat_forward(
    tape: &mut Tape,
    vars: &[Var],
    x: Var,
    adjacency: &Adjacency,
    params: &GatParams,
    train: bool,
) -> Result<Var, AutodiffError> {
    let x = tape.dropout(x, params.dropout, train)?;
    let mut outs = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let (alpha, wh) = gat_attention(tape, vars, x, adjacency, head, params.slope)?;
        let msgs = tape.gather_rows(wh, adjacency.loop_src.clone())?;
        let msgs = tape.mul(msgs, alpha)?;
        outs.push(tape.segment_sum(msgs, adjacency.loop_dst.clone(), adjacency.n)?);
    }
    match params.combine {
        HeadCombine::Concat => tape.concat_cols(&outs),
        HeadCombine::Average => {
            let mut acc = outs[0];
            for &o in &outs[1..] {
                acc = tape.add(acc, o)?;
            }
            tape.scale(acc, 1.0 / outs.len() as f64)
        }
    }
}

/// `(1 + eps) h_i + sum_j w_ij h_j`, before the MLP.
pub fn gin_aggregate(
    tape: &mut Tape,
    vars: &[Var],
    x: Var,
    adjacency: &Adjacency,
    epsilon: Epsilon,
) -> Result<Var, AutodiffError> {
    let own = match epsilon {
        Epsilon::Fixed(e) => tape.scale(x, 1.0 + e)?,
        Epsilon::Learnable(id) => {
            let scaled = tape.mul(x, var(vars, id))?;
            tape.add(x, scaled)?
        }
    };
    if adjacency.edge_count() == 0 {
        return Ok(own);
    }
    let msgs = tape.gather_rows(x, adjacency.src.clone())?;
    let w = tape.constant(adjacency.weight_col.clone());
    let msgs = tape.mul(msgs, w)?;
    let agg = tape.segment_sum(msgs, adjacency.dst.clone(), adjacency.n)?;
    tape.add(own, agg)
}

/// Reference mean aggregation over neighbors and self, used to contrast with sum.
pub fn mean_aggregate(tape: &mut Tape, x: Var, adjacency: &Adjacency) -> Result<Var, AutodiffError> {
    let msgs = tape.gather_rows(x, adjacency.loop_src.clone())?;
    let sum = tape.segment_sum(msgs, adjacency.loop_dst.clone(), adjacency.n)?;
    let mut deg = vec![0.0; adjacency.n];
    for &d in adjacency.loop_dst.iter() {
        deg[d] += 1.0;
    }
    let inv = tape.constant(Tensor::column(&deg.iter().map(|d| 1.0 / d).collect::<Vec<_>>()));
    tape.mul(sum, inv)
}

pub fn gin_forward(
    tape: &mut Tape,
    vars: &[Var],
    x: Var,
    adjacency: &Adjacency,
    params: &GinParams,
    train: bool,
) -> Result<Var, AutodiffError> {
    let x = tape.dropout(x, params.dropout, train)?;
    let mut h = gin_aggregate(tape, vars, x, adjacency, params.epsilon)?;
    for (k, &(w, b)) in params.mlp.iter().enumerate() {
        h = tape.matmul(h, var(vars, w))?;
        h = tape.add(h, var(vars, b))?;
        if k + 1 < params.mlp.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnnConfig {
    pub kind: GnnKind,
    /// Per-head width for GAT; MLP width for GIN.
    pub hidden: usize,
    pub heads: usize,
    pub depth: usize,
    /// `None` makes GIN's epsilon learnable (initialised at 0).
    pub gin_epsilon: Option<f64>,
    pub dropout: f64,
}

impl GnnConfig {
    pub fn output_dim(&self) -> usize {
        self.hidden
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GnnLayer {
    Gat(GatParams),
    Gin(GinParams),
}

/// A depth-1 or depth-2 GNN; ReLU between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnStack {
    pub layers: Vec<GnnLayer>,
    pub output_dim: usize,
}

impl GnnStack {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        config: &GnnConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        if !(1..=2).contains(&config.depth) {
            return Err(AutodiffError::InvalidArgument(format!("GNN depth must be 1 or 2, got {}", config.depth)));
        }
        if config.hidden == 0 || config.heads == 0 {
            return Err(AutodiffError::InvalidArgument("GNN width and heads must be positive".into()));
        }
        let d = config.hidden;
        let mut layers = Vec::new();
        let mut dim = in_dim;
        for l in 0..config.depth {
            let last = l + 1 == config.depth;
            match config.kind {
                GnnKind::Gat => {
                    let heads = (0..config.heads)
                        .map(|h| GatHead {
                            w: params.add_glorot(format!("{prefix}.l{l}.h{h}.w"), dim, d, rng),
                            a_dst: params.add_glorot(format!("{prefix}.l{l}.h{h}.a_dst"), d, 1, rng),
                            a_src: params.add_glorot(format!("{prefix}.l{l}.h{h}.a_src"), d, 1, rng),
                        })
                        .collect();
                    let combine = if last { HeadCombine::Average } else { HeadCombine::Concat };
                    layers.push(GnnLayer::Gat(GatParams {
                        heads,
                        combine,
                        slope: LEAKY_SLOPE,
                        dropout: config.dropout,
                    }));
                    dim = if last { d } else { d * config.heads };
                }
                GnnKind::Gin => {
                    let epsilon = match config.gin_epsilon {
                        Some(e) => Epsilon::Fixed(e),
                        None => Epsilon::Learnable(params.add(format!("{prefix}.l{l}.eps"), Tensor::zeros(&[1, 1]))),
                    };
                    let w1 = params.add_glorot(format!("{prefix}.l{l}.mlp0.w"), dim, d, rng);
                    let b1 = params.add(format!("{prefix}.l{l}.mlp0.b"), Tensor::zeros(&[1, d]));
                    let w2 = params.add_glorot(format!("{prefix}.l{l}.mlp1.w"), d, d, rng);
                    let b2 = params.add(format!("{prefix}.l{l}.mlp1.b"), Tensor::zeros(&[1, d]));
                    layers.push(GnnLayer::Gin(GinParams {
                        epsilon,
                        mlp: vec![(w1, b1), (w2, b2)],
                        dropout: config.dropout,
                    }));
                    dim = d;
                }
            }
        }
        Ok(Self {
            layers,
            output_dim: dim,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        adjacency: &Adjacency,
        train: bool,
    ) -> Result<Var, AutodiffError> {
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                h = tape.relu(h)?;
            }
            h = match layer {
                GnnLayer::Gat(p) => gat_forward(tape, vars, h, adjacency, p, train)?,
                GnnLayer::Gin(p) => gin_forward(tape, vars, h, adjacency, p, train)?,
            };
        }
        Ok(h)
    }
}

/// Scalar count of one GNN stack, from the configuration alone.
pub fn stack_param_count(in_dim: usize, config: &GnnConfig) -> usize {
    let d = config.hidden;
    let mut dim = in_dim;
    let mut total = 0;
    for l in 0..config.depth {
        let last = l + 1 == config.depth;
        match config.kind {
            GnnKind::Gat => {
                total += config.heads * (dim * d + 2 * d);
                dim = if last { d } else { d * config.heads };
            }
            GnnKind::Gin => {
                total += usize::from(config.gin_epsilon.is_none()) + dim * d + d + d * d + d;
                dim = d;
            }
        }
    }
    total
}
