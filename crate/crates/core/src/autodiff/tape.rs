use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{
    broadcast_index, broadcast_shape, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_in_place,
};
use super::{AutodiffError, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Operations the tape knows how to record and differentiate.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// 2-D `[m,k]·[k,p]`, or batched 3-D `[b,m,k]·[b,k,p]`.
    MatMul,
    /// Elementwise sum with broadcasting over size-1 dimensions.
    Add,
    /// Elementwise product with broadcasting over size-1 dimensions.
    Mul,
    ConcatRows,
    ConcatCols,
    LeakyRelu(f64),
    Relu,
    Sigmoid,
    /// Softmax over the last dimension.
    SoftmaxRows,
    Log,
    Scale(f64),
    Sum,
    /// Softmax over the last dimension where `false` positions get weight 0.
    MaskedSoftmaxRows(Arc<[bool]>),
    /// Inverted dropout; identity when `train` is false.
    Dropout { rate: f64, train: bool },
    Reshape(Vec<usize>),
    /// Swaps the last two dimensions.
    Transpose,
    GatherRows(Arc<[usize]>),
    /// Sums rows sharing a segment id into a `[count, cols]` output.
    SegmentSum { segments: Arc<[usize]>, count: usize },
    /// Column-wise softmax among rows that share a segment id.
    SegmentSoftmax { segments: Arc<[usize]>, count: usize },
    Clamp { lo: f64, hi: f64 },
    SliceCols { start: usize, len: usize },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::ConcatRows => "concat_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::LeakyRelu(_) => "leaky_relu",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::Log => "log",
            OpKind::Scale(_) => "scale",
            OpKind::Sum => "sum",
            OpKind::MaskedSoftmaxRows(_) => "masked_softmax_rows",
            OpKind::Dropout { .. } => "dropout",
            OpKind::Reshape(_) => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::GatherRows(_) => "gather_rows",
            OpKind::SegmentSum { .. } => "segment_sum",
            OpKind::SegmentSoftmax { .. } => "segment_softmax",
            OpKind::Clamp { .. } => "clamp",
            OpKind::SliceCols { .. } => "slice_cols",
        }
    }
}

enum Recorded {
    Leaf,
    Constant,
    Op(OpKind),
    DropoutMask(Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Recorded,
    inputs: Vec<usize>,
    needs_grad: bool,
}

/// Define-by-run record of a forward computation.
///
/// A fresh tape is built for every forward pass; [`Tape::backward`] consumes it,
/// so gradients from one step cannot leak into the next.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &OpKind, shapes: &[&[usize]]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.name(),
        shapes: shapes
            .iter()
            .map(|s| format!("{s:?}"))
            .collect::<Vec<_>>()
            .join(" vs "),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// The seed drives dropout masks drawn on this tape.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Recorded::Leaf, Vec::new(), true)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Recorded::Constant, Vec::new(), false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.tape, self.id, "variable belongs to a different tape");
        &self.nodes[var.index].value
    }

    fn push(&mut self, value: Tensor, op: Recorded, inputs: Vec<usize>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, var: Var) -> Result<usize, AutodiffError> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(var.index)
    }

    /// Runs `op` on `inputs`, recording the result.
    pub fn apply(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let ids = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>, _>>()?;
        let arity = match op {
            OpKind::MatMul | OpKind::Add | OpKind::Mul => Some(2),
            OpKind::ConcatRows | OpKind::ConcatCols => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if ids.len() != n {
                return Err(AutodiffError::InvalidArgument(format!(
                    "{} takes {} inputs, got {}",
                    op.name(),
                    n,
                    ids.len()
                )));
            }
        } else if ids.is_empty() {
            return Err(AutodiffError::InvalidArgument(format!(
                "{} needs at least one input",
                op.name()
            )));
        }
        let needs_grad = ids.iter().any(|&i| self.nodes[i].needs_grad);
        let (value, recorded) = self.forward(op, &ids)?;
        Ok(self.push(value, recorded, ids, needs_grad))
    }

    fn forward(&mut self, op: OpKind, ids: &[usize]) -> Result<(Tensor, Recorded), AutodiffError> {
        let x = &self.nodes[ids[0]].value;
        let value = match &op {
            OpKind::MatMul => {
                let y = &self.nodes[ids[1]].value;
                let (a, b) = (x.shape(), y.shape());
                match (a.len(), b.len()) {
                    (2, 2) if a[1] == b[0] => {
                        let mut out = vec![0.0; a[0] * b[1]];
                        matmul_acc(x.data(), y.data(), &mut out, a[0], a[1], b[1]);
                        Tensor::from_parts(vec![a[0], b[1]], out)
                    }
                    (3, 3) if a[0] == b[0] && a[2] == b[1] => {
                        let (bs, m, k, p) = (a[0], a[1], a[2], b[2]);
                        let mut out = vec![0.0; bs * m * p];
                        for i in 0..bs {
                            matmul_acc(
                                &x.data()[i * m * k..(i + 1) * m * k],
                                &y.data()[i * k * p..(i + 1) * k * p],
                                &mut out[i * m * p..(i + 1) * m * p],
                                m,
                                k,
                                p,
                            );
                        }
                        Tensor::from_parts(vec![bs, m, p], out)
                    }
                    _ => return Err(mismatch(&op, &[a, b])),
                }
            }
            OpKind::Add | OpKind::Mul => {
                let y = &self.nodes[ids[1]].value;
                let shape = broadcast_shape(x.shape(), y.shape())
                    .ok_or_else(|| mismatch(&op, &[x.shape(), y.shape()]))?;
                let f = |a: f64, b: f64| if op == OpKind::Add { a + b } else { a * b };
                let data = if x.shape() == y.shape() {
                    x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect()
                } else {
                    let ia = broadcast_index(x.shape(), &shape);
                    let ib = broadcast_index(y.shape(), &shape);
                    ia.iter()
                        .zip(&ib)
                        .map(|(&i, &j)| f(x.data()[i], y.data()[j]))
                        .collect()
                };
                Tensor::from_parts(shape, data)
            }
            OpKind::ConcatRows => {
                let cols = x.cols();
                let mut rows = 0;
                let mut data = Vec::new();
                for &i in ids {
                    let t = &self.nodes[i].value;
                    if t.rank() != 2 || t.cols() != cols {
                        return Err(mismatch(&op, &[x.shape(), t.shape()]));
                    }
                    rows += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                Tensor::from_parts(vec![rows, cols], data)
            }
            OpKind::ConcatCols => {
                let rows = x.rows();
                let mut total = 0;
                for &i in ids {
                    let t = &self.nodes[i].value;
                    if t.rank() != 2 || t.rows() != rows {
                        return Err(mismatch(&op, &[x.shape(), t.shape()]));
                    }
                    total += t.cols();
                }
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &i in ids {
                        data.extend_from_slice(self.nodes[i].value.row(r));
                    }
                }
                Tensor::from_parts(vec![rows, total], data)
            }
            OpKind::LeakyRelu(slope) => x.map(|v| if v > 0.0 { v } else { slope * v }),
            OpKind::Relu => x.map(|v| v.max(0.0)),
            OpKind::Sigmoid => x.map(sigmoid),
            OpKind::Log => x.map(f64::ln),
            OpKind::Scale(c) => x.map(|v| c * v),
            OpKind::Clamp { lo, hi } => {
                if lo > hi {
                    return Err(AutodiffError::InvalidArgument(format!(
                        "clamp bounds reversed: {lo} > {hi}"
                    )));
                }
                x.map(|v| v.clamp(*lo, *hi))
            }
            OpKind::Sum => Tensor::scalar(x.data().iter().sum()),
            OpKind::SoftmaxRows => {
                let mut out = x.clone();
                let c = x.cols();
                if c > 0 {
                    out.data_mut().chunks_mut(c).for_each(softmax_in_place);
                }
                out
            }
            OpKind::MaskedSoftmaxRows(mask) => {
                if mask.len() != x.len() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: op.name(),
                        shapes: format!("{:?} vs mask of {}", x.shape(), mask.len()),
                    });
                }
                let mut out = x.clone();
                for (v, &keep) in out.data_mut().iter_mut().zip(mask.iter()) {
                    if !keep {
                        *v = f64::NEG_INFINITY;
                    }
                }
                let c = x.cols();
                if c > 0 {
                    out.data_mut().chunks_mut(c).for_each(softmax_in_place);
                }
                out
            }
            OpKind::Dropout { rate, train } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(AutodiffError::InvalidArgument(format!(
                        "dropout rate {rate} outside [0, 1)"
                    )));
                }
                if !*train || *rate == 0.0 {
                    let out = x.clone();
                    return Ok((out, Recorded::DropoutMask(Vec::new())));
                }
                let keep = 1.0 / (1.0 - rate);
                let n = x.len();
                let mask: Vec<f64> = (0..n)
                    .map(|_| if self.rng.random::<f64>() < *rate { 0.0 } else { keep })
                    .collect();
                let x = &self.nodes[ids[0]].value;
                let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                return Ok((
                    Tensor::from_parts(x.shape().to_vec(), data),
                    Recorded::DropoutMask(mask),
                ));
            }
            OpKind::Reshape(shape) => x
                .reshape(shape)
                .map_err(|_| mismatch(&op, &[x.shape(), shape]))?,
            OpKind::Transpose => {
                if x.rank() < 2 {
                    return Err(mismatch(&op, &[x.shape()]));
                }
                transpose_last(x)
            }
            OpKind::GatherRows(idx) => {
                if x.rank() != 2 {
                    return Err(mismatch(&op, &[x.shape()]));
                }
                let c = x.cols();
                let rows = x.shape()[0];
                let mut data = Vec::with_capacity(idx.len() * c);
                for &i in idx.iter() {
                    if i >= rows {
                        return Err(AutodiffError::InvalidArgument(format!(
                            "gather_rows index {i} out of range for {rows} rows"
                        )));
                    }
                    data.extend_from_slice(x.row(i));
                }
                Tensor::from_parts(vec![idx.len(), c], data)
            }
            OpKind::SegmentSum { segments, count } => {
                if x.rank() != 2 || segments.len() != x.shape()[0] {
                    return Err(AutodiffError::ShapeMismatch {
                        op: op.name(),
                        shapes: format!("{:?} vs {} segment ids", x.shape(), segments.len()),
                    });
                }
                if let Some(&bad) = segments.iter().find(|&&s| s >= *count) {
                    return Err(AutodiffError::InvalidArgument(format!(
                        "segment id {bad} out of range for {count} segments"
                    )));
                }
                let c = x.cols();
                let mut data = vec![0.0; count * c];
                for (r, &s) in segments.iter().enumerate() {
                    for (o, v) in data[s * c..(s + 1) * c].iter_mut().zip(x.row(r)) {
                        *o += v;
                    }
                }
                Tensor::from_parts(vec![*count, c], data)
            }
            OpKind::SegmentSoftmax { segments, count } => {
                if x.rank() != 2 || segments.len() != x.shape()[0] {
                    return Err(AutodiffError::ShapeMismatch {
                        op: op.name(),
                        shapes: format!("{:?} vs {} segment ids", x.shape(), segments.len()),
                    });
                }
                if let Some(&bad) = segments.iter().find(|&&s| s >= *count) {
                    return Err(AutodiffError::InvalidArgument(format!(
                        "segment id {bad} out of range for {count} segments"
                    )));
                }
                segment_softmax(x, segments, *count)
            }
            OpKind::SliceCols { start, len } => {
                if x.rank() != 2 || start + len > x.cols() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: op.name(),
                        shapes: format!("{:?} vs columns {}..{}", x.shape(), start, start + len),
                    });
                }
                let mut data = Vec::with_capacity(x.rows() * len);
                for r in 0..x.rows() {
                    data.extend_from_slice(&x.row(r)[*start..start + len]);
                }
                Tensor::from_parts(vec![x.rows(), *len], data)
            }
        };
        Ok((value, Recorded::Op(op)))
    }

    /// Reverse-mode sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, AutodiffError> {
        let root = self.check(loss)?;
        let loss_value = &self.nodes[root].value;
        if loss_value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::filled(nodes[root].value.shape(), 1.0));

        for id in (0..=root).rev() {
            let node = &nodes[id];
            let op = match &node.op {
                Recorded::Leaf | Recorded::Constant => continue,
                Recorded::Op(op) => Some(op),
                Recorded::DropoutMask(_) => None,
            };
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = match op {
                None => {
                    let Recorded::DropoutMask(mask) = &node.op else { unreachable!() };
                    let dx = if mask.is_empty() {
                        g
                    } else {
                        let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                        Tensor::from_parts(g.shape().to_vec(), data)
                    };
                    vec![Some(dx)]
                }
                Some(op) => input_grads(op, node, &nodes, &g),
            };
            for (&input, dx) in node.inputs.iter().zip(contributions) {
                let Some(dx) = dx else { continue };
                if !nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(existing) => existing.add_assign(&dx),
                    slot => *slot = Some(dx),
                }
            }
        }

        let leaves = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Recorded::Leaf))
            .map(|(i, n)| {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (i, g)
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            leaves,
        })
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn transpose_last(x: &Tensor) -> Tensor {
    let shape = x.shape();
    let r = shape.len();
    let (m, n) = (shape[r - 2], shape[r - 1]);
    let batch = x.len() / (m * n).max(1);
    let mut data = vec![0.0; x.len()];
    for b in 0..batch {
        let src = &x.data()[b * m * n..(b + 1) * m * n];
        let dst = &mut data[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(r - 2, r - 1);
    Tensor::from_parts(out_shape, data)
}

fn segment_softmax(x: &Tensor, segments: &[usize], count: usize) -> Tensor {
    let c = x.cols();
    let mut max = vec![f64::NEG_INFINITY; count * c];
    for (r, &s) in segments.iter().enumerate() {
        for (m, &v) in max[s * c..(s + 1) * c].iter_mut().zip(x.row(r)) {
            *m = m.max(v);
        }
    }
    let mut out = vec![0.0; x.len()];
    let mut total = vec![0.0; count * c];
    for (r, &s) in segments.iter().enumerate() {
        for k in 0..c {
            let m = max[s * c + k];
            let e = if m == f64::NEG_INFINITY {
                0.0
            } else {
                (x.data()[r * c + k] - m).exp()
            };
            out[r * c + k] = e;
            total[s * c + k] += e;
        }
    }
    for (r, &s) in segments.iter().enumerate() {
        for k in 0..c {
            let t = total[s * c + k];
            if t > 0.0 {
                out[r * c + k] /= t;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// `dx = y ⊙ (g − Σ g⊙y)` per softmax group, given the groups as row chunks.
fn softmax_rows_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let c = y.cols().max(1);
    let mut out = vec![0.0; y.len()];
    for ((yr, gr), orow) in y
        .data()
        .chunks(c)
        .zip(g.data().chunks(c))
        .zip(out.chunks_mut(c))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in orow.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

fn input_grads(op: &OpKind, node: &Node, nodes: &[Node], g: &Tensor) -> Vec<Option<Tensor>> {
    let input = |k: usize| &nodes[node.inputs[k]].value;
    let wants = |k: usize| nodes[node.inputs[k]].needs_grad;
    let y = &node.value;
    match op {
        OpKind::MatMul => {
            let (a, b) = (input(0), input(1));
            let (sa, sb) = (a.shape(), b.shape());
            let (bs, m, k, p) = if sa.len() == 2 {
                (1, sa[0], sa[1], sb[1])
            } else {
                (sa[0], sa[1], sa[2], sb[2])
            };
            let da = wants(0).then(|| {
                let mut out = vec![0.0; a.len()];
                for i in 0..bs {
                    matmul_nt_acc(
                        &g.data()[i * m * p..(i + 1) * m * p],
                        &b.data()[i * k * p..(i + 1) * k * p],
                        &mut out[i * m * k..(i + 1) * m * k],
                        m,
                        k,
                        p,
                    );
                }
                Tensor::from_parts(sa.to_vec(), out)
            });
            let db = wants(1).then(|| {
                let mut out = vec![0.0; b.len()];
                for i in 0..bs {
                    matmul_tn_acc(
                        &a.data()[i * m * k..(i + 1) * m * k],
                        &g.data()[i * m * p..(i + 1) * m * p],
                        &mut out[i * k * p..(i + 1) * k * p],
                        m,
                        k,
                        p,
                    );
                }
                Tensor::from_parts(sb.to_vec(), out)
            });
            vec![da, db]
        }
        OpKind::Add | OpKind::Mul => {
            let (a, b) = (input(0), input(1));
            let is_mul = matches!(op, OpKind::Mul);
            let reduce = |src: &Tensor, other: &Tensor, wanted: bool| -> Option<Tensor> {
                if !wanted {
                    return None;
                }
                if src.shape() == y.shape() {
                    let data = if is_mul {
                        if other.shape() == y.shape() {
                            g.data().iter().zip(other.data()).map(|(x, o)| x * o).collect()
                        } else {
                            let io = broadcast_index(other.shape(), y.shape());
                            g.data().iter().zip(&io).map(|(x, &j)| x * other.data()[j]).collect()
                        }
                    } else {
                        g.data().to_vec()
                    };
                    return Some(Tensor::from_parts(src.shape().to_vec(), data));
                }
                let is = broadcast_index(src.shape(), y.shape());
                let io = broadcast_index(other.shape(), y.shape());
                let mut out = vec![0.0; src.len()];
                for (k, (&i, &j)) in is.iter().zip(&io).enumerate() {
                    out[i] += if is_mul { g.data()[k] * other.data()[j] } else { g.data()[k] };
                }
                Some(Tensor::from_parts(src.shape().to_vec(), out))
            };
            vec![reduce(a, b, wants(0)), reduce(b, a, wants(1))]
        }
        OpKind::ConcatRows => {
            let cols = y.cols();
            let mut offset = 0;
            (0..node.inputs.len())
                .map(|k| {
                    let n = input(k).len();
                    let part = &g.data()[offset..offset + n];
                    offset += n;
                    wants(k).then(|| Tensor::from_parts(vec![n / cols.max(1), cols], part.to_vec()))
                })
                .collect()
        }
        OpKind::ConcatCols => {
            let rows = y.rows();
            let total = y.cols();
            let mut offset = 0;
            (0..node.inputs.len())
                .map(|k| {
                    let c = input(k).cols();
                    let start = offset;
                    offset += c;
                    wants(k).then(|| {
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + start..r * total + start + c]);
                        }
                        Tensor::from_parts(vec![rows, c], data)
                    })
                })
                .collect()
        }
        OpKind::LeakyRelu(slope) => {
            let x = input(0);
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(gv, &xv)| if xv > 0.0 { *gv } else { slope * gv })
                .collect();
            vec![Some(Tensor::from_parts(x.shape().to_vec(), data))]
        }
        OpKind::Relu => {
            let x = input(0);
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                .collect();
            vec![Some(Tensor::from_parts(x.shape().to_vec(), data))]
        }
        OpKind::Sigmoid => {
            let data = g
                .data()
                .iter()
                .zip(y.data())
                .map(|(gv, &s)| gv * s * (1.0 - s))
                .collect();
            vec![Some(Tensor::from_parts(y.shape().to_vec(), data))]
        }
        OpKind::Log => {
            let x = input(0);
            let data = g.data().iter().zip(x.data()).map(|(gv, &xv)| gv / xv).collect();
            vec![Some(Tensor::from_parts(x.shape().to_vec(), data))]
        }
        OpKind::Scale(c) => vec![Some(g.map(|v| c * v))],
        OpKind::Clamp { lo, hi } => {
            let x = input(0);
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(gv, &xv)| if xv >= *lo && xv <= *hi { *gv } else { 0.0 })
                .collect();
            vec![Some(Tensor::from_parts(x.shape().to_vec(), data))]
        }
        OpKind::Sum => {
            let x = input(0);
            vec![Some(Tensor::filled(x.shape(), g.item()))]
        }
        OpKind::SoftmaxRows | OpKind::MaskedSoftmaxRows(_) => {
            vec![Some(softmax_rows_backward(y, g))]
        }
        OpKind::SegmentSoftmax { segments, count } => {
            let c = y.cols();
            let mut dot = vec![0.0; count * c];
            for (r, &s) in segments.iter().enumerate() {
                for k in 0..c {
                    dot[s * c + k] += y.data()[r * c + k] * g.data()[r * c + k];
                }
            }
            let mut out = vec![0.0; y.len()];
            for (r, &s) in segments.iter().enumerate() {
                for k in 0..c {
                    let i = r * c + k;
                    out[i] = y.data()[i] * (g.data()[i] - dot[s * c + k]);
                }
            }
            vec![Some(Tensor::from_parts(y.shape().to_vec(), out))]
        }
        OpKind::Dropout { .. } => unreachable!("dropout records its mask"),
        OpKind::Reshape(_) => {
            let x = input(0);
            vec![Some(Tensor::from_parts(x.shape().to_vec(), g.data().to_vec()))]
        }
        OpKind::Transpose => vec![Some(transpose_last(g))],
        OpKind::GatherRows(idx) => {
            let x = input(0);
            let c = x.cols();
            let mut out = vec![0.0; x.len()];
            for (r, &i) in idx.iter().enumerate() {
                for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            vec![Some(Tensor::from_parts(x.shape().to_vec(), out))]
        }
        OpKind::SegmentSum { segments, .. } => {
            let x = input(0);
            let c = x.cols();
            let mut data = Vec::with_capacity(x.len());
            for &s in segments.iter() {
                data.extend_from_slice(g.row(s));
            }
            debug_assert_eq!(data.len(), segments.len() * c);
            vec![Some(Tensor::from_parts(x.shape().to_vec(), data))]
        }
        OpKind::SliceCols { start, len } => {
            let x = input(0);
            let c = x.cols();
            let mut out = vec![0.0; x.len()];
            for r in 0..x.rows() {
                out[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
            }
            vec![Some(Tensor::from_parts(x.shape().to_vec(), out))]
        }
    }
}

/// Gradients of a loss with respect to every leaf of the tape that produced it.
///
/// Leaves the loss does not depend on get an all-zero gradient.
pub struct Gradients {
    tape: u64,
    leaves: Vec<(usize, Tensor)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.leaves
            .binary_search_by_key(&var.index, |(i, _)| *i)
            .ok()
            .map(|k| &self.leaves[k].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.leaves.iter().map(|(i, t)| (*i, t))
    }
}

// Convenience wrappers; each forwards to `apply`.
impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        self.apply(OpKind::ConcatRows, parts)
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        self.apply(OpKind::ConcatCols, parts)
    }
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::LeakyRelu(slope), &[x])
    }
    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Relu, &[x])
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sigmoid, &[x])
    }
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::SoftmaxRows, &[x])
    }
    pub fn masked_softmax_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        self.apply(OpKind::MaskedSoftmaxRows(mask.into()), &[x])
    }
    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Log, &[x])
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Scale(c), &[x])
    }
    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Sum, &[x])
    }
    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Dropout { rate, train }, &[x])
    }
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Reshape(shape.to_vec()), &[x])
    }
    pub fn transpose(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Transpose, &[x])
    }
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var, AutodiffError> {
        self.apply(OpKind::GatherRows(idx), &[x])
    }
    pub fn segment_sum(
        &mut self,
        x: Var,
        segments: Arc<[usize]>,
        count: usize,
    ) -> Result<Var, AutodiffError> {
        self.apply(OpKind::SegmentSum { segments, count }, &[x])
    }
    pub fn segment_softmax(
        &mut self,
        x: Var,
        segments: Arc<[usize]>,
        count: usize,
    ) -> Result<Var, AutodiffError> {
        self.apply(OpKind::SegmentSoftmax { segments, count }, &[x])
    }
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        self.apply(OpKind::Clamp { lo, hi }, &[x])
    }
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        self.apply(OpKind::SliceCols { start, len }, &[x])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(&[0.0, 0.0, 0.0]));
        let y = tape.softmax_rows(x).unwrap();
        for &v in tape.value(y).data() {
            assert!(close(v, 1.0 / 3.0));
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
        let grads = tape.backward(y).unwrap();
        assert!(close(grads.get(x).unwrap().item(), 0.25));
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(&[2.0, 1.0, 3.0]));
        let y = tape.masked_softmax_rows(x, &[true, false, true]).unwrap();
        let (e2, e3) = (2f64.exp(), 3f64.exp());
        let out = tape.value(y).data();
        assert!(close(out[0], e2 / (e2 + e3)));
        assert_eq!(out[1], 0.0);
        assert!(close(out[2], e3 / (e2 + e3)));
    }

    #[test]
    fn matmul_gradient_is_column_sums() {
        // loss = sum(W x); dloss/dx_j = sum_i W_ij
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let x = tape.leaf(Tensor::column(&[1.0, 1.0]));
        let wx = tape.matmul(w, x).unwrap();
        let loss = tape.sum(wx).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::column(&[1.0, 2.0]));
        let unused = tape.leaf(Tensor::zeros(&[2, 3]));
        let loss = tape.sum(a).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(unused).unwrap();
        assert_eq!(g.shape(), &[2, 3]);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::column(&[1.0, 2.0]));
        assert!(matches!(
            tape.backward(a),
            Err(AutodiffError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn dropout_rate_validated() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        assert!(tape.dropout(a, 1.0, true).is_err());
        assert!(tape.dropout(a, -0.1, true).is_err());
        let kept = tape.dropout(a, 0.5, false).unwrap();
        assert_eq!(tape.value(kept), tape.value(a));
    }

    #[test]
    fn dropout_uses_inverted_scaling() {
        let mut tape = Tape::with_seed(3);
        let a = tape.constant(Tensor::filled(&[1, 1000], 1.0));
        let d = tape.dropout(a, 0.25, true).unwrap();
        for &v in tape.value(d).data() {
            assert!(v == 0.0 || close(v, 1.0 / 0.75));
        }
    }

    #[test]
    fn foreign_variable_rejected() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.leaf(Tensor::scalar(1.0));
        assert!(matches!(t2.relu(a), Err(AutodiffError::ForeignVar)));
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap());
        let c = tape.concat_cols(&[a, b]).unwrap();
        let a2 = tape.slice_cols(c, 0, 2).unwrap();
        let b2 = tape.slice_cols(c, 2, 1).unwrap();
        assert_eq!(tape.value(a2), tape.value(a));
        assert_eq!(tape.value(b2), tape.value(b));
    }

    #[test]
    fn segment_softmax_matches_per_group_softmax() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(&[1.0, 2.0, 0.5, -1.0]));
        let seg: Arc<[usize]> = vec![0, 1, 0, 1].into();
        let y = tape.segment_softmax(x, seg, 2).unwrap();
        let out = tape.value(y).data().to_vec();
        assert!(close(out[0] + out[2], 1.0));
        assert!(close(out[1] + out[3], 1.0));
        assert!(close(out[0], 1f64.exp() / (1f64.exp() + 0.5f64.exp())));
    }
}
