//! Reverse-mode differentiation over whole-array primitives.
//!
//! Every node stores its forward value and the operation that produced it.
//! Parents always have smaller indices than their children, so a single
//! reverse sweep over the node list visits nodes in a valid order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::array::{self, DenseArray};
use crate::{Error, Result};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    SubBroadcast(NodeId, NodeId),
    DivBroadcast(NodeId, NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        normalized: DenseArray,
        inv_std: Vec<f64>,
    },
    Gelu(NodeId),
    Relu(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    SliceCols {
        a: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    Gather {
        a: NodeId,
        indices: Vec<usize>,
    },
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    OuterDiff(NodeId, NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    value: DenseArray,
    op: Op,
}

/// Single-threaded recorder of array operations.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseArray {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: DenseArray, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: DenseArray) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = array::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = array::matmul_bt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_with(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_with(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds a length-`cols` bias to every row of `a`.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let cols = self.value(a).cols();
        if self.value(bias).len() != cols {
            return Err(Error::Dimension(format!(
                "bias of length {} cannot broadcast over {} columns",
                self.value(bias).len(),
                cols
            )));
        }
        let mut v = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for row in v.data_mut().chunks_mut(cols) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRowBias(a, bias)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    /// `a − s` where `s` is a single-element node.
    pub fn sub_broadcast(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.single(s, "sub_broadcast")?;
        let v = self.value(a).map(|x| x - sv);
        Ok(self.push(v, Op::SubBroadcast(a, s)))
    }

    /// `a / s` where `s` is a single-element node.
    pub fn div_broadcast(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.single(s, "div_broadcast")?;
        let v = self.value(a).map(|x| x / sv);
        Ok(self.push(v, Op::DivBroadcast(a, s)))
    }

    fn single(&self, s: NodeId, op: &str) -> Result<f64> {
        let v = self.value(s);
        if v.len() != 1 {
            return Err(Error::Dimension(format!(
                "{op} needs a single-element divisor, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = array::softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm_rows(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let d = xv.cols();
        let out = array::layer_norm_rows(xv, self.value(gain), self.value(bias), eps)?;
        let mut normalized = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for row in normalized.data_mut().chunks_mut(d) {
            let (mu, inv) = array::row_moments(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mu) * inv;
            }
            inv_std.push(inv);
        }
        Ok(self.push(
            out,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Square root. The derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(libm::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    /// Columns `start..start + len` of a rank-2 node.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        av.require_rank2("slice_cols")?;
        let (rows, cols) = (av.rows(), av.cols());
        if start + len > cols {
            return Err(Error::Dimension(format!(
                "column slice {start}..{} exceeds width {cols}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let v = DenseArray::matrix(rows, len, data)?;
        Ok(self.push(v, Op::SliceCols { a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            pv.require_rank2("concat_cols")?;
            if pv.rows() != rows {
                return Err(Error::Dimension(format!(
                    "concat_cols row counts differ: {} vs {rows}",
                    pv.rows()
                )));
            }
            total += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = DenseArray::matrix(rows, total, data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Picks flat elements of `a` into a vector, repeats allowed.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let av = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= av.len()) {
            return Err(Error::Index(format!(
                "gather index {bad} out of range for {} elements",
                av.len()
            )));
        }
        let v = DenseArray::vector(indices.iter().map(|&i| av.data()[i]).collect());
        Ok(self.push(
            v,
            Op::Gather {
                a,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = DenseArray::scalar(self.value(a).data().iter().sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let v = DenseArray::scalar(av.data().iter().sum::<f64>() / av.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// `out[i][j] = b[j] − a[i]` for vectors `a` (length p) and `b` (length q).
    pub fn outer_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (p, q) = (av.len(), bv.len());
        let mut data = Vec::with_capacity(p * q);
        for &x in av.data() {
            for &y in bv.data() {
                data.push(y - x);
            }
        }
        let v = DenseArray::matrix(p, q, data)?;
        Ok(self.push(v, Op::OuterDiff(a, b)))
    }

    /// Exact gradients of the single-element node `loss` with respect to
    /// each node in `wrt`. Nodes that do not influence the loss get zeros.
    pub fn backward(&self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<DenseArray>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            for parent in parents(&node.op) {
                if parent.0 >= idx {
                    return Err(Error::Internal(format!(
                        "tape node {idx} depends on later node {}",
                        parent.0
                    )));
                }
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(wrt
            .iter()
            .map(|&id| {
                let shape = self.value(id).shape();
                match grads.get(id.0).and_then(|g| g.clone()) {
                    Some(g) => DenseArray::new(shape.to_vec(), g).expect("gradient shape"),
                    None => DenseArray::zeros(shape),
                }
            })
            .collect())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let gm = DenseArray::new(out.shape().to_vec(), g.to_vec())?;
                let ga = array::matmul_bt(&gm, self.value(*b))?;
                let gb = array::matmul_at(self.value(*a), &gm)?;
                accumulate(grads, *a, ga.data());
                accumulate(grads, *b, gb.data());
            }
            Op::MatMulBt(a, b) => {
                let gm = DenseArray::new(out.shape().to_vec(), g.to_vec())?;
                let ga = array::matmul(&gm, self.value(*b))?;
                let gb = array::matmul_at(&gm, self.value(*a))?;
                accumulate(grads, *a, ga.data());
                accumulate(grads, *b, gb.data());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::AddRowBias(a, bias) => {
                accumulate(grads, *a, g);
                let cols = out.cols();
                let mut gb = vec![0.0; cols];
                for row in g.chunks(cols) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *bias, &gb);
            }
            Op::Scale(a, f) => {
                let ga: Vec<f64> = g.iter().map(|v| v * f).collect();
                accumulate(grads, *a, &ga);
            }
            Op::AddScalar(a) => accumulate(grads, *a, g),
            Op::SubBroadcast(a, s) => {
                accumulate(grads, *a, g);
                accumulate(grads, *s, &[-g.iter().sum::<f64>()]);
            }
            Op::DivBroadcast(a, s) => {
                let sv = self.value(*s).data()[0];
                let ga: Vec<f64> = g.iter().map(|v| v / sv).collect();
                let gs = -g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, av)| gv * av)
                    .sum::<f64>()
                    / (sv * sv);
                accumulate(grads, *a, &ga);
                accumulate(grads, *s, &[gs]);
            }
            Op::SoftmaxRows(a) => {
                let cols = out.cols();
                let mut ga = vec![0.0; g.len()];
                for ((y, gy), gx) in out
                    .data()
                    .chunks(cols)
                    .zip(g.chunks(cols))
                    .zip(ga.chunks_mut(cols))
                {
                    let inner = array::dot(y, gy);
                    for j in 0..cols {
                        gx[j] = y[j] * (gy[j] - inner);
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::LayerNormRows {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = out.cols();
                let gain_v = self.value(*gain).data();
                let mut g_gain = vec![0.0; d];
                let mut g_bias = vec![0.0; d];
                let mut gx = vec![0.0; g.len()];
                let mut g_hat = vec![0.0; d];
                for (r, ((gy, xh), gxr)) in g
                    .chunks(d)
                    .zip(normalized.data().chunks(d))
                    .zip(gx.chunks_mut(d))
                    .enumerate()
                {
                    for j in 0..d {
                        g_gain[j] += gy[j] * xh[j];
                        g_bias[j] += gy[j];
                        g_hat[j] = gy[j] * gain_v[j];
                    }
                    let sum_g: f64 = g_hat.iter().sum();
                    let sum_gx = array::dot(&g_hat, xh);
                    let scale = inv_std[r] / d as f64;
                    for j in 0..d {
                        gxr[j] = scale * (d as f64 * g_hat[j] - sum_g - xh[j] * sum_gx);
                    }
                }
                accumulate(grads, *x, &gx);
                accumulate(grads, *gain, &g_gain);
                accumulate(grads, *bias, &g_bias);
            }
            Op::Gelu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, &x)| gv * gelu_derivative(x))
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Square(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, &x)| 2.0 * x * gv)
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Sqrt(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(gv, &y)| if y > 0.0 { gv * 0.5 / y } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let (cols, len) = (av.cols(), out.cols());
                let mut ga = vec![0.0; av.len()];
                for (r, gr) in g.chunks(len).enumerate() {
                    ga[r * cols + start..r * cols + start + len].copy_from_slice(gr);
                }
                accumulate(grads, *a, &ga);
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let mut gp = Vec::with_capacity(pv.len());
                    for gr in g.chunks(total) {
                        gp.extend_from_slice(&gr[offset..offset + w]);
                    }
                    accumulate(grads, p, &gp);
                    offset += w;
                }
            }
            Op::Gather { a, indices } => {
                let mut ga = vec![0.0; self.value(*a).len()];
                for (&i, gv) in indices.iter().zip(g) {
                    ga[i] += gv;
                }
                accumulate(grads, *a, &ga);
            }
            Op::Reshape(a) => accumulate(grads, *a, g),
            Op::Sum(a) => {
                let ga = vec![g[0]; self.value(*a).len()];
                accumulate(grads, *a, &ga);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let ga = vec![g[0] / n as f64; n];
                accumulate(grads, *a, &ga);
            }
            Op::OuterDiff(a, b) => {
                let (p, q) = (self.value(*a).len(), self.value(*b).len());
                let mut ga = vec![0.0; p];
                let mut gb = vec![0.0; q];
                for i in 0..p {
                    for j in 0..q {
                        let gv = g[i * q + j];
                        ga[i] -= gv;
                        gb[j] += gv;
                    }
                }
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
        }
        Ok(())
    }
}

fn parents(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b)
        | Op::MatMulBt(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRowBias(a, b)
        | Op::SubBroadcast(a, b)
        | Op::DivBroadcast(a, b)
        | Op::OuterDiff(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::SoftmaxRows(a)
        | Op::Gelu(a)
        | Op::Relu(a)
        | Op::Square(a)
        | Op::Sqrt(a)
        | Op::Reshape(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SliceCols { a, .. }
        | Op::Gather { a, .. } => vec![*a],
        Op::LayerNormRows { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::ConcatCols(parts) => parts.clone(),
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_K * (x + GELU_C * x * x * x)))
}

fn gelu_derivative(x: f64) -> f64 {
    let t = libm::tanh(GELU_K * (x + GELU_C * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseArray {
        let n = shape.iter().product();
        DenseArray::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Checks the tape gradient of `build` against central differences for
    /// every parameter coordinate.
    fn check<F>(shapes: &[&[usize]], seed: u64, build: F)
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<DenseArray> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &ids);
        let analytic = tape.backward(loss, &ids).unwrap();

        let flat: Vec<f64> = params.iter().flat_map(|p| p.data().to_vec()).collect();
        let eval = |x: &[f64]| {
            let mut t = Tape::new();
            let mut off = 0;
            let ids: Vec<NodeId> = params
                .iter()
                .map(|p| {
                    let v = DenseArray::new(p.shape().to_vec(), x[off..off + p.len()].to_vec())
                        .unwrap();
                    off += p.len();
                    t.leaf(v)
                })
                .collect();
            let l = build(&mut t, &ids);
            t.value(l).data()[0]
        };
        let numeric = finite_diff_grad(eval, &flat, 1e-5);
        let analytic: Vec<f64> = analytic.iter().flat_map(|g| g.data().to_vec()).collect();
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let p = tape.leaf(DenseArray::vector(alloc::vec![1.0, -2.0, 3.0]));
        let l = tape.sum(p);
        let g = tape.backward(l, &[p]).unwrap();
        assert_eq!(g[0].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_squared_norm_gives_identity() {
        let mut tape = Tape::new();
        let pv = DenseArray::vector(alloc::vec![0.5, -1.5, 2.0]);
        let p = tape.leaf(pv.clone());
        let sq = tape.square(p);
        let s = tape.sum(sq);
        let l = tape.scale(s, 0.5);
        let g = tape.backward(l, &[p]).unwrap();
        assert_eq!(g[0], pv);
    }

    #[test]
    fn unreachable_parameter_gets_zero() {
        let mut tape = Tape::new();
        let p = tape.leaf(DenseArray::vector(alloc::vec![1.0, 2.0]));
        let q = tape.leaf(DenseArray::zeros(&[2, 2]));
        let l = tape.sum(p);
        let g = tape.backward(l, &[p, q]).unwrap();
        assert_eq!(g[1], DenseArray::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let p = tape.leaf(DenseArray::vector(alloc::vec![1.0, 2.0]));
        assert!(tape.backward(p, &[p]).is_err());
    }

    #[test]
    fn matmul_and_bias_gradients() {
        for seed in 0..20 {
            check(&[&[3, 4], &[4, 5], &[5]], seed, |t, p| {
                let m = t.matmul(p[0], p[1]).unwrap();
                let b = t.add_row_bias(m, p[2]).unwrap();
                let s = t.square(b);
                t.sum(s)
            });
        }
    }

    #[test]
    fn attention_block_gradients() {
        for seed in 0..20 {
            check(&[&[3, 4], &[5, 4], &[5, 4]], seed, |t, p| {
                let s = t.matmul_bt(p[0], p[1]).unwrap();
                let s = t.scale(s, 0.5);
                let a = t.softmax_rows(s);
                let o = t.matmul(a, p[2]).unwrap();
                let h0 = t.slice_cols(o, 0, 2).unwrap();
                let h1 = t.slice_cols(o, 2, 2).unwrap();
                let c = t.concat_cols(&[h1, h0]).unwrap();
                let w = t.leaf(DenseArray::new(alloc::vec![3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap());
                let m = t.mul(c, w).unwrap();
                t.sum(m)
            });
        }
    }

    #[test]
    fn layer_norm_and_activation_gradients() {
        for seed in 0..20 {
            check(&[&[3, 6], &[6], &[6]], seed, |t, p| {
                let y = t.layer_norm_rows(p[0], p[1], p[2], 1e-5).unwrap();
                let g = t.gelu(y);
                let r = t.relu(g);
                let w = t.leaf(DenseArray::new(alloc::vec![3, 6], (0..18).map(|i| (i as f64).sin()).collect()).unwrap());
                let m = t.mul(r, w).unwrap();
                t.sum(m)
            });
        }
    }

    #[test]
    fn standardization_style_gradients() {
        for seed in 0..20 {
            check(&[&[6], &[4]], seed, |t, p| {
                let mu = t.mean(p[0]);
                let c = t.sub_broadcast(p[0], mu).unwrap();
                let sq = t.square(c);
                let var = t.mean(sq);
                let sd = t.sqrt(var);
                let den = t.add_scalar(sd, 1e-6);
                let z = t.div_broadcast(c, den).unwrap();
                let g = t.gather(z, &[0, 2, 2, 5]).unwrap();
                let d = t.sub(g, p[1]).unwrap();
                let o = t.outer_diff(d, p[1]).unwrap();
                let o = t.add_scalar(o, 0.3);
                let h = t.relu(o);
                let r = t.reshape(h, &[16]).unwrap();
                t.mean(r)
            });
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(&mut rng, &[4, 4]);
        let run = || {
            let mut t = Tape::new();
            let p = t.leaf(a.clone());
            let s = t.softmax_rows(p);
            let q = t.square(s);
            let l = t.sum(q);
            t.backward(l, &[p]).unwrap()
        };
        assert_eq!(run(), run());
    }
}
