//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every operation appends a node holding its output values, parent
//! indices, and whatever forward intermediates its backward rule needs.
//! Nodes are created in topological order, so the backward pass is a
//! single reverse sweep that visits each node exactly once. Reductions
//! accumulate in f64 with a fixed iteration order, which makes gradients
//! bitwise reproducible regardless of thread count.

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_S: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_S * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_S * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_S * (1.0 + 3.0 * GELU_C * x * x)
}

enum Op {
    Leaf,
    /// c[m,n] = a[m,k] @ b[k,n]
    Matmul { m: usize, k: usize, n: usize },
    /// c[m,n] = a[m,k] @ b[n,k]^T
    MatmulNt { m: usize, k: usize, n: usize },
    Add,
    /// a[r,c] + bias[c]
    AddRow { rows: usize, cols: usize },
    Mul,
    Scale(f64),
    Gelu,
    /// row-wise softmax over the last dimension
    Softmax { cols: usize },
    /// row-wise layer norm; parents are [x, gamma, beta]
    LayerNorm {
        cols: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows { indices: Vec<usize>, cols: usize },
    ScatterRows { indices: Vec<usize>, cols: usize },
    /// vector[c] tiled into [rows, c]
    RepeatRow { rows: usize, cols: usize },
    SliceCols {
        start: usize,
        len: usize,
        src_cols: usize,
    },
    ConcatCols { widths: Vec<usize> },
    MeanAll { count: usize },
    SumAll,
    /// fused multi-head self-attention; parents are [q, k, v]
    Attention {
        heads: usize,
        head_dim: usize,
        n_q: usize,
        n_k: usize,
        /// softmax probabilities, heads × (n_q × n_k), kept for backward
        probs: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    parents: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }

    /// Gradient for `var`, or zeros when the variable was not reached
    /// from the loss.
    pub fn tensor_or_zeros(&self, graph: &Graph, var: Var) -> Tensor {
        let shape = graph.shape(var).to_vec();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn values(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].values
    }

    pub fn value_tensor(&self, var: Var) -> Tensor {
        Tensor::new(self.shape(var).to_vec(), self.values(var).to_vec()).expect("node shape")
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<usize>,
        op: Op,
    ) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            shape,
            values,
            parents,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked through it.
    pub fn input(&mut self, t: Tensor) -> Var {
        let (shape, values) = (t.shape().to_vec(), t.values().to_vec());
        self.nodes.push(Node {
            shape,
            values,
            parents: vec![],
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        let (shape, values) = (t.shape().to_vec(), t.values().to_vec());
        self.nodes.push(Node {
            shape,
            values,
            parents: vec![],
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, var: Var) -> Result<(usize, usize)> {
        match self.shape(var) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Shape(format!(
                "expected rank-2 tensor, got shape {other:?}"
            ))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.dims2(a)?;
        let (kb, n) = self.dims2(b)?;
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: [{m}, {ka}] vs [{kb}, {n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul(self.values(a), self.values(b), m, ka, n, &mut out);
        Ok(self.push(vec![m, n], out, vec![a.0, b.0], Op::Matmul { m, k: ka, n }))
    }

    /// a[m,k] @ b[n,k]^T without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.dims2(a)?;
        let (n, kb) = self.dims2(b)?;
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul_nt inner dimensions differ: [{m}, {ka}] vs [{n}, {kb}]^T"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt(self.values(a), self.values(b), m, ka, n, &mut out);
        Ok(self.push(vec![m, n], out, vec![a.0, b.0], Op::MatmulNt { m, k: ka, n }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), values, vec![a.0, b.0], Op::Add))
    }

    /// Broadcast add of a row vector: a[r,c] + bias[c].
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if self.shape(bias) != [c] {
            return Err(Error::Shape(format!(
                "add_row bias shape {:?} does not match columns {c}",
                self.shape(bias)
            )));
        }
        let bias_vals = self.values(bias).to_vec();
        let values: Vec<f64> = self
            .values(a)
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(&bias_vals).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(
            vec![r, c],
            values,
            vec![a.0, bias.0],
            Op::AddRow { rows: r, cols: c },
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), values, vec![a.0, b.0], Op::Mul))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let values: Vec<f64> = self.values(a).iter().map(|x| x * factor).collect();
        self.push(self.shape(a).to_vec(), values, vec![a.0], Op::Scale(factor))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let values: Vec<f64> = self.values(a).iter().map(|&x| gelu_scalar(x)).collect();
        self.push(self.shape(a).to_vec(), values, vec![a.0], Op::Gelu)
    }

    /// Row-wise softmax over the last dimension of a rank-2 tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if c == 0 {
            return Err(Error::Shape("softmax over zero columns".into()));
        }
        let mut values = vec![0.0; r * c];
        for (row_out, row_in) in values.chunks_mut(c).zip(self.values(a).chunks(c)) {
            softmax_row(row_in, row_out);
        }
        Ok(self.push(vec![r, c], values, vec![a.0], Op::Softmax { cols: c }))
    }

    /// Row-wise layer normalization with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!(
                "layer_norm affine shapes {:?}/{:?} do not match columns {c}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        if c == 0 {
            return Err(Error::Shape("layer_norm over zero columns".into()));
        }
        let mut normalized = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let gamma_vals = self.values(gamma).to_vec();
        let beta_vals = self.values(beta).to_vec();
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.values(x)[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let xhat = (row[j] - mean) * is;
                normalized[i * c + j] = xhat;
                values[i * c + j] = xhat * gamma_vals[j] + beta_vals[j];
            }
        }
        Ok(self.push(
            vec![r, c],
            values,
            vec![x.0, gamma.0, beta.0],
            Op::LayerNorm {
                cols: c,
                normalized,
                inv_std,
            },
        ))
    }

    /// out[i] = x[indices[i]] for a rank-2 x.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let mut values = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            values.extend_from_slice(&self.values(x)[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            vec![indices.len(), c],
            values,
            vec![x.0],
            Op::GatherRows {
                indices: indices.to_vec(),
                cols: c,
            },
        ))
    }

    /// Places row i of x at row indices[i] of a zero [total_rows, c]
    /// output. Indices must be distinct.
    pub fn scatter_rows(&mut self, x: Var, indices: &[usize], total_rows: usize) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if indices.len() != r {
            return Err(Error::Shape(format!(
                "scatter_rows got {} indices for {r} rows",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= total_rows) {
            return Err(Error::Shape(format!(
                "scatter_rows index {bad} out of range for {total_rows} rows"
            )));
        }
        let mut values = vec![0.0; total_rows * c];
        for (row, &dst) in indices.iter().enumerate() {
            values[dst * c..(dst + 1) * c]
                .copy_from_slice(&self.values(x)[row * c..(row + 1) * c]);
        }
        Ok(self.push(
            vec![total_rows, c],
            values,
            vec![x.0],
            Op::ScatterRows {
                indices: indices.to_vec(),
                cols: c,
            },
        ))
    }

    /// Tiles a vector[c] into [rows, c].
    pub fn repeat_row(&mut self, x: Var, rows: usize) -> Result<Var> {
        let c = match self.shape(x) {
            [c] => *c,
            other => {
                return Err(Error::Shape(format!(
                    "repeat_row expects a vector, got {other:?}"
                )))
            }
        };
        let mut values = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            values.extend_from_slice(self.values(x));
        }
        Ok(self.push(
            vec![rows, c],
            values,
            vec![x.0],
            Op::RepeatRow { rows, cols: c },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if start + len > c {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} out of range for {c} columns",
                start + len
            )));
        }
        let mut values = Vec::with_capacity(r * len);
        for i in 0..r {
            values.extend_from_slice(&self.values(x)[i * c + start..i * c + start + len]);
        }
        Ok(self.push(
            vec![r, len],
            values,
            vec![x.0],
            Op::SliceCols {
                start,
                len,
                src_cols: c,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of zero tensors".into()));
        }
        let (r, _) = self.dims2(parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rp, cp) = self.dims2(p)?;
            if rp != r {
                return Err(Error::Shape(format!(
                    "concat_cols row counts differ: {r} vs {rp}"
                )));
            }
            widths.push(cp);
        }
        let total: usize = widths.iter().sum();
        let mut values = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            for i in 0..r {
                values[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&self.values(p)[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            vec![r, total],
            values,
            parts.iter().map(|v| v.0).collect(),
            Op::ConcatCols { widths },
        ))
    }

    /// Mean over every element, to a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.values(x).len();
        if n == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let mean = self.values(x).iter().sum::<f64>() / n as f64;
        Ok(self.push(vec![], vec![mean], vec![x.0], Op::MeanAll { count: n }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let sum = self.values(x).iter().sum::<f64>();
        self.push(vec![], vec![sum], vec![x.0], Op::SumAll)
    }

    /// Fused multi-head scaled-dot-product self-attention.
    /// q is [n_q, d], k and v are [n_k, d], d = heads * head_dim.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (n_q, d) = self.dims2(q)?;
        let (n_k, dk) = self.dims2(k)?;
        let (n_v, dv) = self.dims2(v)?;
        if d != dk || d != dv || n_k != n_v {
            return Err(Error::Shape(format!(
                "attention shapes q[{n_q},{d}] k[{n_k},{dk}] v[{n_v},{dv}] are inconsistent"
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!(
                "model width {d} not divisible by {heads} heads"
            )));
        }
        if n_q > 0 && n_k == 0 {
            return Err(Error::Shape("attention over an empty key set".into()));
        }
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = vec![0.0; n_q * d];
        let mut probs = vec![0.0; heads * n_q * n_k];
        let mut qh = vec![0.0; n_q * hd];
        let mut kh = vec![0.0; n_k * hd];
        let mut vh = vec![0.0; n_k * hd];
        let mut scores = vec![0.0; n_q * n_k];
        let mut oh = vec![0.0; n_q * hd];
        let active_heads = if n_q == 0 { 0 } else { heads };
        for h in 0..active_heads {
            copy_head(self.values(q), n_q, d, h, hd, &mut qh);
            copy_head(self.values(k), n_k, d, h, hd, &mut kh);
            copy_head(self.values(v), n_k, d, h, hd, &mut vh);
            matmul_nt(&qh, &kh, n_q, hd, n_k, &mut scores);
            let head_probs = &mut probs[h * n_q * n_k..(h + 1) * n_q * n_k];
            for (p_row, s_row) in head_probs.chunks_mut(n_k).zip(scores.chunks(n_k)) {
                let scaled: Vec<f64> = s_row.iter().map(|s| s * scale).collect();
                softmax_row(&scaled, p_row);
            }
            matmul(head_probs, &vh, n_q, n_k, hd, &mut oh);
            paste_head(&oh, n_q, d, h, hd, &mut out);
        }
        Ok(self.push(
            vec![n_q, d],
            out,
            vec![q.0, k.0, v.0],
            Op::Attention {
                heads,
                head_dim: hd,
                n_q,
                n_k,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Returns one gradient slot per
    /// node; parameters not reached from the loss simply stay `None`
    /// (callers read them as zeros).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if node.requires_grad && !matches!(node.op, Op::Leaf) {
                self.accumulate_parents(id, &grad, &mut grads);
            }
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_parents(&self, id: usize, grad: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let parent_vals = |slot: usize| -> &[f64] { &self.nodes[node.parents[slot]].values };
        let add_to_parent = |slot: usize, contribution: Vec<f64>, grads: &mut [Option<Vec<f64>>]| {
            let pid = node.parents[slot];
            if !self.nodes[pid].requires_grad {
                return;
            }
            match &mut grads[pid] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(&contribution) {
                        *e += c;
                    }
                }
                slot_ref @ None => *slot_ref = Some(contribution),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Matmul { m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let mut da = vec![0.0; m * k];
                matmul_nt(grad, parent_vals(1), m, n, k, &mut da);
                add_to_parent(0, da, grads);
                let mut db = vec![0.0; k * n];
                matmul_tn(parent_vals(0), grad, m, k, n, &mut db);
                add_to_parent(1, db, grads);
            }
            Op::MatmulNt { m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let mut da = vec![0.0; m * k];
                matmul(grad, parent_vals(1), m, n, k, &mut da);
                add_to_parent(0, da, grads);
                let mut db = vec![0.0; n * k];
                matmul_tn(grad, parent_vals(0), m, n, k, &mut db);
                add_to_parent(1, db, grads);
            }
            Op::Add => {
                add_to_parent(0, grad.to_vec(), grads);
                add_to_parent(1, grad.to_vec(), grads);
            }
            Op::AddRow { rows, cols } => {
                add_to_parent(0, grad.to_vec(), grads);
                let mut db = vec![0.0; *cols];
                for i in 0..*rows {
                    for j in 0..*cols {
                        db[j] += grad[i * cols + j];
                    }
                }
                add_to_parent(1, db, grads);
            }
            Op::Mul => {
                let da: Vec<f64> = grad.iter().zip(parent_vals(1)).map(|(g, b)| g * b).collect();
                add_to_parent(0, da, grads);
                let db: Vec<f64> = grad.iter().zip(parent_vals(0)).map(|(g, a)| g * a).collect();
                add_to_parent(1, db, grads);
            }
            Op::Scale(factor) => {
                let da: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                add_to_parent(0, da, grads);
            }
            Op::Gelu => {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(parent_vals(0))
                    .map(|(g, &x)| g * gelu_grad_scalar(x))
                    .collect();
                add_to_parent(0, da, grads);
            }
            Op::Softmax { cols } => {
                let y = &node.values;
                let mut da = vec![0.0; y.len()];
                for ((da_row, y_row), g_row) in da
                    .chunks_mut(*cols)
                    .zip(y.chunks(*cols))
                    .zip(grad.chunks(*cols))
                {
                    let dot: f64 = g_row.iter().zip(y_row).map(|(g, y)| g * y).sum();
                    for j in 0..*cols {
                        da_row[j] = y_row[j] * (g_row[j] - dot);
                    }
                }
                add_to_parent(0, da, grads);
            }
            Op::LayerNorm {
                cols,
                normalized,
                inv_std,
            } => {
                let c = *cols;
                let rows = inv_std.len();
                let gamma = parent_vals(1);
                let mut dx = vec![0.0; rows * c];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for i in 0..rows {
                    let g_row = &grad[i * c..(i + 1) * c];
                    let xhat = &normalized[i * c..(i + 1) * c];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let dxhat = g_row[j] * gamma[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat[j];
                        dgamma[j] += g_row[j] * xhat[j];
                        dbeta[j] += g_row[j];
                    }
                    mean_dxhat /= c as f64;
                    mean_dxhat_xhat /= c as f64;
                    for j in 0..c {
                        let dxhat = g_row[j] * gamma[j];
                        dx[i * c + j] =
                            inv_std[i] * (dxhat - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                add_to_parent(0, dx, grads);
                add_to_parent(1, dgamma, grads);
                add_to_parent(2, dbeta, grads);
            }
            Op::GatherRows { indices, cols } => {
                let c = *cols;
                let da_len = self.nodes[node.parents[0]].values.len();
                let mut da = vec![0.0; da_len];
                for (row, &src) in indices.iter().enumerate() {
                    for j in 0..c {
                        da[src * c + j] += grad[row * c + j];
                    }
                }
                add_to_parent(0, da, grads);
            }
            Op::ScatterRows { indices, cols } => {
                let mut da = vec![0.0; indices.len() * cols];
                for (row, &dst) in indices.iter().enumerate() {
                    da[row * cols..(row + 1) * cols]
                        .copy_from_slice(&grad[dst * cols..(dst + 1) * cols]);
                }
                add_to_parent(0, da, grads);
            }
            Op::RepeatRow { rows, cols } => {
                let mut da = vec![0.0; *cols];
                for i in 0..*rows {
                    for j in 0..*cols {
                        da[j] += grad[i * cols + j];
                    }
                }
                add_to_parent(0, da, grads);
            }
            Op::SliceCols {
                start,
                len,
                src_cols,
            } => {
                let rows = if *len == 0 { 0 } else { node.values.len() / len };
                let mut da = vec![0.0; self.nodes[node.parents[0]].values.len()];
                for i in 0..rows {
                    da[i * src_cols + start..i * src_cols + start + len]
                        .copy_from_slice(&grad[i * len..(i + 1) * len]);
                }
                add_to_parent(0, da, grads);
            }
            Op::ConcatCols { widths } => {
                let total: usize = widths.iter().sum();
                let rows = node.values.len() / total.max(1);
                let mut offset = 0;
                for (slot, &w) in widths.iter().enumerate() {
                    let mut da = vec![0.0; rows * w];
                    for i in 0..rows {
                        da[i * w..(i + 1) * w]
                            .copy_from_slice(&grad[i * total + offset..i * total + offset + w]);
                    }
                    add_to_parent(slot, da, grads);
                    offset += w;
                }
            }
            Op::MeanAll { count } => {
                let g = grad[0] / *count as f64;
                add_to_parent(0, vec![g; *count], grads);
            }
            Op::SumAll => {
                let count = self.nodes[node.parents[0]].values.len();
                add_to_parent(0, vec![grad[0]; count], grads);
            }
            Op::Attention {
                heads,
                head_dim,
                n_q,
                n_k,
                probs,
            } => {
                let (heads, hd, n_q, n_k) = (*heads, *head_dim, *n_q, *n_k);
                let d = heads * hd;
                let scale = 1.0 / (hd as f64).sqrt();
                let mut dq = vec![0.0; n_q * d];
                let mut dk = vec![0.0; n_k * d];
                let mut dv = vec![0.0; n_k * d];
                let mut qh = vec![0.0; n_q * hd];
                let mut kh = vec![0.0; n_k * hd];
                let mut vh = vec![0.0; n_k * hd];
                let mut g_oh = vec![0.0; n_q * hd];
                let mut dprobs = vec![0.0; n_q * n_k];
                let mut ds = vec![0.0; n_q * n_k];
                let mut dqh = vec![0.0; n_q * hd];
                let mut dkh = vec![0.0; n_k * hd];
                let mut dvh = vec![0.0; n_k * hd];
                for h in 0..heads {
                    copy_head(parent_vals(0), n_q, d, h, hd, &mut qh);
                    copy_head(parent_vals(1), n_k, d, h, hd, &mut kh);
                    copy_head(parent_vals(2), n_k, d, h, hd, &mut vh);
                    copy_head(grad, n_q, d, h, hd, &mut g_oh);
                    let p = &probs[h * n_q * n_k..(h + 1) * n_q * n_k];
                    // dprobs = g_oh @ vh^T ; dv_h = probs^T @ g_oh
                    matmul_nt(&g_oh, &vh, n_q, hd, n_k, &mut dprobs);
                    matmul_tn(p, &g_oh, n_q, n_k, hd, &mut dvh);
                    // softmax backward, then undo the 1/sqrt(hd) scaling
                    for ((ds_row, p_row), dp_row) in ds
                        .chunks_mut(n_k)
                        .zip(p.chunks(n_k))
                        .zip(dprobs.chunks(n_k))
                    {
                        let dot: f64 = dp_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
                        for j in 0..n_k {
                            ds_row[j] = p_row[j] * (dp_row[j] - dot) * scale;
                        }
                    }
                    matmul(&ds, &kh, n_q, n_k, hd, &mut dqh);
                    matmul_tn(&ds, &qh, n_q, n_k, hd, &mut dkh);
                    paste_head(&dqh, n_q, d, h, hd, &mut dq);
                    paste_head(&dkh, n_k, d, h, hd, &mut dk);
                    paste_head(&dvh, n_k, d, h, hd, &mut dv);
                }
                add_to_parent(0, dq, grads);
                add_to_parent(1, dk, grads);
                add_to_parent(2, dv, grads);
            }
        }
    }
}

fn softmax_row(input: &[f64], out: &mut [f64]) {
    let max = input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(input) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn copy_head(src: &[f64], rows: usize, d: usize, head: usize, hd: usize, dst: &mut [f64]) {
    for i in 0..rows {
        dst[i * hd..(i + 1) * hd]
            .copy_from_slice(&src[i * d + head * hd..i * d + (head + 1) * hd]);
    }
}

fn paste_head(src: &[f64], rows: usize, d: usize, head: usize, hd: usize, dst: &mut [f64]) {
    for i in 0..rows {
        dst[i * d + head * hd..i * d + (head + 1) * hd]
            .copy_from_slice(&src[i * hd..(i + 1) * hd]);
    }
}
