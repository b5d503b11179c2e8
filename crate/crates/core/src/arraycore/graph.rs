//! Tape-recorded computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node whose inputs all have smaller indices, so the
//! node order is a topological order and the graph is acyclic by construction.
//! `backward` walks the tape in reverse, summing contributions when a node feeds
//! several consumers.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{GradStore, ParamId, ParamStore};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, log_add_exp, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    Exp(Var),
    LogClamped(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Maximum(Var, Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Pick(Var, Vec<usize>),
    CoverageAdjust(Var, Tensor),
    RelGather {
        src: Var,
        clip: usize,
        offset: usize,
    },
    RelScatter {
        src: Var,
        clip: usize,
        offset: usize,
    },
    ScatterCols(Var, Vec<usize>),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics observed by a training-mode batch-norm node.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
    pub batch: usize,
}

/// Recording tape. Parameters are borrowed read-only from a [`ParamStore`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    grad_enabled: bool,
    dropout: f64,
    rng: Option<ChaCha8Rng>,
    bn_training: bool,
}

/// Maps a relative offset onto a table row in `0..=2*clip`.
pub fn clipped_offset(delta: isize, clip: usize) -> usize {
    let k = clip as isize;
    (delta.clamp(-k, k) + k) as usize
}

impl<'p> Graph<'p> {
    /// Inference graph: no gradients, no dropout, batch-norm on running statistics.
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            grad_enabled: false,
            dropout: 0.0,
            rng: None,
            bn_training: false,
        }
    }

    /// Training graph with gradient recording. `dropout` > 0 requires `rng`.
    pub fn training(params: &'p ParamStore, dropout: f64, rng: Option<ChaCha8Rng>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            grad_enabled: true,
            dropout: if rng.is_some() { dropout } else { 0.0 },
            rng,
            bn_training: true,
        }
    }

    pub fn set_bn_training(&mut self, on: bool) {
        self.bn_training = on;
    }

    pub fn bn_training(&self) -> bool {
        self.bn_training
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter leaf; repeated requests return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let needs_grad = self.grad_enabled && self.params.get(id).trainable;
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a), &[a])
    }

    // ---- elementwise ----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// `a[m x n] + r[1 x n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(r) != (1, n) {
            return Err(Error::shape("add_row", self.shape(a), self.shape(r)));
        }
        let row = self.value(r).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += row[j];
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRow(a, r), &[a, r]))
    }

    /// `a[m x n] * r[1 x n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(r) != (1, n) {
            return Err(Error::shape("mul_row", self.shape(a), self.shape(r)));
        }
        let row = self.value(r).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= row[j];
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MulRow(a, r), &[a, r]))
    }

    /// `a[m x n] * c[m x 1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(c) != (m, 1) {
            return Err(Error::shape("mul_col", self.shape(a), self.shape(c)));
        }
        let col = self.value(c).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= col[i];
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MulCol(a, c), &[a, c]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x + s);
        self.push(t, Op::AddScalar(a), &[a])
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Elementwise product with a constant array.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::shape("mul_const", self.shape(a), c.shape()));
        }
        let t = {
            let ta = self.value(a);
            let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        };
        Ok(self.push(t, Op::MulConst(a, c), &[a]))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::exp);
        self.push(t, Op::Exp(a), &[a])
    }

    /// `ln(max(a, floor))`; gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let t = self.map(a, |x| x.max(floor).ln());
        self.push(t, Op::LogClamped(a, floor), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("maximum", a, b)?;
        let t = self.zip_map(a, b, f64::max);
        Ok(self.push(t, Op::Maximum(a, b), &[a, b]))
    }

    /// Inverted dropout in training graphs; identity otherwise.
    pub fn dropout(&mut self, a: Var) -> Result<Var> {
        let p = self.dropout;
        if p <= 0.0 {
            return Ok(a);
        }
        let n = self.value(a).len();
        let shape = self.shape(a).to_vec();
        let rng = self.rng.as_mut().expect("dropout needs an rng");
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(a, Tensor::new(shape, mask)?)
    }

    // ---- normalisation ---------------------------------------------------

    /// Row-wise softmax. `mask[i*n+j] == false` forces a zero weight.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::shape("softmax_rows mask", &[m, n], &[mask.len()]));
            }
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let allowed = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if allowed(j) {
                    max = max.max(x[i * n + j]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::InvalidMask { row: i });
            }
            let mut z = 0.0;
            for j in 0..n {
                if allowed(j) {
                    let e = (x[i * n + j] - max).exp();
                    out[i * n + j] = e;
                    z += e;
                }
            }
            for v in &mut out[i * n..(i + 1) * n] {
                *v /= z;
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Softmax(a), &[a]))
    }

    /// Row-wise layer normalisation with learned gain and bias (`[1 x n]` each).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(gamma) != (1, n) || self.dims(beta) != (1, n) {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut out = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let xhat = Tensor::new(vec![m, n], xhat)?;
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Batch normalisation over rows using batch statistics. Returns the
    /// normalised output and the observed statistics for running-average updates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (m, n) = self.dims(x);
        if self.dims(gamma) != (1, n) || self.dims(beta) != (1, n) {
            return Err(Error::shape("batch_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                mean[j] += xv[i * n + j];
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for i in 0..m {
            for j in 0..n {
                var[j] += (xv[i * n + j] - mean[j]).powi(2);
            }
        }
        let var_unbiased: Vec<f64> = if m > 1 {
            var.iter().map(|v| v / (m - 1) as f64).collect()
        } else {
            vec![0.0; n]
        };
        var.iter_mut().for_each(|v| *v /= m as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; m * n];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let h = (xv[i * n + j] - mean[j]) * inv_std[j];
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let stats = BatchStats {
            mean,
            var_unbiased,
            batch: m,
        };
        let xhat = Tensor::new(vec![m, n], xhat)?;
        let v = self.push(
            Tensor::new(vec![m, n], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        );
        Ok((v, stats))
    }

    /// Batch normalisation in inference mode from running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (m, n) = self.dims(x);
        if running_mean.len() != n || running_var.len() != n {
            return Err(Error::shape("batch_norm_eval", self.shape(x), &[running_mean.len()]));
        }
        let mut scale = Vec::with_capacity(m * n);
        let shift: Vec<f64> = running_mean.iter().map(|v| -v).collect();
        for _ in 0..m {
            for v in running_var {
                scale.push(1.0 / (v + eps).sqrt());
            }
        }
        let shift = self.constant(Tensor::row(shift));
        let centred = self.add_row(x, shift)?;
        let normed = self.mul_const(centred, Tensor::new(vec![m, n], scale)?)?;
        let scaled = self.mul_row(normed, gamma)?;
        self.add_row(scaled, beta)
    }

    // ---- structure ------------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            if self.dims(p).0 != m {
                return Err(Error::shape("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            total += self.dims(p).1;
        }
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for &p in parts {
            let (_, n) = self.dims(p);
            let src = self.value(p).data();
            for i in 0..m {
                out[i * total + off..i * total + off + n].copy_from_slice(&src[i * n..(i + 1) * n]);
            }
            off += n;
        }
        Ok(self.push(
            Tensor::new(vec![m, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.dims(p).1 != n {
                return Err(Error::shape("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            rows += self.dims(p).0;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Tensor::new(vec![rows, n], out)?,
            Op::ConcatRows(parts.to_vec()),
            parts,
        ))
    }

    /// Row lookup; the embedding-table gather. `table` names the source in errors.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize], table: &str) -> Result<Var> {
        let (m, n) = self.dims(a);
        if indices.is_empty() {
            return Err(Error::Contract(format!("empty gather from {table}")));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::Lookup {
                    table: table.to_string(),
                    index: i,
                    size: m,
                });
            }
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        Ok(self.push(
            Tensor::new(vec![indices.len(), n], out)?,
            Op::GatherRows(a, indices.to_vec()),
            &[a],
        ))
    }

    /// Column-wise max over each row segment `[start, end)`; one output row per segment.
    pub fn segment_max(&mut self, a: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(segments.len() * n);
        let mut arg = Vec::with_capacity(segments.len() * n);
        for &(s, e) in segments {
            if s >= e || e > m {
                return Err(Error::Contract(format!(
                    "segment ({s},{e}) invalid for {m} rows"
                )));
            }
            for j in 0..n {
                let mut best = s;
                for r in s + 1..e {
                    if src[r * n + j] > src[best * n + j] {
                        best = r;
                    }
                }
                out.push(src[best * n + j]);
                arg.push(best * n + j);
            }
        }
        Ok(self.push(
            Tensor::new(vec![segments.len(), n], out)?,
            Op::SegmentMax(a, arg),
            &[a],
        ))
    }

    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let m = self.dims(a).0;
        self.segment_max(a, &[(0, m)])
    }

    /// Column means, `[m x n] -> [1 x n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += src[i * n + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        self.push(Tensor::row(out), Op::MeanRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Picks `a[i, idx[i]]` for every row, giving `[m x 1]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if idx.len() != m {
            return Err(Error::shape("pick", self.shape(a), &[idx.len()]));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m);
        for (i, &j) in idx.iter().enumerate() {
            if j >= n {
                return Err(Error::Lookup {
                    table: "pick".into(),
                    index: j,
                    size: n,
                });
            }
            out.push(src[i * n + j]);
        }
        Ok(self.push(Tensor::column(out), Op::Pick(a, idx.to_vec()), &[a]))
    }

    /// Coverage reweighting of attention logits over decoder steps (rows).
    ///
    /// Row `t` becomes `e_t - ln(sum_{k<t} exp(e_k))` column-wise, so a softmax of
    /// the result equals normalising `exp(e_t) / sum_{k<t} exp(e_k)`. Row 0 is unchanged.
    pub fn coverage_adjust(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut out = src.to_vec();
        // prefix[t] = logsumexp of rows < t, defined for t >= 1.
        let mut prefix = vec![0.0; m * n];
        if m > 1 {
            let mut acc: Vec<f64> = src[..n].to_vec();
            for t in 1..m {
                for j in 0..n {
                    prefix[t * n + j] = acc[j];
                    out[t * n + j] = src[t * n + j] - acc[j];
                    acc[j] = log_add_exp(acc[j], src[t * n + j]);
                }
            }
        }
        let prefix = Tensor::new(vec![m, n], prefix)?;
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::CoverageAdjust(a, prefix),
            &[a],
        ))
    }

    /// Expands per-offset scores `[m x (2k+1)]` to `[m x n]` pairwise scores:
    /// `out[i][j] = src[i][clip(j - (i + offset), k) + k]`.
    pub fn rel_gather(&mut self, src: Var, n: usize, clip: usize, offset: usize) -> Result<Var> {
        let (m, w) = self.dims(src);
        if w != 2 * clip + 1 {
            return Err(Error::shape("rel_gather", self.shape(src), &[2 * clip + 1]));
        }
        let s = self.value(src).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let r = clipped_offset(j as isize - (i + offset) as isize, clip);
                out[i * n + j] = s[i * w + r];
            }
        }
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::RelGather { src, clip, offset },
            &[src],
        ))
    }

    /// Adjoint of [`Graph::rel_gather`]: sums pairwise weights into offset buckets.
    pub fn rel_scatter(&mut self, src: Var, clip: usize, offset: usize) -> Result<Var> {
        let (m, n) = self.dims(src);
        let w = 2 * clip + 1;
        let s = self.value(src).data();
        let mut out = vec![0.0; m * w];
        for i in 0..m {
            for j in 0..n {
                let r = clipped_offset(j as isize - (i + offset) as isize, clip);
                out[i * w + r] += s[i * n + j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![m, w], out)?,
            Op::RelScatter { src, clip, offset },
            &[src],
        ))
    }

    /// `out[i][map[j]] += a[i][j]` over a `width`-column output.
    pub fn scatter_cols(&mut self, a: Var, map: &[usize], width: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if map.len() != n {
            return Err(Error::shape("scatter_cols", self.shape(a), &[map.len()]));
        }
        if let Some(&bad) = map.iter().find(|&&c| c >= width) {
            return Err(Error::Lookup {
                table: "scatter_cols".into(),
                index: bad,
                size: width,
            });
        }
        let s = self.value(a).data();
        let mut out = vec![0.0; m * width];
        for i in 0..m {
            for j in 0..n {
                out[i * width + map[j]] += s[i * n + j];
            }
        }
        Ok(self.push(
            Tensor::new(vec![m, width], out)?,
            Op::ScatterCols(a, map.to_vec()),
            &[a],
        ))
    }

    // ---- composites -------------------------------------------------------

    /// `x W + b` with `W: [in x out]`, `b: [1 x out]`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let wv = self.param(w);
        let y = self.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = self.param(b);
                self.add_row(y, bv)
            }
            None => Ok(y),
        }
    }

    /// 1-D convolution over each segment of rows. `x` holds stacked sequences
    /// `[total x c]`; every segment must span at least `width` rows. Filters are
    /// `[width*c x f]`. Output stacks the valid positions of all segments.
    pub fn conv1d(
        &mut self,
        x: Var,
        segments: &[(usize, usize)],
        width: usize,
        filters: ParamId,
        bias: ParamId,
    ) -> Result<(Var, Vec<(usize, usize)>)> {
        let mut offsets: Vec<Vec<usize>> = vec![Vec::new(); width];
        let mut out_segments = Vec::with_capacity(segments.len());
        let mut row = 0;
        for &(s, e) in segments {
            if e - s < width {
                return Err(Error::Contract(format!(
                    "conv1d segment of {} rows shorter than width {width}",
                    e - s
                )));
            }
            let windows = e - s - width + 1;
            for p in 0..windows {
                for (o, idx) in offsets.iter_mut().enumerate() {
                    idx.push(s + p + o);
                }
            }
            out_segments.push((row, row + windows));
            row += windows;
        }
        let mut cols = Vec::with_capacity(width);
        for idx in &offsets {
            cols.push(self.gather_rows(x, idx, "conv1d input")?);
        }
        let unfolded = self.concat_cols(&cols)?;
        let y = self.linear(unfolded, filters, Some(bias))?;
        Ok((y, out_segments))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Accumulates `d loss / d param` into `grads` for every trainable parameter reached.
    pub fn backward(&self, loss: Var, grads: &mut GradStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.needs(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut adj, grads);
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &Tensor,
        adj: &mut [Option<Tensor>],
        grads: &mut GradStore,
    ) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let out = self.value(Var(idx));
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => grads.get_mut(*id).add_assign(g),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt_acc(gd, self.value(*b).data(), &mut ga, m, n, k);
                    self.acc(adj, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn_acc(self.value(*a).data(), gd, &mut gb, m, k, n);
                    self.acc(adj, *b, gb);
                }
            }
            Op::MatMulNt(a, b) => {
                // out = a b^T; a: [m x k], b: [n x k]
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_acc(gd, self.value(*b).data(), &mut ga, m, n, k);
                    self.acc(adj, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; n * k];
                    gemm_tn_acc(gd, self.value(*a).data(), &mut gb, m, n, k);
                    self.acc(adj, *b, gb);
                }
            }
            Op::Transpose(a) => {
                self.acc(adj, *a, g.transpose().into_data());
            }
            Op::Add(a, b) => {
                self.acc(adj, *a, gd.to_vec());
                self.acc(adj, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(adj, *a, gd.to_vec());
                self.acc(adj, *b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(adj, *a, gd.iter().zip(bv).map(|(g, y)| g * y).collect());
                self.acc(adj, *b, gd.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(a, r) => {
                self.acc(adj, *a, gd.to_vec());
                if self.needs(*r) {
                    let (m, n) = self.dims(*a);
                    let mut gr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gr[j] += gd[i * n + j];
                        }
                    }
                    self.acc(adj, *r, gr);
                }
            }
            Op::MulRow(a, r) => {
                let (m, n) = self.dims(*a);
                let av = self.value(*a).data();
                let rv = self.value(*r).data();
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = gd[i * n + j] * rv[j];
                        }
                    }
                    self.acc(adj, *a, ga);
                }
                if self.needs(*r) {
                    let mut gr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gr[j] += gd[i * n + j] * av[i * n + j];
                        }
                    }
                    self.acc(adj, *r, gr);
                }
            }
            Op::MulCol(a, c) => {
                let (m, n) = self.dims(*a);
                let av = self.value(*a).data();
                let cv = self.value(*c).data();
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = gd[i * n + j] * cv[i];
                        }
                    }
                    self.acc(adj, *a, ga);
                }
                if self.needs(*c) {
                    let mut gc = vec![0.0; m];
                    for i in 0..m {
                        for j in 0..n {
                            gc[i] += gd[i * n + j] * av[i * n + j];
                        }
                    }
                    self.acc(adj, *c, gc);
                }
            }
            Op::Scale(a, s) => self.acc(adj, *a, gd.iter().map(|v| v * s).collect()),
            Op::AddScalar(a) => self.acc(adj, *a, gd.to_vec()),
            Op::MulConst(a, c) => {
                self.acc(adj, *a, gd.iter().zip(c.data()).map(|(g, c)| g * c).collect())
            }
            Op::Exp(a) => {
                self.acc(adj, *a, gd.iter().zip(out.data()).map(|(g, y)| g * y).collect())
            }
            Op::LogClamped(a, floor) => {
                let av = self.value(*a).data();
                self.acc(
                    adj,
                    *a,
                    gd.iter()
                        .zip(av)
                        .map(|(g, &x)| if x > *floor { g / x } else { 0.0 })
                        .collect(),
                )
            }
            Op::Sigmoid(a) => self.acc(
                adj,
                *a,
                gd.iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect(),
            ),
            Op::Tanh(a) => self.acc(
                adj,
                *a,
                gd.iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect(),
            ),
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.acc(
                    adj,
                    *a,
                    gd.iter()
                        .zip(av)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )
            }
            Op::Maximum(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let mut ga = vec![0.0; gd.len()];
                let mut gb = vec![0.0; gd.len()];
                for i in 0..gd.len() {
                    if av[i] >= bv[i] {
                        ga[i] = gd[i];
                    } else {
                        gb[i] = gd[i];
                    }
                }
                self.acc(adj, *a, ga);
                self.acc(adj, *b, gb);
            }
            Op::Softmax(a) => {
                let (m, n) = self.dims(*a);
                let y = out.data();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let dot: f64 = gd[r.clone()].iter().zip(&y[r.clone()]).map(|(g, y)| g * y).sum();
                    for j in r {
                        ga[j] = y[j] * (gd[j] - dot);
                    }
                }
                self.acc(adj, *a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.dims(*x);
                let gv = self.value(*gamma).data();
                let h = xhat.data();
                if self.needs(*x) {
                    let mut gx = vec![0.0; m * n];
                    for i in 0..m {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let gh = gd[i * n + j] * gv[j];
                            s1 += gh;
                            s2 += gh * h[i * n + j];
                        }
                        let nf = n as f64;
                        for j in 0..n {
                            let gh = gd[i * n + j] * gv[j];
                            gx[i * n + j] = inv_std[i] / nf * (nf * gh - s1 - h[i * n + j] * s2);
                        }
                    }
                    self.acc(adj, *x, gx);
                }
                self.affine_param_grads(adj, *gamma, *beta, gd, h, m, n);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.dims(*x);
                let gv = self.value(*gamma).data();
                let h = xhat.data();
                if self.needs(*x) {
                    let mut gx = vec![0.0; m * n];
                    let mf = m as f64;
                    for j in 0..n {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for i in 0..m {
                            let gh = gd[i * n + j] * gv[j];
                            s1 += gh;
                            s2 += gh * h[i * n + j];
                        }
                        for i in 0..m {
                            let gh = gd[i * n + j] * gv[j];
                            gx[i * n + j] = inv_std[j] / mf * (mf * gh - s1 - h[i * n + j] * s2);
                        }
                    }
                    self.acc(adj, *x, gx);
                }
                self.affine_param_grads(adj, *gamma, *beta, gd, h, m, n);
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let n = self.dims(p).1;
                    if self.needs(p) {
                        let mut gp = vec![0.0; m * n];
                        for i in 0..m {
                            gp[i * n..(i + 1) * n]
                                .copy_from_slice(&gd[i * total + off..i * total + off + n]);
                        }
                        self.acc(adj, p, gp);
                    }
                    off += n;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.needs(p) {
                        self.acc(adj, p, gd[off..off + len].to_vec());
                    }
                    off += len;
                }
            }
            Op::GatherRows(a, indices) => {
                let (m, n) = self.dims(*a);
                let mut ga = vec![0.0; m * n];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..n {
                        ga[i * n + j] += gd[r * n + j];
                    }
                }
                self.acc(adj, *a, ga);
            }
            Op::SegmentMax(a, arg) => {
                let mut ga = vec![0.0; self.value(*a).len()];
                for (o, &src) in arg.iter().enumerate() {
                    ga[src] += gd[o];
                }
                self.acc(adj, *a, ga);
            }
            Op::MeanRows(a) => {
                let (m, n) = self.dims(*a);
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = gd[j] / m as f64;
                    }
                }
                self.acc(adj, *a, ga);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.acc(adj, *a, vec![gd[0]; n]);
            }
            Op::Pick(a, idx) => {
                let (m, n) = self.dims(*a);
                let mut ga = vec![0.0; m * n];
                for (i, &j) in idx.iter().enumerate() {
                    ga[i * n + j] += gd[i];
                }
                self.acc(adj, *a, ga);
            }
            Op::CoverageAdjust(a, prefix) => {
                let (m, n) = self.dims(*a);
                let e = self.value(*a).data();
                let p = prefix.data();
                let mut ga = gd.to_vec();
                for t in 1..m {
                    for j in 0..n {
                        let gt = gd[t * n + j];
                        if gt == 0.0 {
                            continue;
                        }
                        let lse = p[t * n + j];
                        for k in 0..t {
                            ga[k * n + j] -= gt * (e[k * n + j] - lse).exp();
                        }
                    }
                }
                self.acc(adj, *a, ga);
            }
            Op::RelGather { src, clip, offset } => {
                let (m, w) = self.dims(*src);
                let n = g.cols();
                let mut gs = vec![0.0; m * w];
                for i in 0..m {
                    for j in 0..n {
                        let r = clipped_offset(j as isize - (i + offset) as isize, *clip);
                        gs[i * w + r] += gd[i * n + j];
                    }
                }
                self.acc(adj, *src, gs);
            }
            Op::RelScatter { src, clip, offset } => {
                let (m, n) = self.dims(*src);
                let w = g.cols();
                let mut gs = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let r = clipped_offset(j as isize - (i + offset) as isize, *clip);
                        gs[i * n + j] = gd[i * w + r];
                    }
                }
                self.acc(adj, *src, gs);
            }
            Op::ScatterCols(a, map) => {
                let (m, n) = self.dims(*a);
                let width = g.cols();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for (j, &c) in map.iter().enumerate() {
                        ga[i * n + j] = gd[i * width + c];
                    }
                }
                self.acc(adj, *a, ga);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn affine_param_grads(
        &self,
        adj: &mut [Option<Tensor>],
        gamma: Var,
        beta: Var,
        gd: &[f64],
        h: &[f64],
        m: usize,
        n: usize,
    ) {
        if self.needs(gamma) {
            let mut gg = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    gg[j] += gd[i * n + j] * h[i * n + j];
                }
            }
            self.acc(adj, gamma, gg);
        }
        if self.needs(beta) {
            let mut gb = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    gb[j] += gd[i * n + j];
                }
            }
            self.acc(adj, beta, gb);
        }
    }

    fn acc(&self, adj: &mut [Option<Tensor>], v: Var, data: Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut adj[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(&data) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.shape(v).to_vec();
                *slot = Some(Tensor::new(shape, data).expect("gradient shape matches value"));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
