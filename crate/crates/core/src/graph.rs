//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and enough saved state to run its adjoint. Nodes are appended in
//! execution order, so the tape is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! ```
//! use albert_lab::graph::Graph;
//! use albert_lab::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.leaf(&Tensor::scalar(3.0).with_grad());
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```
//!
//! A graph supports exactly one backward pass. Build a new graph for every
//! forward pass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Result of [`Graph::cross_entropy_logits`].
#[derive(Debug, Clone, Copy)]
pub struct CrossEntropy {
    pub loss: Var,
    /// Number of rows that contributed. Zero means every row was ignored and
    /// the loss is defined as 0.
    pub counted: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        counted: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a copy of `t`. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t.detached(), Op::Leaf, needs_grad)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass. Leaves that require a gradient but
    /// were not on the loss path report zeros.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(
            value.is_finite() || !matches!(op, Op::Leaf),
            "non-finite leaf"
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Standard matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.data(a), self.data(b), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// Batched product over identical leading dimensions:
    /// `[.., m, k] x [.., k, n]`, or `[.., m, k] x [.., n, k]^T` with `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(Error::dim("batch_matmul", &sa, &sb));
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b {
            (sb[r - 1], sb[r - 2])
        } else {
            (sb[r - 2], sb[r - 1])
        };
        if k != kb {
            return Err(Error::dim("batch_matmul", &sa, &sb));
        }
        let batch = numel(&sa[..r - 2]);
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for bi in 0..batch {
            let ab = &da[bi * m * k..(bi + 1) * m * k];
            let bb = &db[bi * k * n..(bi + 1) * k * n];
            let ob = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                gemm_nt(ab, bb, m, k, n, ob);
            } else {
                gemm_nn(ab, bb, m, k, n, ob);
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BatchMatMul { a, b, trans_b },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let out = zip_map(self.data(a), self.data(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), needs))
    }

    /// `x[.., n] + bias[n]`, broadcasting over leading dimensions.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::dim("add_bias", sx, sb));
        }
        let n = sb[0];
        let b = self.data(bias);
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let needs = self.needs(x) || self.needs(bias);
        let shape = sx.to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x, bias), needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let out = zip_map(self.data(a), self.data(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * c).collect();
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::Scale(x, c),
            needs,
        )
    }

    /// Adds a constant (non-differentiable) tensor of the same element count,
    /// e.g. an additive attention mask.
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(x).numel() {
            return Err(Error::dim("add_const", self.shape(x), &[c.len()]));
        }
        let out = zip_map(self.data(x), c, |a, b| a + b);
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddConst(x), needs))
    }

    fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Var {
        let out = zip_map(self.data(x), &c, |a, b| a * b);
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::MulConst(x, c),
            needs,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::dim("permute", &shape, axes));
        }
        let (out_shape, out) = permute_data(self.data(x), &shape, axes);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Permute(x, axes.to_vec()),
            needs,
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Parameter(format!(
                "softmax axis {axis} invalid for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| o * len * inner + l * inner + i;
                let max = (0..len).map(|l| src[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for l in 0..len {
                    let e = (src[at(l)] - max).exp();
                    out[at(l)] = e;
                    sum += e;
                }
                for l in 0..len {
                    out[at(l)] /= sum;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x, axis), needs))
    }

    /// Layer normalization over the last dimension with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let h = *sx.last().unwrap_or(&0);
        for p in [gamma, beta] {
            if self.shape(p) != [h] {
                return Err(Error::dim("layer_norm", &sx, self.shape(p)));
            }
        }
        let src = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let rows = src.len() / h.max(1);
        let mut out = vec![0.0; src.len()];
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * h..(r + 1) * h];
            let mean = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..h {
                let xh = (row[j] - mean) * rs;
                xhat[r * h + j] = xh;
                out[r * h + j] = g[j] * xh + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor::new(sx, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| v * std_normal_cdf(v)).collect();
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::Gelu(x),
            needs,
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|v| v.tanh()).collect();
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::Tanh(x),
            needs,
        )
    }

    /// Row gather from a `[rows, width]` table. Gradients scatter-add, so
    /// repeated ids accumulate.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::dim("embedding_lookup", &st, &[ids.len()]));
        }
        let (rows, width) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::OutOfRange {
                what: "embedding",
                id: bad,
                size: rows,
            });
        }
        let src = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            out.extend_from_slice(&src[id * width..(id + 1) * width]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), width], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Inverted dropout. Identity when `!training` or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        Ok(self.mul_const(x, mask))
    }

    /// Mean negative log-likelihood over rows whose target is not
    /// `ignore_marker`.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: &[i64],
        ignore_marker: i64,
    ) -> Result<CrossEntropy> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(Error::dim("cross_entropy", &sl, &[targets.len()]));
        }
        let (rows, classes) = (sl[0], sl[1]);
        let targets = targets
            .iter()
            .map(|&t| {
                if t == ignore_marker {
                    Ok(None)
                } else if t < 0 || t as usize >= classes {
                    Err(Error::OutOfRange {
                        what: "target",
                        id: t.max(0) as usize,
                        size: classes,
                    })
                } else {
                    Ok(Some(t as usize))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let src = self.data(logits);
        let mut probs = vec![0.0; src.len()];
        let mut total = 0.0;
        let mut counted = 0;
        for r in 0..rows {
            let Some(t) = targets[r] else { continue };
            let row = &src[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[t];
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - lse).exp();
            }
            counted += 1;
        }
        let loss = if counted == 0 { 0.0 } else { total / counted as f64 };
        let needs = self.needs(logits) && counted > 0;
        let v = self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                counted,
            },
            needs,
        );
        Ok(CrossEntropy { loss: v, counted })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Populates gradients of every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this graph; record a new forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.adjoint(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, delta) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                let slot = self.nodes[v.0]
                    .grad
                    .get_or_insert_with(|| vec![0.0; delta.len()]);
                for (a, d) in slot.iter_mut().zip(&delta) {
                    *a += d;
                }
            }
        }

        for node in &mut self.nodes {
            if node.needs_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn adjoint(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g, self.data(*b), m, n, k, &mut da);
                    out.push((*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.data(*a), g, m, k, n, &mut db);
                    out.push((*b, db));
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let r = sa.len();
                let (m, k) = (sa[r - 2], sa[r - 1]);
                let batch = numel(&sa[..r - 2]);
                let n = node.value.shape()[r - 1];
                let (da_src, db_src) = (self.data(*a), self.data(*b));
                let mut da = vec![0.0; da_src.len()];
                let mut db = vec![0.0; db_src.len()];
                for bi in 0..batch {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let ab = &da_src[bi * m * k..(bi + 1) * m * k];
                    let bb = &db_src[bi * k * n..(bi + 1) * k * n];
                    let dab = &mut da[bi * m * k..(bi + 1) * m * k];
                    let dbb = &mut db[bi * k * n..(bi + 1) * k * n];
                    if *trans_b {
                        // C = A B^T with B: [n, k]
                        gemm_nn(gb, bb, m, n, k, dab);
                        gemm_tn(gb, ab, m, n, k, dbb);
                    } else {
                        gemm_nt(gb, bb, m, n, k, dab);
                        gemm_tn(ab, gb, m, k, n, dbb);
                    }
                }
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::AddBias(x, bias) => {
                out.push((*x, g.to_vec()));
                if self.needs(*bias) {
                    let n = self.shape(*bias)[0];
                    let mut db = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        db[i % n] += v;
                    }
                    out.push((*bias, db));
                }
            }
            Op::Mul(a, b) => {
                out.push((*a, zip_map(g, self.data(*b), |x, y| x * y)));
                out.push((*b, zip_map(g, self.data(*a), |x, y| x * y)));
            }
            Op::Scale(x, c) => out.push((*x, g.iter().map(|v| v * c).collect())),
            Op::AddConst(x) | Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::MulConst(x, c) => out.push((*x, zip_map(g, c, |a, b| a * b))),
            Op::Permute(x, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (_, dx) = permute_data(g, node.value.shape(), &inverse);
                out.push((*x, dx));
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| o * len * inner + l * inner + i;
                        let dot: f64 = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            dx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let h = self.shape(*gamma)[0];
                let gam = self.data(*gamma);
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; h];
                let mut dbeta = vec![0.0; h];
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g[r * h..(r + 1) * h];
                    let xr = &xhat[r * h..(r + 1) * h];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..h {
                        dgamma[j] += gr[j] * xr[j];
                        dbeta[j] += gr[j];
                        let dxh = gr[j] * gam[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xr[j];
                    }
                    let hf = h as f64;
                    for j in 0..h {
                        let dxh = gr[j] * gam[j];
                        dx[r * h + j] = rs / hf * (hf * dxh - sum_dxh - xr[j] * sum_dxh_xh);
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Gelu(x) => {
                let dx = zip_map(g, self.data(*x), |gv, v| {
                    gv * (std_normal_cdf(v) + v * std_normal_pdf(v))
                });
                out.push((*x, dx));
            }
            Op::Tanh(x) => {
                let dx = zip_map(g, node.value.data(), |gv, y| gv * (1.0 - y * y));
                out.push((*x, dx));
            }
            Op::Gather { table, ids } => {
                let width = self.shape(*table)[1];
                let mut dt = vec![0.0; self.value(*table).numel()];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..width {
                        dt[id * width + j] += g[row * width + j];
                    }
                }
                out.push((*table, dt));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                counted,
            } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / *counted as f64;
                let mut dl = vec![0.0; probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    for c in 0..classes {
                        dl[r * classes + c] = probs[r * classes + c] * scale;
                    }
                    dl[r * classes + t] -= scale;
                }
                out.push((*logits, dl));
            }
            Op::Sum(x) => out.push((*x, vec![g[0]; self.value(*x).numel()])),
        }
        out
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..src.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

/// `c[m,n] += a[m,k] * b[k,n]`
fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
fn gemm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, c: &mut [f64]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += api * bv;
            }
        }
    }
}
