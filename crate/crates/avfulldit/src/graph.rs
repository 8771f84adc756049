//! Reverse-mode automatic differentiation over a closed op set.
//!
//! Operations are recorded eagerly on a tape ([`Graph`]); node indices double
//! as topological order, so backward is a single reverse sweep. The op set is
//! exactly what the model needs: matmul (leading-batch broadcast), elementwise
//! add/mul with trailing-suffix broadcast, scale, silu, softmax, layer norm,
//! reshape, axis swap, concat/split, mse, sum, and rotary application.
//!
//! Graph construction and backward are single-threaded. Forward passes on
//! separate `Graph` values may run concurrently.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Silu { a: Var },
    Softmax { a: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    Reshape { a: Var },
    SwapAxes { a: Var, d0: usize, d1: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize, len: usize },
    Mse { a: Var, b: Var },
    Sum { a: Var },
    Rope { a: Var, cos: Vec<f64>, sin: Vec<f64> },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Tape of recorded operations. Values are computed eagerly on insertion.
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
    corrupt_silu_backward: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
            corrupt_silu_backward: false,
        }
    }

    /// Enable or disable the NaN/Inf guard that runs after each op.
    /// On by default in debug builds, off in release.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Test hook: multiplies silu's local derivative by a wrong factor so the
    /// finite-difference check can demonstrate it detects a corrupted rule.
    pub fn debug_corrupt_silu_backward(&mut self, on: bool) {
        self.corrupt_silu_backward = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Clone a node's value out of the tape.
    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("node invariant")
    }

    /// Gradient buffer populated by [`Graph::backward`], as a tensor.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let n = &self.nodes[v.0];
        n.grad
            .as_ref()
            .map(|g| Tensor::new(n.shape.clone(), g.clone()).expect("grad shape invariant"))
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if self.check_finite && !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite value produced by {:?}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Insert a tensor as a leaf.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), requires_grad, Op::Leaf)
            .expect("leaf insertion cannot fail on finite tensor")
    }

    /// Leaf that never requires grad.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// Matrix product over the two trailing dims; leading dims broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if ka != kb {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let batch = broadcast_batch(&sa[..sa.len() - 2], &sb[..sb.len() - 2]).ok_or_else(|| {
            Error::ShapeMismatch { op: "matmul", lhs: sa.clone(), rhs: sb.clone() }
        })?;
        let mut out_shape = batch.clone();
        out_shape.extend_from_slice(&[m, n]);

        let nb: usize = batch.iter().product();
        let mut out = vec![0.0; nb * m * n];
        {
            let da = &self.nodes[a.0].data;
            let db = &self.nodes[b.0].data;
            for bi in 0..nb {
                let ai = project_batch(bi, &batch, &sa[..sa.len() - 2]);
                let bj = project_batch(bi, &batch, &sb[..sb.len() - 2]);
                matmul_slice(
                    &da[ai * m * ka..(ai + 1) * m * ka],
                    &db[bj * ka * n..(bj + 1) * ka * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    ka,
                    n,
                );
            }
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(out_shape, out, rg, Op::Matmul { a, b })
    }

    /// Elementwise add. Shapes must be equal, or `b`'s shape a trailing
    /// suffix of `a`'s (broadcast over leading dims).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_suffix("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    /// Elementwise multiply with the same suffix-broadcast rule as `add`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_suffix("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn binary_suffix(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !is_suffix(&sb, &sa) {
            return Err(Error::ShapeMismatch { op: name, lhs: sa, rhs: sb });
        }
        let nb: usize = sb.iter().product();
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let out: Vec<f64> = da
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, db[i % nb.max(1)]))
            .collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(sa, out, rg, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let rg = self.requires(a);
        self.push(sa, out, rg, Op::Scale { a, c })
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x * sigmoid(x)).collect();
        let rg = self.requires(a);
        self.push(sa, out, rg, Op::Silu { a })
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::InvalidDim {
                op: "softmax",
                msg: format!("axis {} out of range for shape {:?}", axis, sa),
            });
        }
        let (outer, len, inner) = axis_split(&sa, axis);
        let da = &self.nodes[a.0].data;
        let mut out = vec![0.0; da.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..len {
                    mx = mx.max(da[idx(j)]);
                }
                let mut z = 0.0;
                for j in 0..len {
                    let e = (da[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[idx(j)] /= z;
                }
            }
        }
        let rg = self.requires(a);
        self.push(sa, out, rg, Op::Softmax { a, axis })
    }

    /// Layer normalization over the last dim, then affine by gain/bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let c = *sx.last().ok_or_else(|| Error::InvalidDim {
            op: "layer_norm",
            msg: "rank-0 input".into(),
        })?;
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: sx,
                rhs: self.shape(gain).to_vec(),
            });
        }
        let rows = self.nodes[x.0].data.len() / c;
        let dx = &self.nodes[x.0].data;
        let dg = &self.nodes[gain.0].data;
        let db = &self.nodes[bias.0].data;
        let mut out = vec![0.0; dx.len()];
        for r in 0..rows {
            let row = &dx[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[r * c + j] = (row[j] - mean) * inv * dg[j] + db[j];
            }
        }
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        self.push(sx, out, rg, Op::LayerNorm { x, gain, bias, eps })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].data.len() {
            return Err(Error::ShapeMismatch { op: "reshape", lhs: sa, rhs: shape.to_vec() });
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.requires(a);
        self.push(shape.to_vec(), data, rg, Op::Reshape { a })
    }

    pub fn swap_axes(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if d0 >= sa.len() || d1 >= sa.len() {
            return Err(Error::InvalidDim {
                op: "swap_axes",
                msg: format!("axes ({}, {}) out of range for shape {:?}", d0, d1, sa),
            });
        }
        let mut out_shape = sa.clone();
        out_shape.swap(d0, d1);
        let data = permute_swap(&self.nodes[a.0].data, &sa, d0, d1);
        let rg = self.requires(a);
        self.push(out_shape, data, rg, Op::SwapAxes { a, d0, d1 })
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidDim { op: "concat", msg: "no inputs".into() });
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidDim {
                op: "concat",
                msg: format!("axis {} out of range for shape {:?}", axis, first),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut out = vec![0.0; out_shape.iter().product()];
        let mut offset = 0;
        for &v in inputs {
            let len_k = self.shape(v)[axis];
            let dv = &self.nodes[v.0].data;
            for o in 0..outer {
                let src = &dv[o * len_k * inner..(o + 1) * len_k * inner];
                let dst_start = (o * total + offset) * inner;
                out[dst_start..dst_start + len_k * inner].copy_from_slice(src);
            }
            offset += len_k;
        }
        let rg = inputs.iter().any(|&v| self.requires(v));
        self.push(out_shape, out, rg, Op::Concat { inputs: inputs.to_vec(), axis })
    }

    /// Split along `axis` into parts of the given sizes. Exact inverse of
    /// `concat` with the same sizes.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::InvalidDim {
                op: "split",
                msg: format!("axis {} out of range for shape {:?}", axis, sa),
            });
        }
        if sizes.iter().sum::<usize>() != sa[axis] {
            return Err(Error::InvalidDim {
                op: "split",
                msg: format!("sizes {:?} do not sum to axis length {}", sizes, sa[axis]),
            });
        }
        let mut parts = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &len in sizes {
            parts.push(self.slice(a, axis, start, len)?);
            start += len;
        }
        Ok(parts)
    }

    fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let (outer, total, inner) = axis_split(&sa, axis);
        let mut out_shape = sa.clone();
        out_shape[axis] = len;
        let da = &self.nodes[a.0].data;
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_start = (o * total + start) * inner;
            out[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&da[src_start..src_start + len * inner]);
        }
        let rg = self.requires(a);
        self.push(out_shape, out, rg, Op::Slice { a, axis, start, len })
    }

    /// Mean squared error between two same-shape tensors; scalar output.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::ShapeMismatch { op: "mse", lhs: sa, rhs: sb });
        }
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let n = da.len() as f64;
        let s: f64 = da.iter().zip(db).map(|(x, y)| (x - y) * (x - y)).sum();
        let rg = self.requires(a) || self.requires(b);
        self.push(vec![1], vec![s / n], rg, Op::Mse { a, b })
    }

    /// Sum of all elements; scalar output.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.requires(a);
        self.push(vec![1], vec![s], rg, Op::Sum { a })
    }

    /// Rotary application on `[L, H, D]` tokens. `cos`/`sin` are row-major
    /// `L x (D/2)` tables of pair angles; consecutive feature pairs rotate.
    pub fn rope(&mut self, a: Var, cos: &[f64], sin: &[f64]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || sa[2] % 2 != 0 {
            return Err(Error::InvalidDim {
                op: "rope",
                msg: format!("expected [L, H, D] with even D, got {:?}", sa),
            });
        }
        let (l, h, d) = (sa[0], sa[1], sa[2]);
        let half = d / 2;
        if cos.len() != l * half || sin.len() != l * half {
            return Err(Error::InvalidDim {
                op: "rope",
                msg: format!(
                    "angle table length {} does not match L*D/2 = {}",
                    cos.len(),
                    l * half
                ),
            });
        }
        let da = &self.nodes[a.0].data;
        let mut out = vec![0.0; da.len()];
        for t in 0..l {
            for head in 0..h {
                let base = (t * h + head) * d;
                for p in 0..half {
                    let (c, s) = (cos[t * half + p], sin[t * half + p]);
                    let x0 = da[base + 2 * p];
                    let x1 = da[base + 2 * p + 1];
                    out[base + 2 * p] = x0 * c - x1 * s;
                    out[base + 2 * p + 1] = x0 * s + x1 * c;
                }
            }
        }
        let rg = self.requires(a);
        self.push(sa, out, rg, Op::Rope { a, cos: cos.to_vec(), sin: sin.to_vec() })
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates `grad` on every node that
    /// requires grad; gradients accumulate across fan-out.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let g = self.nodes[i].grad.clone().expect("checked above");
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => self.back_matmul(i, a, b, &g),
                Op::Add { a, b } => {
                    self.accum(a, &g);
                    self.accum_suffix(b, &g);
                }
                Op::Mul { a, b } => {
                    let nb = self.nodes[b.0].data.len();
                    let ga: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(k, &gv)| gv * self.nodes[b.0].data[k % nb])
                        .collect();
                    self.accum(a, &ga);
                    let gb: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(k, &gv)| gv * self.nodes[a.0].data[k])
                        .collect();
                    self.accum_suffix(b, &gb);
                }
                Op::Scale { a, c } => {
                    let ga: Vec<f64> = g.iter().map(|gv| gv * c).collect();
                    self.accum(a, &ga);
                }
                Op::Silu { a } => {
                    let factor = if self.corrupt_silu_backward { 1.25 } else { 1.0 };
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(gv, &x)| {
                            let s = sigmoid(x);
                            gv * s * (1.0 + x * (1.0 - s)) * factor
                        })
                        .collect();
                    self.accum(a, &ga);
                }
                Op::Softmax { a, axis } => {
                    let sa = self.nodes[i].shape.clone();
                    let (outer, len, inner) = axis_split(&sa, axis);
                    let y = &self.nodes[i].data;
                    let mut ga = vec![0.0; y.len()];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + ii;
                            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                ga[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                    self.accum(a, &ga);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    self.back_layer_norm(x, gain, bias, eps, &g);
                }
                Op::Reshape { a } => self.accum(a, &g),
                Op::SwapAxes { a, d0, d1 } => {
                    let out_shape = self.nodes[i].shape.clone();
                    let ga = permute_swap(&g, &out_shape, d0, d1);
                    self.accum(a, &ga);
                }
                Op::Concat { inputs, axis } => {
                    let out_shape = self.nodes[i].shape.clone();
                    let (outer, total, inner) = axis_split(&out_shape, axis);
                    let mut offset = 0;
                    for v in inputs {
                        let len_k = self.nodes[v.0].shape[axis];
                        let mut gv = vec![0.0; len_k * outer * inner];
                        for o in 0..outer {
                            let src_start = (o * total + offset) * inner;
                            gv[o * len_k * inner..(o + 1) * len_k * inner]
                                .copy_from_slice(&g[src_start..src_start + len_k * inner]);
                        }
                        self.accum(v, &gv);
                        offset += len_k;
                    }
                }
                Op::Slice { a, axis, start, len } => {
                    let in_shape = self.nodes[a.0].shape.clone();
                    let (outer, total, inner) = axis_split(&in_shape, axis);
                    let mut ga = vec![0.0; self.nodes[a.0].data.len()];
                    for o in 0..outer {
                        let dst_start = (o * total + start) * inner;
                        ga[dst_start..dst_start + len * inner]
                            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    self.accum(a, &ga);
                }
                Op::Mse { a, b } => {
                    let n = self.nodes[a.0].data.len() as f64;
                    let scale = 2.0 * g[0] / n;
                    let ga: Vec<f64> = self.nodes[a.0]
                        .data
                        .iter()
                        .zip(&self.nodes[b.0].data)
                        .map(|(x, y)| scale * (x - y))
                        .collect();
                    let gb: Vec<f64> = ga.iter().map(|v| -v).collect();
                    self.accum(a, &ga);
                    self.accum(b, &gb);
                }
                Op::Sum { a } => {
                    let ga = vec![g[0]; self.nodes[a.0].data.len()];
                    self.accum(a, &ga);
                }
                Op::Rope { a, cos, sin } => {
                    let sa = self.nodes[i].shape.clone();
                    let (l, h, d) = (sa[0], sa[1], sa[2]);
                    let half = d / 2;
                    let mut ga = vec![0.0; g.len()];
                    for t in 0..l {
                        for head in 0..h {
                            let base = (t * h + head) * d;
                            for p in 0..half {
                                let (c, s) = (cos[t * half + p], sin[t * half + p]);
                                let g0 = g[base + 2 * p];
                                let g1 = g[base + 2 * p + 1];
                                // inverse rotation of the upstream gradient
                                ga[base + 2 * p] = g0 * c + g1 * s;
                                ga[base + 2 * p + 1] = -g0 * s + g1 * c;
                            }
                        }
                    }
                    self.accum(a, &ga);
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, g: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(buf) => {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
            None => node.grad = Some(g.to_vec()),
        }
    }

    /// Accumulate a full-shape gradient into a suffix-broadcast operand by
    /// summing over the broadcast leading dims.
    fn accum_suffix(&mut self, v: Var, g: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let nb = self.nodes[v.0].data.len();
        if nb == g.len() {
            self.accum(v, g);
            return;
        }
        let mut reduced = vec![0.0; nb];
        for (k, &gv) in g.iter().enumerate() {
            reduced[k % nb] += gv;
        }
        self.accum(v, &reduced);
    }

    fn back_matmul(&mut self, out: usize, a: Var, b: Var, g: &[f64]) {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        let so = self.nodes[out].shape.clone();
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let batch = so[..so.len() - 2].to_vec();
        let nb: usize = batch.iter().product();

        if self.nodes[a.0].requires_grad {
            let mut ga = vec![0.0; self.nodes[a.0].data.len()];
            let db = &self.nodes[b.0].data;
            for bi in 0..nb {
                let ai = project_batch(bi, &batch, &sa[..sa.len() - 2]);
                let bj = project_batch(bi, &batch, &sb[..sb.len() - 2]);
                // dA += dC * B^T
                let gc = &g[bi * m * n..(bi + 1) * m * n];
                let bmat = &db[bj * k * n..(bj + 1) * k * n];
                let gasl = &mut ga[ai * m * k..(ai + 1) * m * k];
                for i in 0..m {
                    for kk in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += gc[i * n + j] * bmat[kk * n + j];
                        }
                        gasl[i * k + kk] += s;
                    }
                }
            }
            self.accum(a, &ga);
        }
        if self.nodes[b.0].requires_grad {
            let mut gb = vec![0.0; self.nodes[b.0].data.len()];
            let da = &self.nodes[a.0].data;
            for bi in 0..nb {
                let ai = project_batch(bi, &batch, &sa[..sa.len() - 2]);
                let bj = project_batch(bi, &batch, &sb[..sb.len() - 2]);
                // dB += A^T * dC
                let gc = &g[bi * m * n..(bi + 1) * m * n];
                let amat = &da[ai * m * k..(ai + 1) * m * k];
                let gbsl = &mut gb[bj * k * n..(bj + 1) * k * n];
                for i in 0..m {
                    let arow = &amat[i * k..(i + 1) * k];
                    let grow = &gc[i * n..(i + 1) * n];
                    for (kk, &av) in arow.iter().enumerate() {
                        if av != 0.0 {
                            let dst = &mut gbsl[kk * n..(kk + 1) * n];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                }
            }
            self.accum(b, &gb);
        }
    }

    fn back_layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64, g: &[f64]) {
        let sx = self.nodes[x.0].shape.clone();
        let c = *sx.last().expect("validated at forward");
        let rows = self.nodes[x.0].data.len() / c;
        let dx = self.nodes[x.0].data.clone();
        let dg = self.nodes[gain.0].data.clone();

        let mut gx = vec![0.0; dx.len()];
        let mut ggain = vec![0.0; c];
        let mut gbias = vec![0.0; c];
        for r in 0..rows {
            let row = &dx[r * c..(r + 1) * c];
            let grow = &g[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            // xhat[j] = (x - mean) * inv; h[j] = g[j] * gain[j]
            let mut mean_h = 0.0;
            let mut mean_hx = 0.0;
            for j in 0..c {
                let xhat = (row[j] - mean) * inv;
                let h = grow[j] * dg[j];
                mean_h += h;
                mean_hx += h * xhat;
                ggain[j] += grow[j] * xhat;
                gbias[j] += grow[j];
            }
            mean_h /= c as f64;
            mean_hx /= c as f64;
            for j in 0..c {
                let xhat = (row[j] - mean) * inv;
                let h = grow[j] * dg[j];
                gx[r * c + j] = (h - mean_h - xhat * mean_hx) * inv;
            }
        }
        self.accum(x, &gx);
        self.accum(gain, &ggain);
        self.accum(bias, &gbias);
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Silu { .. } => "silu",
        Op::Softmax { .. } => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Reshape { .. } => "reshape",
        Op::SwapAxes { .. } => "swap_axes",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Mse { .. } => "mse",
        Op::Sum { .. } => "sum",
        Op::Rope { .. } => "rope",
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inner matmul kernel: out[m,n] = a[m,k] * b[k,n], streaming over b rows.
fn matmul_slice(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// Broadcast two leading-batch shapes; None if incompatible.
fn broadcast_batch(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return None;
        }
        out[i] = da.max(db);
    }
    Some(out)
}

/// Map a flat index in the broadcast batch space to a flat index in an
/// operand's (possibly smaller) batch space.
fn project_batch(flat: usize, batch: &[usize], operand: &[usize]) -> usize {
    if operand.is_empty() {
        return 0;
    }
    let mut coords = vec![0usize; batch.len()];
    let mut rem = flat;
    for d in (0..batch.len()).rev() {
        coords[d] = rem % batch[d];
        rem /= batch[d];
    }
    let offset = batch.len() - operand.len();
    let mut idx = 0;
    for (d, &dim) in operand.iter().enumerate() {
        let c = if dim == 1 { 0 } else { coords[offset + d] };
        idx = idx * dim + c;
    }
    idx
}

/// (outer, len, inner) decomposition of `shape` around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && &big[big.len() - small.len()..] == small
}

/// Materialized axis-swap permutation of row-major data.
fn permute_swap(data: &[f64], shape: &[usize], d0: usize, d1: usize) -> Vec<f64> {
    if d0 == d1 {
        return data.to_vec();
    }
    let rank = shape.len();
    let mut out_shape = shape.to_vec();
    out_shape.swap(d0, d1);
    let mut out = vec![0.0; data.len()];
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank - 1).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let mut out_strides = vec![1usize; rank];
    for d in (0..rank - 1).rev() {
        out_strides[d] = out_strides[d + 1] * out_shape[d + 1];
    }
    // walk output coordinates; read from the swapped input coordinate
    let mut coords = vec![0usize; rank];
    for out_idx in 0..data.len() {
        let mut rem = out_idx;
        for d in 0..rank {
            coords[d] = rem / out_strides[d];
            rem %= out_strides[d];
        }
        coords.swap(d0, d1);
        let mut in_idx = 0;
        for d in 0..rank {
            in_idx += coords[d] * in_strides[d];
        }
        out[out_idx] = data[in_idx];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;

    /// Independent triple-loop oracle, deliberately naive.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                out.set(&[i, j], s);
            }
        }
        out
    }

    fn rng_tensor(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g.constant(&Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = g.constant(&Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = g.matmul(i2, m).unwrap();
        assert_eq!(g.data(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projector_selects_row() {
        let mut g = Graph::new();
        let p = g.constant(&Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let m = g.constant(&Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let out = g.matmul(p, m).unwrap();
        assert_eq!(g.data(out), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let a = rng_tensor(&[3, 4], 1);
        let b = rng_tensor(&[4, 2], 2);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(&a), g.constant(&b));
        let out = g.matmul(va, vb).unwrap();
        let expect = matmul_oracle(&a, &b);
        assert!(g.tensor(out).max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_batched_matches_per_slice_oracle() {
        let a = rng_tensor(&[2, 3, 4], 3);
        let b = rng_tensor(&[2, 4, 5], 4);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(&a), g.constant(&b));
        let out = g.matmul(va, vb).unwrap();
        for bi in 0..2 {
            let asl = Tensor::new(vec![3, 4], a.data()[bi * 12..(bi + 1) * 12].to_vec()).unwrap();
            let bsl = Tensor::new(vec![4, 5], b.data()[bi * 20..(bi + 1) * 20].to_vec()).unwrap();
            let expect = matmul_oracle(&asl, &bsl);
            let got = &g.data(out)[bi * 15..(bi + 1) * 15];
            for (x, y) in got.iter().zip(expect.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::zeros(&[2, 3]));
        let b = g.constant(&Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn softmax_uniform_logits() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::from_vec(vec![0.0, 0.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        for v in g.data(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_stabilized_no_overflow() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::from_vec(vec![1000.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        let d = g.data(y);
        assert!((d[0] - 1.0).abs() < 1e-12 && d[1] < 1e-12);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_is_probability_simplex() {
        let x = rng_tensor(&[4, 7], 9);
        let mut g = Graph::new();
        let v = g.constant(&x);
        let y = g.softmax(v, 1).unwrap();
        let d = g.data(y);
        for r in 0..4 {
            let row = &d[r * 7..(r + 1) * 7];
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_gradient_matches_fd() {
        let x = rng_tensor(&[3, 5], 11);
        let w = rng_tensor(&[3, 5], 12); // fixed projection so loss touches all outputs
        let err = finite_difference_check(
            |g, params| {
                let y = g.softmax(params[0], 1)?;
                let wv = g.constant(&w);
                let p = g.mul(y, wv)?;
                g.sum(p)
            },
            &[x],
            1e-4,
            128,
            7,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn layer_norm_constant_row_zero_before_affine() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::full(&[1, 4], 3.5));
        let gain = g.constant(&Tensor::full(&[4], 1.0));
        let bias = g.constant(&Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for v in g.data(y) {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_zero_mean_per_token() {
        let x = rng_tensor(&[6, 8], 21);
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let gain = g.constant(&Tensor::full(&[8], 1.0));
        let bias = g.constant(&Tensor::zeros(&[8]));
        let y = g.layer_norm(xv, gain, bias, 1e-5).unwrap();
        let d = g.data(y);
        for r in 0..6 {
            let mu: f64 = d[r * 8..(r + 1) * 8].iter().sum::<f64>() / 8.0;
            assert!(mu.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_gradient_matches_fd() {
        let x = rng_tensor(&[4, 6], 31);
        let gain = rng_tensor(&[6], 32);
        let bias = rng_tensor(&[6], 33);
        let w = rng_tensor(&[4, 6], 34);
        let err = finite_difference_check(
            |g, params| {
                let y = g.layer_norm(params[0], params[1], params[2], 1e-5)?;
                let wv = g.constant(&w);
                let p = g.mul(y, wv)?;
                g.sum(p)
            },
            &[x, gain, bias],
            1e-4,
            200,
            13,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn silu_gradient_matches_fd() {
        let x = rng_tensor(&[5, 3], 41);
        let err = finite_difference_check(
            |g, params| {
                let y = g.silu(params[0])?;
                g.sum(y)
            },
            &[x],
            1e-4,
            64,
            17,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn concat_split_roundtrip_exact() {
        let a = rng_tensor(&[3, 4], 51);
        let b = rng_tensor(&[2, 4], 52);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(&a), g.constant(&b));
        let cat = g.concat(&[va, vb], 0).unwrap();
        let parts = g.split(cat, 0, &[3, 2]).unwrap();
        assert_eq!(g.data(parts[0]), a.data());
        assert_eq!(g.data(parts[1]), b.data());
    }

    #[test]
    fn concat_axis1_blocks() {
        let a = rng_tensor(&[2, 3], 53);
        let b = rng_tensor(&[2, 1], 54);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(&a), g.constant(&b));
        let cat = g.concat(&[va, vb], 1).unwrap();
        assert_eq!(g.shape(cat), &[2, 4]);
        let d = g.data(cat);
        assert_eq!(&d[0..3], &a.data()[0..3]);
        assert_eq!(d[3], b.data()[0]);
        assert_eq!(&d[4..7], &a.data()[3..6]);
        assert_eq!(d[7], b.data()[1]);
    }

    #[test]
    fn mse_self_is_zero() {
        let a = rng_tensor(&[4, 4], 61);
        let mut g = Graph::new();
        let v = g.constant(&a);
        let l = g.mse(v, v).unwrap();
        assert_eq!(g.data(l), &[0.0]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let a = rng_tensor(&[3, 2], 71);
        let mut g = Graph::new();
        let v = g.leaf(&a, true);
        let l = g.sum(v).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(v).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_nonscalar_loss() {
        let a = rng_tensor(&[3, 2], 72);
        let mut g = Graph::new();
        let v = g.leaf(&a, true);
        assert!(g.backward(v).is_err());
    }

    #[test]
    fn backward_linear_regression_matches_fd() {
        let w = rng_tensor(&[3, 2], 81);
        let x = rng_tensor(&[4, 3], 82);
        let y = rng_tensor(&[4, 2], 83);
        let err = finite_difference_check(
            |g, params| {
                let xv = g.constant(&x);
                let yv = g.constant(&y);
                let pred = g.matmul(xv, params[0])?;
                g.mse(pred, yv)
            },
            &[w],
            1e-4,
            64,
            19,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn backward_accumulates_across_fanout() {
        // loss = sum(x*x): grad should be 2x (x used twice by mul)
        let x = rng_tensor(&[5], 91);
        let mut g = Graph::new();
        let v = g.leaf(&x, true);
        let sq = g.mul(v, v).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(v).unwrap();
        for (gv, xv) in grad.data().iter().zip(x.data()) {
            assert!((gv - 2.0 * xv).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_deterministic_bitwise() {
        let run = || {
            let w = rng_tensor(&[4, 4], 101);
            let x = rng_tensor(&[2, 4], 102);
            let mut g = Graph::new();
            let wv = g.leaf(&w, true);
            let xv = g.constant(&x);
            let h = g.matmul(xv, wv).unwrap();
            let s = g.silu(h).unwrap();
            let l = g.sum(s).unwrap();
            g.backward(l).unwrap();
            g.grad(wv).unwrap().data().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn finite_guard_catches_nonfinite() {
        let mut g = Graph::new();
        g.set_check_finite(true);
        let big = g.constant(&Tensor::full(&[2], 1e308));
        let r = g.add(big, big);
        assert!(r.is_err());
    }

    #[test]
    fn suffix_broadcast_add_and_grad() {
        let x = rng_tensor(&[3, 4], 111);
        let b = rng_tensor(&[4], 112);
        let err = finite_difference_check(
            |g, params| {
                let y = g.add(params[0], params[1])?;
                let sq = g.mul(y, y)?;
                g.sum(sq)
            },
            &[x, b],
            1e-4,
            64,
            23,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn swap_axes_roundtrip() {
        let a = rng_tensor(&[2, 3, 4], 121);
        let mut g = Graph::new();
        let v = g.constant(&a);
        let s = g.swap_axes(v, 0, 2).unwrap();
        assert_eq!(g.shape(s), &[4, 3, 2]);
        let back = g.swap_axes(s, 0, 2).unwrap();
        assert_eq!(g.data(back), a.data());
    }

    #[test]
    fn rope_gradient_matches_fd() {
        let x = rng_tensor(&[3, 2, 4], 131);
        let cos: Vec<f64> = (0..6).map(|i| (i as f64 * 0.3).cos()).collect();
        let sin: Vec<f64> = (0..6).map(|i| (i as f64 * 0.3).sin()).collect();
        let w = rng_tensor(&[3, 2, 4], 132);
        let err = finite_difference_check(
            |g, params| {
                let y = g.rope(params[0], &cos, &sin)?;
                let wv = g.constant(&w);
                let p = g.mul(y, wv)?;
                g.sum(p)
            },
            &[x],
            1e-4,
            64,
            29,
        )
        .unwrap();
        assert!(err < 1e-8, "rope is linear; rel err {err}");
    }

    #[test]
    fn corrupted_silu_backward_detected() {
        let x = rng_tensor(&[4, 4], 141);
        let err = finite_difference_check(
            |g, params| {
                g.debug_corrupt_silu_backward(true);
                let y = g.silu(params[0])?;
                g.sum(y)
            },
            &[x],
            1e-4,
            64,
            31,
        )
        .unwrap();
        assert!(err > 1e-2, "corruption must be detected, got {err}");
    }
}
