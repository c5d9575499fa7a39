use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{offset, BoolTensor, Tensor};
use super::{NumericsError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Score offset added to masked attention positions before softmax.
pub const MASK_NEG: f64 = -1e9;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    AddBias { a: usize, bias: usize },
    MaskRows { a: usize, mask: Vec<bool> },
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Bmm { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, transpose_b: bool },
    Reshape { a: usize },
    Permute { a: usize, axes: Vec<usize> },
    Softmax { a: usize, axis: usize },
    /// Softmax over the last axis with boolean admissibility mask; rows with
    /// no admissible entry produce all-zero weights.
    MaskedSoftmax { a: usize, dead_rows: Vec<bool> },
    LayerNorm { a: usize, gain: usize, bias: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    ConvTemporal { x: usize, kernel: usize, t: usize, n: usize, c_in: usize, c_out: usize, k: usize },
    DepthwiseTemporal { x: usize, kernel: usize, t: usize, n: usize, c: usize, k: usize, causal: bool },
    Dropout { a: usize, mult: Vec<f64> },
    Relu { a: usize },
    SumAll { a: usize },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Computation graph: an append-only arena of nodes in topological order.
///
/// One tape serves one forward/backward round; build a fresh tape per scene.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    all_masked_rows: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false, all_masked_rows: 0 }
    }

    /// Registers a tensor as a graph leaf, snapshotting its current values.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Non-differentiable input data.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::Invalid {
                op: "constant",
                msg: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Number of attention rows whose admissible key set was empty.
    pub fn all_masked_rows(&self) -> usize {
        self.all_masked_rows
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, op, needs_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── Elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value: Vec<f64> =
            self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, Op::Add { a: a.0, b: b.0 }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value: Vec<f64> =
            self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x - y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, Op::Sub { a: a.0, b: b.0 }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value: Vec<f64> =
            self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x * y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, Op::Mul { a: a.0, b: b.0 }, needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        let needs = self.needs(a);
        self.push(self.nodes[a.0].shape.clone(), value, Op::Scale { a: a.0, c }, needs)
    }

    /// Broadcast-adds a vector over the last dimension.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let d = *self.nodes[a.0].shape.last().unwrap_or(&0);
        if self.nodes[bias.0].shape != [d] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[bias.0].shape.clone(),
            });
        }
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + self.nodes[bias.0].value[i % d])
            .collect();
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, Op::AddBias { a: a.0, bias: bias.0 }, needs))
    }

    /// Zeroes whole trailing-dimension rows where `mask` is false. The mask
    /// shape must equal the input shape minus its last dimension.
    pub fn mask_rows(&mut self, a: Var, mask: &BoolTensor) -> Result<Var> {
        let shape = &self.nodes[a.0].shape;
        if mask.shape() != &shape[..shape.len() - 1] {
            return Err(NumericsError::ShapeMismatch {
                op: "mask_rows",
                lhs: shape.clone(),
                rhs: mask.shape().to_vec(),
            });
        }
        let d = *shape.last().unwrap();
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| if mask.data()[i / d] { *x } else { 0.0 })
            .collect();
        let needs = self.needs(a);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            value,
            Op::MaskRows { a: a.0, mask: mask.data().to_vec() },
            needs,
        ))
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = matmul_raw(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], value, Op::Matmul { a: a.0, b: b.0, m, k, n }, needs))
    }

    /// Batched matmul over the leading dimension. With `transpose_b` the
    /// second operand is read as [batch, n, k] and multiplied transposed.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let mismatch = || NumericsError::ShapeMismatch { op: "bmm", lhs: sa.clone(), rhs: sb.clone() };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b {
            if sb[2] != k {
                return Err(mismatch());
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(mismatch());
            }
            sb[2]
        };
        let mut value = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let av = &self.nodes[a.0].value[bi * m * k..(bi + 1) * m * k];
            let bv = if transpose_b {
                &self.nodes[b.0].value[bi * n * k..(bi + 1) * n * k]
            } else {
                &self.nodes[b.0].value[bi * k * n..(bi + 1) * k * n]
            };
            let out = &mut value[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        let bvv = if transpose_b { bv[j * k + p] } else { bv[p * n + j] };
                        s += av[i * k + p] * bvv;
                    }
                    out[i * n + j] = s;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            vec![batch, m, n],
            value,
            Op::Bmm { a: a.0, b: b.0, batch, m, k, n, transpose_b },
            needs,
        ))
    }

    // ── Shape ───────────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].value.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape,
            });
        }
        let value = self.nodes[a.0].value.clone();
        let needs = self.needs(a);
        Ok(self.push(shape, value, Op::Reshape { a: a.0 }, needs))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return Err(NumericsError::Invalid {
                op: "permute",
                msg: format!("axes {:?} are not a permutation of 0..{}", axes, shape.len()),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let value = permute_raw(&self.nodes[a.0].value, &shape, axes);
        let needs = self.needs(a);
        Ok(self.push(out_shape, value, Op::Permute { a: a.0, axes: axes.to_vec() }, needs))
    }

    // ── Nonlinear ───────────────────────────────────────────────────────

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(NumericsError::Invalid {
                op: "softmax",
                msg: format!("axis {} out of range for shape {:?}", axis, shape),
            });
        }
        let mut value = self.nodes[a.0].value.clone();
        for_each_lane(&shape, axis, |start, stride, len| {
            softmax_lane(&mut value, start, stride, len);
        });
        let needs = self.needs(a);
        Ok(self.push(shape, value, Op::Softmax { a: a.0, axis }, needs))
    }

    /// Softmax over the last axis where only `mask`-admissible entries may
    /// receive weight. Masked scores get [`MASK_NEG`] added before the
    /// (stabilized) softmax; rows with no admissible entry yield all zeros
    /// and are tallied in [`Tape::all_masked_rows`].
    pub fn masked_softmax(&mut self, a: Var, mask: &BoolTensor) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        if mask.shape() != shape.as_slice() {
            return Err(NumericsError::ShapeMismatch {
                op: "masked_softmax",
                lhs: shape,
                rhs: mask.shape().to_vec(),
            });
        }
        let d = *shape.last().unwrap();
        let rows = self.nodes[a.0].value.len() / d;
        let mut value = Vec::with_capacity(rows * d);
        let mut dead_rows = vec![false; rows];
        for r in 0..rows {
            let scores = &self.nodes[a.0].value[r * d..(r + 1) * d];
            let admissible = &mask.data()[r * d..(r + 1) * d];
            if admissible.iter().any(|&m| m) {
                let adjusted: Vec<f64> = scores
                    .iter()
                    .zip(admissible)
                    .map(|(&s, &m)| if m { s } else { s + MASK_NEG })
                    .collect();
                let max = adjusted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = adjusted.iter().map(|&s| (s - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                value.extend(exps.iter().map(|e| e / sum));
            } else {
                dead_rows[r] = true;
                self.all_masked_rows += 1;
                value.extend(std::iter::repeat_n(0.0, d));
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            self.nodes[a.0].shape.clone(),
            value,
            Op::MaskedSoftmax { a: a.0, dead_rows },
            needs,
        ))
    }

    /// Normalizes over the last dimension to zero mean / unit variance, then
    /// applies the affine transform `gain * xhat + bias`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        let d = *shape.last().unwrap();
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if self.nodes[p.0].shape != [d] {
                return Err(NumericsError::Invalid {
                    op: "layer_norm",
                    msg: format!(
                        "{} shape {:?} does not match normalized dim {}",
                        name, self.nodes[p.0].shape, d
                    ),
                });
            }
        }
        let rows = self.nodes[a.0].value.len() / d;
        let mut value = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let x = &self.nodes[a.0].value[r * d..(r + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for i in 0..d {
                let h = (x[i] - mean) * istd;
                xhat[r * d + i] = h;
                value[r * d + i] =
                    self.nodes[gain.0].value[i] * h + self.nodes[bias.0].value[i];
            }
        }
        let needs = self.needs(a) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            shape,
            value,
            Op::LayerNorm { a: a.0, gain: gain.0, bias: bias.0, xhat, inv_std },
            needs,
        ))
    }

    /// Convolution along the temporal (first) axis of a [T, N, C] tensor with
    /// kernel [K, 1, C, C'] and symmetric zero padding; the agent axis is
    /// never mixed.
    pub fn conv_temporal(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (sx, sk) = (&self.nodes[x.0].shape, &self.nodes[kernel.0].shape);
        if sx.len() != 3 || sk.len() != 4 || sk[1] != 1 || sk[2] != sx[2] {
            return Err(NumericsError::ShapeMismatch {
                op: "conv_temporal",
                lhs: sx.clone(),
                rhs: sk.clone(),
            });
        }
        let (t, n, c_in) = (sx[0], sx[1], sx[2]);
        let (k, c_out) = (sk[0], sk[3]);
        if k % 2 == 0 {
            return Err(NumericsError::Invalid {
                op: "conv_temporal",
                msg: format!("kernel size {} must be odd for same-padding", k),
            });
        }
        let pad = (k - 1) / 2;
        let xv = &self.nodes[x.0].value;
        let kv = &self.nodes[kernel.0].value;
        let mut value = vec![0.0; t * n * c_out];
        for ti in 0..t {
            for ni in 0..n {
                for co in 0..c_out {
                    let mut s = 0.0;
                    for ki in 0..k {
                        let src = ti as isize + ki as isize - pad as isize;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let base = (src as usize * n + ni) * c_in;
                        for ci in 0..c_in {
                            s += xv[base + ci] * kv[((ki * c_in) + ci) * c_out + co];
                        }
                    }
                    value[(ti * n + ni) * c_out + co] = s;
                }
            }
        }
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(
            vec![t, n, c_out],
            value,
            Op::ConvTemporal { x: x.0, kernel: kernel.0, t, n, c_in, c_out, k },
            needs,
        ))
    }

    /// Per-channel temporal convolution of a [T, N, C] tensor with kernel
    /// [K, C]; channel c of the output only sees channel c of the input.
    /// Symmetric zero padding preserves T.
    pub fn depthwise_temporal(&mut self, x: Var, kernel: Var) -> Result<Var> {
        self.depthwise_impl(x, kernel, false)
    }

    /// Causally padded variant: output at step t reads only steps <= t, so
    /// masked decoding stays autoregressive through the convolution.
    pub fn depthwise_temporal_causal(&mut self, x: Var, kernel: Var) -> Result<Var> {
        self.depthwise_impl(x, kernel, true)
    }

    fn depthwise_impl(&mut self, x: Var, kernel: Var, causal: bool) -> Result<Var> {
        let (sx, sk) = (&self.nodes[x.0].shape, &self.nodes[kernel.0].shape);
        if sx.len() != 3 || sk.len() != 2 || sk[1] != sx[2] {
            return Err(NumericsError::ShapeMismatch {
                op: "depthwise_temporal",
                lhs: sx.clone(),
                rhs: sk.clone(),
            });
        }
        let (t, n, c) = (sx[0], sx[1], sx[2]);
        let k = sk[0];
        if !causal && k % 2 == 0 {
            return Err(NumericsError::Invalid {
                op: "depthwise_temporal",
                msg: format!("kernel size {} must be odd for same-padding", k),
            });
        }
        let shift = depthwise_shift(k, causal);
        let xv = &self.nodes[x.0].value;
        let kv = &self.nodes[kernel.0].value;
        let mut value = vec![0.0; t * n * c];
        for ti in 0..t {
            for ni in 0..n {
                for ci in 0..c {
                    let mut s = 0.0;
                    for ki in 0..k {
                        let src = ti as isize + ki as isize - shift;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        s += xv[(src as usize * n + ni) * c + ci] * kv[ki * c + ci];
                    }
                    value[(ti * n + ni) * c + ci] = s;
                }
            }
        }
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(
            vec![t, n, c],
            value,
            Op::DepthwiseTemporal { x: x.0, kernel: kernel.0, t, n, c, k, causal },
            needs,
        ))
    }

    /// Inverted dropout: zeroes each element with probability `p` in training
    /// mode and scales survivors by 1/(1-p); evaluation mode is the identity
    /// and consumes no randomness.
    pub fn dropout(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Invalid {
                op: "dropout",
                msg: format!("probability {} outside [0, 1)", p),
            });
        }
        if !training || p == 0.0 {
            let value = self.nodes[a.0].value.clone();
            let needs = self.needs(a);
            let len = value.len();
            return Ok(self.push(
                self.nodes[a.0].shape.clone(),
                value,
                Op::Dropout { a: a.0, mult: vec![1.0; len] },
                needs,
            ));
        }
        let keep = 1.0 / (1.0 - p);
        let mult: Vec<f64> = (0..self.nodes[a.0].value.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value: Vec<f64> =
            self.nodes[a.0].value.iter().zip(&mult).map(|(x, m)| x * m).collect();
        let needs = self.needs(a);
        Ok(self.push(self.nodes[a.0].shape.clone(), value, Op::Dropout { a: a.0, mult }, needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x.max(0.0)).collect();
        let needs = self.needs(a);
        self.push(self.nodes[a.0].shape.clone(), value, Op::Relu { a: a.0 }, needs)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let needs = self.needs(a);
        self.push(vec![1], vec![s], Op::SumAll { a: a.0 }, needs)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse-traverses the graph from a scalar loss, accumulating
    /// d(loss)/d(leaf) into every leaf that requires gradients. Each tape
    /// supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(NumericsError::GraphConsumed);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.consumed = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = self.nodes[i].grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    self.acc(a, &g);
                    self.acc(b, &g);
                }
                Op::Sub { a, b } => {
                    self.acc(a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.acc(b, &neg);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> =
                        g.iter().zip(&self.nodes[b].value).map(|(gv, bv)| gv * bv).collect();
                    let db: Vec<f64> =
                        g.iter().zip(&self.nodes[a].value).map(|(gv, av)| gv * av).collect();
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::Scale { a, c } => {
                    let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                    self.acc(a, &da);
                }
                Op::AddBias { a, bias } => {
                    self.acc(a, &g);
                    let d = self.nodes[bias].value.len();
                    let mut db = vec![0.0; d];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % d] += gv;
                    }
                    self.acc(bias, &db);
                }
                Op::MaskRows { a, mask } => {
                    let d = self.nodes[i].value.len() / mask.len();
                    let da: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(j, gv)| if mask[j / d] { *gv } else { 0.0 })
                        .collect();
                    self.acc(a, &da);
                }
                Op::Matmul { a, b, m, k, n } => {
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    let bv = &self.nodes[b].value;
                    let av = &self.nodes[a].value;
                    let mut da = vec![0.0; m * k];
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i2 * n + j] * bv[p * n + j];
                            }
                            da[i2 * k + p] = s;
                        }
                    }
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i2 in 0..m {
                                s += av[i2 * k + p] * g[i2 * n + j];
                            }
                            db[p * n + j] = s;
                        }
                    }
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::Bmm { a, b, batch, m, k, n, transpose_b } => {
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    let mut da = vec![0.0; av.len()];
                    let mut db = vec![0.0; bv.len()];
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let as_ = &av[bi * m * k..(bi + 1) * m * k];
                        if transpose_b {
                            // out = A·Bᵀ with B: [n, k] ⇒ dA = G·B, dB = Gᵀ·A
                            let bs = &bv[bi * n * k..(bi + 1) * n * k];
                            let das = &mut da[bi * m * k..(bi + 1) * m * k];
                            for i2 in 0..m {
                                for p in 0..k {
                                    let mut s = 0.0;
                                    for j in 0..n {
                                        s += gs[i2 * n + j] * bs[j * k + p];
                                    }
                                    das[i2 * k + p] += s;
                                }
                            }
                            let dbs = &mut db[bi * n * k..(bi + 1) * n * k];
                            for j in 0..n {
                                for p in 0..k {
                                    let mut s = 0.0;
                                    for i2 in 0..m {
                                        s += gs[i2 * n + j] * as_[i2 * k + p];
                                    }
                                    dbs[j * k + p] += s;
                                }
                            }
                        } else {
                            let bs = &bv[bi * k * n..(bi + 1) * k * n];
                            let das = &mut da[bi * m * k..(bi + 1) * m * k];
                            for i2 in 0..m {
                                for p in 0..k {
                                    let mut s = 0.0;
                                    for j in 0..n {
                                        s += gs[i2 * n + j] * bs[p * n + j];
                                    }
                                    das[i2 * k + p] += s;
                                }
                            }
                            let dbs = &mut db[bi * k * n..(bi + 1) * k * n];
                            for p in 0..k {
                                for j in 0..n {
                                    let mut s = 0.0;
                                    for i2 in 0..m {
                                        s += as_[i2 * k + p] * gs[i2 * n + j];
                                    }
                                    dbs[p * n + j] += s;
                                }
                            }
                        }
                    }
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
                Op::Reshape { a } => {
                    self.acc(a, &g);
                }
                Op::Permute { a, axes } => {
                    let mut inverse = vec![0usize; axes.len()];
                    for (j, &ax) in axes.iter().enumerate() {
                        inverse[ax] = j;
                    }
                    let da = permute_raw(&g, &self.nodes[i].shape, &inverse);
                    self.acc(a, &da);
                }
                Op::Softmax { a, axis } => {
                    let y = self.nodes[i].value.clone();
                    let shape = self.nodes[i].shape.clone();
                    let mut da = vec![0.0; y.len()];
                    for_each_lane(&shape, axis, |start, stride, len| {
                        let mut dot = 0.0;
                        for j in 0..len {
                            let idx = start + j * stride;
                            dot += g[idx] * y[idx];
                        }
                        for j in 0..len {
                            let idx = start + j * stride;
                            da[idx] = y[idx] * (g[idx] - dot);
                        }
                    });
                    self.acc(a, &da);
                }
                Op::MaskedSoftmax { a, dead_rows } => {
                    let y = &self.nodes[i].value;
                    let d = y.len() / dead_rows.len();
                    let mut da = vec![0.0; y.len()];
                    for (r, dead) in dead_rows.iter().enumerate() {
                        if *dead {
                            continue;
                        }
                        let mut dot = 0.0;
                        for j in 0..d {
                            dot += g[r * d + j] * y[r * d + j];
                        }
                        for j in 0..d {
                            da[r * d + j] = y[r * d + j] * (g[r * d + j] - dot);
                        }
                    }
                    self.acc(a, &da);
                }
                Op::LayerNorm { a, gain, bias, xhat, inv_std } => {
                    let d = self.nodes[gain].value.len();
                    let rows = xhat.len() / d;
                    let gainv = self.nodes[gain].value.clone();
                    let mut da = vec![0.0; xhat.len()];
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    for r in 0..rows {
                        let mut mean_gdy = 0.0;
                        let mut mean_gdy_xhat = 0.0;
                        for j in 0..d {
                            let gdy = gainv[j] * g[r * d + j];
                            mean_gdy += gdy;
                            mean_gdy_xhat += gdy * xhat[r * d + j];
                            dgain[j] += g[r * d + j] * xhat[r * d + j];
                            dbias[j] += g[r * d + j];
                        }
                        mean_gdy /= d as f64;
                        mean_gdy_xhat /= d as f64;
                        for j in 0..d {
                            let gdy = gainv[j] * g[r * d + j];
                            da[r * d + j] =
                                (gdy - mean_gdy - xhat[r * d + j] * mean_gdy_xhat) * inv_std[r];
                        }
                    }
                    self.acc(a, &da);
                    self.acc(gain, &dgain);
                    self.acc(bias, &dbias);
                }
                Op::ConvTemporal { x, kernel, t, n, c_in, c_out, k } => {
                    let pad = (k - 1) / 2;
                    let xv = self.nodes[x].value.clone();
                    let kv = self.nodes[kernel].value.clone();
                    let mut dx = vec![0.0; xv.len()];
                    let mut dk = vec![0.0; kv.len()];
                    for ti in 0..t {
                        for ni in 0..n {
                            for co in 0..c_out {
                                let gv = g[(ti * n + ni) * c_out + co];
                                if gv == 0.0 {
                                    continue;
                                }
                                for ki in 0..k {
                                    let src = ti as isize + ki as isize - pad as isize;
                                    if src < 0 || src >= t as isize {
                                        continue;
                                    }
                                    let base = (src as usize * n + ni) * c_in;
                                    for ci in 0..c_in {
                                        dx[base + ci] += gv * kv[((ki * c_in) + ci) * c_out + co];
                                        dk[((ki * c_in) + ci) * c_out + co] += gv * xv[base + ci];
                                    }
                                }
                            }
                        }
                    }
                    self.acc(x, &dx);
                    self.acc(kernel, &dk);
                }
                Op::DepthwiseTemporal { x, kernel, t, n, c, k, causal } => {
                    let shift = depthwise_shift(k, causal);
                    let xv = self.nodes[x].value.clone();
                    let kv = self.nodes[kernel].value.clone();
                    let mut dx = vec![0.0; xv.len()];
                    let mut dk = vec![0.0; kv.len()];
                    for ti in 0..t {
                        for ni in 0..n {
                            for ci in 0..c {
                                let gv = g[(ti * n + ni) * c + ci];
                                if gv == 0.0 {
                                    continue;
                                }
                                for ki in 0..k {
                                    let src = ti as isize + ki as isize - shift;
                                    if src < 0 || src >= t as isize {
                                        continue;
                                    }
                                    dx[(src as usize * n + ni) * c + ci] += gv * kv[ki * c + ci];
                                    dk[ki * c + ci] += gv * xv[(src as usize * n + ni) * c + ci];
                                }
                            }
                        }
                    }
                    self.acc(x, &dx);
                    self.acc(kernel, &dk);
                }
                Op::Dropout { a, mult } => {
                    let da: Vec<f64> = g.iter().zip(&mult).map(|(gv, m)| gv * m).collect();
                    self.acc(a, &da);
                }
                Op::Relu { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a].value)
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    self.acc(a, &da);
                }
                Op::SumAll { a } => {
                    let da = vec![g[0]; self.nodes[a].value.len()];
                    self.acc(a, &da);
                }
            }
        }
        Ok(())
    }

    fn acc(&mut self, target: usize, contribution: &[f64]) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut self.nodes[target].grad {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(contribution) {
                    *b += v;
                }
            }
            None => self.nodes[target].grad = Some(contribution.to_vec()),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }
}

/// softmax(Q·Kᵀ/√d_k)·V for 2-D operands Q: [nq, dk], K: [nk, dk],
/// V: [nk, dv]; `mask` (shape [nq, nk]) marks admissible keys per query.
pub fn scaled_dot_product_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&BoolTensor>,
) -> Result<Var> {
    let (sq, sk, sv) = (
        tape.shape(q).to_vec(),
        tape.shape(k).to_vec(),
        tape.shape(v).to_vec(),
    );
    if sq.len() != 2 || sk.len() != 2 || sq[1] != sk[1] {
        return Err(NumericsError::ShapeMismatch { op: "attention", lhs: sq, rhs: sk });
    }
    if sv.len() != 2 || sv[0] != sk[0] {
        return Err(NumericsError::ShapeMismatch { op: "attention", lhs: sk, rhs: sv });
    }
    let d_k = sq[1];
    let q3 = tape.reshape(q, vec![1, sq[0], sq[1]])?;
    let k3 = tape.reshape(k, vec![1, sk[0], sk[1]])?;
    let v3 = tape.reshape(v, vec![1, sv[0], sv[1]])?;
    let scores = tape.bmm(q3, k3, true)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = match mask {
        Some(m) => {
            let m3 = BoolTensor::new(vec![1, sq[0], sk[0]], m.data().to_vec())?;
            tape.masked_softmax(scaled, &m3)?
        }
        None => {
            let full = BoolTensor::filled(vec![1, sq[0], sk[0]], true);
            tape.masked_softmax(scaled, &full)?
        }
    };
    let out = tape.bmm(weights, v3, false)?;
    tape.reshape(out, vec![sq[0], sv[1]])
}

/// Depthwise temporal convolution followed by a pointwise channel mix.
/// `depthwise`: [K, C], `pointwise`: [C, C'].
pub fn separable_conv(tape: &mut Tape, x: Var, depthwise: Var, pointwise: Var) -> Result<Var> {
    separable_impl(tape, x, depthwise, pointwise, false)
}

/// Separable convolution with causal temporal padding (step t sees only
/// steps <= t).
pub fn separable_conv_causal(
    tape: &mut Tape,
    x: Var,
    depthwise: Var,
    pointwise: Var,
) -> Result<Var> {
    separable_impl(tape, x, depthwise, pointwise, true)
}

fn separable_impl(
    tape: &mut Tape,
    x: Var,
    depthwise: Var,
    pointwise: Var,
    causal: bool,
) -> Result<Var> {
    let sx = tape.shape(x).to_vec();
    let sp = tape.shape(pointwise).to_vec();
    if sp.len() != 2 || sp[0] != sx[2] {
        return Err(NumericsError::ShapeMismatch { op: "separable_conv", lhs: sx, rhs: sp });
    }
    let dw = if causal {
        tape.depthwise_temporal_causal(x, depthwise)?
    } else {
        tape.depthwise_temporal(x, depthwise)?
    };
    let flat = tape.reshape(dw, vec![sx[0] * sx[1], sx[2]])?;
    let mixed = tape.matmul(flat, pointwise)?;
    tape.reshape(mixed, vec![sx[0], sx[1], sp[1]])
}

fn depthwise_shift(k: usize, causal: bool) -> isize {
    if causal {
        k as isize - 1
    } else {
        ((k - 1) / 2) as isize
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn permute_raw(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let ndim = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
    let mut out = vec![0.0; data.len()];
    let mut coords = vec![0usize; ndim];
    for (flat, &v) in data.iter().enumerate() {
        let mut rem = flat;
        for d in (0..ndim).rev() {
            coords[d] = rem % shape[d];
            rem /= shape[d];
        }
        let out_coords: Vec<usize> = axes.iter().map(|&ax| coords[ax]).collect();
        out[offset(&out_shape, &out_coords)] = v;
    }
    out
}

/// Calls `f(start, stride, len)` for every 1-D lane along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for inner in 0..stride {
            f(o * len * stride + inner, stride, len);
        }
    }
}

fn softmax_lane(data: &mut [f64], start: usize, stride: usize, len: usize) {
    let mut max = f64::NEG_INFINITY;
    for j in 0..len {
        max = max.max(data[start + j * stride]);
    }
    let mut sum = 0.0;
    for j in 0..len {
        let e = (data[start + j * stride] - max).exp();
        data[start + j * stride] = e;
        sum += e;
    }
    for j in 0..len {
        data[start + j * stride] /= sum;
    }
}
