//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so [`Graph::backward`] walks the tape in
//! reverse and every node's gradient is complete before it is propagated.

use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    L1,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    },
    AvgPool(Var, usize),
    Permute021(Var),
    Reshape(Var),
    MulConst(Var, Tensor),
    RowSelect {
        x: Var,
        fill: Var,
        mask: Vec<bool>,
    },
    BroadcastRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    MaskedLoss {
        pred: Var,
        target: Tensor,
        mask: Vec<bool>,
        kind: LossKind,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const LN_EPS: f64 = 1e-5;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::shape(op, detail)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf without gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn binary(&mut self, op: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::from_parts(x.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |p, q| p + q)?;
        let n = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), n))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |p, q| p - q)?;
        let n = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), n))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |p, q| p * q)?;
        let n = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), n))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|v| v * s);
        let n = self.needs(a);
        self.push(t, Op::Scale(a, s), n)
    }

    /// `x[..., c] + b[c]`
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(b).len() != c {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} for input {:?}", self.shape(b), self.shape(x)),
            ));
        }
        let mut t = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for row in t.data_mut().chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        let n = self.needs(x) || self.needs(b);
        Ok(self.push(t, Op::AddBias(x, b), n))
    }

    fn dims2(&self, op: &str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    /// `a[m,k] * b[k,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let need = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), need))
    }

    /// `a[m,k] * b[n,k]^T`, the layout of a linear layer with `[out, in]` weights.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_bt", a)?;
        let (n, k2) = self.dims2("matmul_bt", b)?;
        if k != k2 {
            return Err(shape_err("matmul_bt", format!("[{m},{k}] x [{n},{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let need = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulBt(a, b), need))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", a)?;
        let t = transpose(self.value(a).data(), r, c);
        let n = self.needs(a);
        Ok(self.push(Tensor::from_parts(vec![c, r], t), Op::Transpose(a), n))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        let n = self.needs(a);
        self.push(t, Op::Gelu(a), n)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(shape_err(
                "layer_norm",
                format!("affine size {} for width {d}", self.value(gamma).len()),
            ));
        }
        let xv = self.value(x);
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        let n = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            n,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = softmax_rows(self.value(x));
        let n = self.needs(x);
        self.push(t, Op::Softmax(x), n)
    }

    /// 1-D convolution. `x: [B, Cin, L]`, `w: [Cout, Cin/groups, K]`,
    /// `b: [Cout]`. Output `[B, Cout, (L + 2p - K) / stride + 1]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let (bsz, cin, len) = match self.shape(x) {
            [b, c, l] => (*b, *c, *l),
            s => return Err(shape_err("conv1d", format!("input must be [B,C,L], got {s:?}"))),
        };
        let (cout, cin_g, k) = match self.shape(w) {
            [o, i, k] => (*o, *i, *k),
            s => return Err(shape_err("conv1d", format!("kernel must be [O,I,K], got {s:?}"))),
        };
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(shape_err(
                "conv1d",
                format!("{cin} input channels, kernel expects {cin_g} per group x {groups} groups"),
            ));
        }
        if stride == 0 || len + 2 * padding < k {
            return Err(shape_err(
                "conv1d",
                format!("length {len} with padding {padding} is shorter than kernel {k}"),
            ));
        }
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(shape_err("conv1d", format!("bias size {} for {cout} outputs", self.value(b).len())));
            }
        }
        let lout = (len + 2 * padding - k) / stride + 1;
        let cout_g = cout / groups;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; bsz * cout * lout];
        for bi in 0..bsz {
            for oc in 0..cout {
                let g = oc / cout_g;
                let orow = &mut out[(bi * cout + oc) * lout..(bi * cout + oc + 1) * lout];
                if let Some(b) = b {
                    let bv = self.nodes[b.0].value.data()[oc];
                    orow.iter_mut().for_each(|o| *o = bv);
                }
                for icl in 0..cin_g {
                    let ic = g * cin_g + icl;
                    let xrow = &xv[(bi * cin + ic) * len..(bi * cin + ic + 1) * len];
                    let wrow = &wv[(oc * cin_g + icl) * k..(oc * cin_g + icl + 1) * k];
                    for (kk, &wk) in wrow.iter().enumerate() {
                        for (t, o) in orow.iter_mut().enumerate() {
                            let pos = (t * stride + kk) as isize - padding as isize;
                            if pos >= 0 && (pos as usize) < len {
                                *o += wk * xrow[pos as usize];
                            }
                        }
                    }
                }
            }
        }
        let n = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Tensor::from_parts(vec![bsz, cout, lout], out),
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
                groups,
            },
            n,
        ))
    }

    /// Average pooling over the last axis with kernel = stride = `k`.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let (b, c, l) = match self.shape(x) {
            [b, c, l] => (*b, *c, *l),
            s => return Err(shape_err("avg_pool", format!("input must be [B,C,L], got {s:?}"))),
        };
        if k == 0 || l < k {
            return Err(shape_err("avg_pool", format!("length {l} shorter than kernel {k}")));
        }
        let lout = l / k;
        let xv = self.value(x).data();
        let mut out = vec![0.0; b * c * lout];
        for r in 0..b * c {
            for t in 0..lout {
                out[r * lout + t] = xv[r * l + t * k..r * l + (t + 1) * k].iter().sum::<f64>() / k as f64;
            }
        }
        let n = self.needs(x);
        Ok(self.push(Tensor::from_parts(vec![b, c, lout], out), Op::AvgPool(x, k), n))
    }

    /// `[B, C, L] -> [B, L, C]`
    pub fn permute021(&mut self, x: Var) -> Result<Var> {
        let (b, c, l) = match self.shape(x) {
            [b, c, l] => (*b, *c, *l),
            s => return Err(shape_err("permute", format!("input must be 3-D, got {s:?}"))),
        };
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(xv.len());
        for bi in 0..b {
            out.extend(transpose(&xv[bi * c * l..(bi + 1) * c * l], c, l));
        }
        let n = self.needs(x);
        Ok(self.push(Tensor::from_parts(vec![b, l, c], out), Op::Permute021(x), n))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let n = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), n))
    }

    /// Elementwise product with a constant tensor (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if c.shape() != self.shape(x) {
            return Err(shape_err("mul_const", format!("{:?} vs {:?}", c.shape(), self.shape(x))));
        }
        let data = self.value(x).data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let t = Tensor::from_parts(c.shape().to_vec(), data);
        let n = self.needs(x);
        Ok(self.push(t, Op::MulConst(x, c), n))
    }

    /// Rows of `fill` where `mask` is set, rows of `x` elsewhere.
    pub fn row_select(&mut self, x: Var, fill: Var, mask: &[bool]) -> Result<Var> {
        self.same_shape("row_select", x, fill)?;
        if self.value(x).rows() != mask.len() {
            return Err(shape_err(
                "row_select",
                format!("{} rows, mask of {}", self.value(x).rows(), mask.len()),
            ));
        }
        let mut t = self.value(x).clone();
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let src = self.nodes[fill.0].value.row(i).to_vec();
            t.row_mut(i).copy_from_slice(&src);
        }
        let n = self.needs(x) || self.needs(fill);
        Ok(self.push(
            t,
            Op::RowSelect {
                x,
                fill,
                mask: mask.to_vec(),
            },
            n,
        ))
    }

    /// Repeat a vector `[d]` as `rows` rows of `[rows, d]`.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Var {
        let src = self.value(v).data().to_vec();
        let d = src.len();
        let data = (0..rows).flat_map(|_| src.iter().copied()).collect();
        let n = self.needs(v);
        self.push(Tensor::from_parts(vec![rows, d], data), Op::BroadcastRows(v), n)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols", x)?;
        if start + len > c {
            return Err(shape_err("slice_cols", format!("cols {start}..{} of {c}", start + len)));
        }
        let xv = self.value(x);
        let data = (0..r).flat_map(|i| xv.row(i)[start..start + len].iter().copied()).collect();
        let n = self.needs(x);
        Ok(self.push(Tensor::from_parts(vec![r, len], data), Op::SliceCols(x, start), n))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims2("concat_cols", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2("concat_cols", p)?;
            if pr != r {
                return Err(shape_err("concat_cols", format!("{pr} rows vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let n = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::from_parts(vec![r, total], data), Op::ConcatCols(parts.to_vec()), n))
    }

    /// Slice `len` entries of the leading axis starting at `start`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {shape:?}", start + len)));
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let n = self.needs(x);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::SliceRows(x, start), n))
    }

    /// Concatenate along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(shape_err("concat_rows", format!("{s:?} vs {first:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = first;
        shape[0] = lead;
        let n = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::from_parts(shape, data), Op::ConcatRows(parts.to_vec()), n))
    }

    /// Mean over rows: `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("mean_rows", x)?;
        let xv = self.value(x);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let n = self.needs(x);
        Ok(self.push(Tensor::from_parts(vec![1, c], out), Op::MeanRows(x), n))
    }

    /// Mean squared or absolute error over the masked rows only. Unmasked
    /// rows of `pred` and `target` are never read.
    pub fn masked_loss(&mut self, pred: Var, target: Tensor, mask: &[bool], kind: LossKind) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err(
                "masked_loss",
                format!("prediction {:?} vs target {:?}", self.shape(pred), target.shape()),
            ));
        }
        let p = self.value(pred);
        if p.rows() != mask.len() {
            return Err(shape_err("masked_loss", format!("{} rows, mask of {}", p.rows(), mask.len())));
        }
        let value = masked_loss_value(p, &target, mask, kind)?;
        let n = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(value),
            Op::MaskedLoss {
                pred,
                target,
                mask: mask.to_vec(),
                kind,
            },
            n,
        ))
    }

    /// Weighted cross-entropy of softmax(`logits`):
    /// `sum_i w_i * -ln p_i[y_i] / sum_i w_i`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let (r, k) = self.dims2("cross_entropy", logits)?;
        if labels.len() != r || weights.len() != r {
            return Err(shape_err("cross_entropy", format!("{r} rows, {} labels", labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: l, classes: k });
        }
        let probs = softmax_rows(self.value(logits));
        let lv = self.value(logits);
        let wsum: f64 = weights.iter().sum();
        let mut total = 0.0;
        for i in 0..r {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += weights[i] * (lse - row[labels[i]]);
        }
        let n = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total / wsum),
            Op::CrossEntropy {
                logits,
                probs: probs.into_data(),
                labels: labels.to_vec(),
                weights: weights.iter().map(|w| w / wsum).collect(),
            },
            n,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = |v: Var, t: Tensor| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, zip_map(&g, bv, |x, y| x * y));
                    acc(*b, zip_map(&g, av, |x, y| x * y));
                }
                Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
                Op::AddBias(x, b) => {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(*b, Tensor::from_parts(self.shape(*b).to_vec(), gb));
                    acc(*x, g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    if self.needs(*a) {
                        let mut ga = vec![0.0; m * k];
                        matmul_bt_acc(g.data(), self.value(*b).data(), &mut ga, m, n, k);
                        acc(*a, Tensor::from_parts(vec![m, k], ga));
                    }
                    if self.needs(*b) {
                        let mut gb = vec![0.0; k * n];
                        matmul_at_acc(self.value(*a).data(), g.data(), &mut gb, m, k, n);
                        acc(*b, Tensor::from_parts(vec![k, n], gb));
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[0];
                    if self.needs(*a) {
                        let mut ga = vec![0.0; m * k];
                        matmul_acc(g.data(), self.value(*b).data(), &mut ga, m, n, k);
                        acc(*a, Tensor::from_parts(vec![m, k], ga));
                    }
                    if self.needs(*b) {
                        let mut gb = vec![0.0; n * k];
                        matmul_at_acc(g.data(), self.value(*a).data(), &mut gb, m, n, k);
                        acc(*b, Tensor::from_parts(vec![n, k], gb));
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                    acc(*a, Tensor::from_parts(vec![r, c], transpose(g.data(), c, r)));
                }
                Op::Gelu(a) => {
                    acc(*a, zip_map(&g, self.value(*a), |gv, x| gv * gelu_grad(x)));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let d = g.cols();
                    let rows = g.rows();
                    let gam = self.value(*gamma).data();
                    let mut gg = vec![0.0; d];
                    let mut gbeta = vec![0.0; d];
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                            gbeta[j] += gr[j];
                            let dh = gr[j] * gam[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        let scale = rstd[r] / d as f64;
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            gx[r * d + j] = scale * (d as f64 * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    acc(*gamma, Tensor::from_parts(self.shape(*gamma).to_vec(), gg));
                    acc(*beta, Tensor::from_parts(self.shape(*beta).to_vec(), gbeta));
                    acc(*x, Tensor::from_parts(g.shape().to_vec(), gx));
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut gx = vec![0.0; y.len()];
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*x, Tensor::from_parts(y.shape().to_vec(), gx));
                }
                Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                    groups,
                } => {
                    let (bsz, cin, len) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                    let (cout, cin_g, k) = (self.shape(*w)[0], self.shape(*w)[1], self.shape(*w)[2]);
                    let lout = g.shape()[2];
                    let cout_g = cout / groups;
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let gd = g.data();
                    let mut gx = vec![0.0; xv.len()];
                    let mut gw = vec![0.0; wv.len()];
                    let mut gb = vec![0.0; cout];
                    for bi in 0..bsz {
                        for oc in 0..cout {
                            let grp = oc / cout_g;
                            let grow = &gd[(bi * cout + oc) * lout..(bi * cout + oc + 1) * lout];
                            gb[oc] += grow.iter().sum::<f64>();
                            for icl in 0..cin_g {
                                let ic = grp * cin_g + icl;
                                let xoff = (bi * cin + ic) * len;
                                let woff = (oc * cin_g + icl) * k;
                                for kk in 0..k {
                                    let wk = wv[woff + kk];
                                    let mut gwk = 0.0;
                                    for (t, &gt) in grow.iter().enumerate() {
                                        let pos = (t * stride + kk) as isize - *padding as isize;
                                        if pos >= 0 && (pos as usize) < len {
                                            let p = xoff + pos as usize;
                                            gwk += gt * xv[p];
                                            gx[p] += gt * wk;
                                        }
                                    }
                                    gw[woff + kk] += gwk;
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc(*b, Tensor::from_parts(self.shape(*b).to_vec(), gb));
                    }
                    acc(*w, Tensor::from_parts(self.shape(*w).to_vec(), gw));
                    acc(*x, Tensor::from_parts(self.shape(*x).to_vec(), gx));
                }
                Op::AvgPool(x, k) => {
                    let l = self.shape(*x)[2];
                    let lout = g.shape()[2];
                    let rows = g.len() / lout;
                    let mut gx = vec![0.0; self.value(*x).len()];
                    for r in 0..rows {
                        for t in 0..lout {
                            let v = g.data()[r * lout + t] / *k as f64;
                            gx[r * l + t * k..r * l + (t + 1) * k].iter_mut().for_each(|o| *o = v);
                        }
                    }
                    acc(*x, Tensor::from_parts(self.shape(*x).to_vec(), gx));
                }
                Op::Permute021(x) => {
                    let (b, c, l) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                    let mut gx = Vec::with_capacity(g.len());
                    for bi in 0..b {
                        gx.extend(transpose(&g.data()[bi * c * l..(bi + 1) * c * l], l, c));
                    }
                    acc(*x, Tensor::from_parts(vec![b, c, l], gx));
                }
                Op::Reshape(x) => {
                    let shape = self.shape(*x).to_vec();
                    acc(*x, Tensor::from_parts(shape, g.into_data()));
                }
                Op::MulConst(x, c) => acc(*x, zip_map(&g, c, |a, b| a * b)),
                Op::RowSelect { x, fill, mask } => {
                    let mut gx = g.clone();
                    let mut gf = g;
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            gx.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                        } else {
                            gf.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    acc(*x, gx);
                    acc(*fill, gf);
                }
                Op::BroadcastRows(v) => {
                    let d = g.cols();
                    let mut gv = vec![0.0; d];
                    for r in 0..g.rows() {
                        for (o, x) in gv.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(*v, Tensor::from_parts(self.shape(*v).to_vec(), gv));
                }
                Op::SliceCols(x, start) => {
                    let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let len = g.cols();
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                    }
                    acc(*x, Tensor::from_parts(vec![r, c], gx));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = (self.shape(p)[0], self.shape(p)[1]);
                        let data = (0..r).flat_map(|i| g.row(i)[offset..offset + c].iter().copied()).collect();
                        acc(p, Tensor::from_parts(vec![r, c], data));
                        offset += c;
                    }
                }
                Op::SliceRows(x, start) => {
                    let shape = self.shape(*x).to_vec();
                    let inner: usize = shape[1..].iter().product();
                    let mut gx = vec![0.0; self.value(*x).len()];
                    gx[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                    acc(*x, Tensor::from_parts(shape, gx));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        acc(p, Tensor::from_parts(self.shape(p).to_vec(), g.data()[offset..offset + n].to_vec()));
                        offset += n;
                    }
                }
                Op::MeanRows(x) => {
                    let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let row: Vec<f64> = g.data().iter().map(|v| v / r as f64).collect();
                    let data = (0..r).flat_map(|_| row.iter().copied()).collect();
                    acc(*x, Tensor::from_parts(vec![r, c], data));
                }
                Op::MaskedLoss {
                    pred,
                    target,
                    mask,
                    kind,
                } => {
                    let p = self.value(*pred);
                    let c = p.cols();
                    let count = (mask.iter().filter(|&&m| m).count() * c) as f64;
                    let scale = g.item() / count;
                    let mut gp = Tensor::zeros(p.shape());
                    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        let (pr, tr) = (p.row(i), target.row(i));
                        for (j, o) in gp.row_mut(i).iter_mut().enumerate() {
                            let r = pr[j] - tr[j];
                            *o = scale
                                * match kind {
                                    LossKind::Mse => 2.0 * r,
                                    LossKind::L1 => {
                                        if r > 0.0 {
                                            1.0
                                        } else if r < 0.0 {
                                            -1.0
                                        } else {
                                            0.0
                                        }
                                    }
                                };
                        }
                    }
                    acc(*pred, gp);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    labels,
                    weights,
                } => {
                    let k = self.value(*logits).cols();
                    let mut gl = probs.clone();
                    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
                        let row = &mut gl[i * k..(i + 1) * k];
                        row[y] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= w * g.item());
                    }
                    acc(*logits, Tensor::from_parts(self.shape(*logits).to_vec(), gl));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn transpose(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Mean squared or absolute error over masked rows and all their coordinates.
pub fn masked_loss_value(pred: &Tensor, target: &Tensor, mask: &[bool], kind: LossKind) -> Result<f64> {
    let rows = mask.iter().filter(|&&m| m).count();
    if rows == 0 {
        return Err(Error::NoMaskedFrames);
    }
    let mut total = 0.0;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (p, t) in pred.row(i).iter().zip(target.row(i)) {
            let r = p - t;
            total += match kind {
                LossKind::Mse => r * r,
                LossKind::L1 => r.abs(),
            };
        }
    }
    Ok(total / (rows * pred.cols()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Reduce any node to a scalar through a fixed random projection.
    fn project(g: &mut Graph, out: Var, rng: &mut ChaCha8Rng) -> Var {
        let shape = g.shape(out).to_vec();
        if shape.iter().product::<usize>() == 1 {
            return out;
        }
        let r = g.constant(rand_tensor(&shape, rng));
        let p = g.mul(out, r).unwrap();
        let n = shape.iter().product();
        let flat = g.reshape(p, &[1, n]).unwrap();
        let ones = g.constant(Tensor::ones(&[1, n]));
        g.matmul_bt(flat, ones).unwrap()
    }

    /// Central-difference check of `build` with respect to every input.
    fn check(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let eval = |ins: &[Tensor]| -> (Graph, Var, Vec<Var>) {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
            let out = build(&mut g, &vars);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let loss = project(&mut g, out, &mut rng);
            (g, loss, vars)
        };
        let (g, loss, vars) = eval(inputs);
        let grads = g.backward(loss).unwrap();
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
            for i in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                let (gp, lp, _) = eval(&plus);
                let (gm, lm, _) = eval(&minus);
                let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-3);
                assert!(err < 1e-4, "input {k} index {i}: analytic {a} numeric {numeric}");
            }
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn elementwise_ops() {
        let mut r = rng();
        let a = rand_tensor(&[3, 4], &mut r);
        let b = rand_tensor(&[3, 4], &mut r);
        check(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap());
        check(&[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]).unwrap());
        check(&[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]).unwrap());
        check(&[a.clone()], |g, v| g.scale(v[0], -2.5));
        check(&[a.clone()], |g, v| g.gelu(v[0]));
        let c = rand_tensor(&[3, 4], &mut r);
        check(&[a.clone()], move |g, v| g.mul_const(v[0], c.clone()).unwrap());
        let bias = rand_tensor(&[4], &mut r);
        check(&[a, bias], |g, v| g.add_bias(v[0], v[1]).unwrap());
    }

    #[test]
    fn matrix_ops() {
        let mut r = rng();
        let a = rand_tensor(&[3, 5], &mut r);
        let b = rand_tensor(&[5, 2], &mut r);
        let bt = rand_tensor(&[4, 5], &mut r);
        check(&[a.clone(), b], |g, v| g.matmul(v[0], v[1]).unwrap());
        check(&[a.clone(), bt], |g, v| g.matmul_bt(v[0], v[1]).unwrap());
        check(&[a.clone()], |g, v| g.transpose(v[0]).unwrap());
        check(&[a.clone()], |g, v| g.softmax(v[0]));
        check(&[a.clone()], |g, v| g.mean_rows(v[0]).unwrap());
        check(&[a.clone()], |g, v| g.slice_cols(v[0], 1, 3).unwrap());
        check(&[a.clone()], |g, v| g.slice_rows(v[0], 1, 2).unwrap());
        let c = rand_tensor(&[3, 2], &mut r);
        check(&[a.clone(), c], |g, v| g.concat_cols(&[v[0], v[1]]).unwrap());
        let d = rand_tensor(&[2, 5], &mut r);
        check(&[a.clone(), d], |g, v| g.concat_rows(&[v[0], v[1]]).unwrap());
        let tok = rand_tensor(&[5], &mut r);
        check(&[tok], |g, v| g.broadcast_rows(v[0], 3));
        let fill = rand_tensor(&[3, 5], &mut r);
        check(&[a, fill], |g, v| g.row_select(v[0], v[1], &[true, false, true]).unwrap());
    }

    #[test]
    fn layer_norm_grad() {
        let mut r = rng();
        let x = rand_tensor(&[2, 3, 6], &mut r);
        let gamma = rand_tensor(&[6], &mut r);
        let beta = rand_tensor(&[6], &mut r);
        check(&[x, gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2]).unwrap());
    }

    #[test]
    fn layer_norm_normalizes_last_axis() {
        let mut r = rng();
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&[4, 8], &mut r));
        let gamma = g.constant(Tensor::ones(&[8]));
        let beta = g.constant(Tensor::zeros(&[8]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        for row in 0..4 {
            let v = g.value(y).row(row);
            let mean = v.iter().sum::<f64>() / 8.0;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn conv_grads() {
        let mut r = rng();
        let x = rand_tensor(&[2, 4, 11], &mut r);
        let w = rand_tensor(&[6, 4, 3], &mut r);
        let b = rand_tensor(&[6], &mut r);
        check(&[x.clone(), w, b], |g, v| g.conv1d(v[0], v[1], Some(v[2]), 2, 1, 1).unwrap());
        let wg = rand_tensor(&[4, 2, 5], &mut r);
        check(&[x.clone(), wg], |g, v| g.conv1d(v[0], v[1], None, 1, 2, 2).unwrap());
        check(&[x.clone()], |g, v| g.avg_pool(v[0], 3).unwrap());
        check(&[x], |g, v| g.permute021(v[0]).unwrap());
    }

    /// Direct-loop oracle for a grouped, strided, padded convolution.
    #[test]
    fn conv_matches_direct_sum() {
        let mut r = rng();
        let (bsz, cin, len, cout, k, s, p, groups) = (2, 4, 9, 6, 3, 2, 1, 2);
        let x = rand_tensor(&[bsz, cin, len], &mut r);
        let w = rand_tensor(&[cout, cin / groups, k], &mut r);
        let b = rand_tensor(&[cout], &mut r);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv1d(xv, wv, Some(bv), s, p, groups).unwrap();
        let lout = (len + 2 * p - k) / s + 1;
        assert_eq!(g.shape(y), &[bsz, cout, lout]);
        let (cig, cog) = (cin / groups, cout / groups);
        for n in 0..bsz {
            for o in 0..cout {
                let grp = o / cog;
                for t in 0..lout {
                    let mut acc = b.data()[o];
                    for ci in 0..cig {
                        let c = grp * cig + ci;
                        for j in 0..k {
                            let pos = (t * s + j) as isize - p as isize;
                            if pos >= 0 && (pos as usize) < len {
                                acc += w.data()[(o * cig + ci) * k + j] * x.data()[(n * cin + c) * len + pos as usize];
                            }
                        }
                    }
                    let got = g.value(y).data()[(n * cout + o) * lout + t];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn loss_grads() {
        let mut r = rng();
        let pred = rand_tensor(&[5, 3], &mut r);
        let target = rand_tensor(&[5, 3], &mut r);
        let mask = [true, false, true, true, false];
        for kind in [LossKind::Mse, LossKind::L1] {
            let t = target.clone();
            check(&[pred.clone()], move |g, v| g.masked_loss(v[0], t.clone(), &mask, kind).unwrap());
        }
        let logits = rand_tensor(&[4, 3], &mut r);
        check(&[logits], |g, v| g.cross_entropy(v[0], &[0, 2, 1, 2], &[1.0, 0.5, 2.0, 0.5]).unwrap());
    }

    #[test]
    fn masked_loss_ignores_unmasked_rows() {
        let pred = Tensor::new(vec![3, 2], vec![1.0, 2.0, 100.0, f64::NAN, 0.0, 0.0]).unwrap();
        let target = Tensor::new(vec![3, 2], vec![0.0, 0.0, -5.0, 7.0, 1.0, 3.0]).unwrap();
        let mask = [true, false, true];
        let mse = masked_loss_value(&pred, &target, &mask, LossKind::Mse).unwrap();
        assert!((mse - (1.0 + 4.0 + 1.0 + 9.0) / 4.0).abs() < 1e-15);
        let l1 = masked_loss_value(&pred, &target, &mask, LossKind::L1).unwrap();
        assert!((l1 - (1.0 + 2.0 + 1.0 + 3.0) / 4.0).abs() < 1e-15);
        assert!(matches!(
            masked_loss_value(&pred, &target, &[false; 3], LossKind::Mse),
            Err(Error::NoMaskedFrames)
        ));
    }

    #[test]
    fn cross_entropy_weighting() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::new(vec![2, 2], vec![0.0, 0.0, 2.0, 0.0]).unwrap());
        let l = g.cross_entropy(logits, &[0, 1], &[1.0, 3.0]).unwrap();
        let nll0 = 2f64.ln();
        let nll1 = (1.0 + 2f64.exp()).ln();
        let expected = (nll0 + 3.0 * nll1) / 4.0;
        assert!((g.value(l).item() - expected).abs() < 1e-14);
        assert!(matches!(
            g.cross_entropy(logits, &[0, 2], &[1.0, 1.0]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn gelu_reference_values() {
        // 0.5 x (1 + erf(x / sqrt 2)) at x = 1 and -1
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-15);
        assert_eq!(gelu(0.0), 0.0);
    }
}
