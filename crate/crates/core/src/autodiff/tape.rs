//! Operation tape: every forward op appends one node, `backward` replays
//! adjoints in exact reverse order of execution.

use super::kernels::{col2im_add, gemm, im2col, with_scratch, ConvGeometry, MatRef};
use super::{Tensor, TensorError};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    Relu {
        input: Var,
    },
    SoftmaxChannels {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MatmulChannels {
        matrix: Var,
        input: Var,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    CrossEntropy {
        pred: Var,
        target: Tensor,
    },
    Sum {
        input: Var,
    },
    WeightedSum {
        input: Var,
        weights: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records executed operations and accumulates gradients into leaves.
///
/// A tape is single-threaded; independent model replicas use independent
/// tapes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and gradient. Existing `Var`s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    /// Leaf value; with `requires_grad` it receives a gradient accumulator.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, present once a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().fill(0.0);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let (b, cin, h, w) = self.value(input).dims4()?;
        let kshape = self.value(kernel).shape().to_vec();
        let [cout, kcin, kh, kw] = kshape[..] else {
            return Err(shape_err(
                "conv2d",
                format!("kernel must be rank 4, got {kshape:?}"),
            ));
        };
        if kcin != cin {
            return Err(shape_err(
                "conv2d",
                format!("input has {cin} channels but kernel expects {kcin}"),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(shape_err(
                "conv2d",
                format!(
                    "bias shape {:?} does not match {cout} output channels",
                    self.value(bias).shape()
                ),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be at least 1".into()));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(shape_err(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            ));
        }
        let g = ConvGeometry {
            in_channels: cin,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        };
        let (oh, ow) = (g.out_h(), g.out_w());
        let plane_in = cin * h * w;
        let plane_out = cout * oh * ow;
        let mut out = vec![0.0; b * plane_out];
        with_scratch(g.col_rows() * g.col_cols(), |cols| {
            let x = self.value(input).data();
            let k = self.value(kernel).data();
            let bias_v = self.value(bias).data();
            for bi in 0..b {
                let dst = &mut out[bi * plane_out..(bi + 1) * plane_out];
                for (co, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                    chunk.fill(bias_v[co]);
                }
                im2col(&x[bi * plane_in..(bi + 1) * plane_in], &g, cols);
                gemm(
                    MatRef::new(k, cout, g.col_rows()),
                    MatRef::new(cols, g.col_rows(), g.col_cols()),
                    1.0,
                    dst,
                );
            }
        });
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            Tensor::new(vec![b, cout, oh, ow], out)?,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var, TensorError> {
        let (b, c, h, w) = self.value(input).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(
                "maxpool2",
                format!("spatial size {h}x{w} must be even"),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            Tensor::new(vec![b, c, oh, ow], out)?,
            Op::MaxPool2 { input, argmax },
            rg,
        ))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var, TensorError> {
        let (b, c, h, w) = self.value(input).dims4()?;
        let x = self.value(input).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; b * c * oh * ow];
        for plane in 0..b * c {
            for i in 0..oh {
                for j in 0..ow {
                    out[(plane * oh + i) * ow + j] = x[(plane * h + i / 2) * w + j / 2];
                }
            }
        }
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            Tensor::new(vec![b, c, oh, ow], out)?,
            Op::Upsample2 { input },
            rg,
        ))
    }

    /// Stacks channels of `a` before channels of `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ba, ca, ha, wa) = self.value(a).dims4()?;
        let (bb, cb, hb, wb) = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(shape_err(
                "concat_channels",
                format!(
                    "cannot concat {:?} with {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let plane = ha * wa;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ba * (ca + cb) * plane);
        for bi in 0..ba {
            out.extend_from_slice(&xa[bi * ca * plane..(bi + 1) * ca * plane]);
            out.extend_from_slice(&xb[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![ba, ca + cb, ha, wa], out)?,
            Op::Concat { a, b },
            rg,
        ))
    }

    pub fn slice_channels(
        &mut self,
        input: Var,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let out = self.value(input).channel_slice(start, len)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::SliceChannels { input, start }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Relu { input }, rg)
    }

    /// Softmax across the channel axis at every pixel, with the per-pixel
    /// maximum subtracted first.
    pub fn softmax_channels(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.value(input);
        let (b, c, h, w) = x.dims4()?;
        let plane = h * w;
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            let base = bi * c * plane;
            for p in 0..plane {
                let at = |ch: usize| base + ch * plane + p;
                let max = (0..c)
                    .map(|ch| xd[at(ch)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for ch in 0..c {
                    let e = (xd[at(ch)] - max).exp();
                    out[at(ch)] = e;
                    total += e;
                }
                for ch in 0..c {
                    out[at(ch)] /= total;
                }
            }
        }
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            Tensor::new(vec![b, c, h, w], out)?,
            Op::SoftmaxChannels { input },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x + y)
                .collect(),
        )?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x * y)
                .collect(),
        )?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|v| v * factor);
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Applies a `[C, C]` matrix to the channel vector of every pixel.
    pub fn matmul_channels(&mut self, matrix: Var, input: Var) -> Result<Var, TensorError> {
        let (b, c, h, w) = self.value(input).dims4()?;
        let (r, mc) = self.value(matrix).dims2()?;
        if r != c || mc != c {
            return Err(shape_err(
                "matmul_channels",
                format!("matrix {r}x{mc} cannot act on {c} channels"),
            ));
        }
        let plane = h * w;
        let mut out = vec![0.0; b * c * plane];
        let (m, x) = (self.value(matrix).data(), self.value(input).data());
        for bi in 0..b {
            gemm(
                MatRef::new(m, c, c),
                MatRef::new(&x[bi * c * plane..(bi + 1) * c * plane], c, plane),
                0.0,
                &mut out[bi * c * plane..(bi + 1) * c * plane],
            );
        }
        let rg = self.any_grad(&[matrix, input]);
        Ok(self.push(
            Tensor::new(vec![b, c, h, w], out)?,
            Op::MatmulChannels { matrix, input },
            rg,
        ))
    }

    /// Plain matrix product of two rank-2 values.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).dims2()?;
        let (kb, n) = self.value(b).dims2()?;
        if k != kb {
            return Err(shape_err("matmul", format!("{m}x{k} times {kb}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            0.0,
            &mut out,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Matmul { a, b }, rg))
    }

    /// Mean over pixels of `-Σ_k y_k·log(ŷ_k)` with clamped probabilities.
    /// `target` must be one-hot along the channel axis.
    pub fn cross_entropy(&mut self, pred: Var, target: &Tensor) -> Result<Var, TensorError> {
        let (b, c, h, w) = self.value(pred).dims4()?;
        if target.shape() != self.value(pred).shape() {
            return Err(shape_err(
                "cross_entropy",
                format!(
                    "target {:?} vs prediction {:?}",
                    target.shape(),
                    self.value(pred).shape()
                ),
            ));
        }
        validate_one_hot(target)?;
        let plane = h * w;
        let pixels = (b * plane) as f64;
        let p = self.value(pred).data();
        let y = target.data();
        let mut total = 0.0;
        for bi in 0..b {
            for px in 0..plane {
                for ch in 0..c {
                    let i = (bi * c + ch) * plane + px;
                    if y[i] != 0.0 {
                        total -= y[i] * p[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
                    }
                }
            }
        }
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(total / pixels),
            Op::CrossEntropy {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    /// `Σ_i w_i·x_i` against constant weights.
    pub fn weighted_sum(&mut self, input: Var, weights: &Tensor) -> Result<Var, TensorError> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(shape_err(
                "weighted_sum",
                format!("{:?} vs weights {:?}", x.shape(), weights.shape()),
            ));
        }
        let s = x
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                input,
                weights: weights.clone(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar { shape });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Tensor>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(Tensor::ones(&shape));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            } else {
                self.propagate(i, g, &mut adj)?;
            }
        }
        Ok(())
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(
        &self,
        i: usize,
        g: Tensor,
        adj: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => unreachable!("leaves are handled by backward"),
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let (b, cin, h, w) = x.dims4()?;
                let (_, cout, oh, ow) = g.dims4()?;
                let kshape = k.shape();
                let geo = ConvGeometry {
                    in_channels: cin,
                    height: h,
                    width: w,
                    kernel_h: kshape[2],
                    kernel_w: kshape[3],
                    stride: *stride,
                    padding: *padding,
                };
                let (plane_in, plane_out) = (cin * h * w, cout * oh * ow);
                let need_k = self.rg(*kernel);
                let need_x = self.rg(*input);
                let mut dk = Tensor::zeros(kshape);
                let mut dx = Tensor::zeros(x.shape());
                with_scratch(geo.col_rows() * geo.col_cols(), |cols| {
                    for bi in 0..b {
                        let gb = &g.data()[bi * plane_out..(bi + 1) * plane_out];
                        if need_k {
                            im2col(&x.data()[bi * plane_in..(bi + 1) * plane_in], &geo, cols);
                            gemm(
                                MatRef::new(gb, cout, oh * ow),
                                MatRef::new(cols, geo.col_rows(), geo.col_cols()).t(),
                                1.0,
                                dk.data_mut(),
                            );
                        }
                        if need_x {
                            gemm(
                                MatRef::new(k.data(), cout, geo.col_rows()).t(),
                                MatRef::new(gb, cout, oh * ow),
                                0.0,
                                cols,
                            );
                            col2im_add(
                                cols,
                                &geo,
                                &mut dx.data_mut()[bi * plane_in..(bi + 1) * plane_in],
                            );
                        }
                    }
                });
                if self.rg(*bias) {
                    let mut db = Tensor::zeros(&[cout]);
                    for bi in 0..b {
                        for co in 0..cout {
                            let start = bi * plane_out + co * oh * ow;
                            db.data_mut()[co] +=
                                g.data()[start..start + oh * ow].iter().sum::<f64>();
                        }
                    }
                    self.accumulate(adj, *bias, db);
                }
                if need_k {
                    self.accumulate(adj, *kernel, dk);
                }
                if need_x {
                    self.accumulate(adj, *input, dx);
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = Tensor::zeros(self.value(*input).shape());
                for (&src, gv) in argmax.iter().zip(g.data()) {
                    dx.data_mut()[src] += gv;
                }
                self.accumulate(adj, *input, dx);
            }
            Op::Upsample2 { input } => {
                let (b, c, h, w) = self.value(*input).dims4()?;
                let ow = 2 * w;
                let mut dx = Tensor::zeros(&[b, c, h, w]);
                let gd = g.data();
                for plane in 0..b * c {
                    for i in 0..h {
                        for j in 0..w {
                            let top = (plane * 2 * h + 2 * i) * ow + 2 * j;
                            dx.data_mut()[(plane * h + i) * w + j] =
                                gd[top] + gd[top + 1] + gd[top + ow] + gd[top + ow + 1];
                        }
                    }
                }
                self.accumulate(adj, *input, dx);
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).shape()[1];
                let cb = self.value(*b).shape()[1];
                if self.rg(*a) {
                    self.accumulate(adj, *a, g.channel_slice(0, ca)?);
                }
                if self.rg(*b) {
                    self.accumulate(adj, *b, g.channel_slice(ca, cb)?);
                }
            }
            Op::SliceChannels { input, start } => {
                let (b, c, h, w) = self.value(*input).dims4()?;
                let len = g.shape()[1];
                let plane = h * w;
                let mut dx = Tensor::zeros(&[b, c, h, w]);
                for bi in 0..b {
                    let dst = (bi * c + start) * plane;
                    let src = bi * len * plane;
                    dx.data_mut()[dst..dst + len * plane]
                        .copy_from_slice(&g.data()[src..src + len * plane]);
                }
                self.accumulate(adj, *input, dx);
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let dx = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect(),
                )?;
                self.accumulate(adj, *input, dx);
            }
            Op::SoftmaxChannels { input } => {
                let y = &node.value;
                let (b, c, h, w) = y.dims4()?;
                let plane = h * w;
                let mut dx = Tensor::zeros(y.shape());
                let (yd, gd) = (y.data(), g.data());
                for bi in 0..b {
                    let base = bi * c * plane;
                    for p in 0..plane {
                        let dot: f64 = (0..c)
                            .map(|ch| gd[base + ch * plane + p] * yd[base + ch * plane + p])
                            .sum();
                        for ch in 0..c {
                            let at = base + ch * plane + p;
                            dx.data_mut()[at] = yd[at] * (gd[at] - dot);
                        }
                    }
                }
                self.accumulate(adj, *input, dx);
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    self.accumulate(adj, *a, g.clone());
                }
                self.accumulate(adj, *b, g);
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let da = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
                    )?;
                    self.accumulate(adj, *a, da);
                }
                if self.rg(*b) {
                    let db = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                    )?;
                    self.accumulate(adj, *b, db);
                }
            }
            Op::Scale { input, factor } => {
                self.accumulate(adj, *input, g.map(|v| v * factor));
            }
            Op::MatmulChannels { matrix, input } => {
                let x = self.value(*input);
                let m = self.value(*matrix);
                let (b, c, h, w) = x.dims4()?;
                let plane = h * w;
                if self.rg(*matrix) {
                    let mut dm = Tensor::zeros(&[c, c]);
                    for bi in 0..b {
                        let r = bi * c * plane..(bi + 1) * c * plane;
                        gemm(
                            MatRef::new(&g.data()[r.clone()], c, plane),
                            MatRef::new(&x.data()[r], c, plane).t(),
                            1.0,
                            dm.data_mut(),
                        );
                    }
                    self.accumulate(adj, *matrix, dm);
                }
                if self.rg(*input) {
                    let mut dx = Tensor::zeros(x.shape());
                    for bi in 0..b {
                        let r = bi * c * plane..(bi + 1) * c * plane;
                        gemm(
                            MatRef::new(m.data(), c, c).t(),
                            MatRef::new(&g.data()[r.clone()], c, plane),
                            0.0,
                            &mut dx.data_mut()[r],
                        );
                    }
                    self.accumulate(adj, *input, dx);
                }
            }
            Op::Matmul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2()?;
                let n = tb.shape()[1];
                if self.rg(*a) {
                    let mut da = Tensor::zeros(&[m, k]);
                    gemm(
                        MatRef::new(g.data(), m, n),
                        MatRef::new(tb.data(), k, n).t(),
                        0.0,
                        da.data_mut(),
                    );
                    self.accumulate(adj, *a, da);
                }
                if self.rg(*b) {
                    let mut db = Tensor::zeros(&[k, n]);
                    gemm(
                        MatRef::new(ta.data(), m, k).t(),
                        MatRef::new(g.data(), m, n),
                        0.0,
                        db.data_mut(),
                    );
                    self.accumulate(adj, *b, db);
                }
            }
            Op::CrossEntropy { pred, target } => {
                let p = self.value(*pred);
                let (b, _, h, w) = p.dims4()?;
                let scale = g.data()[0] / (b * h * w) as f64;
                let dp = Tensor::new(
                    p.shape().to_vec(),
                    p.data()
                        .iter()
                        .zip(target.data())
                        .map(|(&pv, &yv)| {
                            if yv == 0.0 || pv <= PROB_CLAMP || pv >= 1.0 - PROB_CLAMP {
                                0.0
                            } else {
                                -scale * yv / pv
                            }
                        })
                        .collect(),
                )?;
                self.accumulate(adj, *pred, dp);
            }
            Op::Sum { input } => {
                let gv = g.data()[0];
                self.accumulate(adj, *input, Tensor::full(self.value(*input).shape(), gv));
            }
            Op::WeightedSum { input, weights } => {
                let gv = g.data()[0];
                self.accumulate(adj, *input, weights.map(|w| w * gv));
            }
        }
        Ok(())
    }
}

/// Checks that every pixel of a `[B, K, H, W]` target holds a one-hot vector.
pub fn validate_one_hot(target: &Tensor) -> Result<(), TensorError> {
    let (b, c, h, w) = target.dims4()?;
    let plane = h * w;
    let y = target.data();
    for bi in 0..b {
        for p in 0..plane {
            let mut ones = 0;
            for ch in 0..c {
                let v = y[(bi * c + ch) * plane + p];
                if v == 1.0 {
                    ones += 1;
                } else if v != 0.0 {
                    return Err(TensorError::Validation(format!(
                        "target value {v} at batch {bi}, pixel {p} is not 0 or 1"
                    )));
                }
            }
            if ones != 1 {
                return Err(TensorError::Validation(format!(
                    "target pixel {p} in batch {bi} has {ones} active classes"
                )));
            }
        }
    }
    Ok(())
}
