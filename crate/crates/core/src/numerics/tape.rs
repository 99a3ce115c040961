//! Reverse-mode differentiation over a recorded sequence of tensor operations.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep simply walks it in reverse.

use super::tensor::{matmul_into, Tensor};
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    ScaleRows(Var, Var),
    Relu(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        spec: Conv2dSpec,
    },
    GlobalAvgPool(Var),
    Reshape(Var),
    BlockMean(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Softmax(Var),
    CrossEntropy(Var, usize),
    L1Readout(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Leaves are either trainable (`param`) or constant.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = self.needs(inputs);
        self.push(value, op, needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.record(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.record(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.record(value, Op::Mul(a, b), &[a, b]))
    }

    /// `a (m x n) + bias (n)` broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let va = self.value(a);
        let [m, n] = va.dims2("add_row_bias")?;
        let vb = self.value(bias);
        if vb.len() != n {
            return Err(NumericsError::shape(
                "add_row_bias",
                format!("{:?} + bias {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut data = va.data().to_vec();
        for i in 0..m {
            for (d, b) in data[i * n..(i + 1) * n].iter_mut().zip(vb.data()) {
                *d += b;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.record(value, Op::AddRowBias(a, bias), &[a, bias]))
    }

    /// Multiplies row `i` of `a (m x n)` by `scale[i]`, i.e. `diag(scale) a`.
    pub fn scale_rows(&mut self, a: Var, scale: Var) -> Result<Var, NumericsError> {
        let va = self.value(a);
        let [m, n] = va.dims2("scale_rows")?;
        let vs = self.value(scale);
        if vs.len() != m {
            return Err(NumericsError::shape(
                "scale_rows",
                format!("{:?} scaled by {:?}", va.shape(), vs.shape()),
            ));
        }
        let mut data = va.data().to_vec();
        for (i, s) in vs.data().iter().enumerate() {
            for d in &mut data[i * n..(i + 1) * n] {
                *d *= s;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.record(value, Op::ScaleRows(a, scale), &[a, scale]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.record(value, Op::Relu(a), &[a])
    }

    /// Batched 2-D cross-correlation: input `[B, Cin, H, W]`, kernel
    /// `[Cout, Cin, K, K]`, bias `[Cout]`, output `[B, Cout, Ho, Wo]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        spec: Conv2dSpec,
    ) -> Result<Var, NumericsError> {
        let geo = ConvGeometry::new(
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).shape(),
            spec,
        )?;
        let mut out = vec![0.0; geo.out_len()];
        geo.forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &mut out,
        );
        let value = Tensor::new(vec![geo.batch, geo.cout, geo.ho, geo.wo], out)?;
        Ok(self.record(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                spec,
            },
            &[input, kernel, bias],
        ))
    }

    /// `[B, C, H, W] -> [B, C]` spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var, NumericsError> {
        let va = self.value(a);
        let [b, c, h, w] = dims4("global_avg_pool", va)?;
        let hw = h * w;
        let data = va
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(vec![b, c], data)?;
        Ok(self.record(value, Op::GlobalAvgPool(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.record(value, Op::Reshape(a), &[a]))
    }

    /// Averages consecutive blocks of `block` rows: `[m, n] -> [m / block, n]`.
    pub fn block_mean(&mut self, a: Var, block: usize) -> Result<Var, NumericsError> {
        let va = self.value(a);
        let [m, n] = va.dims2("block_mean")?;
        if block == 0 || m % block != 0 {
            return Err(NumericsError::shape(
                "block_mean",
                format!("{m} rows not divisible into blocks of {block}"),
            ));
        }
        let groups = m / block;
        let mut data = vec![0.0; groups * n];
        for g in 0..groups {
            let acc = &mut data[g * n..(g + 1) * n];
            for r in 0..block {
                for (o, x) in acc.iter_mut().zip(va.row(g * block + r)) {
                    *o += x;
                }
            }
            for o in acc.iter_mut() {
                *o /= block as f64;
            }
        }
        let value = Tensor::new(vec![groups, n], data)?;
        Ok(self.record(value, Op::BlockMean(a, block), &[a]))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var, NumericsError> {
        let va = self.value(a);
        let [m, n] = va.dims2("gather_rows")?;
        if let Some(bad) = rows.iter().find(|&&r| r >= m) {
            return Err(NumericsError::shape(
                "gather_rows",
                format!("row {bad} out of range for {m} rows"),
            ));
        }
        let data = rows.iter().flat_map(|&r| va.row(r).to_vec()).collect();
        let value = Tensor::new(vec![rows.len(), n], data)?;
        Ok(self.record(value, Op::GatherRows(a, rows), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(value, Op::Sum(a), &[a])
    }

    /// Softmax over the last axis (a vector or each row of a matrix).
    pub fn softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let width = last_axis(va);
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(width) {
            softmax_in_place(row);
        }
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.record(value, Op::Softmax(a), &[a])
    }

    /// Cross-entropy of a single logit vector (shape `[C]` or `[1, C]`).
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, NumericsError> {
        let vl = self.value(logits);
        if vl.shape().len() == 2 && vl.shape()[0] != 1 {
            return Err(NumericsError::shape(
                "cross_entropy",
                format!("expected one logit row, got {:?}", vl.shape()),
            ));
        }
        if label >= vl.len() {
            return Err(NumericsError::shape(
                "cross_entropy",
                format!("label {label} out of range for {} classes", vl.len()),
            ));
        }
        let value = Tensor::scalar(cross_entropy_value(vl.data(), label));
        Ok(self.record(value, Op::CrossEntropy(logits, label), &[logits]))
    }

    /// Attention readout `[N, d] -> [1, d]`: rows weighted by their share of
    /// the total L1 norm. All-zero input falls back to uniform weights.
    pub fn l1_readout(&mut self, a: Var) -> Result<Var, NumericsError> {
        let va = self.value(a);
        let [n, d] = va.dims2("l1_readout")?;
        if n == 0 {
            return Err(NumericsError::shape("l1_readout", "no rows".into()));
        }
        let weights = l1_weights(va);
        let mut out = vec![0.0; d];
        for (i, w) in weights.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(va.row(i)) {
                *o += w * x;
            }
        }
        let value = Tensor::new(vec![1, d], out)?;
        Ok(self.record(value, Op::L1Readout(a), &[a]))
    }

    /// Runs the backward sweep from a scalar `loss`. Every trainable leaf gets
    /// a gradient, zero when it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss(
                self.value(loss).shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| Tensor::zeros(self.value(var).shape()));
        f(slot.data_mut());
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let [m, k] = [va.shape()[0], va.shape()[1]];
                let n = vb.shape()[1];
                self.accumulate(grads, *a, |ga| {
                    // dA = G B^T
                    let bt = vb.transpose().expect("2-D");
                    matmul_into(gd, bt.data(), ga, m, n, k);
                });
                self.accumulate(grads, *b, |gb| {
                    // dB = A^T G
                    let at = va.transpose().expect("2-D");
                    matmul_into(at.data(), gd, gb, k, m, n);
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    self.accumulate(grads, *v, |gv| add_assign(gv, gd));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| {
                    for ((o, g), y) in ga.iter_mut().zip(gd).zip(vb.data()) {
                        *o += g * y;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, g), x) in gb.iter_mut().zip(gd).zip(va.data()) {
                        *o += g * x;
                    }
                });
            }
            Op::AddRowBias(a, bias) => {
                let n = out.shape()[1];
                self.accumulate(grads, *a, |ga| add_assign(ga, gd));
                self.accumulate(grads, *bias, |gb| {
                    for row in gd.chunks(n) {
                        add_assign(gb, row);
                    }
                });
            }
            Op::ScaleRows(a, scale) => {
                let (va, vs) = (self.value(*a), self.value(*scale));
                let n = out.shape()[1];
                self.accumulate(grads, *a, |ga| {
                    for (i, s) in vs.data().iter().enumerate() {
                        for (o, g) in ga[i * n..(i + 1) * n].iter_mut().zip(&gd[i * n..]) {
                            *o += g * s;
                        }
                    }
                });
                self.accumulate(grads, *scale, |gs| {
                    for (i, o) in gs.iter_mut().enumerate() {
                        *o += gd[i * n..(i + 1) * n]
                            .iter()
                            .zip(va.row(i))
                            .map(|(g, x)| g * x)
                            .sum::<f64>();
                    }
                });
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, |ga| {
                    for ((o, g), x) in ga.iter_mut().zip(gd).zip(va.data()) {
                        if *x > 0.0 {
                            *o += g;
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                spec,
            } => {
                let geo = ConvGeometry::new(
                    self.value(*input).shape(),
                    self.value(*kernel).shape(),
                    self.value(*bias).shape(),
                    *spec,
                )
                .expect("validated in forward");
                let vi = self.value(*input).data();
                let vk = self.value(*kernel).data();
                self.accumulate(grads, *input, |gi| geo.backward_input(vk, gd, gi));
                self.accumulate(grads, *kernel, |gk| geo.backward_kernel(vi, gd, gk));
                self.accumulate(grads, *bias, |gb| geo.backward_bias(gd, gb));
            }
            Op::GlobalAvgPool(a) => {
                let shape = self.value(*a).shape();
                let hw = shape[2] * shape[3];
                self.accumulate(grads, *a, |ga| {
                    for (plane, g) in ga.chunks_mut(hw).zip(gd) {
                        let share = g / hw as f64;
                        for o in plane {
                            *o += share;
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |ga| add_assign(ga, gd)),
            Op::BlockMean(a, block) => {
                let n = out.shape()[1];
                let block = *block;
                self.accumulate(grads, *a, |ga| {
                    for (r, row) in ga.chunks_mut(n).enumerate() {
                        let g_row = &gd[(r / block) * n..(r / block + 1) * n];
                        for (o, g) in row.iter_mut().zip(g_row) {
                            *o += g / block as f64;
                        }
                    }
                });
            }
            Op::GatherRows(a, rows) => {
                let n = out.shape()[1];
                self.accumulate(grads, *a, |ga| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_assign(&mut ga[r * n..(r + 1) * n], &gd[k * n..(k + 1) * n]);
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                self.accumulate(grads, *a, |ga| {
                    for o in ga {
                        *o += g0;
                    }
                });
            }
            Op::Softmax(a) => {
                let width = last_axis(out);
                self.accumulate(grads, *a, |ga| {
                    for ((o_row, s_row), g_row) in ga
                        .chunks_mut(width)
                        .zip(out.data().chunks(width))
                        .zip(gd.chunks(width))
                    {
                        let dot: f64 = s_row.iter().zip(g_row).map(|(s, g)| s * g).sum();
                        for ((o, s), g) in o_row.iter_mut().zip(s_row).zip(g_row) {
                            *o += s * (g - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy(logits, label) => {
                let g0 = gd[0];
                let mut probs = self.value(*logits).data().to_vec();
                softmax_in_place(&mut probs);
                probs[*label] -= 1.0;
                self.accumulate(grads, *logits, |gl| {
                    for (o, p) in gl.iter_mut().zip(&probs) {
                        *o += g0 * p;
                    }
                });
            }
            Op::L1Readout(a) => {
                let va = self.value(*a);
                let [n, d] = [va.shape()[0], va.shape()[1]];
                let total: f64 = (0..n).map(|i| l1(va.row(i))).sum();
                let weights = l1_weights(va);
                let xg = out.data();
                let g_dot_xg: f64 = gd.iter().zip(xg).map(|(g, x)| g * x).sum();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..n {
                        let row = va.row(i);
                        let o_row = &mut ga[i * d..(i + 1) * d];
                        // d x_g / d x_i = w_i I + sign(x_i) (x_i - x_g)^T / S
                        let coupling = if total > 0.0 {
                            (gd.iter().zip(row).map(|(g, x)| g * x).sum::<f64>() - g_dot_xg)
                                / total
                        } else {
                            0.0
                        };
                        for ((o, g), x) in o_row.iter_mut().zip(gd).zip(row) {
                            *o += g * weights[i] + sign(*x) * coupling;
                        }
                    }
                });
            }
        }
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn l1(row: &[f64]) -> f64 {
    row.iter().map(|x| x.abs()).sum()
}

/// Readout weights of each row: L1 norm over the total, uniform when every
/// row is zero.
pub fn l1_weights(x: &Tensor) -> Vec<f64> {
    let n = x.shape()[0];
    let norms: Vec<f64> = (0..n).map(|i| l1(x.row(i))).collect();
    let total: f64 = norms.iter().sum();
    if total > 0.0 {
        norms.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

fn last_axis(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1).max(1)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4], NumericsError> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        s => Err(NumericsError::shape(op, format!("expected 4-D, got {s:?}"))),
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub fn cross_entropy_value(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    (lse - logits[label]).max(0.0)
}

/// Output size of a strided convolution along one axis, if positive.
pub fn conv_out_len(input: usize, kernel: usize, spec: Conv2dSpec) -> Option<usize> {
    let padded = input + 2 * spec.padding;
    if spec.stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / spec.stride + 1)
}

struct ConvGeometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(
        input: &[usize],
        kernel: &[usize],
        bias: &[usize],
        spec: Conv2dSpec,
    ) -> Result<Self, NumericsError> {
        let err = |msg: String| NumericsError::shape("conv2d", msg);
        let [batch, cin, h, w] = match input {
            [a, b, c, d] => [*a, *b, *c, *d],
            s => return Err(err(format!("input must be [B,C,H,W], got {s:?}"))),
        };
        let [cout, kcin, kh, kw] = match kernel {
            [a, b, c, d] => [*a, *b, *c, *d],
            s => return Err(err(format!("kernel must be [Cout,Cin,K,K], got {s:?}"))),
        };
        if kcin != cin || kh != kw {
            return Err(err(format!("kernel {kernel:?} incompatible with input {input:?}")));
        }
        if bias != [cout] {
            return Err(err(format!("bias {bias:?} for {cout} output channels")));
        }
        let ho = conv_out_len(h, kh, spec).ok_or_else(|| err(format!("height {h} too small")))?;
        let wo = conv_out_len(w, kw, spec).ok_or_else(|| err(format!("width {w} too small")))?;
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout,
            k: kh,
            ho,
            wo,
            stride: spec.stride,
            pad: spec.padding,
        })
    }

    fn out_len(&self) -> usize {
        self.batch * self.cout * self.ho * self.wo
    }

    /// Valid output index range along one axis for kernel offset `kk`.
    fn valid(&self, kk: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        // need 0 <= o*stride + kk - pad < in_len
        let lo = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(self.stride)
        };
        let limit = in_len + self.pad;
        let hi = if limit > kk {
            ((limit - kk - 1) / self.stride + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn patch_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Unfolds batch item `b` into `[Cin*K*K, Ho*Wo]` patch columns; taps
    /// that fall into the padding stay zero.
    fn im2col(&self, input: &[f64], b: usize, cols: &mut [f64]) {
        let (h, w, wo, k, s) = (self.h, self.w, self.wo, self.k, self.stride);
        let plane = self.ho * wo;
        cols.fill(0.0);
        for ci in 0..self.cin {
            let in_base = (b * self.cin + ci) * h * w;
            for ky in 0..k {
                let (oy0, oy1) = self.valid(ky, h, self.ho);
                for kx in 0..k {
                    let (ox0, ox1) = self.valid(kx, w, wo);
                    let row = &mut cols[((ci * k + ky) * k + kx) * plane..][..plane];
                    for oy in oy0..oy1 {
                        let in_row = &input[in_base + (oy * s + ky - self.pad) * w..][..w];
                        for ox in ox0..ox1 {
                            row[oy * wo + ox] = in_row[ox * s + kx - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Adds patch columns back onto the input gradient of batch item `b`.
    fn col2im(&self, cols: &[f64], b: usize, gi: &mut [f64]) {
        let (h, w, wo, k, s) = (self.h, self.w, self.wo, self.k, self.stride);
        let plane = self.ho * wo;
        for ci in 0..self.cin {
            let in_base = (b * self.cin + ci) * h * w;
            for ky in 0..k {
                let (oy0, oy1) = self.valid(ky, h, self.ho);
                for kx in 0..k {
                    let (ox0, ox1) = self.valid(kx, w, wo);
                    let row = &cols[((ci * k + ky) * k + kx) * plane..][..plane];
                    for oy in oy0..oy1 {
                        let in_row = &mut gi[in_base + (oy * s + ky - self.pad) * w..][..w];
                        for ox in ox0..ox1 {
                            in_row[ox * s + kx - self.pad] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, input: &[f64], kernel: &[f64], bias: &[f64], out: &mut [f64]) {
        let plane = self.ho * self.wo;
        let rows = self.patch_rows();
        let mut cols = vec![0.0; rows * plane];
        for (b, out_b) in out.chunks_mut(self.cout * plane).enumerate() {
            for (c, chunk) in out_b.chunks_mut(plane).enumerate() {
                chunk.fill(bias[c]);
            }
            self.im2col(input, b, &mut cols);
            matmul_into(kernel, &cols, out_b, self.cout, rows, plane);
        }
    }

    fn backward_input(&self, kernel: &[f64], g: &[f64], gi: &mut [f64]) {
        let plane = self.ho * self.wo;
        let rows = self.patch_rows();
        let mut kt = vec![0.0; rows * self.cout];
        for co in 0..self.cout {
            for r in 0..rows {
                kt[r * self.cout + co] = kernel[co * rows + r];
            }
        }
        let mut cols = vec![0.0; rows * plane];
        for (b, g_b) in g.chunks(self.cout * plane).enumerate() {
            cols.fill(0.0);
            matmul_into(&kt, g_b, &mut cols, rows, self.cout, plane);
            self.col2im(&cols, b, gi);
        }
    }

    fn backward_kernel(&self, input: &[f64], g: &[f64], gk: &mut [f64]) {
        let plane = self.ho * self.wo;
        let rows = self.patch_rows();
        let mut cols = vec![0.0; rows * plane];
        for (b, g_b) in g.chunks(self.cout * plane).enumerate() {
            self.im2col(input, b, &mut cols);
            for (co, g_row) in g_b.chunks(plane).enumerate() {
                for (r, col) in cols.chunks(plane).enumerate() {
                    gk[co * rows + r] += g_row.iter().zip(col).map(|(a, c)| a * c).sum::<f64>();
                }
            }
        }
    }

    fn backward_bias(&self, g: &[f64], gb: &mut [f64]) {
        let plane = self.ho * self.wo;
        for (c, chunk) in g.chunks(plane).enumerate() {
            gb[c % self.cout] += chunk.iter().sum::<f64>();
        }
    }
}
