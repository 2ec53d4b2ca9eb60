use super::kernels::{maxpool2, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    MatMul { a: Var, b: Var, n: usize, k: usize, m: usize },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Option<Var>, bias: Option<Var>, xhat: Vec<f64>, inv_std: f64 },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Slice { x: Var, start: usize },
    Concat(Vec<Var>),
    Custom(Vec<(Var, Tensor)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation, differentiated in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tape value that needed one.
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

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}"))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn spatial(shape: &[usize], op: &str) -> Result<(usize, [usize; 3])> {
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!("{op}: expected [C, D, H, W], got {shape:?}")));
    }
    Ok((shape[0], [shape[1], shape[2], shape[3]]))
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect()
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            ta.data().iter().map(|x| f(*x, y)).collect()
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            tb.data().iter().map(|y| f(x, *y)).collect()
        } else {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        };
        let shape = if ta.numel() == 1 && tb.numel() != 1 { tb.shape().to_vec() } else { ta.shape().to_vec() };
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect()).expect("same shape");
        self.derived(value, op, &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Matrix product. `[n, k] x [k, m] -> [n, m]`; a 1-D right operand is a
    /// column, giving `[n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (n, k) = match sa.as_slice() {
            [n, k] => (*n, *k),
            _ => return Err(mismatch("matmul", &sa, &sb)),
        };
        let (k2, m, out_shape) = match sb.as_slice() {
            [k2] => (*k2, 1, vec![n]),
            [k2, m] => (*k2, *m, vec![n, *m]),
            _ => return Err(mismatch("matmul", &sa, &sb)),
        };
        if k != k2 {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let row = &db[p * m..(p + 1) * m];
                for (o, bv) in out[i * m..(i + 1) * m].iter_mut().zip(row) {
                    *o += av * bv;
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.derived(value, Op::MatMul { a, b, n, k, m }, &[a, b]))
    }

    /// `W x + b` for a matrix `W` and vector `x`.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let y = self.matmul(w, x)?;
        self.add(y, b)
    }

    fn conv_bias(&self, b: Option<Var>, co: usize, name: &str) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).numel() != co {
                return Err(mismatch(name, self.shape(b), &[co]));
            }
        }
        Ok(())
    }

    fn add_channel_bias(&self, y: &mut [f64], b: Option<Var>, co: usize) {
        if let Some(b) = b {
            let per = y.len() / co;
            for (c, bv) in self.value(b).data().iter().enumerate() {
                for v in &mut y[c * per..(c + 1) * per] {
                    *v += bv;
                }
            }
        }
    }

    /// Cross-correlation of `x: [ci, D, H, W]` with `w: [co, ci, kd, kh, kw]`,
    /// zero padding `pad` on every side.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (ci, ext) = spatial(self.shape(x), "conv3d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 5 || ws[1] != ci {
            return Err(mismatch("conv3d", self.shape(x), &ws));
        }
        let geom = ConvGeom::forward(ci, ws[0], ext, [ws[2], ws[3], ws[4]], stride, pad)
            .ok_or_else(|| mismatch("conv3d", self.shape(x), &ws))?;
        self.conv_bias(b, geom.co, "conv3d")?;
        let mut y = vec![0.0; geom.co * geom.output.iter().product::<usize>()];
        geom.forward_into(self.value(x).data(), self.value(w).data(), &mut y);
        self.add_channel_bias(&mut y, b, geom.co);
        let mut shape = vec![geom.co];
        shape.extend(geom.output);
        let value = Tensor::new(shape, y)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(value, Op::Conv { x, w, b, geom }, &inputs))
    }

    /// Transposed convolution: the adjoint of [`conv3d`](Self::conv3d) without
    /// padding, for kernels laid out `[c_in, c_out, kd, kh, kw]`. Each
    /// extent maps to `(n - 1) * stride + k`.
    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (c_in, ext) = spatial(self.shape(x), "conv_transpose3d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 5 || ws[0] != c_in || stride == 0 || ext.contains(&0) {
            return Err(mismatch("conv_transpose3d", self.shape(x), &ws));
        }
        let k = [ws[2], ws[3], ws[4]];
        let out_ext = [0, 1, 2].map(|a| (ext[a] - 1) * stride + k[a]);
        // The forward conv that this op is the adjoint of.
        let geom = ConvGeom::forward(ws[1], c_in, out_ext, k, stride, 0).expect("valid by construction");
        debug_assert_eq!(geom.output, ext);
        self.conv_bias(b, ws[1], "conv_transpose3d")?;
        let mut y = vec![0.0; ws[1] * out_ext.iter().product::<usize>()];
        geom.backward_input(self.value(x).data(), self.value(w).data(), &mut y);
        self.add_channel_bias(&mut y, b, ws[1]);
        let mut shape = vec![ws[1]];
        shape.extend(out_ext);
        let value = Tensor::new(shape, y)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(value, Op::ConvTranspose { x, w, b, geom }, &inputs))
    }

    /// 2x2x2 max pooling, stride 2.
    pub fn maxpool3d(&mut self, x: Var) -> Result<Var> {
        let (c, ext) = spatial(self.shape(x), "maxpool3d")?;
        let (vals, argmax, out) = maxpool2(self.value(x).data(), c, ext);
        let value = Tensor::new(vec![c, out[0], out[1], out[2]], vals)?;
        Ok(self.derived(value, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let lse = log_sum_exp(t.data());
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| (v - lse).exp()).collect()).expect("same shape");
        self.derived(value, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let lse = log_sum_exp(t.data());
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v - lse).collect()).expect("same shape");
        self.derived(value, Op::LogSoftmax(x), &[x])
    }

    /// `(x - mean) / sqrt(var + 1e-5) * gain + bias` over all entries, with
    /// population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Option<Var>, bias: Option<Var>) -> Result<Var> {
        let t = self.value(x);
        let n = t.numel();
        for g in gain.iter().chain(bias.iter()) {
            if self.shape(*g) != t.shape() {
                return Err(mismatch("layer_norm", t.shape(), self.shape(*g)));
            }
        }
        let mean = t.data().iter().sum::<f64>() / n as f64;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let xhat: Vec<f64> = t.data().iter().map(|v| (v - mean) * inv_std).collect();
        let mut out = xhat.clone();
        if let Some(g) = gain {
            for (o, gv) in out.iter_mut().zip(self.value(g).data()) {
                *o *= gv;
            }
        }
        if let Some(b) = bias {
            for (o, bv) in out.iter_mut().zip(self.value(b).data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let mut inputs = vec![x];
        inputs.extend(gain);
        inputs.extend(bias);
        Ok(self.derived(value, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &inputs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.derived(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.derived(value, Op::Reshape(x), &[x]))
    }

    /// Flat entries `start..start + len` as a 1-D tensor.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if start + len > t.numel() {
            return Err(mismatch("slice", t.shape(), &[start, len]));
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec());
        Ok(self.derived(value, Op::Slice { x, start }, &[x]))
    }

    /// Flat concatenation into a 1-D tensor.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let data: Vec<f64> = xs.iter().flat_map(|v| self.value(*v).data().iter().copied()).collect();
        self.derived(Tensor::vector(data), Op::Concat(xs.to_vec()), xs)
    }

    /// A scalar computed outside the tape, with its gradient with respect to
    /// each listed input already known.
    pub fn custom_scalar(&mut self, value: f64, parents: Vec<(Var, Tensor)>) -> Result<Var> {
        for (v, g) in &parents {
            if g.shape() != self.shape(*v) {
                return Err(mismatch("custom_scalar", self.shape(*v), g.shape()));
            }
        }
        let inputs: Vec<Var> = parents.iter().map(|(v, _)| *v).collect();
        Ok(self.derived(Tensor::scalar(value), Op::Custom(parents), &inputs))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape")
    }

    /// Gradient for a binary operand that may have been scalar-broadcast.
    fn reduce_to(&self, v: Var, full: Vec<f64>) -> Tensor {
        if self.value(v).numel() == 1 && full.len() != 1 {
            self.like(v, vec![full.iter().sum()])
        } else {
            self.like(v, full)
        }
    }

    fn broadcast_get(t: &Tensor, i: usize) -> f64 {
        if t.numel() == 1 {
            t.data()[0]
        } else {
            t.data()[i]
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.accumulate(grads, *a, self.reduce_to(*a, gd.to_vec()));
                self.accumulate(grads, *b, self.reduce_to(*b, gd.iter().map(|v| sign * v).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let full = gd.iter().enumerate().map(|(k, g)| g * Self::broadcast_get(tb, k)).collect();
                    self.accumulate(grads, *a, self.reduce_to(*a, full));
                }
                if self.requires_grad(*b) {
                    let full = gd.iter().enumerate().map(|(k, g)| g * Self::broadcast_get(ta, k)).collect();
                    self.accumulate(grads, *b, self.reduce_to(*b, full));
                }
            }
            Op::Neg(x) => self.accumulate(grads, *x, self.like(*x, gd.iter().map(|v| -v).collect())),
            Op::Scale(x, c) => self.accumulate(grads, *x, self.like(*x, gd.iter().map(|v| c * v).collect())),
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let d = gd.iter().zip(xd).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Sigmoid(x) => {
                let s = node.value.data();
                let d = gd.iter().zip(s).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::MatMul { a, b, n, k, m } => {
                let (n, k, m) = (*n, *k, *m);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    // dA = G B^T
                    let mut ga = vec![0.0; n * k];
                    for r in 0..n {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for c in 0..m {
                                acc += gd[r * m + c] * db[p * m + c];
                            }
                            ga[r * k + p] = acc;
                        }
                    }
                    self.accumulate(grads, *a, self.like(*a, ga));
                }
                if self.requires_grad(*b) {
                    // dB = A^T G
                    let mut gb = vec![0.0; k * m];
                    for r in 0..n {
                        for p in 0..k {
                            let av = da[r * k + p];
                            for c in 0..m {
                                gb[p * m + c] += av * gd[r * m + c];
                            }
                        }
                    }
                    self.accumulate(grads, *b, self.like(*b, gb));
                }
            }
            Op::Conv { x, w, b, geom } => {
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; self.value(*x).numel()];
                    geom.backward_input(gd, self.value(*w).data(), &mut gx);
                    self.accumulate(grads, *x, self.like(*x, gx));
                }
                if self.requires_grad(*w) {
                    let mut gw = vec![0.0; geom.weight_len()];
                    geom.backward_weight(self.value(*x).data(), gd, &mut gw);
                    self.accumulate(grads, *w, self.like(*w, gw));
                }
                if let Some(b) = b {
                    self.accumulate(grads, *b, self.like(*b, channel_sums(gd, geom.co)));
                }
            }
            Op::ConvTranspose { x, w, b, geom } => {
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; self.value(*x).numel()];
                    geom.forward_into(gd, self.value(*w).data(), &mut gx);
                    self.accumulate(grads, *x, self.like(*x, gx));
                }
                if self.requires_grad(*w) {
                    let mut gw = vec![0.0; geom.weight_len()];
                    geom.backward_weight(gd, self.value(*x).data(), &mut gw);
                    self.accumulate(grads, *w, self.like(*w, gw));
                }
                if let Some(b) = b {
                    self.accumulate(grads, *b, self.like(*b, channel_sums(gd, geom.ci)));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (g, &j) in gd.iter().zip(argmax) {
                    gx[j] += g;
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Softmax(x) => {
                let p = node.value.data();
                let dot: f64 = gd.iter().zip(p).map(|(g, p)| g * p).sum();
                let d = gd.iter().zip(p).map(|(g, p)| p * (g - dot)).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::LogSoftmax(x) => {
                let total: f64 = gd.iter().sum();
                let d = gd.iter().zip(node.value.data()).map(|(g, l)| g - l.exp() * total).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let n = xhat.len() as f64;
                if let Some(b) = bias {
                    self.accumulate(grads, *b, self.like(*b, gd.to_vec()));
                }
                if let Some(gn) = gain {
                    let d = gd.iter().zip(xhat).map(|(g, h)| g * h).collect();
                    self.accumulate(grads, *gn, self.like(*gn, d));
                }
                if self.requires_grad(*x) {
                    let dxhat: Vec<f64> = match gain {
                        Some(gn) => gd.iter().zip(self.value(*gn).data()).map(|(g, w)| g * w).collect(),
                        None => gd.to_vec(),
                    };
                    let mean_d = dxhat.iter().sum::<f64>() / n;
                    let mean_dh = dxhat.iter().zip(xhat).map(|(d, h)| d * h).sum::<f64>() / n;
                    let d = dxhat.iter().zip(xhat).map(|(d, h)| inv_std * (d - mean_d - h * mean_dh)).collect();
                    self.accumulate(grads, *x, self.like(*x, d));
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0] / n as f64; n]));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, self.like(*x, gd.to_vec())),
            Op::Slice { x, start } => {
                let mut d = vec![0.0; self.value(*x).numel()];
                d[*start..*start + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for x in xs {
                    let n = self.value(*x).numel();
                    self.accumulate(grads, *x, self.like(*x, gd[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::Custom(parents) => {
                for (v, local) in parents {
                    let d = local.data().iter().map(|l| gd[0] * l).collect();
                    self.accumulate(grads, *v, self.like(*v, d));
                }
            }
        }
    }
}

fn channel_sums(g: &[f64], channels: usize) -> Vec<f64> {
    let per = g.len() / channels;
    (0..channels).map(|c| g[c * per..(c + 1) * per].iter().sum()).collect()
}
