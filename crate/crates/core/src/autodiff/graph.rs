use crate::tensor::{Scalar, ShapeError, Tensor};

use super::GraphError;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        k: usize,
        cols: Vec<T>,
    },
    AvgPool {
        x: Var,
        window: usize,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    ScaleChannels {
        x: Var,
        s: Var,
    },
    ScalePositions {
        x: Var,
        m: Var,
    },
    ChannelMean(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Blur {
        x: Var,
        kernel: Vec<T>,
    },
    Map {
        x: Var,
        derivative: fn(T) -> T,
    },
}

/// A tape of tensor operations. Nodes are appended in evaluation order, so
/// the tape is already a topological order and `backward` walks it in reverse.
pub struct Graph<T: Scalar> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Tensor<T>>>,
    ops: Vec<Op<T>>,
    requires: Vec<bool>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, detail: String) -> GraphError {
    GraphError::Shape(ShapeError::Mismatch { op, detail })
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.requires.push(requires);
        Var(self.values.len() - 1)
    }

    /// Constant leaf; no gradient is accumulated for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    fn req(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    fn chw(&self, v: Var, op: &'static str) -> Result<(usize, usize, usize), GraphError> {
        self.values[v.0].chw().map_err(|_| {
            mismatch(
                op,
                format!("expected rank-3 input, got {:?}", self.values[v.0].shape()),
            )
        })
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), GraphError> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Cross-correlation with zero padding. `w` is `(out, in, k, k)` and `b`
    /// is `(out)`. Output size is `(H + 2 pad - k) / stride + 1`, floored.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, GraphError> {
        let (c, h, wd) = self.chw(x, "conv2d")?;
        let (o, k) = match self.values[w.0].shape() {
            &[o, ci, k1, k2] if ci == c && k1 == k2 => (o, k1),
            s => {
                return Err(mismatch(
                    "conv2d",
                    format!("kernel {s:?} does not match {c} input channels"),
                ))
            }
        };
        if let Some(b) = b {
            if self.values[b.0].shape() != [o] {
                return Err(mismatch(
                    "conv2d",
                    format!("bias {:?}, expected [{o}]", self.values[b.0].shape()),
                ));
            }
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(mismatch(
                "conv2d",
                format!("kernel {k} stride {stride} pad {pad} on {h}x{wd}"),
            ));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let p = ho * wo;
        let kk = c * k * k;
        let pointwise = k == 1 && stride == 1 && pad == 0;
        let xv = self.values[x.0].data();
        let cols = if pointwise {
            Vec::new()
        } else {
            im2col(xv, c, h, wd, k, stride, pad, ho, wo)
        };
        let mut out = vec![T::zero(); o * p];
        if let Some(b) = b {
            let bias = self.values[b.0].data();
            for (row, &bv) in out.chunks_exact_mut(p).zip(bias) {
                row.fill(bv);
            }
        }
        let src = if pointwise { xv } else { &cols };
        T::gemm(
            o,
            kk,
            p,
            T::one(),
            self.values[w.0].data(),
            (kk as isize, 1),
            src,
            (p as isize, 1),
            T::one(),
            &mut out,
            (p as isize, 1),
        );
        let req = self.req(&[x, w]) || b.is_some_and(|b| self.requires[b.0]);
        let value = Tensor::new(&[o, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                k,
                cols,
            },
            req,
        ))
    }

    pub fn avg_pool2d(&mut self, x: Var, window: usize) -> Result<Var, GraphError> {
        let (c, h, w) = self.chw(x, "avg_pool2d")?;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(mismatch(
                "avg_pool2d",
                format!("window {window} does not divide {h}x{w}"),
            ));
        }
        let (ho, wo) = (h / window, w / window);
        let xv = self.values[x.0].data();
        let scale = T::of(1.0 / (window * window) as f64);
        let mut out = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for i in 0..h {
                let row = &xv[(ch * h + i) * w..(ch * h + i + 1) * w];
                let orow = &mut out[(ch * ho + i / window) * wo..(ch * ho + i / window + 1) * wo];
                for (j, &v) in row.iter().enumerate() {
                    orow[j / window] += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let value = Tensor::new(&[c, ho, wo], out)?;
        let req = self.req(&[x]);
        Ok(self.push(value, Op::AvgPool { x, window }, req))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, GraphError> {
        let (c, h, w) = self.chw(x, "upsample_nearest")?;
        if factor == 0 {
            return Err(mismatch(
                "upsample_nearest",
                "factor must be positive".into(),
            ));
        }
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.values[x.0].data();
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for i in 0..ho {
                let row = &xv[(ch * h + i / factor) * w..(ch * h + i / factor + 1) * w];
                out.extend((0..wo).map(|j| row[j / factor]));
            }
        }
        let value = Tensor::new(&[c, ho, wo], out)?;
        let req = self.req(&[x]);
        Ok(self.push(value, Op::Upsample { x, factor }, req))
    }

    /// Depth-to-space: channel `c * r^2 + i * r + j` at `(h, w)` moves to
    /// channel `c` at `(h * r + i, w * r + j)`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var, GraphError> {
        let (c, h, w) = self.chw(x, "pixel_shuffle")?;
        if r == 0 || c % (r * r) != 0 {
            return Err(mismatch(
                "pixel_shuffle",
                format!("{c} channels not divisible by {}", r * r),
            ));
        }
        let co = c / (r * r);
        let xv = self.values[x.0].data();
        let mut out = vec![T::zero(); xv.len()];
        for (src, dst) in shuffle_indices(co, h, w, r) {
            out[dst] = xv[src];
        }
        let value = Tensor::new(&[co, h * r, w * r], out)?;
        let req = self.req(&[x]);
        Ok(self.push(value, Op::PixelShuffle { x, r }, req))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.values[x.0].map(f);
        let req = self.req(&[x]);
        self.push(value, op, req)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            Op::Relu(x),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    /// Logistic function. Saturated results are pulled back inside the open
    /// interval (0, 1) so the output never reaches either endpoint.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    /// Elementwise `f` with user supplied derivative `df`.
    pub fn map(&mut self, x: Var, f: fn(T) -> T, df: fn(T) -> T) -> Var {
        self.unary(x, f, Op::Map { x, derivative: df })
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, GraphError> {
        self.same_shape(a, b, name)?;
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let value = Tensor::new(av.shape(), data)?;
        let req = self.req(&[a, b]);
        Ok(self.push(value, op, req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, "div", |p, q| p / q, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::MulScalar(x, c))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x)
            .expect("a tensor always matches its own shape")
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let Some(&first) = parts.first() else {
            return Err(mismatch("concat", "no inputs".into()));
        };
        let (_, h, w) = self.chw(first, "concat")?;
        let mut channels = 0;
        for &p in parts {
            let (c, ph, pw) = self.chw(p, "concat")?;
            if (ph, pw) != (h, w) {
                return Err(mismatch("concat", format!("{ph}x{pw} vs {h}x{w}")));
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for &p in parts {
            data.extend_from_slice(self.values[p.0].data());
        }
        let value = Tensor::new(&[channels, h, w], data)?;
        let req = self.req(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), req))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, GraphError> {
        let (c, h, w) = self.chw(x, "global_avg_pool")?;
        let xv = &self.values[x.0];
        let scale = T::of(1.0 / (h * w) as f64);
        let data = (0..c)
            .map(|ch| xv.channel(ch).iter().copied().sum::<T>() * scale)
            .collect();
        let value = Tensor::new(&[c, 1, 1], data)?;
        let req = self.req(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool(x), req))
    }

    /// `x[c, i, j] * s[c]` for `s` of shape `(C, 1, 1)`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var, GraphError> {
        let (c, h, w) = self.chw(x, "scale_channels")?;
        if self.values[s.0].shape() != [c, 1, 1] {
            return Err(mismatch(
                "scale_channels",
                format!("scale {:?} for {c} channels", self.values[s.0].shape()),
            ));
        }
        let sv = self.values[s.0].data();
        let xv = self.values[x.0].data();
        let plane = h * w;
        let data = xv
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv[i / plane])
            .collect();
        let value = Tensor::new(&[c, h, w], data)?;
        let req = self.req(&[x, s]);
        Ok(self.push(value, Op::ScaleChannels { x, s }, req))
    }

    /// `x[c, i, j] * m[0, i, j]` for `m` of shape `(1, H, W)`.
    pub fn scale_positions(&mut self, x: Var, m: Var) -> Result<Var, GraphError> {
        let (c, h, w) = self.chw(x, "scale_positions")?;
        if self.values[m.0].shape() != [1, h, w] {
            return Err(mismatch(
                "scale_positions",
                format!("map {:?} for {h}x{w}", self.values[m.0].shape()),
            ));
        }
        let mv = self.values[m.0].data();
        let xv = self.values[x.0].data();
        let plane = h * w;
        let data = xv
            .iter()
            .enumerate()
            .map(|(i, &v)| v * mv[i % plane])
            .collect();
        let value = Tensor::new(&[c, h, w], data)?;
        let req = self.req(&[x, m]);
        Ok(self.push(value, Op::ScalePositions { x, m }, req))
    }

    pub fn channel_mean(&mut self, x: Var) -> Result<Var, GraphError> {
        let (c, h, w) = self.chw(x, "channel_mean")?;
        let xv = &self.values[x.0];
        let plane = h * w;
        let mut data = vec![T::zero(); plane];
        for ch in 0..c {
            for (d, &v) in data.iter_mut().zip(xv.channel(ch)) {
                *d += v;
            }
        }
        let scale = T::of(1.0 / c as f64);
        data.iter_mut().for_each(|v| *v *= scale);
        let value = Tensor::new(&[1, h, w], data)?;
        let req = self.req(&[x]);
        Ok(self.push(value, Op::ChannelMean(x), req))
    }

    /// Maximum over channels. Ties resolve to the lowest channel index.
    pub fn channel_max(&mut self, x: Var) -> Result<Var, GraphError> {
        let (c, h, w) = self.chw(x, "channel_max")?;
        let xv = &self.values[x.0];
        let plane = h * w;
        let mut data = xv.channel(0).to_vec();
        let mut argmax = vec![0usize; plane];
        for ch in 1..c {
            for (i, &v) in xv.channel(ch).iter().enumerate() {
                if v > data[i] {
                    data[i] = v;
                    argmax[i] = ch;
                }
            }
        }
        let value = Tensor::new(&[1, h, w], data)?;
        let req = self.req(&[x]);
        Ok(self.push(value, Op::ChannelMax { x, argmax }, req))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.values[x.0].sum());
        let req = self.req(&[x]);
        self.push(value, Op::Sum(x), req)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.values[x.0].mean());
        let req = self.req(&[x]);
        self.push(value, Op::Mean(x), req)
    }

    /// Separable filtering with `kernel` along both axes, "valid" positions
    /// only: each spatial side shrinks by `kernel.len() - 1`.
    pub fn blur_valid(&mut self, x: Var, kernel: &[T]) -> Result<Var, GraphError> {
        let (c, h, w) = self.chw(x, "blur_valid")?;
        let k = kernel.len();
        if k == 0 || k > h || k > w {
            return Err(mismatch(
                "blur_valid",
                format!("kernel {k} larger than {h}x{w}"),
            ));
        }
        let data = separable_valid(self.values[x.0].data(), c, h, w, kernel);
        let value = Tensor::new(&[c, h - k + 1, w - k + 1], data)?;
        let req = self.req(&[x]);
        Ok(self.push(
            value,
            Op::Blur {
                x,
                kernel: kernel.to_vec(),
            },
            req,
        ))
    }

    /// Fingerprint of every piecewise choice on the tape: relu and abs signs
    /// and channel-max winners. Two evaluations with equal fingerprints lie
    /// on the same smooth piece.
    pub fn branch_fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for op in &self.ops {
            match op {
                Op::Relu(x) => self.values[x.0]
                    .data()
                    .iter()
                    .for_each(|v| (*v > T::zero()).hash(&mut h)),
                Op::Abs(x) => self.values[x.0]
                    .data()
                    .iter()
                    .for_each(|v| (*v >= T::zero()).hash(&mut h)),
                Op::ChannelMax { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients accumulate into
    /// every node that requires them; call on a fresh graph per step.
    pub fn backward(&mut self, loss: Var) -> Result<(), GraphError> {
        if !self.values[loss.0].is_scalar() {
            return Err(GraphError::NonScalarLoss(
                self.values[loss.0].shape().to_vec(),
            ));
        }
        self.grads[loss.0] = Some(Tensor::full(self.values[loss.0].shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.requires[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor<T>) {
        let Self {
            values,
            grads,
            ops,
            requires,
        } = self;
        let values = &*values;
        let requires = &*requires;
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(grads, values, requires, $v)
            };
        }
        let gv = g.data();
        let y = values[i].data();
        match &ops[i] {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                k,
                cols,
            } => {
                let (c, h, wd) = values[x.0].chw().expect("checked in forward");
                let (o, ho, wo) = values[i].chw().expect("conv output is rank 3");
                let p = ho * wo;
                let kk = c * k * k;
                let pointwise = cols.is_empty();
                let src = if pointwise {
                    values[x.0].data()
                } else {
                    cols.as_slice()
                };
                if let Some(db) = b.and_then(|b| slot!(b)) {
                    for (d, row) in db.iter_mut().zip(gv.chunks_exact(p)) {
                        *d += row.iter().copied().sum::<T>();
                    }
                }
                if let Some(dw) = slot!(*w) {
                    // dW (o x kk) += g (o x p) * cols^T (p x kk)
                    T::gemm(
                        o,
                        p,
                        kk,
                        T::one(),
                        gv,
                        (p as isize, 1),
                        src,
                        (1, p as isize),
                        T::one(),
                        dw,
                        (kk as isize, 1),
                    );
                }
                if requires[x.0] {
                    let wv = values[w.0].data();
                    if pointwise {
                        let dx = slot!(*x).expect("requires checked");
                        T::gemm(
                            kk,
                            o,
                            p,
                            T::one(),
                            wv,
                            (1, kk as isize),
                            gv,
                            (p as isize, 1),
                            T::one(),
                            dx,
                            (p as isize, 1),
                        );
                    } else {
                        let mut dcols = vec![T::zero(); kk * p];
                        T::gemm(
                            kk,
                            o,
                            p,
                            T::one(),
                            wv,
                            (1, kk as isize),
                            gv,
                            (p as isize, 1),
                            T::zero(),
                            &mut dcols,
                            (p as isize, 1),
                        );
                        let dx = slot!(*x).expect("requires checked");
                        col2im(&dcols, dx, c, h, wd, *k, *stride, *pad, ho, wo);
                    }
                }
            }
            Op::AvgPool { x, window } => {
                let (c, h, w) = values[x.0].chw().expect("checked in forward");
                let (ho, wo) = (h / window, w / window);
                let scale = T::of(1.0 / (window * window) as f64);
                if let Some(dx) = slot!(*x) {
                    for ch in 0..c {
                        for r in 0..h {
                            let grow =
                                &gv[(ch * ho + r / window) * wo..(ch * ho + r / window + 1) * wo];
                            for (j, d) in dx[(ch * h + r) * w..(ch * h + r + 1) * w]
                                .iter_mut()
                                .enumerate()
                            {
                                *d += grow[j / window] * scale;
                            }
                        }
                    }
                }
            }
            Op::Upsample { x, factor } => {
                let (c, h, w) = values[x.0].chw().expect("checked in forward");
                let wo = w * factor;
                if let Some(dx) = slot!(*x) {
                    for ch in 0..c {
                        for r in 0..h * factor {
                            let grow =
                                &gv[(ch * h * factor + r) * wo..(ch * h * factor + r + 1) * wo];
                            let drow =
                                &mut dx[(ch * h + r / factor) * w..(ch * h + r / factor + 1) * w];
                            for (j, &gval) in grow.iter().enumerate() {
                                drow[j / factor] += gval;
                            }
                        }
                    }
                }
            }
            Op::PixelShuffle { x, r } => {
                let (co, ho, wo) = values[i].chw().expect("shuffle output is rank 3");
                if let Some(dx) = slot!(*x) {
                    for (src, dst) in shuffle_indices(co, ho / r, wo / r, *r) {
                        dx[src] += gv[dst];
                    }
                }
            }
            Op::Relu(x) => {
                let xv = values[x.0].data();
                if let Some(dx) = slot!(*x) {
                    for ((d, &gval), &v) in dx.iter_mut().zip(gv).zip(xv) {
                        if v > T::zero() {
                            *d += gval;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = slot!(*x) {
                    for ((d, &gval), &t) in dx.iter_mut().zip(gv).zip(y) {
                        *d += gval * (T::one() - t * t);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = slot!(*x) {
                    for ((d, &gval), &s) in dx.iter_mut().zip(gv).zip(y) {
                        *d += gval * s * (T::one() - s);
                    }
                }
            }
            Op::Abs(x) => {
                let xv = values[x.0].data();
                if let Some(dx) = slot!(*x) {
                    for ((d, &gval), &v) in dx.iter_mut().zip(gv).zip(xv) {
                        if v > T::zero() {
                            *d += gval;
                        } else if v < T::zero() {
                            *d -= gval;
                        }
                    }
                }
            }
            Op::Map { x, derivative } => {
                let xv = values[x.0].data();
                if let Some(dx) = slot!(*x) {
                    for ((d, &gval), &v) in dx.iter_mut().zip(gv).zip(xv) {
                        *d += gval * derivative(v);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(ops[i], Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if let Some(da) = slot!(*a) {
                    da.iter_mut().zip(gv).for_each(|(d, &gval)| *d += gval);
                }
                if let Some(db) = slot!(*b) {
                    db.iter_mut()
                        .zip(gv)
                        .for_each(|(d, &gval)| *d += sign * gval);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (values[a.0].data(), values[b.0].data());
                if let Some(da) = slot!(*a) {
                    for ((d, &gval), &q) in da.iter_mut().zip(gv).zip(bv) {
                        *d += gval * q;
                    }
                }
                if let Some(db) = slot!(*b) {
                    for ((d, &gval), &p) in db.iter_mut().zip(gv).zip(av) {
                        *d += gval * p;
                    }
                }
            }
            Op::Div(a, b) => {
                let bv = values[b.0].data();
                if let Some(da) = slot!(*a) {
                    for ((d, &gval), &q) in da.iter_mut().zip(gv).zip(bv) {
                        *d += gval / q;
                    }
                }
                if let Some(db) = slot!(*b) {
                    for (((d, &gval), &q), &out) in db.iter_mut().zip(gv).zip(bv).zip(y) {
                        *d -= gval * out / q;
                    }
                }
            }
            Op::AddScalar(x) => {
                if let Some(dx) = slot!(*x) {
                    dx.iter_mut().zip(gv).for_each(|(d, &gval)| *d += gval);
                }
            }
            Op::MulScalar(x, c) => {
                if let Some(dx) = slot!(*x) {
                    dx.iter_mut().zip(gv).for_each(|(d, &gval)| *d += gval * *c);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = values[p.0].len();
                    if let Some(dp) = slot!(*p) {
                        dp.iter_mut()
                            .zip(&gv[offset..offset + n])
                            .for_each(|(d, &gval)| *d += gval);
                    }
                    offset += n;
                }
            }
            Op::GlobalAvgPool(x) => {
                let (_, h, w) = values[x.0].chw().expect("checked in forward");
                let plane = h * w;
                let scale = T::of(1.0 / plane as f64);
                if let Some(dx) = slot!(*x) {
                    for (idx, d) in dx.iter_mut().enumerate() {
                        *d += gv[idx / plane] * scale;
                    }
                }
            }
            Op::ScaleChannels { x, s } => {
                let (_, h, w) = values[x.0].chw().expect("checked in forward");
                let plane = h * w;
                let (xv, sv) = (values[x.0].data(), values[s.0].data());
                if let Some(dx) = slot!(*x) {
                    for (idx, d) in dx.iter_mut().enumerate() {
                        *d += gv[idx] * sv[idx / plane];
                    }
                }
                if let Some(ds) = slot!(*s) {
                    for (ch, d) in ds.iter_mut().enumerate() {
                        let range = ch * plane..(ch + 1) * plane;
                        *d += gv[range.clone()]
                            .iter()
                            .zip(&xv[range])
                            .map(|(&a, &b)| a * b)
                            .sum::<T>();
                    }
                }
            }
            Op::ScalePositions { x, m } => {
                let (_, h, w) = values[x.0].chw().expect("checked in forward");
                let plane = h * w;
                let (xv, mv) = (values[x.0].data(), values[m.0].data());
                if let Some(dx) = slot!(*x) {
                    for (idx, d) in dx.iter_mut().enumerate() {
                        *d += gv[idx] * mv[idx % plane];
                    }
                }
                if let Some(dm) = slot!(*m) {
                    for (idx, (&gval, &v)) in gv.iter().zip(xv).enumerate() {
                        dm[idx % plane] += gval * v;
                    }
                }
            }
            Op::ChannelMean(x) => {
                let (c, h, w) = values[x.0].chw().expect("checked in forward");
                let plane = h * w;
                let scale = T::of(1.0 / c as f64);
                if let Some(dx) = slot!(*x) {
                    for (idx, d) in dx.iter_mut().enumerate() {
                        *d += gv[idx % plane] * scale;
                    }
                }
            }
            Op::ChannelMax { x, argmax } => {
                let plane = argmax.len();
                if let Some(dx) = slot!(*x) {
                    for (pos, &ch) in argmax.iter().enumerate() {
                        dx[ch * plane + pos] += gv[pos];
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = slot!(*x) {
                    dx.iter_mut().for_each(|d| *d += gv[0]);
                }
            }
            Op::Mean(x) => {
                let n = T::of(values[x.0].len() as f64);
                if let Some(dx) = slot!(*x) {
                    dx.iter_mut().for_each(|d| *d += gv[0] / n);
                }
            }
            Op::Blur { x, kernel } => {
                let (c, h, w) = values[x.0].chw().expect("checked in forward");
                if let Some(dx) = slot!(*x) {
                    separable_valid_transpose(gv, dx, c, h, w, kernel);
                }
            }
        }
    }
}

// Gradient buffer of `v`, allocated on first use, or None when `v` does not
// take part in differentiation.
fn grad_slot<'a, T: Scalar>(
    grads: &'a mut [Option<Tensor<T>>],
    values: &[Tensor<T>],
    requires: &[bool],
    v: Var,
) -> Option<&'a mut [T]> {
    if !requires[v.0] {
        return None;
    }
    Some(
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(values[v.0].shape()))
            .data_mut(),
    )
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let tiny = T::min_positive_value();
    let top = T::one() - T::epsilon() / T::of(2.0);
    s.max(tiny).min(top)
}

fn shuffle_indices(
    co: usize,
    h: usize,
    w: usize,
    r: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let (ho, wo) = (h * r, w * r);
    (0..co).flat_map(move |c| {
        (0..r * r).flat_map(move |sub| {
            let (di, dj) = (sub / r, sub % r);
            (0..h * w).map(move |pos| {
                let (y, x) = (pos / w, pos % w);
                let src = ((c * r * r + sub) * h + y) * w + x;
                let dst = (c * ho + y * r + di) * wo + x * r + dj;
                (src, dst)
            })
        })
    })
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let p = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * p];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(ch * h + iy as usize) * w..(ch * h + iy as usize + 1) * w];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    dx: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let p = ho * wo;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dx[(ch * h + iy as usize) * w..(ch * h + iy as usize + 1) * w];
                    for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn separable_valid<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kernel: &[T],
) -> Vec<T> {
    let k = kernel.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut tmp = vec![T::zero(); c * h * wo];
    for (src, dst) in x.chunks_exact(w).zip(tmp.chunks_exact_mut(wo)) {
        for (j, d) in dst.iter_mut().enumerate() {
            *d = src[j..j + k].iter().zip(kernel).map(|(&a, &b)| a * b).sum();
        }
    }
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let plane = &tmp[ch * h * wo..(ch + 1) * h * wo];
        for i in 0..ho {
            let dst = &mut out[(ch * ho + i) * wo..(ch * ho + i + 1) * wo];
            for (a, &kv) in kernel.iter().enumerate() {
                let src = &plane[(i + a) * wo..(i + a + 1) * wo];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += kv * s);
            }
        }
    }
    out
}

fn separable_valid_transpose<T: Scalar>(
    g: &[T],
    dx: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    kernel: &[T],
) {
    let k = kernel.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut tmp = vec![T::zero(); c * h * wo];
    for ch in 0..c {
        let plane = &mut tmp[ch * h * wo..(ch + 1) * h * wo];
        for i in 0..ho {
            let src = &g[(ch * ho + i) * wo..(ch * ho + i + 1) * wo];
            for (a, &kv) in kernel.iter().enumerate() {
                let dst = &mut plane[(i + a) * wo..(i + a + 1) * wo];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += kv * s);
            }
        }
    }
    for (src, dst) in tmp.chunks_exact(wo).zip(dx.chunks_exact_mut(w)) {
        for (j, &s) in src.iter().enumerate() {
            for (b, &kv) in kernel.iter().enumerate() {
                dst[j + b] += kv * s;
            }
        }
    }
}
