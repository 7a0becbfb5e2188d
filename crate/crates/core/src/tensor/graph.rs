//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse. Convolution-like tensors use the `[C, H, W]`
//! layout, vectors are rank 1, and scalars have shape `[1]`.

use std::collections::BTreeMap;

use super::conv::{add_channel_bias, channel_sums_add, col2im_add, im2col, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Deconv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        /// Geometry of the adjoint convolution (over the output map).
        geom: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        input: Var,
        scale: T,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Narrow {
        input: Var,
        offset: usize,
    },
    GlobalAvgPool {
        input: Var,
        channels: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Sum(Var),
    WeightedSum(Vec<(Var, T)>),
    /// Scalar node whose local gradient w.r.t. each input was computed by the caller.
    ScalarFn {
        inputs: Vec<Var>,
        local_grads: Vec<Vec<T>>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    name: Option<String>,
}

/// Computation tape. Not shared across threads; one graph per forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn expect_rank(shape: &[usize], rank: usize, what: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::Dimension(format!(
            "{what}: expected rank {rank}, got shape {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies the forward value of `v` out as a tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("graph node shape")
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Leaf that takes the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Leaf that always tracks gradients.
    pub fn variable(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Named leaf; its gradient is reported under `name` by [`Gradients::named`].
    pub fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].name = Some(name.to_string());
        v
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        expect_rank(&xs, 3, "conv2d input")?;
        expect_rank(&ks, 4, "conv2d kernel")?;
        if ks[1] != xs[0] {
            return Err(Error::Dimension(format!(
                "conv2d: input has {} channels, kernel expects {}",
                xs[0], ks[1]
            )));
        }
        if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(Error::Contract(format!("conv2d: kernel extents {ks:?} must be odd")));
        }
        if stride == 0 || xs[1] % stride != 0 || xs[2] % stride != 0 {
            return Err(Error::Dimension(format!(
                "conv2d: extents {}x{} not divisible by stride {stride}",
                xs[1], xs[2]
            )));
        }
        if self.shape(bias) != [ks[0]] {
            return Err(Error::Dimension(format!(
                "conv2d: bias shape {:?} for {} output channels",
                self.shape(bias),
                ks[0]
            )));
        }
        let geom = ConvGeom {
            channels: xs[0],
            height: xs[1],
            width: xs[2],
            kh: ks[2],
            kw: ks[3],
            stride,
        };
        let cols = im2col(self.value(input), &geom);
        let (m, k, n) = (ks[0], geom.col_rows(), geom.col_cols());
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(kernel), false, &cols, false, &mut out, false);
        add_channel_bias(&mut out, self.value(bias));
        let requires_grad = self.rg(&[input, kernel, bias]);
        // Columns are only needed to form the kernel gradient.
        let cols = if self.nodes[kernel.0].requires_grad {
            cols
        } else {
            Vec::new()
        };
        let shape = vec![ks[0], geom.out_h(), geom.out_w()];
        Ok(self.push(
            shape,
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            requires_grad,
        ))
    }

    /// Transposed convolution that multiplies each spatial extent by `stride`.
    ///
    /// `kernel` has layout `[C_in, C_out, kh, kw]`, i.e. it is the kernel of the
    /// strided convolution this operation is the adjoint of.
    pub fn deconv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let ys = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        expect_rank(&ys, 3, "deconv2d input")?;
        expect_rank(&ks, 4, "deconv2d kernel")?;
        if ks[0] != ys[0] {
            return Err(Error::Dimension(format!(
                "deconv2d: input has {} channels, kernel expects {}",
                ys[0], ks[0]
            )));
        }
        if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(Error::Contract(format!("deconv2d: kernel extents {ks:?} must be odd")));
        }
        if stride == 0 {
            return Err(Error::Contract("deconv2d: zero stride".into()));
        }
        if self.shape(bias) != [ks[1]] {
            return Err(Error::Dimension(format!(
                "deconv2d: bias shape {:?} for {} output channels",
                self.shape(bias),
                ks[1]
            )));
        }
        let geom = ConvGeom {
            channels: ks[1],
            height: ys[1] * stride,
            width: ys[2] * stride,
            kh: ks[2],
            kw: ks[3],
            stride,
        };
        debug_assert_eq!(geom.out_h(), ys[1]);
        let (cin, rows, n) = (ys[0], geom.col_rows(), ys[1] * ys[2]);
        let mut cols = vec![T::zero(); rows * n];
        T::gemm(rows, cin, n, self.value(kernel), true, self.value(input), false, &mut cols, false);
        let mut out = vec![T::zero(); ks[1] * geom.height * geom.width];
        col2im_add(&cols, &geom, &mut out);
        add_channel_bias(&mut out, self.value(bias));
        let requires_grad = self.rg(&[input, kernel, bias]);
        let shape = vec![ks[1], geom.height, geom.width];
        Ok(self.push(
            shape,
            out,
            Op::Deconv2d {
                input,
                kernel,
                bias,
                geom,
            },
            requires_grad,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, op, rg))
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

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), value, op, rg)
    }

    /// `scale·x + offset`.
    pub fn affine(&mut self, input: Var, scale: T, offset: T) -> Var {
        self.unary(input, |x| scale * x + offset, Op::Affine { input, scale })
    }

    pub fn scale(&mut self, input: Var, scale: T) -> Var {
        self.affine(input, scale, T::zero())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    /// Concatenation along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != tail.len() + 1 || s[1..] != tail[..] {
                return Err(Error::Dimension(format!(
                    "concat: trailing extents {:?} vs {:?}",
                    &s[1..],
                    tail
                )));
            }
            lead += s[0];
        }
        let mut value = Vec::with_capacity(lead * tail.iter().product::<usize>());
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(parts);
        Ok(self.push(shape, value, Op::Concat(parts.to_vec()), rg))
    }

    /// Slice `[start, start + len)` of the leading axis.
    pub fn narrow(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if len == 0 || start + len > s[0] {
            return Err(Error::Dimension(format!(
                "narrow: range {start}..{} outside leading extent {}",
                start + len,
                s[0]
            )));
        }
        let inner: usize = s[1..].iter().product();
        let value = self.value(input)[start * inner..(start + len) * inner].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let rg = self.rg(&[input]);
        Ok(self.push(
            shape,
            value,
            Op::Narrow {
                input,
                offset: start * inner,
            },
            rg,
        ))
    }

    /// `[C, H, W] -> [C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        expect_rank(&s, 3, "global_avg_pool")?;
        let plane = s[1] * s[2];
        let inv = T::one() / T::lit(plane as f64);
        let value = self
            .value(input)
            .chunks(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.rg(&[input]);
        Ok(self.push(
            vec![s[0]],
            value,
            Op::GlobalAvgPool {
                input,
                channels: s[0],
            },
            rg,
        ))
    }

    /// `weight · input + bias` with `weight: [out, in]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        expect_rank(&xs, 1, "linear input")?;
        expect_rank(&ws, 2, "linear weight")?;
        if ws[1] != xs[0] || self.shape(bias) != [ws[0]] {
            return Err(Error::Dimension(format!(
                "linear: weight {ws:?}, input {xs:?}, bias {:?}",
                self.shape(bias)
            )));
        }
        let mut out = self.value(bias).to_vec();
        T::gemm(ws[0], ws[1], 1, self.value(weight), false, self.value(input), false, &mut out, true);
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(vec![ws[0]], out, Op::Linear { input, weight, bias }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).iter().copied().sum();
        let rg = self.rg(&[input]);
        self.push(vec![1], vec![total], Op::Sum(input), rg)
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            if self.shape(v) != [1] {
                return Err(Error::Dimension(format!(
                    "weighted_sum: term of shape {:?} is not scalar",
                    self.shape(v)
                )));
            }
            total += w * self.scalar(v);
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        Ok(self.push(vec![1], vec![total], Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Scalar node with caller-supplied value and local gradients, one per input.
    pub fn scalar_fn(&mut self, inputs: &[Var], value: T, local_grads: Vec<Vec<T>>) -> Result<Var> {
        if inputs.len() != local_grads.len() {
            return Err(Error::Contract("scalar_fn: one gradient per input".into()));
        }
        for (&v, g) in inputs.iter().zip(&local_grads) {
            if g.len() != self.value(v).len() {
                return Err(Error::Dimension(format!(
                    "scalar_fn: gradient of length {} for input of shape {:?}",
                    g.len(),
                    self.shape(v)
                )));
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            vec![1],
            vec![value],
            Op::ScalarFn {
                inputs: inputs.to_vec(),
                local_grads,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. The tape is cleared afterwards, so the
    /// graph can be reused for the next forward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != [1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut names = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.name {
                if let Some(g) = &grads[idx] {
                    if g.iter().any(|v| !v.is_finite()) {
                        let name = name.clone();
                        self.clear();
                        return Err(Error::Numeric(format!(
                            "non-finite gradient for parameter {name}"
                        )));
                    }
                }
                names.insert(name.clone(), idx);
            }
        }
        // Leaves without a path to the loss still get a (zero) gradient.
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(vec![T::zero(); node.value.len()]);
            }
        }
        self.clear();
        Ok(Gradients { grads, names })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let cout = node.shape[0];
                let (k, n) = (geom.col_rows(), geom.col_cols());
                if self.requires_grad(*kernel) {
                    let acc = self.grad_slot(grads, *kernel);
                    T::gemm(cout, n, k, g, false, cols, true, acc, true);
                }
                if self.requires_grad(*bias) {
                    channel_sums_add(g, cout, self.grad_slot(grads, *bias));
                }
                if self.requires_grad(*input) {
                    let mut dcols = vec![T::zero(); k * n];
                    T::gemm(k, cout, n, self.value(*kernel), true, g, false, &mut dcols, false);
                    col2im_add(&dcols, geom, self.grad_slot(grads, *input));
                }
            }
            Op::Deconv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let cout = node.shape[0];
                let cin = self.shape(*input)[0];
                let (rows, n) = (geom.col_rows(), geom.col_cols());
                if self.requires_grad(*bias) {
                    channel_sums_add(g, cout, self.grad_slot(grads, *bias));
                }
                let need_k = self.requires_grad(*kernel);
                let need_x = self.requires_grad(*input);
                if need_k || need_x {
                    let dcols = im2col(g, geom);
                    if need_k {
                        let acc = self.grad_slot(grads, *kernel);
                        T::gemm(cin, n, rows, self.value(*input), false, &dcols, true, acc, true);
                    }
                    if need_x {
                        let acc = self.grad_slot(grads, *input);
                        T::gemm(cin, rows, n, self.value(*kernel), false, &dcols, false, acc, true);
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |_| T::one(), g);
                self.accumulate(grads, *b, |_| T::one(), g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |_| T::one(), g);
                self.accumulate(grads, *b, |_| -T::one(), g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |i| bv[i], g);
                self.accumulate(grads, *b, |i| av[i], g);
            }
            Op::Affine { input, scale } => {
                let s = *scale;
                self.accumulate(grads, *input, |_| s, g);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    |i| if x[i] > T::zero() { T::one() } else { T::zero() },
                    g,
                );
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, |i| y[i] * (T::one() - y[i]), g);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, |i| T::one() - y[i] * y[i], g);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.requires_grad(p) {
                        let acc = self.grad_slot(grads, p);
                        for (a, &v) in acc.iter_mut().zip(&g[offset..offset + len]) {
                            *a += v;
                        }
                    }
                    offset += len;
                }
            }
            Op::Narrow { input, offset } => {
                if self.requires_grad(*input) {
                    let acc = self.grad_slot(grads, *input);
                    for (a, &v) in acc[*offset..*offset + g.len()].iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            Op::GlobalAvgPool { input, channels } => {
                if self.requires_grad(*input) {
                    let acc = self.grad_slot(grads, *input);
                    let plane = acc.len() / channels;
                    let inv = T::one() / T::lit(plane as f64);
                    for (chunk, &gc) in acc.chunks_mut(plane).zip(g) {
                        for a in chunk {
                            *a += gc * inv;
                        }
                    }
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let ws = self.shape(*weight);
                let (out, inp) = (ws[0], ws[1]);
                if self.requires_grad(*bias) {
                    for (a, &v) in self.grad_slot(grads, *bias).iter_mut().zip(g) {
                        *a += v;
                    }
                }
                if self.requires_grad(*weight) {
                    let x = self.value(*input);
                    T::gemm(out, 1, inp, g, false, x, false, self.grad_slot(grads, *weight), true);
                }
                if self.requires_grad(*input) {
                    let w = self.value(*weight);
                    T::gemm(inp, out, 1, w, true, g, false, self.grad_slot(grads, *input), true);
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                if self.requires_grad(*a) {
                    for v in self.grad_slot(grads, *a) {
                        *v += g0;
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if self.requires_grad(v) {
                        self.grad_slot(grads, v)[0] += w * g[0];
                    }
                }
            }
            Op::ScalarFn {
                inputs,
                local_grads,
            } => {
                for (&v, lg) in inputs.iter().zip(local_grads) {
                    if self.requires_grad(v) {
                        for (a, &l) in self.grad_slot(grads, v).iter_mut().zip(lg) {
                            *a += l * g[0];
                        }
                    }
                }
            }
        }
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> &'a mut [T] {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, local: impl Fn(usize) -> T, g: &[T]) {
        if !self.requires_grad(v) {
            return;
        }
        let acc = self.grad_slot(grads, v);
        for (i, (a, &gi)) in acc.iter_mut().zip(g).enumerate() {
            *a += local(i) * gi;
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Gradients produced by [`Graph::backward`], indexed by the (now cleared) graph's vars.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    names: BTreeMap<String, usize>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn named(&self, name: &str) -> Option<&[T]> {
        self.names.get(name).and_then(|&i| self.grads[i].as_deref())
    }

    /// Gradients of every named parameter, keyed by name.
    pub fn into_named(mut self) -> BTreeMap<String, Vec<T>> {
        self.names
            .iter()
            .filter_map(|(name, &i)| self.grads[i].take().map(|g| (name.clone(), g)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[4], &[1.0, -2.0, 3.0, 0.5]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[1.0; 4]);
        assert!(g.is_empty());
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let mut g = Graph::new();
        let data = [1.5, -2.0, 0.25];
        let x = g.variable(&t(&[3], &data));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        let expected: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.wrt(x).unwrap(), expected.as_slice());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut g = Graph::new();
        let w = g.param("head.weight", &t(&[1], &[1.0]).with_grad(true));
        let bad = g.constant(&t(&[1], &[f64::NAN]));
        let y = g.mul(w, bad).unwrap();
        let err = g.backward(y).err().unwrap();
        assert!(err.to_string().contains("head.weight"), "{err}");
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 1.0).collect();
        let x = g.constant(&t(&[1, 3, 4], &data));
        let k = g.constant(&t(&[1, 1, 1, 1], &[1.0]));
        let b = g.constant(&t(&[1], &[0.0]));
        let y = g.conv2d(x, k, b, 1).unwrap();
        assert_eq!(g.value(y), data.as_slice());
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&Tensor::zeros(&[2, 4, 4]));
        let k = g.constant(&Tensor::zeros(&[1, 3, 3, 3]));
        let b = g.constant(&Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, k, b, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn deconv_zero_kernel_gives_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&Tensor::full(&[1, 2, 2], 3.0));
        let k = g.constant(&Tensor::zeros(&[1, 2, 3, 3]));
        let b = g.constant(&t(&[2], &[0.75, -1.5]));
        let y = g.deconv2d(x, k, b, 2).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 4]);
        assert!(g.value(y)[..16].iter().all(|&v| v == 0.75));
        assert!(g.value(y)[16..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn shared_leaf_accumulates_gradient() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[2], &[1.0, 2.0]));
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[2.0, 2.0]);
    }
}
