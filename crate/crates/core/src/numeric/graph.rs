//! Reverse-mode differentiation over a dynamically recorded expression graph.
//!
//! Every operation on a [`Graph`] evaluates eagerly and appends a node that
//! remembers its operands. [`Graph::backward`] walks the nodes in reverse
//! insertion order (which is a valid topological order) and accumulates
//! adjoints. Parameter nodes borrow their values from a [`ParamStore`], so
//! recording a forward pass never copies weights.
//!
//! ```
//! use dxann::numeric::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.add("x", Tensor::vector(vec![1.0, 2.0])).unwrap();
//!
//! let mut g = Graph::new();
//! let xv = g.param(&store, x);
//! let sq = g.mul(xv, xv).unwrap();
//! let loss = g.sum(sq, None).unwrap();
//! let grads = g.backward(loss).unwrap();
//! store.accumulate(&grads).unwrap();
//! assert_eq!(store.get(x).grad.data(), &[2.0, 4.0]);
//! ```

use std::borrow::Cow;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    AddChannel(Var, Var),
    Conv2d { input: Var, kernels: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Neg(Var),
    Square(Var),
    Sum { input: Var, axes: Vec<usize> },
    Narrow { input: Var, axis: usize, start: usize },
    Reshape(Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// Recorded computation. The lifetime ties parameter nodes to the store
/// they were read from.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    per_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` lies on a path to it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.per_node.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter node that was reached.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(pid, node)| self.per_node[node].as_ref().map(|g| (pid, g)))
    }
}

impl ParamStore {
    /// Adds the parameter gradients in `grads` onto the stored gradients.
    /// Parameters that did not contribute to the loss are left unchanged.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (pid, g) in grads.params() {
            let p = self.get_mut(pid);
            if p.grad.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "gradient for `{}` has shape {:?}, parameter has {:?}",
                    p.id,
                    g.shape(),
                    p.value.shape()
                )));
            }
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        Ok(())
    }
}

fn dim_err<T>(msg: String) -> Result<T> {
    Err(Error::Dimension(msg))
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a constant leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Input)
    }

    /// Records a leaf that borrows a parameter value; its gradient is
    /// reported under `id`.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.push(Cow::Borrowed(store.value(id)), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b)))
    }

    /// `a[m,n] + bias[n]` added to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if av.rank() != 2 || bv.rank() != 1 || av.shape()[1] != bv.len() {
            return dim_err(format!(
                "add_row of {:?} and bias {:?}",
                av.shape(),
                bv.shape()
            ));
        }
        let n = bv.len();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(Cow::Owned(out), Op::AddRow(a, bias)))
    }

    /// `a[B,C,H,W] + bias[C]` added to every spatial position of channel c.
    pub fn add_channel(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if av.rank() != 4 || bv.rank() != 1 || av.shape()[1] != bv.len() {
            return dim_err(format!(
                "add_channel of {:?} and bias {:?}",
                av.shape(),
                bv.shape()
            ));
        }
        let plane = av.shape()[2] * av.shape()[3];
        let c = bv.len();
        let mut out = av.clone();
        for (k, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let b = bv.data()[k % c];
            for o in chunk {
                *o += b;
            }
        }
        Ok(self.push(Cow::Owned(out), Op::AddChannel(a, bias)))
    }

    /// Stride-1 "same" cross-correlation of `input[B,Cin,H,W]` with
    /// `kernels[Cout,Cin,kH,kW]`, plus a per-output-channel bias.
    /// Kernel sizes must be odd.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let out = conv2d_forward(self.value(input), self.value(kernels))?;
        let conv = self.push(Cow::Owned(out), Op::Conv2d { input, kernels });
        self.add_channel(conv, bias)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.shape() == bv.shape() {
            av.zip_with(bv, f)?
        } else if bv.is_scalar_like() {
            let s = bv.data()[0];
            av.map(|x| f(x, s))
        } else if av.is_scalar_like() {
            let s = av.data()[0];
            bv.map(|x| f(s, x))
        } else {
            return dim_err(format!(
                "{name} of shapes {:?} and {:?}",
                av.shape(),
                bv.shape()
            ));
        };
        Ok(self.push(Cow::Owned(out), op))
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

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(Cow::Owned(out), Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(Cow::Owned(out), Op::MulScalar(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Cow::Owned(out), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(Cow::Owned(out), Op::Exp(a))
    }

    /// Natural log; every element must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if let Some(bad) = av.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let out = av.map(f64::ln);
        Ok(self.push(Cow::Owned(out), Op::Log(a)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        self.push(Cow::Owned(out), Op::Neg(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(Cow::Owned(out), Op::Square(a))
    }

    /// Sums over `axes` (all axes when `None`), dropping the reduced axes.
    /// Accumulation runs in flat index order.
    pub fn sum(&mut self, a: Var, axes: Option<&[usize]>) -> Result<Var> {
        let av = self.value(a);
        let rank = av.rank();
        let mut axes: Vec<usize> = match axes {
            Some(ax) => ax.to_vec(),
            None => (0..rank).collect(),
        };
        axes.sort_unstable();
        axes.dedup();
        if let Some(&bad) = axes.iter().find(|&&ax| ax >= rank) {
            return dim_err(format!("sum axis {bad} out of range for shape {:?}", av.shape()));
        }
        let out = reduce_sum(av, &axes);
        Ok(self.push(Cow::Owned(out), Op::Sum { input: a, axes }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return dim_err(format!(
                "narrow axis {axis} [{start}, {}) of shape {shape:?}",
                start + len
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&av.data()[base..base + len * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        let out = Tensor::new(&new_shape, data)?;
        Ok(self.push(Cow::Owned(out), Op::Narrow { input: a, axis, start }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(Cow::Owned(out), Op::Reshape(a)))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => params.push((*pid, idx)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = g.matmul(&bv.transpose()?)?;
                    let gb = av.transpose()?.matmul(&g)?;
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let n = self.value(*b).len();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    add_grad(&mut grads, *b, Tensor::vector(gb));
                    add_grad(&mut grads, *a, g.clone());
                }
                Op::AddChannel(a, b) => {
                    let shape = g.shape();
                    let plane = shape[2] * shape[3];
                    let c = shape[1];
                    let mut gb = vec![0.0; c];
                    for (k, chunk) in g.data().chunks(plane).enumerate() {
                        gb[k % c] += chunk.iter().sum::<f64>();
                    }
                    add_grad(&mut grads, *b, Tensor::vector(gb));
                    add_grad(&mut grads, *a, g.clone());
                }
                Op::Conv2d { input, kernels } => {
                    let (gi, gk) =
                        conv2d_backward(self.value(*input), self.value(*kernels), &g)?;
                    add_grad(&mut grads, *input, gi);
                    add_grad(&mut grads, *kernels, gk);
                }
                Op::Add(a, b) => {
                    let ga = unbroadcast(&g, self.value(*a));
                    let gb = unbroadcast(&g, self.value(*b));
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::Sub(a, b) => {
                    let ga = unbroadcast(&g, self.value(*a));
                    let gb = unbroadcast(&g.map(|x| -x), self.value(*b));
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = unbroadcast(&broadcast_mul(&g, bv), av);
                    let gb = unbroadcast(&broadcast_mul(&g, av), bv);
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::AddScalar(a) => add_grad(&mut grads, *a, g.clone()),
                Op::MulScalar(a, c) => {
                    let c = *c;
                    add_grad(&mut grads, *a, g.map(|x| x * c));
                }
                Op::Tanh(a) => {
                    let ga = g.zip_with(&node.value, |gi, y| gi * (1.0 - y * y))?;
                    add_grad(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_with(&node.value, |gi, y| gi * y)?;
                    add_grad(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip_with(self.value(*a), |gi, x| gi / x)?;
                    add_grad(&mut grads, *a, ga);
                }
                Op::Neg(a) => add_grad(&mut grads, *a, g.map(|x| -x)),
                Op::Square(a) => {
                    let ga = g.zip_with(self.value(*a), |gi, x| 2.0 * gi * x)?;
                    add_grad(&mut grads, *a, ga);
                }
                Op::Sum { input, axes } => {
                    let ga = expand_sum_grad(&g, self.value(*input).shape(), axes);
                    add_grad(&mut grads, *input, ga);
                }
                Op::Narrow { input, axis, start } => {
                    let in_shape = self.value(*input).shape();
                    let outer: usize = in_shape[..*axis].iter().product();
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let full = in_shape[*axis];
                    let len = g.shape()[*axis];
                    let mut ga = Tensor::zeros(in_shape);
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        ga.data_mut()[dst..dst + len * inner]
                            .copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    add_grad(&mut grads, *input, ga);
                }
                Op::Reshape(a) => {
                    let ga = g.reshape(self.value(*a).shape())?;
                    add_grad(&mut grads, *a, ga);
                }
            }
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            per_node: grads,
            params,
        })
    }
}

fn add_grad(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Elementwise product where `other` may be scalar-like.
fn broadcast_mul(g: &Tensor, other: &Tensor) -> Tensor {
    if other.shape() == g.shape() {
        g.zip_with(other, |a, b| a * b).expect("shapes checked")
    } else {
        let s = other.data()[0];
        g.map(|a| a * s)
    }
}

/// Reduces an output-shaped gradient back onto an operand that may have
/// been broadcast from a scalar.
fn unbroadcast(g: &Tensor, operand: &Tensor) -> Tensor {
    if g.shape() == operand.shape() {
        g.clone()
    } else {
        Tensor::new(operand.shape(), vec![g.sum()]).expect("scalar-like operand")
    }
}

fn reduce_sum(t: &Tensor, axes: &[usize]) -> Tensor {
    let shape = t.shape();
    let out_shape: Vec<usize> = (0..shape.len())
        .filter(|ax| !axes.contains(ax))
        .map(|ax| shape[ax])
        .collect();
    let mut out = Tensor::zeros(&out_shape);
    if t.is_empty() {
        return out;
    }
    let out_strides = kept_strides(shape, axes);
    let mut idx = vec![0usize; shape.len()];
    for &v in t.data() {
        let o: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
        out.data_mut()[o] += v;
        increment(&mut idx, shape);
    }
    out
}

fn expand_sum_grad(g: &Tensor, in_shape: &[usize], axes: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(in_shape);
    if out.is_empty() {
        return out;
    }
    let out_strides = kept_strides(in_shape, axes);
    let mut idx = vec![0usize; in_shape.len()];
    for slot in out.data_mut() {
        let o: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
        *slot = g.data()[o];
        increment(&mut idx, in_shape);
    }
    out
}

/// Strides into the reduced tensor for every input axis (0 for reduced axes).
fn kept_strides(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for ax in (0..shape.len()).rev() {
        if !axes.contains(&ax) {
            strides[ax] = acc;
            acc *= shape[ax];
        }
    }
    strides
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for ax in (0..shape.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < shape[ax] {
            return;
        }
        idx[ax] = 0;
    }
}

struct ConvDims {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

fn conv_dims(input: &Tensor, kernels: &Tensor) -> Result<ConvDims> {
    let (is, ks) = (input.shape(), kernels.shape());
    if is.len() != 4 || ks.len() != 4 || is[1] != ks[1] {
        return dim_err(format!("conv2d of input {is:?} with kernels {ks:?}"));
    }
    if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
        return Err(Error::Unsupported(format!(
            "conv2d kernel {}x{} must have odd sizes",
            ks[2], ks[3]
        )));
    }
    Ok(ConvDims {
        batch: is[0],
        cin: is[1],
        cout: ks[0],
        h: is[2],
        w: is[3],
        kh: ks[2],
        kw: ks[3],
    })
}

fn conv2d_forward(input: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, kernels)?;
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let (x, k) = (input.data(), kernels.data());
    let mut out = vec![0.0; d.batch * d.cout * d.h * d.w];
    for b in 0..d.batch {
        for co in 0..d.cout {
            let obase = (b * d.cout + co) * d.h * d.w;
            for ci in 0..d.cin {
                let ibase = (b * d.cin + ci) * d.h * d.w;
                let kbase = (co * d.cin + ci) * d.kh * d.kw;
                for u in 0..d.kh {
                    for v in 0..d.kw {
                        let kv = k[kbase + u * d.kw + v];
                        for i in 0..d.h {
                            let si = i + u;
                            if si < ph || si - ph >= d.h {
                                continue;
                            }
                            let irow = ibase + (si - ph) * d.w;
                            let orow = obase + i * d.w;
                            for j in 0..d.w {
                                let sj = j + v;
                                if sj < pw || sj - pw >= d.w {
                                    continue;
                                }
                                out[orow + j] += kv * x[irow + sj - pw];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[d.batch, d.cout, d.h, d.w], out)
}

fn conv2d_backward(input: &Tensor, kernels: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = conv_dims(input, kernels)?;
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let (x, k, gd) = (input.data(), kernels.data(), g.data());
    let mut gi = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for b in 0..d.batch {
        for co in 0..d.cout {
            let obase = (b * d.cout + co) * d.h * d.w;
            for ci in 0..d.cin {
                let ibase = (b * d.cin + ci) * d.h * d.w;
                let kbase = (co * d.cin + ci) * d.kh * d.kw;
                for u in 0..d.kh {
                    for v in 0..d.kw {
                        let kv = k[kbase + u * d.kw + v];
                        let mut acc = 0.0;
                        for i in 0..d.h {
                            let si = i + u;
                            if si < ph || si - ph >= d.h {
                                continue;
                            }
                            let irow = ibase + (si - ph) * d.w;
                            let orow = obase + i * d.w;
                            for j in 0..d.w {
                                let sj = j + v;
                                if sj < pw || sj - pw >= d.w {
                                    continue;
                                }
                                let go = gd[orow + j];
                                acc += go * x[irow + sj - pw];
                                gi[irow + sj - pw] += go * kv;
                            }
                        }
                        gk[kbase + u * d.kw + v] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), gi)?,
        Tensor::new(kernels.shape(), gk)?,
    ))
}

/// Single-image convolution on `input[Cin,H,W]` without recording.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 3 {
        return dim_err(format!("conv2d input must be [Cin,H,W], got {s:?}"));
    }
    let mut g = Graph::new();
    let x = g.input(input.reshape(&[1, s[0], s[1], s[2]])?);
    let k = g.input(kernels.clone());
    let b = g.input(bias.clone());
    let y = g.conv2d(x, k, b)?;
    let out = g.value(y);
    out.reshape(&out.shape()[1..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(build: impl for<'g> Fn(&mut Graph<'g>, Var) -> Var, x: Tensor) -> Tensor {
        let mut g = Graph::new();
        let xv = g.input(x);
        let loss = build(&mut g, xv);
        g.backward(loss).unwrap().wrt(xv).unwrap().clone()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let gx = grad_of(
            |g, x| {
                let s = g.square(x);
                g.sum(s, None).unwrap()
            },
            Tensor::vector(vec![1.0, 2.0]),
        );
        assert_eq!(gx.data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_param_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, -1.0])).unwrap();
        let mut g = Graph::new();
        let _pv = g.param(&store, p);
        let c = g.input(Tensor::scalar(4.0));
        let grads = g.backward(c).unwrap();
        store.accumulate(&grads).unwrap();
        assert_eq!(store.get(p).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = Graph::new();
        let x = g.input(Tensor::ones(&[3]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![3.0])).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let pv = g.param(&store, p);
            let l = g.sum(pv, None).unwrap();
            let grads = g.backward(l).unwrap();
            store.accumulate(&grads).unwrap();
        }
        assert_eq!(store.get(p).grad.data(), &[2.0]);
    }

    #[test]
    fn matmul_identity_and_error() {
        let mut g = Graph::new();
        let a = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let i = g.input(Tensor::eye(2));
        let y = g.matmul(a, i).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        let b = g.input(Tensor::zeros(&[2, 3]));
        let c = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(b, c).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("[2, 3]")));
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let z = g.input(Tensor::zeros(&[3]));
        let e = g.exp(z);
        assert_eq!(g.value(e).data(), &[1.0; 3]);
        let t = g.tanh(z);
        assert_eq!(g.value(t).data(), &[0.0; 3]);
        let m = g.input(Tensor::scalar(-1.0));
        assert!(matches!(g.log(m), Err(Error::Domain(_))));
    }

    #[test]
    fn scalar_tensor_broadcast_in_binary_ops() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = g.input(Tensor::scalar(2.0));
        let y = g.mul(x, s).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 4.0, 6.0]);
        let l = g.sum(y, None).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(s).unwrap().data(), &[6.0]);
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 2.0, 2.0]);
        let bad = g.input(Tensor::ones(&[2]));
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn sum_examples() {
        let mut g = Graph::new();
        let v = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = g.sum(v, None).unwrap();
        assert_eq!(g.value(s).item().unwrap(), 6.0);

        let empty = g.input(Tensor::zeros(&[0]));
        let s = g.sum(empty, None).unwrap();
        assert_eq!(g.value(s).item().unwrap(), 0.0);

        let m = g.input(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let s = g.sum(m, Some(&[1])).unwrap();
        assert_eq!(g.value(s).data(), &[3.0, 7.0]);
        let s = g.sum(m, Some(&[0])).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 6.0]);
        assert!(matches!(g.sum(m, Some(&[2])), Err(Error::Dimension(_))));
    }

    #[test]
    fn narrow_and_its_gradient() {
        let mut g = Graph::new();
        let m = g.input(Tensor::new(&[2, 4], (0..8).map(f64::from).collect()).unwrap());
        let right = g.narrow(m, 1, 2, 2).unwrap();
        assert_eq!(g.value(right).data(), &[2.0, 3.0, 6.0, 7.0]);
        let l = g.sum(right, None).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(
            grads.wrt(m).unwrap().data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn conv2d_examples() {
        let x = Tensor::new(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let id = conv2d(&x, &Tensor::ones(&[1, 1, 1, 1]), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(id, x);

        let ones = Tensor::ones(&[1, 3, 3]);
        let y = conv2d(&ones, &Tensor::ones(&[1, 1, 3, 3]), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);

        let err = conv2d(&ones, &Tensor::ones(&[1, 1, 2, 2]), &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn conv2d_centered_delta_is_identity() {
        let x = Tensor::new(&[2, 4, 5], (0..40).map(|i| f64::from(i) * 0.37 - 3.0).collect())
            .unwrap();
        let mut k = Tensor::zeros(&[2, 2, 3, 3]);
        // delta at the centre of the (c, c) kernel slices
        k.data_mut()[4] = 1.0;
        k.data_mut()[(2 + 1) * 9 + 4] = 1.0;
        let y = conv2d(&x, &k, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y, x);
    }
}
