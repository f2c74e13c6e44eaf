//! Tape of recorded operations with reverse-mode differentiation.
//!
//! Every op appends a node holding its value; nodes are created in
//! topological order, so `backward` walks the tape from the loss towards the
//! leaves and touches each node at most once.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::kernels::broadcast::{binary, broadcast_shapes, reduce_to};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::matmul::{matmul_backward, matmul_forward, MatmulDims};
use crate::kernels::norm;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        dims: MatmulDims,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        n: usize,
        o: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        n: usize,
        ci: usize,
    },
    Normalize {
        x: Var,
        block: usize,
        rstd: Vec<T>,
    },
    Softmax {
        x: Var,
        len: usize,
    },
    Silu(Var),
    Gelu(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording context for one forward/backward pass.
pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    checked: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            checked: false,
        }
    }

    /// In checked mode every op fails with [`TensorError::NonFinite`] if it
    /// produces a NaN or infinity.
    pub fn set_checked(&mut self, on: bool) {
        self.checked = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, false)
    }

    /// Free variable that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_leaf(store.get(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        let value = Tensor::new(shape, data)?;
        if self.checked && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- elementwise -------------------------------------------------

    fn broadcast_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out = broadcast_shapes(&sa, &sb).ok_or_else(|| {
            TensorError::shape(name, format!("cannot broadcast {sa:?} with {sb:?}"))
        })?;
        let data = binary(
            self.value(a).data(),
            &sa,
            self.value(b).data(),
            &sb,
            &out,
            f,
        );
        self.push(name, out, data, op, &[a, b])
    }

    /// Broadcasting `a + b`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Broadcasting `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Broadcasting `a * b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, data, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let data = self.value(x).data().iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push("add_scalar", shape, data, Op::AddScalar(x), &[x])
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, shape, data, op, &[x])
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary("silu", x, |v| v / (T::one() + (-v).exp()), Op::Silu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, gelu, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, |v| v.tanh(), Op::Tanh(x))
    }

    // ---- reductions --------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", vec![], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.value(x).sum() / T::lit(n as f64);
        self.push("mean", vec![], vec![s], Op::Mean(x), &[x])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(TensorError::shape(
                "mse",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    // ---- linear algebra ----------------------------------------------

    /// `a @ b` over the last two axes. `b` may be a 2-D matrix shared by all
    /// batch entries of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Like [`matmul`](Self::matmul), transposing the last two axes of `a`
    /// and/or `b` first.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let dims = MatmulDims::resolve(self.shape(a), self.shape(b), ta, tb)?;
        let data = matmul_forward(self.value(a).data(), self.value(b).data(), &dims, ta, tb);
        let shape = dims.out_shape.clone();
        self.push(
            "matmul",
            shape,
            data,
            Op::MatMul { a, b, ta, tb, dims },
            &[a, b],
        )
    }

    /// Cross-correlation. `x: [N, C, H, W]`, `w: [O, C, kh, kw]`, `b: [O]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(TensorError::shape(
                "conv2d",
                format!("expected 4-D input and weight, got {xs:?} and {ws:?}"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(TensorError::shape(
                "conv2d",
                format!("input has C={} channels but weight expects {}", xs[1], ws[1]),
            ));
        }
        check_bias(self, "conv2d", b, ws[0])?;
        let geom = ConvGeom::new(xs[1], xs[2], xs[3], ws[2], ws[3], stride, pad)?;
        let data = conv::conv2d_forward(
            self.value(x).data(),
            xs[0],
            &geom,
            self.value(w).data(),
            ws[0],
            b.map(|b| self.value(b).data()),
        );
        let shape = vec![xs[0], ws[0], geom.oh, geom.ow];
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            "conv2d",
            shape,
            data,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                n: xs[0],
                o: ws[0],
            },
            &inputs,
        )
    }

    /// Transposed convolution. `x: [N, Ci, H, W]`, `w: [Ci, Co, kh, kw]`;
    /// output extent `(H-1)*stride - 2*pad + k + out_pad`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(TensorError::shape(
                "conv_transpose2d",
                format!("expected 4-D input and weight, got {xs:?} and {ws:?}"),
            ));
        }
        if xs[1] != ws[0] {
            return Err(TensorError::shape(
                "conv_transpose2d",
                format!("input has C={} channels but weight expects {}", xs[1], ws[0]),
            ));
        }
        if stride == 0 || out_pad >= stride {
            return Err(TensorError::invalid(
                "conv_transpose2d",
                format!("need stride > out_pad, got stride={stride}, out_pad={out_pad}"),
            ));
        }
        check_bias(self, "conv_transpose2d", b, ws[1])?;
        let full = (xs[2] - 1) * stride + ws[2] + out_pad;
        let full_w = (xs[3] - 1) * stride + ws[3] + out_pad;
        if full < 2 * pad + 1 || full_w < 2 * pad + 1 {
            return Err(TensorError::shape(
                "conv_transpose2d",
                format!("padding {pad} exceeds output extent for H={}, W={}", xs[2], xs[3]),
            ));
        }
        let (oh, ow) = (full - 2 * pad, full_w - 2 * pad);
        let geom = ConvGeom::new(ws[1], oh, ow, ws[2], ws[3], stride, pad)?;
        debug_assert_eq!((geom.oh, geom.ow), (xs[2], xs[3]));
        let data = conv::conv_transpose2d_forward(
            self.value(x).data(),
            xs[0],
            xs[1],
            &geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            "conv_transpose2d",
            vec![xs[0], ws[1], oh, ow],
            data,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                geom,
                n: xs[0],
                ci: xs[1],
            },
            &inputs,
        )
    }

    // ---- normalization -----------------------------------------------

    /// Group normalization without affine parameters, `x: [N, C, ...]`.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TensorError::shape("group_norm", format!("need [N, C, ...], got {s:?}")));
        }
        if groups == 0 || !s[1].is_multiple_of(groups) {
            return Err(TensorError::shape(
                "group_norm",
                format!("C={} channels not divisible into {groups} groups", s[1]),
            ));
        }
        let block = numel(&s[1..]) / groups;
        self.normalize("group_norm", x, block, eps)
    }

    /// Normalization over the last axis without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let block = *self
            .shape(x)
            .last()
            .ok_or_else(|| TensorError::shape("layer_norm", "scalar input"))?;
        self.normalize("layer_norm", x, block, eps)
    }

    fn normalize(&mut self, name: &'static str, x: Var, block: usize, eps: f64) -> Result<Var> {
        if block == 0 {
            return Err(TensorError::shape(name, "empty normalization group"));
        }
        let (y, rstd) = norm::normalize_blocks(self.value(x).data(), block, eps);
        let shape = self.shape(x).to_vec();
        self.push(name, shape, y, Op::Normalize { x, block, rstd }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let len = *self
            .shape(x)
            .last()
            .ok_or_else(|| TensorError::shape("softmax", "scalar input"))?;
        let y = norm::softmax_rows(self.value(x).data(), len);
        let shape = self.shape(x).to_vec();
        self.push("softmax", shape, y, Op::Softmax { x, len }, &[x])
    }

    // ---- layout ------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape.to_vec())?;
        let requires_grad = self.rg(x);
        self.nodes.push(Node {
            value: t,
            op: Op::Reshape(x),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::shape(
                "permute",
                format!("{axes:?} is not a permutation of the axes of {s:?}"),
            ));
        }
        let (data, shape) = permute_data(self.value(x).data(), &s, axes);
        self.push(
            "permute",
            shape,
            data,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            &[x],
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape(
                    "concat",
                    format!("{s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push(
            "concat",
            out_shape,
            data,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        )
    }

    /// `len` entries of axis `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(TensorError::shape(
                "slice",
                format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push("slice", shape, data, Op::Slice { x, axis, start }, &[x])
    }

    // ---- backward ----------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.value(loss);
        if ls.numel() != 1 {
            return Err(TensorError::NonScalarLoss(ls.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, i, g, &mut grads, &mut leaves)?;
        }
        Ok(Gradients {
            leaves,
            params: self.params.clone(),
        })
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        index: usize,
        g: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        leaves: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let out_shape = node.value.shape();
        let mut acc = |v: Var, d: Vec<T>| accumulate(grads, v, d);
        match &node.op {
            Op::Leaf => {
                leaves[index] = Some(Tensor::new(out_shape.to_vec(), g)?);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                if self.rg(*a) {
                    acc(*a, reduce_to(&g, out_shape, self.shape(*a), None));
                }
                if self.rg(*b) {
                    let mut d = reduce_to(&g, out_shape, self.shape(*b), None);
                    if neg {
                        d.iter_mut().for_each(|v| *v = -*v);
                    }
                    acc(*b, d);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let other = (self.value(*b).data(), self.shape(*b));
                    acc(*a, reduce_to(&g, out_shape, self.shape(*a), Some(other)));
                }
                if self.rg(*b) {
                    let other = (self.value(*a).data(), self.shape(*a));
                    acc(*b, reduce_to(&g, out_shape, self.shape(*b), Some(other)));
                }
            }
            Op::Scale(x, c) => acc(*x, g.iter().map(|&v| v * *c).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, g),
            Op::MatMul { a, b, ta, tb, dims } => {
                let (da, db) = matmul_backward(
                    self.value(*a).data(),
                    self.value(*b).data(),
                    &g,
                    dims,
                    *ta,
                    *tb,
                    self.rg(*a),
                    self.rg(*b),
                );
                if let Some(da) = da {
                    acc(*a, da);
                }
                if let Some(db) = db {
                    acc(*b, db);
                }
            }
            Op::Conv2d { x, w, b, geom, n, o } => {
                let need = [self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b))];
                let grads = conv::conv2d_backward(
                    self.value(*x).data(),
                    *n,
                    geom,
                    self.value(*w).data(),
                    *o,
                    &g,
                    need,
                );
                self.scatter_conv(grads, *x, *w, *b, &mut acc);
            }
            Op::ConvTranspose2d { x, w, b, geom, n, ci } => {
                let need = [self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b))];
                let grads = conv::conv_transpose2d_backward(
                    self.value(*x).data(),
                    *n,
                    *ci,
                    geom,
                    self.value(*w).data(),
                    &g,
                    need,
                );
                self.scatter_conv(grads, *x, *w, *b, &mut acc);
            }
            Op::Normalize { x, block, rstd } => {
                acc(
                    *x,
                    norm::normalize_blocks_backward(&g, node.value.data(), rstd, *block),
                );
            }
            Op::Softmax { x, len } => {
                acc(*x, norm::softmax_rows_backward(&g, node.value.data(), *len));
            }
            Op::Silu(x) => {
                let d = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| {
                        let s = T::one() / (T::one() + (-xv).exp());
                        gv * s * (T::one() + xv * (T::one() - s))
                    })
                    .collect();
                acc(*x, d);
            }
            Op::Gelu(x) => {
                let d = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| gv * gelu_grad(xv))
                    .collect();
                acc(*x, d);
            }
            Op::Tanh(x) => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect();
                acc(*x, d);
            }
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc(*x, vec![g[0] / T::lit(n as f64); n]);
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (d, _) = permute_data(&g, out_shape, &inverse);
                acc(*x, d);
            }
            Op::Concat { xs, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    if self.rg(v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * out_shape[*axis] + offset) * inner;
                            d.extend_from_slice(&g[base..base + len * inner]);
                        }
                        acc(v, d);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[*axis + 1..].iter().product();
                let len = out_shape[*axis];
                let mut d = vec![T::zero(); self.value(*x).numel()];
                for o in 0..outer {
                    let dst = (o * xs[*axis] + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                acc(*x, d);
            }
        }
        Ok(())
    }

    fn scatter_conv(
        &self,
        grads: conv::ConvGrads<T>,
        x: Var,
        w: Var,
        b: Option<Var>,
        acc: &mut impl FnMut(Var, Vec<T>),
    ) {
        if let Some(dx) = grads.dx {
            acc(x, dx);
        }
        if let Some(dw) = grads.dw {
            acc(w, dw);
        }
        if let (Some(b), Some(db)) = (b, grads.db) {
            acc(b, db);
        }
    }
}

fn check_bias<T: Float>(g: &Graph<T>, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
    if let Some(b) = b {
        if g.shape(b) != [channels] {
            return Err(TensorError::shape(
                op,
                format!("bias shape {:?}, expected [{channels}]", g.shape(b)),
            ));
        }
    }
    Ok(())
}

fn accumulate<T: Float>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}

fn gelu<T: Float>(x: T) -> T {
    let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_C) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Float>(x: T) -> T {
    let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_C) * x * x * x);
    let t = inner.tanh();
    let dinner = T::lit(SQRT_2_OVER_PI) * (T::one() + T::lit(3.0 * GELU_C) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}

/// Strided copy realizing an axis permutation.
pub fn permute_data<T: Float>(src: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel(&out_shape);
    let mut out = Vec::with_capacity(total);
    if rank == 0 {
        out.extend_from_slice(src);
        return (out, out_shape);
    }
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    for _ in 0..total / inner.max(1) {
        out.extend((0..inner).map(|i| src[base + i * inner_stride]));
        for axis in (0..rank - 1).rev() {
            idx[axis] += 1;
            base += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            base -= strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
    (out, out_shape)
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a stored parameter; zeros if it was unused.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Tensor<T> {
        self.params
            .get(&id)
            .and_then(|v| self.get(*v))
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec()))
    }

    /// Gradients for every parameter of `store`, in registration order.
    pub fn params(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store.ids().map(|id| self.param(store, id)).collect()
    }
}
