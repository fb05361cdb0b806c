//! Tensor-level tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the record
//! needed to run its vector-Jacobian product. Nodes are only ever appended,
//! so insertion order is a topological order and [`Graph::backward`] walks it
//! in reverse, visiting each node once.

use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{numel, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddBroadcast {
        x: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    Reshape {
        x: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<f64>,
    },
    Gelu {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    MeanPoolTime {
        x: Var,
    },
    Expand {
        x: Var,
    },
    Sdpa {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        sample_weights: Vec<f64>,
        probs: Vec<T>,
    },
    Mix {
        xs: Vec<Var>,
        pi: Var,
    },
    Sum {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records one forward pass over parameters borrowed from a [`ParamStore`].
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    mode: Mode,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    node_grads: Vec<Option<Vec<T>>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a node, if it was reached.
    pub fn wrt(&self, var: Var) -> Option<&[T]> {
        self.node_grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to a parameter; `None` if the parameter did not
    /// take part in the forward pass.
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.param_vars
            .get(id.index())
            .copied()
            .flatten()
            .and_then(|v| self.wrt(v))
    }

    /// Dense per-parameter gradients in store order; unused parameters get zeros.
    pub fn into_param_grads(self, store: &ParamStore<T>) -> Vec<Vec<T>> {
        store
            .iter()
            .map(|(id, p)| match self.param(id) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.value.numel()],
            })
            .collect()
    }
}

fn grad_slot<'a, T: Scalar>(
    grads: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

#[inline]
fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

fn conv_out_len(l: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = l + 2 * padding;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unfolds `(n, cin, l)` input into a `(cin*k, n*lout)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    n: usize,
    cin: usize,
    l: usize,
    k: usize,
    stride: usize,
    padding: usize,
    lout: usize,
) -> Vec<T> {
    let width = n * lout;
    let mut cols = vec![T::zero(); cin * k * width];
    for ni in 0..n {
        for ci in 0..cin {
            let src = &x[(ni * cin + ci) * l..(ni * cin + ci + 1) * l];
            for kk in 0..k {
                let row = &mut cols[(ci * k + kk) * width + ni * lout..][..lout];
                for (t, slot) in row.iter_mut().enumerate() {
                    let pos = (t * stride + kk) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < l {
                        *slot = src[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    cols: &[T],
    dx: &mut [T],
    n: usize,
    cin: usize,
    l: usize,
    k: usize,
    stride: usize,
    padding: usize,
    lout: usize,
) {
    let width = n * lout;
    for ni in 0..n {
        for ci in 0..cin {
            let dst = &mut dx[(ni * cin + ci) * l..(ni * cin + ci + 1) * l];
            for kk in 0..k {
                let row = &cols[(ci * k + kk) * width + ni * lout..][..lout];
                for (t, &g) in row.iter().enumerate() {
                    let pos = (t * stride + kk) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < l {
                        dst[pos as usize] = dst[pos as usize] + g;
                    }
                }
            }
        }
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Free variable whose gradient is tracked (mostly useful in tests).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Brings a parameter into the graph. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.params.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", sa, sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            false,
            false,
            m,
            n,
            k,
            self.value(a).data(),
            self.value(b).data(),
            T::zero(),
            &mut out,
        );
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b }, &[a, b]))
    }

    /// Affine map over the last axis: `x (.., in) * w (in, out) + b (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 || sx.is_empty() || *sx.last().unwrap() != sw[0] {
            return shape_err("linear", &sx, &sw);
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[1]] {
                return shape_err("linear(bias)", &sw, self.shape(b));
            }
        }
        let (din, dout) = (sw[0], sw[1]);
        let rows = numel(&sx) / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            false,
            false,
            rows,
            dout,
            din,
            self.value(x).data(),
            self.value(w).data(),
            T::one(),
            &mut out,
        );
        let mut shape = sx;
        *shape.last_mut().unwrap() = dout;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Linear { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("add", self.shape(a), self.shape(b));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("mul", self.shape(a), self.shape(b));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul { a, b }, &[a, b]))
    }

    /// Adds `b` to every trailing block of `x`; `b`'s shape must equal the
    /// trailing dimensions of `x` (bias rows, positional tables).
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return shape_err("add_broadcast", sx, sb);
        }
        let block = self.value(b).numel();
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        if block > 0 {
            for chunk in out.chunks_mut(block) {
                for (o, &bv) in chunk.iter_mut().zip(bias) {
                    *o = *o + bv;
                }
            }
        }
        let shape = sx.to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBroadcast { x, b }, &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::cast_f64(c);
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Scale { x, c }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(x).numel() {
            return shape_err("reshape", self.shape(x), &shape);
        }
        let out = self.value(x).data().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Reshape { x }, &[x]))
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return Err(NnError::InvalidArgument("concat of nothing".into())),
        };
        if axis >= first.len() {
            return Err(NnError::InvalidArgument(format!(
                "concat axis {axis} out of range for shape {first:?}"
            )));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err("concat", &first, s);
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        Ok(self.push(Tensor::from_parts(shape, out), op, inputs))
    }

    /// 1-D convolution: `x (n, cin, l)`, `w (cout, cin, k)`, `b (cout)`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return shape_err("conv1d", &sx, &sw);
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return shape_err("conv1d(bias)", &sw, self.shape(b));
            }
        }
        let (n, cin, l) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let lout = conv_out_len(l, k, stride, padding).ok_or_else(|| {
            NnError::InvalidArgument(format!(
                "conv1d: kernel {k} with padding {padding} and stride {stride} does not fit length {l}"
            ))
        })?;
        let cols = im2col(self.value(x).data(), n, cin, l, k, stride, padding, lout);
        let width = n * lout;
        let mut tmp = vec![T::zero(); cout * width];
        gemm(
            false,
            false,
            cout,
            width,
            cin * k,
            self.value(w).data(),
            &cols,
            T::zero(),
            &mut tmp,
        );
        let bias = b.map(|b| self.value(b).data().to_vec());
        let mut out = vec![T::zero(); n * cout * lout];
        for ni in 0..n {
            for co in 0..cout {
                let bv = bias.as_ref().map_or(T::zero(), |bb| bb[co]);
                let src = &tmp[co * width + ni * lout..][..lout];
                let dst = &mut out[(ni * cout + co) * lout..][..lout];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bv;
                }
            }
        }
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        let op = Op::Conv1d {
            x,
            w,
            b,
            stride,
            padding,
        };
        Ok(self.push(Tensor::from_parts(vec![n, cout, lout], out), op, &inputs))
    }

    /// Normalizes the last axis, then applies learnable scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = match sx.last() {
            Some(&d) if d > 0 => d,
            _ => return shape_err("layer_norm", &sx, self.shape(gamma)),
        };
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return shape_err("layer_norm", &sx, self.shape(gamma));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let rows = xs.len() / d;
        let mut out = vec![T::zero(); xs.len()];
        let mut xhat = vec![T::zero(); xs.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|v| {
                    let c = v.as_f64() - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j].as_f64() - mean) * is;
                xhat[r * d + j] = T::cast_f64(xh);
                out[r * d + j] = T::cast_f64(xh * g[j].as_f64() + bt[j].as_f64());
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok(self.push(Tensor::from_parts(sx, out), op, &[x, gamma, beta]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| T::cast_f64(gelu_parts(v.as_f64()).0))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Gelu { x }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Relu { x }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = match shape.last() {
            Some(&d) if d > 0 => d,
            _ => return shape_err("softmax", &shape, &shape),
        };
        let mut out = vec![T::zero(); self.value(x).numel()];
        for (src, dst) in self.value(x).data().chunks(d).zip(out.chunks_mut(d)) {
            softmax_row(src, dst);
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x }, &[x]))
    }

    /// Inverted dropout. Exactly the identity outside training mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::InvalidArgument(format!("dropout p={p} not in [0,1)")));
        }
        if !self.is_training() || p == 0.0 {
            return Ok(x);
        }
        let keep = T::cast_f64(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() >= p {
                    keep
                } else {
                    T::zero()
                }
            })
            .collect();
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Dropout { x, mask }, &[x]))
    }

    /// Mean over the last (time) axis: `(n, c, l) -> (n, c)`.
    pub fn mean_pool_time(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[shape.len() - 1] == 0 {
            return shape_err("mean_pool_time", &shape, &shape);
        }
        let l = shape[shape.len() - 1];
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(l)
            .map(|c| T::cast_f64(c.iter().map(|v| v.as_f64()).sum::<f64>() / l as f64))
            .collect();
        let new_shape = shape[..shape.len() - 1].to_vec();
        Ok(self.push(Tensor::from_parts(new_shape, out), Op::MeanPoolTime { x }, &[x]))
    }

    /// Repeats `x` along a new leading axis of size `n`.
    pub fn expand(&mut self, x: Var, n: usize) -> Var {
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len() * n);
        for _ in 0..n {
            out.extend_from_slice(src);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape(x));
        self.push(Tensor::from_parts(shape, out), Op::Expand { x }, &[x])
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q (b, tq, d)`, `k (b, tk, d)`, `v (b, tk, dv)`; both `d` and `dv` are
    /// split evenly into `heads` slices and scores are scaled by `1/sqrt(d/heads)`.
    pub fn sdpa(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (sq, sk, sv) = (
            self.shape(q).to_vec(),
            self.shape(k).to_vec(),
            self.shape(v).to_vec(),
        );
        if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 {
            return shape_err("sdpa", &sq, &sk);
        }
        if sq[0] != sk[0] || sq[2] != sk[2] {
            return shape_err("sdpa(q,k)", &sq, &sk);
        }
        if sv[0] != sk[0] || sv[1] != sk[1] {
            return shape_err("sdpa(k,v)", &sk, &sv);
        }
        if heads == 0 || sq[2] % heads != 0 || sv[2] % heads != 0 {
            return Err(NnError::InvalidArgument(format!(
                "sdpa: {heads} heads do not divide dims {} and {}",
                sq[2], sv[2]
            )));
        }
        let (b, tq, d) = (sq[0], sq[1], sq[2]);
        let (tk, dv) = (sk[1], sv[2]);
        let (dh, dvh) = (d / heads, dv / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![T::zero(); b * heads * tq * tk];
        let mut out = vec![T::zero(); b * tq * dv];
        let mut scores = vec![T::zero(); tk];
        for bi in 0..b {
            for h in 0..heads {
                for i in 0..tq {
                    let qrow = &qd[(bi * tq + i) * d + h * dh..][..dh];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let krow = &kd[(bi * tk + j) * d + h * dh..][..dh];
                        let dot: f64 = qrow
                            .iter()
                            .zip(krow)
                            .map(|(a, c)| a.as_f64() * c.as_f64())
                            .sum();
                        *s = T::cast_f64(dot * scale);
                    }
                    let prow = &mut probs[((bi * heads + h) * tq + i) * tk..][..tk];
                    softmax_row(&scores, prow);
                    let orow = &mut out[(bi * tq + i) * dv + h * dvh..][..dvh];
                    for e in 0..dvh {
                        let mut acc = 0.0;
                        for j in 0..tk {
                            acc += prow[j].as_f64() * vd[(bi * tk + j) * dv + h * dvh + e].as_f64();
                        }
                        orow[e] = T::cast_f64(acc);
                    }
                }
            }
        }
        let op = Op::Sdpa {
            q,
            k,
            v,
            heads,
            probs,
        };
        Ok(self.push(Tensor::from_parts(vec![b, tq, dv], out), op, &[q, k, v]))
    }

    /// Attention weights `(b, heads, tq, tk)` saved by an [`Graph::sdpa`] node.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Sdpa { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean over samples of `class_weight[target] * -log softmax(logits)[target]`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() || shape[0] == 0 {
            return shape_err("cross_entropy", &shape, &[targets.len()]);
        }
        let (n, kc) = (shape[0], shape[1]);
        if let Some(w) = class_weights {
            if w.len() != kc {
                return shape_err("cross_entropy(weights)", &shape, &[w.len()]);
            }
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= kc) {
            return Err(NnError::InvalidArgument(format!(
                "cross_entropy: target {t} outside {kc} classes"
            )));
        }
        let mut probs = vec![T::zero(); n * kc];
        let mut sample_weights = Vec::with_capacity(n);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &self.value(logits).data()[i * kc..(i + 1) * kc];
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            let lse = max + sum.ln();
            for j in 0..kc {
                probs[i * kc + j] = T::cast_f64((row[j].as_f64() - lse).exp());
            }
            let w = class_weights.map_or(1.0, |w| w[t]);
            sample_weights.push(w);
            total += w * (lse - row[t].as_f64());
        }
        let loss = T::cast_f64(total / n as f64);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            sample_weights,
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Convex mixture `sum_i pi[i] * xs[i]`, with `pi` a vector of `xs.len()` weights.
    pub fn mix(&mut self, xs: &[Var], pi: Var) -> Result<Var> {
        if self.shape(pi) != [xs.len()] || xs.is_empty() {
            return shape_err("mix", self.shape(pi), &[xs.len()]);
        }
        let shape = self.shape(xs[0]).to_vec();
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return shape_err("mix", &shape, self.shape(x));
            }
        }
        let w = self.value(pi).data().to_vec();
        let mut out = vec![T::zero(); numel(&shape)];
        for (&x, &wi) in xs.iter().zip(&w) {
            for (o, &v) in out.iter_mut().zip(self.value(x).data()) {
                *o = *o + wi * v;
            }
        }
        let mut inputs = xs.to_vec();
        inputs.push(pi);
        let op = Op::Mix { xs: xs.to_vec(), pi };
        Ok(self.push(Tensor::from_parts(shape, out), op, &inputs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(T::cast_f64(s)), Op::Sum { x }, &[x])
    }

    /// Runs the reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NnError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients {
            node_grads: grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn backprop_node(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let shp = |v: Var| nodes[v.0].value.shape();
        match &nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b } => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[1];
                if let Some(ga) = grad_slot(grads, nodes, *a) {
                    gemm(false, true, m, k, n, gy, val(*b), T::one(), ga);
                }
                if let Some(gb) = grad_slot(grads, nodes, *b) {
                    gemm(true, false, k, n, m, val(*a), gy, T::one(), gb);
                }
            }
            Op::Linear { x, w, b } => {
                let (din, dout) = (shp(*w)[0], shp(*w)[1]);
                let rows = gy.len() / dout;
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    gemm(false, true, rows, din, dout, gy, val(*w), T::one(), gx);
                }
                if let Some(gw) = grad_slot(grads, nodes, *w) {
                    gemm(true, false, din, dout, rows, val(*x), gy, T::one(), gw);
                }
                if let Some(b) = b {
                    if let Some(gb) = grad_slot(grads, nodes, *b) {
                        for j in 0..dout {
                            let s: f64 = (0..rows).map(|r| gy[r * dout + j].as_f64()).sum();
                            gb[j] = gb[j] + T::cast_f64(s);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(g) = grad_slot(grads, nodes, v) {
                        for (gi, &d) in g.iter_mut().zip(gy) {
                            *gi = *gi + d;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                if let Some(ga) = grad_slot(grads, nodes, *a) {
                    for ((gi, &d), &o) in ga.iter_mut().zip(gy).zip(val(*b)) {
                        *gi = *gi + d * o;
                    }
                }
                if let Some(gb) = grad_slot(grads, nodes, *b) {
                    for ((gi, &d), &o) in gb.iter_mut().zip(gy).zip(val(*a)) {
                        *gi = *gi + d * o;
                    }
                }
            }
            Op::AddBroadcast { x, b } => {
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    for (gi, &d) in gx.iter_mut().zip(gy) {
                        *gi = *gi + d;
                    }
                }
                let block = nodes[b.0].value.numel();
                if let Some(gb) = grad_slot(grads, nodes, *b) {
                    let mut acc = vec![0.0f64; block];
                    for chunk in gy.chunks(block) {
                        for (a, &d) in acc.iter_mut().zip(chunk) {
                            *a += d.as_f64();
                        }
                    }
                    for (gi, a) in gb.iter_mut().zip(acc) {
                        *gi = *gi + T::cast_f64(a);
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    for (gi, &d) in gx.iter_mut().zip(gy) {
                        *gi = *gi + d * *c;
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    for (gi, &d) in gx.iter_mut().zip(gy) {
                        *gi = *gi + d;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    for ((gi, &d), &m) in gx.iter_mut().zip(gy).zip(mask) {
                        *gi = *gi + d * m;
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let out_shape = nodes[i].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = shp(v)[*axis] * inner;
                    if let Some(g) = grad_slot(grads, nodes, v) {
                        for o in 0..outer {
                            let src = &gy[o * total + offset..][..len];
                            for (gi, &d) in g[o * len..(o + 1) * len].iter_mut().zip(src) {
                                *gi = *gi + d;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (n, cin, l) = (shp(*x)[0], shp(*x)[1], shp(*x)[2]);
                let (cout, k) = (shp(*w)[0], shp(*w)[2]);
                let lout = nodes[i].value.shape()[2];
                let width = n * lout;
                let mut gy_g = vec![T::zero(); cout * width];
                for ni in 0..n {
                    for co in 0..cout {
                        gy_g[co * width + ni * lout..][..lout]
                            .copy_from_slice(&gy[(ni * cout + co) * lout..][..lout]);
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = grad_slot(grads, nodes, *b) {
                        for co in 0..cout {
                            let s: f64 = gy_g[co * width..(co + 1) * width]
                                .iter()
                                .map(|v| v.as_f64())
                                .sum();
                            gb[co] = gb[co] + T::cast_f64(s);
                        }
                    }
                }
                let need_w = nodes[w.0].requires_grad;
                let need_x = nodes[x.0].requires_grad;
                if need_w {
                    let cols = im2col(val(*x), n, cin, l, k, *stride, *padding, lout);
                    let gw = grad_slot(grads, nodes, *w).unwrap();
                    gemm(false, true, cout, cin * k, width, &gy_g, &cols, T::one(), gw);
                }
                if need_x {
                    let mut gcols = vec![T::zero(); cin * k * width];
                    gemm(true, false, cin * k, width, cout, val(*w), &gy_g, T::zero(), &mut gcols);
                    let gx = grad_slot(grads, nodes, *x).unwrap();
                    col2im_add(&gcols, gx, n, cin, l, k, *stride, *padding, lout);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = shp(*gamma)[0];
                let g = val(*gamma);
                if let Some(gg) = grad_slot(grads, nodes, *gamma) {
                    let mut acc = vec![0.0f64; d];
                    for (row_g, row_x) in gy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            acc[j] += row_g[j].as_f64() * row_x[j].as_f64();
                        }
                    }
                    for (gi, a) in gg.iter_mut().zip(acc) {
                        *gi = *gi + T::cast_f64(a);
                    }
                }
                if let Some(gb) = grad_slot(grads, nodes, *beta) {
                    let mut acc = vec![0.0f64; d];
                    for row_g in gy.chunks(d) {
                        for j in 0..d {
                            acc[j] += row_g[j].as_f64();
                        }
                    }
                    for (gi, a) in gb.iter_mut().zip(acc) {
                        *gi = *gi + T::cast_f64(a);
                    }
                }
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    let mut dxhat = vec![0.0f64; d];
                    for (r, is) in inv_std.iter().enumerate() {
                        let row_g = &gy[r * d..(r + 1) * d];
                        let row_x = &xhat[r * d..(r + 1) * d];
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..d {
                            dxhat[j] = row_g[j].as_f64() * g[j].as_f64();
                            sum_d += dxhat[j];
                            sum_dx += dxhat[j] * row_x[j].as_f64();
                        }
                        let dn = d as f64;
                        for j in 0..d {
                            let v = is / dn * (dn * dxhat[j] - sum_d - row_x[j].as_f64() * sum_dx);
                            gx[r * d + j] = gx[r * d + j] + T::cast_f64(v);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    for ((gi, &d), &xv) in gx.iter_mut().zip(gy).zip(val(*x)) {
                        *gi = *gi + d * T::cast_f64(gelu_parts(xv.as_f64()).1);
                    }
                }
            }
            Op::Relu { x } => {
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    for ((gi, &d), &xv) in gx.iter_mut().zip(gy).zip(val(*x)) {
                        if xv > T::zero() {
                            *gi = *gi + d;
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                let y = nodes[i].value.data();
                let d = *nodes[i].value.shape().last().unwrap();
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    for ((gx_row, gy_row), y_row) in
                        gx.chunks_mut(d).zip(gy.chunks(d)).zip(y.chunks(d))
                    {
                        let dot: f64 = gy_row
                            .iter()
                            .zip(y_row)
                            .map(|(a, b)| a.as_f64() * b.as_f64())
                            .sum();
                        for j in 0..d {
                            let v = y_row[j].as_f64() * (gy_row[j].as_f64() - dot);
                            gx_row[j] = gx_row[j] + T::cast_f64(v);
                        }
                    }
                }
            }
            Op::MeanPoolTime { x } => {
                let l = *shp(*x).last().unwrap();
                let inv = T::cast_f64(1.0 / l as f64);
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    for (chunk, &d) in gx.chunks_mut(l).zip(gy) {
                        for gi in chunk {
                            *gi = *gi + d * inv;
                        }
                    }
                }
            }
            Op::Expand { x } => {
                let block = nodes[x.0].value.numel();
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    let mut acc = vec![0.0f64; block];
                    for chunk in gy.chunks(block) {
                        for (a, &d) in acc.iter_mut().zip(chunk) {
                            *a += d.as_f64();
                        }
                    }
                    for (gi, a) in gx.iter_mut().zip(acc) {
                        *gi = *gi + T::cast_f64(a);
                    }
                }
            }
            Op::Sdpa {
                q,
                k,
                v,
                heads,
                probs,
            } => self.sdpa_backward(*q, *k, *v, *heads, probs, gy, grads),
            Op::CrossEntropy {
                logits,
                targets,
                sample_weights,
                probs,
            } => {
                let kc = shp(*logits)[1];
                let n = targets.len() as f64;
                let up = gy[0].as_f64();
                if let Some(gl) = grad_slot(grads, nodes, *logits) {
                    for (r, (&t, &w)) in targets.iter().zip(sample_weights).enumerate() {
                        for j in 0..kc {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            let v = up * w / n * (probs[r * kc + j].as_f64() - onehot);
                            gl[r * kc + j] = gl[r * kc + j] + T::cast_f64(v);
                        }
                    }
                }
            }
            Op::Mix { xs, pi } => {
                let w = val(*pi).to_vec();
                for (&x, &wi) in xs.iter().zip(&w) {
                    if let Some(gx) = grad_slot(grads, nodes, x) {
                        for (gi, &d) in gx.iter_mut().zip(gy) {
                            *gi = *gi + d * wi;
                        }
                    }
                }
                if nodes[pi.0].requires_grad {
                    let dots: Vec<f64> = xs
                        .iter()
                        .map(|&x| {
                            val(x)
                                .iter()
                                .zip(gy)
                                .map(|(a, b)| a.as_f64() * b.as_f64())
                                .sum()
                        })
                        .collect();
                    let gp = grad_slot(grads, nodes, *pi).unwrap();
                    for (gi, d) in gp.iter_mut().zip(dots) {
                        *gi = *gi + T::cast_f64(d);
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = grad_slot(grads, nodes, *x) {
                    let d = gy[0];
                    for gi in gx.iter_mut() {
                        *gi = *gi + d;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn sdpa_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
        gy: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let nodes = &self.nodes;
        let (b, tq, d) = {
            let s = nodes[q.0].value.shape();
            (s[0], s[1], s[2])
        };
        let tk = nodes[k.0].value.shape()[1];
        let dv = nodes[v.0].value.shape()[2];
        let (dh, dvh) = (d / heads, dv / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let qd = nodes[q.0].value.data();
        let kd = nodes[k.0].value.data();
        let vd = nodes[v.0].value.data();
        let mut gq = vec![0.0f64; qd.len()];
        let mut gk = vec![0.0f64; kd.len()];
        let mut gv = vec![0.0f64; vd.len()];
        let mut dp = vec![0.0f64; tk];
        for bi in 0..b {
            for h in 0..heads {
                for i in 0..tq {
                    let prow = &probs[((bi * heads + h) * tq + i) * tk..][..tk];
                    let grow = &gy[(bi * tq + i) * dv + h * dvh..][..dvh];
                    for j in 0..tk {
                        let vrow = &vd[(bi * tk + j) * dv + h * dvh..][..dvh];
                        dp[j] = grow
                            .iter()
                            .zip(vrow)
                            .map(|(a, c)| a.as_f64() * c.as_f64())
                            .sum();
                        let pj = prow[j].as_f64();
                        let gvrow = &mut gv[(bi * tk + j) * dv + h * dvh..][..dvh];
                        for (g, &o) in gvrow.iter_mut().zip(grow) {
                            *g += pj * o.as_f64();
                        }
                    }
                    let dot: f64 = prow.iter().zip(&dp).map(|(p, g)| p.as_f64() * g).sum();
                    let qrow = &qd[(bi * tq + i) * d + h * dh..][..dh];
                    for j in 0..tk {
                        let ds = prow[j].as_f64() * (dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = &kd[(bi * tk + j) * d + h * dh..][..dh];
                        let gqrow = &mut gq[(bi * tq + i) * d + h * dh..][..dh];
                        for (g, &kv) in gqrow.iter_mut().zip(krow) {
                            *g += ds * kv.as_f64();
                        }
                        let gkrow = &mut gk[(bi * tk + j) * d + h * dh..][..dh];
                        for (g, &qv) in gkrow.iter_mut().zip(qrow) {
                            *g += ds * qv.as_f64();
                        }
                    }
                }
            }
        }
        for (var, acc) in [(q, gq), (k, gk), (v, gv)] {
            if let Some(g) = grad_slot(grads, nodes, var) {
                for (gi, a) in g.iter_mut().zip(acc) {
                    *gi = *gi + T::cast_f64(a);
                }
            }
        }
    }
}

fn softmax_row<T: Scalar>(src: &[T], dst: &mut [T]) {
    let max = src.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, s) in dst.iter_mut().zip(src) {
        let e = (s.as_f64() - max).exp();
        sum += e;
        *d = T::cast_f64(e);
    }
    let inv = 1.0 / sum;
    for d in dst.iter_mut() {
        *d = T::cast_f64(d.as_f64() * inv);
    }
}
