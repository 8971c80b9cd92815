//! Dynamic reverse-mode tape.
//!
//! Every forward op appends a node holding its value and the information
//! its backward rule needs. Nodes are only ever appended, so the tape is in
//! topological order and backward is a single reverse sweep. A node whose
//! inputs are all constants is marked as not requiring a gradient and is
//! skipped entirely during the sweep.

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::real::Real;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is repeated to the left operand's shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs matches the trailing dims; element `i` reads `rhs[i % len]`
    Suffix(usize),
    /// rhs matches the leading dims followed by ones; element `i` reads `rhs[i / inner]`
    Prefix(usize),
}

impl Broadcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Suffix(len) => i % len,
            Broadcast::Prefix(inner) => i / inner,
        }
    }
}

/// Lower or upper limit of a clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Const(f64),
    Var(Var),
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Div(Var, Var, Broadcast),
    Scale(Var, T),
    AddScalar(Var),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        transpose_b: bool,
    },
    Transpose {
        a: Var,
        rows: usize,
        cols: usize,
    },
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        lens: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Narrow {
        src: Var,
        outer: usize,
        src_len: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    Gather {
        src: Var,
        indices: Vec<usize>,
        row: usize,
    },
    Sum {
        src: Var,
        outer: usize,
        len: usize,
        inner: usize,
        mean: bool,
    },
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Sin(Var),
    Cos(Var),
    Sqrt(Var),
    Square(Var),
    Softmax {
        src: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        src: Var,
        dim: usize,
        inv_std: Vec<T>,
    },
    Clamp {
        src: Var,
        lo: Bound,
        hi: Bound,
    },
    Maximum(Var, Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        scale: T,
        /// Row-major `M×N` attention weights; empty when no gradient is needed.
        probs: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward pass worth of recorded operations.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
    frozen: bool,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn broadcast_plan(lhs: &[usize], rhs: &[usize], op: &'static str) -> Result<Broadcast> {
    let mismatch = || Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    };
    if lhs == rhs {
        return Ok(Broadcast::Same);
    }
    let rlen = numel(rhs);
    if rlen == 1 {
        return Ok(Broadcast::Suffix(1));
    }
    if rhs.len() > lhs.len() {
        // allow leading ones on rhs, e.g. [1, D] against [N, D]
        let extra = rhs.len() - lhs.len();
        if rhs[..extra].iter().all(|&d| d == 1) {
            return broadcast_plan(lhs, &rhs[extra..], op).map_err(|_| mismatch());
        }
        return Err(mismatch());
    }
    let pad = lhs.len() - rhs.len();
    let mut padded = vec![1usize; pad];
    padded.extend_from_slice(rhs);
    // suffix: leading ones, then equal trailing dims
    let first_real = padded.iter().position(|&d| d != 1).unwrap_or(padded.len());
    if padded[first_real..] == lhs[first_real..] {
        return Ok(Broadcast::Suffix(rlen));
    }
    // prefix: equal leading dims, then ones (rhs written with explicit trailing ones)
    if rhs.len() == lhs.len() {
        let last_real = rhs.iter().rposition(|&d| d != 1).map_or(0, |p| p + 1);
        if rhs[..last_real] == lhs[..last_real] {
            return Ok(Broadcast::Prefix(numel(&lhs[last_real..])));
        }
    }
    Err(mismatch())
}

fn check_finite<T: Real>(op: &str, values: &[T]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: op.to_string() })
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            frozen: false,
        }
    }

    /// A graph whose parameters bind as constants, for forward-only passes.
    pub fn inference() -> Self {
        Self {
            frozen: true,
            ..Self::new()
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    /// The single element of a one-element tensor.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &str,
        value: Vec<T>,
        shape: Vec<usize>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var> {
        check_finite(name, &value)?;
        Ok(self.push(value, shape, op, requires_grad))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn leaf_impl(&mut self, values: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        if values.len() != numel(shape) {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        self.push_checked("leaf", values, shape.to_vec(), Op::Leaf, requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, values: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.leaf_impl(values, shape, false)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, values: Vec<T>, shape: &[usize]) -> Result<Var> {
        self.leaf_impl(values, shape, true)
    }

    /// Binds a stored parameter as a differentiable leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.values.clone(), p.shape.clone(), Op::Leaf, !self.frozen);
        self.params.push((id, v));
        v
    }

    /// Parameters bound so far, with their nodes.
    pub fn bound_params(&self) -> &[(ParamId, Var)] {
        &self.params
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        mk: fn(Var, Var, Broadcast) -> Op<T>,
    ) -> Result<Var> {
        let plan = broadcast_plan(self.shape(a), self.shape(b), name)?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out: Vec<T> = match plan {
            Broadcast::Same => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            _ => av
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv[plan.index(i)]))
                .collect(),
        };
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push_checked(name, out, shape, mk(a, b, plan), rg)
    }

    /// Elementwise sum; `b` may broadcast along leading or trailing dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::from_f64(c);
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_checked("scale", out, shape, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::from_f64(c);
        let out = self.value(a).iter().map(|&x| x + c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_checked("add_scalar", out, shape, Op::AddScalar(a), rg)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let name = if transpose_b { "matmul_t" } else { "matmul" };
        let mismatch = || Error::ShapeMismatch {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 || sb.len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if transpose_b {
            (sb[1], sb[0])
        } else {
            (sb[0], sb[1])
        };
        if k != kb {
            return Err(mismatch());
        }
        let mut out = vec![T::zero(); m * n];
        if transpose_b {
            kernels::mm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        } else {
            kernels::mm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push_checked(
            name,
            out,
            vec![m, n],
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                transpose_b,
            },
            rg,
        )
    }

    /// (m×k)·(k×n)
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// (m×k)·(n×k)ᵀ
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: s,
                rhs: vec![],
            });
        }
        let out = kernels::transpose(self.value(a), s[0], s[1]);
        let rg = self.rg(a);
        Ok(self.push(
            out,
            vec![s[1], s[0]],
            Op::Transpose {
                a,
                rows: s[0],
                cols: s[1],
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(out, shape.to_vec(), Op::Reshape(a), rg))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: vec![axis],
            });
        }
        Ok(())
    }

    /// Joins tensors along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat inputs"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter()
                    .enumerate()
                    .all(|(d, &v)| d == axis || v == base[d]);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &l) in parts.iter().zip(&lens) {
                let block = l * inner;
                out.extend_from_slice(&self.value(p)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            shape,
            Op::Concat {
                parts: parts.to_vec(),
                lens,
                outer,
                inner,
            },
            rg,
        ))
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("narrow", src, axis)?;
        let s = self.shape(src).to_vec();
        if start + len > s[axis] {
            return Err(Error::ShapeMismatch {
                op: "narrow",
                lhs: s,
                rhs: vec![start, len],
            });
        }
        let (outer, src_len, inner) = split_axis(&s, axis);
        let v = self.value(src);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * src_len + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(src);
        Ok(self.push(
            out,
            shape,
            Op::Narrow {
                src,
                outer,
                src_len,
                inner,
                start,
                len,
            },
            rg,
        ))
    }

    /// Rows of `src` (along axis 0) at `indices`; indices may repeat.
    pub fn gather(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if s.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: s,
                rhs: vec![],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: s[0],
            });
        }
        let row = numel(&s[1..]);
        let v = self.value(src);
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&v[i * row..(i + 1) * row]);
        }
        let mut shape = s;
        shape[0] = indices.len();
        let rg = self.rg(src);
        Ok(self.push(
            out,
            shape,
            Op::Gather {
                src,
                indices: indices.to_vec(),
                row,
            },
            rg,
        ))
    }

    fn reduce(&mut self, src: Var, axis: usize, mean: bool) -> Result<Var> {
        let name = if mean { "mean" } else { "sum" };
        self.check_axis(name, src, axis)?;
        let s = self.shape(src).to_vec();
        let (outer, len, inner) = split_axis(&s, axis);
        let v = self.value(src);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let base = (o * len + l) * inner;
                for (d, &x) in dst.iter_mut().zip(&v[base..base + inner]) {
                    *d += x;
                }
            }
        }
        if mean {
            let inv = T::one() / T::from_usize(len.max(1));
            out.iter_mut().for_each(|x| *x *= inv);
        }
        let mut shape = s;
        shape.remove(axis);
        let rg = self.rg(src);
        self.push_checked(
            name,
            out,
            shape,
            Op::Sum {
                src,
                outer,
                len,
                inner,
                mean,
            },
            rg,
        )
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, src: Var, axis: usize) -> Result<Var> {
        self.reduce(src, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, src: Var, axis: usize) -> Result<Var> {
        self.reduce(src, axis, true)
    }

    pub fn sum_all(&mut self, src: Var) -> Result<Var> {
        let n = self.value(src).len();
        let flat = self.reshape(src, &[n])?;
        self.sum(flat, 0)
    }

    pub fn mean_all(&mut self, src: Var) -> Result<Var> {
        let n = self.value(src).len();
        let flat = self.reshape(src, &[n])?;
        self.mean(flat, 0)
    }

    fn unary(&mut self, name: &str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_checked(name, out, shape, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary("sin", a, |x| x.sin(), Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary("cos", a, |x| x.cos(), Op::Cos(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    /// Softmax along `axis`, shifted by the running max for stability.
    pub fn softmax(&mut self, src: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", src, axis)?;
        let s = self.shape(src).to_vec();
        let (outer, len, inner) = split_axis(&s, axis);
        let v = self.value(src);
        let mut out = vec![T::zero(); v.len()];
        if inner == 1 {
            for o in 0..outer {
                let row = &v[o * len..(o + 1) * len];
                let dst = &mut out[o * len..(o + 1) * len];
                let mx = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let mut z = T::zero();
                for (d, &x) in dst.iter_mut().zip(row) {
                    *d = (x - mx).exp();
                    z += *d;
                }
                let inv = T::one() / z;
                dst.iter_mut().for_each(|d| *d *= inv);
            }
        } else {
            for o in 0..outer {
                let base = o * len * inner;
                let mut mx = vec![T::neg_infinity(); inner];
                for l in 0..len {
                    for (m, &x) in mx
                        .iter_mut()
                        .zip(&v[base + l * inner..base + (l + 1) * inner])
                    {
                        *m = m.max(x);
                    }
                }
                let mut z = vec![T::zero(); inner];
                for l in 0..len {
                    let off = base + l * inner;
                    for i in 0..inner {
                        let e = (v[off + i] - mx[i]).exp();
                        out[off + i] = e;
                        z[i] += e;
                    }
                }
                for l in 0..len {
                    let off = base + l * inner;
                    for i in 0..inner {
                        out[off + i] /= z[i];
                    }
                }
            }
        }
        let rg = self.rg(src);
        self.push_checked(
            "softmax",
            out,
            s,
            Op::Softmax {
                src,
                outer,
                len,
                inner,
            },
            rg,
        )
    }

    /// Normalizes each row of the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, src: Var, eps: f64) -> Result<Var> {
        let s = self.shape(src).to_vec();
        let dim = *s.last().ok_or(Error::ShapeMismatch {
            op: "layer_norm",
            lhs: vec![],
            rhs: vec![],
        })?;
        let v = self.value(src);
        let rows = v.len() / dim.max(1);
        let mut out = vec![T::zero(); v.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let inv_dim = T::one() / T::from_usize(dim);
        let eps = T::from_f64(eps);
        for r in 0..rows {
            let x = &v[r * dim..(r + 1) * dim];
            let mu = x.iter().copied().sum::<T>() * inv_dim;
            let var = x.iter().map(|&xi| (xi - mu) * (xi - mu)).sum::<T>() * inv_dim;
            let inv = T::one() / (var + eps).sqrt();
            for (o, &xi) in out[r * dim..(r + 1) * dim].iter_mut().zip(x) {
                *o = (xi - mu) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(src);
        self.push_checked(
            "layer_norm",
            out,
            s,
            Op::LayerNorm { src, dim, inv_std },
            rg,
        )
    }

    fn bound_values(&self, b: Bound, len: usize) -> Result<Vec<T>> {
        match b {
            Bound::Const(c) => Ok(vec![T::from_f64(c); len]),
            Bound::Var(v) => {
                if self.value(v).len() != len {
                    return Err(Error::ShapeMismatch {
                        op: "clamp",
                        lhs: vec![len],
                        rhs: self.shape(v).to_vec(),
                    });
                }
                Ok(self.value(v).to_vec())
            }
        }
    }

    /// Elementwise clamp into `[lo, hi]`. The gradient w.r.t. the input is
    /// one inside the interval and zero outside; outside, it flows to the
    /// active bound when that bound is a tensor.
    pub fn clamp(&mut self, src: Var, lo: Bound, hi: Bound) -> Result<Var> {
        let n = self.value(src).len();
        let lov = self.bound_values(lo, n)?;
        let hiv = self.bound_values(hi, n)?;
        let out = self
            .value(src)
            .iter()
            .zip(lov.iter().zip(&hiv))
            .map(|(&x, (&l, &h))| {
                if x < l {
                    l
                } else if x > h {
                    h
                } else {
                    x
                }
            })
            .collect();
        let shape = self.shape(src).to_vec();
        let bound_rg = |b: Bound| matches!(b, Bound::Var(v) if self.rg(v));
        let rg = self.rg(src) || bound_rg(lo) || bound_rg(hi);
        self.push_checked("clamp", out, shape, Op::Clamp { src, lo, hi }, rg)
    }

    /// Elementwise maximum of two equally shaped tensors; ties go to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "maximum",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push_checked("maximum", out, shape, Op::Maximum(a, b), rg)
    }

    /// Fused `softmax(scale · q·kᵀ) · v` for `q: [M, d]`, `k: [N, d]`, `v: [N, e]`.
    /// The `M×N` weight matrix is kept only when a gradient is needed.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Result<Var> {
        let (sq, sk, sv) = (
            self.shape(q).to_vec(),
            self.shape(k).to_vec(),
            self.shape(v).to_vec(),
        );
        if sq.len() != 2
            || sk.len() != 2
            || sv.len() != 2
            || sq[1] != sk[1]
            || sk[0] != sv[0]
            || sk[0] == 0
        {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: sq,
                rhs: sk,
            });
        }
        let (m, d, n, e) = (sq[0], sq[1], sk[0], sv[1]);
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let scale = T::from_f64(scale);
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![T::zero(); m * e];
        let mut probs = if rg {
            vec![T::zero(); m * n]
        } else {
            Vec::new()
        };
        let kt = kernels::transpose(kv, n, d);
        let vt = kernels::transpose(vv, n, e);
        let mut row = vec![T::zero(); n];
        for i in 0..m {
            let qi = &qv[i * d..(i + 1) * d];
            row.fill(T::zero());
            for (t, &x) in qi.iter().enumerate() {
                kernels::axpy(scale * x, &kt[t * n..(t + 1) * n], &mut row);
            }
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for r in row.iter_mut() {
                *r = (*r - mx).exp();
                z += *r;
            }
            let inv = T::one() / z;
            row.iter_mut().for_each(|r| *r *= inv);
            for (t, o) in out[i * e..(i + 1) * e].iter_mut().enumerate() {
                *o = kernels::dot(&row, &vt[t * n..(t + 1) * n]);
            }
            if rg {
                probs[i * n..(i + 1) * n].copy_from_slice(&row);
            }
        }
        self.push_checked(
            "attention",
            out,
            vec![m, e],
            Op::Attention {
                q,
                k,
                v,
                scale,
                probs,
            },
            rg,
        )
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(Error::NonScalarLoss(ln.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let n = &self.nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]);
            f(buf);
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, plan) | Op::Sub(a, b, plan) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                acc(*a, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi)
                });
                acc(*b, &mut |d| {
                    for (i, &gi) in g.iter().enumerate() {
                        d[plan.index(i)] += sign * gi;
                    }
                });
            }
            Op::Mul(a, b, plan) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    for (i, &gi) in g.iter().enumerate() {
                        d[i] += gi * bv[plan.index(i)];
                    }
                });
                acc(*b, &mut |d| {
                    for (i, &gi) in g.iter().enumerate() {
                        d[plan.index(i)] += gi * av[i];
                    }
                });
            }
            Op::Div(a, b, plan) => {
                let bv = self.value(*b);
                acc(*a, &mut |d| {
                    for (i, &gi) in g.iter().enumerate() {
                        d[i] += gi / bv[plan.index(i)];
                    }
                });
                acc(*b, &mut |d| {
                    for (i, &gi) in g.iter().enumerate() {
                        let j = plan.index(i);
                        d[j] -= gi * y[i] / bv[j];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).for_each(|(d, &gi)| *d += *c * gi)
            }),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi)
            }),
            &Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                transpose_b,
            } => {
                let (av, bv) = (self.value(a), self.value(b));
                if transpose_b {
                    acc(a, &mut |d| kernels::mm_nn(g, bv, d, m, n, k));
                    acc(b, &mut |d| kernels::mm_tn(g, av, d, n, m, k));
                } else {
                    acc(a, &mut |d| kernels::mm_nt(g, bv, d, m, n, k));
                    acc(b, &mut |d| kernels::mm_tn(av, g, d, k, m, n));
                }
            }
            &Op::Transpose { a, rows, cols } => {
                let gt = kernels::transpose(g, cols, rows);
                acc(a, &mut |d| {
                    d.iter_mut().zip(&gt).for_each(|(d, &gi)| *d += gi)
                });
            }
            Op::Concat {
                parts,
                lens,
                outer,
                inner,
            } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (&p, &l) in parts.iter().zip(lens) {
                    acc(p, &mut |d| {
                        for o in 0..*outer {
                            let src =
                                &g[(o * total + offset) * inner..(o * total + offset + l) * inner];
                            let dst = &mut d[o * l * inner..(o + 1) * l * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &gi)| *d += gi);
                        }
                    });
                    offset += l;
                }
            }
            &Op::Narrow {
                src,
                outer,
                src_len,
                inner,
                start,
                len,
            } => {
                acc(src, &mut |d| {
                    for o in 0..outer {
                        let base = (o * src_len + start) * inner;
                        let gs = &g[o * len * inner..(o + 1) * len * inner];
                        d[base..base + len * inner]
                            .iter_mut()
                            .zip(gs)
                            .for_each(|(d, &gi)| *d += gi);
                    }
                });
            }
            Op::Gather { src, indices, row } => {
                acc(*src, &mut |d| {
                    for (r, &i) in indices.iter().enumerate() {
                        let gs = &g[r * row..(r + 1) * row];
                        d[i * row..(i + 1) * row]
                            .iter_mut()
                            .zip(gs)
                            .for_each(|(d, &gi)| *d += gi);
                    }
                });
            }
            &Op::Sum {
                src,
                outer,
                len,
                inner,
                mean,
            } => {
                let scale = if mean {
                    T::one() / T::from_usize(len.max(1))
                } else {
                    T::one()
                };
                acc(src, &mut |d| {
                    for o in 0..outer {
                        let gs = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            d[base..base + inner]
                                .iter_mut()
                                .zip(gs)
                                .for_each(|(d, &gi)| *d += scale * gi);
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if x[i] > T::zero() {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * sigmoid(x[i]);
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i];
                }
            }),
            Op::Sin(a) => {
                let x = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * x[i].cos();
                    }
                });
            }
            Op::Cos(a) => {
                let x = self.value(*a);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] -= g[i] * x[i].sin();
                    }
                });
            }
            Op::Sqrt(a) => acc(*a, &mut |d| {
                let half = T::from_f64(0.5);
                for i in 0..d.len() {
                    d[i] += g[i] * half / y[i];
                }
            }),
            Op::Square(a) => {
                let x = self.value(*a);
                let two = T::from_f64(2.0);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += two * x[i] * g[i];
                    }
                });
            }
            &Op::Softmax {
                src,
                outer,
                len,
                inner,
            } => {
                acc(src, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let mut s = T::zero();
                            for l in 0..len {
                                s += g[idx(l)] * y[idx(l)];
                            }
                            for l in 0..len {
                                let j = idx(l);
                                d[j] += y[j] * (g[j] - s);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { src, dim, inv_std } => {
                let dim = *dim;
                let inv_dim = T::one() / T::from_usize(dim);
                acc(*src, &mut |d| {
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let rng = r * dim..(r + 1) * dim;
                        let (gr, yr) = (&g[rng.clone()], &y[rng.clone()]);
                        let mg = gr.iter().copied().sum::<T>() * inv_dim;
                        let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() * inv_dim;
                        for ((dst, &gi), &yi) in d[rng].iter_mut().zip(gr).zip(yr) {
                            *dst += inv * (gi - mg - yi * mgy);
                        }
                    }
                });
            }
            &Op::Clamp { src, lo, hi } => {
                let x = self.value(src);
                let n = x.len();
                // bound values are recomputed rather than stored
                let lov = self.bound_values(lo, n).unwrap_or_default();
                let hiv = self.bound_values(hi, n).unwrap_or_default();
                acc(src, &mut |d| {
                    for i in 0..n {
                        if x[i] >= lov[i] && x[i] <= hiv[i] {
                            d[i] += g[i];
                        }
                    }
                });
                if let Bound::Var(l) = lo {
                    acc(l, &mut |d| {
                        for i in 0..n {
                            if x[i] < lov[i] {
                                d[i] += g[i];
                            }
                        }
                    });
                }
                if let Bound::Var(h) = hi {
                    acc(h, &mut |d| {
                        for i in 0..n {
                            if x[i] > hiv[i] && x[i] >= lov[i] {
                                d[i] += g[i];
                            }
                        }
                    });
                }
            }
            Op::Attention {
                q,
                k,
                v,
                scale,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (m, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let (n, e) = (self.shape(*k)[0], self.shape(*v)[1]);
                let kt = kernels::transpose(kv, n, d);
                let vt = kernels::transpose(vv, n, e);
                let mut dq = vec![T::zero(); m * d];
                let mut dkt = vec![T::zero(); d * n];
                let mut dvt = vec![T::zero(); e * n];
                let mut ds = vec![T::zero(); n];
                for i in 0..m {
                    let p = &probs[i * n..(i + 1) * n];
                    let gi = &g[i * e..(i + 1) * e];
                    let qi = &qv[i * d..(i + 1) * d];
                    ds.fill(T::zero());
                    for (t, &x) in gi.iter().enumerate() {
                        kernels::axpy(x, &vt[t * n..(t + 1) * n], &mut ds);
                        kernels::axpy(x, p, &mut dvt[t * n..(t + 1) * n]);
                    }
                    let c = kernels::dot(p, &ds);
                    for (s, &pj) in ds.iter_mut().zip(p) {
                        *s = *scale * pj * (*s - c);
                    }
                    for (t, &x) in qi.iter().enumerate() {
                        dq[i * d + t] = kernels::dot(&ds, &kt[t * n..(t + 1) * n]);
                        kernels::axpy(x, &ds, &mut dkt[t * n..(t + 1) * n]);
                    }
                }
                let dk = kernels::transpose(&dkt, d, n);
                let dv = kernels::transpose(&dvt, e, n);
                acc(*q, &mut |dst| {
                    dst.iter_mut().zip(&dq).for_each(|(a, &b)| *a += b)
                });
                acc(*k, &mut |dst| {
                    dst.iter_mut().zip(&dk).for_each(|(a, &b)| *a += b)
                });
                acc(*v, &mut |dst| {
                    dst.iter_mut().zip(&dv).for_each(|(a, &b)| *a += b)
                });
            }
            Op::Maximum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if av[i] >= bv[i] {
                            d[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        if av[i] < bv[i] {
                            d[i] += g[i];
                        }
                    }
                });
            }
        }
    }
}

#[inline]
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Result of [`Graph::backward`]: accumulated gradients of leaf nodes.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf; zeros when the leaf did not influence the loss.
    pub fn wrt(&self, graph: &Graph<T>, v: Var) -> Vec<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![T::zero(); graph.value(v).len()])
    }

    /// Gradient of a leaf, `None` when it did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for every parameter in `store`, zero-filled for unbound or uninfluential ones.
    pub fn params(&self, store: &ParamStore<T>) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = store
            .iter()
            .map(|(_, p)| vec![T::zero(); p.values.len()])
            .collect();
        for &(id, v) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                out[id.0].copy_from_slice(g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_plans() {
        assert_eq!(
            broadcast_plan(&[4, 3], &[4, 3], "t").unwrap(),
            Broadcast::Same
        );
        assert_eq!(
            broadcast_plan(&[4, 3], &[3], "t").unwrap(),
            Broadcast::Suffix(3)
        );
        assert_eq!(
            broadcast_plan(&[4, 3], &[1, 3], "t").unwrap(),
            Broadcast::Suffix(3)
        );
        assert_eq!(
            broadcast_plan(&[4, 3], &[4, 1], "t").unwrap(),
            Broadcast::Prefix(3)
        );
        assert_eq!(
            broadcast_plan(&[5, 4, 3], &[5, 4, 1], "t").unwrap(),
            Broadcast::Prefix(3)
        );
        assert_eq!(
            broadcast_plan(&[4, 3], &[], "t").unwrap(),
            Broadcast::Suffix(1)
        );
        assert!(broadcast_plan(&[4, 3], &[4], "t").is_err());
        assert!(broadcast_plan(&[4, 3], &[2, 3], "t").is_err());
    }

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec![0.0; 3], &[3]).unwrap();
        let y = g.softmax(x, 0).unwrap();
        for &v in g.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec![-1.0, 0.0, 2.0], &[3]).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 2.0], &[2]).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(&g, x), vec![2.0, 4.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 2.0], &[2]).unwrap();
        let unused = g.leaf(vec![3.0], &[1]).unwrap();
        let loss = g.sum_all(x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(&g, unused), vec![0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn nan_is_reported_with_op_name() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(vec![-1.0], &[1]).unwrap();
        match g.sqrt(x) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "sqrt"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_names_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
        let b = g.constant(vec![0.0; 6], &[2, 3]).unwrap();
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clamp_values_and_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(vec![-2.0, 0.5, 3.0], &[3]).unwrap();
        let y = g.clamp(x, Bound::Const(-1.0), Bound::Const(1.0)).unwrap();
        assert_eq!(g.value(y), &[-1.0, 0.5, 1.0]);
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(&g, x), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn param_binding_is_shared() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", &[2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let s = g.mul(a, b).unwrap();
        let loss = g.sum_all(s).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.params(&store)[0], vec![2.0, 4.0]);
    }
}
