//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order: `backward` walks it once in reverse.

use std::collections::HashMap;

use super::gemm::gemm;
use super::params::{ParamId, ParamStore};
use super::tensor::{inverse_perm, split_axis, Tensor};
use super::{NumericsError, Real};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnKind {
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
    Exp,
    Log,
    Abs,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Focal loss settings shared by the graph op and the scalar helper.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub gamma: Real,
    pub alpha: Real,
    /// Exponent of the `(1 - target)` weight on negatives for soft
    /// (Gaussian) targets; `None` gives the hard-target binary form.
    pub negative_penalty: Option<Real>,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
            negative_penalty: None,
        }
    }
}

pub const FOCAL_EPS: Real = 1e-7;

enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_b: bool,
        trans_b: bool,
    },
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        s: Real,
    },
    AddScalar {
        a: Var,
    },
    Unary {
        kind: UnKind,
        a: Var,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    Normalize {
        a: Var,
        inv_std: Vec<Real>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    GraphConv {
        x: Var,
        adj: Tensor,
    },
    Reduce {
        kind: Reduce,
        a: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    SumAll {
        a: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Focal {
        probs: Var,
        targets: Tensor,
        params: FocalParams,
        norm: Real,
    },
    Diou {
        center: Var,
        half: Var,
        gt: Vec<(Real, Real)>,
    },
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    t_in: usize,
    v: usize,
    c_in: usize,
    kernel: usize,
    c_out: usize,
    t_out: usize,
    stride: usize,
    pad: usize,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation. Confined to one worker; independent graphs may
/// be evaluated concurrently.
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_lookup: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_lookup: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph that records values only; parameters are treated as constants.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Free leaf that receives a gradient (used for gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Brings a stored parameter into the graph. Repeated calls return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_lookup.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.push((id, v));
        self.param_lookup.insert(id, v);
        v
    }

    // ------------------------------------------------------------------
    // forward ops

    /// `a[..., m, k] · b`, where `b` is `[k, n]` (shared across the leading
    /// axes of `a`) or `[..., k, n]` with the same leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` on the last two axes.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, NumericsError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul needs rank >= 2", &sa, &sb));
        }
        let m = sa[sa.len() - 2];
        let k = sa[sa.len() - 1];
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(shape_err("matmul inner dims", &sa, &sb));
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let shared_b = lead_b.is_empty();
        if !shared_b && lead_a != lead_b {
            return Err(shape_err("matmul batch dims", &sa, &sb));
        }
        let batch: usize = lead_a.iter().product();
        let mut out_shape = lead_a.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            if shared_b {
                gemm(batch * m, k, n, av, false, bv, trans_b, &mut out, false);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        false,
                        &bv[i * k * n..(i + 1) * k * n],
                        trans_b,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
                trans_b,
            },
            ng,
        ))
    }

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var, NumericsError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err(
                "elementwise operand must match a trailing suffix",
                sa,
                sb,
            ));
        }
        let av = self.value(a);
        let bv = self.value(b).data();
        let nb = bv.len();
        let data: Vec<Real> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv[i % nb];
                match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                }
            })
            .collect();
        let t = Tensor::new(av.shape(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Binary { kind, a, b }, ng))
    }

    /// Elementwise sum; `b` may be a trailing-suffix shape of `a`
    /// (leading-axis expansion).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, s: Real) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale { a, s }, ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: Real) -> Var {
        let t = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(t, Op::AddScalar { a }, ng)
    }

    fn unary(&mut self, kind: UnKind, a: Var) -> Var {
        let f: fn(Real) -> Real = match kind {
            UnKind::Relu => |x| x.max(0.0),
            UnKind::Sigmoid => sigmoid,
            UnKind::Tanh => Real::tanh,
            UnKind::Softplus => softplus,
            UnKind::Exp => Real::exp,
            UnKind::Log => Real::ln,
            UnKind::Abs => Real::abs,
            UnKind::Square => |x| x * x,
        };
        let t = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(t, Op::Unary { kind, a }, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnKind::Relu, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnKind::Sigmoid, a)
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnKind::Tanh, a)
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(UnKind::Softplus, a)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnKind::Exp, a)
    }
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnKind::Log, a)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnKind::Abs, a)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnKind::Square, a)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::Shape(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = Real::NEG_INFINITY;
                for l in 0..len {
                    mx = mx.max(src[base + l * inner]);
                }
                let mut sum = 0.0;
                for l in 0..len {
                    let e = (src[base + l * inner] - mx).exp();
                    out[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..len {
                    out[base + l * inner] /= sum;
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax { a, axis }, ng))
    }

    /// Zero-mean, unit-variance normalization over the last axis.
    pub fn normalize_last(&mut self, a: Var, eps: Real) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        let c = *shape
            .last()
            .ok_or_else(|| NumericsError::Shape("normalize on a scalar".into()))?;
        let src = self.value(a).data();
        let rows = src.len() / c.max(1);
        let mut out = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * c..(r + 1) * c];
            let mean = row.iter().sum::<Real>() / c as Real;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<Real>() / c as Real;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                out[r * c + j] = (row[j] - mean) * is;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Normalize { a, inv_std }, ng))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        eps: Real,
    ) -> Result<Var, NumericsError> {
        let n = self.normalize_last(a, eps)?;
        let s = self.mul(n, gamma)?;
        self.add(s, beta)
    }

    /// Temporal convolution on channels-last `x: [T, V, C_in]` with
    /// `w: [K, C_in, C_out]`; returns `[T_out, V, C_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NumericsError> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] || stride == 0 {
            return Err(shape_err("conv1d expects x [T,V,Cin], w [K,Cin,Cout]", &sx, &sw));
        }
        let (t_in, v, c_in) = (sx[0], sx[1], sx[2]);
        let (kernel, c_out) = (sw[0], sw[2]);
        if t_in + 2 * pad < kernel {
            return Err(NumericsError::Shape(format!(
                "conv1d: {t_in} frames (+{pad} pad) shorter than kernel {kernel}"
            )));
        }
        if let Some(bv) = b {
            if self.shape(bv) != [c_out] {
                return Err(shape_err("conv1d bias", self.shape(bv), &[c_out]));
            }
        }
        let t_out = (t_in + 2 * pad - kernel) / stride + 1;
        let geom = ConvGeom {
            t_in,
            v,
            c_in,
            kernel,
            c_out,
            t_out,
            stride,
            pad,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let mut out = vec![0.0; t_out * v * c_out];
        gemm(
            t_out * v,
            kernel * c_in,
            c_out,
            &cols,
            false,
            self.value(w).data(),
            false,
            &mut out,
            false,
        );
        if let Some(bv) = b {
            let bias = self.value(bv).data();
            for row in out.chunks_mut(c_out) {
                for (o, bb) in row.iter_mut().zip(bias) {
                    *o += bb;
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|bv| self.ng(bv));
        Ok(self.push(
            Tensor::new(&[t_out, v, c_out], out)?,
            Op::Conv1d { x, w, b, geom },
            ng,
        ))
    }

    /// Node mixing `y[t, v, c] = Σ_u adj[v, u] · x[t, u, c]` with a fixed
    /// adjacency.
    pub fn graph_conv(&mut self, x: Var, adj: &Tensor) -> Result<Var, NumericsError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || adj.shape() != [sx[1], sx[1]] {
            return Err(shape_err("graph_conv expects x [T,V,C], adj [V,V]", &sx, adj.shape()));
        }
        let (t, v, c) = (sx[0], sx[1], sx[2]);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for ti in 0..t {
            let blk = ti * v * c..(ti + 1) * v * c;
            gemm(v, v, c, adj.data(), false, &src[blk.clone()], false, &mut out[blk], false);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(&sx, out)?,
            Op::GraphConv {
                x,
                adj: adj.clone(),
            },
            ng,
        ))
    }

    /// Reduction along `axis`, which is removed from the shape.
    pub fn reduce(&mut self, a: Var, axis: usize, kind: Reduce) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(NumericsError::Shape(format!(
                "reduce axis {axis} invalid for {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if kind == Reduce::Max {
            argmax = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let dst = o * inner + i;
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let mut s = 0.0;
                        for l in 0..len {
                            s += src[base + l * inner];
                        }
                        out[dst] = if kind == Reduce::Mean { s / len as Real } else { s };
                    }
                    Reduce::Max => {
                        let mut best = 0;
                        for l in 1..len {
                            if src[base + l * inner] > src[base + best * inner] {
                                best = l;
                            }
                        }
                        argmax[dst] = best;
                        out[dst] = src[base + best * inner];
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Reduce {
                kind,
                a,
                axis,
                argmax,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.reduce(a, axis, Reduce::Sum)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.reduce(a, axis, Reduce::Mean)
    }

    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.reduce(a, axis, Reduce::Max)
    }

    /// Sum of every element as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll { a }, ng)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let first = self
            .shape(*parts.first().ok_or_else(|| NumericsError::Shape("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(NumericsError::Shape(format!("concat axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(shape_err("concat operands disagree", s, &first));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for &p in parts {
            let len = self.shape(p)[axis];
            let src = self.value(p).data();
            for o in 0..outer {
                let dst = o * total * inner + offset * inner;
                out[dst..dst + len * inner]
                    .copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            offset += len;
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, NumericsError> {
        let nd = self.shape(a).len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(NumericsError::Shape(format!(
                "invalid permutation {perm:?} for rank {nd}"
            )));
        }
        let t = self.value(a).permute(perm);
        let ng = self.ng(a);
        Ok(self.push(
            t,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            ng,
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, i: usize, j: usize) -> Result<Var, NumericsError> {
        let mut perm: Vec<usize> = (0..self.shape(a).len()).collect();
        if i >= perm.len() || j >= perm.len() {
            return Err(NumericsError::Shape("transpose axis out of range".into()));
        }
        perm.swap(i, j);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape { a }, ng))
    }

    /// Row gather from `table: [R, C]`; returns `[indices.len(), C]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(NumericsError::Shape(format!("embedding table must be 2-D, got {st:?}")));
        }
        let (rows, c) = (st[0], st[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::Shape(format!(
                "embedding index {bad} out of range for table of {rows} rows"
            )));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::new(&[indices.len(), c], out)?,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// `a[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(NumericsError::Shape(format!(
                "slice {start}..{end} on axis {axis} of {shape:?}"
            )));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let b = o * len * inner + start * inner;
            out.extend_from_slice(&src[b..b + w * inner]);
        }
        let mut s = shape;
        s[axis] = w;
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(&s, out)?, Op::Slice { a, axis, start }, ng))
    }

    /// Focal loss over probabilities in `(0, 1)` against targets in `[0, 1]`
    /// (entries equal to 1 are positives), summed and divided by `norm`.
    pub fn focal(
        &mut self,
        probs: Var,
        targets: &Tensor,
        params: FocalParams,
        norm: Real,
    ) -> Result<Var, NumericsError> {
        if self.shape(probs) != targets.shape() {
            return Err(shape_err("focal targets", self.shape(probs), targets.shape()));
        }
        if norm <= 0.0 || !norm.is_finite() {
            return Err(NumericsError::NonFinite(format!("focal normalizer {norm}")));
        }
        let p = self.value(probs).data();
        let mut total = 0.0;
        for (&pi, &ti) in p.iter().zip(targets.data()) {
            total += focal_term(pi, ti, &params)?.0;
        }
        let ng = self.ng(probs);
        Ok(self.push(
            Tensor::scalar(total / norm),
            Op::Focal {
                probs,
                targets: targets.clone(),
                params,
                norm,
            },
            ng,
        ))
    }

    /// Mean 1-D Distance-IoU loss of predicted intervals
    /// `[center - half, center + half]` against ground-truth intervals.
    pub fn diou(
        &mut self,
        center: Var,
        half: Var,
        gt: &[(Real, Real)],
    ) -> Result<Var, NumericsError> {
        let k = gt.len();
        if self.shape(center) != [k] || self.shape(half) != [k] || k == 0 {
            return Err(shape_err("diou expects [K] center/half", self.shape(center), &[k]));
        }
        let c = self.value(center).data();
        let h = self.value(half).data();
        let mut total = 0.0;
        for i in 0..k {
            total += diou_terms((c[i] - h[i], c[i] + h[i]), gt[i])?.0;
        }
        let ng = self.ng(center) || self.ng(half);
        Ok(self.push(
            Tensor::scalar(total / k as Real),
            Op::Diou {
                center,
                half,
                gt: gt.to_vec(),
            },
            ng,
        ))
    }

    // ------------------------------------------------------------------
    // backward

    /// Reverse-mode pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<Real>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape(), d).expect("gradient shape")))
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, idx: usize, g: &[Real], grads: &mut [Option<Vec<Real>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
                trans_b,
            } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if self.ng(a) {
                    let ga = self.grad_buf(a, grads);
                    if shared_b {
                        // dA = G · Bᵀ  (B stored [k,n], or [n,k] when trans_b)
                        gemm(batch * m, n, k, g, false, bv, !trans_b, ga, true);
                    } else {
                        for i in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..(i + 1) * m * n],
                                false,
                                &bv[i * k * n..(i + 1) * k * n],
                                !trans_b,
                                &mut ga[i * m * k..(i + 1) * m * k],
                                true,
                            );
                        }
                    }
                }
                if self.ng(b) {
                    let gb = self.grad_buf(b, grads);
                    if shared_b {
                        if trans_b {
                            // dB[n,k] = Gᵀ · A
                            gemm(n, batch * m, k, g, true, av, false, gb, true);
                        } else {
                            gemm(k, batch * m, n, av, true, g, false, gb, true);
                        }
                    } else {
                        for i in 0..batch {
                            let gi = &g[i * m * n..(i + 1) * m * n];
                            let ai = &av[i * m * k..(i + 1) * m * k];
                            let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                            if trans_b {
                                gemm(n, m, k, gi, true, ai, false, gbi, true);
                            } else {
                                gemm(k, m, n, ai, true, gi, false, gbi, true);
                            }
                        }
                    }
                }
            }
            &Op::Binary { kind, a, b } => {
                let nb = self.value(b).len();
                if self.ng(a) {
                    let bv = self.value(b).data();
                    let ga = self.grad_buf(a, grads);
                    for (i, (ga_i, gi)) in ga.iter_mut().zip(g).enumerate() {
                        *ga_i += match kind {
                            BinKind::Add | BinKind::Sub => *gi,
                            BinKind::Mul => gi * bv[i % nb],
                        };
                    }
                }
                if self.ng(b) {
                    let av = self.value(a).data();
                    let gb = self.grad_buf(b, grads);
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % nb] += match kind {
                            BinKind::Add => *gi,
                            BinKind::Sub => -*gi,
                            BinKind::Mul => gi * av[i],
                        };
                    }
                }
            }
            &Op::Scale { a, s } => {
                let ga = self.grad_buf(a, grads);
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += gi * s;
                }
            }
            &Op::AddScalar { a } | &Op::Reshape { a } => {
                let ga = self.grad_buf(a, grads);
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += gi;
                }
            }
            &Op::Unary { kind, a } => {
                let x = self.value(a).data();
                let y = node.value.data();
                let ga = self.grad_buf(a, grads);
                for i in 0..g.len() {
                    let d = match kind {
                        UnKind::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnKind::Sigmoid => y[i] * (1.0 - y[i]),
                        UnKind::Tanh => 1.0 - y[i] * y[i],
                        UnKind::Softplus => sigmoid(x[i]),
                        UnKind::Exp => y[i],
                        UnKind::Log => 1.0 / x[i],
                        UnKind::Abs => {
                            if x[i] > 0.0 {
                                1.0
                            } else if x[i] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnKind::Square => 2.0 * x[i],
                    };
                    ga[i] += g[i] * d;
                }
            }
            &Op::Softmax { a, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), axis);
                let ga = self.grad_buf(a, grads);
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for l in 0..len {
                            dot += g[base + l * inner] * y[base + l * inner];
                        }
                        for l in 0..len {
                            let p = base + l * inner;
                            ga[p] += y[p] * (g[p] - dot);
                        }
                    }
                }
            }
            Op::Normalize { a, inv_std } => {
                let y = node.value.data();
                let c = *node.value.shape().last().unwrap();
                let ga = self.grad_buf(*a, grads);
                for (r, &is) in inv_std.iter().enumerate() {
                    let gr = &g[r * c..(r + 1) * c];
                    let yr = &y[r * c..(r + 1) * c];
                    let mg = gr.iter().sum::<Real>() / c as Real;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<Real>() / c as Real;
                    for j in 0..c {
                        ga[r * c + j] += is * (gr[j] - mg - yr[j] * mgy);
                    }
                }
            }
            &Op::Conv1d { x, w, b, geom } => {
                let rows = geom.t_out * geom.v;
                let kc = geom.kernel * geom.c_in;
                if self.ng(w) {
                    let cols = im2col(self.value(x).data(), &geom);
                    let gw = self.grad_buf(w, grads);
                    gemm(kc, rows, geom.c_out, &cols, true, g, false, gw, true);
                }
                if let Some(bv) = b {
                    if self.ng(bv) {
                        let gb = self.grad_buf(bv, grads);
                        for row in g.chunks(geom.c_out) {
                            for (x, gi) in gb.iter_mut().zip(row) {
                                *x += gi;
                            }
                        }
                    }
                }
                if self.ng(x) {
                    let mut dcols = vec![0.0; rows * kc];
                    gemm(rows, geom.c_out, kc, g, false, self.value(w).data(), true, &mut dcols, false);
                    let gx = self.grad_buf(x, grads);
                    col2im_add(&dcols, &geom, gx);
                }
            }
            Op::GraphConv { x, adj } => {
                let s = node.value.shape();
                let (t, v, c) = (s[0], s[1], s[2]);
                let gx = self.grad_buf(*x, grads);
                for ti in 0..t {
                    let blk = ti * v * c..(ti + 1) * v * c;
                    gemm(v, v, c, adj.data(), true, &g[blk.clone()], false, &mut gx[blk], true);
                }
            }
            Op::Reduce {
                kind,
                a,
                axis,
                argmax,
            } => {
                let (outer, len, inner) = split_axis(self.shape(*a), *axis);
                let ga = self.grad_buf(*a, grads);
                for o in 0..outer {
                    for i in 0..inner {
                        let src = o * inner + i;
                        let base = o * len * inner + i;
                        match kind {
                            Reduce::Sum => {
                                for l in 0..len {
                                    ga[base + l * inner] += g[src];
                                }
                            }
                            Reduce::Mean => {
                                let s = g[src] / len as Real;
                                for l in 0..len {
                                    ga[base + l * inner] += s;
                                }
                            }
                            Reduce::Max => ga[base + argmax[src] * inner] += g[src],
                        }
                    }
                }
            }
            &Op::SumAll { a } => {
                let ga = self.grad_buf(a, grads);
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.ng(p) {
                        let gp = self.grad_buf(p, grads);
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            for (d, s) in gp[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(&g[src..src + len * inner])
                            {
                                *d += s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Permute { a, perm } => {
                let gt = Tensor::new(node.value.shape(), g.to_vec())
                    .expect("grad shape")
                    .permute(&inverse_perm(perm));
                let ga = self.grad_buf(*a, grads);
                for (x, y) in ga.iter_mut().zip(gt.data()) {
                    *x += y;
                }
            }
            Op::Embedding { table, indices } => {
                let c = self.shape(*table)[1];
                let gt = self.grad_buf(*table, grads);
                for (row, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        gt[i * c + j] += g[row * c + j];
                    }
                }
            }
            &Op::Slice { a, axis, start } => {
                let (outer, len, inner) = split_axis(self.shape(a), axis);
                let w = node.value.shape()[axis];
                let ga = self.grad_buf(a, grads);
                for o in 0..outer {
                    let b = o * len * inner + start * inner;
                    for (d, s) in ga[b..b + w * inner]
                        .iter_mut()
                        .zip(&g[o * w * inner..(o + 1) * w * inner])
                    {
                        *d += s;
                    }
                }
            }
            Op::Focal {
                probs,
                targets,
                params,
                norm,
            } => {
                let p = self.value(*probs).data();
                let scale = g[0] / norm;
                let gp = self.grad_buf(*probs, grads);
                for i in 0..p.len() {
                    let (_, d) = focal_term(p[i], targets.data()[i], params)
                        .expect("validated in forward");
                    gp[i] += scale * d;
                }
            }
            Op::Diou { center, half, gt } => {
                let c = self.value(*center).data().to_vec();
                let h = self.value(*half).data().to_vec();
                let k = gt.len() as Real;
                let mut dc = vec![0.0; c.len()];
                let mut dh = vec![0.0; c.len()];
                for i in 0..c.len() {
                    let (_, ds, de) =
                        diou_terms((c[i] - h[i], c[i] + h[i]), gt[i]).expect("validated in forward");
                    dc[i] = g[0] / k * (ds + de);
                    dh[i] = g[0] / k * (de - ds);
                }
                if self.ng(*center) {
                    let gc = self.grad_buf(*center, grads);
                    gc.iter_mut().zip(&dc).for_each(|(a, b)| *a += b);
                }
                if self.ng(*half) {
                    let gh = self.grad_buf(*half, grads);
                    gh.iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
                }
            }
        }
    }

    fn grad_buf<'a>(&self, v: Var, grads: &'a mut [Option<Vec<Real>>]) -> &'a mut Vec<Real> {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter pulled into the graph, in first-use order.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g.clone())))
            .collect()
    }
}

pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: Real) -> Real {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Per-element focal value and its derivative with respect to `p`.
pub(crate) fn focal_term(p: Real, target: Real, fp: &FocalParams) -> Result<(Real, Real), NumericsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(NumericsError::NonFinite(format!("probability {p} outside [0, 1]")));
    }
    let clamped = !(FOCAL_EPS..=1.0 - FOCAL_EPS).contains(&p);
    let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
    let gamma = fp.gamma;
    let (val, dp) = if target >= 1.0 {
        let q = 1.0 - p;
        let qg = q.powf(gamma);
        let lp = p.ln();
        let val = -fp.alpha * qg * lp;
        let dq = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
        (val, -fp.alpha * (-dq * lp + qg / p))
    } else {
        let w = match fp.negative_penalty {
            Some(beta) => (1.0 - target).powf(beta),
            None => 1.0,
        };
        let pg = p.powf(gamma);
        let l1p = (1.0 - p).ln();
        let val = -(1.0 - fp.alpha) * w * pg * l1p;
        let dpg = if gamma == 0.0 { 0.0 } else { gamma * p.powf(gamma - 1.0) };
        (val, -(1.0 - fp.alpha) * w * (dpg * l1p - pg / (1.0 - p)))
    };
    Ok((val, if clamped { 0.0 } else { dp }))
}

/// DIoU value and derivatives with respect to predicted start and end.
pub(crate) fn diou_terms(pred: (Real, Real), gt: (Real, Real)) -> Result<(Real, Real, Real), NumericsError> {
    let (ps, pe) = pred;
    let (gs, ge) = gt;
    if !(ge > gs) {
        return Err(NumericsError::Degenerate(format!(
            "ground-truth interval [{gs}, {ge}] has no length"
        )));
    }
    if pe < ps || !ps.is_finite() || !pe.is_finite() {
        return Err(NumericsError::Degenerate(format!("predicted interval [{ps}, {pe}]")));
    }
    let lo = ps.max(gs);
    let hi = pe.min(ge);
    let inter = (hi - lo).max(0.0);
    let union = (pe - ps) + (ge - gs) - inter;
    let iou = inter / union;
    let rho = 0.5 * (ps + pe) - 0.5 * (gs + ge);
    let encl = pe.max(ge) - ps.min(gs);
    let val = 1.0 - iou + rho * rho / (encl * encl);

    let overlapping = hi > lo;
    let di_de = if overlapping && pe < ge { 1.0 } else { 0.0 };
    let di_ds = if overlapping && ps > gs { -1.0 } else { 0.0 };
    let du_de = 1.0 - di_de;
    let du_ds = -1.0 - di_ds;
    let diou_de = (di_de * union - inter * du_de) / (union * union);
    let diou_ds = (di_ds * union - inter * du_ds) / (union * union);
    let dc_de = if pe >= ge { 1.0 } else { 0.0 };
    let dc_ds = if ps <= gs { -1.0 } else { 0.0 };
    // d(ρ²/c²) = 2ρ·(1/2)/c² − 2ρ²·dc/c³
    let dpen_de = rho / (encl * encl) - 2.0 * rho * rho * dc_de / (encl * encl * encl);
    let dpen_ds = rho / (encl * encl) - 2.0 * rho * rho * dc_ds / (encl * encl * encl);
    Ok((val, -diou_ds + dpen_ds, -diou_de + dpen_de))
}

fn im2col(x: &[Real], g: &ConvGeom) -> Vec<Real> {
    let kc = g.kernel * g.c_in;
    let mut cols = vec![0.0; g.t_out * g.v * kc];
    for to in 0..g.t_out {
        for kk in 0..g.kernel {
            let t = (to * g.stride + kk) as isize - g.pad as isize;
            if t < 0 || t as usize >= g.t_in {
                continue;
            }
            let t = t as usize;
            for vi in 0..g.v {
                let row = (to * g.v + vi) * kc + kk * g.c_in;
                let src = (t * g.v + vi) * g.c_in;
                cols[row..row + g.c_in].copy_from_slice(&x[src..src + g.c_in]);
            }
        }
    }
    cols
}

fn col2im_add(dcols: &[Real], g: &ConvGeom, dx: &mut [Real]) {
    let kc = g.kernel * g.c_in;
    for to in 0..g.t_out {
        for kk in 0..g.kernel {
            let t = (to * g.stride + kk) as isize - g.pad as isize;
            if t < 0 || t as usize >= g.t_in {
                continue;
            }
            let t = t as usize;
            for vi in 0..g.v {
                let row = (to * g.v + vi) * kc + kk * g.c_in;
                let dst = (t * g.v + vi) * g.c_in;
                for c in 0..g.c_in {
                    dx[dst + c] += dcols[row + c];
                }
            }
        }
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::Shape(format!("{what}: {a:?} vs {b:?}"))
}
