//! Define-by-run recording of primitive tensor operations.
//!
//! A [`Tape`] owns an ordered list of executed primitives. Ops run eagerly:
//! each call computes its value immediately and, when recording is enabled and
//! any input sits on a differentiable path, appends a node holding handles to
//! the inputs and output. Because nodes are appended in execution order, the
//! list is already topologically sorted, and `backward` simply walks it in
//! reverse, accumulating gradients per tensor id. Gradients of tensors marked
//! `with_grad` are folded into their `grad` accumulators at the end (summing
//! across repeated uses and repeated backward calls).
//!
//! Drop the tape (or let it go out of scope) to free every recorded
//! intermediate; a tape built with [`Tape::no_grad`] records nothing, so
//! intermediates die as soon as their handles do.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use super::kernels as k;
use super::{broadcast_shape, broadcast_strides, numel, strides, Scalar, Tensor};
use crate::error::{Error, Result};

enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Gelu,
    Softmax { axis: usize },
    Matmul { batch: usize, m: usize, k: usize, n: usize },
    Sum { axes: Vec<usize>, keepdims: bool },
    Mean { axes: Vec<usize>, keepdims: bool },
    Reshape,
    Permute { perm: Vec<usize> },
    Slice { axis: usize, start: usize, len: usize },
    Concat { axis: usize },
    Conv2d { stride: usize, padding: usize, groups: usize },
    ConvTranspose2d { stride: usize },
    UpsampleNearest { factor: usize },
}

struct Node<T: Scalar> {
    op: Op,
    inputs: Vec<Tensor<T>>,
    output: Tensor<T>,
}

/// Ordered record of executed primitives for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

// ── Odometer walks over broadcast/permuted iteration spaces ─────────────────

/// Visit every element of `oshape` in row-major order, yielding offsets into
/// two strided views. The innermost dimension is looped directly.
fn for_each_offsets2(oshape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    if oshape.is_empty() {
        f(0, 0);
        return;
    }
    let nd = oshape.len();
    let inner = oshape[nd - 1];
    let outer: usize = oshape[..nd - 1].iter().product();
    let (sa_in, sb_in) = (sa[nd - 1], sb[nd - 1]);
    let mut counters = vec![0usize; nd.saturating_sub(1)];
    let (mut offa, mut offb) = (0usize, 0usize);
    for _ in 0..outer {
        for j in 0..inner {
            f(offa + j * sa_in, offb + j * sb_in);
        }
        for d in (0..nd - 1).rev() {
            counters[d] += 1;
            offa += sa[d];
            offb += sb[d];
            if counters[d] < oshape[d] {
                break;
            }
            counters[d] = 0;
            offa -= sa[d] * oshape[d];
            offb -= sb[d] * oshape[d];
        }
    }
}

fn binary_map<T: Scalar>(
    a: &[T],
    ashape: &[usize],
    b: &[T],
    bshape: &[usize],
    oshape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    // Fast path: identical shapes — plain zip.
    if ashape == bshape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    // Fast path: singleton rhs.
    if b.len() == 1 {
        let bv = b[0];
        return a.iter().map(|&x| f(x, bv)).collect();
    }
    let sa = broadcast_strides(ashape, oshape);
    let sb = broadcast_strides(bshape, oshape);
    let mut out = Vec::with_capacity(numel(oshape));
    for_each_offsets2(oshape, &sa, &sb, |ia, ib| out.push(f(a[ia], b[ib])));
    out
}

/// Sum a gradient laid out over `gshape` down to `target` (the pre-broadcast
/// shape), adding over every stretched dimension in ascending scan order.
fn reduce_to_shape<T: Scalar>(g: &[T], gshape: &[usize], target: &[usize]) -> Vec<T> {
    if gshape == target {
        return g.to_vec();
    }
    let mut out = vec![T::zero(); numel(target)];
    let st = broadcast_strides(target, gshape);
    let sg = strides(gshape);
    for_each_offsets2(gshape, &sg, &st, |ig, it| out[it] = out[it] + g[ig]);
    out
}

fn permute_data<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let oshape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let istr = strides(shape);
    let gather: Vec<usize> = perm.iter().map(|&p| istr[p]).collect();
    let zero = vec![0usize; oshape.len()];
    let mut out = Vec::with_capacity(x.len());
    for_each_offsets2(&oshape, &gather, &zero, |ix, _| out.push(x[ix]));
    out
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Per-input-dimension strides into the reduced output of sum/mean (0 on
/// reduced axes), plus the reduction count.
fn reduction_layout(in_shape: &[usize], axes: &[usize], keepdims: bool) -> (Vec<usize>, Vec<usize>, usize) {
    let reduced: HashSet<usize> = axes.iter().copied().collect();
    let mut out_shape: Vec<usize> = Vec::new();
    for (d, &e) in in_shape.iter().enumerate() {
        if reduced.contains(&d) {
            if keepdims {
                out_shape.push(1);
            }
        } else {
            out_shape.push(e);
        }
    }
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    // Stride of each input dim inside the output buffer.
    let mut eff = vec![0usize; in_shape.len()];
    let ostr = strides(&out_shape);
    let mut oi = 0;
    for d in 0..in_shape.len() {
        if reduced.contains(&d) {
            if keepdims {
                oi += 1;
            }
        } else {
            eff[d] = ostr[oi];
            oi += 1;
        }
    }
    let count: usize = axes.iter().map(|&a| in_shape[a]).product();
    (out_shape, eff, count)
}

impl<T: Scalar> Tape<T> {
    /// A recording tape: every differentiable op is retained for backward.
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), recording: true }
    }

    /// A non-recording tape for inference: ops compute values only, and
    /// intermediates are freed as soon as their handles drop.
    pub fn no_grad() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(&self, op: Op, inputs: &[&Tensor<T>], output: &Tensor<T>) {
        if self.recording && inputs.iter().any(|t| t.tracked()) {
            output.mark_tracked();
            self.nodes.borrow_mut().push(Node {
                op,
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                output: output.clone(),
            });
        }
    }

    // ── Elementwise binary ──────────────────────────────────────────────

    fn binary(&self, op: Op, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let oshape = broadcast_shape(a.shape(), b.shape())?;
        let data = binary_map(&a.data(), a.shape(), &b.data(), b.shape(), &oshape, f);
        let out = Tensor::from_vec(data, &oshape)?;
        self.record(op, &[a, b], &out);
        Ok(out)
    }

    /// Elementwise `a + b` with trailing-aligned broadcasting.
    pub fn add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(Op::Add, a, b, |x, y| x + y)
    }

    /// Elementwise `a - b` with trailing-aligned broadcasting.
    pub fn sub(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(Op::Sub, a, b, |x, y| x - y)
    }

    /// Elementwise `a * b` with trailing-aligned broadcasting.
    pub fn mul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(Op::Mul, a, b, |x, y| x * y)
    }

    /// Elementwise `a / b` with trailing-aligned broadcasting.
    pub fn div(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(Op::Div, a, b, |x, y| x / y)
    }

    /// Multiply by a compile-time constant (recorded as `mul` with an
    /// untracked scalar operand).
    pub fn scale(&self, a: &Tensor<T>, c: f64) -> Result<Tensor<T>> {
        self.mul(a, &Tensor::scalar(T::from_f64(c)))
    }

    /// Add a compile-time constant.
    pub fn add_const(&self, a: &Tensor<T>, c: f64) -> Result<Tensor<T>> {
        self.add(a, &Tensor::scalar(T::from_f64(c)))
    }

    // ── Elementwise unary ───────────────────────────────────────────────

    fn unary(&self, op: Op, a: &Tensor<T>, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
        let data: Vec<T> = a.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_vec(data, a.shape())?;
        self.record(op, &[a], &out);
        Ok(out)
    }

    pub fn tanh(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary(Op::Tanh, a, |x| x.tanh())
    }

    pub fn exp(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary(Op::Exp, a, |x| x.exp())
    }

    /// Natural log. Inputs must be strictly positive.
    pub fn ln(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        if a.data().iter().any(|v| *v <= T::zero()) {
            return Err(Error::numeric("ln of a non-positive element".to_string()));
        }
        self.unary(Op::Ln, a, |x| x.ln())
    }

    /// Elementwise square root. Inputs must be non-negative.
    pub fn sqrt(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        if a.data().iter().any(|v| *v < T::zero()) {
            return Err(Error::numeric("sqrt of a negative element".to_string()));
        }
        self.unary(Op::Sqrt, a, |x| x.sqrt())
    }

    /// GELU under the tanh approximation.
    pub fn gelu(&self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.unary(Op::Gelu, a, k::gelu_scalar)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        if axis >= a.ndim() {
            return Err(Error::dim(format!("softmax axis {axis} out of range for {:?}", a.shape())));
        }
        let data = k::softmax_forward(&a.data(), a.shape(), axis);
        let out = Tensor::from_vec(data, a.shape())?;
        self.record(Op::Softmax { axis }, &[a], &out);
        Ok(out)
    }

    // ── Contractions ────────────────────────────────────────────────────

    /// Batched matrix product: `[..., m, k] · [..., k, n] → [..., m, n]` with
    /// identical leading batch dimensions.
    pub fn matmul(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() < 2 || sb.len() < 2 || sa.len() != sb.len() {
            return Err(Error::dim(format!("matmul wants equal-rank ≥2 operands, got {sa:?} · {sb:?}")));
        }
        let nd = sa.len();
        if sa[..nd - 2] != sb[..nd - 2] || sa[nd - 1] != sb[nd - 2] {
            return Err(Error::dim(format!("matmul shape mismatch: {sa:?} · {sb:?}")));
        }
        let (m, kk, n) = (sa[nd - 2], sa[nd - 1], sb[nd - 1]);
        let batch: usize = sa[..nd - 2].iter().product();
        let mut data = vec![T::zero(); batch * m * n];
        {
            let av = a.data();
            let bv = b.data();
            for bi in 0..batch {
                k::matmul_accum(
                    &av[bi * m * kk..(bi + 1) * m * kk],
                    &bv[bi * kk * n..(bi + 1) * kk * n],
                    m,
                    kk,
                    n,
                    &mut data[bi * m * n..(bi + 1) * m * n],
                );
            }
        }
        let mut oshape = sa[..nd - 2].to_vec();
        oshape.push(m);
        oshape.push(n);
        let out = Tensor::from_vec(data, &oshape)?;
        self.record(Op::Matmul { batch, m, k: kk, n }, &[a, b], &out);
        Ok(out)
    }

    // ── Reductions ──────────────────────────────────────────────────────

    fn reduce(&self, a: &Tensor<T>, axes: &[usize], keepdims: bool, mean: bool) -> Result<Tensor<T>> {
        let mut ax: Vec<usize> = if axes.is_empty() { (0..a.ndim()).collect() } else { axes.to_vec() };
        ax.sort_unstable();
        ax.dedup();
        if ax.iter().any(|&d| d >= a.ndim()) {
            return Err(Error::dim(format!("reduction axis out of range for {:?}", a.shape())));
        }
        let (out_shape, eff, count) = reduction_layout(a.shape(), &ax, keepdims);
        let mut data = vec![T::zero(); numel(&out_shape)];
        if data.len() == 1 {
            // Full reduction: tree-sum the contiguous buffer (exact for
            // power-of-two counts of equal values; see kernels::pairwise_sum).
            data[0] = k::pairwise_sum(&a.data());
        } else {
            let av = a.data();
            let istr = strides(a.shape());
            for_each_offsets2(a.shape(), &istr, &eff, |ii, oi| data[oi] = data[oi] + av[ii]);
        }
        if mean {
            let inv = T::one() / T::from_f64(count as f64);
            for v in data.iter_mut() {
                *v = *v * inv;
            }
        }
        let out = Tensor::from_vec(data, &out_shape)?;
        let op = if mean { Op::Mean { axes: ax, keepdims } } else { Op::Sum { axes: ax, keepdims } };
        self.record(op, &[a], &out);
        Ok(out)
    }

    /// Sum over `axes` (empty slice = all axes). A full reduction yields `[1]`.
    pub fn sum(&self, a: &Tensor<T>, axes: &[usize], keepdims: bool) -> Result<Tensor<T>> {
        self.reduce(a, axes, keepdims, false)
    }

    /// Arithmetic mean over `axes` (empty slice = all axes).
    pub fn mean(&self, a: &Tensor<T>, axes: &[usize], keepdims: bool) -> Result<Tensor<T>> {
        self.reduce(a, axes, keepdims, true)
    }

    // ── Layout ──────────────────────────────────────────────────────────

    /// Same elements, new shape (element count must match).
    pub fn reshape(&self, a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != a.numel() {
            return Err(Error::dim(format!(
                "reshape {:?} → {:?} changes element count",
                a.shape(),
                shape
            )));
        }
        let out = Tensor::from_vec(a.to_vec(), shape)?;
        self.record(Op::Reshape, &[a], &out);
        Ok(out)
    }

    /// Reorder dimensions; `perm` must be a permutation of 0..ndim.
    pub fn permute(&self, a: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
        let mut seen = vec![false; a.ndim()];
        if perm.len() != a.ndim() || perm.iter().any(|&p| p >= a.ndim() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!("invalid permutation {perm:?} for {:?}", a.shape())));
        }
        let data = permute_data(&a.data(), a.shape(), perm);
        let oshape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
        let out = Tensor::from_vec(data, &oshape)?;
        self.record(Op::Permute { perm: perm.to_vec() }, &[a], &out);
        Ok(out)
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn slice(&self, a: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= a.ndim() || start + len > a.shape()[axis] || len == 0 {
            return Err(Error::dim(format!(
                "slice [{start}, {start}+{len}) on axis {axis} out of range for {:?}",
                a.shape()
            )));
        }
        let outer: usize = a.shape()[..axis].iter().product();
        let extent = a.shape()[axis];
        let inner: usize = a.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let av = a.data();
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                data.extend_from_slice(&av[base..base + len * inner]);
            }
        }
        let mut oshape = a.shape().to_vec();
        oshape[axis] = len;
        let out = Tensor::from_vec(data, &oshape)?;
        self.record(Op::Slice { axis, start, len }, &[a], &out);
        Ok(out)
    }

    /// Split into `pieces` equal parts along `axis`.
    pub fn split(&self, a: &Tensor<T>, axis: usize, pieces: usize) -> Result<Vec<Tensor<T>>> {
        if axis >= a.ndim() || pieces == 0 || a.shape()[axis] % pieces != 0 {
            return Err(Error::dim(format!(
                "cannot split axis {axis} of {:?} into {pieces} equal pieces",
                a.shape()
            )));
        }
        let part = a.shape()[axis] / pieces;
        (0..pieces).map(|i| self.slice(a, axis, i * part, part)).collect()
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(&self, parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors".to_string()))?;
        if axis >= first.ndim() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {:?}", first.shape())));
        }
        for p in parts {
            if p.ndim() != first.ndim()
                || (0..first.ndim()).any(|d| d != axis && p.shape()[d] != first.shape()[d])
            {
                return Err(Error::dim(format!(
                    "concat shape mismatch: {:?} vs {:?} on axis {axis}",
                    first.shape(),
                    p.shape()
                )));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let total_extent: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_extent * inner);
        {
            let views: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (p, v) in parts.iter().zip(&views) {
                    let e = p.shape()[axis];
                    data.extend_from_slice(&v[o * e * inner..(o + 1) * e * inner]);
                }
            }
        }
        let mut oshape = first.shape().to_vec();
        oshape[axis] = total_extent;
        let out = Tensor::from_vec(data, &oshape)?;
        self.record(Op::Concat { axis }, parts, &out);
        Ok(out)
    }

    // ── Spatial ops ─────────────────────────────────────────────────────

    /// Padded strided cross-correlation. `x`: `[b, cin, h, w]`,
    /// `weight`: `[cout, cin/groups, kh, kw]`, optional `bias`: `[cout]`.
    pub fn conv2d(
        &self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor<T>> {
        let (xs, ws) = (x.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim(format!("conv2d wants 4-d input/weight, got {xs:?} and {ws:?}")));
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || wcin != cin / groups {
            return Err(Error::dim(format!(
                "conv2d channel/group mismatch: input {cin} ch, weight {ws:?}, groups {groups}"
            )));
        }
        if stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::dim(format!(
                "conv2d kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
            )));
        }
        if let Some(bb) = bias {
            if bb.shape() != [cout] {
                return Err(Error::dim(format!("conv2d bias shape {:?} ≠ [{cout}]", bb.shape())));
            }
        }
        let data = k::conv2d_forward(
            &x.data(),
            &weight.data(),
            bias.map(|t| t.data()).as_deref().map(|v| &v[..]),
            b,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            padding,
            groups,
        );
        let oh = k::conv_out_dim(h, kh, stride, padding);
        let ow = k::conv_out_dim(w, kw, stride, padding);
        let out = Tensor::from_vec(data, &[b, cout, oh, ow])?;
        let mut ins: Vec<&Tensor<T>> = vec![x, weight];
        if let Some(bb) = bias {
            ins.push(bb);
        }
        self.record(Op::Conv2d { stride, padding, groups }, &ins, &out);
        Ok(out)
    }

    /// Fractionally strided convolution (scatter-accumulate).
    /// `x`: `[b, cin, h, w]`, `weight`: `[cin, cout, kh, kw]`.
    pub fn conv_transpose2d(
        &self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
    ) -> Result<Tensor<T>> {
        let (xs, ws) = (x.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim(format!(
                "conv_transpose2d wants 4-d input/weight, got {xs:?} and {ws:?}"
            )));
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (wcin, cout, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wcin != cin {
            return Err(Error::dim(format!(
                "conv_transpose2d channel mismatch: input {cin} ch vs weight {ws:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv_transpose2d stride must be positive".to_string()));
        }
        if let Some(bb) = bias {
            if bb.shape() != [cout] {
                return Err(Error::dim(format!("conv_transpose2d bias shape {:?} ≠ [{cout}]", bb.shape())));
            }
        }
        let data = k::conv_transpose2d_forward(
            &x.data(),
            &weight.data(),
            bias.map(|t| t.data()).as_deref().map(|v| &v[..]),
            b,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
        );
        let (oh, ow) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
        let out = Tensor::from_vec(data, &[b, cout, oh, ow])?;
        let mut ins: Vec<&Tensor<T>> = vec![x, weight];
        if let Some(bb) = bias {
            ins.push(bb);
        }
        self.record(Op::ConvTranspose2d { stride }, &ins, &out);
        Ok(out)
    }

    /// Nearest-neighbour spatial upsampling by an integer factor.
    pub fn upsample_nearest(&self, x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
        let xs = x.shape();
        if xs.len() != 4 || factor == 0 {
            return Err(Error::dim(format!("upsample wants a 4-d input and factor ≥ 1, got {xs:?} ×{factor}")));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let data = k::upsample_nearest_forward(&x.data(), b, c, h, w, factor);
        let out = Tensor::from_vec(data, &[b, c, h * factor, w * factor])?;
        self.record(Op::UpsampleNearest { factor }, &[x], &out);
        Ok(out)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss (seed gradient 1).
    pub fn backward(&self, loss: &Tensor<T>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        self.backward_seeded(loss, &[T::one()])
    }

    /// Reverse sweep seeding `y`'s gradient with `seed` (same element count).
    /// May be called repeatedly on one tape; leaf gradients accumulate.
    pub fn backward_seeded(&self, y: &Tensor<T>, seed: &[T]) -> Result<()> {
        if !self.recording {
            return Err(Error::contract("backward on a non-recording tape".to_string()));
        }
        if seed.len() != y.numel() {
            return Err(Error::contract(format!(
                "seed has {} elements but output has {}",
                seed.len(),
                y.numel()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(y.id(), seed.to_vec());

        for node in nodes.iter().rev() {
            // All consumers of this node's output have already run, so its
            // gradient is final; take ownership and free the entry.
            let gy = match grads.remove(&node.output.id()) {
                Some(g) => g,
                None => continue,
            };
            if node.output.requires_grad() {
                node.output.accumulate_grad(&gy);
            }
            self.apply_backward(node, &gy, &mut grads);
        }

        // Fold gradients into leaves, visiting in recording order for a stable
        // accumulation order; each leaf is written once per backward call.
        let mut written: HashSet<u64> = HashSet::new();
        for node in nodes.iter() {
            for t in &node.inputs {
                if t.requires_grad() && written.insert(t.id()) {
                    if let Some(g) = grads.get(&t.id()) {
                        t.accumulate_grad(g);
                    }
                }
            }
        }
        Ok(())
    }

    fn apply_backward(&self, node: &Node<T>, gy: &[T], grads: &mut HashMap<u64, Vec<T>>) {
        let add_grad = |grads: &mut HashMap<u64, Vec<T>>, t: &Tensor<T>, g: Vec<T>| {
            debug_assert_eq!(g.len(), t.numel());
            match grads.entry(t.id()) {
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    let buf = e.get_mut();
                    for (a, b) in buf.iter_mut().zip(&g) {
                        *a = *a + *b;
                    }
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(g);
                }
            }
        };
        let oshape = node.output.shape();
        match &node.op {
            Op::Add => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                if a.tracked() {
                    add_grad(grads, a, reduce_to_shape(gy, oshape, a.shape()));
                }
                if b.tracked() {
                    add_grad(grads, b, reduce_to_shape(gy, oshape, b.shape()));
                }
            }
            Op::Sub => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                if a.tracked() {
                    add_grad(grads, a, reduce_to_shape(gy, oshape, a.shape()));
                }
                if b.tracked() {
                    let neg: Vec<T> = gy.iter().map(|&g| -g).collect();
                    add_grad(grads, b, reduce_to_shape(&neg, oshape, b.shape()));
                }
            }
            Op::Mul => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                if a.tracked() {
                    let contrib =
                        binary_map(gy, oshape, &b.data(), b.shape(), oshape, |g, bv| g * bv);
                    add_grad(grads, a, reduce_to_shape(&contrib, oshape, a.shape()));
                }
                if b.tracked() {
                    let contrib =
                        binary_map(gy, oshape, &a.data(), a.shape(), oshape, |g, av| g * av);
                    add_grad(grads, b, reduce_to_shape(&contrib, oshape, b.shape()));
                }
            }
            Op::Div => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                if a.tracked() {
                    let contrib =
                        binary_map(gy, oshape, &b.data(), b.shape(), oshape, |g, bv| g / bv);
                    add_grad(grads, a, reduce_to_shape(&contrib, oshape, a.shape()));
                }
                if b.tracked() {
                    // d(a/b)/db = -a/b²; evaluate lane-wise over the output space.
                    let av = a.data();
                    let bv = b.data();
                    let sa = broadcast_strides(a.shape(), oshape);
                    let sb = broadcast_strides(b.shape(), oshape);
                    let mut contrib = Vec::with_capacity(gy.len());
                    let mut gi = 0usize;
                    for_each_offsets2(oshape, &sa, &sb, |ia, ib| {
                        let bb = bv[ib];
                        contrib.push(-gy[gi] * av[ia] / (bb * bb));
                        gi += 1;
                    });
                    add_grad(grads, b, reduce_to_shape(&contrib, oshape, b.shape()));
                }
            }
            Op::Tanh => {
                let y = node.output.data();
                let g: Vec<T> = gy.iter().zip(y.iter()).map(|(&g, &yv)| g * (T::one() - yv * yv)).collect();
                add_grad(grads, &node.inputs[0], g);
            }
            Op::Exp => {
                let y = node.output.data();
                let g: Vec<T> = gy.iter().zip(y.iter()).map(|(&g, &yv)| g * yv).collect();
                add_grad(grads, &node.inputs[0], g);
            }
            Op::Ln => {
                let x = node.inputs[0].data();
                let g: Vec<T> = gy.iter().zip(x.iter()).map(|(&g, &xv)| g / xv).collect();
                drop(x);
                add_grad(grads, &node.inputs[0], g);
            }
            Op::Sqrt => {
                let y = node.output.data();
                let half = T::from_f64(0.5);
                let g: Vec<T> = gy.iter().zip(y.iter()).map(|(&g, &yv)| g * half / yv).collect();
                add_grad(grads, &node.inputs[0], g);
            }
            Op::Gelu => {
                let x = node.inputs[0].data();
                let g: Vec<T> =
                    gy.iter().zip(x.iter()).map(|(&g, &xv)| g * k::gelu_grad_scalar(xv)).collect();
                drop(x);
                add_grad(grads, &node.inputs[0], g);
            }
            Op::Softmax { axis } => {
                let y = node.output.data();
                let g = k::softmax_backward(&y, gy, oshape, *axis);
                drop(y);
                add_grad(grads, &node.inputs[0], g);
            }
            Op::Matmul { batch, m, k: kk, n } => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                let (batch, m, kk, n) = (*batch, *m, *kk, *n);
                if a.tracked() {
                    // dA = dC · Bᵀ
                    let bv = b.data();
                    let mut da = vec![T::zero(); batch * m * kk];
                    for bi in 0..batch {
                        k::matmul_nt_accum(
                            &gy[bi * m * n..(bi + 1) * m * n],
                            &bv[bi * kk * n..(bi + 1) * kk * n],
                            m,
                            n,
                            kk,
                            &mut da[bi * m * kk..(bi + 1) * m * kk],
                        );
                    }
                    drop(bv);
                    add_grad(grads, a, da);
                }
                if b.tracked() {
                    // dB = Aᵀ · dC
                    let av = a.data();
                    let mut db = vec![T::zero(); batch * kk * n];
                    for bi in 0..batch {
                        k::matmul_tn_accum(
                            &av[bi * m * kk..(bi + 1) * m * kk],
                            &gy[bi * m * n..(bi + 1) * m * n],
                            m,
                            kk,
                            n,
                            &mut db[bi * kk * n..(bi + 1) * kk * n],
                        );
                    }
                    drop(av);
                    add_grad(grads, b, db);
                }
            }
            Op::Sum { axes, keepdims } => {
                let a = &node.inputs[0];
                let (_, eff, _) = reduction_layout(a.shape(), axes, *keepdims);
                let istr = strides(a.shape());
                let mut g = vec![T::zero(); a.numel()];
                for_each_offsets2(a.shape(), &istr, &eff, |ii, oi| g[ii] = gy[oi]);
                add_grad(grads, a, g);
            }
            Op::Mean { axes, keepdims } => {
                let a = &node.inputs[0];
                let (_, eff, count) = reduction_layout(a.shape(), axes, *keepdims);
                let inv = T::one() / T::from_f64(count as f64);
                let istr = strides(a.shape());
                let mut g = vec![T::zero(); a.numel()];
                for_each_offsets2(a.shape(), &istr, &eff, |ii, oi| g[ii] = gy[oi] * inv);
                add_grad(grads, a, g);
            }
            Op::Reshape => {
                add_grad(grads, &node.inputs[0], gy.to_vec());
            }
            Op::Permute { perm } => {
                let inv = inverse_perm(perm);
                let g = permute_data(gy, oshape, &inv);
                add_grad(grads, &node.inputs[0], g);
            }
            Op::Slice { axis, start, len } => {
                let a = &node.inputs[0];
                let extent = a.shape()[*axis];
                let outer: usize = a.shape()[..*axis].iter().product();
                let inner: usize = a.shape()[*axis + 1..].iter().product();
                let mut g = vec![T::zero(); a.numel()];
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * extent + start) * inner;
                    g[dst..dst + len * inner].copy_from_slice(&gy[src..src + len * inner]);
                }
                add_grad(grads, a, g);
            }
            Op::Concat { axis } => {
                let outer: usize = node.inputs[0].shape()[..*axis].iter().product();
                let inner: usize = node.inputs[0].shape()[*axis + 1..].iter().product();
                let total_extent = oshape[*axis];
                let mut offset = 0usize;
                for p in &node.inputs {
                    let e = p.shape()[*axis];
                    if p.tracked() {
                        let mut g = vec![T::zero(); p.numel()];
                        for o in 0..outer {
                            let src = (o * total_extent + offset) * inner;
                            let dst = o * e * inner;
                            g[dst..dst + e * inner].copy_from_slice(&gy[src..src + e * inner]);
                        }
                        add_grad(grads, p, g);
                    }
                    offset += e;
                }
            }
            Op::Conv2d { stride, padding, groups } => {
                let x = &node.inputs[0];
                let w = &node.inputs[1];
                let bias = node.inputs.get(2);
                let xs = x.shape();
                let ws = w.shape();
                let (dx, dw, db) = k::conv2d_backward(
                    &x.data(),
                    &w.data(),
                    gy,
                    xs[0],
                    xs[1],
                    xs[2],
                    xs[3],
                    ws[0],
                    ws[2],
                    ws[3],
                    *stride,
                    *padding,
                    *groups,
                    x.tracked(),
                    w.tracked(),
                    bias.map(|b| b.tracked()).unwrap_or(false),
                );
                if let Some(dx) = dx {
                    add_grad(grads, x, dx);
                }
                if let Some(dw) = dw {
                    add_grad(grads, w, dw);
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    add_grad(grads, b, db);
                }
            }
            Op::ConvTranspose2d { stride } => {
                let x = &node.inputs[0];
                let w = &node.inputs[1];
                let bias = node.inputs.get(2);
                let xs = x.shape();
                let ws = w.shape();
                let (dx, dw, db) = k::conv_transpose2d_backward(
                    &x.data(),
                    &w.data(),
                    gy,
                    xs[0],
                    xs[1],
                    xs[2],
                    xs[3],
                    ws[1],
                    ws[2],
                    ws[3],
                    *stride,
                    x.tracked(),
                    w.tracked(),
                    bias.map(|b| b.tracked()).unwrap_or(false),
                );
                if let Some(dx) = dx {
                    add_grad(grads, x, dx);
                }
                if let Some(dw) = dw {
                    add_grad(grads, w, dw);
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    add_grad(grads, b, db);
                }
            }
            Op::UpsampleNearest { factor } => {
                let a = &node.inputs[0];
                let s = a.shape();
                let g = k::upsample_nearest_backward(gy, s[0], s[1], s[2], s[3], *factor);
                add_grad(grads, a, g);
            }
        }
    }
}
