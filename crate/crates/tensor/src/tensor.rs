use std::fmt;
use std::sync::Arc;

use crate::real::{gemm, MatRef, Real};

/// Dense row-major tensor with copy-on-write storage.
///
/// Cloning is cheap (the buffer is shared); mutation through [`Tensor::data_mut`]
/// copies only when the buffer is shared.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.data.len().min(8);
        write!(f, "Tensor{:?} {:?}", self.shape, &self.data[..n])?;
        if self.data.len() > n {
            write!(f, "..")?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Numpy-style broadcast of two shapes (right aligned).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when viewed as broadcast to `target` (0 on broadcast axes).
fn strides_in(shape: &[usize], target: &[usize]) -> Vec<usize> {
    assert!(shape.len() <= target.len(), "cannot broadcast {shape:?} to {target:?}");
    let own = contiguous_strides(shape);
    let off = target.len() - shape.len();
    (0..target.len())
        .map(|i| {
            if i < off {
                0
            } else {
                let d = shape[i - off];
                assert!(d == target[i] || d == 1, "cannot broadcast {shape:?} to {target:?}");
                if d == 1 {
                    0
                } else {
                    own[i - off]
                }
            }
        })
        .collect()
}

/// Row-major walk over `shape`, calling `f(out_linear, offsets)` for each innermost run.
/// `strides` holds one stride vector per operand.
fn walk<const N: usize>(shape: &[usize], strides: [&[usize]; N], mut f: impl FnMut(usize, [usize; N], usize, [usize; N])) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    let nd = shape.len();
    if nd == 0 {
        f(0, [0; N], 1, [0; N]);
        return;
    }
    let inner = shape[nd - 1];
    let inner_strides: [usize; N] = std::array::from_fn(|k| strides[k][nd - 1]);
    let mut idx = vec![0usize; nd];
    let mut offs = [0usize; N];
    let mut lin = 0;
    while lin < total {
        f(lin, offs, inner, inner_strides);
        lin += inner;
        // Advance the odometer over the outer axes.
        let mut ax = nd - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            for k in 0..N {
                offs[k] += strides[k][ax];
            }
            if idx[ax] < shape[ax] {
                break;
            }
            for k in 0..N {
                offs[k] -= strides[k][ax] * shape[ax];
            }
            idx[ax] = 0;
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        let shape = shape.into();
        assert_eq!(numel(&shape), data.len(), "data length does not match shape {shape:?}");
        Self { shape, data: Arc::new(data) }
    }

    pub fn scalar(v: T) -> Self {
        Self::new(Vec::new(), vec![v])
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::new(shape, vec![v; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(f).collect();
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => panic!("expected rank-4 tensor, got {:?}", self.shape),
        }
    }

    pub fn dims2(&self) -> (usize, usize) {
        match self.shape[..] {
            [a, b] => (a, b),
            _ => panic!("expected rank-2 tensor, got {:?}", self.shape),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(numel(&shape), self.numel(), "reshape {:?} -> {:?}", self.shape, shape);
        Self { shape, data: self.data.clone() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|v| U::lit(v.as_f64())).collect())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Broadcasting binary elementwise kernel.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        if self.shape == other.shape {
            let data = self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect();
            return Self::new(self.shape.clone(), data);
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape)
            .unwrap_or_else(|| panic!("shapes {:?} and {:?} do not broadcast", self.shape, other.shape));
        let sa = strides_in(&self.shape, &out_shape);
        let sb = strides_in(&other.shape, &out_shape);
        let mut out = Vec::with_capacity(numel(&out_shape));
        let (a, b) = (&self.data[..], &other.data[..]);
        walk(&out_shape, [&sa, &sb], |_, [oa, ob], n, [ia, ib]| {
            for j in 0..n {
                out.push(f(a[oa + j * ia], b[ob + j * ib]));
            }
        });
        Self::new(out_shape, out)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let s = strides_in(&self.shape, shape);
        let mut out = Vec::with_capacity(numel(shape));
        let a = &self.data[..];
        walk(shape, [&s], |_, [oa], n, [ia]| {
            for j in 0..n {
                out.push(a[oa + j * ia]);
            }
        });
        Self::new(shape.to_vec(), out)
    }

    /// Sum over broadcast axes so the result has `shape` (the adjoint of `broadcast_to`).
    pub fn sum_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let s = strides_in(shape, &self.shape);
        let mut out = vec![T::zero(); numel(shape)];
        let a = &self.data[..];
        walk(&self.shape, [&s], |lin, [oo], n, [io]| {
            if io == 0 {
                let mut acc = T::zero();
                for v in &a[lin..lin + n] {
                    acc += *v;
                }
                out[oo] += acc;
            } else {
                for j in 0..n {
                    out[oo + j * io] += a[lin + j];
                }
            }
        });
        Self::new(shape.to_vec(), out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.rank(), "permutation rank mismatch");
        let own = contiguous_strides(&self.shape);
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| own[p]).collect();
        let mut out = Vec::with_capacity(self.numel());
        let a = &self.data[..];
        walk(&shape, [&strides], |_, [oa], n, [ia]| {
            for j in 0..n {
                out.push(a[oa + j * ia]);
            }
        });
        Self::new(shape, out)
    }

    fn split_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        (outer, self.shape[axis], inner)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let (outer, dim, inner) = self.split_axis(axis);
        assert!(start + len <= dim, "narrow out of range");
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self::new(shape, out)
    }

    /// Zero tensor of `dim` along `axis` with `self` written at `start` (adjoint of `narrow`).
    pub fn unnarrow(&self, axis: usize, start: usize, dim: usize) -> Self {
        let (outer, len, inner) = self.split_axis(axis);
        assert!(start + len <= dim, "unnarrow out of range");
        let mut out = vec![T::zero(); outer * dim * inner];
        for o in 0..outer {
            let dst = (o * dim + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&self.data[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = dim;
        Self::new(shape, out)
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0];
        let mut shape = first.shape.clone();
        shape[axis] = 0;
        for p in parts {
            assert_eq!(p.rank(), first.rank(), "concat rank mismatch");
            for (ax, (&a, &b)) in p.shape.iter().zip(&first.shape).enumerate() {
                assert!(ax == axis || a == b, "concat shape mismatch {:?} vs {:?}", p.shape, first.shape);
            }
            shape[axis] += p.shape[axis];
        }
        let outer = numel(&shape[..axis]);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let (_, d, inner) = p.split_axis(axis);
                out.extend_from_slice(&p.data[o * d * inner..(o + 1) * d * inner]);
            }
        }
        Self::new(shape, out)
    }

    /// 2-D matrix product with optional transposition of either operand.
    pub fn matmul_t(&self, other: &Self, ta: bool, tb: bool) -> Self {
        let (r, c) = self.dims2();
        let a = MatRef::row_major(self.data(), r, c);
        let a = if ta { a.t() } else { a };
        let (r, c) = other.dims2();
        let b = MatRef::row_major(other.data(), r, c);
        let b = if tb { b.t() } else { b };
        assert_eq!(a.cols, b.rows, "matmul shapes {:?}{} x {:?}{}", self.shape, ta, other.shape, tb);
        let mut out = vec![T::zero(); a.rows * b.cols];
        gemm(T::one(), a, b, T::zero(), &mut out, b.cols);
        Self::new(vec![a.rows, b.cols], out)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        self.matmul_t(other, false, false)
    }

    /// Nearest-neighbour 2× upsampling of an NCHW tensor.
    pub fn upsample2x(&self) -> Self {
        let (n, c, h, w) = self.dims4();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for (plane_in, plane_out) in self.data.chunks(h * w).zip(out.chunks_mut(h2 * w2)) {
            for y in 0..h2 {
                let src = &plane_in[(y / 2) * w..(y / 2 + 1) * w];
                let dst = &mut plane_out[y * w2..(y + 1) * w2];
                for x in 0..w2 {
                    dst[x] = src[x / 2];
                }
            }
        }
        Self::new(vec![n, c, h2, w2], out)
    }

    /// 2×2 sum pooling with stride 2 (adjoint of [`Tensor::upsample2x`]).
    pub fn sum_pool2x(&self) -> Self {
        let (n, c, h, w) = self.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "sum_pool2x needs even spatial dims");
        let (h2, w2) = (h / 2, w / 2);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for (plane_in, plane_out) in self.data.chunks(h * w).zip(out.chunks_mut(h2 * w2)) {
            for y in 0..h {
                let src = &plane_in[y * w..(y + 1) * w];
                let dst = &mut plane_out[(y / 2) * w2..(y / 2 + 1) * w2];
                for x in 0..w {
                    dst[x / 2] += src[x];
                }
            }
        }
        Self::new(vec![n, c, h2, w2], out)
    }
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, input: usize, k: usize) -> usize {
        assert!(input + 2 * self.pad >= k, "kernel larger than padded input");
        (input + 2 * self.pad - k) / self.stride + 1
    }
}

fn is_pointwise(geom: ConvGeom, kh: usize, kw: usize) -> bool {
    kh == 1 && kw == 1 && geom.stride == 1 && geom.pad == 0
}

/// Output columns `lo..hi` whose stride-1 input column `ox + shift` lies in `0..w`.
fn valid_span(shift: isize, w: usize, wo: usize) -> (usize, usize) {
    let lo = (-shift).clamp(0, wo as isize) as usize;
    let hi = (w as isize - shift).clamp(lo as isize, wo as isize) as usize;
    (lo, hi)
}

/// Unfold one CHW image into a `(c·kh·kw) × (ho·wo)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize, g: ConvGeom, cols: &mut [T]) {
    let ho = g.out_size(h, kh);
    let wo = g.out_size(w, kw);
    let (s, p) = (g.stride as isize, g.pad as isize);
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ki as isize - p;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if s == 1 {
                        let (lo, hi) = valid_span(kj as isize - p, w, wo);
                        drow[..lo].fill(T::zero());
                        drow[hi..].fill(T::zero());
                        let off = (lo as isize + kj as isize - p) as usize;
                        drow[lo..hi].copy_from_slice(&srow[off..off + hi - lo]);
                        continue;
                    }
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { srow[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Fold a column matrix back into a CHW image, accumulating overlaps (adjoint of `im2col`).
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, kh: usize, kw: usize, g: ConvGeom, x: &mut [T]) {
    let ho = g.out_size(h, kh);
    let wo = g.out_size(w, kw);
    let (s, p) = (g.stride as isize, g.pad as isize);
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    if s == 1 {
                        let (lo, hi) = valid_span(kj as isize - p, w, wo);
                        let off = (lo as isize + kj as isize - p) as usize;
                        for (d, &v) in prow[off..off + hi - lo].iter_mut().zip(&src[oy * wo + lo..oy * wo + hi]) {
                            *d += v;
                        }
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < w as isize {
                            prow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

impl<T: Real> Tensor<T> {
    /// Cross-correlation of `self` (N,Ci,H,W) with `weight` (Co,Ci,kh,kw).
    pub fn conv2d(&self, weight: &Self, g: ConvGeom) -> Self {
        let (n, ci, h, w) = self.dims4();
        let (co, wci, kh, kw) = weight.dims4();
        assert_eq!(ci, wci, "conv2d channel mismatch: input {:?}, weight {:?}", self.shape, weight.shape);
        let (ho, wo) = (g.out_size(h, kh), g.out_size(w, kw));
        let k = ci * kh * kw;
        let mut out = vec![T::zero(); n * co * ho * wo];
        let wm = MatRef::row_major(weight.data(), co, k);
        let pointwise = is_pointwise(g, kh, kw);
        let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * ho * wo] };
        for b in 0..n {
            let xb = &self.data[b * ci * h * w..(b + 1) * ci * h * w];
            let colref = if pointwise {
                MatRef::row_major(xb, k, ho * wo)
            } else {
                im2col(xb, ci, h, w, kh, kw, g, &mut cols);
                MatRef::row_major(&cols, k, ho * wo)
            };
            gemm(T::one(), wm, colref, T::zero(), &mut out[b * co * ho * wo..(b + 1) * co * ho * wo], ho * wo);
        }
        Self::new(vec![n, co, ho, wo], out)
    }

    /// Gradient of `conv2d` with respect to its input, given the output gradient `self`.
    pub fn conv2d_input_grad(&self, weight: &Self, in_hw: (usize, usize), g: ConvGeom) -> Self {
        let (n, co, ho, wo) = self.dims4();
        let (wco, ci, kh, kw) = weight.dims4();
        assert_eq!(co, wco, "conv2d_input_grad channel mismatch");
        let (h, w) = in_hw;
        assert_eq!((g.out_size(h, kh), g.out_size(w, kw)), (ho, wo), "conv2d_input_grad geometry mismatch");
        let k = ci * kh * kw;
        let mut out = vec![T::zero(); n * ci * h * w];
        let wt = MatRef::row_major(weight.data(), co, k).t();
        let pointwise = is_pointwise(g, kh, kw);
        let mut cols = vec![T::zero(); if pointwise { 0 } else { k * ho * wo }];
        for b in 0..n {
            let gb = MatRef::row_major(&self.data[b * co * ho * wo..(b + 1) * co * ho * wo], co, ho * wo);
            let xb = &mut out[b * ci * h * w..(b + 1) * ci * h * w];
            if pointwise {
                gemm(T::one(), wt, gb, T::zero(), xb, ho * wo);
            } else {
                gemm(T::one(), wt, gb, T::zero(), &mut cols, ho * wo);
                col2im(&cols, ci, h, w, kh, kw, g, xb);
            }
        }
        Self::new(vec![n, ci, h, w], out)
    }

    /// Gradient of `conv2d` with respect to its weight: `self` is the input, `grad` the output gradient.
    pub fn conv2d_weight_grad(&self, grad: &Self, khw: (usize, usize), g: ConvGeom) -> Self {
        let (n, ci, h, w) = self.dims4();
        let (gn, co, ho, wo) = grad.dims4();
        assert_eq!(n, gn, "conv2d_weight_grad batch mismatch");
        let (kh, kw) = khw;
        assert_eq!((g.out_size(h, kh), g.out_size(w, kw)), (ho, wo), "conv2d_weight_grad geometry mismatch");
        let k = ci * kh * kw;
        let mut out = vec![T::zero(); co * k];
        let pointwise = is_pointwise(g, kh, kw);
        let mut cols = vec![T::zero(); if pointwise { 0 } else { k * ho * wo }];
        for b in 0..n {
            let xb = &self.data[b * ci * h * w..(b + 1) * ci * h * w];
            let colref = if pointwise {
                MatRef::row_major(xb, k, ho * wo)
            } else {
                im2col(xb, ci, h, w, kh, kw, g, &mut cols);
                MatRef::row_major(&cols, k, ho * wo)
            };
            let gb = MatRef::row_major(&grad.data[b * co * ho * wo..(b + 1) * co * ho * wo], co, ho * wo);
            let beta = if b == 0 { T::zero() } else { T::one() };
            gemm(T::one(), gb, colref.t(), beta, &mut out, k);
        }
        Self::new(vec![co, ci, kh, kw], out)
    }
}
