//! Dense row-major `f32` tensors and the raw (non-differentiable) kernels
//! the autodiff layer is built from.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Numpy-style broadcast of two shapes, `None` when incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` laid out inside `out` (right aligned); broadcast axes get stride 0.
fn strides_in(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Walks every index of `shape` in row-major order, calling `f(linear, off_a, off_b)`
/// where the offsets follow the two given stride vectors.
fn walk2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total = numel(shape);
    if total == 0 {
        return;
    }
    if shape.is_empty() {
        f(0, 0, 0);
        return;
    }
    // Merge adjacent axes that are contiguous in both operands so the inner
    // loop runs as long as possible.
    let (mut shape_m, mut sa_m, mut sb_m) = (vec![shape[0]], vec![sa[0]], vec![sb[0]]);
    for d in 1..shape.len() {
        let last = shape_m.len() - 1;
        if sa_m[last] == sa[d] * shape[d] && sb_m[last] == sb[d] * shape[d] {
            shape_m[last] *= shape[d];
            sa_m[last] = sa[d];
            sb_m[last] = sb[d];
        } else {
            shape_m.push(shape[d]);
            sa_m.push(sa[d]);
            sb_m.push(sb[d]);
        }
    }
    let (shape, sa, sb) = (&shape_m[..], &sa_m[..], &sb_m[..]);
    let nd = shape.len();
    let inner = shape[nd - 1];
    let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
    let mut idx = vec![0usize; nd - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut lin = 0;
    for _ in 0..total / inner {
        for j in 0..inner {
            f(lin + j, oa + j * ia, ob + j * ib);
        }
        lin += inner;
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Self {
        let shape = shape.into();
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self { shape, data: vec![value; n] }
    }

    pub fn scalar(value: f32) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Tensor {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise binary op with broadcasting.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Tensor { shape: self.shape.clone(), data };
        }
        if other.data.len() == 1 && other.shape.len() <= self.shape.len() {
            let b = other.data[0];
            return Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&a| f(a, b)).collect() };
        }
        let out = broadcast_shape(&self.shape, &other.shape).unwrap_or_else(|| {
            panic!("cannot broadcast {:?} with {:?}", self.shape, other.shape)
        });
        let sa = strides_in(&self.shape, &out);
        let sb = strides_in(&other.shape, &out);
        let mut data = vec![0.0; numel(&out)];
        walk2(&out, &sa, &sb, |i, a, b| data[i] = f(self.data[a], other.data[b]));
        Tensor { shape: out, data }
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let check = broadcast_shape(&self.shape, shape);
        assert_eq!(check.as_deref(), Some(shape), "cannot broadcast {:?} to {:?}", self.shape, shape);
        let sa = strides_in(&self.shape, shape);
        let zero = vec![0; shape.len()];
        let mut data = vec![0.0; numel(shape)];
        walk2(shape, &sa, &zero, |i, a, _| data[i] = self.data[a]);
        Tensor { shape: shape.to_vec(), data }
    }

    /// Sums over the axes that `shape` broadcasts along, producing a tensor of `shape`.
    /// Accumulates in `f64` in a fixed order.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let check = broadcast_shape(shape, &self.shape);
        assert_eq!(
            check.as_deref(),
            Some(&self.shape[..]),
            "cannot reduce {:?} to {:?}",
            self.shape,
            shape
        );
        let n = numel(shape);
        let mut acc = vec![0f64; n];
        if n == 1 {
            acc[0] = self.data.iter().map(|&v| v as f64).sum();
        } else {
            let st = strides_in(shape, &self.shape);
            let zero = vec![0; self.shape.len()];
            walk2(&self.shape, &st, &zero, |i, t, _| acc[t] += self.data[i] as f64);
        }
        Tensor { shape: shape.to_vec(), data: acc.into_iter().map(|v| v as f32).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn transpose2(&self) -> Tensor {
        assert_eq!(self.shape.len(), 2, "transpose2 expects a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor { shape: vec![c, r], data }
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert!(self.shape.len() == 2 && other.shape.len() == 2, "matmul expects matrices");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        assert_eq!(k, k2, "matmul inner dimensions {:?} x {:?}", self.shape, other.shape);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, k, 1, &other.data, n, 1, &mut out, 0.0);
        Tensor { shape: vec![m, n], data: out }
    }
}

/// `c = a * b + beta * c` with arbitrary strides for `a` and `b`; `c` is row-major `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: slice lengths cover every index addressed by the given
    // dimensions and strides (checked by callers' shape asserts).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-stride 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    /// Spatial size of the convolution *input*.
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = (self.in_h + 2 * self.pad - self.kh) / self.stride + 1;
        let ow = (self.in_w + 2 * self.pad - self.kw) / self.stride + 1;
        (oh, ow)
    }
}

impl ConvGeom {
    /// Stride 1 with output size equal to input size: every kernel tap is a
    /// flat shift of the whole plane.
    fn is_same_stride1(&self) -> bool {
        self.stride == 1 && self.out_hw() == (self.in_h, self.in_w)
    }

    /// For tap `(ki, kj)` of a same-size stride-1 convolution: the flat shift
    /// from output to input index, the column offset, and the range of output
    /// rows whose input row is inside the image.
    fn tap(&self, ki: usize, kj: usize) -> (isize, isize, std::ops::Range<usize>) {
        let (h, w) = (self.in_h as isize, self.in_w as isize);
        let dy = ki as isize - self.pad as isize;
        let dx = kj as isize - self.pad as isize;
        let lo = (-dy).clamp(0, h) as usize;
        let hi = (h - dy).clamp(lo as isize, h) as usize;
        (dy * w + dx, dx, lo..hi)
    }
}

/// Columns of each `w`-wide row that a horizontal shift by `dx` wraps into
/// the neighbouring row.
fn wrapped_columns(dx: isize, w: usize) -> std::ops::Range<usize> {
    if dx < 0 {
        0..((-dx) as usize).min(w)
    } else {
        w.saturating_sub(dx as usize)..w
    }
}

fn im2col_same(x: &[f32], c: usize, g: &ConvGeom, col: &mut [f32]) {
    let (h, w) = (g.in_h, g.in_w);
    let plane = h * w;
    for ci in 0..c {
        let xc = &x[ci * plane..(ci + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (shift, dx, rows) = g.tap(ki, kj);
                let (d0, d1) = (rows.start * w, rows.end * w);
                let a = d0.max((-shift).max(0) as usize).min(d1);
                let b = d1.min((plane as isize - shift).max(0) as usize).max(a);
                dst[..a].fill(0.0);
                dst[b..].fill(0.0);
                let s0 = (a as isize + shift) as usize;
                dst[a..b].copy_from_slice(&xc[s0..s0 + b - a]);
                let wrap = wrapped_columns(dx, w);
                if !wrap.is_empty() {
                    for r in rows {
                        dst[r * w + wrap.start..r * w + wrap.end].fill(0.0);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_same`]; clobbers the wrapped columns of `col`.
fn col2im_same(col: &mut [f32], c: usize, g: &ConvGeom, x: &mut [f32]) {
    let (h, w) = (g.in_h, g.in_w);
    let plane = h * w;
    for ci in 0..c {
        let xc = &mut x[ci * plane..(ci + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &mut col[row * plane..(row + 1) * plane];
                let (shift, dx, rows) = g.tap(ki, kj);
                let wrap = wrapped_columns(dx, w);
                if !wrap.is_empty() {
                    for r in rows.clone() {
                        src[r * w + wrap.start..r * w + wrap.end].fill(0.0);
                    }
                }
                let (d0, d1) = (rows.start * w, rows.end * w);
                let a = d0.max((-shift).max(0) as usize).min(d1);
                let b = d1.min((plane as isize - shift).max(0) as usize).max(a);
                let s0 = (a as isize + shift) as usize;
                for (d, &v) in xc[s0..s0 + b - a].iter_mut().zip(&src[a..b]) {
                    *d += v;
                }
            }
        }
    }
}

fn im2col(x: &[f32], c: usize, g: &ConvGeom, col: &mut [f32]) {
    if g.is_same_stride1() {
        return im2col_same(x, c, g, col);
    }
    let (oh, ow) = g.out_hw();
    let (h, w) = (g.in_h as isize, g.in_w as isize);
    let plane = oh * ow;
    for ci in 0..c {
        let xc = &x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oi in 0..oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oi * ow..(oi + 1) * ow];
                    if ii < 0 || ii >= h {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &xc[ii as usize * g.in_w..(ii as usize + 1) * g.in_w];
                    // output columns whose input column lies inside the image
                    let s = g.stride as isize;
                    let off = kj as isize - g.pad as isize;
                    let lo = (((-off).max(0) + s - 1) / s).min(ow as isize) as usize;
                    let hi = (((w - off).max(0) + s - 1) / s).clamp(lo as isize, ow as isize) as usize;
                    drow[..lo].fill(0.0);
                    drow[hi..].fill(0.0);
                    if g.stride == 1 {
                        let start = (lo as isize + off) as usize;
                        drow[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (oj, d) in drow[lo..hi].iter_mut().enumerate() {
                            *d = src[((oj + lo) as isize * s + off) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &mut [f32], c: usize, g: &ConvGeom, x: &mut [f32]) {
    if g.is_same_stride1() {
        return col2im_same(col, c, g, x);
    }
    let (oh, ow) = g.out_hw();
    let (h, w) = (g.in_h as isize, g.in_w as isize);
    let plane = oh * ow;
    for ci in 0..c {
        let xc = &mut x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oi in 0..oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= h {
                        continue;
                    }
                    let drow = &mut xc[ii as usize * g.in_w..(ii as usize + 1) * g.in_w];
                    let srow = &src[oi * ow..(oi + 1) * ow];
                    let s = g.stride as isize;
                    let off = kj as isize - g.pad as isize;
                    let lo = (((-off).max(0) + s - 1) / s).min(ow as isize) as usize;
                    let hi = (((w - off).max(0) + s - 1) / s).clamp(lo as isize, ow as isize) as usize;
                    if g.stride == 1 {
                        let start = (lo as isize + off) as usize;
                        for (d, &v) in drow[start..start + hi - lo].iter_mut().zip(&srow[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for oj in lo..hi {
                            drow[(oj as isize * s + off) as usize] += srow[oj];
                        }
                    }
                }
            }
        }
    }
}

fn dims4(t: &Tensor, what: &str) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "{what} expects NCHW, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

/// `x [N,C,H,W] (*) w [O,C,kh,kw] -> [N,O,oh,ow]`
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = dims4(x, "conv2d input");
    let (o, c2, kh, kw) = dims4(w, "conv2d weight");
    assert_eq!(c, c2, "conv2d channel mismatch: input {:?} weight {:?}", x.shape(), w.shape());
    let g = ConvGeom { kh, kw, stride, pad, in_h: h, in_w: wd };
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let ckk = c * kh * kw;
    let mut col = vec![0.0; ckk * plane];
    let mut out = vec![0.0; n * o * plane];
    for b in 0..n {
        im2col(&x.data[b * c * h * wd..(b + 1) * c * h * wd], c, &g, &mut col);
        gemm(o, ckk, plane, &w.data, ckk, 1, &col, plane, 1, &mut out[b * o * plane..(b + 1) * o * plane], 0.0);
    }
    Tensor::new(vec![n, o, oh, ow], out)
}

/// Adjoint of [`conv2d`] with respect to its input: `g [N,O,oh,ow], w [O,C,kh,kw] -> [N,C,H,W]`.
pub fn conv_transpose2d(g: &Tensor, w: &Tensor, geom: &ConvGeom) -> Tensor {
    let (n, o, oh, ow) = dims4(g, "conv_transpose2d input");
    let (o2, c, kh, kw) = dims4(w, "conv_transpose2d weight");
    assert_eq!(o, o2, "conv_transpose2d channel mismatch");
    assert_eq!((kh, kw), (geom.kh, geom.kw));
    assert_eq!((oh, ow), geom.out_hw(), "conv_transpose2d geometry mismatch");
    let plane = oh * ow;
    let ckk = c * kh * kw;
    let hw = geom.in_h * geom.in_w;
    let mut col = vec![0.0; ckk * plane];
    let mut out = vec![0.0; n * c * hw];
    for b in 0..n {
        // col = W^T [ckk, O] * g_b [O, plane]
        gemm(ckk, o, plane, &w.data, 1, ckk, &g.data[b * o * plane..(b + 1) * o * plane], plane, 1, &mut col, 0.0);
        col2im(&mut col, c, geom, &mut out[b * c * hw..(b + 1) * c * hw]);
    }
    Tensor::new(vec![n, c, geom.in_h, geom.in_w], out)
}

/// Adjoint of [`conv2d`] with respect to its weight: `x [N,C,H,W], g [N,O,oh,ow] -> [O,C,kh,kw]`.
pub fn conv2d_weight(x: &Tensor, g: &Tensor, geom: &ConvGeom) -> Tensor {
    let (n, c, h, wd) = dims4(x, "conv2d_weight input");
    let (n2, o, oh, ow) = dims4(g, "conv2d_weight grad");
    assert_eq!(n, n2);
    assert_eq!((h, wd), (geom.in_h, geom.in_w));
    assert_eq!((oh, ow), geom.out_hw(), "conv2d_weight geometry mismatch");
    let plane = oh * ow;
    let ckk = c * geom.kh * geom.kw;
    let mut col = vec![0.0; ckk * plane];
    let mut out = vec![0.0; o * ckk];
    for b in 0..n {
        im2col(&x.data[b * c * h * wd..(b + 1) * c * h * wd], c, geom, &mut col);
        // out += g_b [O, plane] * col^T [plane, ckk]
        gemm(o, plane, ckk, &g.data[b * o * plane..(b + 1) * o * plane], plane, 1, &col, 1, plane, &mut out, 1.0);
    }
    Tensor::new(vec![o, c, geom.kh, geom.kw], out)
}

/// Normalises each of `groups` contiguous chunks of every batch item to zero
/// mean and unit variance. Returns the normalised tensor and the per-group
/// reciprocal standard deviations.
pub fn group_norm(x: &Tensor, groups: usize, eps: f32) -> (Tensor, Vec<f32>) {
    let n = x.shape[0];
    let per = x.numel() / (n * groups);
    let mut out = vec![0.0; x.numel()];
    let mut rstd = Vec::with_capacity(n * groups);
    for (src, dst) in x.data.chunks_exact(per).zip(out.chunks_exact_mut(per)) {
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
        let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / per as f64;
        let r = 1.0 / (var + eps as f64).sqrt();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = ((v as f64 - mean) * r) as f32;
        }
        rstd.push(r as f32);
    }
    (Tensor::new(x.shape.clone(), out), rstd)
}

/// Input gradient of [`group_norm`]: `rstd * (g - mean(g) - xhat * mean(g * xhat))` per group.
pub fn group_norm_backward(xhat: &Tensor, rstd: &[f32], g: &Tensor) -> Tensor {
    let per = xhat.numel() / rstd.len();
    let mut out = vec![0.0; xhat.numel()];
    for (((xs, gs), dst), &r) in
        xhat.data.chunks_exact(per).zip(g.data.chunks_exact(per)).zip(out.chunks_exact_mut(per)).zip(rstd)
    {
        let mg = gs.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
        let mgx = gs.iter().zip(xs).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / per as f64;
        for ((d, &gv), &xv) in dst.iter_mut().zip(gs).zip(xs) {
            *d = (r as f64 * (gv as f64 - mg - xv as f64 * mgx)) as f32;
        }
    }
    Tensor::new(xhat.shape.clone(), out)
}

/// Nearest-neighbour 2x upsampling of an NCHW tensor.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (n, c, h, w) = dims4(x, "upsample2");
    let mut out = vec![0.0; n * c * h * w * 4];
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w * 4..(p + 1) * h * w * 4];
        for i in 0..2 * h {
            for j in 0..2 * w {
                dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], out)
}

/// 2x2 sum pooling (the adjoint of [`upsample2`]).
pub fn sumpool2(x: &Tensor) -> Tensor {
    let (n, c, h, w) = dims4(x, "sumpool2");
    assert!(h % 2 == 0 && w % 2 == 0, "sumpool2 needs even spatial dims, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let a = 2 * i * w + 2 * j;
                dst[i * ow + j] = src[a] + src[a + 1] + src[a + w] + src[a + w + 1];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
    assert!(!parts.is_empty(), "concat of nothing");
    let first = parts[0].shape();
    let mut shape = first.to_vec();
    shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    for p in parts {
        let s = p.shape();
        assert!(
            s.len() == first.len() && s.iter().zip(first).enumerate().all(|(i, (a, b))| i == axis || a == b),
            "concat shape mismatch {:?} vs {:?}",
            s,
            first
        );
    }
    let (outer, total, inner) = split_axis(&shape, axis);
    let mut out = vec![0.0; outer * total * inner];
    let mut offset = 0;
    for p in parts {
        let len = p.shape()[axis];
        for o in 0..outer {
            let src = &p.data[o * len * inner..(o + 1) * len * inner];
            out[(o * total + offset) * inner..(o * total + offset + len) * inner].copy_from_slice(src);
        }
        offset += len;
    }
    Tensor::new(shape, out)
}

pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, total, inner) = split_axis(x.shape(), axis);
    assert!(start + len <= total, "narrow {start}+{len} out of {total}");
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        out.extend_from_slice(&x.data[(o * total + start) * inner..(o * total + start + len) * inner]);
    }
    Tensor::new(shape, out)
}

/// Embeds `x` into a zero tensor whose `axis` has length `total`, at offset `start`.
pub fn pad_narrow(x: &Tensor, axis: usize, start: usize, total: usize) -> Tensor {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    assert!(start + len <= total);
    let mut shape = x.shape().to_vec();
    shape[axis] = total;
    let mut out = vec![0.0; outer * total * inner];
    for o in 0..outer {
        out[(o * total + start) * inner..(o * total + start + len) * inner]
            .copy_from_slice(&x.data[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (n, c, h, wd) = dims4(x, "");
        let (o, _, kh, kw) = dims4(w, "");
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(vec![n, o, oh, ow]);
        for b in 0..n {
            for oc in 0..o {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for a in 0..kh {
                                for q in 0..kw {
                                    let ii = (i * stride + a) as isize - pad as isize;
                                    let jj = (j * stride + q) as isize - pad as isize;
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                        s += x.data[((b * c + ci) * h + ii as usize) * wd + jj as usize]
                                            * w.data[((oc * c + ci) * kh + a) * kw + q];
                                    }
                                }
                            }
                        }
                        out.data[((b * o + oc) * oh + i) * ow + j] = s;
                    }
                }
            }
        }
        out
    }

    fn seq(shape: Vec<usize>, scale: f32) -> Tensor {
        let n = numel(&shape);
        Tensor::new(shape, (0..n).map(|i| ((i * 37 % 17) as f32 - 8.0) * scale).collect())
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 4), (2, 0, 3), (1, 3, 7), (1, 0, 1), (1, 2, 5), (1, 0, 3)] {
            let x = seq(vec![2, 3, 9, 8], 0.1);
            let w = seq(vec![4, 3, k, k], 0.05);
            let got = conv2d(&x, &w, stride, pad);
            let want = naive_conv(&x, &w, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_adjoints_satisfy_inner_product_identity() {
        // <conv(x, w), g> == <x, convT(g, w)> == <w, conv_weight(x, g)>
        for &(stride, pad, k) in &[(2, 1, 3), (1, 1, 3), (1, 0, 1), (1, 2, 5), (1, 3, 7), (1, 0, 3), (2, 1, 4)] {
            let x = seq(vec![2, 3, 7, 6], 0.1);
            let w = seq(vec![5, 3, k, k], 0.07);
            let geom = ConvGeom { kh: k, kw: k, stride, pad, in_h: 7, in_w: 6 };
            let y = conv2d(&x, &w, stride, pad);
            let g = seq(y.shape().to_vec(), 0.03);
            let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(p, q)| (p * q) as f64).sum::<f64>();
            let lhs = dot(&y, &g);
            let gx = conv_transpose2d(&g, &w, &geom);
            let gw = conv2d_weight(&x, &g, &geom);
            assert!((lhs - dot(&x, &gx)).abs() < 1e-4, "input adjoint, stride {stride} pad {pad} k {k}");
            assert!((lhs - dot(&w, &gw)).abs() < 1e-4, "weight adjoint, stride {stride} pad {pad} k {k}");
        }
    }

    #[test]
    fn broadcasting_and_reduction_agree() {
        let a = seq(vec![2, 3, 4], 1.0);
        let b = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]);
        let c = a.zip_map(&b, |x, y| x * y);
        assert_eq!(c.shape(), &[2, 3, 4]);
        assert_eq!(c.data()[5], a.data()[5] * 2.0);
        let r = c.sum_to(&[3, 1]);
        let mut want = [0.0f32; 3];
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    want[j] += c.data()[(i * 3 + j) * 4 + k];
                }
            }
        }
        assert_eq!(r.data(), &want);
        assert_eq!(b.broadcast_to(&[2, 3, 4]).sum_to(&[3, 1]).data(), &[8.0, 16.0, 24.0]);
    }

    #[test]
    fn upsample_and_sumpool_are_adjoint() {
        let x = seq(vec![1, 2, 3, 3], 0.5);
        let up = upsample2(&x);
        assert_eq!(up.shape(), &[1, 2, 6, 6]);
        let back = sumpool2(&up);
        assert_eq!(back.data(), x.map(|v| 4.0 * v).data());
    }

    #[test]
    fn concat_narrow_pad_roundtrip() {
        let a = seq(vec![2, 2, 3], 1.0);
        let b = seq(vec![2, 1, 3], 2.0);
        let c = concat(&[&a, &b], 1);
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(narrow(&c, 1, 0, 2), a);
        assert_eq!(narrow(&c, 1, 2, 1), b);
        let p = pad_narrow(&b, 1, 2, 3);
        assert_eq!(narrow(&p, 1, 2, 1), b);
        assert_eq!(narrow(&p, 1, 0, 2).max_abs(), 0.0);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]);
        assert_eq!(a.matmul(&b).data(), &[58., 64., 139., 154.]);
        assert_eq!(a.transpose2().shape(), &[3, 2]);
    }
}
