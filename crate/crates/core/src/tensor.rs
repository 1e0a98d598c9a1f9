//! Dense row-major tensors and the numeric kernels behind the autodiff ops.

use crate::scalar::{lit, Scalar};

/// Dense row-major n-d array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::new(shape, data.iter().map(|&x| lit(x)).collect())
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> T {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            numel(shape),
            self.data.len(),
            "bad reshape {:?} -> {shape:?}",
            self.shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    /// Broadcasting elementwise binary op; both operands must have equal rank.
    pub fn zip_bcast(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        if self.shape == other.shape {
            return Tensor {
                shape: self.shape.clone(),
                data: self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            };
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape);
        let sa = bcast_strides(&self.shape, &out_shape);
        let sb = bcast_strides(&other.shape, &out_shape);
        let mut out = Vec::with_capacity(numel(&out_shape));
        walk2(&out_shape, &sa, &sb, |ia, ib, len, da, db| match (da, db) {
            (1, 1) => out.extend(
                self.data[ia..ia + len]
                    .iter()
                    .zip(&other.data[ib..ib + len])
                    .map(|(&a, &b)| f(a, b)),
            ),
            (1, 0) => {
                let b = other.data[ib];
                out.extend(self.data[ia..ia + len].iter().map(|&a| f(a, b)));
            }
            (0, 1) => {
                let a = self.data[ia];
                out.extend(other.data[ib..ib + len].iter().map(|&b| f(a, b)));
            }
            _ => {
                let (mut ia, mut ib) = (ia, ib);
                for _ in 0..len {
                    out.push(f(self.data[ia], other.data[ib]));
                    ia += da;
                    ib += db;
                }
            }
        });
        Tensor {
            shape: out_shape,
            data: out,
        }
    }

    /// Sums over broadcast dimensions so the result has `target` shape.
    pub fn sum_to(&self, target: &[usize]) -> Self {
        if self.shape == target {
            return self.clone();
        }
        assert_eq!(self.shape.len(), target.len(), "sum_to rank mismatch");
        let st = bcast_strides(target, &self.shape);
        let ones = strides(&self.shape);
        let mut out = vec![T::zero(); numel(target)];
        walk2(&self.shape, &ones, &st, |ia, it, len, da, dt| {
            match (da, dt) {
                (1, 1) => {
                    for (o, &v) in out[it..it + len].iter_mut().zip(&self.data[ia..ia + len]) {
                        *o += v;
                    }
                }
                (1, 0) => out[it] += self.data[ia..ia + len].iter().copied().sum::<T>(),
                _ => {
                    let (mut ia, mut it) = (ia, it);
                    for _ in 0..len {
                        out[it] += self.data[ia];
                        ia += da;
                        it += dt;
                    }
                }
            }
        });
        Tensor::new(target, out)
    }

    pub fn broadcast_to(&self, target: &[usize]) -> Self {
        if self.shape == target {
            return self.clone();
        }
        let z = Tensor::zeros(target);
        z.zip_bcast(self, |_, b| b)
    }

    /// 2-D matrix product with optional transposition of either operand.
    pub fn matmul(&self, other: &Self, ta: bool, tb: bool) -> Self {
        assert_eq!(self.shape.len(), 2);
        assert_eq!(other.shape.len(), 2);
        let (r0, c0) = (self.shape[0], self.shape[1]);
        let (r1, c1) = (other.shape[0], other.shape[1]);
        let (m, k) = if ta { (c0, r0) } else { (r0, c0) };
        let (k2, n) = if tb { (c1, r1) } else { (r1, c1) };
        assert_eq!(
            k, k2,
            "matmul inner dims {:?} x {:?}",
            self.shape, other.shape
        );
        let (rsa, csa) = if ta {
            (1, c0 as isize)
        } else {
            (c0 as isize, 1)
        };
        let (rsb, csb) = if tb {
            (1, c1 as isize)
        } else {
            (c1 as isize, 1)
        };
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            rsa,
            csa,
            &other.data,
            rsb,
            csb,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Tensor::new(&[m, n], out)
    }

    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Self {
        let outer = numel(&self.shape[..axis]);
        let dim = self.shape[axis];
        let inner = numel(&self.shape[axis + 1..]);
        assert!(start + len <= dim, "slice out of range");
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::new(&shape, out)
    }

    /// Zero-pads along `axis` so the input occupies `[start, start+len)` of `total`.
    pub fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Self {
        let outer = numel(&self.shape[..axis]);
        let len = self.shape[axis];
        let inner = numel(&self.shape[axis + 1..]);
        assert!(start + len <= total, "pad out of range");
        let mut out = vec![T::zero(); outer * total * inner];
        for o in 0..outer {
            let src = o * len * inner;
            let dst = (o * total + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&self.data[src..src + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = total;
        Tensor::new(&shape, out)
    }

    pub fn softmax_axis(&self, axis: usize) -> Self {
        let outer = numel(&self.shape[..axis]);
        let dim = self.shape[axis];
        let inner = numel(&self.shape[axis + 1..]);
        let mut out = self.data.clone();
        let mut mx = vec![T::zero(); inner];
        let mut sum = vec![T::zero(); inner];
        for o in 0..outer {
            let block = &mut out[o * dim * inner..(o + 1) * dim * inner];
            mx.copy_from_slice(&block[..inner]);
            for k in 1..dim {
                for (m, &v) in mx.iter_mut().zip(&block[k * inner..(k + 1) * inner]) {
                    *m = m.max(v);
                }
            }
            sum.iter_mut().for_each(|s| *s = T::zero());
            for k in 0..dim {
                let row = &mut block[k * inner..(k + 1) * inner];
                for ((v, &m), s) in row.iter_mut().zip(&mx).zip(sum.iter_mut()) {
                    *v = (*v - m).exp();
                    *s += *v;
                }
            }
            for k in 0..dim {
                for (v, &s) in block[k * inner..(k + 1) * inner].iter_mut().zip(&sum) {
                    *v = *v / s;
                }
            }
        }
        Tensor::new(&self.shape, out)
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Self {
        let first = parts[0];
        let outer = numel(&first.shape[..axis]);
        let inner = numel(&first.shape[axis + 1..]);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Tensor::new(&shape, out)
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast rank mismatch {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(
                x == y || x == 1 || y == 1,
                "cannot broadcast {a:?} with {b:?}"
            );
            x.max(y)
        })
        .collect()
}

/// Strides of `shape` viewed inside `out` (0 on broadcast axes).
fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(s)
        .map(|((&d, &o), st)| if d == 1 && o != 1 { 0 } else { st })
        .collect()
}

/// Visits `shape` row by row (last axis innermost), handing the callback
/// the starting offsets and inner strides of two strided operands. Axes
/// that are contiguous in both operands are merged first so rows are long.
fn walk2(
    shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize, usize, usize),
) {
    if shape.is_empty() {
        f(0, 0, 1, 0, 0);
        return;
    }
    if numel(shape) == 0 {
        return;
    }
    let mut dims: Vec<(usize, usize, usize)> = Vec::with_capacity(shape.len());
    for i in 0..shape.len() {
        let cur = (shape[i], sa[i], sb[i]);
        if let Some(last) = dims.last_mut() {
            if last.1 == cur.1 * cur.0 && last.2 == cur.2 * cur.0 {
                *last = (last.0 * cur.0, cur.1, cur.2);
                continue;
            }
        }
        dims.push(cur);
    }
    let r = dims.len();
    let (inner, da, db) = dims[r - 1];
    let rows: usize = dims[..r - 1].iter().map(|d| d.0).product();
    let mut idx = vec![0usize; r - 1];
    for _ in 0..rows {
        let (mut ia, mut ib) = (0, 0);
        for d in 0..r - 1 {
            ia += idx[d] * dims[d].1;
            ib += idx[d] * dims[d].2;
        }
        f(ia, ib, inner, da, db);
        for d in (0..r - 1).rev() {
            idx[d] += 1;
            if idx[d] < dims[d].0 {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Geometry of a 2-D convolution (square stride and padding).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, input: usize, kernel: usize) -> usize {
        (input + 2 * self.pad - kernel) / self.stride + 1
    }
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(x_shape: &[usize], w_shape: &[usize], g: ConvGeom) -> ConvDims {
    assert_eq!(x_shape.len(), 4, "conv input must be NCHW");
    assert_eq!(w_shape.len(), 4, "conv weight must be OCKK");
    assert_eq!(x_shape[1], w_shape[1], "conv channel mismatch");
    let oh = g.out_size(x_shape[2], w_shape[2]);
    let ow = g.out_size(x_shape[3], w_shape[3]);
    ConvDims {
        n: x_shape[0],
        c: x_shape[1],
        h: x_shape[2],
        w: x_shape[3],
        o: w_shape[0],
        kh: w_shape[2],
        kw: w_shape[3],
        oh,
        ow,
    }
}

/// Unfolds `x` into a `[C*KH*KW, N*OH*OW]` column matrix.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, g: ConvGeom) -> Vec<T> {
    let l = d.oh * d.ow;
    let cols_n = d.n * l;
    let mut cols = vec![T::zero(); d.c * d.kh * d.kw * cols_n];
    let (s, p) = (g.stride as isize, g.pad as isize);
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..d.n {
                    let src = &x[(n * d.c + c) * d.h * d.w..(n * d.c + c + 1) * d.h * d.w];
                    for oy in 0..d.oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * d.w..(iy as usize + 1) * d.w];
                        let drow = &mut dst[n * l + oy * d.ow..n * l + (oy + 1) * d.ow];
                        for (ox, v) in drow.iter_mut().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < d.w as isize {
                                *v = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, g: ConvGeom) -> Vec<T> {
    let l = d.oh * d.ow;
    let cols_n = d.n * l;
    let mut x = vec![T::zero(); d.n * d.c * d.h * d.w];
    let (s, p) = (g.stride as isize, g.pad as isize);
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..d.n {
                    let dst = &mut x[(n * d.c + c) * d.h * d.w..(n * d.c + c + 1) * d.h * d.w];
                    for oy in 0..d.oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let srow = &src[n * l + oy * d.ow..n * l + (oy + 1) * d.ow];
                        let base = iy as usize * d.w;
                        for (ox, &v) in srow.iter().enumerate() {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < d.w as isize {
                                dst[base + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[O, N*L]` -> `[N, O, L]`
fn onl_to_nol<T: Scalar>(m: &[T], n: usize, o: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * o * l];
    for oi in 0..o {
        for ni in 0..n {
            let src = &m[oi * n * l + ni * l..oi * n * l + (ni + 1) * l];
            out[(ni * o + oi) * l..(ni * o + oi + 1) * l].copy_from_slice(src);
        }
    }
    out
}

/// `[N, O, L]` -> `[O, N*L]`
fn nol_to_onl<T: Scalar>(m: &[T], n: usize, o: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * o * l];
    for ni in 0..n {
        for oi in 0..o {
            let src = &m[(ni * o + oi) * l..(ni * o + oi + 1) * l];
            out[oi * n * l + ni * l..oi * n * l + (ni + 1) * l].copy_from_slice(src);
        }
    }
    out
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, g: ConvGeom) -> Tensor<T> {
    let d = conv_dims(&x.shape, &w.shape, g);
    let cols = im2col(&x.data, &d, g);
    let ckk = d.c * d.kh * d.kw;
    let nl = d.n * d.oh * d.ow;
    let mut out = vec![T::zero(); d.o * nl];
    T::gemm(
        d.o,
        ckk,
        nl,
        T::one(),
        &w.data,
        ckk as isize,
        1,
        &cols,
        nl as isize,
        1,
        T::zero(),
        &mut out,
        nl as isize,
        1,
    );
    let out = onl_to_nol(&out, d.n, d.o, d.oh * d.ow);
    Tensor::new(&[d.n, d.o, d.oh, d.ow], out)
}

/// Gradient of `conv2d` with respect to its input (a transposed convolution).
pub fn conv2d_input_grad<T: Scalar>(
    gout: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    g: ConvGeom,
) -> Tensor<T> {
    let d = conv_dims(x_shape, &w.shape, g);
    assert_eq!(gout.shape, [d.n, d.o, d.oh, d.ow], "conv grad shape");
    let l = d.oh * d.ow;
    let gm = nol_to_onl(&gout.data, d.n, d.o, l);
    let ckk = d.c * d.kh * d.kw;
    let nl = d.n * l;
    let mut cols = vec![T::zero(); ckk * nl];
    T::gemm(
        ckk,
        d.o,
        nl,
        T::one(),
        &w.data,
        1,
        ckk as isize,
        &gm,
        nl as isize,
        1,
        T::zero(),
        &mut cols,
        nl as isize,
        1,
    );
    Tensor::new(x_shape, col2im(&cols, &d, g))
}

/// Gradient of `conv2d` with respect to its weight.
pub fn conv2d_weight_grad<T: Scalar>(
    x: &Tensor<T>,
    gout: &Tensor<T>,
    w_shape: &[usize],
    g: ConvGeom,
) -> Tensor<T> {
    let d = conv_dims(&x.shape, w_shape, g);
    assert_eq!(gout.shape, [d.n, d.o, d.oh, d.ow], "conv grad shape");
    let l = d.oh * d.ow;
    let gm = nol_to_onl(&gout.data, d.n, d.o, l);
    let cols = im2col(&x.data, &d, g);
    let ckk = d.c * d.kh * d.kw;
    let nl = d.n * l;
    let mut out = vec![T::zero(); d.o * ckk];
    T::gemm(
        d.o,
        nl,
        ckk,
        T::one(),
        &gm,
        nl as isize,
        1,
        &cols,
        1,
        nl as isize,
        T::zero(),
        &mut out,
        ckk as isize,
        1,
    );
    Tensor::new(w_shape, out)
}

/// Per-axis bilinear taps (half-pixel centers, edge clamped).
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of the two trailing axes of an NCHW tensor (separable:
/// rows first, then columns).
pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let ty = typed_taps::<T>(h, oh);
    let tx = typed_taps::<T>(w, ow);
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut tmp = vec![T::zero(); h * ow];
    for plane in 0..n * c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (t, &(x0, x1, a, b)) in tmp[y * ow..(y + 1) * ow].iter_mut().zip(&tx) {
                *t = a * row[x0] + b * row[x1];
            }
        }
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, a, b)) in ty.iter().enumerate() {
            let r0 = &tmp[y0 * ow..(y0 + 1) * ow];
            let r1 = &tmp[y1 * ow..(y1 + 1) * ow];
            for ((d, &u), &v) in dst[oy * ow..(oy + 1) * ow].iter_mut().zip(r0).zip(r1) {
                *d = a * u + b * v;
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

fn typed_taps<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T, T)> {
    bilinear_taps(input, output)
        .into_iter()
        .map(|(a, b, f)| (a, b, lit(1.0 - f), lit(f)))
        .collect()
}

/// Adjoint of [`upsample_bilinear`]: maps an `[N,C,OH,OW]` gradient back to `[N,C,h,w]`.
pub fn upsample_bilinear_adjoint<T: Scalar>(g: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (n, c, oh, ow) = (g.shape[0], g.shape[1], g.shape[2], g.shape[3]);
    let ty = typed_taps::<T>(h, oh);
    let tx = typed_taps::<T>(w, ow);
    let mut out = vec![T::zero(); n * c * h * w];
    let mut tmp = vec![T::zero(); h * ow];
    for plane in 0..n * c {
        let src = &g.data[plane * oh * ow..(plane + 1) * oh * ow];
        tmp.iter_mut().for_each(|t| *t = T::zero());
        for (oy, &(y0, y1, a, b)) in ty.iter().enumerate() {
            let row = &src[oy * ow..(oy + 1) * ow];
            for (t, &v) in tmp[y0 * ow..(y0 + 1) * ow].iter_mut().zip(row) {
                *t += a * v;
            }
            for (t, &v) in tmp[y1 * ow..(y1 + 1) * ow].iter_mut().zip(row) {
                *t += b * v;
            }
        }
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let row = &tmp[y * ow..(y + 1) * ow];
            let d = &mut dst[y * w..(y + 1) * w];
            for (&v, &(x0, x1, a, b)) in row.iter().zip(&tx) {
                d[x0] += a * v;
                d[x1] += b * v;
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}
