//! Layer primitives with hand-written backward passes.
//!
//! Feature maps are channel-major `(c, h, w)` buffers. Every forward function
//! returns whatever its backward counterpart needs.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type the network can run in.
pub trait Real: Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// Raw strided gemm, `c = alpha·a·b + beta·c`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        f64::from(self)
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `c = alpha·op(a)·op(b) + beta·c` on row-major buffers, where `op(a)` is
/// `m×k` and `op(b)` is `k×n`; `ta`/`tb` mean the buffer holds the transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(ta: bool, tb: bool, m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds checked above; `c` is a distinct mutable borrow.
    unsafe { T::gemm_raw(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1) }
}

/// A channel-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![T::zero(); c * h * w] }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Offsets of a convolution's parameters. Weights are `[cout][cin][k][k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w: usize,
    pub b: usize,
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

/// Offsets of a group normalization's scale and shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub c: usize,
    pub g: usize,
    pub b: usize,
}

/// Offsets of a dense layer. Weights are `[dout][din]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub din: usize,
    pub dout: usize,
    pub w: usize,
    pub b: usize,
}

pub const GROUPS: usize = 8;
const GN_EPS: f64 = 1e-5;

fn im2col3<T: Real>(x: &Tensor<T>, col: &mut [T]) {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    for ci in 0..x.c {
        let src_c = &x.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &src_c[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

fn col2im3<T: Real>(col: &[T], c: usize, h: usize, w: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(c, h, w);
    let hw = h * w;
    for ci in 0..c {
        let dst_c = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut dst_c[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

/// Same-padded convolution. Returns the output and the unfolded input.
pub fn conv_forward<T: Real>(p: &[T], conv: &Conv, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    debug_assert_eq!(x.c, conv.cin);
    let hw = x.hw();
    let kk = conv.cin * conv.k * conv.k;
    let col = if conv.k == 1 {
        x.data.clone()
    } else {
        let mut col = vec![T::zero(); kk * hw];
        im2col3(x, &mut col);
        col
    };
    let mut out = Tensor::zeros(conv.cout, x.h, x.w);
    for (co, chunk) in out.data.chunks_mut(hw).enumerate() {
        chunk.fill(p[conv.b + co]);
    }
    gemm(false, false, conv.cout, kk, hw, T::one(), &p[conv.w..conv.w + conv.weight_len()], &col, T::one(), &mut out.data);
    (out, col)
}

/// Accumulate parameter gradients of a convolution into `g` and, when
/// `need_dx`, return the input gradient.
pub fn conv_backward<T: Real>(
    p: &[T],
    g: &mut [T],
    conv: &Conv,
    col: &[T],
    dout: &Tensor<T>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let hw = dout.hw();
    let kk = conv.cin * conv.k * conv.k;
    for (co, chunk) in dout.data.chunks(hw).enumerate() {
        let s = chunk.iter().fold(0.0, |acc, &v| acc + v.f64());
        g[conv.b + co] += T::of(s);
    }
    let wl = conv.weight_len();
    gemm(false, true, conv.cout, hw, kk, T::one(), &dout.data, col, T::one(), &mut g[conv.w..conv.w + wl]);
    if !need_dx {
        return None;
    }
    let mut dcol = vec![T::zero(); kk * hw];
    gemm(true, false, kk, conv.cout, hw, T::one(), &p[conv.w..conv.w + wl], &dout.data, T::zero(), &mut dcol);
    Some(if conv.k == 1 {
        Tensor { c: conv.cin, h: dout.h, w: dout.w, data: dcol }
    } else {
        col2im3(&dcol, conv.cin, dout.h, dout.w)
    })
}

/// Normalized activations and per-group reciprocal deviations.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<f64>,
}

pub fn norm_forward<T: Real>(p: &[T], norm: &Norm, x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
    let hw = x.hw();
    let per = norm.c / GROUPS * hw;
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut rstd = Vec::with_capacity(GROUPS);
    for (src, dst) in x.data.chunks(per).zip(xhat.chunks_mut(per)) {
        let n = per as f64;
        let mean = src.iter().fold(0.0, |a, &v| a + v.f64()) / n;
        let var = src.iter().fold(0.0, |a, &v| a + (v.f64() - mean).powi(2)) / n;
        let r = 1.0 / (var + GN_EPS).sqrt();
        let (mt, rt) = (T::of(mean), T::of(r));
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mt) * rt;
        }
        rstd.push(r);
    }
    let mut out = Tensor { c: x.c, h: x.h, w: x.w, data: xhat.clone() };
    for (c, chunk) in out.data.chunks_mut(hw).enumerate() {
        let (scale, shift) = (p[norm.g + c], p[norm.b + c]);
        chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    (out, NormCache { xhat, rstd })
}

pub fn norm_backward<T: Real>(p: &[T], g: &mut [T], norm: &Norm, cache: &NormCache<T>, dout: &Tensor<T>) -> Tensor<T> {
    let hw = dout.hw();
    let cg = norm.c / GROUPS;
    let mut dx = Tensor::zeros(dout.c, dout.h, dout.w);
    for grp in 0..GROUPS {
        let (mut s1, mut s2) = (0.0, 0.0);
        for c in grp * cg..(grp + 1) * cg {
            let scale = p[norm.g + c].f64();
            let (mut dg, mut db) = (0.0, 0.0);
            for (&dy, &xh) in dout.data[c * hw..(c + 1) * hw].iter().zip(&cache.xhat[c * hw..(c + 1) * hw]) {
                let (dy, xh) = (dy.f64(), xh.f64());
                dg += dy * xh;
                db += dy;
                s1 += dy * scale;
                s2 += dy * scale * xh;
            }
            g[norm.g + c] += T::of(dg);
            g[norm.b + c] += T::of(db);
        }
        let n = (cg * hw) as f64;
        let (m1, m2, r) = (T::of(s1 / n), T::of(s2 / n), T::of(cache.rstd[grp]));
        for c in grp * cg..(grp + 1) * cg {
            let scale = p[norm.g + c];
            let range = c * hw..(c + 1) * hw;
            for ((d, &dy), &xh) in dx.data[range.clone()].iter_mut().zip(&dout.data[range.clone()]).zip(&cache.xhat[range]) {
                *d = r * (dy * scale - m1 - xh * m2);
            }
        }
    }
    dx
}

pub fn silu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v / (T::one() + (-v).exp())).collect()
}

/// Gradient through SiLU given its pre-activation.
pub fn silu_backward<T: Real>(pre: &[T], dout: &[T]) -> Vec<T> {
    pre.iter()
        .zip(dout)
        .map(|(&a, &d)| {
            let s = T::one() / (T::one() + (-a).exp());
            d * s * (T::one() + a * (T::one() - s))
        })
        .collect()
}

pub fn linear_forward<T: Real>(p: &[T], lin: &Linear, x: &[T]) -> Vec<T> {
    (0..lin.dout)
        .map(|o| {
            let row = &p[lin.w + o * lin.din..lin.w + (o + 1) * lin.din];
            T::of(row.iter().zip(x).fold(p[lin.b + o].f64(), |a, (&w, &v)| a + w.f64() * v.f64()))
        })
        .collect()
}

/// Accumulate dense-layer gradients and return the input gradient.
pub fn linear_backward<T: Real>(p: &[T], g: &mut [T], lin: &Linear, x: &[T], dout: &[T]) -> Vec<T> {
    let mut dx = vec![0.0; lin.din];
    for (o, &d) in dout.iter().enumerate() {
        g[lin.b + o] += d;
        let base = lin.w + o * lin.din;
        for i in 0..lin.din {
            g[base + i] += d * x[i];
            dx[i] += d.f64() * p[base + i].f64();
        }
    }
    dx.into_iter().map(T::of).collect()
}

pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    let quarter = T::of(0.25);
    for c in 0..x.c {
        let src = &x.data[c * x.hw()..(c + 1) * x.hw()];
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * x.w + 2 * xx;
                out.data[c * h2 * w2 + y * w2 + xx] = (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(dout: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dout.h * 2, dout.w * 2);
    let mut dx = Tensor::zeros(dout.c, h, w);
    let quarter = T::of(0.25);
    for c in 0..dout.c {
        for y in 0..h {
            for x in 0..w {
                dx.data[c * h * w + y * w + x] = dout.data[c * dout.hw() + (y / 2) * dout.w + x / 2] * quarter;
            }
        }
    }
    dx
}

pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[c * h * w + y * w + xx] = x.data[c * x.hw() + (y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dout: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (dout.h / 2, dout.w / 2);
    let mut dx = Tensor::zeros(dout.c, h2, w2);
    for c in 0..dout.c {
        for y in 0..dout.h {
            for x in 0..dout.w {
                dx.data[c * h2 * w2 + (y / 2) * w2 + x / 2] += dout.data[c * dout.hw() + y * dout.w + x];
            }
        }
    }
    dx
}

/// Stack `a` and `scale·b` along the channel axis.
pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>, scale: T) -> Tensor<T> {
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend(b.data.iter().map(|&v| v * scale));
    Tensor { c: a.c + b.c, h: a.h, w: a.w, data }
}

/// Split a concatenation gradient into the parts for `a` and `b`.
pub fn concat_backward<T: Real>(dout: &Tensor<T>, ca: usize, scale: T) -> (Tensor<T>, Tensor<T>) {
    let n = ca * dout.hw();
    let da = Tensor { c: ca, h: dout.h, w: dout.w, data: dout.data[..n].to_vec() };
    let db = Tensor { c: dout.c - ca, h: dout.h, w: dout.w, data: dout.data[n..].iter().map(|&v| v * scale).collect() };
    (da, db)
}
