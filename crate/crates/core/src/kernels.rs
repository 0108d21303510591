//! Forward and backward kernels on raw buffers.
//!
//! These carry no autodiff bookkeeping; [`crate::tape`] wraps them into
//! recorded operations and [`crate::nn`] exposes the forward halves as plain
//! tensor functions.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Geometry of a (grouped) 2D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Splits an NCHW or CHW shape into `(batch, c, h, w)`.
pub fn nchw(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::dim(format!(
            "expected a CHW or NCHW tensor, got shape {shape:?}"
        ))),
    }
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        let (batch, c_in, h, w) = nchw(input)?;
        let [c_out, cg, kh, kw] = *weight else {
            return Err(Error::dim(format!(
                "conv2d weight must be OIKK, got {weight:?} (input {input:?})"
            )));
        };
        if stride == 0 || groups == 0 {
            return Err(Error::dim("conv2d stride and groups must be positive"));
        }
        if c_in % groups != 0 || c_out % groups != 0 || cg * groups != c_in {
            return Err(Error::dim(format!(
                "conv2d channel mismatch: input {input:?}, weight {weight:?}, groups {groups}"
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::dim(format!(
                "conv2d kernel {kh}x{kw} does not fit padded input {input:?} (pad {pad})"
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            groups,
            oh,
            ow,
        })
    }

    fn cg(&self) -> usize {
        self.c_in / self.groups
    }

    fn og(&self) -> usize {
        self.c_out / self.groups
    }

    fn col_rows(&self) -> usize {
        self.cg() * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn out_shape(&self, rank: usize) -> Vec<usize> {
        if rank == 3 {
            vec![self.c_out, self.oh, self.ow]
        } else {
            vec![self.batch, self.c_out, self.oh, self.ow]
        }
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let hw_out = g.oh * g.ow;
    for c in 0..g.cg() {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let hw_out = g.oh * g.ow;
    for c in 0..g.cg() {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let hw_in = g.h * g.w;
    let hw_out = g.oh * g.ow;
    let (cg, og, rows) = (g.cg(), g.og(), g.col_rows());
    let mut out = vec![T::zero(); g.batch * g.c_out * hw_out];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * hw_out]
    };
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let xs = &x[(n * g.c_in + grp * cg) * hw_in..(n * g.c_in + (grp + 1) * cg) * hw_in];
            let cols: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(g, xs, &mut col);
                &col
            };
            let ws = &w[grp * og * rows..(grp + 1) * og * rows];
            let o0 = (n * g.c_out + grp * og) * hw_out;
            let os = &mut out[o0..o0 + og * hw_out];
            if let Some(b) = bias {
                for (o, chunk) in os.chunks_mut(hw_out).enumerate() {
                    chunk.fill(b[grp * og + o]);
                }
            }
            T::gemm(
                og,
                rows,
                hw_out,
                T::one(),
                ws,
                rows as isize,
                1,
                cols,
                hw_out as isize,
                1,
                T::one(),
                os,
                hw_out as isize,
                1,
            );
        }
    }
    out
}

/// Returns `(dx, dw, db)`; each is computed only when requested.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let hw_in = g.h * g.w;
    let hw_out = g.oh * g.ow;
    let (cg, og, rows) = (g.cg(), g.og(), g.col_rows());
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let db = need_db.then(|| {
        let mut db = vec![T::zero(); g.c_out];
        for n in 0..g.batch {
            for (o, acc) in db.iter_mut().enumerate() {
                let s = (n * g.c_out + o) * hw_out;
                *acc += dy[s..s + hw_out].iter().copied().sum::<T>();
            }
        }
        db
    });
    if !(need_dx || need_dw) {
        return (dx, dw, db);
    }
    let mut col = vec![T::zero(); rows * hw_out];
    let mut dcol = vec![T::zero(); rows * hw_out];
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let x0 = (n * g.c_in + grp * cg) * hw_in;
            let xs = &x[x0..x0 + cg * hw_in];
            let ws = &w[grp * og * rows..(grp + 1) * og * rows];
            let o0 = (n * g.c_out + grp * og) * hw_out;
            let dys = &dy[o0..o0 + og * hw_out];
            if let Some(dw) = dw.as_mut() {
                let cols: &[T] = if g.is_pointwise() {
                    xs
                } else {
                    im2col(g, xs, &mut col);
                    &col
                };
                // dW (og × rows) += dY (og × hw) · colᵀ (hw × rows)
                T::gemm(
                    og,
                    hw_out,
                    rows,
                    T::one(),
                    dys,
                    hw_out as isize,
                    1,
                    cols,
                    1,
                    hw_out as isize,
                    T::one(),
                    &mut dw[grp * og * rows..(grp + 1) * og * rows],
                    rows as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[x0..x0 + cg * hw_in];
                if g.is_pointwise() {
                    T::gemm(
                        rows,
                        og,
                        hw_out,
                        T::one(),
                        ws,
                        1,
                        rows as isize,
                        dys,
                        hw_out as isize,
                        1,
                        T::one(),
                        dxs,
                        hw_out as isize,
                        1,
                    );
                } else {
                    // dcol (rows × hw) = Wᵀ (rows × og) · dY (og × hw)
                    T::gemm(
                        rows,
                        og,
                        hw_out,
                        T::one(),
                        ws,
                        1,
                        rows as isize,
                        dys,
                        hw_out as isize,
                        1,
                        T::zero(),
                        &mut dcol,
                        hw_out as isize,
                        1,
                    );
                    col2im_add(g, &dcol, dxs);
                }
            }
        }
    }
    (dx, dw, db)
}

/// Geometry of a transposed convolution whose kernel equals its stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
}

impl TConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize) -> Result<Self> {
        let (batch, c_in, h, w) = nchw(input)?;
        let [wi, c_out, kh, kw] = *weight else {
            return Err(Error::dim(format!(
                "transposed_conv2d weight must be IOKK, got {weight:?} (input {input:?})"
            )));
        };
        if wi != c_in {
            return Err(Error::dim(format!(
                "transposed_conv2d channel mismatch: input {input:?}, weight {weight:?}"
            )));
        }
        if kh != kw || kh != stride || stride == 0 {
            return Err(Error::dim(format!(
                "transposed_conv2d kernel {kh}x{kw} must equal stride {stride}"
            )));
        }
        Ok(TConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            k: stride,
        })
    }

    pub fn out_shape(&self, rank: usize) -> Vec<usize> {
        let (oh, ow) = (self.h * self.k, self.w * self.k);
        if rank == 3 {
            vec![self.c_out, oh, ow]
        } else {
            vec![self.batch, self.c_out, oh, ow]
        }
    }
}

pub fn tconv2d_forward<T: Real>(g: &TConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let hw = g.h * g.w;
    let kk = g.k * g.k;
    let rows = g.c_out * kk;
    let (oh, ow) = (g.h * g.k, g.w * g.k);
    let mut out = vec![T::zero(); g.batch * g.c_out * oh * ow];
    let mut cols = vec![T::zero(); rows * hw];
    for n in 0..g.batch {
        let xs = &x[n * g.c_in * hw..(n + 1) * g.c_in * hw];
        // cols (O·kk × hw) = Wmatᵀ · X, Wmat is I × (O·kk)
        T::gemm(
            rows,
            g.c_in,
            hw,
            T::one(),
            w,
            1,
            rows as isize,
            xs,
            hw as isize,
            1,
            T::zero(),
            &mut cols,
            hw as isize,
            1,
        );
        let os = &mut out[n * g.c_out * oh * ow..(n + 1) * g.c_out * oh * ow];
        for o in 0..g.c_out {
            let b = bias.map_or(T::zero(), |b| b[o]);
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let src = &cols[((o * g.k + ky) * g.k + kx) * hw..][..hw];
                    for y in 0..g.h {
                        let row = &mut os[(o * oh + y * g.k + ky) * ow..][..ow];
                        for xq in 0..g.w {
                            row[xq * g.k + kx] = src[y * g.w + xq] + b;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
pub fn tconv2d_backward<T: Real>(
    g: &TConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let hw = g.h * g.w;
    let kk = g.k * g.k;
    let rows = g.c_out * kk;
    let (oh, ow) = (g.h * g.k, g.w * g.k);
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut db = need_db.then(|| vec![T::zero(); g.c_out]);
    let mut dcols = vec![T::zero(); rows * hw];
    for n in 0..g.batch {
        let dys = &dy[n * g.c_out * oh * ow..(n + 1) * g.c_out * oh * ow];
        for o in 0..g.c_out {
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let dst = &mut dcols[((o * g.k + ky) * g.k + kx) * hw..][..hw];
                    for y in 0..g.h {
                        let row = &dys[(o * oh + y * g.k + ky) * ow..][..ow];
                        for xq in 0..g.w {
                            dst[y * g.w + xq] = row[xq * g.k + kx];
                        }
                    }
                }
            }
            if let Some(db) = db.as_mut() {
                db[o] += dys[o * oh * ow..(o + 1) * oh * ow].iter().copied().sum::<T>();
            }
        }
        let xs = &x[n * g.c_in * hw..(n + 1) * g.c_in * hw];
        if let Some(dx) = dx.as_mut() {
            // dX (I × hw) = Wmat (I × rows) · dcols (rows × hw)
            T::gemm(
                g.c_in,
                rows,
                hw,
                T::one(),
                w,
                rows as isize,
                1,
                &dcols,
                hw as isize,
                1,
                T::zero(),
                &mut dx[n * g.c_in * hw..(n + 1) * g.c_in * hw],
                hw as isize,
                1,
            );
        }
        if let Some(dw) = dw.as_mut() {
            // dWmat (I × rows) += X (I × hw) · dcolsᵀ (hw × rows)
            T::gemm(
                g.c_in,
                hw,
                rows,
                T::one(),
                xs,
                hw as isize,
                1,
                &dcols,
                1,
                hw as isize,
                T::one(),
                dw,
                rows as isize,
                1,
            );
        }
    }
    (dx, dw, db)
}

/// Max pooling; returns the pooled values and, per output, the flat index of
/// the winning input element.
pub fn max_pool2d_forward<T: Real>(
    shape: &[usize],
    x: &[T],
    window: usize,
    stride: usize,
) -> Result<(Vec<usize>, Vec<T>, Vec<usize>)> {
    let (n, c, h, w) = nchw(shape)?;
    if window == 0 || stride == 0 {
        return Err(Error::dim("max_pool2d window and stride must be positive"));
    }
    if h % stride != 0 || w % stride != 0 || h < window || w < window {
        return Err(Error::dim(format!(
            "max_pool2d: spatial dims of {shape:?} not divisible by stride {stride}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    let out_shape = if shape.len() == 3 {
        vec![c, oh, ow]
    } else {
        vec![n, c, oh, ow]
    };
    Ok((out_shape, out, arg))
}

/// Splits `shape` around `axis` into `(outer, n, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Layer normalization over one axis. Returns the output and the normalized
/// values `x̂` together with `1/σ` per normalized group (for the backward).
pub fn layer_norm_forward<T: Real>(
    shape: &[usize],
    x: &[T],
    axis: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); outer * inner];
    let nf = T::lit(n as f64);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mean = (0..n).map(|j| x[idx(j)]).sum::<T>() / nf;
            let var = (0..n)
                .map(|j| {
                    let d = x[idx(j)] - mean;
                    d * d
                })
                .sum::<T>()
                / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd[o * inner + i] = r;
            for j in 0..n {
                let k = idx(j);
                let xh = (x[k] - mean) * r;
                xhat[k] = xh;
                y[k] = xh * gamma[j] + beta[j];
            }
        }
    }
    (y, xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Real>(
    shape: &[usize],
    axis: usize,
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); n];
    let mut dbeta = vec![T::zero(); n];
    let nf = T::lit(n as f64);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for j in 0..n {
                let k = idx(j);
                let d = dy[k] * gamma[j];
                mean_d += d;
                mean_dx += d * xhat[k];
                dgamma[j] += dy[k] * xhat[k];
                dbeta[j] += dy[k];
            }
            mean_d = mean_d / nf;
            mean_dx = mean_dx / nf;
            let r = rstd[o * inner + i];
            for j in 0..n {
                let k = idx(j);
                let d = dy[k] * gamma[j];
                dx[k] = r * (d - mean_d - xhat[k] * mean_dx);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Numerically stable softmax over contiguous rows of length `n`.
pub fn softmax_rows<T: Real>(x: &[T], n: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (row, out) in x.chunks(n).zip(y.chunks_mut(n)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - m).exp();
            s += *o;
        }
        for o in out.iter_mut() {
            *o = *o / s;
        }
    }
    y
}

/// GELU, tanh approximation.
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::lit(3.0) * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
