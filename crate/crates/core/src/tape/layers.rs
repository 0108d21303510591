use std::rc::Rc;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, TConvGeom};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    pub fn conv2d(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let geom = ConvGeom::new(xv.shape(), wv.shape(), stride, pad, groups)?;
        let bv = bias.map(|b| self.value(b));
        if let Some(b) = &bv {
            if b.shape() != [geom.c_out] {
                return Err(Error::dim(format!(
                    "conv2d bias shape {:?} does not match {} output channels",
                    b.shape(),
                    geom.c_out
                )));
            }
        }
        let out = kernels::conv2d_forward(&geom, xv.data(), wv.data(), bv.as_ref().map(|b| b.data()));
        let out = Tensor::new(geom.out_shape(xv.rank()), out)?;
        let mut parents = vec![x, w];
        parents.extend(bias);
        let need = self.needs(&parents);
        self.push("conv2d", Rc::new(out), &parents, move |g| {
            let (dx, dw, db) = kernels::conv2d_backward(
                &geom,
                xv.data(),
                wv.data(),
                g.data(),
                need[0],
                need[1],
                need.get(2).copied().unwrap_or(false),
            );
            let mut grads = vec![
                dx.map(|d| Tensor::new(xv.shape().to_vec(), d).expect("dx")),
                dw.map(|d| Tensor::new(wv.shape().to_vec(), d).expect("dw")),
            ];
            if need.len() == 3 {
                grads.push(db.map(|d| Tensor::new(vec![geom.c_out], d).expect("db")));
            }
            grads
        })
    }

    /// Transposed convolution with kernel size equal to `stride`; weight is IOKK.
    pub fn conv_transpose2d(&self, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let geom = TConvGeom::new(xv.shape(), wv.shape(), stride)?;
        let bv = bias.map(|b| self.value(b));
        if let Some(b) = &bv {
            if b.shape() != [geom.c_out] {
                return Err(Error::dim(format!(
                    "transposed_conv2d bias shape {:?} does not match {} output channels",
                    b.shape(),
                    geom.c_out
                )));
            }
        }
        let out = kernels::tconv2d_forward(&geom, xv.data(), wv.data(), bv.as_ref().map(|b| b.data()));
        let out = Tensor::new(geom.out_shape(xv.rank()), out)?;
        let mut parents = vec![x, w];
        parents.extend(bias);
        let need = self.needs(&parents);
        self.push("conv_transpose2d", Rc::new(out), &parents, move |g| {
            let (dx, dw, db) = kernels::tconv2d_backward(
                &geom,
                xv.data(),
                wv.data(),
                g.data(),
                need[0],
                need[1],
                need.get(2).copied().unwrap_or(false),
            );
            let mut grads = vec![
                dx.map(|d| Tensor::new(xv.shape().to_vec(), d).expect("dx")),
                dw.map(|d| Tensor::new(wv.shape().to_vec(), d).expect("dw")),
            ];
            if need.len() == 3 {
                grads.push(db.map(|d| Tensor::new(vec![geom.c_out], d).expect("db")));
            }
            grads
        })
    }

    pub fn max_pool2d(&self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let (shape, out, arg) = kernels::max_pool2d_forward(xv.shape(), xv.data(), window, stride)?;
        let in_shape = xv.shape().to_vec();
        drop(xv);
        self.push("max_pool2d", Rc::new(Tensor::new(shape, out)?), &[x], move |g| {
            let mut d = Tensor::zeros(&in_shape);
            for (&k, &gv) in arg.iter().zip(g.data()) {
                d.data_mut()[k] += gv;
            }
            vec![Some(d)]
        })
    }

    /// Layer normalization over `axis` with per-feature affine `gamma`/`beta`
    /// of length `shape[axis]`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, axis: usize, eps: T) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        if axis >= xv.rank() || xv.shape()[axis] == 0 {
            return Err(Error::dim(format!(
                "layer_norm axis {axis} invalid for shape {:?}",
                xv.shape()
            )));
        }
        let n = xv.shape()[axis];
        if gv.shape() != [n] || bv.shape() != [n] {
            return Err(Error::dim(format!(
                "layer_norm affine shapes {:?}/{:?} do not match normalized size {n}",
                gv.shape(),
                bv.shape()
            )));
        }
        let (y, xhat, rstd) =
            kernels::layer_norm_forward(xv.shape(), xv.data(), axis, gv.data(), bv.data(), eps);
        let shape = xv.shape().to_vec();
        drop(xv);
        drop(bv);
        self.push("layer_norm", Rc::new(Tensor::new(shape.clone(), y)?), &[x, gamma, beta], move |g| {
            let (dx, dg, db) = kernels::layer_norm_backward(&shape, axis, &xhat, &rstd, gv.data(), g.data());
            vec![
                Some(Tensor::new(shape.clone(), dx).expect("dx")),
                Some(Tensor::new(vec![n], dg).expect("dgamma")),
                Some(Tensor::new(vec![n], db).expect("dbeta")),
            ]
        })
    }

    /// Matrix product of `m×k` and `k×n` operands.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (av.shape(), bv.shape()) else {
            return Err(Error::dim(format!(
                "matmul needs matrices, got {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        };
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dims differ: {:?} · {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), av.data(), k as isize, 1, bv.data(), n as isize, 1, T::zero(), &mut out, n as isize, 1);
        let need = self.needs(&[a, b]);
        self.push("matmul", Rc::new(Tensor::new(vec![m, n], out)?), &[a, b], move |g| {
            let ga = need[0].then(|| {
                // dA = G · Bᵀ
                let mut d = vec![T::zero(); m * k];
                T::gemm(m, n, k, T::one(), g.data(), n as isize, 1, bv.data(), 1, n as isize, T::zero(), &mut d, k as isize, 1);
                Tensor::new(vec![m, k], d).expect("da")
            });
            let gb = need[1].then(|| {
                // dB = Aᵀ · G
                let mut d = vec![T::zero(); k * n];
                T::gemm(k, m, n, T::one(), av.data(), 1, k as isize, g.data(), n as isize, 1, T::zero(), &mut d, n as isize, 1);
                Tensor::new(vec![k, n], d).expect("db")
            });
            vec![ga, gb]
        })
    }

    /// Affine map over the last axis: `x · Wᵀ + b` with `W` of shape `out×in`.
    pub fn linear(&self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let d_in = *xv.shape().last().ok_or_else(|| Error::dim("linear on rank-0 tensor"))?;
        let &[d_out, w_in] = wv.shape() else {
            return Err(Error::dim(format!("linear weight must be a matrix, got {:?}", wv.shape())));
        };
        if w_in != d_in {
            return Err(Error::dim(format!(
                "linear: input {:?} last dim != weight {:?} input dim",
                xv.shape(),
                wv.shape()
            )));
        }
        let rows = xv.numel() / d_in.max(1);
        let bv = bias.map(|b| self.value(b));
        if let Some(b) = &bv {
            if b.shape() != [d_out] {
                return Err(Error::dim(format!("linear bias {:?} != [{d_out}]", b.shape())));
            }
        }
        let mut out = vec![T::zero(); rows * d_out];
        if let Some(b) = &bv {
            for row in out.chunks_mut(d_out) {
                row.copy_from_slice(b.data());
            }
        }
        T::gemm(rows, d_in, d_out, T::one(), xv.data(), d_in as isize, 1, wv.data(), 1, d_in as isize, T::one(), &mut out, d_out as isize, 1);
        let mut out_shape = xv.shape().to_vec();
        *out_shape.last_mut().expect("rank >= 1") = d_out;
        let mut parents = vec![x, w];
        parents.extend(bias);
        let need = self.needs(&parents);
        self.push("linear", Rc::new(Tensor::new(out_shape, out)?), &parents, move |g| {
            let gx = need[0].then(|| {
                let mut d = vec![T::zero(); rows * d_in];
                T::gemm(rows, d_out, d_in, T::one(), g.data(), d_out as isize, 1, wv.data(), d_in as isize, 1, T::zero(), &mut d, d_in as isize, 1);
                Tensor::new(xv.shape().to_vec(), d).expect("dx")
            });
            let gw = need[1].then(|| {
                let mut d = vec![T::zero(); d_out * d_in];
                T::gemm(d_out, rows, d_in, T::one(), g.data(), 1, d_out as isize, xv.data(), d_in as isize, 1, T::zero(), &mut d, d_in as isize, 1);
                Tensor::new(vec![d_out, d_in], d).expect("dw")
            });
            let mut grads = vec![gx, gw];
            if need.len() == 3 {
                grads.push(need[2].then(|| {
                    let mut d = vec![T::zero(); d_out];
                    for row in g.data().chunks(d_out) {
                        for (a, &v) in d.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::new(vec![d_out], d).expect("db")
                }));
            }
            grads
        })
    }

    /// Triangular soft assignment of every element to `bins` uniform centers
    /// spanning `[lo, hi]`; appends a trailing axis of length `bins`.
    pub fn soft_quantize(&self, x: Var, lo: T, hi: T, bins: usize) -> Result<Var> {
        if !(lo < hi) || bins < 2 {
            return Err(Error::Domain(format!(
                "soft_quantize needs lo < hi and at least 2 bins (lo={lo}, hi={hi}, bins={bins})"
            )));
        }
        let xv = self.value(x);
        let step = (hi - lo) / T::lit((bins - 1) as f64);
        let mut out = vec![T::zero(); xv.numel() * bins];
        // per element: lower bin, its weight's slope sign marker
        let mut lower = Vec::with_capacity(xv.numel());
        for (i, &v) in xv.data().iter().enumerate() {
            let c = v.max(lo).min(hi);
            let pos = (c - lo) / step;
            let k = pos.floor().to_usize().unwrap_or(0).min(bins - 2);
            let frac = pos - T::lit(k as f64);
            out[i * bins + k] = T::one() - frac;
            out[i * bins + k + 1] = frac;
            lower.push(k);
        }
        let mut shape = xv.shape().to_vec();
        shape.push(bins);
        self.push("soft_quantize", Rc::new(Tensor::new(shape, out)?), &[x], move |g| {
            let inv = T::one() / step;
            let mut d = Tensor::zeros(xv.shape());
            for (i, (&v, dv)) in xv.data().iter().zip(d.data_mut()).enumerate() {
                if v < lo || v > hi {
                    continue;
                }
                let k = lower[i];
                *dv = (g.data()[i * bins + k + 1] - g.data()[i * bins + k]) * inv;
            }
            vec![Some(d)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_quantize_weights() {
        let t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(&[3], &[0.0, 0.5, 10.0]).unwrap());
        let q = t.value(t.soft_quantize(x, 0.0, 1.0, 3).unwrap());
        assert_eq!(&q.data()[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&q.data()[3..6], &[0.0, 1.0, 0.0]);
        assert_eq!(&q.data()[6..9], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn linear_identity_and_bias() {
        let t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let eye = t.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let y = t.linear(x, eye, None).unwrap();
        assert_eq!(*t.value(y), *t.value(x));
        let zw = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::from_f64(&[2], &[4.0, -1.0]).unwrap());
        let y = t.value(t.linear(x, zw, Some(b)).unwrap());
        assert_eq!(y.data(), &[4.0, -1.0, 4.0, -1.0]);
    }
}
