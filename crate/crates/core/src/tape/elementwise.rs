use std::rc::Rc;

use super::{broadcast_binary, reduce_to, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, axis_split};
use crate::spectral::wrap_phase;
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = broadcast_binary(&av, &bv, |x, y| x + y)?;
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        self.push("add", Rc::new(out), &[a, b], move |g| {
            vec![Some(reduce_to(g, &sa)), Some(reduce_to(g, &sb))]
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = broadcast_binary(&av, &bv, |x, y| x - y)?;
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        self.push("sub", Rc::new(out), &[a, b], move |g| {
            vec![
                Some(reduce_to(g, &sa)),
                Some(reduce_to(&g.scale(-T::one()), &sb)),
            ]
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = broadcast_binary(&av, &bv, |x, y| x * y)?;
        let need = self.needs(&[a, b]);
        self.push("mul", Rc::new(out), &[a, b], move |g| {
            let ga = need[0].then(|| {
                reduce_to(&broadcast_binary(g, &bv, |x, y| x * y).expect("bcast"), av.shape())
            });
            let gb = need[1].then(|| {
                reduce_to(&broadcast_binary(g, &av, |x, y| x * y).expect("bcast"), bv.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = Rc::new(broadcast_binary(&av, &bv, |x, y| x / y)?);
        let need = self.needs(&[a, b]);
        let y = Rc::clone(&out);
        self.push("div", out, &[a, b], move |g| {
            let ga = need[0].then(|| {
                reduce_to(&broadcast_binary(g, &bv, |x, d| x / d).expect("bcast"), av.shape())
            });
            let gb = need[1].then(|| {
                let gy = g.zip_map(&y, |gi, yi| -gi * yi).expect("same shape");
                reduce_to(&broadcast_binary(&gy, &bv, |x, d| x / d).expect("bcast"), bv.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn mul_scalar(&self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).scale(s);
        self.push("mul_scalar", Rc::new(out), &[a], move |g| vec![Some(g.scale(s))])
    }

    pub fn add_scalar(&self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        self.push("add_scalar", Rc::new(out), &[a], move |g| vec![Some(g.clone())])
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.mul_scalar(a, -T::one())
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn unary(
        &self,
        op: &'static str,
        a: Var,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var> {
        let x = self.value(a);
        let y = Rc::new(x.map(f));
        let yc = Rc::clone(&y);
        self.push(op, y, &[a], move |g| {
            let mut d = g.clone();
            for ((gi, &xi), &yi) in d.data_mut().iter_mut().zip(x.data()).zip(yc.data()) {
                *gi = *gi * df(xi, yi);
            }
            vec![Some(d)]
        })
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(
            "relu",
            a,
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn gelu(&self, a: Var) -> Result<Var> {
        self.unary("gelu", a, kernels::gelu, |x, _| kernels::gelu_grad(x))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, kernels::sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary("exp", a, T::exp, |_, y| y)
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, |x, _| x + x)
    }

    pub fn abs(&self, a: Var) -> Result<Var> {
        self.unary("abs", a, T::abs, |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn cos(&self, a: Var) -> Result<Var> {
        self.unary("cos", a, T::cos, |x, _| -x.sin())
    }

    pub fn sin(&self, a: Var) -> Result<Var> {
        self.unary("sin", a, T::sin, |x, _| x.cos())
    }

    /// `sqrt(x + eps)`, smooth at zero.
    pub fn sqrt_eps(&self, a: Var, eps: T) -> Result<Var> {
        self.unary(
            "sqrt",
            a,
            move |x| (x + eps).sqrt(),
            |_, y| T::lit(0.5) / y,
        )
    }

    /// `ln(max(x, floor))`; gradient is zero where the floor is active.
    pub fn log_floor(&self, a: Var, floor: T) -> Result<Var> {
        self.unary(
            "log",
            a,
            move |x| x.max(floor).ln(),
            move |x, _| if x > floor { T::one() / x } else { T::zero() },
        )
    }

    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Result<Var> {
        self.unary(
            "clamp",
            a,
            move |x| x.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }

    /// Wraps angles into `(−π, π]`; derivative one almost everywhere.
    pub fn wrap_phase(&self, a: Var) -> Result<Var> {
        self.unary("wrap_phase", a, wrap_phase, |_, _| T::one())
    }

    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let s: T = x.data().iter().copied().sum();
        let shape = x.shape().to_vec();
        self.push("sum_all", Rc::new(Tensor::scalar(s)), &[a], move |g| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean_all(&self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum_all(a)?;
        self.mul_scalar(s, T::lit(1.0 / n as f64))
    }

    fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Result<Vec<usize>> {
        if axis >= shape.len() {
            return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
        }
        let mut out = shape.to_vec();
        if keepdim {
            out[axis] = 1;
        } else {
            out.remove(axis);
        }
        Ok(out)
    }

    pub fn sum_axis(&self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let x = self.value(a);
        let out_shape = Self::reduced_shape(x.shape(), axis, keepdim)?;
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        let xd = x.data();
        for o in 0..outer {
            for j in 0..n {
                let row = &xd[(o * n + j) * inner..][..inner];
                for (acc, &v) in out[o * inner..][..inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let in_shape = x.shape().to_vec();
        self.push("sum_axis", Rc::new(Tensor::new(out_shape, out)?), &[a], move |g| {
            let mut d = Tensor::zeros(&in_shape);
            let gd = g.data();
            let dd = d.data_mut();
            for o in 0..outer {
                for j in 0..n {
                    dd[(o * n + j) * inner..][..inner].copy_from_slice(&gd[o * inner..][..inner]);
                }
            }
            vec![Some(d)]
        })
    }

    pub fn mean_axis(&self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let n = self.shape(a).get(axis).copied().unwrap_or(1);
        let s = self.sum_axis(a, axis, keepdim)?;
        self.mul_scalar(s, T::lit(1.0 / n as f64))
    }

    /// Maximum along `axis`; ties resolve to the first occurrence.
    pub fn max_axis(&self, a: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let x = self.value(a);
        let out_shape = Self::reduced_shape(x.shape(), axis, keepdim)?;
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for j in 1..n {
                    let k = (o * n + j) * inner + i;
                    if xd[k] > xd[best] {
                        best = k;
                    }
                }
                out[o * inner + i] = xd[best];
                arg[o * inner + i] = best;
            }
        }
        let in_shape = x.shape().to_vec();
        self.push("max_axis", Rc::new(Tensor::new(out_shape, out)?), &[a], move |g| {
            let mut d = Tensor::zeros(&in_shape);
            for (&k, &gv) in arg.iter().zip(g.data()) {
                d.data_mut()[k] += gv;
            }
            vec![Some(d)]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = *x
            .shape()
            .last()
            .ok_or_else(|| Error::dim("softmax of a rank-0 tensor"))?;
        let y = Rc::new(Tensor::new(x.shape().to_vec(), kernels::softmax_rows(x.data(), n))?);
        let yc = Rc::clone(&y);
        self.push("softmax", y, &[a], move |g| {
            let mut d = g.clone();
            for (drow, yrow) in d.data_mut().chunks_mut(n).zip(yc.data().chunks(n)) {
                let dot: T = drow.iter().zip(yrow).map(|(&gi, &yi)| gi * yi).sum();
                for (gi, &yi) in drow.iter_mut().zip(yrow) {
                    *gi = yi * (*gi - dot);
                }
            }
            vec![Some(d)]
        })
    }
}
