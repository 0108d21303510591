//! Differentiable spectral operations. A complex tensor of shape `S` is
//! stored as a real tensor of shape `[2, S...]` (real plane first).

use std::rc::Rc;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::spectral::{fft2_planes, phase_of, plane_dims};
use crate::tensor::{Real, Tensor};

fn split_complex<T: Real>(z: &Tensor<T>) -> Result<(Vec<usize>, &[T], &[T])> {
    match z.shape() {
        [2, rest @ ..] if !rest.is_empty() => {
            let half = z.numel() / 2;
            Ok((rest.to_vec(), &z.data()[..half], &z.data()[half..]))
        }
        s => Err(Error::dim(format!(
            "complex tensors have a leading axis of 2, got {s:?}"
        ))),
    }
}

fn join_complex<T: Real>(shape: &[usize], re: Vec<T>, im: Vec<T>) -> Tensor<T> {
    let mut full = vec![2];
    full.extend_from_slice(shape);
    let mut data = re;
    data.extend(im);
    Tensor::new(full, data).expect("complex shape")
}

fn guarded_inv_sq<T: Real>(a2: T) -> T {
    if a2 > T::min_positive_value().sqrt() {
        T::one() / a2
    } else {
        T::zero()
    }
}

impl<T: Real> Tape<T> {
    /// Unnormalized forward 2D FFT of a real tensor over its last two axes.
    pub fn fft2d(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let (h, w) = plane_dims(&shape)?;
        let mut re = xv.data().to_vec();
        let mut im = vec![T::zero(); re.len()];
        drop(xv);
        fft2_planes(&mut re, &mut im, h, w, false);
        let out = join_complex(&shape, re, im);
        self.push("fft2d", Rc::new(out), &[x], move |g| {
            let half = g.numel() / 2;
            let mut gr = g.data()[..half].to_vec();
            let mut gi = g.data()[half..].to_vec();
            // adjoint of the DFT matrix is its conjugate
            fft2_planes(&mut gr, &mut gi, h, w, true);
            vec![Some(Tensor::new(shape.clone(), gr).expect("fft grad"))]
        })
    }

    /// Inverse 2D FFT (with `1/(H·W)`) of a complex tensor.
    pub fn ifft2d(&self, z: Var) -> Result<Var> {
        let zv = self.value(z);
        let (shape, re, im) = split_complex(&zv)?;
        let (h, w) = plane_dims(&shape)?;
        let s = T::lit(1.0 / (h * w) as f64);
        let mut re: Vec<T> = re.iter().map(|&v| v * s).collect();
        let mut im: Vec<T> = im.iter().map(|&v| v * s).collect();
        drop(zv);
        fft2_planes(&mut re, &mut im, h, w, true);
        let out = join_complex(&shape, re, im);
        self.push("ifft2d", Rc::new(out), &[z], move |g| {
            let half = g.numel() / 2;
            let mut gr: Vec<T> = g.data()[..half].iter().map(|&v| v * s).collect();
            let mut gi: Vec<T> = g.data()[half..].iter().map(|&v| v * s).collect();
            fft2_planes(&mut gr, &mut gi, h, w, false);
            vec![Some(join_complex(&shape, gr, gi))]
        })
    }

    /// Real plane of a complex tensor.
    pub fn complex_re(&self, z: Var) -> Result<Var> {
        let shape = self.shape(z);
        if shape.first() != Some(&2) || shape.len() < 2 {
            return Err(Error::dim(format!("complex_re of non-complex shape {shape:?}")));
        }
        let part = self.narrow(z, 0, 0, 1)?;
        self.reshape(part, &shape[1..])
    }

    /// Imaginary plane of a complex tensor.
    pub fn complex_im(&self, z: Var) -> Result<Var> {
        let shape = self.shape(z);
        if shape.first() != Some(&2) || shape.len() < 2 {
            return Err(Error::dim(format!("complex_im of non-complex shape {shape:?}")));
        }
        let part = self.narrow(z, 0, 1, 1)?;
        self.reshape(part, &shape[1..])
    }

    /// Modulus `√(re² + im²)`; the gradient at the origin is taken as zero.
    pub fn complex_abs(&self, z: Var) -> Result<Var> {
        let zv = self.value(z);
        let (shape, re, im) = split_complex(&zv)?;
        let amp: Vec<T> = re.iter().zip(im).map(|(&r, &i)| r.hypot(i)).collect();
        let amp = Rc::new(Tensor::new(shape, amp)?);
        let ac = Rc::clone(&amp);
        self.push("complex_abs", amp, &[z], move |g| {
            let (_, re, im) = split_complex(&zv).expect("complex");
            let mut gr = Vec::with_capacity(re.len());
            let mut gi = Vec::with_capacity(re.len());
            for ((&r, &i), (&a, &gv)) in re.iter().zip(im).zip(ac.data().iter().zip(g.data())) {
                let inv = if a > T::zero() { gv / a } else { T::zero() };
                gr.push(r * inv);
                gi.push(i * inv);
            }
            vec![Some(join_complex(ac.shape(), gr, gi))]
        })
    }

    /// Argument in `(−π, π]`; zero at the origin, where the gradient is zero.
    pub fn complex_arg(&self, z: Var) -> Result<Var> {
        let zv = self.value(z);
        let (shape, re, im) = split_complex(&zv)?;
        let ph: Vec<T> = re
            .iter()
            .zip(im)
            .map(|(&r, &i)| if r == T::zero() && i == T::zero() { T::zero() } else { phase_of(r, i) })
            .collect();
        let out = Tensor::new(shape.clone(), ph)?;
        self.push("complex_arg", Rc::new(out), &[z], move |g| {
            let (_, re, im) = split_complex(&zv).expect("complex");
            let mut gr = Vec::with_capacity(re.len());
            let mut gi = Vec::with_capacity(re.len());
            for ((&r, &i), &gv) in re.iter().zip(im).zip(g.data()) {
                let inv = guarded_inv_sq(r * r + i * i) * gv;
                gr.push(-i * inv);
                gi.push(r * inv);
            }
            vec![Some(join_complex(&shape, gr, gi))]
        })
    }

    /// Complex tensor `a·(cos p + i sin p)`.
    pub fn polar(&self, amplitude: Var, phase: Var) -> Result<Var> {
        let (av, pv) = (self.value(amplitude), self.value(phase));
        if av.shape() != pv.shape() {
            return Err(Error::dim(format!(
                "polar: amplitude {:?} and phase {:?} differ",
                av.shape(),
                pv.shape()
            )));
        }
        let re: Vec<T> = av.data().iter().zip(pv.data()).map(|(&a, &p)| a * p.cos()).collect();
        let im: Vec<T> = av.data().iter().zip(pv.data()).map(|(&a, &p)| a * p.sin()).collect();
        let out = join_complex(av.shape(), re, im);
        self.push("polar", Rc::new(out), &[amplitude, phase], move |g| {
            let half = g.numel() / 2;
            let (gr, gi) = g.data().split_at(half);
            let mut da = Vec::with_capacity(half);
            let mut dp = Vec::with_capacity(half);
            for (k, (&a, &p)) in av.data().iter().zip(pv.data()).enumerate() {
                let (s, c) = p.sin_cos();
                da.push(gr[k] * c + gi[k] * s);
                dp.push(a * (gi[k] * c - gr[k] * s));
            }
            vec![
                Some(Tensor::new(av.shape().to_vec(), da).expect("da")),
                Some(Tensor::new(pv.shape().to_vec(), dp).expect("dp")),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_then_ifft_recovers_input() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_fn(&[2, 4, 8], |i| ((i * 7) % 5) as f64 - 2.0));
        let z = t.fft2d(x).unwrap();
        let y = t.ifft2d(z).unwrap();
        let re = t.complex_re(y).unwrap();
        let im = t.complex_im(y).unwrap();
        assert!(t.value(re).max_abs_diff(&t.value(x)) < 1e-12);
        assert!(t.value(im).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn arg_at_origin_is_zero() {
        let t = Tape::<f64>::new();
        let z = t.leaf(Tensor::from_f64(&[2, 2], &[0.0, -1.0, -0.0, 0.0]).unwrap());
        let p = t.complex_arg(z).unwrap();
        assert_eq!(t.value(p).data()[0], 0.0);
        assert!((t.value(p).data()[1] - std::f64::consts::PI).abs() < 1e-15);
    }
}
