//! 2D discrete Fourier transforms and polar (amplitude/phase) decomposition.
//!
//! Convention: the forward transform is unnormalized,
//! `X[u,v] = Σ x[h,w]·exp(−2πi(uh/H + vw/W))`, and the inverse carries the
//! full `1/(H·W)` factor. Power-of-two sizes use an iterative radix-2
//! transform; other sizes fall back to a direct DFT.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Complex-valued grid stored as separate real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid<T = f32> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

/// Polar form of a [`ComplexGrid`]. Phases are canonical, in `(−π, π]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralPair<T = f32> {
    pub amplitude: Tensor<T>,
    pub phase: Tensor<T>,
}

struct Plan {
    n: usize,
    radix2: bool,
    // exp(−2πik/n) for k in 0..n
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Plan {
    fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        Plan {
            n,
            radix2: n.is_power_of_two(),
            cos,
            sin,
        }
    }

    /// In-place 1D transform of `n` elements spaced `stride` apart.
    fn run<T: Real>(&self, re: &mut [T], im: &mut [T], inverse: bool, scratch: &mut Scratch<T>) {
        let n = self.n;
        if n == 1 {
            return;
        }
        let sign = if inverse { -1.0 } else { 1.0 };
        if !self.radix2 {
            scratch.re.clear();
            scratch.im.clear();
            for k in 0..n {
                let (mut sr, mut si) = (T::zero(), T::zero());
                for j in 0..n {
                    let t = (k * j) % n;
                    let c = T::lit(self.cos[t]);
                    let s = T::lit(sign * self.sin[t]);
                    sr += re[j] * c - im[j] * s;
                    si += re[j] * s + im[j] * c;
                }
                scratch.re.push(sr);
                scratch.im.push(si);
            }
            re.copy_from_slice(&scratch.re);
            im.copy_from_slice(&scratch.im);
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let t = k * step;
                    let wr = T::lit(self.cos[t]);
                    let wi = T::lit(sign * self.sin[t]);
                    let (a, b) = (start + k, start + k + half);
                    // k == 0 multiplies by exactly 1 so self-conjugate bins of
                    // real input stay exactly real.
                    let (br, bi) = if k == 0 {
                        (re[b], im[b])
                    } else {
                        (re[b] * wr - im[b] * wi, re[b] * wi + im[b] * wr)
                    };
                    re[b] = re[a] - br;
                    im[b] = im[a] - bi;
                    re[a] += br;
                    im[a] += bi;
                }
            }
            len *= 2;
        }
    }
}

struct Scratch<T> {
    re: Vec<T>,
    im: Vec<T>,
}

/// Unnormalized 2D transform of every trailing `h×w` plane, in place.
/// `inverse` flips the exponent sign but applies no scaling.
pub fn fft2_planes<T: Real>(re: &mut [T], im: &mut [T], h: usize, w: usize, inverse: bool) {
    assert_eq!(re.len(), im.len());
    let plane = h * w;
    if plane == 0 {
        return;
    }
    assert_eq!(re.len() % plane, 0);
    let row_plan = Plan::new(w);
    let col_plan = Plan::new(h);
    let mut scratch = Scratch {
        re: Vec::with_capacity(h.max(w)),
        im: Vec::with_capacity(h.max(w)),
    };
    let mut col_re = vec![T::zero(); h];
    let mut col_im = vec![T::zero(); h];
    for (pr, pi) in re.chunks_mut(plane).zip(im.chunks_mut(plane)) {
        for (rr, ri) in pr.chunks_mut(w).zip(pi.chunks_mut(w)) {
            row_plan.run(rr, ri, inverse, &mut scratch);
        }
        for x in 0..w {
            for y in 0..h {
                col_re[y] = pr[y * w + x];
                col_im[y] = pi[y * w + x];
            }
            col_plan.run(&mut col_re, &mut col_im, inverse, &mut scratch);
            for y in 0..h {
                pr[y * w + x] = col_re[y];
                pi[y * w + x] = col_im[y];
            }
        }
    }
}

pub(crate) fn plane_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [.., h, w] if *h >= 1 && *w >= 1 => Ok((*h, *w)),
        _ => Err(Error::dim(format!(
            "2D transform needs a tensor of rank >= 2, got {shape:?}"
        ))),
    }
}

/// Forward 2D FFT over the last two axes of a real tensor.
pub fn fft2d<T: Real>(x: &Tensor<T>) -> Result<ComplexGrid<T>> {
    let (h, w) = plane_dims(x.shape())?;
    let mut re = x.clone();
    let mut im = Tensor::zeros(x.shape());
    fft2_planes(re.data_mut(), im.data_mut(), h, w, false);
    Ok(ComplexGrid { re, im })
}

/// Inverse 2D FFT with `1/(H·W)` normalization.
pub fn ifft2d<T: Real>(z: &ComplexGrid<T>) -> Result<ComplexGrid<T>> {
    z.re.expect_shape(z.im.shape())?;
    let (h, w) = plane_dims(z.re.shape())?;
    let mut re = z.re.clone();
    let mut im = z.im.clone();
    fft2_planes(re.data_mut(), im.data_mut(), h, w, true);
    let s = T::lit(1.0 / (h * w) as f64);
    Ok(ComplexGrid {
        re: re.scale(s),
        im: im.scale(s),
    })
}

/// `atan2(im, re)` mapped into `(−π, π]`.
pub fn phase_of<T: Real>(re: T, im: T) -> T {
    let p = im.atan2(re);
    if p <= -T::PI() {
        p + T::lit(2.0 * PI)
    } else {
        p
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_phase<T: Real>(p: T) -> T {
    let two_pi = T::lit(2.0 * PI);
    let w = p - two_pi * ((p - T::PI()) / two_pi).ceil();
    if w <= -T::PI() {
        w + two_pi
    } else if w > T::PI() {
        w - two_pi
    } else {
        w
    }
}

pub fn amp_phase<T: Real>(z: &ComplexGrid<T>) -> Result<SpectralPair<T>> {
    Ok(SpectralPair {
        amplitude: z.re.zip_map(&z.im, |r, i| r.hypot(i))?,
        phase: z.re.zip_map(&z.im, phase_of)?,
    })
}

pub fn compose<T: Real>(pair: &SpectralPair<T>) -> Result<ComplexGrid<T>> {
    pair.amplitude.expect_shape(pair.phase.shape())?;
    if let Some(a) = pair.amplitude.data().iter().find(|a| **a < T::zero()) {
        return Err(Error::Domain(format!("negative amplitude {a}")));
    }
    Ok(ComplexGrid {
        re: pair.amplitude.zip_map(&pair.phase, |a, p| a * p.cos())?,
        im: pair.amplitude.zip_map(&pair.phase, |a, p| a * p.sin())?,
    })
}

/// Shifts the zero-frequency bin of every plane to the center, for display.
pub fn fftshift<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = plane_dims(x.shape())?;
    let mut out = x.clone();
    let src = x.data();
    for (p, dst) in out.data_mut().chunks_mut(h * w).enumerate() {
        for y in 0..h {
            for xq in 0..w {
                dst[((y + h / 2) % h) * w + (xq + w / 2) % w] = src[p * h * w + y * w + xq];
            }
        }
    }
    Ok(out)
}
