//! sRGB → CIELAB → LCh conversions and soft histogram quantization, both as
//! plain functions and as recorded tape operations.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Linear sRGB → XYZ (D65).
pub const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// D65 reference white, taken as the row sums of [`SRGB_TO_XYZ`] so that
/// neutral grays map to `a = b = 0`.
pub const WHITE: [f64; 3] = [0.9504700, 1.0000001, 1.0888300];

pub const BINS: usize = 64;
pub const L_RANGE: (f64, f64) = (0.0, 100.0);
pub const AB_RANGE: (f64, f64) = (-110.0, 110.0);

const DELTA: f64 = 6.0 / 29.0;

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_to_linear_grad(c: f64) -> f64 {
    if c <= 0.04045 {
        1.0 / 12.92
    } else {
        2.4 / 1.055 * ((c + 0.055) / 1.055).powf(1.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_grad(t: f64, y: f64) -> f64 {
    if t > DELTA.powi(3) {
        1.0 / (3.0 * y * y)
    } else {
        1.0 / (3.0 * DELTA * DELTA)
    }
}

/// One sRGB pixel in `[0, 1]` to `(L, a, b)`.
pub fn srgb_to_lab_px(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let f: Vec<f64> = (0..3)
        .map(|r| {
            let v: f64 = (0..3).map(|c| SRGB_TO_XYZ[r][c] * lin[c]).sum();
            lab_f(v / WHITE[r])
        })
        .collect();
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// Hue convention: 0 when both opponent channels vanish.
pub fn hue(a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    let h = b.atan2(a);
    if h == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabImage<T: Real = f32> {
    pub l: Tensor<T>,
    pub a: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LchImage<T: Real = f32> {
    pub l: Tensor<T>,
    pub c: Tensor<T>,
    pub h: Tensor<T>,
}

fn split_image<T: Real>(img: &Tensor<T>) -> Result<(usize, usize)> {
    match img.shape() {
        &[3, h, w] => Ok((h, w)),
        s => Err(Error::dim(format!("expected a 3×H×W image, got {s:?}"))),
    }
}

pub fn check_unit_range<T: Real>(img: &Tensor<T>) -> Result<()> {
    if let Some(v) = img.data().iter().find(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0)) {
        return Err(Error::Domain(format!("image value {v} is outside [0, 1]")));
    }
    Ok(())
}

pub fn rgb_to_lab<T: Real>(img: &Tensor<T>) -> Result<LabImage<T>> {
    let (h, w) = split_image(img)?;
    check_unit_range(img)?;
    let n = h * w;
    let d = img.data();
    let mut planes = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        let lab = srgb_to_lab_px([d[i].as_f64(), d[n + i].as_f64(), d[2 * n + i].as_f64()]);
        for (p, v) in planes.iter_mut().zip(lab) {
            p.push(T::lit(v));
        }
    }
    let [l, a, b] = planes.map(|p| Tensor::new(vec![h, w], p).expect("plane size"));
    Ok(LabImage { l, a, b })
}

pub fn lab_to_lch<T: Real>(lab: &LabImage<T>) -> LchImage<T> {
    let c = lab.a.zip_map(&lab.b, |a, b| a.hypot(b)).expect("matching planes");
    let h = lab
        .a
        .zip_map(&lab.b, |a, b| T::lit(hue(a.as_f64(), b.as_f64())))
        .expect("matching planes");
    LchImage {
        l: lab.l.clone(),
        c,
        h,
    }
}

/// Per-pixel triangular assignment to uniform bin centers.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftHistogram<T: Real = f32> {
    pub centers: Vec<f64>,
    /// `[..., bins]`: the source shape with a trailing bin axis.
    pub weights: Tensor<T>,
}

impl<T: Real> SoftHistogram<T> {
    /// `Σ weight·center` per pixel.
    pub fn reconstruct(&self) -> Vec<f64> {
        self.weights
            .data()
            .chunks(self.centers.len())
            .map(|w| w.iter().zip(&self.centers).map(|(w, c)| w.as_f64() * c).sum())
            .collect()
    }
}

pub fn bin_centers(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..bins).map(|k| lo + (hi - lo) * k as f64 / (bins - 1) as f64).collect()
}

pub fn quantize_soft<T: Real>(channel: &Tensor<T>, range: (f64, f64)) -> Result<SoftHistogram<T>> {
    let tape = Tape::new();
    let x = tape.constant(channel.clone());
    let q = tape.soft_quantize(x, T::lit(range.0), T::lit(range.1), BINS)?;
    Ok(SoftHistogram {
        centers: bin_centers(range.0, range.1, BINS),
        weights: (*tape.value(q)).clone(),
    })
}

/// Recorded conversion of a `3×H×W` sRGB image to `(L, a, b)` planes of
/// shape `H×W`.
pub fn lab_planes<T: Real>(t: &Tape<T>, img: Var) -> Result<[Var; 3]> {
    let shape = t.shape(img);
    let &[3, h, w] = shape.as_slice() else {
        return Err(Error::dim(format!("expected a 3×H×W image, got {shape:?}")));
    };
    let lin = t.unary(
        "srgb_linear",
        img,
        |x| T::lit(srgb_to_linear(x.as_f64())),
        |x, _| T::lit(srgb_to_linear_grad(x.as_f64())),
    )?;
    let m = Tensor::from_fn(&[3, 3], |i| {
        T::lit(SRGB_TO_XYZ[i / 3][i % 3] / WHITE[i / 3])
    });
    let xyz = t.matmul(t.constant(m), t.reshape(lin, &[3, h * w])?)?;
    let f = t.unary(
        "lab_f",
        xyz,
        |v| T::lit(lab_f(v.as_f64())),
        |v, y| T::lit(lab_f_grad(v.as_f64(), y.as_f64())),
    )?;
    let row = |i| -> Result<Var> { t.reshape(t.narrow(f, 0, i, 1)?, &[h, w]) };
    let (fx, fy, fz) = (row(0)?, row(1)?, row(2)?);
    let l = t.add_scalar(t.mul_scalar(fy, T::lit(116.0))?, T::lit(-16.0))?;
    let a = t.mul_scalar(t.sub(fx, fy)?, T::lit(500.0))?;
    let b = t.mul_scalar(t.sub(fy, fz)?, T::lit(200.0))?;
    Ok([l, a, b])
}

/// Recorded chroma and hue from `a`, `b` planes.
pub fn chroma_hue<T: Real>(t: &Tape<T>, a: Var, b: Var) -> Result<(Var, Var)> {
    let mut s = vec![1];
    s.extend(t.shape(a));
    let z = t.concat(&[t.reshape(a, &s)?, t.reshape(b, &s)?], 0)?;
    Ok((t.complex_abs(z)?, t.complex_arg(z)?))
}
