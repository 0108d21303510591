//! Image quality metrics: PSNR, SSIM, CIE76 ΔE and UCIQE.

use crate::color::{self, srgb_to_lab_px};
use crate::error::{Error, Result};
use crate::snr::LUMA;
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// UCIQE component weights (chroma spread, luminance contrast, saturation).
pub const UCIQE_WEIGHTS: [f64; 3] = [0.4680, 0.2745, 0.2576];

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "images differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn image_dims<T: Real>(a: &Tensor<T>) -> Result<(usize, usize)> {
    match a.shape() {
        &[3, h, w] => Ok((h, w)),
        s => Err(Error::dim(format!("expected a 3×H×W image, got {s:?}"))),
    }
}

/// `10·log10(1/MSE)`; `+∞` for identical images.
pub fn psnr<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    same_shape(pre, gt)?;
    let n = pre.numel().max(1) as f64;
    // Summed in sorted order so the value is invariant to pixel permutations.
    let mut sq: Vec<f64> = pre
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .collect();
    sq.sort_unstable_by(f64::total_cmp);
    let mse = sq.iter().sum::<f64>() / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

fn luma<T: Real>(img: &Tensor<T>) -> Vec<f64> {
    let n = img.numel() / 3;
    let d = img.data();
    (0..n)
        .map(|i| LUMA[0] * d[i].as_f64() + LUMA[1] * d[n + i].as_f64() + LUMA[2] * d[2 * n + i].as_f64())
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Mean local SSIM of the luma planes over all fully contained windows.
pub fn ssim<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    same_shape(pre, gt)?;
    let (h, w) = image_dims(pre)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let (x, y) = (luma(pre), luma(gt));
    let g = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (ky, gy) in g.iter().enumerate() {
                for (kx, gx) in g.iter().enumerate() {
                    let wgt = gy * gx;
                    let i = (oy + ky) * w + ox + kx;
                    mx += wgt * x[i];
                    my += wgt * y[i];
                    sxx += wgt * x[i] * x[i];
                    syy += wgt * y[i] * y[i];
                    sxy += wgt * x[i] * y[i];
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

fn lab_pixels<T: Real>(img: &Tensor<T>) -> Result<Vec<[f64; 3]>> {
    image_dims(img)?;
    color::check_unit_range(img)?;
    let n = img.numel() / 3;
    let d = img.data();
    Ok((0..n)
        .map(|i| srgb_to_lab_px([d[i].as_f64(), d[n + i].as_f64(), d[2 * n + i].as_f64()]))
        .collect())
}

/// Mean CIE76 colour difference between two sRGB images.
pub fn delta_e<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    same_shape(pre, gt)?;
    let (a, b) = (lab_pixels(pre)?, lab_pixels(gt)?);
    Ok(delta_e_lab(&a, &b))
}

/// Mean CIE76 difference between two lists of LAB triples.
pub fn delta_e_lab(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .sum();
    s / a.len().max(1) as f64
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Uciqe {
    pub value: f64,
    /// Standard deviation of chroma (scaled by 1/100).
    pub chroma_std: f64,
    /// 99th minus 1st percentile of lightness (scaled by 1/100).
    pub contrast: f64,
    pub saturation: f64,
    pub weights: [f64; 3],
}

pub fn uciqe<T: Real>(img: &Tensor<T>) -> Result<Uciqe> {
    let lab = lab_pixels(img)?;
    let n = lab.len().max(1) as f64;
    let chroma: Vec<f64> = lab.iter().map(|p| p[1].hypot(p[2]) / 100.0).collect();
    let mean_c = chroma.iter().sum::<f64>() / n;
    let chroma_std = (chroma.iter().map(|c| (c - mean_c).powi(2)).sum::<f64>() / n).sqrt();
    let mut l: Vec<f64> = lab.iter().map(|p| p[0] / 100.0).collect();
    l.sort_by(f64::total_cmp);
    let contrast = percentile(&l, 99.0) - percentile(&l, 1.0);
    let saturation = lab
        .iter()
        .map(|p| {
            let c = p[1].hypot(p[2]);
            let r = c.hypot(p[0]);
            if r == 0.0 {
                0.0
            } else {
                c / r
            }
        })
        .sum::<f64>()
        / n;
    let [c1, c2, c3] = UCIQE_WEIGHTS;
    Ok(Uciqe {
        value: c1 * chroma_std + c2 * contrast + c3 * saturation,
        chroma_std,
        contrast,
        saturation,
        weights: UCIQE_WEIGHTS,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub delta_e: f64,
    pub uciqe: f64,
}

impl MetricReport {
    pub fn compute<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>) -> Result<Self> {
        Ok(MetricReport {
            psnr: psnr(pre, gt)?,
            ssim: ssim(pre, gt)?,
            delta_e: delta_e(pre, gt)?,
            uciqe: uciqe(pre)?.value,
        })
    }

    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let n = reports.len().max(1) as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        MetricReport {
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            delta_e: avg(|r| r.delta_e),
            uciqe: avg(|r| r.uciqe),
        }
    }
}

/// Formats a metric value for reports; infinities print as `inf`.
pub fn fmt_value(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}
