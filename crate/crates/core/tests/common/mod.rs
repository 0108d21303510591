//! Independent reference implementations shared by the integration suites.
//! Everything here is written as plain loops in f64, with no calls into the
//! library's kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sformer::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Random image with values in [0, 1].
pub fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    uniform(&[3, h, w], 0.0, 1.0, seed)
}

pub fn image_f32(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    image(h, w, seed).cast()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// NCHW convolution with zero padding and channel groups.
pub fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Vec<f64> {
    let &[n, c, h, wd] = x.shape() else { panic!("NCHW") };
    let &[o, cg, kh, kw] = w.shape() else { panic!("OIKK") };
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let og = o / groups;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            let g = oc / og;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = bias.map_or(0.0, |bb| bb[oc]);
                    for ci in 0..cg {
                        let ic = g * cg + ci;
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += x.get(&[b, ic, iy as usize, ix as usize]) * w.get(&[oc, ci, i, j]);
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    let _ = c;
    out
}

pub fn naive_max_pool(x: &Tensor<f64>, k: usize, stride: usize) -> Vec<f64> {
    let &[n, c, h, w] = x.shape() else { panic!("NCHW") };
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for i in 0..k {
                        for j in 0..k {
                            m = m.max(x.get(&[b, ch, y * stride + i, xx * stride + j]));
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    out
}

/// Transposed convolution with kernel size equal to the stride (IOKK weight).
pub fn naive_tconv(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&[f64]>, k: usize) -> Vec<f64> {
    let &[n, ci, h, wd] = x.shape() else { panic!("NCHW") };
    let &[_, co, _, _] = w.shape() else { panic!("IOKK") };
    let (oh, ow) = (h * k, wd * k);
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = bias.map_or(0.0, |bb| bb[o]);
                    for c in 0..ci {
                        s += x.get(&[b, c, y / k, xx / k]) * w.get(&[c, o, y % k, xx % k]);
                    }
                    out[((b * co + o) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    out
}

/// Direct O(N²) 2D DFT of a real `H×W` plane, `exp(−2πi(uy/H + vx/W))`.
pub fn direct_dft(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let a = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                    sr += x[y * w + xx] * a.cos();
                    si += x[y * w + xx] * a.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

/// sRGB in [0, 1] to CIELAB (D65), straight from the textbook formulas.
pub fn lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = |c: f64| if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) };
    let [r, g, b] = rgb.map(lin);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let f = |t: f64| {
        let d: f64 = 6.0 / 29.0;
        if t > d * d * d { t.cbrt() } else { t / (3.0 * d * d) + 4.0 / 29.0 }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn constant_image(h: usize, w: usize, rgb: [f64; 3]) -> Tensor<f64> {
    Tensor::from_fn(&[3, h, w], |i| rgb[i / (h * w)])
}
/// Triangular assignment of `v` (clamped) to 64 uniform centers over `[lo, hi]`.
pub fn soft_bins(v: f64, lo: f64, hi: f64) -> Vec<f64> {
    let step = (hi - lo) / 63.0;
    let c = v.clamp(lo, hi);
    (0..64)
        .map(|k| (1.0 - (c - (lo + step * k as f64)).abs() / step).max(0.0))
        .collect()
}

/// Per-pixel soft cross-entropy averaged over pixels, log floored at 1e-8.
pub fn soft_ce_oracle(pre: &[f64], gt: &[f64], lo: f64, hi: f64) -> f64 {
    let mut s = 0.0;
    for (&p, &g) in pre.iter().zip(gt) {
        let (qp, qg) = (soft_bins(p, lo, hi), soft_bins(g, lo, hi));
        s -= qg.iter().zip(&qp).map(|(a, b)| a * b.max(1e-8).ln()).sum::<f64>();
    }
    s / pre.len() as f64
}

pub fn lab_planes_oracle(img: &Tensor<f64>) -> [Vec<f64>; 3] {
    let n = img.numel() / 3;
    let d = img.data();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let px = lab([d[i], d[n + i], d[2 * n + i]]);
        for c in 0..3 {
            out[c][i] = px[c];
        }
    }
    out
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

pub fn loss_lab_oracle(pre: &Tensor<f64>, gt: &Tensor<f64>) -> f64 {
    let [lp, ap, bp] = lab_planes_oracle(pre);
    let [lg, ag, bg] = lab_planes_oracle(gt);
    mean_sq_diff(&lp, &lg) + soft_ce_oracle(&ap, &ag, -110.0, 110.0) + soft_ce_oracle(&bp, &bg, -110.0, 110.0)
}

/// Chroma and hue planes, hue taken as 0 where a = b = 0.
pub fn chroma_hue_oracle(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| ((x * x + y * y).sqrt(), if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) }))
        .unzip()
}

pub fn loss_lch_oracle(pre: &Tensor<f64>, gt: &Tensor<f64>) -> f64 {
    let [lp, ap, bp] = lab_planes_oracle(pre);
    let [lg, ag, bg] = lab_planes_oracle(gt);
    let (cp, hp) = chroma_hue_oracle(&ap, &bp);
    let (cg, hg) = chroma_hue_oracle(&ag, &bg);
    soft_ce_oracle(&lp, &lg, 0.0, 100.0) + mean_sq_diff(&cp, &cg) + mean_sq_diff(&hp, &hg)
}

/// Σ over channels of |ΔRe| + |ΔIm| of the direct DFT, divided by the
/// element count.
pub fn loss_freq_oracle(pre: &Tensor<f64>, gt: &Tensor<f64>) -> f64 {
    let (h, w) = (pre.shape()[1], pre.shape()[2]);
    let n = h * w;
    let mut s = 0.0;
    for c in 0..3 {
        let d: Vec<f64> = (0..n).map(|i| pre.data()[c * n + i] - gt.data()[c * n + i]).collect();
        let (re, im) = direct_dft(&d, h, w);
        s += re.iter().chain(&im).map(|v| v.abs()).sum::<f64>();
    }
    s / pre.numel() as f64
}

/// Linear-interpolation percentile of unsorted data.
pub fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let (i, f) = (rank.floor() as usize, rank.fract());
    if i + 1 < v.len() {
        v[i] * (1.0 - f) + v[i + 1] * f
    } else {
        v[i]
    }
}

pub mod suites;
