//! Synthetic underwater pairs and paired-data augmentation.
//!
//! Degradation follows the usual attenuation/backscatter formation model
//! `I = J·t + B·(1 − t)` with per-channel transmission `t = exp(−β·depth)`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::error::{Error, Result};
use crate::imageio;
use crate::snr::box_mean;
use crate::tensor::Tensor;

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const MAX_DEPTH: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DegradeParams {
    /// Per-channel attenuation per unit depth.
    pub beta: [f64; 3],
    pub backlight: [f64; 3],
    /// `H×W` depth map.
    pub depth: Tensor<f64>,
    pub noise_sigma: f64,
    pub blur_radius: usize,
    pub seed: u64,
}

impl DegradeParams {
    /// Clear water: no attenuation, noise or blur.
    pub fn identity(h: usize, w: usize) -> Self {
        DegradeParams {
            beta: [0.0; 3],
            backlight: [0.0; 3],
            depth: Tensor::zeros(&[h, w]),
            noise_sigma: 0.0,
            blur_radius: 0,
            seed: 0,
        }
    }

    /// Samples the default ranges: a blue-green cast with red attenuated
    /// most.
    pub fn sample(rng: &mut impl Rng, h: usize, w: usize) -> Self {
        let beta = [
            rng.random_range(1.0..=2.0),
            rng.random_range(0.4..=1.0),
            rng.random_range(0.2..=0.6),
        ];
        let base = [0.1, 0.5, 0.6];
        let backlight = base.map(|b: f64| (b + rng.random_range(-0.1..=0.1)).clamp(0.0, 1.0));
        let top = rng.random_range(0.0..0.8);
        let bottom = rng.random_range(1.0..MAX_DEPTH);
        let waves = smooth_field(rng, h, w, 3);
        let depth = Tensor::from_fn(&[h, w], |i| {
            let y = (i / w) as f64 / (h.max(2) - 1) as f64;
            (top + (bottom - top) * y + 0.25 * waves[i]).clamp(0.0, MAX_DEPTH)
        });
        DegradeParams {
            beta,
            backlight,
            depth,
            noise_sigma: rng.random_range(0.0..0.02),
            blur_radius: rng.random_range(0..=1),
            seed: rng.random(),
        }
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.beta.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::Domain("attenuation coefficients must be non-negative".into()));
        }
        if self.backlight.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
            return Err(Error::Domain("backlight must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Domain("noise sigma must be non-negative".into()));
        }
        self.depth.expect_shape(&[h, w])
    }
}

/// Sum of a few random low-frequency sinusoids, roughly in `[-1, 1]`.
fn smooth_field(rng: &mut impl Rng, h: usize, w: usize, terms: usize) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64, f64)> = (0..terms)
        .map(|_| {
            (
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let norm: f64 = comps.iter().map(|c| c.3).sum();
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            comps
                .iter()
                .map(|&(fy, fx, ph, a)| a * (std::f64::consts::TAU * (fy * y + fx * x) + ph).sin())
                .sum::<f64>()
                / norm
        })
        .collect()
}

/// Applies the formation model to a clean `3×H×W` image.
pub fn degrade(clean: &Tensor<f32>, p: &DegradeParams) -> Result<Tensor<f32>> {
    let &[3, h, w] = clean.shape() else {
        return Err(Error::dim(format!("expected a 3×H×W image, got {:?}", clean.shape())));
    };
    p.validate(h, w)?;
    let n = h * w;
    let mut noise_rng = rng(p.seed);
    let normal = Normal::new(0.0, p.noise_sigma.max(0.0)).map_err(|e| Error::Domain(e.to_string()))?;
    let mut out = vec![0.0f64; 3 * n];
    for c in 0..3 {
        for i in 0..n {
            let t = (-p.beta[c] * p.depth.data()[i]).exp();
            let mut v = f64::from(clean.data()[c * n + i]) * t + p.backlight[c] * (1.0 - t);
            if p.noise_sigma > 0.0 {
                v += normal.sample(&mut noise_rng);
            }
            out[c * n + i] = v.clamp(0.0, 1.0);
        }
    }
    if p.blur_radius > 0 {
        for c in 0..3 {
            let blurred = box_mean(&out[c * n..(c + 1) * n], h, w, 2 * p.blur_radius + 1);
            out[c * n..(c + 1) * n].copy_from_slice(&blurred);
        }
    }
    Tensor::new(vec![3, h, w], out.into_iter().map(|v| v as f32).collect())
}

/// Procedural clean scene: a coloured gradient, a few flat shapes and
/// low-frequency texture.
pub fn clean_scene(rng: &mut impl Rng, h: usize, w: usize) -> Tensor<f32> {
    let n = h * w;
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.9));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.9));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut img = vec![0.0f64; 3 * n];
    for i in 0..n {
        let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
        let s = (0.5 + (x - 0.5) * ca + (y - 0.5) * sa).clamp(0.0, 1.0);
        for c in 0..3 {
            img[c * n + i] = c0[c] * (1.0 - s) + c1[c] * s;
        }
    }
    let shapes = rng.random_range(2..=5);
    for _ in 0..shapes {
        let col: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let cy = rng.random_range(0.0..1.0) * h as f64;
        let cx = rng.random_range(0.0..1.0) * w as f64;
        let r = rng.random_range(0.08..0.3) * h.min(w) as f64;
        let disc = rng.random_bool(0.5);
        for i in 0..n {
            let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            let inside = if disc {
                (y - cy).powi(2) + (x - cx).powi(2) <= r * r
            } else {
                (y - cy).abs() <= r && (x - cx).abs() <= 0.7 * r
            };
            if inside {
                for c in 0..3 {
                    img[c * n + i] = col[c];
                }
            }
        }
    }
    let tex = smooth_field(rng, h, w, 4);
    let amp = rng.random_range(0.02..0.08);
    Tensor::from_fn(&[3, h, w], |k| (img[k] + amp * tex[k % n]).clamp(0.0, 1.0) as f32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub degraded: Tensor<f32>,
    pub reference: Tensor<f32>,
    pub id: String,
}

impl PairedSample {
    pub fn dims(&self) -> (usize, usize) {
        (self.reference.shape()[1], self.reference.shape()[2])
    }
}

/// `n` reproducible synthetic pairs at `h×w`.
pub fn make_dataset(n: usize, h: usize, w: usize, seed: u64) -> Result<Vec<PairedSample>> {
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Domain("dataset size and resolution must be positive".into()));
    }
    (0..n)
        .map(|i| {
            let mut r = rng(derive_seed(seed, i as u64));
            let clean = clean_scene(&mut r, h, w);
            let p = DegradeParams::sample(&mut r, h, w);
            Ok(PairedSample {
                degraded: degrade(&clean, &p)?,
                reference: clean,
                id: format!("synth_{i:04}"),
            })
        })
        .collect()
}

/// Loads pairs from `dir/input` and `dir/gt`, matched by file name.
pub fn load_pairs(dir: impl AsRef<Path>) -> Result<Vec<PairedSample>> {
    let dir = dir.as_ref();
    let input = dir.join("input");
    let gt = dir.join("gt");
    let mut names: Vec<PathBuf> = std::fs::read_dir(&input)
        .map_err(|e| Error::io(&input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| imageio::is_image_file(p))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Image {
            path: input,
            message: "no images found".into(),
        });
    }
    names
        .into_iter()
        .map(|p| {
            let name = p.file_name().expect("file entry").to_owned();
            let degraded = imageio::read_image(&p)?;
            let reference = imageio::read_image(gt.join(&name))?;
            if degraded.shape() != reference.shape() {
                return Err(Error::dim(format!(
                    "{}: input {:?} and reference {:?} differ in size",
                    name.to_string_lossy(),
                    degraded.shape(),
                    reference.shape()
                )));
            }
            Ok(PairedSample {
                degraded,
                reference,
                id: name.to_string_lossy().into_owned(),
            })
        })
        .collect()
}

/// Writes pairs as `dir/input/<id>.png` and `dir/gt/<id>.png`.
pub fn save_pairs(dir: impl AsRef<Path>, pairs: &[PairedSample]) -> Result<()> {
    let dir = dir.as_ref();
    for p in pairs {
        let name = if imageio::is_image_file(Path::new(&p.id)) {
            p.id.clone()
        } else {
            format!("{}.png", p.id)
        };
        imageio::write_image(dir.join("input").join(&name), &p.degraded)?;
        imageio::write_image(dir.join("gt").join(&name), &p.reference)?;
    }
    Ok(())
}

// ---- geometric transforms -------------------------------------------------

/// Horizontal (`axis = 2`) or vertical (`axis = 1`) flip of a `C×H×W` map.
pub fn flip(t: &Tensor<f32>, axis: usize) -> Tensor<f32> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    Tensor::from_fn(s, |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let (y, x) = if axis == 1 { (h - 1 - y, x) } else { (y, w - 1 - x) };
        t.data()[ch * h * w + y * w + x]
    })
    .reshape(&[c, h, w])
    .expect("same size")
}

/// Counter-clockwise rotation by `k·90°`.
pub fn rot90(t: &Tensor<f32>, k: usize) -> Tensor<f32> {
    let mut cur = t.clone();
    for _ in 0..k % 4 {
        let s = cur.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        // out[y][x] = in[x][w-1-y], out is w×h
        let src = cur;
        cur = Tensor::from_fn(&[c, w, h], |i| {
            let (ch, y, x) = (i / (h * w), (i / h) % w, i % h);
            src.data()[ch * h * w + x * w + (w - 1 - y)]
        });
    }
    cur
}

/// Nearest-neighbour resize by `factor`.
pub fn scale_nearest(t: &Tensor<f32>, factor: f64) -> Tensor<f32> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (nh, nw) = (((h as f64 * factor).round() as usize).max(1), ((w as f64 * factor).round() as usize).max(1));
    Tensor::from_fn(&[c, nh, nw], |i| {
        let (ch, y, x) = (i / (nh * nw), (i / nw) % nh, i % nw);
        let sy = (((y as f64 + 0.5) / factor) as usize).min(h - 1);
        let sx = (((x as f64 + 0.5) / factor) as usize).min(w - 1);
        t.data()[ch * h * w + sy * w + sx]
    })
}

pub fn crop(t: &Tensor<f32>, y0: usize, x0: usize, ch: usize, cw: usize) -> Result<Tensor<f32>> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if y0 + ch > h || x0 + cw > w {
        return Err(Error::dim(format!("crop {ch}x{cw} at ({y0},{x0}) exceeds {h}x{w}")));
    }
    Ok(Tensor::from_fn(&[c, ch, cw], |i| {
        let (k, y, x) = (i / (ch * cw), (i / cw) % ch, i % cw);
        t.data()[k * h * w + (y0 + y) * w + x0 + x]
    }))
}

/// Blend `λ·a + (1 − λ)·b`, applied to inputs and targets alike.
pub fn mixup(a: &PairedSample, b: &PairedSample, lambda: f64) -> Result<PairedSample> {
    if a.degraded.shape() != b.degraded.shape() {
        return Err(Error::dim("mixup needs pairs of equal size"));
    }
    if lambda == 1.0 {
        return Ok(a.clone());
    }
    let l = lambda as f32;
    let mix = |x: &Tensor<f32>, y: &Tensor<f32>| x.zip_map(y, |p, q| l * p + (1.0 - l) * q);
    Ok(PairedSample {
        degraded: mix(&a.degraded, &b.degraded)?,
        reference: mix(&a.reference, &b.reference)?,
        id: format!("mix({},{})", a.id, b.id),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub flip: bool,
    /// Rotations by multiples of 90° (square images only).
    pub rotate: bool,
    /// Random factor from {0.5, 1.0}.
    pub scale: bool,
    /// Output crop size.
    pub crop: Option<(usize, usize)>,
    /// Probability of blending with a second pair.
    pub mixup: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            flip: true,
            rotate: true,
            scale: false,
            crop: None,
            mixup: 0.0,
        }
    }
}

/// Record of the geometric choices made for one pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentLog {
    pub flip_h: bool,
    pub flip_v: bool,
    pub rot: usize,
    pub scale: f64,
    /// `(y0, x0, h, w)` applied to both images.
    pub crop: Option<(usize, usize, usize, usize)>,
    pub mixup: Option<f64>,
}

/// Applies one random geometric transform to both halves of `pair`; when
/// `partner` is given, mixup may blend it in afterwards.
pub fn augment(
    pair: &PairedSample,
    partner: Option<&PairedSample>,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<(PairedSample, AugmentLog)> {
    let mut r = rng(seed);
    let mut log = AugmentLog {
        scale: 1.0,
        ..AugmentLog::default()
    };
    let (h, w) = pair.dims();
    if policy.flip {
        log.flip_h = r.random_bool(0.5);
        log.flip_v = r.random_bool(0.5);
    }
    if policy.rotate && h == w {
        log.rot = r.random_range(0..4);
    }
    if policy.scale {
        log.scale = if r.random_bool(0.5) { 0.5 } else { 1.0 };
    }
    let geo = |t: &Tensor<f32>| {
        let mut t = t.clone();
        if log.flip_h {
            t = flip(&t, 2);
        }
        if log.flip_v {
            t = flip(&t, 1);
        }
        t = rot90(&t, log.rot);
        if log.scale != 1.0 {
            t = scale_nearest(&t, log.scale);
        }
        t
    };
    let mut degraded = geo(&pair.degraded);
    let mut reference = geo(&pair.reference);
    if let Some((ch, cw)) = policy.crop {
        let (sh, sw) = (degraded.shape()[1], degraded.shape()[2]);
        if ch > sh || cw > sw {
            return Err(Error::dim(format!("crop {ch}x{cw} exceeds image {sh}x{sw}")));
        }
        let y0 = r.random_range(0..=sh - ch);
        let x0 = r.random_range(0..=sw - cw);
        log.crop = Some((y0, x0, ch, cw));
        degraded = crop(&degraded, y0, x0, ch, cw)?;
        reference = crop(&reference, y0, x0, ch, cw)?;
    }
    let mut out = PairedSample {
        degraded,
        reference,
        id: pair.id.clone(),
    };
    if let Some(other) = partner.filter(|_| policy.mixup > 0.0) {
        if r.random_bool(policy.mixup.min(1.0)) && other.degraded.shape() == out.degraded.shape() {
            let lambda = Beta::new(0.2, 0.2).expect("valid shape").sample(&mut r);
            log.mixup = Some(lambda);
            out = mixup(&out, other, lambda)?;
        }
    }
    Ok((out, log))
}
