//! SNR prior: a per-pixel signal-to-noise estimate derived from the input
//! image, and the encoder branch that carries it down the U.

use crate::blocks::{self, EncoderOutput};
use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::{Real, Tensor};
use crate::weights::{Binder, Initializer, ModelWeights};

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnrParams {
    /// Side of the box-mean window used as the denoised estimate.
    pub kernel: usize,
    pub eps: f64,
    pub s_max: f64,
}

impl Default for SnrParams {
    fn default() -> Self {
        SnrParams {
            kernel: 5,
            eps: 1e-4,
            s_max: 10.0,
        }
    }
}

/// Single-channel map in `[0, 1]` with shape `1×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrMap<T: Real = f32> {
    values: Tensor<T>,
}

impl<T: Real> SnrMap<T> {
    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.mean_f64()
    }
}

/// Luminance plane of a `3×H×W` image.
pub fn luminance<T: Real>(image: &Tensor<T>) -> Result<Vec<f64>> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::dim(format!(
            "expected a 3×H×W image, got {:?}",
            image.shape()
        )));
    };
    let n = h * w;
    let d = image.data();
    Ok((0..n)
        .map(|i| LUMA[0] * d[i].as_f64() + LUMA[1] * d[n + i].as_f64() + LUMA[2] * d[2 * n + i].as_f64())
        .collect())
}

/// Mean over the `k×k` window centered at each pixel, clipped at borders.
pub fn box_mean(g: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut s, mut n) = (0.0, 0usize);
            for yy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                    s += g[yy as usize * w + xx as usize];
                    n += 1;
                }
            }
            out[y as usize * w + x as usize] = s / n as f64;
        }
    }
    out
}

pub fn compute_snr_map_with<T: Real>(image: &Tensor<T>, p: &SnrParams) -> Result<SnrMap<T>> {
    if !image.all_finite() {
        return Err(Error::numeric("SNR map input contains non-finite values"));
    }
    let g = luminance(image)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mu = box_mean(&g, h, w, p.kernel);
    let values = g
        .iter()
        .zip(&mu)
        .map(|(&gv, &m)| {
            let ratio = m / ((gv - m).abs() + p.eps);
            T::lit(ratio.clamp(0.0, p.s_max) / p.s_max)
        })
        .collect();
    Ok(SnrMap {
        values: Tensor::new(vec![1, h, w], values)?,
    })
}

pub fn compute_snr_map<T: Real>(image: &Tensor<T>) -> Result<SnrMap<T>> {
    compute_snr_map_with(image, &SnrParams::default())
}

/// Mirror of the RGB encoder with independent weights and a 1-channel input.
#[derive(Clone, Debug)]
pub struct SnrEncoder {
    pub prefix: String,
    pub base_width: usize,
}

impl SnrEncoder {
    pub fn new(base_width: usize) -> Self {
        SnrEncoder {
            prefix: "snr".into(),
            base_width,
        }
    }

    pub fn register<T: Real>(&self, w: &mut ModelWeights<T>, init: &mut Initializer) -> Result<()> {
        blocks::register_encoder(w, init, &self.prefix, 1, self.base_width)
    }

    pub fn forward<T: Real>(&self, b: &Binder<T>, snr: Var) -> Result<EncoderOutput> {
        let shape = b.tape().shape(snr);
        check_divisible(&shape)?;
        blocks::encoder(b, &self.prefix, snr, &mut None)
    }

    /// Runs the branch on a concrete map and returns the four stage features.
    pub fn features<T: Real>(&self, weights: &ModelWeights<T>, snr: &SnrMap<T>) -> Result<Vec<Tensor<T>>> {
        let tape = crate::Tape::new();
        let b = Binder::frozen(&tape, weights);
        let x = tape.constant(snr.values.clone());
        let out = self.forward(&b, x)?;
        Ok(out.skips.iter().map(|&v| (*tape.value(v)).clone()).collect())
    }
}

fn check_divisible(shape: &[usize]) -> Result<()> {
    match shape {
        [_, h, w] if h % 16 == 0 && w % 16 == 0 && *h > 0 && *w > 0 => Ok(()),
        _ => Err(Error::dim(format!(
            "four-stage encoder needs spatial dims divisible by 16, got {shape:?}"
        ))),
    }
}
