//! Composite training objective: spatial L1, spectral L1, LAB and LCh
//! histogram losses, and a feature-space perceptual distance.

use crate::blocks;
use crate::color::{self, AB_RANGE, BINS, L_RANGE};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::weights::{Binder, Initializer, ModelWeights};

/// Floor applied to predicted bin weights before the logarithm.
pub const LOG_FLOOR: f64 = 1e-8;

/// Seed of the default perceptual feature extractor.
pub const PERCEPTUAL_SEED: u64 = 0x5EED_F00D;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Spatial L1.
    pub alpha: f64,
    /// Spectral L1.
    pub beta: f64,
    /// LAB term.
    pub gamma: f64,
    /// LCh term.
    pub mu: f64,
    /// Perceptual term.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 100.0,
            beta: 10.0,
            gamma: 0.0001,
            mu: 1.0,
            lambda: 100.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.alpha, self.beta, self.gamma, self.mu, self.lambda]
    }

    /// Field names in `as_array` order.
    pub const KEYS: [&'static str; 5] = ["alpha", "beta", "gamma", "mu", "lambda"];

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::KEYS.iter().zip(self.as_array()) {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    line: 0,
                    key: (*name).to_string(),
                    message: format!("loss weight must be a finite non-negative number, got {v}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Wrap the hue difference into `(−π, π]` before squaring.
    pub wrap_hue: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            wrap_hue: false,
        }
    }
}

/// Unweighted term values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub spatial: f64,
    pub freq: f64,
    pub lab: f64,
    pub lch: f64,
    pub perceptual: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Terms multiplied by their weights, in the order spatial, freq, lab,
    /// lch, perceptual.
    pub fn weighted(&self, w: &LossWeights) -> [f64; 5] {
        [
            w.alpha * self.spatial,
            w.beta * self.freq,
            w.gamma * self.lab,
            w.mu * self.lch,
            w.lambda * self.perceptual,
        ]
    }
}

fn check_pair<T: Real>(t: &Tape<T>, pre: Var, gt: Var) -> Result<()> {
    let (a, b) = (t.shape(pre), t.shape(gt));
    if a != b {
        return Err(Error::dim(format!("prediction {a:?} and target {b:?} differ in shape")));
    }
    Ok(())
}

/// `−Σ_bins q_gt·log(max(q_pre, floor))`, averaged over pixels.
pub fn soft_ce<T: Real>(t: &Tape<T>, pre: Var, gt: Var, range: (f64, f64)) -> Result<Var> {
    let (lo, hi) = (T::lit(range.0), T::lit(range.1));
    let qp = t.soft_quantize(pre, lo, hi, BINS)?;
    let qg = t.soft_quantize(gt, lo, hi, BINS)?;
    let log = t.log_floor(qp, T::lit(LOG_FLOOR))?;
    let pixels = t.value(pre).numel();
    let s = t.sum_all(t.mul(qg, log)?)?;
    t.mul_scalar(s, T::lit(-1.0 / pixels as f64))
}

fn mse<T: Real>(t: &Tape<T>, a: Var, b: Var) -> Result<Var> {
    t.mean_all(t.square(t.sub(a, b)?)?)
}

pub fn loss_spatial_t<T: Real>(t: &Tape<T>, pre: Var, gt: Var) -> Result<Var> {
    check_pair(t, pre, gt)?;
    t.mean_all(t.abs(t.sub(pre, gt)?)?)
}

/// L1 over real and imaginary planes of the per-channel 2D transform,
/// divided by the element count of the image.
pub fn loss_freq_t<T: Real>(t: &Tape<T>, pre: Var, gt: Var) -> Result<Var> {
    check_pair(t, pre, gt)?;
    let n = t.value(pre).numel();
    let d = t.sub(t.fft2d(pre)?, t.fft2d(gt)?)?;
    t.mul_scalar(t.sum_all(t.abs(d)?)?, T::lit(1.0 / n as f64))
}

pub fn loss_lab_t<T: Real>(t: &Tape<T>, pre: Var, gt: Var) -> Result<Var> {
    check_pair(t, pre, gt)?;
    let [lp, ap, bp] = color::lab_planes(t, pre)?;
    let [lg, ag, bg] = color::lab_planes(t, gt)?;
    let l2 = mse(t, lp, lg)?;
    let ce_a = soft_ce(t, ap, ag, AB_RANGE)?;
    let ce_b = soft_ce(t, bp, bg, AB_RANGE)?;
    t.add(t.add(l2, ce_a)?, ce_b)
}

pub fn loss_lch_t<T: Real>(t: &Tape<T>, pre: Var, gt: Var, wrap_hue: bool) -> Result<Var> {
    check_pair(t, pre, gt)?;
    let [lp, ap, bp] = color::lab_planes(t, pre)?;
    let [lg, ag, bg] = color::lab_planes(t, gt)?;
    let (cp, hp) = color::chroma_hue(t, ap, bp)?;
    let (cg, hg) = color::chroma_hue(t, ag, bg)?;
    let ce_l = soft_ce(t, lp, lg, L_RANGE)?;
    let dc = mse(t, cp, cg)?;
    let mut dh = t.sub(hg, hp)?;
    if wrap_hue {
        dh = t.wrap_phase(dh)?;
    }
    let dh = t.mean_all(t.square(dh)?)?;
    t.add(t.add(ce_l, dc)?, dh)
}

/// A fixed multi-scale feature pyramid.
pub trait FeatureExtractor<T: Real> {
    fn features(&self, t: &Tape<T>, image: Var) -> Result<Vec<Var>>;
}

/// Seeded random three-stage convolutional pyramid (3→8, 8→16 stride 2,
/// 16→32 stride 2, ReLU after each).
#[derive(Clone, Debug)]
pub struct RandomPyramid<T: Real = f32> {
    weights: ModelWeights<T>,
}

const PYRAMID: [(usize, usize, usize); 3] = [(3, 8, 1), (8, 16, 2), (16, 32, 2)];

impl<T: Real> RandomPyramid<T> {
    pub fn new(seed: u64) -> Self {
        let mut init = Initializer::new(seed);
        let mut weights = ModelWeights::new();
        for (i, &(ci, co, _)) in PYRAMID.iter().enumerate() {
            blocks::register_conv(&mut weights, &mut init, &format!("s{i}"), ci, co, 3)
                .expect("fresh registry");
        }
        RandomPyramid { weights }
    }
}

impl<T: Real> Default for RandomPyramid<T> {
    fn default() -> Self {
        Self::new(PERCEPTUAL_SEED)
    }
}

impl<T: Real> FeatureExtractor<T> for RandomPyramid<T> {
    fn features(&self, t: &Tape<T>, image: Var) -> Result<Vec<Var>> {
        let b = Binder::frozen(t, &self.weights);
        let mut h = image;
        let mut out = Vec::with_capacity(PYRAMID.len());
        for (i, &(_, _, stride)) in PYRAMID.iter().enumerate() {
            h = t.relu(blocks::conv(&b, &format!("s{i}"), h, stride, 1, 1)?)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Unit-normalizes a `C×H×W` feature map along channels.
fn unit_normalize<T: Real>(t: &Tape<T>, f: Var) -> Result<Var> {
    let norm = t.sqrt_eps(t.sum_axis(t.square(f)?, 0, true)?, T::lit(1e-10))?;
    t.div(f, norm)
}

pub fn loss_perceptual_t<T: Real>(
    t: &Tape<T>,
    pre: Var,
    gt: Var,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<Var> {
    check_pair(t, pre, gt)?;
    let fp = extractor.features(t, pre)?;
    let fg = extractor.features(t, gt)?;
    if fp.is_empty() {
        return Err(Error::dim("feature extractor produced no scales"));
    }
    let mut acc: Option<Var> = None;
    for (&a, &b) in fp.iter().zip(&fg) {
        let d = t.mean_all(t.abs(t.sub(unit_normalize(t, a)?, unit_normalize(t, b)?)?)?)?;
        acc = Some(match acc {
            Some(s) => t.add(s, d)?,
            None => d,
        });
    }
    t.mul_scalar(acc.expect("non-empty"), T::lit(1.0 / fp.len() as f64))
}

/// Weighted sum of all five terms; returns the scalar and the unweighted
/// breakdown. Terms with zero weight are skipped.
pub fn total_loss_t<T: Real>(
    t: &Tape<T>,
    pre: Var,
    gt: Var,
    cfg: &LossConfig,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<(Var, LossBreakdown)> {
    cfg.weights.validate()?;
    check_pair(t, pre, gt)?;
    let w = cfg.weights;
    let mut bd = LossBreakdown::default();
    let mut total: Option<Var> = None;
    let mut add = |weight: f64, term: &dyn Fn() -> Result<Var>, slot: &mut f64| -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let v = term()?;
        *slot = t.item(v).as_f64();
        let s = t.mul_scalar(v, T::lit(weight))?;
        total = Some(match total {
            Some(acc) => t.add(acc, s)?,
            None => s,
        });
        Ok(())
    };
    add(w.alpha, &|| loss_spatial_t(t, pre, gt), &mut bd.spatial)?;
    add(w.beta, &|| loss_freq_t(t, pre, gt), &mut bd.freq)?;
    add(w.gamma, &|| loss_lab_t(t, pre, gt), &mut bd.lab)?;
    add(w.mu, &|| loss_lch_t(t, pre, gt, cfg.wrap_hue), &mut bd.lch)?;
    add(w.lambda, &|| loss_perceptual_t(t, pre, gt, extractor), &mut bd.perceptual)?;
    let total = match total {
        Some(v) => v,
        None => t.scalar(T::zero()),
    };
    bd.total = t.item(total).as_f64();
    Ok((total, bd))
}

fn eval<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>, f: impl Fn(&Tape<f64>, Var, Var) -> Result<Var>) -> Result<f64> {
    let t = Tape::<f64>::new();
    let (p, g) = (t.constant(pre.cast()), t.constant(gt.cast()));
    let v = f(&t, p, g)?;
    Ok(t.item(v))
}

pub fn loss_spatial<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    eval(pre, gt, |t, p, g| loss_spatial_t(t, p, g))
}

pub fn loss_freq<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    eval(pre, gt, |t, p, g| loss_freq_t(t, p, g))
}

pub fn loss_lab<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    color::check_unit_range(pre)?;
    color::check_unit_range(gt)?;
    eval(pre, gt, |t, p, g| loss_lab_t(t, p, g))
}

pub fn loss_lch<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>, wrap_hue: bool) -> Result<f64> {
    color::check_unit_range(pre)?;
    color::check_unit_range(gt)?;
    eval(pre, gt, |t, p, g| loss_lch_t(t, p, g, wrap_hue))
}

pub fn loss_perceptual<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>, extractor: &RandomPyramid<f64>) -> Result<f64> {
    eval(pre, gt, |t, p, g| loss_perceptual_t(t, p, g, extractor))
}

pub fn total_loss<T: Real>(pre: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig) -> Result<LossBreakdown> {
    let t = Tape::<f64>::new();
    let (p, g) = (t.constant(pre.cast()), t.constant(gt.cast()));
    let ex = RandomPyramid::<f64>::default();
    Ok(total_loss_t(&t, p, g, cfg, &ex)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: u64) -> Tensor<f64> {
        let mut i = Initializer::new(seed);
        let t: Tensor<f64> = i.normal(&[3, 8, 8], 0.2);
        t.map(|v| (v + 0.5).clamp(0.0, 1.0))
    }

    #[test]
    fn default_weights() {
        assert_eq!(LossWeights::default().as_array(), [100.0, 10.0, 0.0001, 1.0, 100.0]);
    }

    #[test]
    fn negative_weight_is_a_config_error() {
        let cfg = LossConfig {
            weights: LossWeights {
                beta: -1.0,
                ..LossWeights::default()
            },
            ..LossConfig::default()
        };
        assert!(matches!(total_loss(&img(0), &img(1), &cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn offsets() {
        let gt = Tensor::<f64>::full(&[3, 4, 4], 0.25);
        let pre = gt.map(|v| v + 0.5);
        assert!((loss_spatial(&pre, &gt).unwrap() - 0.5).abs() < 1e-12);
        let d = 0.125;
        let pre = gt.map(|v| v + d);
        assert!((loss_freq(&pre, &gt).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs() {
        let a = img(3);
        assert_eq!(loss_spatial(&a, &a).unwrap(), 0.0);
        assert!(loss_freq(&a, &a).unwrap() < 1e-12);
        let ex = RandomPyramid::default();
        assert_eq!(loss_perceptual(&a, &a, &ex).unwrap(), 0.0);
        let (b, c) = (img(4), img(5));
        assert_eq!(loss_perceptual(&b, &c, &ex).unwrap(), loss_perceptual(&c, &b, &ex).unwrap());
    }

    #[test]
    fn doubling_alpha_doubles_spatial_contribution() {
        let (p, g) = (img(1), img(2));
        let base = total_loss(&p, &g, &LossConfig::default()).unwrap();
        let mut cfg = LossConfig::default();
        cfg.weights.alpha *= 2.0;
        let twice = total_loss(&p, &g, &cfg).unwrap();
        assert_eq!(twice.weighted(&cfg.weights)[0], 2.0 * base.weighted(&LossWeights::default())[0]);
    }
}
