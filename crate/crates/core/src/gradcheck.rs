//! Central-difference verification of recorded gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fast::FastBlock;
use crate::fat::{FatBottleneck, FatConfig};
use crate::loss::{total_loss_t, LossConfig, RandomPyramid};
use crate::net::{ModelConfig, SformerNet};
use crate::snr::{compute_snr_map, SnrEncoder};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::weights::{Binder, Initializer, ModelWeights};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Coordinates to check; every coordinate is checked when the selection
    /// holds fewer.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-3,
            samples: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1e-6, |numeric|)
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<Mismatch>,
}

fn eval<T: Real, F>(weights: &ModelWeights<T>, f: &F) -> Result<f64>
where
    F: Fn(&Binder<T>) -> Result<Var>,
{
    let tape = Tape::new();
    let b = Binder::frozen(&tape, weights);
    let loss = f(&b)?;
    let v = tape.item(loss).as_f64();
    if !v.is_finite() {
        return Err(Error::numeric("grad_check: non-finite loss"));
    }
    Ok(v)
}

/// Compares analytic gradients of the scalar `f` against central
/// differences over parameters whose names satisfy `select`.
pub fn grad_check<T, F>(
    weights: &mut ModelWeights<T>,
    f: F,
    select: impl Fn(&str) -> bool,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&Binder<T>) -> Result<Var>,
{
    let analytic = {
        let tape = Tape::new();
        let b = Binder::new(&tape, weights);
        let loss = f(&b)?;
        if !tape.item(loss).is_finite() {
            return Err(Error::numeric("grad_check: non-finite loss"));
        }
        let mut grads = tape.backward(loss)?;
        b.collect(&mut grads)
    };
    let coords: Vec<(usize, usize)> = weights
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| select(&p.name))
        .flat_map(|(i, p)| (0..p.value.numel()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() <= opts.samples {
        coords
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, coords.len(), opts.samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| coords[k]).collect()
    };
    let h = T::lit(opts.h);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: chosen.len(),
        worst: None,
    };
    for (pi, j) in chosen {
        let a = analytic
            .iter()
            .find(|(i, _)| *i == pi)
            .map_or(0.0, |(_, g)| g.data()[j].as_f64());
        let orig = weights.params()[pi].value.data()[j];
        weights.params_mut()[pi].value.data_mut()[j] = orig + h;
        let up = eval(weights, &f);
        weights.params_mut()[pi].value.data_mut()[j] = orig - h;
        let down = eval(weights, &f);
        weights.params_mut()[pi].value.data_mut()[j] = orig;
        let n = (up? - down?) / (2.0 * opts.h);
        let rel = (a - n).abs() / n.abs().max(1e-6);
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(Mismatch {
                param: weights.params()[pi].name.clone(),
                index: j,
                analytic: a,
                numeric: n,
            });
        }
    }
    Ok(report)
}

/// Size preset for [`run_suite`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tier {
    /// 32×32 network input; a few seconds.
    Tiny,
    /// 3×64×64 network input at the test-tier model size.
    Test,
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Tier::Tiny),
            "test" => Ok(Tier::Test),
            _ => Err(Error::Domain(format!("unknown tier {s:?} (expected tiny or test)"))),
        }
    }
}

/// One component of the gradient suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub threshold: f64,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.threshold
    }
}

/// Warm, saturated colours: every hue stays far from the ±π cut of the
/// LCh loss, so finite differences never straddle it.
pub fn warm_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let noise: Tensor<f64> = Initializer::new(seed).normal(&[3, h, w], 0.05);
    let base = [0.75, 0.45, 0.2];
    Tensor::from_fn(&[3, h, w], |i| (base[i / (h * w)] + noise.data()[i]).clamp(0.02, 0.98))
}

fn project(t: &Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let r: Tensor<f64> = Initializer::new(seed).normal(&t.shape(x), 1.0);
    t.sum_all(t.mul(x, t.constant(r))?)
}

fn opts(h: f64) -> GradCheckOptions {
    GradCheckOptions { h, samples: 64, seed: 5 }
}

fn linear_ops() -> Result<GradCheckReport> {
    let mut init = Initializer::new(21);
    let mut w = ModelWeights::<f64>::new();
    w.insert("x", init.normal(&[2, 8, 8], 1.0))?;
    w.insert("conv", init.normal(&[3, 2, 3, 3], 0.5))?;
    w.insert("tconv", init.normal(&[3, 2, 2, 2], 0.5))?;
    w.insert("lin", init.normal(&[5, 16], 0.5))?;
    grad_check(
        &mut w,
        |b| {
            let t = b.tape();
            let x = b.param("x")?;
            let c = t.conv2d(x, b.param("conv")?, None, 1, 1, 1)?;
            let u = t.conv_transpose2d(c, b.param("tconv")?, None, 2)?;
            let z = t.fft2d(u)?;
            let spec = t.concat(&[t.complex_re(z)?, t.complex_im(z)?], 0)?;
            let flat = t.reshape(t.narrow(spec, 1, 0, 16)?, &[4, 16, 16])?;
            let l = t.linear(t.permute(flat, &[0, 2, 1])?, b.param("lin")?, None)?;
            let back = t.complex_re(t.ifft2d(z)?)?;
            Ok(t.add(project(t, l, 1)?, project(t, back, 2)?)?)
        },
        |_| true,
        &opts(1e-3),
    )
}

fn smooth_ops() -> Result<GradCheckReport> {
    let mut init = Initializer::new(22);
    let mut w = ModelWeights::<f64>::new();
    w.insert("x", init.normal(&[4, 6], 1.0))?;
    w.insert("g", init.normal(&[4], 1.0))?;
    w.insert("b", init.normal(&[4], 1.0))?;
    grad_check(
        &mut w,
        |b| {
            let t = b.tape();
            let x = b.param("x")?;
            let n = t.layer_norm(x, b.param("g")?, b.param("b")?, 0, 1e-5)?;
            let a = t.gelu(n)?;
            let s = t.softmax(t.mul(a, t.sigmoid(x)?)?)?;
            let e = t.sqrt_eps(t.exp(t.mul_scalar(x, 0.3)?)?, 1e-6)?;
            let z = t.concat(&[t.reshape(x, &[1, 4, 6])?, t.reshape(t.sin(e)?, &[1, 4, 6])?], 0)?;
            let m = t.complex_abs(z)?;
            Ok(t.add(project(t, s, 3)?, project(t, t.add(m, t.cos(e)?)?, 4)?)?)
        },
        |_| true,
        &opts(1e-5),
    )
}

fn fast_block() -> Result<GradCheckReport> {
    let block = FastBlock::new("fast", 4);
    let mut init = Initializer::new(23);
    let mut w = ModelWeights::<f64>::new();
    block.register(&mut w, &mut init)?;
    let x: Tensor<f64> = init.normal(&[4, 16, 16], 1.0);
    let s: Tensor<f64> = init.normal(&[4, 16, 16], 1.0);
    grad_check(
        &mut w,
        |b| {
            let t = b.tape();
            let out = block.forward(b, t.constant(x.clone()), t.constant(s.clone()))?;
            project(t, out, 5)
        },
        |_| true,
        &opts(1e-6),
    )
}

fn fat_bottleneck() -> Result<GradCheckReport> {
    let cfg = FatConfig::new(8, (4, 4), 2, 1, 2, 8)?;
    let fat = FatBottleneck::new("fat", cfg);
    let mut init = Initializer::new(24);
    let mut w = ModelWeights::<f64>::new();
    fat.register(&mut w, &mut init)?;
    let x: Tensor<f64> = init.normal(&[8, 4, 4], 1.0);
    let s: Tensor<f64> = init.normal(&[8, 4, 4], 1.0);
    grad_check(
        &mut w,
        |b| {
            let t = b.tape();
            let out = fat.forward(b, t.constant(x.clone()), t.constant(s.clone()))?;
            project(t, out, 6)
        },
        |_| true,
        &opts(1e-6),
    )
}

fn snr_stage() -> Result<GradCheckReport> {
    let enc = SnrEncoder::new(4);
    let mut init = Initializer::new(25);
    let mut w = ModelWeights::<f64>::new();
    enc.register(&mut w, &mut init)?;
    let map = compute_snr_map(&warm_image(32, 32, 3))?.into_tensor().reshape(&[1, 32, 32])?;
    grad_check(
        &mut w,
        |b| {
            let t = b.tape();
            let out = enc.forward(b, t.constant(map.clone()))?;
            let mut total = project(t, out.bottom, 7)?;
            for (i, s) in out.skips.iter().enumerate() {
                total = t.add(total, project(t, *s, 8 + i as u64)?)?;
            }
            Ok(total)
        },
        |_| true,
        &opts(1e-6),
    )
}

fn model_and_loss(tier: Tier) -> Result<GradCheckReport> {
    let cfg = match tier {
        Tier::Test => ModelConfig::test_tier(),
        Tier::Tiny => ModelConfig {
            height: 32,
            width: 32,
            patch: 2,
            ..ModelConfig::test_tier()
        },
    };
    let (h, w) = (cfg.height, cfg.width);
    let net = SformerNet::new(cfg)?;
    // ReLU-gain weights keep every coordinate's gradient above the
    // resolution of central differences on a loss of this magnitude.
    let mut weights: ModelWeights<f64> = net.init_weights_with(&mut Initializer::new(11).with_slope(0.0))?;
    let x = warm_image(h, w, 1);
    let gt = warm_image(h, w, 2);
    let extractor = RandomPyramid::<f64>::default();
    let loss = LossConfig::default();
    grad_check(
        &mut weights,
        |b| {
            let t = b.tape();
            let pre = net.forward(b, t.constant(x.clone()))?;
            Ok(total_loss_t(t, pre, t.constant(gt.clone()), &loss, &extractor)?.0)
        },
        |_| true,
        &opts(1e-6),
    )
}

/// Runs every component check in double precision: tensor-core ops
/// (threshold 1e-4), the Fourier block, the transformer bottleneck, the SNR
/// encoder and the full model under the total loss (1e-2 each).
pub fn run_suite(tier: Tier) -> Result<Vec<SuiteEntry>> {
    let entry = |name, threshold, report| SuiteEntry { name, threshold, report };
    Ok(vec![
        entry("ops.linear", 1e-4, linear_ops()?),
        entry("ops.smooth", 1e-4, smooth_ops()?),
        entry("fast", 1e-2, fast_block()?),
        entry("fat", 1e-2, fat_bottleneck()?),
        entry("snr", 1e-2, snr_stage()?),
        entry("model+loss", 1e-2, model_and_loss(tier)?),
    ])
}
