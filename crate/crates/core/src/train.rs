//! Optimization loop: AdamW with decoupled weight decay, cosine annealing
//! with warm restarts, optional augmentation, gradient clipping and
//! resumable checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::loss::{total_loss_t, LossBreakdown, LossConfig, RandomPyramid};
use crate::metrics;
use crate::net::SformerNet;
use crate::synth::{self, derive_seed, AugmentPolicy, PairedSample};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};
use crate::weights::{self, Binder, ModelWeights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: ModelWeights<T>,
    pub v: ModelWeights<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(weights: &ModelWeights<T>) -> Self {
        let mut zero = ModelWeights::new();
        for p in weights.params() {
            zero.insert(p.name.clone(), Tensor::zeros(p.value.shape()))
                .expect("names are unique in the source registry");
        }
        AdamState {
            m: zero.clone(),
            v: zero,
            t: 0,
        }
    }
}

/// One AdamW update from the gradients stored in `weights`.
pub fn adamw_step<T: Real>(weights: &mut ModelWeights<T>, state: &mut AdamState<T>, lr: f64, hp: &AdamHyper) -> Result<()> {
    weights.expect_layout(&state.m)?;
    if let Some(p) = weights.params().iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::numeric(format!("non-finite gradient for parameter `{}`", p.name)));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let step = T::lit(lr / bc1);
    let sqrt_bc2 = T::lit(bc2.sqrt());
    let decay = T::lit(1.0 - lr * hp.weight_decay);
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let eps = T::lit(hp.eps);
    let one = T::one();
    for ((p, m), v) in weights
        .params_mut()
        .iter_mut()
        .zip(state.m.params_mut())
        .zip(state.v.params_mut())
    {
        let g = p.grad.data();
        for (i, x) in p.value.data_mut().iter_mut().enumerate() {
            let gi = g[i];
            let mi = &mut m.value.data_mut()[i];
            *mi = b1 * *mi + (one - b1) * gi;
            let vi = &mut v.value.data_mut()[i];
            *vi = b2 * *vi + (one - b2) * gi * gi;
            *x = *x * decay - step * *mi / (vi.sqrt() / sqrt_bc2 + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub steps: usize,
    pub batch: usize,
    /// Restart period of the cosine schedule in epochs.
    pub restart_epochs: usize,
    pub adam: AdamHyper,
    /// Global gradient-norm limit; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub loss: LossConfig,
    pub augment: Option<AugmentPolicy>,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Worker threads for per-sample gradients; 0 runs serially.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            lr_min: 1e-6,
            steps: 200,
            batch: 4,
            restart_epochs: 50,
            adam: AdamHyper::default(),
            grad_clip: Some(5.0),
            seed: 0,
            loss: LossConfig::default(),
            augment: Some(AugmentPolicy {
                mixup: 0.5,
                ..AugmentPolicy::default()
            }),
            checkpoint_every: 0,
            checkpoint_dir: None,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Error::Config {
            line: 0,
            key: key.into(),
            message,
        };
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0 && self.lr0.is_finite()) {
            return Err(bad("lr_min", format!("need 0 ≤ lr_min ≤ lr0, got {} and {}", self.lr_min, self.lr0)));
        }
        if self.batch == 0 {
            return Err(bad("batch", "batch must be at least 1".into()));
        }
        if self.restart_epochs == 0 {
            return Err(bad("restart_epochs", "restart period must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(bad("grad_clip", format!("clip norm must be positive, got {c}")));
            }
        }
        self.loss.weights.validate()
    }

    pub fn steps_per_epoch(&self, dataset: usize) -> usize {
        dataset.div_ceil(self.batch).max(1)
    }

    /// Restart period in optimizer steps.
    pub fn restart_steps(&self, dataset: usize) -> usize {
        self.restart_epochs * self.steps_per_epoch(dataset)
    }
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·(step mod T₀)/T₀))`.
pub fn cosine_restart_lr(step: usize, lr0: f64, lr_min: f64, period: usize) -> f64 {
    let period = period.max(1);
    let phase = (step % period) as f64 / period as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * phase).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Batch-mean weighted total loss.
    pub loss: f64,
    pub terms: LossBreakdown,
    pub grad_norm: f64,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub weights: ModelWeights<f32>,
    pub adam: AdamState<f32>,
    pub step: usize,
}

impl TrainState {
    pub fn new(weights: ModelWeights<f32>) -> Self {
        TrainState {
            adam: AdamState::new(&weights),
            weights,
            step: 0,
        }
    }
}

const AUGMENT_STREAM: u64 = 0xA0_6000;
const ORDER_STREAM: u64 = 0x0D_0000;

/// Dataset index of the `k`-th sample drawn, epoch-wise shuffled.
fn sample_index(seed: u64, k: usize, n: usize) -> (usize, usize) {
    let epoch = k / n;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut synth::rng(derive_seed(seed ^ ORDER_STREAM, epoch as u64)));
    let pos = k % n;
    (order[pos], order[(pos + 1) % n])
}

fn batch_samples(cfg: &TrainConfig, data: &[PairedSample], step: usize) -> Result<Vec<PairedSample>> {
    (0..cfg.batch)
        .map(|j| {
            let k = step * cfg.batch + j;
            let (i, partner) = sample_index(cfg.seed, k, data.len());
            match &cfg.augment {
                Some(policy) => {
                    let seed = derive_seed(cfg.seed ^ AUGMENT_STREAM, k as u64);
                    let other = (data.len() > 1).then(|| &data[partner]);
                    Ok(synth::augment(&data[i], other, policy, seed)?.0)
                }
                None => Ok(data[i].clone()),
            }
        })
        .collect()
}

struct SampleGrad {
    grads: Vec<(usize, Tensor<f32>)>,
    terms: LossBreakdown,
}

fn sample_grad(
    net: &SformerNet,
    weights: &ModelWeights<f32>,
    loss: &LossConfig,
    extractor: &RandomPyramid<f32>,
    s: &PairedSample,
) -> Result<SampleGrad> {
    let tape = Tape::new();
    let b = Binder::new(&tape, weights);
    let x = tape.constant(s.degraded.clone());
    let y = tape.constant(s.reference.clone());
    let pre = net.forward(&b, x)?;
    let (total, terms) = total_loss_t(&tape, pre, y, loss, extractor)?;
    let mut grads = tape.backward(total)?;
    Ok(SampleGrad {
        grads: b.collect(&mut grads),
        terms,
    })
}

fn mean_terms(items: &[SampleGrad]) -> LossBreakdown {
    let n = items.len() as f64;
    let f = |g: fn(&LossBreakdown) -> f64| items.iter().map(|s| g(&s.terms)).sum::<f64>() / n;
    LossBreakdown {
        spatial: f(|t| t.spatial),
        freq: f(|t| t.freq),
        lab: f(|t| t.lab),
        lch: f(|t| t.lch),
        perceptual: f(|t| t.perceptual),
        total: f(|t| t.total),
    }
}

fn global_norm(w: &ModelWeights<f32>) -> f64 {
    w.params()
        .iter()
        .flat_map(|p| p.grad.data())
        .map(|&g| f64::from(g) * f64::from(g))
        .sum::<f64>()
        .sqrt()
}

fn check_dataset(net: &SformerNet, data: &[PairedSample], cfg: &TrainConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Domain("training needs at least one pair".into()));
    }
    let c = net.config();
    let crop = cfg.augment.as_ref().and_then(|a| a.crop);
    let want = crop.unwrap_or((c.height, c.width));
    if want != (c.height, c.width) {
        return Err(Error::dim(format!(
            "augmentation crop {want:?} differs from the model resolution {}x{}",
            c.height, c.width
        )));
    }
    for s in data {
        let (h, w) = s.dims();
        let ok = if crop.is_some() { h >= want.0 && w >= want.1 } else { (h, w) == want };
        if !ok || s.degraded.shape() != s.reference.shape() {
            return Err(Error::dim(format!(
                "pair `{}` is {h}x{w}; the model expects {}x{}",
                s.id, c.height, c.width
            )));
        }
    }
    Ok(())
}

fn pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads == 0 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))
}

/// Runs optimizer steps from `state.step` up to `cfg.steps`, calling
/// `on_step` after each one.
pub fn train_from(
    net: &SformerNet,
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &[PairedSample],
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    check_dataset(net, data, cfg)?;
    state.weights.expect_layout(&state.adam.m)?;
    let extractor = RandomPyramid::<f32>::default();
    let period = cfg.restart_steps(data.len());
    let workers = pool(cfg.threads)?;
    let mut curve = Vec::new();
    while state.step < cfg.steps {
        let step = state.step;
        let at = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
            other => other,
        };
        let batch = batch_samples(cfg, data, step)?;
        let weights = &state.weights;
        let run = |s: &PairedSample| sample_grad(net, weights, &cfg.loss, &extractor, s);
        let results: Vec<Result<SampleGrad>> = match &workers {
            Some(p) => p.install(|| {
                use rayon::prelude::*;
                batch.par_iter().map(run).collect()
            }),
            None => batch.iter().map(run).collect(),
        };
        let items = results.into_iter().collect::<Result<Vec<_>>>().map_err(at)?;

        state.weights.zero_grad();
        for it in &items {
            state.weights.accumulate(&it.grads);
        }
        let inv = 1.0 / items.len() as f32;
        for p in state.weights.params_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= inv);
        }
        let grad_norm = global_norm(&state.weights);
        if !grad_norm.is_finite() {
            return Err(Error::numeric(format!("step {step}: non-finite gradient norm")));
        }
        if let Some(c) = cfg.grad_clip {
            if grad_norm > c {
                let s = (c / grad_norm) as f32;
                for p in state.weights.params_mut() {
                    p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
                }
            }
        }
        let lr = cosine_restart_lr(step, cfg.lr0, cfg.lr_min, period);
        adamw_step(&mut state.weights, &mut state.adam, lr, &cfg.adam).map_err(at)?;
        state.step += 1;

        let terms = mean_terms(&items);
        let rec = StepRecord {
            step,
            lr,
            loss: terms.total,
            terms,
            grad_norm,
        };
        on_step(&rec);
        curve.push(rec);

        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
            if let Some(dir) = &cfg.checkpoint_dir {
                save_checkpoint(dir, state, cfg.seed)?;
            }
        }
    }
    Ok(curve)
}

/// Trains from `weights` for `cfg.steps` steps.
pub fn train(
    net: &SformerNet,
    weights: ModelWeights<f32>,
    cfg: &TrainConfig,
    data: &[PairedSample],
) -> Result<(ModelWeights<f32>, Vec<StepRecord>)> {
    let mut state = TrainState::new(weights);
    let curve = train_from(net, &mut state, cfg, data, |_| {})?;
    Ok((state.weights, curve))
}

pub const CURVE_HEADER: &str = "step\tlr\tloss\tspatial\tfreq\tlab\tlch\tperceptual\tgrad_norm";

pub fn curve_row(r: &StepRecord) -> String {
    let t = &r.terms;
    format!(
        "{}\t{:.6e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}",
        r.step, r.lr, r.loss, t.spatial, t.freq, t.lab, t.lch, t.perceptual, r.grad_norm
    )
}

/// Tab-separated loss curve with a header row.
pub fn curve_tsv(curve: &[StepRecord]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in curve {
        s.push_str(&curve_row(r));
        s.push('\n');
    }
    s
}

/// Trailing-window mean of the loss column.
pub fn smoothed(curve: &[StepRecord], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..curve.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            curve[lo..=i].iter().map(|r| r.loss).sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Mean PSNR of the model's output against the references.
pub fn dataset_psnr(net: &SformerNet, weights: &ModelWeights<f32>, data: &[PairedSample]) -> Result<f64> {
    let mut s = 0.0;
    for p in data {
        let y = net.enhance(weights, &p.degraded)?;
        s += metrics::psnr(&y, &p.reference)?;
    }
    Ok(s / data.len().max(1) as f64)
}

// ---- checkpoints ----------------------------------------------------------

pub const CKPT_WEIGHTS: &str = "weights.sfw";
pub const CKPT_M: &str = "adam_m.sfw";
pub const CKPT_V: &str = "adam_v.sfw";
pub const CKPT_STATE: &str = "state.txt";

fn data_checksum(w: &ModelWeights<f32>) -> u64 {
    w.params()
        .iter()
        .flat_map(|p| p.value.data())
        .flat_map(|v| v.to_le_bytes())
        .fold(0u64, |a, b| a.wrapping_add(u64::from(b)))
}

pub fn save_checkpoint(dir: impl AsRef<Path>, state: &TrainState, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    weights::save_weights(&state.weights, dir.join(CKPT_WEIGHTS))?;
    weights::save_weights(&state.adam.m, dir.join(CKPT_M))?;
    weights::save_weights(&state.adam.v, dir.join(CKPT_V))?;
    let mut s = String::new();
    let _ = writeln!(s, "step = {}", state.step);
    let _ = writeln!(s, "adam_t = {}", state.adam.t);
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "m_checksum = {}", data_checksum(&state.adam.m));
    let _ = writeln!(s, "v_checksum = {}", data_checksum(&state.adam.v));
    let p = dir.join(CKPT_STATE);
    std::fs::write(&p, s).map_err(|e| Error::io(&p, e))
}

/// Loads a checkpoint; returns the state and the recorded seed.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(TrainState, u64)> {
    let dir = dir.as_ref();
    let p = dir.join(CKPT_STATE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut kv = std::collections::HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("{}:{}: expected key = value", p.display(), n + 1)))?;
        let v: u64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}:{}: `{}` is not an integer", p.display(), n + 1, k.trim())))?;
        kv.insert(k.trim().to_string(), v);
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("{}: missing `{k}`", p.display())))
    };
    let weights = weights::load_weights(dir.join(CKPT_WEIGHTS))?;
    let m = weights::load_weights(dir.join(CKPT_M))?;
    let v = weights::load_weights(dir.join(CKPT_V))?;
    weights.expect_layout(&m)?;
    weights.expect_layout(&v)?;
    if data_checksum(&m) != get("m_checksum")? || data_checksum(&v) != get("v_checksum")? {
        return Err(Error::Format(format!("{}: moment buffers do not match the recorded checksums", dir.display())));
    }
    let state = TrainState {
        weights,
        adam: AdamState { m, v, t: get("adam_t")? },
        step: get("step")? as usize,
    };
    Ok((state, get("seed")?))
}
