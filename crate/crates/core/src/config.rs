//! Run configuration: a small TOML subset (`key = value`, `#` comments,
//! `[model]`, `[train]`, `[loss]` and `[synth]` sections).
//!
//! Every error carries the line and key it refers to; keys that are absent
//! take the defaults printed by [`RunConfig::dump_defaults`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossWeights};
use crate::net::{Ablation, ModelConfig};
use crate::synth::AugmentPolicy;
use crate::train::{AdamHyper, TrainConfig};

/// Version of the defaults table; bumped whenever a default changes.
pub const DEFAULTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub synth: SynthSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub base_width: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub depth: usize,
    pub heads: usize,
    pub embed: usize,
    /// One of `bl`, `vit`, `fat`, `fast`, `full`.
    pub ablation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr0: f64,
    pub lr_min: f64,
    pub steps: usize,
    pub batch: usize,
    pub restart_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    /// Seed for sampling order and augmentation.
    pub seed: u64,
    /// Seed for weight initialization.
    pub init_seed: u64,
    pub augment: bool,
    pub flip: bool,
    pub rotate: bool,
    pub scale: bool,
    /// Square training crop; 0 trains on whole images.
    pub crop: usize,
    pub mixup: f64,
    pub checkpoint_every: usize,
    /// Worker threads; 0 is serial. `SFORMER_THREADS` overrides this.
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub lambda: f64,
    pub wrap_hue: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub count: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: DEFAULTS_VERSION,
            model: ModelSection::default(),
            train: TrainSection::default(),
            loss: LossSection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            base_width: m.base_width,
            height: m.height,
            width: m.width,
            patch: m.patch,
            depth: m.depth,
            heads: m.heads,
            embed: m.embed,
            ablation: Ablation::Full.name().into(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let aug = t.augment.clone().unwrap_or_default();
        TrainSection {
            lr0: t.lr0,
            lr_min: t.lr_min,
            steps: t.steps,
            batch: t.batch,
            restart_epochs: t.restart_epochs,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            weight_decay: t.adam.weight_decay,
            grad_clip: t.grad_clip.unwrap_or(0.0),
            seed: t.seed,
            init_seed: 0,
            augment: t.augment.is_some(),
            flip: aug.flip,
            rotate: aug.rotate,
            scale: aug.scale,
            crop: aug.crop.map_or(0, |c| c.0),
            mixup: aug.mixup,
            checkpoint_every: t.checkpoint_every,
            threads: t.threads,
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        let [alpha, beta, gamma, mu, lambda] = l.weights.as_array();
        LossSection {
            alpha,
            beta,
            gamma,
            mu,
            lambda,
            wrap_hue: l.wrap_hue,
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            count: 16,
            resolution: 64,
            seed: 7,
        }
    }
}

/// Byte offset to 1-based line number.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Key written on a line: the name left of `=`, or a section header.
fn key_on_line(text: &str, line: usize) -> String {
    let raw = text.lines().nth(line.saturating_sub(1)).unwrap_or("");
    let raw = raw.split('#').next().unwrap_or("").trim();
    if let Some(h) = raw.strip_prefix('[') {
        return h.trim_end_matches(']').trim().to_string();
    }
    raw.split('=').next().unwrap_or("").trim().to_string()
}

/// Line on which `section.key` is set, or 0 when it is left at its default.
fn locate(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.split('#').next().unwrap_or("").trim();
        if let Some(h) = l.strip_prefix('[') {
            current = h.trim_end_matches(']').trim().to_string();
        } else if current == section && l.split('=').next().map(str::trim) == Some(key) {
            return i + 1;
        }
    }
    0
}

impl RunConfig {
    /// Parses and validates configuration text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            let key = if line > 0 { key_on_line(text, line) } else { String::new() };
            Error::Config {
                line,
                key,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    /// The defaults table in the file format, headed by its version.
    pub fn dump_defaults() -> String {
        let body = toml::to_string(&RunConfig::default()).expect("defaults serialize");
        format!("# sformer run configuration, defaults table v{DEFAULTS_VERSION}\n{body}")
    }

    fn validate(&self, text: &str) -> Result<()> {
        let err = |section: &str, key: &str, message: String| Error::Config {
            line: locate(text, section, key),
            key: key.into(),
            message,
        };
        if self.version != DEFAULTS_VERSION {
            return Err(err(
                "",
                "version",
                format!("unsupported config version {} (expected {DEFAULTS_VERSION})", self.version),
            ));
        }
        let m = &self.model;
        let ablation: Ablation = m.ablation.parse().map_err(|e: Error| err("model", "ablation", e.to_string()))?;
        for (key, v) in [
            ("base_width", m.base_width),
            ("patch", m.patch),
            ("depth", m.depth),
            ("heads", m.heads),
            ("embed", m.embed),
        ] {
            if v == 0 {
                return Err(err("model", key, "must be positive".into()));
            }
        }
        let multiple = 16 * m.patch;
        for (key, v) in [("height", m.height), ("width", m.width)] {
            if v == 0 || v % multiple != 0 {
                return Err(err(
                    "model",
                    key,
                    format!("{v} is not a positive multiple of {multiple} (16 x patch {})", m.patch),
                ));
            }
        }
        if ablation.toggles().1 || ablation.toggles().2 {
            if m.embed % m.heads != 0 {
                return Err(err("model", "embed", format!("{} is not divisible by {} heads", m.embed, m.heads)));
            }
            if (m.height / 16) % m.patch != 0 || (m.width / 16) % m.patch != 0 {
                return Err(err("model", "patch", "bottleneck is not divisible by the patch size".into()));
            }
        }
        let t = &self.train;
        if !(0.0..=1.0).contains(&t.mixup) {
            return Err(err("train", "mixup", format!("probability must lie in [0, 1], got {}", t.mixup)));
        }
        if !(t.grad_clip >= 0.0 && t.grad_clip.is_finite()) {
            return Err(err("train", "grad_clip", format!("must be a finite non-negative number, got {}", t.grad_clip)));
        }
        for (key, v) in [("beta1", t.beta1), ("beta2", t.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(err("train", key, format!("must lie in [0, 1), got {v}")));
            }
        }
        if !(t.eps > 0.0) {
            return Err(err("train", "eps", format!("must be positive, got {}", t.eps)));
        }
        if t.crop != 0 && (t.crop % multiple != 0) {
            return Err(err("train", "crop", format!("{} is not a multiple of {multiple}", t.crop)));
        }
        let s = &self.synth;
        if s.count == 0 {
            return Err(err("synth", "count", "must be positive".into()));
        }
        if s.resolution == 0 {
            return Err(err("synth", "resolution", "must be positive".into()));
        }
        let relocate = |e: Error| match e {
            Error::Config { key, message, .. } => {
                let section = if LossWeights::KEYS.contains(&key.as_str()) { "loss" } else { "train" };
                Error::Config {
                    line: locate(text, section, &key),
                    key,
                    message,
                }
            }
            other => other,
        };
        self.train_config().validate().map_err(relocate)
    }

    pub fn ablation(&self) -> Ablation {
        self.model.ablation.parse().unwrap_or(Ablation::Full)
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            base_width: m.base_width,
            height: m.height,
            width: m.width,
            patch: m.patch,
            depth: m.depth,
            heads: m.heads,
            embed: m.embed,
            ..ModelConfig::default()
        }
        .with_ablation(self.ablation())
    }

    pub fn loss_config(&self) -> LossConfig {
        let l = &self.loss;
        LossConfig {
            weights: LossWeights {
                alpha: l.alpha,
                beta: l.beta,
                gamma: l.gamma,
                mu: l.mu,
                lambda: l.lambda,
            },
            wrap_hue: l.wrap_hue,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr0: t.lr0,
            lr_min: t.lr_min,
            steps: t.steps,
            batch: t.batch,
            restart_epochs: t.restart_epochs,
            adam: AdamHyper {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                weight_decay: t.weight_decay,
            },
            grad_clip: (t.grad_clip > 0.0).then_some(t.grad_clip),
            seed: t.seed,
            loss: self.loss_config(),
            augment: t.augment.then(|| AugmentPolicy {
                flip: t.flip,
                rotate: t.rotate,
                scale: t.scale,
                crop: (t.crop > 0).then_some((t.crop, t.crop)),
                mixup: t.mixup,
            }),
            checkpoint_every: t.checkpoint_every,
            checkpoint_dir: None::<PathBuf>,
            threads: t.threads,
        }
    }
}
