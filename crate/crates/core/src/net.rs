//! The dual-branch U-shaped enhancement network.

use std::fmt;
use std::str::FromStr;

use crate::blocks::{self, EncoderOutput};
use crate::error::{Error, LayerContext, Result};
use crate::fast::FastBlock;
use crate::fat::{FatBottleneck, FatConfig, VitBottleneck};
use crate::snr::{compute_snr_map, SnrEncoder};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::weights::{Binder, Initializer, ModelWeights};

/// Encoder/decoder stage count.
pub const STAGES: usize = 4;

/// Named configurations of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// Plain U-Net with a convolutional bottleneck.
    Bl,
    /// Plain transformer bottleneck.
    Vit,
    /// Frequency-adaptive bottleneck only.
    Fat,
    /// Fourier skips only.
    Fast,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Ablation::Bl, Ablation::Vit, Ablation::Fat, Ablation::Fast, Ablation::Full];

    /// `(use_fast, use_fat, use_plain_vit)`
    pub fn toggles(self) -> (bool, bool, bool) {
        match self {
            Ablation::Bl => (false, false, false),
            Ablation::Vit => (false, false, true),
            Ablation::Fat => (false, true, false),
            Ablation::Fast => (true, false, false),
            Ablation::Full => (true, true, false),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Bl => "bl",
            Ablation::Vit => "vit",
            Ablation::Fat => "fat",
            Ablation::Fast => "fast",
            Ablation::Full => "full",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown ablation {s:?} (expected bl, vit, fat, fast or full)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub base_width: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub depth: usize,
    pub heads: usize,
    pub embed: usize,
    pub use_fast: bool,
    pub use_fat: bool,
    pub use_plain_vit: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_width: 16,
            height: 256,
            width: 256,
            patch: 4,
            depth: 4,
            heads: 4,
            embed: 128,
            use_fast: true,
            use_fat: true,
            use_plain_vit: false,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and quick experiments.
    pub fn test_tier() -> Self {
        ModelConfig {
            base_width: 4,
            height: 64,
            width: 64,
            patch: 4,
            depth: 1,
            heads: 2,
            embed: 16,
            ..ModelConfig::default()
        }
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        (self.use_fast, self.use_fat, self.use_plain_vit) = a.toggles();
        self
    }

    pub fn ablation(&self) -> Option<Ablation> {
        let t = (self.use_fast, self.use_fat, self.use_plain_vit);
        Ablation::ALL.into_iter().find(|a| a.toggles() == t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.patch == 0 {
            return Err(Error::Domain("base width and patch must be positive".into()));
        }
        if self.use_fat && self.use_plain_vit {
            return Err(Error::Domain(
                "the frequency-adaptive and plain transformer bottlenecks are mutually exclusive".into(),
            ));
        }
        let m = 16 * self.patch;
        if self.height == 0 || self.width == 0 || self.height % m != 0 || self.width % m != 0 {
            return Err(Error::dim(format!(
                "resolution {}x{} must be a positive multiple of {m} (16 x patch {})",
                self.height, self.width, self.patch
            )));
        }
        if self.use_fat || self.use_plain_vit {
            self.fat_config()?;
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_width << (STAGES - 1)
    }

    pub fn fat_config(&self) -> Result<FatConfig> {
        FatConfig::new(
            self.bottleneck_channels(),
            (self.height / 16, self.width / 16),
            self.patch,
            self.depth,
            self.heads,
            self.embed,
        )
    }

    pub fn uses_snr(&self) -> bool {
        self.use_fast || self.use_fat
    }
}

enum Bottleneck {
    Conv,
    Vit(VitBottleneck),
    Fat(FatBottleneck),
}

pub type Trace = Vec<(String, Vec<usize>)>;

pub struct SformerNet {
    cfg: ModelConfig,
    snr: Option<SnrEncoder>,
    fast: Vec<FastBlock>,
    bottleneck: Bottleneck,
}

impl SformerNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let snr = cfg.uses_snr().then(|| SnrEncoder::new(cfg.base_width));
        let fast = if cfg.use_fast {
            (0..STAGES)
                .map(|i| FastBlock::new(format!("fast{}", i + 1), cfg.base_width << i))
                .collect()
        } else {
            Vec::new()
        };
        let bottleneck = if cfg.use_fat {
            Bottleneck::Fat(FatBottleneck::new("fat", cfg.fat_config()?))
        } else if cfg.use_plain_vit {
            Bottleneck::Vit(VitBottleneck::new("vit", cfg.fat_config()?))
        } else {
            Bottleneck::Conv
        };
        Ok(SformerNet {
            cfg,
            snr,
            fast,
            bottleneck,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Registers every parameter the active configuration uses.
    pub fn register<T: Real>(&self, w: &mut ModelWeights<T>, init: &mut Initializer) -> Result<()> {
        let c0 = self.cfg.base_width;
        blocks::register_encoder(w, init, "enc", 3, c0)?;
        if let Some(s) = &self.snr {
            s.register(w, init)?;
        }
        for f in &self.fast {
            f.register(w, init)?;
        }
        let cb = self.cfg.bottleneck_channels();
        match &self.bottleneck {
            Bottleneck::Conv => blocks::register_double_conv(w, init, "mid", cb, cb)?,
            Bottleneck::Vit(v) => v.register(w, init)?,
            Bottleneck::Fat(f) => f.register(w, init)?,
        }
        let mut c_in = cb;
        for i in (0..STAGES).rev() {
            let c = c0 << i;
            let name = format!("dec{}", i + 1);
            w.insert(format!("{name}.up.w"), init.kaiming_uniform(&[c_in, c, 2, 2], c_in * 4))?;
            w.insert(format!("{name}.up.b"), Tensor::zeros(&[c]))?;
            blocks::register_double_conv(w, init, &name, 2 * c, c)?;
            c_in = c;
        }
        blocks::register_conv(w, init, "head", c0, 3, 1)
    }

    pub fn init_weights<T: Real>(&self, seed: u64) -> Result<ModelWeights<T>> {
        self.init_weights_with(&mut Initializer::new(seed))
    }

    pub fn init_weights_with<T: Real>(&self, init: &mut Initializer) -> Result<ModelWeights<T>> {
        let mut w = ModelWeights::new();
        self.register(&mut w, init)?;
        Ok(w)
    }

    pub fn forward<T: Real>(&self, b: &Binder<T>, input: Var) -> Result<Var> {
        self.forward_traced(b, input, None)
    }

    pub fn forward_traced<T: Real>(&self, b: &Binder<T>, input: Var, trace: Option<&mut Trace>) -> Result<Var> {
        let t = b.tape();
        let mut trace = trace;
        let shape = t.shape(input);
        let expected = [3, self.cfg.height, self.cfg.width];
        if shape != expected {
            return Err(Error::dim(format!(
                "input {shape:?} does not match the configured resolution {expected:?}"
            )));
        }
        let mut record = |name: &str, v: Var| {
            if let Some(tr) = trace.as_mut() {
                tr.push((name.to_string(), t.shape(v)));
            }
        };
        record("input", input);

        let EncoderOutput { skips, bottom } = {
            let mut sub = Vec::new();
            let out = blocks::encoder(b, "enc", input, &mut Some(&mut sub))?;
            for (n, s) in sub {
                if let Some(tr) = trace.as_mut() {
                    tr.push((n, s));
                }
            }
            out
        };
        let mut record = |name: &str, v: Var| {
            if let Some(tr) = trace.as_mut() {
                tr.push((name.to_string(), t.shape(v)));
            }
        };

        let snr = match &self.snr {
            Some(enc) => {
                let map = compute_snr_map(&t.value(input))?;
                let s = t.constant(map.into_tensor());
                record("snr", s);
                Some(enc.forward(b, s).layer("snr")?)
            }
            None => None,
        };

        let mut skips = skips;
        if let Some(snr) = &snr {
            for (i, f) in self.fast.iter().enumerate() {
                skips[i] = f.forward(b, skips[i], snr.skips[i]).layer(&f.prefix)?;
                record(&f.prefix, skips[i]);
            }
        }

        let mut h = match &self.bottleneck {
            Bottleneck::Conv => blocks::double_conv(b, "mid", bottom).layer("mid")?,
            Bottleneck::Vit(v) => v.forward(b, bottom).layer("vit")?,
            Bottleneck::Fat(f) => {
                let s = snr.as_ref().map(|s| s.bottom).ok_or_else(|| Error::dim("missing SNR bottleneck"))?;
                f.forward(b, bottom, s).layer("fat")?
            }
        };
        record("bottleneck", h);

        for i in (0..STAGES).rev() {
            let name = format!("dec{}", i + 1);
            let up = {
                let w = b.param(&format!("{name}.up.w"))?;
                let bias = b.param(&format!("{name}.up.b"))?;
                t.conv_transpose2d(h, w, Some(bias), 2).layer(&name)?
            };
            let ts = t.shape(up);
            let skip = blocks::center_crop(b, skips[i], ts[1], ts[2]).layer(&name)?;
            let cat = t.concat(&[up, skip], 0).layer(&name)?;
            h = blocks::double_conv(b, &name, cat).layer(&name)?;
            record(&name, h);
        }

        let residual = blocks::conv(b, "head", h, 1, 0, 1).layer("head")?;
        record("head", residual);
        let out = t.clamp(t.add(input, residual)?, T::zero(), T::one()).layer("output")?;
        record("output", out);
        Ok(out)
    }

    /// Inference over a concrete image.
    pub fn enhance<T: Real>(&self, weights: &ModelWeights<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let b = Binder::frozen(&tape, weights);
        let y = self.forward(&b, tape.constant(image.clone()))?;
        Ok((*tape.value(y)).clone())
    }

    /// Named shapes of every stage in execution order.
    pub fn encode_decode_trace<T: Real>(&self, weights: &ModelWeights<T>, image: &Tensor<T>) -> Result<Trace> {
        let tape = Tape::new();
        let b = Binder::frozen(&tape, weights);
        let mut trace = Vec::new();
        self.forward_traced(&b, tape.constant(image.clone()), Some(&mut trace))?;
        Ok(trace)
    }
}
