//! Transformer bottlenecks: the frequency-adaptive stack (SNR cross-attention,
//! self-attention, adaptive feed-forward) and a plain pre-norm ViT used for
//! ablations.

use crate::blocks;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::weights::{Binder, Initializer, ModelWeights};

/// Standard deviation of the positional-embedding initializer.
pub const PE_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FatConfig {
    /// Channels of the bottleneck feature map.
    pub channels: usize,
    pub patch: usize,
    pub depth: usize,
    pub heads: usize,
    pub embed: usize,
    /// Token grid `(gH, gW)`.
    pub grid: (usize, usize),
}

impl FatConfig {
    pub fn new(
        channels: usize,
        bottleneck: (usize, usize),
        patch: usize,
        depth: usize,
        heads: usize,
        embed: usize,
    ) -> Result<Self> {
        if patch == 0 || heads == 0 || embed == 0 || channels == 0 {
            return Err(Error::Domain("transformer sizes must be positive".into()));
        }
        if embed % heads != 0 {
            return Err(Error::dim(format!(
                "embedding dim {embed} is not divisible by {heads} heads"
            )));
        }
        let (h, w) = bottleneck;
        if h == 0 || w == 0 || h % patch != 0 || w % patch != 0 {
            return Err(Error::dim(format!(
                "bottleneck {h}x{w} is not divisible by patch {patch}"
            )));
        }
        Ok(FatConfig {
            channels,
            patch,
            depth,
            heads,
            embed,
            grid: (h / patch, w / patch),
        })
    }

    pub fn tokens(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn head_dim(&self) -> usize {
        self.embed / self.heads
    }

    /// Hidden width of the channel-attention squeeze.
    pub fn squeeze(&self) -> usize {
        (self.embed / 4).max(1)
    }

    pub fn map_shape(&self) -> [usize; 3] {
        [self.channels, self.grid.0 * self.patch, self.grid.1 * self.patch]
    }
}

/// Result of an attention call: projected output and one `N×N` weight
/// matrix per head.
pub struct Attention {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// Gate behaviour in the adaptive feed-forward network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AffnGates {
    #[default]
    Learned,
    /// Channel and spatial attention replaced by all-ones maps.
    Open,
}

/// Intermediates of one adaptive feed-forward pass, as `d×gH×gW` maps
/// except `out` (tokens) and `ca` (`d×1×1`).
pub struct AffnParts {
    pub normed: Var,
    pub low: Var,
    pub high: Var,
    pub ca: Option<Var>,
    pub sa: Option<Var>,
    pub fused: Var,
    pub gate: Var,
    pub out: Var,
}

fn register_attention<T: Real>(w: &mut ModelWeights<T>, init: &mut Initializer, name: &str, d: usize) -> Result<()> {
    for p in ["q", "k", "v", "o"] {
        blocks::register_linear(w, init, &format!("{name}.{p}"), d, d)?;
    }
    Ok(())
}

/// Multi-head scaled dot-product attention; queries from `q_src`, keys and
/// values from `kv_src`, both `N×d`.
pub fn attention<T: Real>(b: &Binder<T>, name: &str, q_src: Var, kv_src: Var, heads: usize) -> Result<Attention> {
    let t = b.tape();
    let (qs, ks) = (t.shape(q_src), t.shape(kv_src));
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::dim(format!("{name}: token shapes {qs:?} and {ks:?} are incompatible")));
    }
    let d = qs[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim(format!("{name}: dim {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let q = blocks::linear(b, &format!("{name}.q"), q_src)?;
    let k = blocks::linear(b, &format!("{name}.k"), kv_src)?;
    let v = blocks::linear(b, &format!("{name}.v"), kv_src)?;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.narrow(q, 1, h * dh, dh)?;
        let kh = t.narrow(k, 1, h * dh, dh)?;
        let vh = t.narrow(v, 1, h * dh, dh)?;
        let scores = t.mul_scalar(t.matmul(qh, t.transpose(kh)?)?, scale)?;
        let a = t.softmax(scores)?;
        outs.push(t.matmul(a, vh)?);
        weights.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { t.concat(&outs, 1)? };
    let out = blocks::linear(b, &format!("{name}.o"), cat)?;
    Ok(Attention { out, weights })
}

/// Converts between `N×d` tokens and `d×gH×gW` maps.
fn tokens_to_map<T: Real>(t: &Tape<T>, x: Var, grid: (usize, usize)) -> Result<Var> {
    let s = t.shape(x);
    if s.len() != 2 || s[0] != grid.0 * grid.1 {
        return Err(Error::dim(format!(
            "{} tokens do not fill the configured {}x{} grid",
            s.first().copied().unwrap_or(0),
            grid.0,
            grid.1
        )));
    }
    let m = t.transpose(x)?;
    t.reshape(m, &[s[1], grid.0, grid.1])
}

fn map_to_tokens<T: Real>(t: &Tape<T>, x: Var) -> Result<Var> {
    let s = t.shape(x);
    let m = t.reshape(x, &[s[0], s[1] * s[2]])?;
    t.transpose(m)
}

#[derive(Clone, Debug)]
pub struct FatBottleneck {
    pub prefix: String,
    pub cfg: FatConfig,
}

impl FatBottleneck {
    pub fn new(prefix: impl Into<String>, cfg: FatConfig) -> Self {
        FatBottleneck {
            prefix: prefix.into(),
            cfg,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    fn layer(&self, i: usize, part: &str) -> String {
        format!("{}.layer{i}.{part}", self.prefix)
    }

    pub fn register<T: Real>(&self, w: &mut ModelWeights<T>, init: &mut Initializer) -> Result<()> {
        let c = &self.cfg;
        let d = c.embed;
        register_embed(w, init, &self.name("embed_rgb"), c)?;
        register_embed(w, init, &self.name("embed_snr"), c)?;
        w.insert(self.name("pe"), init.normal(&[c.tokens(), d], PE_STD))?;
        register_attention(w, init, &self.name("xattn"), d)?;
        for i in 0..c.depth {
            blocks::register_norm(w, &self.layer(i, "ln1"), d)?;
            register_attention(w, init, &self.layer(i, "attn"), d)?;
            blocks::register_norm(w, &self.layer(i, "ln2"), d)?;
            blocks::register_linear(w, init, &self.layer(i, "ca.fc1"), d, c.squeeze())?;
            blocks::register_linear(w, init, &self.layer(i, "ca.fc2"), c.squeeze(), d)?;
            blocks::register_conv(w, init, &self.layer(i, "sa"), 2, 1, 3)?;
            // Depthwise: one input channel per group, two outputs per channel.
            w.insert(self.layer(i, "dconv.w"), init.kaiming_uniform(&[2 * d, 1, 3, 3], 9))?;
            w.insert(self.layer(i, "dconv.b"), Tensor::zeros(&[2 * d]))?;
        }
        blocks::register_linear(w, init, &self.name("deembed"), d, c.channels * c.patch * c.patch)
    }

    /// `C×h×w` feature map to `N×d` tokens.
    pub fn patch_embed<T: Real>(&self, b: &Binder<T>, feature: Var, which: &str) -> Result<Var> {
        embed(b, &self.name(&format!("embed_{which}")), feature, &self.cfg)
    }

    pub fn cross_attention<T: Real>(&self, b: &Binder<T>, t_r: Var, t_s: Var) -> Result<Attention> {
        let t = b.tape();
        let a = attention(b, &self.name("xattn"), t_r, t_s, self.cfg.heads)?;
        let pe = b.param(&self.name("pe"))?;
        let out = t.add(t.add(a.out, t_r)?, pe)?;
        Ok(Attention { out, weights: a.weights })
    }

    pub fn mha_block<T: Real>(&self, b: &Binder<T>, i: usize, p: Var) -> Result<Attention> {
        let t = b.tape();
        let n = blocks::norm(b, &self.layer(i, "ln1"), p, 1)?;
        let a = attention(b, &self.layer(i, "attn"), n, n, self.cfg.heads)?;
        Ok(Attention {
            out: t.add(a.out, p)?,
            weights: a.weights,
        })
    }

    pub fn affn<T: Real>(&self, b: &Binder<T>, i: usize, p: Var) -> Result<Var> {
        Ok(self.affn_parts(b, i, p, AffnGates::Learned)?.out)
    }

    pub fn affn_parts<T: Real>(&self, b: &Binder<T>, i: usize, p: Var, gates: AffnGates) -> Result<AffnParts> {
        let t = b.tape();
        let c = &self.cfg;
        let d = c.embed;
        let ln = blocks::norm(b, &self.layer(i, "ln2"), p, 1)?;
        let normed = tokens_to_map(t, ln, c.grid)?;
        let flat = t.reshape(normed, &[d, c.tokens()])?;
        let low = t.reshape(t.mean_axis(flat, 1, true)?, &[d, 1, 1])?;
        let high = t.sub(normed, low)?;

        let (fused, ca, sa) = match gates {
            AffnGates::Open => (t.add(low, high)?, None, None),
            AffnGates::Learned => {
                let squeeze = t.reshape(low, &[1, d])?;
                let h = t.relu(blocks::linear(b, &self.layer(i, "ca.fc1"), squeeze)?)?;
                let g = t.sigmoid(blocks::linear(b, &self.layer(i, "ca.fc2"), h)?)?;
                let ca = t.reshape(g, &[d, 1, 1])?;

                let mean = t.mean_axis(high, 0, true)?;
                let max = t.max_axis(high, 0, true)?;
                let stats = t.concat(&[mean, max], 0)?;
                let sa = t.sigmoid(blocks::conv(b, &self.layer(i, "sa"), stats, 1, 1, 1)?)?;

                let fused = t.add(t.mul(ca, low)?, t.mul(sa, high)?)?;
                (fused, Some(ca), Some(sa))
            }
        };
        let dw = blocks::conv(b, &self.layer(i, "dconv"), fused, 1, 1, d)?;
        let f1 = t.narrow(dw, 0, 0, d)?;
        let f2 = t.narrow(dw, 0, d, d)?;
        let gate = t.mul(t.gelu(f1)?, f2)?;
        let out = t.add(p, map_to_tokens(t, gate)?)?;
        Ok(AffnParts {
            normed,
            low,
            high,
            ca,
            sa,
            fused,
            gate,
            out,
        })
    }

    /// Token sequence before de-embedding.
    pub fn tokens<T: Real>(&self, b: &Binder<T>, rgb: Var, snr: Var) -> Result<Var> {
        let t_r = self.patch_embed(b, rgb, "rgb")?;
        let t_s = self.patch_embed(b, snr, "snr")?;
        let mut p = self.cross_attention(b, t_r, t_s)?.out;
        for i in 0..self.cfg.depth {
            p = self.mha_block(b, i, p)?.out;
            p = self.affn(b, i, p)?;
        }
        Ok(p)
    }

    pub fn forward<T: Real>(&self, b: &Binder<T>, rgb: Var, snr: Var) -> Result<Var> {
        let p = self.tokens(b, rgb, snr)?;
        deembed(b, &self.name("deembed"), p, &self.cfg)
    }
}

fn register_embed<T: Real>(w: &mut ModelWeights<T>, init: &mut Initializer, name: &str, c: &FatConfig) -> Result<()> {
    blocks::register_conv(w, init, name, c.channels, c.embed, c.patch)
}

fn embed<T: Real>(b: &Binder<T>, name: &str, feature: Var, c: &FatConfig) -> Result<Var> {
    let t = b.tape();
    let s = t.shape(feature);
    if s.len() != 3 || s[0] != c.channels || s[1] != c.grid.0 * c.patch || s[2] != c.grid.1 * c.patch {
        return Err(Error::dim(format!(
            "{name}: feature {s:?} does not match the configured {:?} (patch {})",
            c.map_shape(),
            c.patch
        )));
    }
    let m = blocks::conv(b, name, feature, c.patch, 0, 1)?;
    map_to_tokens(t, m)
}

/// Linear projection of each token to a `C×p×p` patch, then patch unfolding
/// back to a `C×(gH·p)×(gW·p)` map.
fn deembed<T: Real>(b: &Binder<T>, name: &str, tokens: Var, c: &FatConfig) -> Result<Var> {
    let t = b.tape();
    let y = blocks::linear(b, name, tokens)?;
    unfold(t, y, c)
}

/// `N×(C·p·p)` patches, row-major over the grid, to a `C×H×W` map.
pub fn unfold<T: Real>(t: &Tape<T>, patches: Var, c: &FatConfig) -> Result<Var> {
    let (gh, gw, p) = (c.grid.0, c.grid.1, c.patch);
    let y = t.reshape(patches, &[gh, gw, c.channels, p, p])?;
    let y = t.permute(y, &[2, 0, 3, 1, 4])?;
    t.reshape(y, &[c.channels, gh * p, gw * p])
}

/// Plain pre-norm transformer bottleneck (self-attention and a GELU MLP per
/// layer) without SNR input or adaptive feed-forward.
#[derive(Clone, Debug)]
pub struct VitBottleneck {
    pub prefix: String,
    pub cfg: FatConfig,
}

impl VitBottleneck {
    pub fn new(prefix: impl Into<String>, cfg: FatConfig) -> Self {
        VitBottleneck {
            prefix: prefix.into(),
            cfg,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    fn layer(&self, i: usize, part: &str) -> String {
        format!("{}.layer{i}.{part}", self.prefix)
    }

    pub fn register<T: Real>(&self, w: &mut ModelWeights<T>, init: &mut Initializer) -> Result<()> {
        let c = &self.cfg;
        let d = c.embed;
        register_embed(w, init, &self.name("embed_rgb"), c)?;
        w.insert(self.name("pe"), init.normal(&[c.tokens(), d], PE_STD))?;
        for i in 0..c.depth {
            blocks::register_norm(w, &self.layer(i, "ln1"), d)?;
            register_attention(w, init, &self.layer(i, "attn"), d)?;
            blocks::register_norm(w, &self.layer(i, "ln2"), d)?;
            blocks::register_linear(w, init, &self.layer(i, "mlp1"), d, 2 * d)?;
            blocks::register_linear(w, init, &self.layer(i, "mlp2"), 2 * d, d)?;
        }
        blocks::register_linear(w, init, &self.name("deembed"), d, c.channels * c.patch * c.patch)
    }

    pub fn forward<T: Real>(&self, b: &Binder<T>, rgb: Var) -> Result<Var> {
        let t = b.tape();
        let tokens = embed(b, &self.name("embed_rgb"), rgb, &self.cfg)?;
        let mut p = t.add(tokens, b.param(&self.name("pe"))?)?;
        for i in 0..self.cfg.depth {
            let n = blocks::norm(b, &self.layer(i, "ln1"), p, 1)?;
            p = t.add(p, attention(b, &self.layer(i, "attn"), n, n, self.cfg.heads)?.out)?;
            let n = blocks::norm(b, &self.layer(i, "ln2"), p, 1)?;
            let h = t.gelu(blocks::linear(b, &self.layer(i, "mlp1"), n)?)?;
            p = t.add(p, blocks::linear(b, &self.layer(i, "mlp2"), h)?)?;
        }
        deembed(b, &self.name("deembed"), p, &self.cfg)
    }
}
