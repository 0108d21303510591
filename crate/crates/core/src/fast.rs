//! Fourier attention block applied to each encoder skip.
//!
//! Queries come from SNR features, keys and values from RGB features. The
//! key and query spectra are combined in polar form (amplitudes multiplied,
//! phases multiplied and wrapped), brought back to the spatial domain, and
//! used to modulate the value tensor through a normalized residual.

use crate::blocks;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::weights::{Binder, Initializer, ModelWeights};

/// MLP hidden width relative to the block channel count.
pub const MLP_EXPANSION: usize = 2;

#[derive(Clone, Debug)]
pub struct FastBlock {
    pub prefix: String,
    pub channels: usize,
    pub snr_channels: usize,
}

/// Intermediate values of one forward pass.
pub struct FastTrace {
    pub out: Var,
    /// Real part of the inverse transform, before normalization.
    pub spectral: Var,
    /// Full complex inverse transform, `[2, C, H, W]`.
    pub inverse: Var,
}

impl FastBlock {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        FastBlock {
            prefix: prefix.into(),
            channels,
            snr_channels: channels,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn register<T: Real>(&self, w: &mut ModelWeights<T>, init: &mut Initializer) -> Result<()> {
        let c = self.channels;
        blocks::register_conv(w, init, &self.name("q"), self.snr_channels, c, 1)?;
        blocks::register_conv(w, init, &self.name("k"), c, c, 1)?;
        blocks::register_conv(w, init, &self.name("v"), c, c, 1)?;
        blocks::register_norm(w, &self.name("ln1"), c)?;
        blocks::register_norm(w, &self.name("ln2"), c)?;
        blocks::register_conv(w, init, &self.name("mlp1"), c, MLP_EXPANSION * c, 1)?;
        blocks::register_conv(w, init, &self.name("mlp2"), MLP_EXPANSION * c, c, 1)
    }

    pub fn forward<T: Real>(&self, b: &Binder<T>, x: Var, s: Var) -> Result<Var> {
        Ok(self.forward_traced(b, x, s)?.out)
    }

    pub fn forward_traced<T: Real>(&self, b: &Binder<T>, x: Var, s: Var) -> Result<FastTrace> {
        let t = b.tape();
        let (xs, ss) = (t.shape(x), t.shape(s));
        if xs.len() != 3 || ss.len() != 3 || xs[1..] != ss[1..] {
            return Err(Error::dim(format!(
                "{}: RGB features {xs:?} and SNR features {ss:?} are not spatially aligned",
                self.prefix
            )));
        }
        let k = blocks::conv(b, &self.name("k"), x, 1, 0, 1)?;
        let v = blocks::conv(b, &self.name("v"), x, 1, 0, 1)?;
        let q = blocks::conv(b, &self.name("q"), s, 1, 0, 1)?;

        let zk = t.fft2d(k)?;
        let zq = t.fft2d(q)?;
        let amp = t.mul(t.complex_abs(zk)?, t.complex_abs(zq)?)?;
        let phase = t.wrap_phase(t.mul(t.complex_arg(zk)?, t.complex_arg(zq)?)?)?;
        let inverse = t.ifft2d(t.polar(amp, phase)?)?;
        let spectral = t.complex_re(inverse)?;

        let gated = t.mul(blocks::norm(b, &self.name("ln1"), spectral, 0)?, v)?;
        let x1 = t.add(x, gated)?;
        let h = blocks::norm(b, &self.name("ln2"), x1, 0)?;
        let h = t.gelu(blocks::conv(b, &self.name("mlp1"), h, 1, 0, 1)?)?;
        let h = blocks::conv(b, &self.name("mlp2"), h, 1, 0, 1)?;
        let out = t.add(x1, h)?;
        Ok(FastTrace {
            out,
            spectral,
            inverse,
        })
    }

    /// Fraction of the inverse transform's energy carried by the imaginary
    /// part, which the block discards.
    pub fn imaginary_energy_fraction<T: Real>(
        &self,
        weights: &ModelWeights<T>,
        x: &Tensor<T>,
        s: &Tensor<T>,
    ) -> Result<f64> {
        let tape = Tape::new();
        let b = Binder::frozen(&tape, weights);
        let tr = self.forward_traced(&b, tape.constant(x.clone()), tape.constant(s.clone()))?;
        let z = tape.value(tr.inverse);
        let half = z.numel() / 2;
        let sq = |v: &[T]| v.iter().map(|a| a.as_f64().powi(2)).sum::<f64>();
        let (re, im) = (sq(&z.data()[..half]), sq(&z.data()[half..]));
        Ok(if re + im > 0.0 { im / (re + im) } else { 0.0 })
    }

    /// Plain evaluation over concrete tensors.
    pub fn apply<T: Real>(&self, weights: &ModelWeights<T>, x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let b = Binder::frozen(&tape, weights);
        let y = self.forward(&b, tape.constant(x.clone()), tape.constant(s.clone()))?;
        Ok((*tape.value(y)).clone())
    }
}
