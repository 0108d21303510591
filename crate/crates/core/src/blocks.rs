//! Small building blocks shared by the encoder, SNR branch and decoder.

use crate::error::Result;
use crate::tape::Var;
use crate::tensor::{Real, Tensor};
use crate::weights::{Binder, Initializer, ModelWeights};

pub fn register_conv<T: Real>(
    w: &mut ModelWeights<T>,
    init: &mut Initializer,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) -> Result<()> {
    w.insert(format!("{name}.w"), init.kaiming_uniform(&[c_out, c_in, k, k], c_in * k * k))?;
    w.insert(format!("{name}.b"), Tensor::zeros(&[c_out]))
}

pub fn register_linear<T: Real>(
    w: &mut ModelWeights<T>,
    init: &mut Initializer,
    name: &str,
    d_in: usize,
    d_out: usize,
) -> Result<()> {
    w.insert(format!("{name}.w"), init.kaiming_uniform(&[d_out, d_in], d_in))?;
    w.insert(format!("{name}.b"), Tensor::zeros(&[d_out]))
}

pub fn register_norm<T: Real>(w: &mut ModelWeights<T>, name: &str, n: usize) -> Result<()> {
    w.insert(format!("{name}.g"), Tensor::ones(&[n]))?;
    w.insert(format!("{name}.b"), Tensor::zeros(&[n]))
}

pub fn conv<T: Real>(b: &Binder<T>, name: &str, x: Var, stride: usize, pad: usize, groups: usize) -> Result<Var> {
    let w = b.param(&format!("{name}.w"))?;
    let bias = b.param(&format!("{name}.b"))?;
    b.tape().conv2d(x, w, Some(bias), stride, pad, groups)
}

pub fn linear<T: Real>(b: &Binder<T>, name: &str, x: Var) -> Result<Var> {
    let w = b.param(&format!("{name}.w"))?;
    let bias = b.param(&format!("{name}.b"))?;
    b.tape().linear(x, w, Some(bias))
}

pub fn norm<T: Real>(b: &Binder<T>, name: &str, x: Var, axis: usize) -> Result<Var> {
    let g = b.param(&format!("{name}.g"))?;
    let beta = b.param(&format!("{name}.b"))?;
    b.tape().layer_norm(x, g, beta, axis, T::lit(1e-5))
}

/// Two 3×3 convolutions, each followed by ReLU.
pub fn register_double_conv<T: Real>(
    w: &mut ModelWeights<T>,
    init: &mut Initializer,
    name: &str,
    c_in: usize,
    c_out: usize,
) -> Result<()> {
    register_conv(w, init, &format!("{name}.conv1"), c_in, c_out, 3)?;
    register_conv(w, init, &format!("{name}.conv2"), c_out, c_out, 3)
}

pub fn double_conv<T: Real>(b: &Binder<T>, name: &str, x: Var) -> Result<Var> {
    let t = b.tape();
    let h = conv(b, &format!("{name}.conv1"), x, 1, 1, 1)?;
    let h = t.relu(h)?;
    let h = conv(b, &format!("{name}.conv2"), h, 1, 1, 1)?;
    t.relu(h)
}

/// Output of a four-stage encoder: pre-pool features per stage and the
/// pooled map after the last stage.
pub struct EncoderOutput {
    pub skips: Vec<Var>,
    pub bottom: Var,
}

/// Four double-conv stages with 2×2 max pooling, widths `C₀·2^i`.
pub fn register_encoder<T: Real>(
    w: &mut ModelWeights<T>,
    init: &mut Initializer,
    prefix: &str,
    c_in: usize,
    base: usize,
) -> Result<()> {
    let mut c = c_in;
    for i in 0..4 {
        let out = base << i;
        register_double_conv(w, init, &format!("{prefix}{}", i + 1), c, out)?;
        c = out;
    }
    Ok(())
}

pub fn encoder<T: Real>(
    b: &Binder<T>,
    prefix: &str,
    x: Var,
    trace: &mut Option<&mut Vec<(String, Vec<usize>)>>,
) -> Result<EncoderOutput> {
    let t = b.tape();
    let mut skips = Vec::with_capacity(4);
    let mut h = x;
    for i in 0..4 {
        let name = format!("{prefix}{}", i + 1);
        let f = double_conv(b, &name, h).map_err(|e| e.in_layer(&name))?;
        if let Some(tr) = trace.as_mut() {
            tr.push((name.clone(), t.shape(f)));
        }
        h = t.max_pool2d(f, 2, 2).map_err(|e| e.in_layer(&name))?;
        if let Some(tr) = trace.as_mut() {
            tr.push((format!("{name}.pool"), t.shape(h)));
        }
        skips.push(f);
    }
    Ok(EncoderOutput { skips, bottom: h })
}

/// Center crop of a CHW map to `h×w`.
pub fn center_crop<T: Real>(b: &Binder<T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let t = b.tape();
    let shape = t.shape(x);
    let (sh, sw) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if sh < h || sw < w {
        return Err(crate::Error::dim(format!(
            "cannot center-crop {shape:?} to {h}x{w}"
        )));
    }
    if sh == h && sw == w {
        return Ok(x);
    }
    let r = shape.len();
    let x = t.narrow(x, r - 2, (sh - h) / 2, h)?;
    t.narrow(x, r - 1, (sw - w) / 2, w)
}
