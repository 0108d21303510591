//! C ABI over the enhancement network, the SNR prior and the quality metrics.
//!
//! Conventions:
//! - Models are opaque heap handles created by `sformer_model_*` and released
//!   with `sformer_model_free`.
//! - Every fallible call returns a `SformerStatus`. On failure, a message for
//!   the calling thread is available from `sformer_last_error`.
//! - Images are caller-owned buffers: planar `float` (3·H·W, channel-major,
//!   values in [0, 1]) or interleaved 8-bit RGB (H·W·3).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sformer::config::RunConfig;
use sformer::metrics::MetricReport;
use sformer::net::SformerNet;
use sformer::snr::compute_snr_map;
use sformer::weights::{load_weights, save_weights};
use sformer::{Error, ModelWeights, Tensor};

/// Result of every fallible call. Values 2–5 match the command-line exit
/// codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SformerStatus {
    Ok = 0,
    /// Null pointer, zero size or invalid UTF-8 argument.
    InvalidArgument = 1,
    Io = 2,
    /// Shape or resolution mismatch.
    Dimension = 3,
    Config = 4,
    /// Non-finite values or out-of-range colours.
    Numeric = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Quality metrics of one prediction against its reference.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SformerMetrics {
    /// Decibels; `INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
    /// Mean CIE76 colour difference.
    pub delta_e: f64,
    /// No-reference underwater colour quality of the prediction.
    pub uciqe: f64,
}

/// Opaque model handle.
pub struct SformerModel {
    net: SformerNet,
    weights: ModelWeights<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> SformerStatus {
    match e.exit_code() {
        2 => SformerStatus::Io,
        3 => SformerStatus::Dimension,
        4 => SformerStatus::Config,
        _ => SformerStatus::Numeric,
    }
}

struct Fail(SformerStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(SformerStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SformerStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SformerStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            SformerStatus::Internal
        }
    }
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    opt_str(p, what)?.ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn model_ref<'a>(m: *const SformerModel) -> Result<&'a SformerModel, Fail> {
    m.as_ref().ok_or_else(|| invalid("model handle is null"))
}

fn plane_len(height: usize, width: usize) -> Result<usize, Fail> {
    if height == 0 || width == 0 {
        return Err(invalid("image dimensions must be positive"));
    }
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| invalid("image dimensions overflow"))
}

unsafe fn planar_in(p: *const f32, height: usize, width: usize) -> Result<Tensor<f32>, Fail> {
    let n = plane_len(height, width)?;
    if p.is_null() {
        return Err(invalid("image buffer is null"));
    }
    let data = std::slice::from_raw_parts(p, n).to_vec();
    Ok(Tensor::new(vec![3, height, width], data)?)
}

fn publish(out: *mut *mut SformerModel, model: SformerModel) {
    // SAFETY: callers check `out` for null before building the model.
    unsafe { *out = Box::into_raw(Box::new(model)) };
}

fn config_from(text: Option<&str>, path: Option<&str>) -> Result<RunConfig, Fail> {
    Ok(match (text, path) {
        (Some(t), _) => RunConfig::parse(t)?,
        (None, Some(p)) => RunConfig::load(p)?,
        (None, None) => RunConfig::default(),
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sformer_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failure on this thread; empty after a
/// successful call. The pointer stays valid until the next call made by the
/// same thread.
#[no_mangle]
pub extern "C" fn sformer_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a randomly initialized model.
///
/// `config_text` holds run-configuration text; null selects the defaults.
/// On success `*out` receives a handle to free with `sformer_model_free`.
///
/// # Safety
/// `config_text` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sformer_model_init(
    config_text: *const c_char,
    seed: u64,
    out: *mut *mut SformerModel,
) -> SformerStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output handle pointer is null"));
        }
        let cfg = config_from(opt_str(config_text, "config text")?, None)?;
        let net = SformerNet::new(cfg.model_config())?;
        let weights = net.init_weights(seed)?;
        publish(out, SformerModel { net, weights });
        Ok(())
    })
}

/// Loads trained weights. `config_path` may be null for the defaults; the
/// weights must match the configured architecture and resolution.
///
/// # Safety
/// String arguments must be null (where allowed) or NUL-terminated; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sformer_model_load(
    config_path: *const c_char,
    weights_path: *const c_char,
    out: *mut *mut SformerModel,
) -> SformerStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output handle pointer is null"));
        }
        let cfg = config_from(None, opt_str(config_path, "config path")?)?;
        let path = req_str(weights_path, "weights path")?;
        let net = SformerNet::new(cfg.model_config())?;
        let weights = load_weights(Path::new(path))?;
        net.init_weights::<f32>(0)?
            .expect_layout(&weights)
            .map_err(|e| Fail(SformerStatus::Dimension, format!("{path} does not match the configured model: {e}")))?;
        publish(out, SformerModel { net, weights });
        Ok(())
    })
}

/// Writes the model's weights as an SFW1 file.
///
/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sformer_model_save(model: *const SformerModel, path: *const c_char) -> SformerStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_weights(&m.weights, Path::new(req_str(path, "path")?))?;
        Ok(())
    })
}

/// Input resolution the model was built for.
///
/// # Safety
/// `model` must be a live handle; `height` and `width` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sformer_model_input_size(
    model: *const SformerModel,
    height: *mut usize,
    width: *mut usize,
) -> SformerStatus {
    guard(|| {
        let m = model_ref(model)?;
        if height.is_null() || width.is_null() {
            return Err(invalid("size pointers are null"));
        }
        *height = m.net.config().height;
        *width = m.net.config().width;
        Ok(())
    })
}

/// Number of learnable scalars.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sformer_model_parameter_count(model: *const SformerModel) -> usize {
    model.as_ref().map_or(0, |m| m.weights.scalar_count())
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from `sformer_model_init`/`sformer_model_load` and not
/// have been freed.
#[no_mangle]
pub unsafe extern "C" fn sformer_model_free(model: *mut SformerModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Enhances a planar float image of the model's resolution into `output`
/// (same layout and size; may not alias `input`).
///
/// # Safety
/// `input` and `output` must each hold `3·height·width` floats.
#[no_mangle]
pub unsafe extern "C" fn sformer_enhance(
    model: *const SformerModel,
    input: *const f32,
    height: usize,
    width: usize,
    output: *mut f32,
) -> SformerStatus {
    guard(|| {
        let m = model_ref(model)?;
        let img = planar_in(input, height, width)?;
        if output.is_null() {
            return Err(invalid("output buffer is null"));
        }
        let y = m.net.enhance(&m.weights, &img)?;
        std::slice::from_raw_parts_mut(output, y.numel()).copy_from_slice(y.data());
        Ok(())
    })
}

/// Enhances an interleaved 8-bit RGB image (`height·width·3` bytes).
///
/// # Safety
/// `input` and `output` must each hold `3·height·width` bytes.
#[no_mangle]
pub unsafe extern "C" fn sformer_enhance_rgb8(
    model: *const SformerModel,
    input: *const u8,
    height: usize,
    width: usize,
    output: *mut u8,
) -> SformerStatus {
    guard(|| {
        let m = model_ref(model)?;
        let n = plane_len(height, width)?;
        if input.is_null() || output.is_null() {
            return Err(invalid("image buffer is null"));
        }
        let src = std::slice::from_raw_parts(input, n);
        let plane = height * width;
        let img = Tensor::from_fn(&[3, height, width], |i| {
            f32::from(src[3 * (i % plane) + i / plane]) / 255.0
        });
        let y = m.net.enhance(&m.weights, &img)?;
        let (_, _, bytes) = sformer::imageio::to_bytes(&y)?;
        std::slice::from_raw_parts_mut(output, n).copy_from_slice(&bytes);
        Ok(())
    })
}

/// Writes the `height·width` SNR prior of a planar float image.
///
/// # Safety
/// `input` must hold `3·height·width` floats and `output` `height·width`.
#[no_mangle]
pub unsafe extern "C" fn sformer_snr_map(
    input: *const f32,
    height: usize,
    width: usize,
    output: *mut f32,
) -> SformerStatus {
    guard(|| {
        let img = planar_in(input, height, width)?;
        if output.is_null() {
            return Err(invalid("output buffer is null"));
        }
        let map = compute_snr_map(&img)?;
        std::slice::from_raw_parts_mut(output, height * width).copy_from_slice(map.values().data());
        Ok(())
    })
}

/// Scores a planar float prediction against its reference.
///
/// # Safety
/// Both images must hold `3·height·width` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sformer_metrics(
    prediction: *const f32,
    reference: *const f32,
    height: usize,
    width: usize,
    out: *mut SformerMetrics,
) -> SformerStatus {
    guard(|| {
        let pre = planar_in(prediction, height, width)?;
        let gt = planar_in(reference, height, width)?;
        if out.is_null() {
            return Err(invalid("metrics pointer is null"));
        }
        let r = MetricReport::compute(&pre, &gt)?;
        *out = SformerMetrics {
            psnr: r.psnr,
            ssim: r.ssim,
            delta_e: r.delta_e,
            uciqe: r.uciqe,
        };
        Ok(())
    })
}
