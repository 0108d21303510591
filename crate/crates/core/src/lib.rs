//! SFormer: an SNR-guided, frequency-domain transformer U-Net for underwater
//! image enhancement, with the training, data-synthesis and evaluation
//! machinery around it.

pub mod blocks;
pub mod cli;
pub mod color;
pub mod config;
pub mod error;
pub mod fast;
pub mod fat;
pub mod gradcheck;
pub mod imageio;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod snr;
pub mod spectral;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use tape::{Grads, Tape, Var};
pub use tensor::{Real, Tensor};
pub use weights::{Binder, ModelWeights, Parameter};
