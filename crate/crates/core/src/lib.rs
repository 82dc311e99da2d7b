//! Non-autoregressive GAN vocoder with separate discriminators for voiced and
//! unvoiced speech.
//!
//! Everything runs in `f64` on a small tape-based autodiff engine:
//! [`autograd`] for gradients, [`dsp`] for STFT and features, [`models`]
//! for the generator and discriminators, [`losses`] for the objectives and
//! [`training`] for the optimizer and training loop.

pub mod autograd;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kv;
pub mod losses;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
