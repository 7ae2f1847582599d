//! Learnable waveform feature extractors for music genre classification.

pub mod classifier;
pub mod dsp;
pub mod extractors;
pub mod fft;
pub mod layers;
pub mod tensor;
pub mod training;

pub use tensor::{Element, Tape, Tensor, TensorError};
