//! Multichannel mask-based speech enhancement.
//!
//! The processing chain is STFT, feature extraction, a channel-count
//! agnostic mask estimator, mask-weighted MVDR beamforming with automatic
//! reference selection, optional single-channel post-masking and iSTFT.
//! Alongside it live a CI-SDR evaluator and a room-acoustics scene simulator
//! used to generate test material.

pub mod beamform;
pub mod error;
pub mod features;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod seed;
pub mod selftest;
pub mod signal;
pub mod simulate;
pub mod wav;

pub use error::{Error, Result};
pub use signal::{istft, stft, Spectrogram, Waveform};
