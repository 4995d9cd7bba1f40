//! Controllable speech synthesis from five phonetic parameters.
//!
//! A waveform is analysed into a [`ParameterTrack`] (F1, F2, log-f0 with a
//! voicing flag, spectral centroid, spectral slope). A residual 1D-conv network
//! regresses log mel spectrograms from the track, a conditional GAN generator
//! enhances them, and a pretrained vocoder renders audio. Editing the track
//! before synthesis manipulates the corresponding property of the speech.

pub mod audio;
pub mod augmentation;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod mel;
pub mod manipulation;
pub mod model;
pub mod nn;
pub mod norm;
pub mod seed;
pub mod track;
pub mod trainer;
pub mod vocoder;

pub use audio::Waveform;
pub use dsp::{extract_parameters, ExtractOptions, FrameConfig};
pub use error::{Error, Result};
pub use mel::{MelConfig, MelSpectrogram};
pub use norm::NormalizationStats;
pub use track::{Feature, ParameterTrack};
