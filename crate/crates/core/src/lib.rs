//! Harmonic-plus-noise synthesis engine.
//!
//! The signal path is a bank of harmonic oscillators, a block of spectrally
//! shaped noise, an amplitude LFO and a partitioned convolution reverb. Synth
//! controls come from a [`timbre::TimbreModel`], a grid of control frames
//! indexed by pitch and loudness, which is queried once per audio buffer with
//! the pitch and loudness of either a MIDI note or a live line input.
//!
//! The modules map onto the signal chain:
//!
//! - [`controls`]: shared value types ([`ControlFrame`], [`MacroParams`], ...)
//! - [`analysis`]: YIN pitch tracking, RMS loudness and MIDI conversion
//! - [`additive`]: the harmonic oscillator bank
//! - [`subtractive`]: filtered noise
//! - [`effects`]: reverb, LFO and master stage
//! - [`timbre`]: timbre model files and interpolation
//! - [`engine`]: the real-time block processor and its control handle
//! - [`offline`]: buffer-by-buffer rendering to WAV files

pub mod additive;
pub mod analysis;
pub mod controls;
pub mod effects;
pub mod engine;
pub mod fixtures;
pub mod offline;
pub mod spectrum;
pub mod subtractive;
pub mod timbre;

pub use controls::{AnalysisFrame, ControlFrame, InputMode, MacroParams, OscillatorState};

/// Largest buffer any render call accepts, in samples.
pub const MAX_BUFFER_LEN: usize = 4096;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/additive.md")]
    mod additive {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/effects.md")]
    mod effects {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/timbre-models.md")]
    mod timbre_models {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
}
