//! Value types shared by every stage of the synth: per-buffer control frames,
//! oscillator state carried between buffers, the user macro surface and
//! analysis results.
//!
//! Non-finite numbers never get past these types. Constructors replace NaN and
//! infinities with zero and clamp everything into its documented range.

use serde::{Deserialize, Serialize};

/// Harmonic count used when a model does not say otherwise.
pub const DEFAULT_HARMONICS: usize = 60;
/// Noise magnitude count used when a model does not say otherwise.
pub const DEFAULT_NOISE_BINS: usize = 65;
/// Lowest loudness the analysis stage reports, in dBFS.
pub const LOUDNESS_FLOOR_DB: f64 = -120.0;

/// Replaces NaN and infinities with zero.
#[inline]
pub fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

#[inline]
fn non_negative(x: f64) -> f64 {
    finite_or_zero(x).max(0.0)
}

/// One time step of synthesis controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFrame {
    /// Fundamental frequency in Hz, `0` when unvoiced.
    pub f0_hz: f64,
    /// Linear global amplitude.
    pub amplitude: f64,
    /// Relative weights of harmonics `1..=K`.
    pub harmonic_distribution: Vec<f64>,
    /// Linear noise filter magnitudes, DC first, Nyquist last.
    pub noise_magnitudes: Vec<f64>,
}

impl ControlFrame {
    /// Builds a frame, zeroing non-finite and negative entries.
    pub fn new(
        f0_hz: f64,
        amplitude: f64,
        harmonic_distribution: Vec<f64>,
        noise_magnitudes: Vec<f64>,
    ) -> Self {
        let mut frame = Self {
            f0_hz,
            amplitude,
            harmonic_distribution,
            noise_magnitudes,
        };
        frame.sanitize();
        frame
    }

    /// An all-zero frame with `harmonics` and `noise_bins` entries.
    pub fn silent(harmonics: usize, noise_bins: usize) -> Self {
        Self {
            f0_hz: 0.0,
            amplitude: 0.0,
            harmonic_distribution: vec![0.0; harmonics],
            noise_magnitudes: vec![0.0; noise_bins],
        }
    }

    pub fn harmonics(&self) -> usize {
        self.harmonic_distribution.len()
    }

    pub fn noise_bins(&self) -> usize {
        self.noise_magnitudes.len()
    }

    /// Re-establishes the field invariants in place.
    pub fn sanitize(&mut self) {
        self.f0_hz = non_negative(self.f0_hz);
        self.amplitude = non_negative(self.amplitude);
        self.harmonic_distribution
            .iter_mut()
            .for_each(|c| *c = non_negative(*c));
        self.noise_magnitudes
            .iter_mut()
            .for_each(|m| *m = non_negative(*m));
    }

    /// Pulls `f0_hz` strictly below Nyquist for `sample_rate`.
    pub fn limit_f0(&mut self, sample_rate: f64) {
        let nyquist = 0.5 * sample_rate;
        if self.f0_hz >= nyquist {
            self.f0_hz = nyquist * (1.0 - f64::EPSILON);
        }
    }

    /// Scales the harmonic distribution to unit sum. An all-zero
    /// distribution is left alone.
    pub fn normalize_distribution(&mut self) {
        normalize_unit_sum(&mut self.harmonic_distribution);
    }

    /// Copies `other` into `self` without reallocating when the sizes match.
    pub fn copy_from(&mut self, other: &ControlFrame) {
        self.f0_hz = other.f0_hz;
        self.amplitude = other.amplitude;
        self.harmonic_distribution.clear();
        self.harmonic_distribution
            .extend_from_slice(&other.harmonic_distribution);
        self.noise_magnitudes.clear();
        self.noise_magnitudes.extend_from_slice(&other.noise_magnitudes);
    }
}

/// Divides `weights` by their sum; leaves all-zero input untouched.
pub(crate) fn normalize_unit_sum(weights: &mut [f64]) {
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        weights.iter_mut().for_each(|w| *w /= sum);
    }
}

/// Per-harmonic phase and last-sample controls carried between buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorState {
    /// Running phase of each harmonic, radians in `[0, 2π)`.
    pub phases: Vec<f64>,
    /// Frequency of each harmonic at the last rendered sample, Hz.
    pub prev_f: Vec<f64>,
    /// Amplitude of each harmonic at the last rendered sample.
    pub prev_amp: Vec<f64>,
    /// `false` until the first buffer has been rendered.
    pub started: bool,
}

impl OscillatorState {
    pub fn new(harmonics: usize) -> Self {
        Self {
            phases: vec![0.0; harmonics],
            prev_f: vec![0.0; harmonics],
            prev_amp: vec![0.0; harmonics],
            started: false,
        }
    }

    pub fn harmonics(&self) -> usize {
        self.phases.len()
    }

    /// Zeroes phases and history, keeping the allocation.
    pub fn reset(&mut self) {
        self.phases.iter_mut().for_each(|p| *p = 0.0);
        self.prev_f.iter_mut().for_each(|p| *p = 0.0);
        self.prev_amp.iter_mut().for_each(|p| *p = 0.0);
        self.started = false;
    }
}

/// Where the engine takes pitch and loudness from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    #[default]
    Midi,
    Line,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Midi => "midi",
            InputMode::Line => "line",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "midi" => Some(InputMode::Midi),
            "line" => Some(InputMode::Line),
            _ => None,
        }
    }
}

/// Closed range and default of one numeric macro.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
    pub default: f64,
}

impl ParamRange {
    const fn new(min: f64, max: f64, default: f64) -> Self {
        Self { min, max, default }
    }

    /// Clamps into the range; non-finite values map to `default`.
    pub fn clamp(&self, x: f64) -> f64 {
        if x.is_nan() {
            return self.default;
        }
        x.clamp(self.min, self.max)
    }
}

/// User-facing macro controls layered on top of the model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroParams {
    pub stretch: f64,
    /// Octaves.
    pub shift: f64,
    pub harmonic_gain: f64,
    pub noise_gain: f64,
    pub noise_color_alpha: f64,
    /// Per-harmonic gains from the graphic harmonics editor.
    pub harmonic_edit: Vec<f64>,
    pub reverb_mix: f64,
    /// Seconds.
    pub reverb_size: f64,
    pub reverb_glow: f64,
    /// Hz.
    pub mod_rate: f64,
    pub mod_amount: f64,
    pub mod_delay: f64,
    pub master_gain: f64,
    pub input_mode: InputMode,
}

impl MacroParams {
    pub const STRETCH: ParamRange = ParamRange::new(-1.0, 1.0, 0.0);
    pub const SHIFT: ParamRange = ParamRange::new(-1.0, 1.0, 0.0);
    pub const HARMONIC_GAIN: ParamRange = ParamRange::new(0.0, 4.0, 1.0);
    pub const NOISE_GAIN: ParamRange = ParamRange::new(0.0, 4.0, 1.0);
    pub const NOISE_COLOR_ALPHA: ParamRange = ParamRange::new(0.0, 4.0, 1.0);
    pub const HARMONIC_EDIT: ParamRange = ParamRange::new(0.0, 4.0, 1.0);
    pub const REVERB_MIX: ParamRange = ParamRange::new(0.0, 1.0, 0.2);
    pub const REVERB_SIZE: ParamRange = ParamRange::new(0.05, 2.0, 1.0);
    pub const REVERB_GLOW: ParamRange = ParamRange::new(0.0, 1.0, 0.5);
    pub const MOD_RATE: ParamRange = ParamRange::new(0.0, 20.0, 5.0);
    pub const MOD_AMOUNT: ParamRange = ParamRange::new(0.0, 1.0, 0.0);
    pub const MOD_DELAY: ParamRange = ParamRange::new(0.0, 1.0, 0.0);
    pub const MASTER_GAIN: ParamRange = ParamRange::new(0.0, 4.0, 0.8);

    /// Defaults for a model with `harmonics` harmonics.
    pub fn with_harmonics(harmonics: usize) -> Self {
        Self {
            stretch: Self::STRETCH.default,
            shift: Self::SHIFT.default,
            harmonic_gain: Self::HARMONIC_GAIN.default,
            noise_gain: Self::NOISE_GAIN.default,
            noise_color_alpha: Self::NOISE_COLOR_ALPHA.default,
            harmonic_edit: vec![Self::HARMONIC_EDIT.default; harmonics],
            reverb_mix: Self::REVERB_MIX.default,
            reverb_size: Self::REVERB_SIZE.default,
            reverb_glow: Self::REVERB_GLOW.default,
            mod_rate: Self::MOD_RATE.default,
            mod_amount: Self::MOD_AMOUNT.default,
            mod_delay: Self::MOD_DELAY.default,
            master_gain: Self::MASTER_GAIN.default,
            input_mode: InputMode::default(),
        }
    }

    /// Clamps every field into its range in place.
    pub fn clamp_in_place(&mut self) {
        self.stretch = Self::STRETCH.clamp(self.stretch);
        self.shift = Self::SHIFT.clamp(self.shift);
        self.harmonic_gain = Self::HARMONIC_GAIN.clamp(self.harmonic_gain);
        self.noise_gain = Self::NOISE_GAIN.clamp(self.noise_gain);
        self.noise_color_alpha = Self::NOISE_COLOR_ALPHA.clamp(self.noise_color_alpha);
        for g in &mut self.harmonic_edit {
            *g = Self::HARMONIC_EDIT.clamp(*g);
        }
        self.reverb_mix = Self::REVERB_MIX.clamp(self.reverb_mix);
        self.reverb_size = Self::REVERB_SIZE.clamp(self.reverb_size);
        self.reverb_glow = Self::REVERB_GLOW.clamp(self.reverb_glow);
        self.mod_rate = Self::MOD_RATE.clamp(self.mod_rate);
        self.mod_amount = Self::MOD_AMOUNT.clamp(self.mod_amount);
        self.mod_delay = Self::MOD_DELAY.clamp(self.mod_delay);
        self.master_gain = Self::MASTER_GAIN.clamp(self.master_gain);
    }

    /// Resizes `harmonic_edit` to `harmonics`, padding with the default gain.
    pub fn resize_harmonics(&mut self, harmonics: usize) {
        self.harmonic_edit
            .resize(harmonics, Self::HARMONIC_EDIT.default);
    }
}

impl Default for MacroParams {
    fn default() -> Self {
        Self::with_harmonics(DEFAULT_HARMONICS)
    }
}

/// Returns `params` with every field clamped into its range.
pub fn clamp_macro(mut params: MacroParams) -> MacroParams {
    params.clamp_in_place();
    params
}

/// Pitch and loudness extracted from one buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisFrame {
    /// `None` when unvoiced.
    pub f0_hz: Option<f64>,
    pub confidence: f64,
    /// dBFS in `[-120, 0]`.
    pub loudness_db: f64,
}

impl AnalysisFrame {
    pub fn voiced(f0_hz: f64, confidence: f64, loudness_db: f64) -> Self {
        let f0 = finite_or_zero(f0_hz);
        if f0 <= 0.0 {
            return Self::unvoiced(loudness_db);
        }
        Self {
            f0_hz: Some(f0),
            confidence: finite_or_zero(confidence).clamp(0.0, 1.0),
            loudness_db: clamp_loudness(loudness_db),
        }
    }

    pub fn unvoiced(loudness_db: f64) -> Self {
        Self {
            f0_hz: None,
            confidence: 0.0,
            loudness_db: clamp_loudness(loudness_db),
        }
    }

    pub fn is_voiced(&self) -> bool {
        self.f0_hz.is_some()
    }
}

pub(crate) fn clamp_loudness(db: f64) -> f64 {
    if db.is_nan() {
        return LOUDNESS_FLOOR_DB;
    }
    db.clamp(LOUDNESS_FLOOR_DB, 0.0)
}
