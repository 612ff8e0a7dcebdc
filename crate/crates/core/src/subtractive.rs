//! Filtered-noise synthesis.
//!
//! Every buffer is fresh uniform white noise, taken to the frequency domain,
//! multiplied by the frame's magnitude response and a noise-color tilt, and
//! brought back. The `N` model magnitudes are spread evenly from DC to Nyquist
//! and linearly interpolated onto the FFT bins.
//!
//! Noise color follows a `1/f^α` convention in which `α = 1` is white: the
//! per-bin weight is `(f / 1 kHz)^(1 − α)`, so `α < 1` tilts energy upwards and
//! `α > 1` tilts it downwards. The DC bin borrows the weight of bin 1.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use thiserror::Error;

use crate::controls::finite_or_zero;
use crate::MAX_BUFFER_LEN;

/// Pivot frequency of the noise-color tilt, Hz.
pub const COLOR_REFERENCE_HZ: f64 = 1000.0;

#[derive(Debug, Error, PartialEq)]
pub enum SubtractiveError {
    #[error("buffer length {0} exceeds {MAX_BUFFER_LEN}")]
    BufferTooLong(usize),
    #[error("buffer length {0} is below the minimum of 2")]
    BufferTooShort(usize),
    #[error("buffer length {got} does not match planned length {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Filter controls for one buffer of noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseControls {
    /// Linear magnitudes, DC first and Nyquist last.
    pub magnitudes: Vec<f64>,
    /// Noise color exponent; 1 is white.
    pub alpha: f64,
    pub gain: f64,
}

/// Deterministic noise source. Cloning it replays the same stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseRngState(ChaCha8Rng);

impl NoiseRngState {
    pub fn from_seed(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform sample in `[-1, 1)`.
    #[inline]
    pub fn next_sample(&mut self) -> f64 {
        self.0.random_range(-1.0..1.0)
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|s| *s = self.next_sample());
    }

    /// A derived generator for an independent stream.
    pub fn fork(&mut self) -> Self {
        Self(ChaCha8Rng::seed_from_u64(self.0.random()))
    }
}

/// Per-bin noise-color weights for `num_bins` bins spanning DC to Nyquist.
pub fn noise_color_weights(num_bins: usize, alpha: f64, sample_rate: f64) -> Vec<f64> {
    let mut out = vec![0.0; num_bins];
    fill_color_weights(&mut out, alpha, sample_rate);
    out
}

fn fill_color_weights(out: &mut [f64], alpha: f64, sample_rate: f64) {
    let num_bins = out.len();
    if num_bins == 0 {
        return;
    }
    let exponent = 1.0 - finite_or_zero(alpha).max(0.0);
    if exponent == 0.0 || num_bins == 1 {
        out.iter_mut().for_each(|w| *w = 1.0);
        return;
    }
    let bin_hz = 0.5 * sample_rate / (num_bins - 1) as f64;
    for (i, w) in out.iter_mut().enumerate().skip(1) {
        *w = (i as f64 * bin_hz / COLOR_REFERENCE_HZ).powf(exponent);
    }
    out[0] = out[1];
}

/// Magnitude of `mags` at bin `bin` of `num_bins`, spreading the control
/// points evenly from DC to Nyquist.
#[inline]
fn interpolate_magnitude(mags: &[f64], bin: usize, num_bins: usize) -> f64 {
    match mags.len() {
        0 => 0.0,
        1 => mags[0],
        n => {
            let x = bin as f64 * (n - 1) as f64 / (num_bins - 1) as f64;
            let i = (x.floor() as usize).min(n - 2);
            let frac = x - i as f64;
            mags[i] * (1.0 - frac) + mags[i + 1] * frac
        }
    }
}

/// Designed per-bin gain for `controls` on a `buffer_len`-point FFT.
pub fn design_response(controls: &NoiseControls, buffer_len: usize, sample_rate: f64) -> Vec<f64> {
    let bins = buffer_len / 2 + 1;
    let weights = noise_color_weights(bins, controls.alpha, sample_rate);
    (0..bins)
        .map(|b| {
            finite_or_zero(interpolate_magnitude(&controls.magnitudes, b, bins)).max(0.0)
                * weights[b]
                * controls.gain
        })
        .collect()
}

/// Noise renderer for a fixed buffer length with preplanned FFTs.
pub struct NoiseSynth {
    sample_rate: f64,
    len: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    spectrum: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    weights: Vec<f64>,
    weights_alpha: f64,
}

impl std::fmt::Debug for NoiseSynth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NoiseSynth")
            .field("sample_rate", &self.sample_rate)
            .field("len", &self.len)
            .finish()
    }
}

impl NoiseSynth {
    pub fn new(sample_rate: f64, buffer_len: usize) -> Result<Self, SubtractiveError> {
        if buffer_len > MAX_BUFFER_LEN {
            return Err(SubtractiveError::BufferTooLong(buffer_len));
        }
        if buffer_len < 2 {
            return Err(SubtractiveError::BufferTooShort(buffer_len));
        }
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(buffer_len);
        let inverse = planner.plan_fft_inverse(buffer_len);
        let scratch_len = forward.get_scratch_len().max(inverse.get_scratch_len());
        let bins = buffer_len / 2 + 1;
        let mut weights = vec![0.0; bins];
        fill_color_weights(&mut weights, 1.0, sample_rate);
        Ok(Self {
            sample_rate,
            len: buffer_len,
            spectrum: forward.make_output_vec(),
            scratch: vec![Complex::default(); scratch_len],
            forward,
            inverse,
            weights,
            weights_alpha: 1.0,
        })
    }

    pub fn buffer_len(&self) -> usize {
        self.len
    }

    /// Renders one buffer into `out`, drawing noise from `rng`.
    pub fn render(
        &mut self,
        controls: &NoiseControls,
        rng: &mut NoiseRngState,
        out: &mut [f64],
    ) -> Result<(), SubtractiveError> {
        if out.len() != self.len {
            return Err(SubtractiveError::LengthMismatch {
                expected: self.len,
                got: out.len(),
            });
        }
        let alpha = finite_or_zero(controls.alpha).max(0.0);
        if alpha != self.weights_alpha {
            fill_color_weights(&mut self.weights, alpha, self.sample_rate);
            self.weights_alpha = alpha;
        }

        rng.fill(out);
        self.forward
            .process_with_scratch(out, &mut self.spectrum, &mut self.scratch)
            .expect("fft buffers sized by plan");

        let bins = self.spectrum.len();
        let gain = finite_or_zero(controls.gain).max(0.0) / self.len as f64;
        for (b, (bin, w)) in self.spectrum.iter_mut().zip(&self.weights).enumerate() {
            let m = finite_or_zero(interpolate_magnitude(&controls.magnitudes, b, bins)).max(0.0);
            *bin *= m * w * gain;
        }
        // a real signal has purely real DC and Nyquist bins
        self.spectrum[0].im = 0.0;
        if self.len.is_multiple_of(2) {
            self.spectrum[bins - 1].im = 0.0;
        }
        self.inverse
            .process_with_scratch(&mut self.spectrum, out, &mut self.scratch)
            .expect("fft buffers sized by plan");
        Ok(())
    }
}

/// Renders one buffer of filtered noise, returning the advanced generator.
pub fn render_noise(
    controls: &NoiseControls,
    buffer_len: usize,
    rng: &NoiseRngState,
    sample_rate: f64,
) -> Result<(Vec<f64>, NoiseRngState), SubtractiveError> {
    let mut synth = NoiseSynth::new(sample_rate, buffer_len)?;
    let mut rng = rng.clone();
    let mut out = vec![0.0; buffer_len];
    synth.render(controls, &mut rng, &mut out)?;
    Ok((out, rng))
}
