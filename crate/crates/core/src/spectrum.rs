//! FFT helpers: Hann-windowed magnitude columns for the spectrogram and a few
//! allocating conveniences used by tests and the CLI.

use std::f64::consts::TAU;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{RealFftPlanner, RealToComplex};
use thiserror::Error;

use crate::controls::LOUDNESS_FLOOR_DB;

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("fft length {0} must be a power of two >= 2")]
    BadLength(usize),
    #[error("buffer has {got} samples, fft needs {needed}")]
    TooShort { needed: usize, got: usize },
    #[error("output column has {got} bins, expected {expected}")]
    ColumnSize { expected: usize, got: usize },
}

/// Periodic Hann window of length `len`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (TAU * n as f64 / len as f64).cos())
        .collect()
}

/// Preplanned STFT column analyzer. `column` does not allocate.
pub struct StftAnalyzer {
    fft: Arc<dyn RealToComplex<f64>>,
    window: Vec<f64>,
    /// Magnitude of a full-scale sine at a bin center, used as 0 dB.
    reference: f64,
    input: Vec<f64>,
    output: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl std::fmt::Debug for StftAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftAnalyzer")
            .field("fft_len", &self.window.len())
            .finish()
    }
}

impl StftAnalyzer {
    pub fn new(fft_len: usize) -> Result<Self, SpectrumError> {
        if fft_len < 2 || !fft_len.is_power_of_two() {
            return Err(SpectrumError::BadLength(fft_len));
        }
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(fft_len);
        let window = hann(fft_len);
        let reference = 0.5 * window.iter().sum::<f64>();
        Ok(Self {
            input: fft.make_input_vec(),
            output: fft.make_output_vec(),
            scratch: fft.make_scratch_vec(),
            fft,
            window,
            reference,
        })
    }

    pub fn fft_len(&self) -> usize {
        self.window.len()
    }

    pub fn bins(&self) -> usize {
        self.window.len() / 2 + 1
    }

    /// Writes the dB magnitude of the last `fft_len` samples of `buffer`
    /// into `column`, floored at -120 dB. 0 dB is a full-scale sine.
    pub fn column(&mut self, buffer: &[f64], column: &mut [f64]) -> Result<(), SpectrumError> {
        let n = self.fft_len();
        if buffer.len() < n {
            return Err(SpectrumError::TooShort {
                needed: n,
                got: buffer.len(),
            });
        }
        if column.len() != self.bins() {
            return Err(SpectrumError::ColumnSize {
                expected: self.bins(),
                got: column.len(),
            });
        }
        let tail = &buffer[buffer.len() - n..];
        for ((dst, x), w) in self.input.iter_mut().zip(tail).zip(&self.window) {
            *dst = x * w;
        }
        // lengths come from the plan itself
        self.fft
            .process_with_scratch(&mut self.input, &mut self.output, &mut self.scratch)
            .expect("fft buffers sized by plan");
        for (c, bin) in column.iter_mut().zip(&self.output) {
            *c = to_db(bin.norm() / self.reference);
        }
        Ok(())
    }
}

/// `20·log10(x)` floored at -120 dB.
pub fn to_db(x: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return LOUDNESS_FLOOR_DB;
    }
    (20.0 * x.log10()).max(LOUDNESS_FLOOR_DB)
}

/// Hann-windowed magnitude column in dB of the last `fft_len` samples.
pub fn stft_column(buffer: &[f64], fft_len: usize) -> Result<Vec<f64>, SpectrumError> {
    let mut analyzer = StftAnalyzer::new(fft_len)?;
    let mut column = vec![0.0; analyzer.bins()];
    analyzer.column(buffer, &mut column)?;
    Ok(column)
}

/// Unwindowed magnitude spectrum of the whole buffer (bins `0..=len/2`).
pub fn magnitude_spectrum(buffer: &[f64]) -> Vec<f64> {
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(buffer.len());
    let mut input = buffer.to_vec();
    let mut output = fft.make_output_vec();
    fft.process(&mut input, &mut output)
        .expect("fft buffers sized by plan");
    output.iter().map(|c| c.norm()).collect()
}

/// Indices of the `count` largest local maxima, largest first.
pub fn peak_bins(spectrum: &[f64], count: usize) -> Vec<usize> {
    let mut peaks: Vec<usize> = (0..spectrum.len())
        .filter(|&i| {
            let left = if i == 0 { f64::MIN } else { spectrum[i - 1] };
            let right = spectrum.get(i + 1).copied().unwrap_or(f64::MIN);
            spectrum[i] > left && spectrum[i] >= right
        })
        .collect();
    peaks.sort_by(|a, b| spectrum[*b].total_cmp(&spectrum[*a]));
    peaks.truncate(count);
    peaks
}
