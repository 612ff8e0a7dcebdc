//! Convolution reverb.
//!
//! The impulse response is cut into partitions of one engine buffer each and
//! convolved with uniform-partitioned overlap-save: every incoming block is
//! transformed once, kept in a frequency-domain delay line, and multiplied
//! against the matching IR partition. Output has no added latency.

use std::f64::consts::{LN_10, TAU};
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::EffectsError;
use crate::subtractive::NoiseRngState;

/// Longest impulse response accepted, seconds.
pub const MAX_IR_SECONDS: f64 = 2.0;

const DARK_CUTOFF_HZ: f64 = 1_000.0;
const BRIGHT_CUTOFF_HZ: f64 = 12_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl ImpulseResponse {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self, EffectsError> {
        if samples.is_empty() {
            return Err(EffectsError::EmptyIr);
        }
        let max = (MAX_IR_SECONDS * sample_rate).ceil() as usize;
        if samples.len() > max {
            return Err(EffectsError::IrTooLong {
                len: samples.len(),
                max,
            });
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(EffectsError::NonFiniteIr);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Synthesizes a reverb tail: exponentially decaying noise that reaches
/// -60 dB at `size` seconds, darkened over time by a one-pole low-pass whose
/// cutoff glides down to somewhere between 1 kHz (`glow = 0`) and 12 kHz
/// (`glow = 1`). The first sample is zero and the result has unit energy.
pub fn design_ir(
    size: f64,
    glow: f64,
    sample_rate: f64,
    rng: &mut NoiseRngState,
) -> Result<ImpulseResponse, EffectsError> {
    if !(size > 0.0 && size <= MAX_IR_SECONDS) {
        return Err(EffectsError::SizeOutOfRange(size));
    }
    let glow = if glow.is_finite() { glow.clamp(0.0, 1.0) } else { 0.0 };
    let len = ((size * sample_rate).ceil() as usize).max(2);
    // -60 dB is a factor of e^(-3 ln 10)
    let tau_samples = size * sample_rate / (3.0 * LN_10);

    let open = 0.45 * sample_rate;
    let end = (DARK_CUTOFF_HZ + glow * (BRIGHT_CUTOFF_HZ - DARK_CUTOFF_HZ)).min(open);
    let mut ir = vec![0.0; len];
    let mut lp = 0.0;
    for (n, s) in ir.iter_mut().enumerate() {
        let progress = n as f64 / (len - 1) as f64;
        let cutoff = end * (open / end).powf(1.0 - progress);
        let a = 1.0 - (-TAU * cutoff / sample_rate).exp();
        lp += a * (rng.next_sample() - lp);
        // one-pole output variance is a / (2 - a) of the input's
        let unit = lp * ((2.0 - a) / a).sqrt();
        *s = unit * (-(n as f64) / tau_samples).exp();
    }
    ir[0] = 0.0;
    let energy: f64 = ir.iter().map(|s| s * s).sum();
    if energy > 0.0 {
        let g = energy.sqrt().recip();
        ir.iter_mut().for_each(|s| *s *= g);
    }
    ImpulseResponse::new(ir, sample_rate)
}

/// Frequency-domain partitions of an impulse response for one block size.
#[derive(Clone)]
pub struct IrSpectrum {
    block: usize,
    parts: Vec<Vec<Complex<f64>>>,
}

impl std::fmt::Debug for IrSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IrSpectrum")
            .field("block", &self.block)
            .field("partitions", &self.parts.len())
            .finish()
    }
}

impl IrSpectrum {
    pub fn new(ir: &ImpulseResponse, block: usize) -> Result<Self, EffectsError> {
        if block == 0 {
            return Err(EffectsError::ZeroBlock);
        }
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(2 * block);
        let mut time = fft.make_input_vec();
        let parts = ir
            .samples()
            .chunks(block)
            .map(|chunk| {
                time.iter_mut().for_each(|s| *s = 0.0);
                time[..chunk.len()].copy_from_slice(chunk);
                let mut spec = fft.make_output_vec();
                fft.process(&mut time, &mut spec)
                    .expect("fft buffers sized by plan");
                spec
            })
            .collect();
        Ok(Self { block, parts })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn partitions(&self) -> usize {
        self.parts.len()
    }
}

/// Streaming state of the partitioned convolver.
pub struct ConvolutionState {
    block: usize,
    ir: Option<Box<IrSpectrum>>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    /// Spectra of past input blocks; `history[head]` is the newest.
    history: Vec<Vec<Complex<f64>>>,
    head: usize,
    /// Previous and current input block, back to back.
    window: Vec<f64>,
    time: Vec<f64>,
    acc: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl std::fmt::Debug for ConvolutionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvolutionState")
            .field("block", &self.block)
            .field("ir", &self.ir)
            .field("capacity", &self.history.len())
            .finish()
    }
}

impl ConvolutionState {
    /// An uninitialized convolver able to hold IRs of up to
    /// `max_partitions` blocks.
    pub fn with_capacity(block: usize, max_partitions: usize) -> Result<Self, EffectsError> {
        if block == 0 {
            return Err(EffectsError::ZeroBlock);
        }
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(2 * block);
        let inverse = planner.plan_fft_inverse(2 * block);
        let scratch_len = forward.get_scratch_len().max(inverse.get_scratch_len());
        let history = (0..max_partitions.max(1))
            .map(|_| forward.make_output_vec())
            .collect();
        Ok(Self {
            block,
            ir: None,
            history,
            head: 0,
            window: vec![0.0; 2 * block],
            time: forward.make_input_vec(),
            acc: forward.make_output_vec(),
            scratch: vec![Complex::default(); scratch_len],
            forward,
            inverse,
        })
    }

    /// A convolver loaded with `ir`, partitioned at `block` samples.
    pub fn new(ir: &ImpulseResponse, block: usize) -> Result<Self, EffectsError> {
        let spectrum = IrSpectrum::new(ir, block)?;
        let mut state = Self::with_capacity(block, spectrum.partitions())?;
        state.set_ir(Box::new(spectrum))?;
        Ok(state)
    }

    /// Capacity needed for the longest IR at `block` and `sample_rate`.
    pub fn max_partitions(block: usize, sample_rate: f64) -> usize {
        ((MAX_IR_SECONDS * sample_rate).ceil() as usize).div_ceil(block.max(1))
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn is_initialized(&self) -> bool {
        self.ir.is_some()
    }

    /// Installs a new IR, keeping the input history, and hands back the old
    /// one so the caller decides where it is freed.
    pub fn set_ir(&mut self, ir: Box<IrSpectrum>) -> Result<Option<Box<IrSpectrum>>, EffectsError> {
        if ir.block != self.block {
            return Err(EffectsError::LengthMismatch {
                expected: self.block,
                got: ir.block,
            });
        }
        if ir.partitions() > self.history.len() {
            return Err(EffectsError::IrTooLong {
                len: ir.partitions() * self.block,
                max: self.history.len() * self.block,
            });
        }
        Ok(self.ir.replace(ir))
    }

    /// Clears the input history.
    pub fn reset(&mut self) {
        self.window.iter_mut().for_each(|s| *s = 0.0);
        for h in &mut self.history {
            h.iter_mut().for_each(|c| *c = Complex::default());
        }
        self.head = 0;
    }

    /// Convolves one block of `dry` with the IR and writes
    /// `(1 - mix)·dry + mix·wet` into `out`.
    pub fn process(&mut self, dry: &[f64], out: &mut [f64], mix: f64) -> Result<(), EffectsError> {
        let Some(ir) = self.ir.as_deref() else {
            return Err(EffectsError::Uninitialized);
        };
        let b = self.block;
        for len in [dry.len(), out.len()] {
            if len != b {
                return Err(EffectsError::LengthMismatch {
                    expected: b,
                    got: len,
                });
            }
        }

        self.window.copy_within(b.., 0);
        self.window[b..].copy_from_slice(dry);
        self.head = if self.head == 0 {
            self.history.len() - 1
        } else {
            self.head - 1
        };
        self.time.copy_from_slice(&self.window);
        self.forward
            .process_with_scratch(&mut self.time, &mut self.history[self.head], &mut self.scratch)
            .expect("fft buffers sized by plan");

        self.acc.iter_mut().for_each(|c| *c = Complex::default());
        let slots = self.history.len();
        for (p, part) in ir.parts.iter().enumerate() {
            let x = &self.history[(self.head + p) % slots];
            for ((acc, xi), hi) in self.acc.iter_mut().zip(x).zip(part) {
                *acc += xi * hi;
            }
        }
        let last = self.acc.len() - 1;
        self.acc[0].im = 0.0;
        self.acc[last].im = 0.0;
        self.inverse
            .process_with_scratch(&mut self.acc, &mut self.time, &mut self.scratch)
            .expect("fft buffers sized by plan");

        let norm = 1.0 / (2 * b) as f64;
        let dry_gain = 1.0 - mix;
        for ((o, d), w) in out.iter_mut().zip(dry).zip(&self.time[b..]) {
            *o = dry_gain * d + mix * (w * norm);
        }
        Ok(())
    }
}

/// Processes one block through `state`, returning the mixed output.
pub fn reverb_process(
    dry: &[f64],
    state: &mut ConvolutionState,
    mix: f64,
) -> Result<Vec<f64>, EffectsError> {
    let mut out = vec![0.0; dry.len()];
    state.process(dry, &mut out, mix)?;
    Ok(out)
}
