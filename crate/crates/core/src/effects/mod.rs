//! Post-synthesis chain: amplitude LFO, convolution reverb and the master
//! stage.

mod lfo;
mod reverb;

pub use lfo::{lfo_modulate, LfoState, MOD_DELAY_MAX_SECONDS};
pub use reverb::{
    design_ir, reverb_process, ConvolutionState, ImpulseResponse, IrSpectrum, MAX_IR_SECONDS,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EffectsError {
    #[error("reverb size {0} s outside (0, {MAX_IR_SECONDS}]")]
    SizeOutOfRange(f64),
    #[error("impulse response is empty")]
    EmptyIr,
    #[error("impulse response has {len} samples, more than {max}")]
    IrTooLong { len: usize, max: usize },
    #[error("impulse response contains non-finite samples")]
    NonFiniteIr,
    #[error("convolution state has no impulse response")]
    Uninitialized,
    #[error("buffer length {got} does not match {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("partition size must be at least 1")]
    ZeroBlock,
}

/// Sums harmonic and noise parts, applies `master_gain` and hard-clips to
/// `[-1, 1]`.
pub fn mix_master(harmonic: &[f64], noise: &[f64], master_gain: f64) -> Result<Vec<f64>, EffectsError> {
    if harmonic.len() != noise.len() {
        return Err(EffectsError::LengthMismatch {
            expected: harmonic.len(),
            got: noise.len(),
        });
    }
    let mut out: Vec<f64> = harmonic.iter().zip(noise).map(|(h, n)| h + n).collect();
    master_in_place(&mut out, master_gain);
    Ok(out)
}

/// Master gain and hard clip, in place. Non-finite samples become silence.
pub fn master_in_place(buffer: &mut [f64], master_gain: f64) {
    for s in buffer {
        let v = *s * master_gain;
        *s = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    }
}
