//! Harmonic oscillator bank.
//!
//! Harmonic `k` of fundamental `f0` sits at `k · f0`. Two macros bend that
//! layout: `shift` transposes the fundamental by up to an octave either way and
//! `stretch` widens or narrows the spacing between partials while leaving the
//! first partial where it is:
//!
//! ```text
//! f0'  = f0 · 2^shift
//! f_k  = f0' · (1 + (k − 1)(1 + stretch))      k = 1..K
//! ```
//!
//! Each harmonic keeps a running phase, `φ_k(n) = φ_k(n−1) + 2π f_k(n) / fs`,
//! which is stored in [`OscillatorState`] at the end of a buffer and resumed in
//! the next one, so consecutive buffers join without phase jumps. Within a
//! buffer, frequency and amplitude ramp linearly from the previous buffer's
//! final values to the new targets, which keeps the control rate at one frame
//! per buffer without zipper noise.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::controls::{finite_or_zero, normalize_unit_sum, ControlFrame, MacroParams, OscillatorState};
use crate::MAX_BUFFER_LEN;

#[derive(Debug, Error, PartialEq)]
pub enum AdditiveError {
    #[error("oscillator state has {got} harmonics, frame has {expected}")]
    StateMismatch { expected: usize, got: usize },
    #[error("buffer length {0} exceeds {MAX_BUFFER_LEN}")]
    BufferTooLong(usize),
    #[error("buffer length must be at least 1")]
    EmptyBuffer,
}

/// Maps an unbounded network output onto a positive amplitude with an
/// exponentiated sigmoid, `2·σ(x)^ln 10 + 1e-7`.
pub fn scale_amplitude(raw: f64) -> f64 {
    const FLOOR: f64 = 1e-7;
    if raw.is_nan() {
        return FLOOR;
    }
    let sigmoid = if raw >= 0.0 {
        1.0 / (1.0 + (-raw).exp())
    } else {
        let e = raw.exp();
        e / (1.0 + e)
    };
    2.0 * sigmoid.powf(std::f64::consts::LN_10) + FLOOR
}

/// Per-harmonic target frequencies and amplitudes for one buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HarmonicPlan {
    pub freqs: Vec<f64>,
    pub amps: Vec<f64>,
}

impl HarmonicPlan {
    pub fn with_harmonics(harmonics: usize) -> Self {
        Self {
            freqs: vec![0.0; harmonics],
            amps: vec![0.0; harmonics],
        }
    }

    /// Fills the plan from a frame and the macro layer without allocating
    /// when the sizes already match.
    pub fn fill(&mut self, frame: &ControlFrame, params: &MacroParams, sample_rate: f64) {
        let k = frame.harmonics();
        self.freqs.resize(k, 0.0);
        self.amps.resize(k, 0.0);
        fill_harmonic_frequencies(
            &mut self.freqs,
            finite_or_zero(frame.f0_hz).max(0.0),
            params.stretch,
            params.shift,
        );
        for (a, c) in self.amps.iter_mut().zip(&frame.harmonic_distribution) {
            *a = finite_or_zero(*c).max(0.0);
        }
        bandlimit_normalize_in_place(&mut self.amps, &self.freqs, sample_rate);
        let base = finite_or_zero(frame.amplitude).max(0.0) * params.harmonic_gain;
        for (i, a) in self.amps.iter_mut().enumerate() {
            let edit = params.harmonic_edit.get(i).copied().unwrap_or(1.0);
            *a *= base * edit;
        }
    }
}

/// Builds the plan for `frame` under `params`.
pub fn plan_harmonics(frame: &ControlFrame, params: &MacroParams, sample_rate: f64) -> HarmonicPlan {
    let mut plan = HarmonicPlan::with_harmonics(frame.harmonics());
    plan.fill(frame, params, sample_rate);
    plan
}

/// Frequencies of `harmonics` partials under the stretch and shift macros.
pub fn harmonic_frequencies(f0: f64, harmonics: usize, stretch: f64, shift: f64) -> Vec<f64> {
    let mut out = vec![0.0; harmonics];
    fill_harmonic_frequencies(&mut out, f0, stretch, shift);
    out
}

fn fill_harmonic_frequencies(out: &mut [f64], f0: f64, stretch: f64, shift: f64) {
    let stretch = finite_or_zero(stretch).clamp(-1.0, 1.0);
    let shift = finite_or_zero(shift).clamp(-1.0, 1.0);
    let fundamental = if shift == 0.0 { f0 } else { f0 * shift.exp2() };
    let spacing = 1.0 + stretch;
    for (i, f) in out.iter_mut().enumerate() {
        *f = if stretch == 0.0 {
            (i + 1) as f64 * fundamental
        } else {
            fundamental * (1.0 + i as f64 * spacing)
        };
    }
}

/// Zeroes weights at or above Nyquist, then scales the rest to unit sum.
pub fn bandlimit_normalize(weights: &[f64], freqs: &[f64], sample_rate: f64) -> Vec<f64> {
    let mut out = weights.to_vec();
    bandlimit_normalize_in_place(&mut out, freqs, sample_rate);
    out
}

pub fn bandlimit_normalize_in_place(weights: &mut [f64], freqs: &[f64], sample_rate: f64) {
    debug_assert_eq!(weights.len(), freqs.len());
    let nyquist = 0.5 * sample_rate;
    for (w, f) in weights.iter_mut().zip(freqs) {
        if *f >= nyquist || !f.is_finite() {
            *w = 0.0;
        }
    }
    normalize_unit_sum(weights);
}

/// Oscillator bank with its own plan scratch; renders without allocating once
/// constructed for a given harmonic count.
#[derive(Debug, Clone)]
pub struct HarmonicSynth {
    sample_rate: f64,
    plan: HarmonicPlan,
}

impl HarmonicSynth {
    pub fn new(sample_rate: f64, harmonics: usize) -> Self {
        Self {
            sample_rate,
            plan: HarmonicPlan::with_harmonics(harmonics),
        }
    }

    /// A synth whose scratch never reallocates for up to `max_harmonics`
    /// partials, so models can be swapped on the audio thread.
    pub fn with_max_harmonics(sample_rate: f64, max_harmonics: usize) -> Self {
        Self {
            sample_rate,
            plan: HarmonicPlan {
                freqs: Vec::with_capacity(max_harmonics),
                amps: Vec::with_capacity(max_harmonics),
            },
        }
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Target plan used for the most recent render.
    pub fn plan(&self) -> &HarmonicPlan {
        &self.plan
    }

    /// Renders `out.len()` samples, overwriting `out`, and advances `state`.
    pub fn render(
        &mut self,
        frame: &ControlFrame,
        params: &MacroParams,
        state: &mut OscillatorState,
        out: &mut [f64],
    ) -> Result<(), AdditiveError> {
        let len = out.len();
        if len == 0 {
            return Err(AdditiveError::EmptyBuffer);
        }
        if len > MAX_BUFFER_LEN {
            return Err(AdditiveError::BufferTooLong(len));
        }
        if state.harmonics() != frame.harmonics() {
            return Err(AdditiveError::StateMismatch {
                expected: frame.harmonics(),
                got: state.harmonics(),
            });
        }
        self.plan.fill(frame, params, self.sample_rate);
        if !state.started {
            state.prev_f.copy_from_slice(&self.plan.freqs);
            state.started = true;
        }

        out.iter_mut().for_each(|s| *s = 0.0);
        let nyquist = 0.5 * self.sample_rate;
        let phase_per_hz = TAU / self.sample_rate;
        let inv_len = 1.0 / len as f64;
        let harmonics = self.plan.freqs.iter().zip(&self.plan.amps);
        for (k, (&f_target, &a_target)) in harmonics.enumerate() {
            let f_start = state.prev_f[k];
            let a_start = state.prev_amp[k];
            let mut phase = state.phases[k];
            let df = f_target - f_start;
            let da = a_target - a_start;
            if da == 0.0 && a_start == 0.0 && df == 0.0 {
                // silent and steady: only the phase moves
                let step = f_target * phase_per_hz;
                for _ in 0..len {
                    phase += step;
                    if phase >= TAU {
                        phase -= TAU;
                    }
                }
            } else {
                for (n, s) in out.iter_mut().enumerate() {
                    let t = (n + 1) as f64 * inv_len;
                    let f = f_start + df * t;
                    let a = a_start + da * t;
                    phase += f * phase_per_hz;
                    if phase >= TAU {
                        phase -= TAU;
                    }
                    if f < nyquist {
                        *s += a * phase.sin();
                    }
                }
            }
            state.phases[k] = phase.rem_euclid(TAU);
            state.prev_f[k] = f_target;
            state.prev_amp[k] = a_target;
        }
        Ok(())
    }
}

/// Renders one buffer of harmonic audio, returning it with the advanced
/// oscillator state.
pub fn render_harmonics(
    frame: &ControlFrame,
    params: &MacroParams,
    state: &OscillatorState,
    buffer_len: usize,
    sample_rate: f64,
) -> Result<(Vec<f64>, OscillatorState), AdditiveError> {
    if buffer_len > MAX_BUFFER_LEN {
        return Err(AdditiveError::BufferTooLong(buffer_len));
    }
    let mut synth = HarmonicSynth::new(sample_rate, frame.harmonics());
    let mut next = state.clone();
    let mut out = vec![0.0; buffer_len];
    synth.render(frame, params, &mut next, &mut out)?;
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{magnitude_spectrum, peak_bins};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_params(k: usize) -> MacroParams {
        MacroParams::with_harmonics(k)
    }

    /// State whose history equals the frame's targets, so the render has no
    /// ramp.
    fn primed(frame: &ControlFrame, params: &MacroParams, fs: f64) -> OscillatorState {
        let plan = plan_harmonics(frame, params, fs);
        OscillatorState {
            phases: vec![0.0; frame.harmonics()],
            prev_f: plan.freqs,
            prev_amp: plan.amps,
            started: true,
        }
    }

    #[test]
    fn scale_amplitude_values() {
        let expected = 2.0 * 0.5f64.powf(10f64.ln()) + 1e-7;
        assert_abs_diff_eq!(scale_amplitude(0.0), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(scale_amplitude(0.0), 0.4054, epsilon = 1e-4);
        assert_abs_diff_eq!(scale_amplitude(-1e6), 1e-7, epsilon = 1e-15);
        assert_abs_diff_eq!(scale_amplitude(1e6), 2.0 + 1e-7, epsilon = 1e-12);
        assert!(scale_amplitude(-1.0) < scale_amplitude(1.0));
    }

    #[test]
    fn harmonic_frequency_examples() {
        assert_eq!(harmonic_frequencies(110.0, 4, 0.0, 0.0), vec![110.0, 220.0, 330.0, 440.0]);
        assert_eq!(harmonic_frequencies(440.0, 1, 0.0, 1.0), vec![880.0]);
        assert_eq!(harmonic_frequencies(440.0, 1, 0.0, -1.0), vec![220.0]);
        let f = harmonic_frequencies(100.0, 3, 0.5, 0.0);
        for (a, b) in f.iter().zip([100.0, 250.0, 400.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn bandlimit_examples() {
        let freqs = harmonic_frequencies(3000.0, 5, 0.0, 0.0);
        assert_eq!(
            bandlimit_normalize(&[1.0; 5], &freqs, 16_000.0),
            vec![0.5, 0.5, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            bandlimit_normalize(&[0.0; 3], &[100.0, 200.0, 300.0], 16_000.0),
            vec![0.0; 3]
        );
        assert_eq!(
            bandlimit_normalize(&[2.0, 2.0], &[100.0, 200.0], 16_000.0),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn zero_amplitude_is_silent_but_phases_advance() {
        let frame = ControlFrame::new(440.0, 0.0, vec![1.0, 0.5], vec![]);
        let params = unit_params(2);
        let state = OscillatorState::new(2);
        let (out, next) = render_harmonics(&frame, &params, &state, 256, 44_100.0).unwrap();
        assert!(out.iter().all(|s| *s == 0.0));
        assert!(next.phases.iter().all(|p| *p > 0.0 && *p < TAU));
    }

    #[test]
    fn single_harmonic_matches_cumulative_phase_oracle() {
        let fs = 8000.0;
        let frame = ControlFrame::new(1000.0, 1.0, vec![1.0], vec![]);
        let params = unit_params(1);
        let state = primed(&frame, &params, fs);
        let (out, _) = render_harmonics(&frame, &params, &state, 64, fs).unwrap();
        // brute-force cumulative sum of the phase increments
        let mut phase = 0.0;
        for (n, s) in out.iter().enumerate() {
            phase += TAU * 1000.0 / fs;
            assert_abs_diff_eq!(*s, phase.sin(), epsilon = 1e-9);
            assert_abs_diff_eq!(*s, (TAU * 1000.0 * (n + 1) as f64 / fs).sin(), epsilon = 1e-9);
        }
    }

    #[test]
    fn errors() {
        let frame = ControlFrame::new(440.0, 1.0, vec![1.0; 3], vec![]);
        let params = unit_params(3);
        assert_eq!(
            render_harmonics(&frame, &params, &OscillatorState::new(2), 64, 44_100.0).unwrap_err(),
            AdditiveError::StateMismatch { expected: 3, got: 2 }
        );
        assert_eq!(
            render_harmonics(&frame, &params, &OscillatorState::new(3), 4097, 44_100.0).unwrap_err(),
            AdditiveError::BufferTooLong(4097)
        );
        assert_eq!(
            render_harmonics(&frame, &params, &OscillatorState::new(3), 0, 44_100.0).unwrap_err(),
            AdditiveError::EmptyBuffer
        );
    }

    #[test]
    fn first_buffer_ramps_amplitude_not_frequency() {
        let fs = 44_100.0;
        let frame = ControlFrame::new(440.0, 1.0, vec![1.0], vec![]);
        let (out, next) =
            render_harmonics(&frame, &unit_params(1), &OscillatorState::new(1), 512, fs).unwrap();
        assert!(out[0].abs() < 1e-2);
        assert_eq!(next.prev_f, vec![440.0]);
        assert_eq!(next.prev_amp, vec![1.0]);
    }

    #[test]
    fn shift_moves_peak_by_octave() {
        let fs = 44_100.0;
        let len = 4096;
        let frame = ControlFrame::new(689.0625, 1.0, vec![1.0], vec![]);
        let bin_hz = fs / len as f64;
        let peak = |shift: f64| {
            let mut params = unit_params(1);
            params.shift = shift;
            let state = primed(&frame, &params, fs);
            let (out, _) = render_harmonics(&frame, &params, &state, len, fs).unwrap();
            peak_bins(&magnitude_spectrum(&out), 1)[0] as f64 * bin_hz
        };
        let base = peak(0.0);
        assert!((peak(1.0) - 2.0 * base).abs() <= bin_hz);
        assert!((peak(-1.0) - 0.5 * base).abs() <= bin_hz);
    }

    fn any_frame() -> impl Strategy<Value = (ControlFrame, MacroParams)> {
        (
            20.0f64..4000.0,
            0.0f64..2.0,
            prop::collection::vec(0.0f64..1.0, 1..12),
            -1.0f64..1.0,
            -1.0f64..1.0,
            0.0f64..2.0,
        )
            .prop_flat_map(|(f0, amp, c, stretch, shift, gain)| {
                let k = c.len();
                prop::collection::vec(0.0f64..2.0, k).prop_map(move |edit| {
                    let frame = ControlFrame::new(f0, amp, c.clone(), vec![]);
                    let mut params = MacroParams::with_harmonics(k);
                    params.stretch = stretch;
                    params.shift = shift;
                    params.harmonic_gain = gain;
                    params.harmonic_edit = edit;
                    (frame, params)
                })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn split_render_equals_whole_render(
            (frame, params) in any_frame(),
            split in 1usize..600,
        ) {
            let fs = 44_100.0;
            let total = 1024;
            let state = primed(&frame, &params, fs);
            let (whole, _) = render_harmonics(&frame, &params, &state, total, fs).unwrap();
            let (a, mid) = render_harmonics(&frame, &params, &state, split, fs).unwrap();
            let (b, _) = render_harmonics(&frame, &params, &mid, total - split, fs).unwrap();
            let joined: Vec<f64> = a.into_iter().chain(b).collect();
            let max = whole.iter().zip(&joined).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(max < 1e-9, "max diff {}", max);
        }

        #[test]
        fn output_is_bounded((frame, params) in any_frame()) {
            let fs = 44_100.0;
            let state = primed(&frame, &params, fs);
            let (out, _) = render_harmonics(&frame, &params, &state, 512, fs).unwrap();
            let max_edit = params.harmonic_edit.iter().cloned().fold(0.0, f64::max);
            let bound = frame.amplitude * params.harmonic_gain * max_edit;
            prop_assert!(out.iter().all(|s| s.abs() <= bound + 1e-9));
        }

        #[test]
        fn planned_partials_stay_below_nyquist((frame, params) in any_frame()) {
            let fs = 16_000.0;
            let plan = plan_harmonics(&frame, &params, fs);
            for (f, a) in plan.freqs.iter().zip(&plan.amps) {
                prop_assert!(*a == 0.0 || *f < fs / 2.0);
            }
        }

        #[test]
        fn frequencies_increase_unless_fully_compressed(
            f0 in 1.0f64..2000.0, k in 2usize..40, stretch in -0.999f64..1.0, shift in -1.0f64..1.0,
        ) {
            let f = harmonic_frequencies(f0, k, stretch, shift);
            prop_assert!(f.windows(2).all(|w| w[1] > w[0]));
        }

        #[test]
        fn normalization_keeps_argmax(c in prop::collection::vec(0.0f64..1.0, 2..20), f0 in 50.0f64..3000.0) {
            let freqs = harmonic_frequencies(f0, c.len(), 0.0, 0.0);
            let fs = 16_000.0;
            let in_band: Vec<f64> = c.iter().zip(&freqs)
                .map(|(w, f)| if *f < fs / 2.0 { *w } else { 0.0 }).collect();
            let normed = bandlimit_normalize(&c, &freqs, fs);
            let argmax = |v: &[f64]| v.iter().enumerate()
                .fold((0, f64::MIN), |acc, (i, x)| if *x > acc.1 { (i, *x) } else { acc }).0;
            if in_band.iter().any(|w| *w > 0.0) {
                prop_assert_eq!(argmax(&in_band), argmax(&normed));
            }
        }
    }
}
