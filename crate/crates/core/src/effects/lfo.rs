use std::f64::consts::TAU;

/// Longest onset delay of the modulation, reached at `delay = 1`.
pub const MOD_DELAY_MAX_SECONDS: f64 = 2.0;

/// Amplitude LFO state: phase plus an onset countdown in samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LfoState {
    pub phase: f64,
    pub countdown: usize,
    armed: bool,
}

impl LfoState {
    /// Restarts the onset delay and phase, e.g. on a new note.
    pub fn retrigger(&mut self) {
        self.phase = 0.0;
        self.countdown = 0;
        self.armed = false;
    }

    pub fn is_delaying(&self) -> bool {
        !self.armed || self.countdown > 0
    }
}

/// Tremolo: `out = in · (1 − amount · (0.5 − 0.5·cos φ))`, with `φ` starting at
/// zero once `delay · 2 s` of input has passed unmodulated.
pub fn lfo_modulate(
    buffer: &mut [f64],
    state: &mut LfoState,
    rate: f64,
    amount: f64,
    delay: f64,
    sample_rate: f64,
) {
    if !state.armed {
        let delay = if delay.is_finite() { delay.clamp(0.0, 1.0) } else { 0.0 };
        state.countdown = (delay * MOD_DELAY_MAX_SECONDS * sample_rate).round() as usize;
        state.armed = true;
    }
    let amount = if amount.is_finite() { amount.clamp(0.0, 1.0) } else { 0.0 };
    let step = TAU * rate.max(0.0) / sample_rate;
    let mut phase = state.phase;
    for s in buffer.iter_mut() {
        if state.countdown > 0 {
            state.countdown -= 1;
            continue;
        }
        if amount != 0.0 {
            *s *= 1.0 - amount * (0.5 - 0.5 * phase.cos());
        }
        phase += step;
        if phase >= TAU {
            phase -= TAU;
        }
    }
    state.phase = phase.rem_euclid(TAU);
}
