//! Pitch and loudness extraction.
//!
//! Line input is analyzed one buffer at a time with the YIN estimator: the
//! squared difference function, its cumulative mean normalization, an absolute
//! threshold search and parabolic refinement of the chosen lag. MIDI notes are
//! mapped onto the same `(f0, loudness)` pair so both input modes drive the
//! timbre model identically.

use thiserror::Error;

use crate::controls::{clamp_loudness, finite_or_zero, AnalysisFrame, LOUDNESS_FLOOR_DB};
use crate::MAX_BUFFER_LEN;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid YIN config: {0}")]
    InvalidConfig(String),
    #[error("buffer too short: need {needed} samples, got {got}")]
    BufferTooShort { needed: usize, got: usize },
    #[error("empty buffer")]
    EmptyBuffer,
    #[error("MIDI note {0} out of range 0..=127")]
    NoteOutOfRange(u8),
    #[error("MIDI velocity {0} out of range 0..=127")]
    VelocityOutOfRange(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YinConfig {
    /// Lowest detectable f0, Hz.
    pub f_min: f64,
    /// Highest detectable f0, Hz.
    pub f_max: f64,
    /// Absolute threshold on the normalized difference.
    pub threshold: f64,
    /// Analysis window in samples; a power of two no larger than 4096.
    pub window: usize,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self {
            f_min: 50.0,
            f_max: 2000.0,
            threshold: 0.15,
            window: 2048,
        }
    }
}

impl YinConfig {
    pub fn validate(&self, sample_rate: f64) -> Result<(), AnalysisError> {
        let bad = |msg: String| Err(AnalysisError::InvalidConfig(msg));
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return bad(format!("sample rate {sample_rate} must be positive"));
        }
        if !(self.f_min.is_finite() && self.f_min > 0.0) {
            return bad(format!("f_min {} must be positive", self.f_min));
        }
        if !(self.f_max > self.f_min) {
            return bad(format!("f_max {} must exceed f_min {}", self.f_max, self.f_min));
        }
        if self.f_max >= 0.5 * sample_rate {
            return bad(format!("f_max {} must be below Nyquist", self.f_max));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} must lie in (0, 1)", self.threshold));
        }
        if !self.window.is_power_of_two() || self.window > MAX_BUFFER_LEN {
            return bad(format!(
                "window {} must be a power of two <= {MAX_BUFFER_LEN}",
                self.window
            ));
        }
        if (self.window as f64) < 2.0 * sample_rate / self.f_max {
            return bad(format!(
                "window {} cannot hold two periods of f_max {}",
                self.window, self.f_max
            ));
        }
        Ok(())
    }

    /// Smallest and largest lag searched, in samples.
    fn lag_range(&self, sample_rate: f64) -> (usize, usize) {
        let half = self.window / 2;
        let lo = ((sample_rate / self.f_max).floor() as usize).max(2);
        let hi = ((sample_rate / self.f_min).ceil() as usize).min(half - 2);
        (lo.min(hi), hi)
    }
}

/// Pitch estimate for one buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchEstimate {
    /// `None` when no lag passes the threshold.
    pub f0_hz: Option<f64>,
    pub confidence: f64,
}

impl PitchEstimate {
    const UNVOICED: Self = Self {
        f0_hz: None,
        confidence: 0.0,
    };
}

/// YIN estimator with preallocated scratch, reusable across buffers without
/// allocating.
#[derive(Debug, Clone)]
pub struct YinDetector {
    cfg: YinConfig,
    sample_rate: f64,
    diff: Vec<f64>,
    cmnd: Vec<f64>,
}

impl YinDetector {
    pub fn new(cfg: YinConfig, sample_rate: f64) -> Result<Self, AnalysisError> {
        cfg.validate(sample_rate)?;
        let half = cfg.window / 2;
        Ok(Self {
            cfg,
            sample_rate,
            diff: vec![0.0; half],
            cmnd: vec![0.0; half],
        })
    }

    pub fn config(&self) -> &YinConfig {
        &self.cfg
    }

    /// Estimates f0 from the first `window` samples of `buffer`.
    pub fn detect(&mut self, buffer: &[f64]) -> Result<PitchEstimate, AnalysisError> {
        let window = self.cfg.window;
        if buffer.len() < window {
            return Err(AnalysisError::BufferTooShort {
                needed: window,
                got: buffer.len(),
            });
        }
        let x = &buffer[..window];
        let half = window / 2;
        let (lag_lo, lag_hi) = self.cfg.lag_range(self.sample_rate);

        let energy: f64 = x.iter().map(|s| finite_or_zero(*s).powi(2)).sum();
        if energy <= f64::MIN_POSITIVE {
            return Ok(PitchEstimate::UNVOICED);
        }

        // difference function over a half-window integration span
        let last = (lag_hi + 1).min(half - 1);
        self.diff[0] = 0.0;
        for tau in 1..=last {
            let mut acc = 0.0;
            for j in 0..half {
                let delta = finite_or_zero(x[j]) - finite_or_zero(x[j + tau]);
                acc += delta * delta;
            }
            self.diff[tau] = acc;
        }

        // cumulative mean normalized difference
        self.cmnd[0] = 1.0;
        let mut running = 0.0;
        for tau in 1..=last {
            running += self.diff[tau];
            self.cmnd[tau] = if running > 0.0 {
                self.diff[tau] * tau as f64 / running
            } else {
                1.0
            };
        }

        let mut chosen = None;
        let mut tau = lag_lo;
        while tau <= lag_hi {
            if self.cmnd[tau] < self.cfg.threshold {
                while tau < lag_hi && self.cmnd[tau + 1] < self.cmnd[tau] {
                    tau += 1;
                }
                chosen = Some(tau);
                break;
            }
            tau += 1;
        }
        let Some(tau) = chosen else {
            return Ok(PitchEstimate::UNVOICED);
        };

        let refined = parabolic_vertex(&self.diff, tau);
        let f0 = self.sample_rate / refined;
        if !(f0.is_finite() && f0 >= self.cfg.f_min * 0.99 && f0 <= self.cfg.f_max * 1.01) {
            return Ok(PitchEstimate::UNVOICED);
        }
        Ok(PitchEstimate {
            f0_hz: Some(f0),
            confidence: (1.0 - self.cmnd[tau]).clamp(0.0, 1.0),
        })
    }

    /// Pitch plus loudness of one buffer.
    pub fn analyze(&mut self, buffer: &[f64]) -> Result<AnalysisFrame, AnalysisError> {
        let pitch = self.detect(buffer)?;
        let ld = loudness_db(&buffer[..self.cfg.window])?;
        Ok(match pitch.f0_hz {
            Some(f0) => AnalysisFrame::voiced(f0, pitch.confidence, ld),
            None => AnalysisFrame::unvoiced(ld),
        })
    }
}

/// Refines an integer minimum at `tau` by fitting a parabola through its
/// neighbours.
fn parabolic_vertex(y: &[f64], tau: usize) -> f64 {
    if tau == 0 || tau + 1 >= y.len() {
        return tau as f64;
    }
    let (a, b, c) = (y[tau - 1], y[tau], y[tau + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() <= f64::EPSILON * (a.abs() + b.abs() + c.abs()) {
        return tau as f64;
    }
    let offset = 0.5 * (a - c) / denom;
    tau as f64 + offset.clamp(-1.0, 1.0)
}

/// One-shot YIN estimate. Allocates scratch; use [`YinDetector`] in a loop.
pub fn yin_f0(
    buffer: &[f64],
    sample_rate: f64,
    cfg: &YinConfig,
) -> Result<PitchEstimate, AnalysisError> {
    YinDetector::new(*cfg, sample_rate)?.detect(buffer)
}

/// RMS level in dBFS, clamped to `[-120, 0]`.
pub fn loudness_db(buffer: &[f64]) -> Result<f64, AnalysisError> {
    if buffer.is_empty() {
        return Err(AnalysisError::EmptyBuffer);
    }
    let mean_sq =
        buffer.iter().map(|s| finite_or_zero(*s).powi(2)).sum::<f64>() / buffer.len() as f64;
    if mean_sq <= 0.0 {
        return Ok(LOUDNESS_FLOOR_DB);
    }
    Ok(clamp_loudness(10.0 * mean_sq.log10()))
}

/// Loudness range covered by the MIDI velocity map, dB.
pub const VELOCITY_RANGE_DB: f64 = 60.0;
/// Pitch-bend range in semitones.
pub const PITCH_BEND_RANGE: f64 = 2.0;

/// Maps a note, velocity and pitch bend to `(f0_hz, loudness_db)`.
pub fn midi_to_controls(
    note: u8,
    velocity: u8,
    pitch_bend: f64,
) -> Result<(f64, f64), AnalysisError> {
    if note > 127 {
        return Err(AnalysisError::NoteOutOfRange(note));
    }
    if velocity > 127 {
        return Err(AnalysisError::VelocityOutOfRange(velocity));
    }
    let bend = finite_or_zero(pitch_bend).clamp(-PITCH_BEND_RANGE, PITCH_BEND_RANGE);
    Ok((
        midi_to_hz(note as f64 + bend),
        -VELOCITY_RANGE_DB * (1.0 - velocity as f64 / 127.0),
    ))
}

/// Equal-tempered frequency of a (fractional) MIDI pitch.
pub fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * ((pitch - 69.0) / 12.0).exp2()
}

/// Fractional MIDI pitch of a frequency.
pub fn hz_to_midi(f0_hz: f64) -> f64 {
    69.0 + 12.0 * (f0_hz / 440.0).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const FS: f64 = 44_100.0;

    fn sine(freq: f64, fs: f64, len: usize, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / fs).sin())
            .collect()
    }

    fn square_bandlimited(freq: f64, fs: f64, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        let mut k = 1;
        while (k as f64) * freq < fs / 2.0 {
            let kf = k as f64;
            for (n, s) in out.iter_mut().enumerate() {
                *s += 4.0 / (PI * kf) * (2.0 * PI * kf * freq * n as f64 / fs).sin();
            }
            k += 2;
        }
        out
    }

    /// Integer lag maximizing normalized autocorrelation: a brute-force
    /// period oracle independent of the YIN path.
    fn autocorrelation_period(x: &[f64], lo: usize, hi: usize) -> usize {
        let span = x.len() - hi;
        (lo..=hi)
            .max_by(|&a, &b| {
                let r = |lag: usize| {
                    let num: f64 = (0..span).map(|j| x[j] * x[j + lag]).sum();
                    let den: f64 = (0..span).map(|j| x[j + lag].powi(2)).sum();
                    num / den.sqrt()
                };
                r(a).partial_cmp(&r(b)).unwrap()
            })
            .unwrap()
    }

    /// Smallest integer period whose mean squared difference is tiny.
    fn smallest_matching_period(x: &[f64], lo: usize, hi: usize) -> usize {
        let power: f64 = x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64;
        (lo..=hi)
            .find(|&p| {
                let span = x.len() - p;
                let msd: f64 = (0..span).map(|j| (x[j] - x[j + p]).powi(2)).sum::<f64>() / span as f64;
                msd < 1e-3 * power
            })
            .unwrap()
    }

    #[test]
    fn sine_440_matches_oracle() {
        let x = sine(440.0, FS, 2048, 1.0);
        let est = yin_f0(&x, FS, &YinConfig::default()).unwrap();
        let f0 = est.f0_hz.unwrap();
        assert!((f0 - 440.0).abs() < 2.0, "f0 = {f0}");
        assert!(est.confidence > 0.9);
        let oracle = FS / autocorrelation_period(&x, 22, 150) as f64;
        // one period fits the oracle range; integer lags near 100 resolve ~4.4 Hz
        assert!((f0 - oracle).abs() < 5.0, "yin {f0} oracle {oracle}");
    }

    #[test]
    fn silence_is_unvoiced() {
        let est = yin_f0(&vec![0.0; 2048], FS, &YinConfig::default()).unwrap();
        assert_eq!(est.f0_hz, None);
        assert_eq!(est.confidence, 0.0);
    }

    #[test]
    fn square_wave_finds_fundamental() {
        let x = square_bandlimited(100.0, FS, 2048);
        let f0 = yin_f0(&x, FS, &YinConfig::default()).unwrap().f0_hz.unwrap();
        let oracle = FS / smallest_matching_period(&x, 10, 1000) as f64;
        assert!((oracle - 100.0).abs() < 0.5);
        assert!((f0 - oracle).abs() < 2.0, "yin {f0} oracle {oracle}");
    }

    #[test]
    fn rejects_bad_config_and_short_buffers() {
        let cfg = YinConfig {
            window: 1000,
            ..Default::default()
        };
        assert!(matches!(
            yin_f0(&[0.0; 2048], FS, &cfg),
            Err(AnalysisError::InvalidConfig(_))
        ));
        let cfg = YinConfig {
            f_min: 500.0,
            f_max: 400.0,
            ..Default::default()
        };
        assert!(cfg.validate(FS).is_err());
        assert_eq!(
            yin_f0(&[0.0; 100], FS, &YinConfig::default()),
            Err(AnalysisError::BufferTooShort {
                needed: 2048,
                got: 100
            })
        );
    }

    #[test]
    fn loudness_examples() {
        assert_eq!(loudness_db(&[0.0; 64]).unwrap(), -120.0);
        let square: Vec<f64> = (0..64).map(|n| if n % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_abs_diff_eq!(loudness_db(&square).unwrap(), 0.0, epsilon = 1e-12);
        let s = sine(441.0, FS, 4410, 1.0);
        assert_abs_diff_eq!(loudness_db(&s).unwrap(), -3.0103, epsilon = 0.05);
        assert_eq!(loudness_db(&[]), Err(AnalysisError::EmptyBuffer));
    }

    #[test]
    fn midi_examples() {
        assert_eq!(midi_to_controls(69, 127, 0.0).unwrap(), (440.0, 0.0));
        assert_eq!(midi_to_controls(57, 127, 0.0).unwrap(), (220.0, 0.0));
        let (f0, ld) = midi_to_controls(69, 64, 0.0).unwrap();
        assert_eq!(f0, 440.0);
        assert_abs_diff_eq!(ld, -29.76, epsilon = 0.01);
        assert_eq!(midi_to_controls(69, 0, 0.0).unwrap().1, -60.0);
        assert_eq!(
            midi_to_controls(128, 0, 0.0),
            Err(AnalysisError::NoteOutOfRange(128))
        );
        assert_eq!(
            midi_to_controls(60, 200, 0.0),
            Err(AnalysisError::VelocityOutOfRange(200))
        );
    }

    #[test]
    fn midi_round_trips_for_all_notes() {
        for note in 0..=127u8 {
            let (f0, _) = midi_to_controls(note, 100, 0.0).unwrap();
            assert_eq!(hz_to_midi(f0).round() as u8, note);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pitch_error_below_half_percent(freq in 80.0f64..1000.0, phase in 0.0f64..std::f64::consts::TAU) {
            let x: Vec<f64> = (0..2048)
                .map(|n| (2.0 * PI * freq * n as f64 / FS + phase).sin())
                .collect();
            let f0 = yin_f0(&x, FS, &YinConfig::default()).unwrap().f0_hz.unwrap();
            prop_assert!((f0 - freq).abs() / freq < 0.005, "{} vs {}", f0, freq);
        }

        #[test]
        fn amplitude_invariant(freq in 80.0f64..1000.0, gain in 1e-3f64..1e3) {
            let x = sine(freq, FS, 2048, 1.0);
            let y: Vec<f64> = x.iter().map(|s| s * gain).collect();
            let cfg = YinConfig::default();
            let a = yin_f0(&x, FS, &cfg).unwrap().f0_hz.unwrap();
            let b = yin_f0(&y, FS, &cfg).unwrap().f0_hz.unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a);
        }

        #[test]
        fn loudness_monotone_in_gain(g1 in 0.0f64..2.0, g2 in 0.0f64..2.0) {
            let x = sine(300.0, FS, 512, 1.0);
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let a: Vec<f64> = x.iter().map(|s| s * lo).collect();
            let b: Vec<f64> = x.iter().map(|s| s * hi).collect();
            prop_assert!(loudness_db(&a).unwrap() <= loudness_db(&b).unwrap());
        }
    }
}
