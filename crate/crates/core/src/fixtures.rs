//! Synthetic fixture models.
//!
//! These are hand-shaped spectral envelopes, not trained timbres. They give
//! the engine four instrument-like models (violin, flute, saxophone,
//! trumpet) plus a bare single-harmonic `sine` model for tests. Each model
//! varies its harmonic tilt with loudness and filters harmonics through a
//! fixed formant, so the spectrum shifts with pitch like a body resonance
//! would.

use std::collections::BTreeMap;
use std::path::Path;

use crate::additive::scale_amplitude;
use crate::analysis::midi_to_hz;
use crate::controls::{ControlFrame, DEFAULT_HARMONICS, DEFAULT_NOISE_BINS};
use crate::timbre::{ModelError, TimbreModel};

/// Names of every fixture model.
pub const FIXTURE_NAMES: [&str; 5] = ["flute", "saxophone", "sine", "trumpet", "violin"];

const PITCH_GRID: [f64; 6] = [36.0, 48.0, 60.0, 72.0, 84.0, 96.0];
const LOUDNESS_GRID: [f64; 5] = [-80.0, -60.0, -40.0, -20.0, 0.0];
/// Noise magnitudes are laid out against this rate.
const REFERENCE_RATE: f64 = 44_100.0;

struct Voice {
    /// Spectral slope at soft and loud dynamics (`c_k ∝ k^-slope`).
    slope: (f64, f64),
    /// Formant center and width in Hz, and its peak gain.
    formant: (f64, f64, f64),
    /// Relative level of even harmonics.
    even: f64,
    /// Noise level relative to amplitude, and its spectral center in Hz.
    noise: (f64, f64),
}

fn voice(name: &str) -> Option<Voice> {
    Some(match name {
        "violin" => Voice {
            slope: (1.6, 0.9),
            formant: (2_800.0, 1_200.0, 3.0),
            even: 0.9,
            noise: (0.02, 4_000.0),
        },
        "flute" => Voice {
            slope: (3.0, 1.9),
            formant: (1_000.0, 800.0, 1.5),
            even: 1.0,
            noise: (0.12, 2_500.0),
        },
        "saxophone" => Voice {
            slope: (1.9, 1.1),
            formant: (1_500.0, 900.0, 4.0),
            even: 0.6,
            noise: (0.05, 3_000.0),
        },
        "trumpet" => Voice {
            slope: (1.8, 0.6),
            formant: (1_200.0, 1_000.0, 6.0),
            even: 1.0,
            noise: (0.015, 5_000.0),
        },
        _ => return None,
    })
}

fn gaussian(x: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((x - center) / width).powi(2)).exp()
}

fn voice_frame(v: &Voice, pitch: f64, loudness: f64) -> ControlFrame {
    let f0 = midi_to_hz(pitch);
    // 0 at the softest grid row, 1 at the loudest
    let dynamics = (loudness - LOUDNESS_GRID[0]) / (LOUDNESS_GRID[4] - LOUDNESS_GRID[0]);
    let slope = v.slope.0 + (v.slope.1 - v.slope.0) * dynamics;
    let (fc, bw, peak) = v.formant;
    let harmonics: Vec<f64> = (1..=DEFAULT_HARMONICS)
        .map(|k| {
            let kf = k as f64;
            let parity = if k % 2 == 0 { v.even } else { 1.0 };
            let body = 1.0 + (peak - 1.0) * gaussian(kf * f0, fc, bw);
            parity * body * kf.powf(-slope)
        })
        .collect();
    let amplitude = scale_amplitude(loudness / 15.0 + 0.5);
    let (level, center) = v.noise;
    let noise: Vec<f64> = (0..DEFAULT_NOISE_BINS)
        .map(|i| {
            let f = i as f64 * 0.5 * REFERENCE_RATE / (DEFAULT_NOISE_BINS - 1) as f64;
            level * amplitude * (0.2 + gaussian(f, center, 0.6 * center))
        })
        .collect();
    ControlFrame::new(0.0, amplitude, harmonics, noise)
}

fn sine_frame(loudness: f64) -> ControlFrame {
    let amplitude = scale_amplitude(loudness / 15.0 + 0.5);
    ControlFrame::new(0.0, amplitude, vec![1.0], vec![0.0; DEFAULT_NOISE_BINS])
}

/// Builds the fixture model called `name`.
pub fn fixture_model(name: &str) -> Option<TimbreModel> {
    let frame_for: Box<dyn Fn(f64, f64) -> ControlFrame> = if name == "sine" {
        Box::new(|_, ld| sine_frame(ld))
    } else {
        let v = voice(name)?;
        Box::new(move |p, ld| voice_frame(&v, p, ld))
    };
    let frames = PITCH_GRID
        .iter()
        .flat_map(|&p| LOUDNESS_GRID.iter().map(move |&ld| (p, ld)))
        .map(|(p, ld)| frame_for(p, ld))
        .collect();
    let mut metadata = BTreeMap::new();
    metadata.insert("kind".to_string(), "synthetic fixture".to_string());
    metadata.insert("noise_reference_rate".to_string(), REFERENCE_RATE.to_string());
    let model = TimbreModel::new(
        name,
        PITCH_GRID.to_vec(),
        LOUDNESS_GRID.to_vec(),
        frames,
        metadata,
    )
    .expect("fixture grids are valid");
    Some(model)
}

/// Writes every fixture model under `root`.
pub fn write_fixtures(root: &Path) -> Result<(), ModelError> {
    for name in FIXTURE_NAMES {
        fixture_model(name).expect("known fixture").save(root)?;
    }
    Ok(())
}
