use serde::Serialize;

/// FFT length of the telemetry spectrogram.
pub const TELEMETRY_FFT_LEN: usize = 512;
/// Bins per spectrogram column.
pub const TELEMETRY_BINS: usize = TELEMETRY_FFT_LEN / 2 + 1;

/// Per-buffer snapshot for visualization. Fixed-size so it moves through
/// queues without touching the heap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineTelemetry {
    /// Running count of processed buffers.
    pub block: u64,
    #[serde(serialize_with = "serialize_column")]
    pub spectrogram: [f32; TELEMETRY_BINS],
    pub peak_db: f32,
    pub rms_db: f32,
    /// Current fundamental, 0 when silent.
    pub f0_hz: f32,
    /// Processing time as a fraction of the buffer period.
    pub utilization: f32,
}

fn serialize_column<S: serde::Serializer>(col: &[f32; TELEMETRY_BINS], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(col.iter())
}

impl Default for EngineTelemetry {
    fn default() -> Self {
        Self {
            block: 0,
            spectrogram: [-120.0; TELEMETRY_BINS],
            peak_db: -120.0,
            rms_db: -120.0,
            f0_hz: 0.0,
            utilization: 0.0,
        }
    }
}

impl EngineTelemetry {
    /// Spectrogram column quantized to 8-bit steps over [-120, 0] dB.
    pub fn quantized_column(&self) -> Vec<u8> {
        self.spectrogram.iter().map(|db| quantize_db(*db)).collect()
    }
}

/// Maps [-120, 0] dB onto 0..=255.
pub fn quantize_db(db: f32) -> u8 {
    let clamped = if db.is_nan() { -120.0 } else { db.clamp(-120.0, 0.0) };
    ((clamped + 120.0) / 120.0 * 255.0).round() as u8
}
