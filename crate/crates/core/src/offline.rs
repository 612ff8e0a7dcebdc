//! Offline rendering: WAV and event-script input, buffer-by-buffer engine
//! runs, WAV and spectrogram output.
//!
//! An event script is a CSV with one event per line:
//!
//! ```text
//! # time_s, event, note, velocity
//! 0.0, note_on, 69, 100
//! 1.5, note_off, 69
//! 2.0, end
//! ```
//!
//! `event` is `note_on`, `note_off`, `bend` (the third column is semitones),
//! `all_off` or `end`. Events take effect at the start of the buffer that
//! contains their time stamp. Without an `end` row the render runs until the
//! last event plus a tail long enough for the reverb to ring out.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{loudness_db, AnalysisError, YinConfig, YinDetector};
use crate::controls::{AnalysisFrame, InputMode, MacroParams, LOUDNESS_FLOOR_DB};
use crate::engine::{
    create_engine, EngineConfig, EngineError, MidiEvent, ParamError, ParamId, ParamUpdate, TELEMETRY_BINS,
    TELEMETRY_FFT_LEN,
};

/// Extra render time after the last scripted event, on top of the reverb size.
pub const TAIL_SECONDS: f64 = 0.5;
/// Sample rate used for event-script renders.
pub const DEFAULT_SAMPLE_RATE: f64 = 44_100.0;
pub const DEFAULT_BUFFER_LEN: usize = 1024;

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error("cannot read {path}: {reason}")]
    Input { path: PathBuf, reason: String },
    #[error("event script line {line}: {reason}")]
    Script { line: usize, reason: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("cannot write {path}: {reason}")]
    Output { path: PathBuf, reason: String },
}

/// Sample format of written WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

/// Reads a WAV file as mono `f64` (channels averaged) and its sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, f64), OfflineError> {
    let err = |reason: String| OfflineError::Input {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| err(e.to_string()))?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| err(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| err(e.to_string()))?
        }
    };
    let channels = spec.channels.max(1) as usize;
    let mono = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((mono, spec.sample_rate as f64))
}

/// Writes interleaved stereo frames.
pub fn write_wav(path: &Path, frames: &[[f32; 2]], sample_rate: u32, format: WavFormat) -> Result<(), OfflineError> {
    let err = |reason: String| OfflineError::Output {
        path: path.to_path_buf(),
        reason,
    };
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let file = fs::File::create(path).map_err(|e| err(e.to_string()))?;
    let mut writer = hound::WavWriter::new(BufWriter::new(file), spec).map_err(|e| err(e.to_string()))?;
    for s in frames.iter().flatten() {
        let r = match format {
            WavFormat::Pcm16 => writer.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16),
            WavFormat::Float32 => writer.write_sample(*s),
        };
        r.map_err(|e| err(e.to_string()))?;
    }
    writer.finalize().map_err(|e| err(e.to_string()))
}

/// One row of an event script.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScriptEvent {
    Midi { time: f64, event: MidiEvent },
    End { time: f64 },
}

impl ScriptEvent {
    pub fn time(&self) -> f64 {
        match self {
            ScriptEvent::Midi { time, .. } | ScriptEvent::End { time } => *time,
        }
    }
}

/// Parses an event script. Blank lines and `#` comments are skipped, as is a
/// first row starting with `time`.
pub fn parse_event_script(text: &str) -> Result<Vec<ScriptEvent>, OfflineError> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (events.is_empty() && line.starts_with("time")) {
            continue;
        }
        let bad = |reason: String| OfflineError::Script { line: i + 1, reason };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let time: f64 = cols[0].parse().map_err(|_| bad(format!("bad time {:?}", cols[0])))?;
        if !time.is_finite() || time < 0.0 {
            return Err(bad(format!("time {time} must be non-negative")));
        }
        let kind = cols.get(1).copied().unwrap_or("");
        let int_col = |j: usize, what: &str| -> Result<u8, OfflineError> {
            let text = cols.get(j).copied().unwrap_or("");
            text.parse::<u8>()
                .ok()
                .filter(|v| *v <= 127)
                .ok_or_else(|| bad(format!("{what} {text:?} must be 0..=127")))
        };
        let event = match kind {
            "note_on" => MidiEvent::NoteOn {
                note: int_col(2, "note")?,
                velocity: int_col(3, "velocity")?,
            },
            "note_off" => MidiEvent::NoteOff {
                note: int_col(2, "note")?,
            },
            "bend" => {
                let text = cols.get(2).copied().unwrap_or("");
                let semitones: f64 = text.parse().map_err(|_| bad(format!("bad bend {text:?}")))?;
                MidiEvent::PitchBend { semitones }
            }
            "all_off" => MidiEvent::AllNotesOff,
            "end" => {
                events.push(ScriptEvent::End { time });
                continue;
            }
            other => return Err(bad(format!("unknown event {other:?}"))),
        };
        events.push(ScriptEvent::Midi { time, event });
    }
    events.sort_by(|a, b| a.time().total_cmp(&b.time()));
    Ok(events)
}

/// Where the engine's input comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RenderInput {
    /// Line-level audio; drives the engine in line mode by default.
    Audio { samples: Vec<f64>, sample_rate: f64 },
    /// A MIDI performance; drives the engine in MIDI mode by default.
    Events { events: Vec<ScriptEvent>, sample_rate: f64 },
}

impl RenderInput {
    /// Loads a `.wav` file as audio and anything else as an event script.
    pub fn load(path: &Path) -> Result<Self, OfflineError> {
        let is_wav = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav {
            let (samples, sample_rate) = read_wav(path)?;
            return Ok(RenderInput::Audio { samples, sample_rate });
        }
        let text = fs::read_to_string(path).map_err(|e| OfflineError::Input {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(RenderInput::Events {
            events: parse_event_script(&text)?,
            sample_rate: DEFAULT_SAMPLE_RATE,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        match self {
            RenderInput::Audio { sample_rate, .. } | RenderInput::Events { sample_rate, .. } => *sample_rate,
        }
    }

    fn default_mode(&self) -> InputMode {
        match self {
            RenderInput::Audio { .. } => InputMode::Line,
            RenderInput::Events { .. } => InputMode::Midi,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderJob {
    pub input: RenderInput,
    pub model_root: PathBuf,
    pub model: String,
    /// Overrides the input's default mode.
    pub mode: Option<InputMode>,
    /// Applied in order before the first buffer.
    pub updates: Vec<ParamUpdate>,
    pub seed: u64,
    pub buffer_len: usize,
}

impl RenderJob {
    pub fn new(input: RenderInput, model_root: impl Into<PathBuf>, model: impl Into<String>) -> Self {
        Self {
            input,
            model_root: model_root.into(),
            model: model.into(),
            mode: None,
            updates: Vec::new(),
            seed: 0,
            buffer_len: DEFAULT_BUFFER_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub frames: Vec<[f32; 2]>,
    pub sample_rate: f64,
    pub buffer_len: usize,
    /// One dB column per buffer, taken over the last
    /// [`TELEMETRY_FFT_LEN`] output samples.
    pub spectrogram: Vec<[f32; TELEMETRY_BINS]>,
}

impl Render {
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.sample_rate
    }

    /// Left channel as `f64`.
    pub fn mono(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f[0] as f64).collect()
    }

    /// CSV with a header of bin frequencies, one row per buffer.
    pub fn spectrogram_csv(&self) -> String {
        let mut out = String::from("time_s");
        for b in 0..TELEMETRY_BINS {
            let _ = write!(out, ",{:.1}", b as f64 * self.sample_rate / TELEMETRY_FFT_LEN as f64);
        }
        out.push('\n');
        for (i, col) in self.spectrogram.iter().enumerate() {
            let end = ((i + 1) * self.buffer_len) as f64 / self.sample_rate;
            let _ = write!(out, "{end:.6}");
            for v in col {
                let _ = write!(out, ",{v:.2}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the engine over the whole input without deadlines. Output length is
/// the input length rounded up to whole buffers.
pub fn render_offline(job: &RenderJob) -> Result<Render, OfflineError> {
    let sample_rate = job.input.sample_rate();
    let len = job.buffer_len;
    let config = EngineConfig::new(sample_rate, len, &job.model_root, &job.model).with_seed(job.seed);
    let (mut engine, handle) = create_engine(config)?;
    let mode = job.mode.unwrap_or_else(|| job.input.default_mode());
    handle.push_param(ParamUpdate::new(ParamId::InputMode, mode.as_str()))?;
    for update in &job.updates {
        handle.push_param(update.clone())?;
    }
    let params: MacroParams = handle.params();

    let total = match &job.input {
        RenderInput::Audio { samples, .. } => samples.len(),
        RenderInput::Events { events, .. } => {
            let end = events.iter().find_map(|e| match e {
                ScriptEvent::End { time } => Some(*time),
                _ => None,
            });
            let last = events.iter().map(ScriptEvent::time).fold(0.0, f64::max);
            let seconds = end.unwrap_or(last + params.reverb_size + TAIL_SECONDS);
            (seconds * sample_rate).ceil() as usize
        }
    };
    let blocks = total.div_ceil(len).max(1);

    let mut frames = Vec::with_capacity(blocks * len);
    let mut spectrogram = Vec::with_capacity(blocks);
    let mut out = vec![[0.0f32; 2]; len];
    let mut line = vec![0.0f32; len];
    let mut pending: Vec<MidiEvent> = Vec::new();
    let mut next_event = 0;
    for b in 0..blocks {
        let start = b * len;
        let line_in = match &job.input {
            RenderInput::Audio { samples, .. } => {
                for (n, s) in line.iter_mut().enumerate() {
                    *s = samples.get(start + n).copied().unwrap_or(0.0) as f32;
                }
                Some(line.as_slice())
            }
            RenderInput::Events { events, .. } => {
                pending.clear();
                let block_end = (start + len) as f64 / sample_rate;
                while let Some(e) = events.get(next_event) {
                    if e.time() >= block_end {
                        break;
                    }
                    if let ScriptEvent::Midi { event, .. } = e {
                        pending.push(*event);
                    }
                    next_event += 1;
                }
                None
            }
        };
        let telemetry = engine.process_block(line_in, &pending, &mut out)?;
        frames.extend_from_slice(&out);
        spectrogram.push(telemetry.spectrogram);
    }
    Ok(Render {
        frames,
        sample_rate,
        buffer_len: len,
        spectrogram,
    })
}

/// One row of [`analyze_signal`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisRow {
    /// Start of the analysis window in seconds.
    pub time: f64,
    pub frame: AnalysisFrame,
}

/// Pitch and loudness of consecutive windows of `hop` samples. Each pitch
/// estimate looks at the YIN window starting at the row's time; loudness is
/// measured over the hop itself.
pub fn analyze_signal(samples: &[f64], sample_rate: f64, hop: usize) -> Result<Vec<AnalysisRow>, OfflineError> {
    let cfg = YinConfig::default();
    let mut yin = YinDetector::new(cfg, sample_rate)?;
    let mut window = vec![0.0; cfg.window];
    let hop = hop.max(1);
    let mut rows = Vec::new();
    let mut start = 0;
    while start < samples.len() {
        for (n, w) in window.iter_mut().enumerate() {
            *w = samples.get(start + n).copied().unwrap_or(0.0);
        }
        let end = (start + hop).min(samples.len());
        let ld = loudness_db(&samples[start..end]).unwrap_or(LOUDNESS_FLOOR_DB);
        let p = yin.detect(&window)?;
        let frame = match p.f0_hz {
            Some(f0) => AnalysisFrame::voiced(f0, p.confidence, ld),
            None => AnalysisFrame::unvoiced(ld),
        };
        rows.push(AnalysisRow {
            time: start as f64 / sample_rate,
            frame,
        });
        start += hop;
    }
    Ok(rows)
}
