//! Timbre models: synth controls tabulated over a (pitch, loudness) grid.
//!
//! A model stands where a trained decoder would: given the fundamental and
//! loudness of the current buffer it returns a full [`ControlFrame`]. Queries
//! between grid nodes are bilinearly interpolated and queries outside the grid
//! are clamped to its edge.
//!
//! Models live on disk as `<root>/<name>/model.json`:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "name": "flute",
//!   "harmonics": 60,
//!   "noise_bins": 65,
//!   "pitch_grid": [48.0, 60.0, 72.0],
//!   "loudness_grid": [-60.0, -30.0, 0.0],
//!   "frames": [ { "amplitude": 0.3, "harmonics": [...], "noise": [...] }, ... ],
//!   "metadata": { "source": "fixture" }
//! }
//! ```
//!
//! `frames` is row-major: the frame for pitch `i` and loudness `j` sits at
//! index `i * loudness_grid.len() + j`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::hz_to_midi;
use crate::controls::ControlFrame;

pub const FORMAT_VERSION: u64 = 1;
/// File name of a model inside its directory.
pub const MODEL_FILE: &str = "model.json";
/// Upper bound on harmonics per model; the engine preallocates for it.
pub const MAX_HARMONICS: usize = 256;
/// Upper bound on noise magnitudes per model.
pub const MAX_NOISE_BINS: usize = 1024;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file not found: {0}")]
    MissingFile(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u64),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("frames: missing cell (pitch {pitch}, loudness {loudness}) at index {index}")]
    MissingCell {
        pitch: f64,
        loudness: f64,
        index: usize,
    },
    #[error("f0 must be positive, got {0}")]
    NonPositiveF0(f64),
}

impl ModelError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Field the error is about, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ModelError::Invalid { field, .. } => Some(field),
            ModelError::MissingCell { .. } => Some("frames"),
            ModelError::UnsupportedVersion(_) => Some("format_version"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f0_hz: Option<f64>,
    amplitude: f64,
    harmonics: Vec<f64>,
    noise: Vec<f64>,
}

impl FrameRecord {
    fn from_frame(frame: &ControlFrame, with_f0: bool) -> Self {
        Self {
            f0_hz: with_f0.then_some(frame.f0_hz),
            amplitude: frame.amplitude,
            harmonics: frame.harmonic_distribution.clone(),
            noise: frame.noise_magnitudes.clone(),
        }
    }

    fn into_frame(self) -> ControlFrame {
        ControlFrame {
            f0_hz: self.f0_hz.unwrap_or(0.0),
            amplitude: self.amplitude,
            harmonic_distribution: self.harmonics,
            noise_magnitudes: self.noise,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    name: String,
    harmonics: usize,
    noise_bins: usize,
    pitch_grid: Vec<f64>,
    loudness_grid: Vec<f64>,
    frames: Vec<FrameRecord>,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceFile {
    format_version: u64,
    name: String,
    harmonics: usize,
    noise_bins: usize,
    frame_rate: f64,
    frames: Vec<FrameRecord>,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

/// Synth controls tabulated over pitch (MIDI) and loudness (dBFS).
#[derive(Debug, Clone, PartialEq)]
pub struct TimbreModel {
    pub name: String,
    pub harmonics: usize,
    pub noise_bins: usize,
    pub pitch_grid: Vec<f64>,
    pub loudness_grid: Vec<f64>,
    /// Row-major `pitch × loudness`; `f0_hz` is not used in storage.
    pub frames: Vec<ControlFrame>,
    pub metadata: BTreeMap<String, String>,
}

impl TimbreModel {
    /// Validates and assembles a model. Stored harmonic distributions are
    /// scaled to unit sum.
    pub fn new(
        name: impl Into<String>,
        pitch_grid: Vec<f64>,
        loudness_grid: Vec<f64>,
        frames: Vec<ControlFrame>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, ModelError> {
        let harmonics = frames.first().map_or(0, ControlFrame::harmonics);
        let noise_bins = frames.first().map_or(0, ControlFrame::noise_bins);
        let mut model = Self {
            name: name.into(),
            harmonics,
            noise_bins,
            pitch_grid,
            loudness_grid,
            frames,
            metadata,
        };
        model.validate()?;
        model.frames.iter_mut().for_each(|f| {
            f.f0_hz = 0.0;
            renormalize(&mut f.harmonic_distribution);
        });
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.name.trim().is_empty() {
            return Err(ModelError::invalid("name", "must not be empty"));
        }
        if self.harmonics == 0 || self.harmonics > MAX_HARMONICS {
            return Err(ModelError::invalid(
                "harmonics",
                format!("{} not in 1..={MAX_HARMONICS}", self.harmonics),
            ));
        }
        if self.noise_bins == 0 || self.noise_bins > MAX_NOISE_BINS {
            return Err(ModelError::invalid(
                "noise_bins",
                format!("{} not in 1..={MAX_NOISE_BINS}", self.noise_bins),
            ));
        }
        validate_grid("pitch_grid", &self.pitch_grid)?;
        validate_grid("loudness_grid", &self.loudness_grid)?;

        let cells = self.pitch_grid.len() * self.loudness_grid.len();
        if self.frames.len() < cells {
            let index = self.frames.len();
            let cols = self.loudness_grid.len();
            return Err(ModelError::MissingCell {
                pitch: self.pitch_grid[index / cols],
                loudness: self.loudness_grid[index % cols],
                index,
            });
        }
        if self.frames.len() > cells {
            return Err(ModelError::invalid(
                "frames",
                format!("{} frames for a {cells}-cell grid", self.frames.len()),
            ));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.harmonics() != self.harmonics {
                return Err(ModelError::invalid(
                    format!("frames[{i}].harmonics"),
                    format!("{} entries, expected {}", frame.harmonics(), self.harmonics),
                ));
            }
            if frame.noise_bins() != self.noise_bins {
                return Err(ModelError::invalid(
                    format!("frames[{i}].noise"),
                    format!("{} entries, expected {}", frame.noise_bins(), self.noise_bins),
                ));
            }
            check_values(&format!("frames[{i}].amplitude"), &[frame.amplitude])?;
            check_values(&format!("frames[{i}].harmonics"), &frame.harmonic_distribution)?;
            check_values(&format!("frames[{i}].noise"), &frame.noise_magnitudes)?;
        }
        Ok(())
    }

    /// Parses a `model.json` document.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Self::from_json_at(text, Path::new("<memory>"))
    }

    fn from_json_at(text: &str, path: &Path) -> Result<Self, ModelError> {
        let file: ModelFile = parse_versioned(text, path)?;
        let frames: Vec<ControlFrame> = file.frames.into_iter().map(FrameRecord::into_frame).collect();
        let mut model = Self {
            name: file.name,
            harmonics: file.harmonics,
            noise_bins: file.noise_bins,
            pitch_grid: file.pitch_grid,
            loudness_grid: file.loudness_grid,
            frames,
            metadata: stringify_metadata(file.metadata),
        };
        model.validate()?;
        model.frames.iter_mut().for_each(|f| {
            f.f0_hz = 0.0;
            renormalize(&mut f.harmonic_distribution);
        });
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            name: self.name.clone(),
            harmonics: self.harmonics,
            noise_bins: self.noise_bins,
            pitch_grid: self.pitch_grid.clone(),
            loudness_grid: self.loudness_grid.clone(),
            frames: self.frames.iter().map(|f| FrameRecord::from_frame(f, false)).collect(),
            metadata: self
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    /// Writes `<root>/<name>/model.json`, creating the directory.
    pub fn save(&self, root: &Path) -> Result<PathBuf, ModelError> {
        let dir = root.join(&self.name);
        let path = dir.join(MODEL_FILE);
        fs::create_dir_all(&dir)
            .and_then(|_| fs::write(&path, self.to_json()))
            .map_err(|source| ModelError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(path)
    }

    pub fn frame_at(&self, pitch_index: usize, loudness_index: usize) -> &ControlFrame {
        &self.frames[pitch_index * self.loudness_grid.len() + loudness_index]
    }

    /// A zeroed frame with this model's dimensions, for [`Self::lookup_into`].
    pub fn blank_frame(&self) -> ControlFrame {
        ControlFrame::silent(self.harmonics, self.noise_bins)
    }

    /// Controls for a buffer at `f0` Hz and `loudness_db` dBFS.
    pub fn lookup(&self, f0: f64, loudness_db: f64) -> Result<ControlFrame, ModelError> {
        let mut out = self.blank_frame();
        self.lookup_into(f0, loudness_db, &mut out)?;
        Ok(out)
    }

    /// Like [`Self::lookup`] but writes into `out`; does not allocate when
    /// `out` already has the model's dimensions.
    pub fn lookup_into(&self, f0: f64, loudness_db: f64, out: &mut ControlFrame) -> Result<(), ModelError> {
        if !(f0 > 0.0) || !f0.is_finite() {
            return Err(ModelError::NonPositiveF0(f0));
        }
        let loudness = if loudness_db.is_nan() { self.loudness_grid[0] } else { loudness_db };
        let (pi, pt) = locate(&self.pitch_grid, hz_to_midi(f0));
        let (li, lt) = locate(&self.loudness_grid, loudness);
        let cells = [
            (self.frame_at(pi, li), (1.0 - pt) * (1.0 - lt)),
            (self.frame_at(pi + 1, li), pt * (1.0 - lt)),
            (self.frame_at(pi, li + 1), (1.0 - pt) * lt),
            (self.frame_at(pi + 1, li + 1), pt * lt),
        ];
        blend(out, &cells);
        out.f0_hz = f0;
        Ok(())
    }
}

/// Weighted sum of frames into `out`; the distribution is renormalized.
fn blend(out: &mut ControlFrame, cells: &[(&ControlFrame, f64)]) {
    let first = cells[0].0;
    out.harmonic_distribution.resize(first.harmonics(), 0.0);
    out.noise_magnitudes.resize(first.noise_bins(), 0.0);
    out.amplitude = 0.0;
    out.harmonic_distribution.iter_mut().for_each(|c| *c = 0.0);
    out.noise_magnitudes.iter_mut().for_each(|m| *m = 0.0);
    for (frame, w) in cells {
        let w = *w;
        if w == 0.0 {
            continue;
        }
        out.amplitude += w * frame.amplitude;
        for (o, c) in out.harmonic_distribution.iter_mut().zip(&frame.harmonic_distribution) {
            *o += w * c;
        }
        for (o, m) in out.noise_magnitudes.iter_mut().zip(&frame.noise_magnitudes) {
            *o += w * m;
        }
    }
    renormalize(&mut out.harmonic_distribution);
}

/// Scales to unit sum unless the sum is already 1 to within rounding, so
/// that normalized vectors pass through bit for bit.
fn renormalize(weights: &mut [f64]) {
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 && (sum - 1.0).abs() > 1e-12 {
        weights.iter_mut().for_each(|w| *w /= sum);
    }
}

/// Index of the grid cell holding `x` (clamped to the hull) and the
/// fractional position inside it.
fn locate(grid: &[f64], x: f64) -> (usize, f64) {
    let last = grid.len() - 1;
    if x <= grid[0] {
        return (0, 0.0);
    }
    if x >= grid[last] {
        return (last - 1, 1.0);
    }
    let upper = grid.partition_point(|g| *g <= x);
    let i = upper - 1;
    if grid[i] == x {
        return (i.min(last - 1), if i == last { 1.0 } else { 0.0 });
    }
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}

fn validate_grid(field: &str, grid: &[f64]) -> Result<(), ModelError> {
    if grid.len() < 2 {
        return Err(ModelError::invalid(field, "needs at least 2 entries"));
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::invalid(field, "contains non-finite values"));
    }
    if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(ModelError::invalid(
            field,
            format!("not strictly ascending at index {}", i + 1),
        ));
    }
    Ok(())
}

fn check_values(field: &str, values: &[f64]) -> Result<(), ModelError> {
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(ModelError::invalid(field, format!("value {v} is negative or non-finite")));
    }
    Ok(())
}

fn stringify_metadata(meta: BTreeMap<String, serde_json::Value>) -> BTreeMap<String, String> {
    meta.into_iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => (k, s),
            other => (k, other.to_string()),
        })
        .collect()
}

fn parse_versioned<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ModelError> {
    let parse_err = |e: serde_json::Error| ModelError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(ModelError::UnsupportedVersion(other)),
        None => return Err(ModelError::invalid("format_version", "missing or not an integer")),
    }
    serde_json::from_value(value).map_err(parse_err)
}

fn read_file(path: &Path) -> Result<String, ModelError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ModelError::MissingFile(path.to_path_buf())
        } else {
            ModelError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

/// Loads `<root>/<name>/model.json`.
pub fn load_model(root: &Path, name: &str) -> Result<TimbreModel, ModelError> {
    let path = root.join(name).join(MODEL_FILE);
    let text = read_file(&path)?;
    TimbreModel::from_json_at(&text, &path)
}

/// Loads every subdirectory of `root` as a model, sorted by directory name.
/// Per-model failures are returned alongside successes.
pub fn scan_models(root: &Path) -> Result<Vec<(String, Result<TimbreModel, ModelError>)>, ModelError> {
    let entries = fs::read_dir(root).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ModelError::MissingFile(root.to_path_buf())
        } else {
            ModelError::Io {
                path: root.to_path_buf(),
                source,
            }
        }
    })?;
    let mut names: Vec<String> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    Ok(names
        .into_iter()
        .map(|name| {
            let model = load_model(root, &name);
            (name, model)
        })
        .collect())
}

/// Names of the loadable models under `root`.
pub fn model_names(root: &Path) -> Vec<String> {
    scan_models(root)
        .map(|all| {
            all.into_iter()
                .filter(|(_, m)| m.is_ok())
                .map(|(n, _)| n)
                .collect()
        })
        .unwrap_or_default()
}

/// A precomputed run of control frames at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub name: String,
    pub frame_rate: f64,
    pub frames: Vec<ControlFrame>,
}

impl FrameSequence {
    pub fn new(name: impl Into<String>, frame_rate: f64, frames: Vec<ControlFrame>) -> Result<Self, ModelError> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(ModelError::invalid("frame_rate", format!("{frame_rate} must be positive")));
        }
        let Some(first) = frames.first() else {
            return Err(ModelError::invalid("frames", "sequence is empty"));
        };
        let (k, n) = (first.harmonics(), first.noise_bins());
        for (i, f) in frames.iter().enumerate() {
            if f.harmonics() != k || f.noise_bins() != n {
                return Err(ModelError::invalid(format!("frames[{i}]"), "dimension mismatch"));
            }
            check_values(&format!("frames[{i}].harmonics"), &f.harmonic_distribution)?;
            check_values(&format!("frames[{i}].noise"), &f.noise_magnitudes)?;
            check_values(&format!("frames[{i}].amplitude"), &[f.amplitude, f.f0_hz])?;
        }
        Ok(Self {
            name: name.into(),
            frame_rate,
            frames,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: SequenceFile = parse_versioned(text, Path::new("<memory>"))?;
        let seq = Self::new(
            file.name,
            file.frame_rate,
            file.frames.into_iter().map(FrameRecord::into_frame).collect(),
        )?;
        let first = &seq.frames[0];
        if first.harmonics() != file.harmonics {
            return Err(ModelError::invalid("harmonics", "does not match frames"));
        }
        if first.noise_bins() != file.noise_bins {
            return Err(ModelError::invalid("noise_bins", "does not match frames"));
        }
        Ok(seq)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = read_file(path)?;
        Self::from_json(&text).map_err(|e| match e {
            ModelError::Parse { message, .. } => ModelError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let file = SequenceFile {
            format_version: FORMAT_VERSION,
            name: self.name.clone(),
            harmonics: self.frames[0].harmonics(),
            noise_bins: self.frames[0].noise_bins(),
            frame_rate: self.frame_rate,
            frames: self.frames.iter().map(|f| FrameRecord::from_frame(f, true)).collect(),
            metadata: BTreeMap::new(),
        };
        serde_json::to_string_pretty(&file).expect("sequence serializes")
    }

    /// Length in seconds up to the last frame.
    pub fn duration(&self) -> f64 {
        (self.frames.len() - 1) as f64 / self.frame_rate
    }

    pub fn frame_at_time(&self, t: f64) -> ControlFrame {
        let mut out = self.frames[0].clone();
        self.frame_into(t, &mut out);
        out
    }

    /// Linear interpolation between neighbouring frames; holds the last
    /// frame past the end.
    pub fn frame_into(&self, t: f64, out: &mut ControlFrame) {
        let pos = if t.is_finite() { (t.max(0.0)) * self.frame_rate } else { 0.0 };
        let i = pos.floor() as usize;
        if i + 1 >= self.frames.len() {
            out.copy_from(&self.frames[self.frames.len() - 1]);
            return;
        }
        let frac = pos - i as f64;
        let (a, b) = (&self.frames[i], &self.frames[i + 1]);
        blend(out, &[(a, 1.0 - frac), (b, frac)]);
        out.f0_hz = (1.0 - frac) * a.f0_hz + frac * b.f0_hz;
    }
}

/// Frame of `seq` at time `t` seconds.
pub fn sequence_frame(seq: &FrameSequence, t: f64) -> ControlFrame {
    seq.frame_at_time(t)
}
