//! Real-time engine.
//!
//! [`create_engine`] splits the engine into two halves:
//!
//! - [`AudioEngine`] belongs to the audio thread. [`AudioEngine::process_block`]
//!   renders one buffer: it drains pending control changes, analyzes the input
//!   (MIDI or line), looks up one control frame from the active timbre model,
//!   renders harmonics and noise, runs the LFO, reverb and master stage, and
//!   publishes telemetry. After construction it does not allocate, lock or
//!   touch the filesystem.
//! - [`EngineHandle`] is for control threads. It clamps and forwards parameter
//!   changes over bounded lock-free queues, loads models and designs reverb
//!   impulse responses off the audio thread, and frees whatever the audio
//!   thread swapped out.
//!
//! Control changes take effect at the start of the next buffer, never in the
//! middle of one.

mod driver;
mod midi;
mod params;
mod telemetry;

pub use driver::PacedDriver;
pub use midi::MidiEvent;
pub use params::{
    param_descriptors, ParamDescriptor, ParamError, ParamId, ParamKind, ParamUpdate, ParamValue,
};
pub use telemetry::{quantize_db, EngineTelemetry, TELEMETRY_BINS, TELEMETRY_FFT_LEN};

use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use crossbeam_queue::ArrayQueue;
use thiserror::Error;

use crate::additive::HarmonicSynth;
use crate::analysis::{loudness_db, midi_to_controls, AnalysisError, YinConfig, YinDetector};
use crate::controls::{AnalysisFrame, ControlFrame, InputMode, MacroParams, OscillatorState, LOUDNESS_FLOOR_DB};
use crate::effects::{design_ir, lfo_modulate, master_in_place, ConvolutionState, EffectsError, IrSpectrum, LfoState};
use crate::spectrum::{to_db, StftAnalyzer};
use crate::subtractive::{NoiseControls, NoiseRngState, NoiseSynth, SubtractiveError};
use crate::timbre::{load_model, model_names, ModelError, TimbreModel, MAX_HARMONICS, MAX_NOISE_BINS};
use crate::MAX_BUFFER_LEN;

use midi::NoteStack;
use params::clamp_numeric;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Effects(#[from] EffectsError),
    #[error(transparent)]
    Noise(#[from] SubtractiveError),
    #[error("{what} has {got} samples, engine buffer is {expected}")]
    BufferMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub sample_rate: f64,
    /// Samples per block; a power of two in `[32, 4096]`.
    pub buffer_len: usize,
    pub model_root: PathBuf,
    pub model: String,
    /// Seeds the noise generator and reverb impulse responses.
    pub seed: u64,
    pub yin: YinConfig,
    pub param_queue_len: usize,
    pub telemetry_queue_len: usize,
}

impl EngineConfig {
    pub fn new(sample_rate: f64, buffer_len: usize, model_root: impl Into<PathBuf>, model: impl Into<String>) -> Self {
        Self {
            sample_rate,
            buffer_len,
            model_root: model_root.into(),
            model: model.into(),
            seed: 0,
            yin: YinConfig::default(),
            param_queue_len: 1024,
            telemetry_queue_len: 64,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if !(self.sample_rate.is_finite() && self.sample_rate >= 8_000.0 && self.sample_rate <= 192_000.0) {
            return bad(format!("sample rate {} outside 8000..=192000", self.sample_rate));
        }
        if !self.buffer_len.is_power_of_two() || !(32..=MAX_BUFFER_LEN).contains(&self.buffer_len) {
            return bad(format!(
                "buffer length {} must be a power of two in 32..={MAX_BUFFER_LEN}",
                self.buffer_len
            ));
        }
        if self.param_queue_len == 0 || self.telemetry_queue_len == 0 {
            return bad("queue lengths must be positive".into());
        }
        self.yin.validate(self.sample_rate)?;
        Ok(())
    }
}

/// Anything the audio thread swaps out and hands back for freeing.
enum Retired {
    Model(Arc<TimbreModel>),
    Ir(Box<IrSpectrum>),
}

#[derive(Clone, Copy)]
struct QueuedParam {
    id: ParamId,
    value: f64,
}

struct Shared {
    params: ArrayQueue<QueuedParam>,
    models: ArrayQueue<Arc<TimbreModel>>,
    irs: ArrayQueue<Box<IrSpectrum>>,
    retired: ArrayQueue<Retired>,
    telemetry: ArrayQueue<EngineTelemetry>,
}

/// Control-side mirror of the engine's parameters.
struct Mirror {
    params: MacroParams,
    model: Arc<TimbreModel>,
}

/// Builds the audio and control halves of an engine.
pub fn create_engine(config: EngineConfig) -> Result<(AudioEngine, EngineHandle), EngineError> {
    create_engine_with(config, MacroParams::default())
}

/// Like [`create_engine`] with initial macro values.
pub fn create_engine_with(config: EngineConfig, params: MacroParams) -> Result<(AudioEngine, EngineHandle), EngineError> {
    config.validate()?;
    let model = Arc::new(load_model(&config.model_root, &config.model)?);
    let mut params = params;
    params.resize_harmonics(model.harmonics);
    params.clamp_in_place();

    let shared = Arc::new(Shared {
        params: ArrayQueue::new(config.param_queue_len),
        models: ArrayQueue::new(4),
        irs: ArrayQueue::new(4),
        retired: ArrayQueue::new(64),
        telemetry: ArrayQueue::new(config.telemetry_queue_len),
    });

    let ir = build_ir(&config, params.reverb_size, params.reverb_glow)?;
    let mut reverb = ConvolutionState::with_capacity(
        config.buffer_len,
        ConvolutionState::max_partitions(config.buffer_len, config.sample_rate),
    )?;
    reverb.set_ir(ir)?;

    let audio = AudioEngine::new(&config, Arc::clone(&shared), Arc::clone(&model), params.clone(), reverb)?;
    let handle = EngineHandle {
        config: Arc::new(config),
        shared,
        mirror: Arc::new(Mutex::new(Mirror { params, model })),
    };
    Ok((audio, handle))
}

/// Reverb impulse response for the given knobs. Depends only on the seed and
/// the knob values, so reruns reproduce it exactly.
fn build_ir(config: &EngineConfig, size: f64, glow: f64) -> Result<Box<IrSpectrum>, EngineError> {
    let mut rng = NoiseRngState::from_seed(config.seed ^ 0x7265_7665_7262);
    let ir = design_ir(size, glow, config.sample_rate, &mut rng)?;
    Ok(Box::new(IrSpectrum::new(&ir, config.buffer_len)?))
}

/// The audio-thread half of the engine.
pub struct AudioEngine {
    sample_rate: f64,
    buffer_len: usize,
    shared: Arc<Shared>,
    model: Arc<TimbreModel>,
    params: MacroParams,

    notes: NoteStack,
    yin: YinDetector,
    line_history: Vec<f64>,
    held_f0: f64,
    last_analysis: AnalysisFrame,

    frame: ControlFrame,
    harmonic: HarmonicSynth,
    osc: OscillatorState,
    noise: NoiseSynth,
    noise_controls: NoiseControls,
    rng: NoiseRngState,
    lfo: LfoState,
    reverb: ConvolutionState,

    harmonic_buf: Vec<f64>,
    noise_buf: Vec<f64>,
    mix_buf: Vec<f64>,
    out_history: Vec<f64>,
    stft: StftAnalyzer,
    column: Vec<f64>,
    telemetry: EngineTelemetry,
    blocks: u64,
}

impl std::fmt::Debug for AudioEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AudioEngine")
            .field("sample_rate", &self.sample_rate)
            .field("buffer_len", &self.buffer_len)
            .field("model", &self.model.name)
            .finish()
    }
}

impl AudioEngine {
    fn new(
        config: &EngineConfig,
        shared: Arc<Shared>,
        model: Arc<TimbreModel>,
        mut params: MacroParams,
        reverb: ConvolutionState,
    ) -> Result<Self, EngineError> {
        let len = config.buffer_len;
        let k = model.harmonics;
        params.harmonic_edit.reserve(MAX_HARMONICS - params.harmonic_edit.len().min(MAX_HARMONICS));

        let mut osc = OscillatorState {
            phases: Vec::with_capacity(MAX_HARMONICS),
            prev_f: Vec::with_capacity(MAX_HARMONICS),
            prev_amp: Vec::with_capacity(MAX_HARMONICS),
            started: false,
        };
        osc.phases.resize(k, 0.0);
        osc.prev_f.resize(k, 0.0);
        osc.prev_amp.resize(k, 0.0);

        let mut frame = ControlFrame {
            f0_hz: 0.0,
            amplitude: 0.0,
            harmonic_distribution: Vec::with_capacity(MAX_HARMONICS),
            noise_magnitudes: Vec::with_capacity(MAX_NOISE_BINS),
        };
        frame.harmonic_distribution.resize(k, 0.0);
        frame.noise_magnitudes.resize(model.noise_bins, 0.0);

        let stft = StftAnalyzer::new(TELEMETRY_FFT_LEN).expect("telemetry fft length is valid");
        Ok(Self {
            sample_rate: config.sample_rate,
            buffer_len: len,
            shared,
            params,
            notes: NoteStack::default(),
            yin: YinDetector::new(config.yin, config.sample_rate)?,
            line_history: vec![0.0; config.yin.window],
            held_f0: 0.0,
            last_analysis: AnalysisFrame::unvoiced(LOUDNESS_FLOOR_DB),
            frame,
            harmonic: HarmonicSynth::with_max_harmonics(config.sample_rate, MAX_HARMONICS),
            osc,
            noise: NoiseSynth::new(config.sample_rate, len)?,
            noise_controls: NoiseControls {
                magnitudes: Vec::with_capacity(MAX_NOISE_BINS),
                alpha: 1.0,
                gain: 1.0,
            },
            rng: NoiseRngState::from_seed(config.seed),
            lfo: LfoState::default(),
            reverb,
            harmonic_buf: vec![0.0; len],
            noise_buf: vec![0.0; len],
            mix_buf: vec![0.0; len],
            out_history: vec![0.0; TELEMETRY_FFT_LEN.max(len)],
            column: vec![LOUDNESS_FLOOR_DB; stft.bins()],
            stft,
            telemetry: EngineTelemetry::default(),
            blocks: 0,
            model,
        })
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer_len
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn params(&self) -> &MacroParams {
        &self.params
    }

    pub fn model_name(&self) -> &str {
        &self.model.name
    }

    /// Analysis result of the most recent block.
    pub fn last_analysis(&self) -> AnalysisFrame {
        self.last_analysis
    }

    /// Controls used for the most recent block.
    pub fn last_frame(&self) -> &ControlFrame {
        &self.frame
    }

    /// Renders one block into `out` (stereo, `buffer_len` frames).
    pub fn process_block(
        &mut self,
        line_in: Option<&[f32]>,
        midi_events: &[MidiEvent],
        out: &mut [[f32; 2]],
    ) -> Result<EngineTelemetry, EngineError> {
        let started = Instant::now();
        let len = self.buffer_len;
        if out.len() != len {
            return Err(EngineError::BufferMismatch {
                what: "output",
                expected: len,
                got: out.len(),
            });
        }
        if let Some(line) = line_in {
            if line.len() != len {
                return Err(EngineError::BufferMismatch {
                    what: "line input",
                    expected: len,
                    got: line.len(),
                });
            }
        }

        self.drain_control();

        for event in midi_events {
            if self.notes.apply(event) {
                self.lfo.retrigger();
            }
        }
        let analysis = self.analyze(line_in);
        self.last_analysis = analysis;

        if let Some(f0) = analysis.f0_hz {
            self.held_f0 = f0;
        }
        if self.held_f0 > 0.0 {
            self.model
                .lookup_into(self.held_f0, analysis.loudness_db, &mut self.frame)
                .expect("held f0 is positive");
        } else {
            self.frame.f0_hz = 0.0;
        }
        if !analysis.is_voiced() {
            self.frame.amplitude = 0.0;
            self.frame.noise_magnitudes.iter_mut().for_each(|m| *m = 0.0);
        }
        self.frame.limit_f0(self.sample_rate);

        self.harmonic
            .render(&self.frame, &self.params, &mut self.osc, &mut self.harmonic_buf)
            .expect("oscillator state tracks the model");
        self.noise_controls.magnitudes.clear();
        self.noise_controls
            .magnitudes
            .extend_from_slice(&self.frame.noise_magnitudes);
        self.noise_controls.alpha = self.params.noise_color_alpha;
        self.noise_controls.gain = self.params.noise_gain;
        self.noise
            .render(&self.noise_controls, &mut self.rng, &mut self.noise_buf)
            .expect("noise buffer sized at construction");

        for ((m, h), n) in self.mix_buf.iter_mut().zip(&self.harmonic_buf).zip(&self.noise_buf) {
            *m = h + n;
        }
        lfo_modulate(
            &mut self.mix_buf,
            &mut self.lfo,
            self.params.mod_rate,
            self.params.mod_amount,
            self.params.mod_delay,
            self.sample_rate,
        );
        // harmonic_buf is free again and holds the reverb output
        self.reverb
            .process(&self.mix_buf, &mut self.harmonic_buf, self.params.reverb_mix)
            .expect("reverb sized at construction");
        master_in_place(&mut self.harmonic_buf, self.params.master_gain);

        for (frame, s) in out.iter_mut().zip(&self.harmonic_buf) {
            let v = *s as f32;
            *frame = [v, v];
        }

        self.update_telemetry(started, analysis);
        self.blocks += 1;
        if let Some(_dropped) = self.shared.telemetry.force_push(self.telemetry.clone()) {
            // oldest frame discarded; it owns no heap memory
        }
        Ok(self.telemetry.clone())
    }

    fn drain_control(&mut self) {
        while let Some(p) = self.shared.params.pop() {
            p.id.write(&mut self.params, p.value);
            if p.id == ParamId::ModDelay {
                self.lfo.retrigger();
            }
        }
        while let Some(model) = self.shared.models.pop() {
            let k = model.harmonics;
            if k != self.model.harmonics {
                self.osc.phases.resize(k, 0.0);
                self.osc.prev_f.resize(k, 0.0);
                self.osc.prev_amp.resize(k, 0.0);
                self.osc.reset();
                self.params.resize_harmonics(k);
            }
            self.frame.harmonic_distribution.resize(k, 0.0);
            self.frame.noise_magnitudes.resize(model.noise_bins, 0.0);
            let old = std::mem::replace(&mut self.model, model);
            let _ = self.shared.retired.force_push(Retired::Model(old));
        }
        while let Some(ir) = self.shared.irs.pop() {
            match self.reverb.set_ir(ir) {
                Ok(Some(old)) => {
                    let _ = self.shared.retired.force_push(Retired::Ir(old));
                }
                Ok(None) => {}
                Err(_) => {}
            }
        }
    }

    fn analyze(&mut self, line_in: Option<&[f32]>) -> AnalysisFrame {
        match self.params.input_mode {
            InputMode::Midi => match self.notes.active() {
                Some((note, velocity)) => match midi_to_controls(note, velocity, self.notes.bend) {
                    Ok((f0, ld)) => AnalysisFrame::voiced(f0, 1.0, ld),
                    Err(_) => AnalysisFrame::unvoiced(LOUDNESS_FLOOR_DB),
                },
                None => AnalysisFrame::unvoiced(LOUDNESS_FLOOR_DB),
            },
            InputMode::Line => {
                let Some(line) = line_in else {
                    return AnalysisFrame::unvoiced(LOUDNESS_FLOOR_DB);
                };
                let window = self.line_history.len();
                if line.len() >= window {
                    for (h, s) in self.line_history.iter_mut().zip(&line[line.len() - window..]) {
                        *h = *s as f64;
                    }
                } else {
                    self.line_history.copy_within(line.len().., 0);
                    for (h, s) in self.line_history[window - line.len()..].iter_mut().zip(line) {
                        *h = *s as f64;
                    }
                }
                // the block's own loudness, from the tail of the history
                let block = &self.line_history[window - line.len().min(window)..];
                let ld = loudness_db(block).unwrap_or(LOUDNESS_FLOOR_DB);
                match self.yin.detect(&self.line_history) {
                    Ok(p) => match p.f0_hz {
                        Some(f0) => AnalysisFrame::voiced(f0, p.confidence, ld),
                        None => AnalysisFrame::unvoiced(ld),
                    },
                    Err(_) => AnalysisFrame::unvoiced(ld),
                }
            }
        }
    }

    fn update_telemetry(&mut self, started: Instant, analysis: AnalysisFrame) {
        let out = &self.harmonic_buf;
        let hist = self.out_history.len();
        if out.len() >= hist {
            self.out_history.copy_from_slice(&out[out.len() - hist..]);
        } else {
            self.out_history.copy_within(out.len().., 0);
            self.out_history[hist - out.len()..].copy_from_slice(out);
        }
        let _ = self.stft.column(&self.out_history, &mut self.column);
        for (dst, src) in self.telemetry.spectrogram.iter_mut().zip(&self.column) {
            *dst = *src as f32;
        }
        let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let mean_sq = out.iter().map(|s| s * s).sum::<f64>() / out.len() as f64;
        self.telemetry.block = self.blocks;
        self.telemetry.peak_db = to_db(peak) as f32;
        self.telemetry.rms_db = to_db(mean_sq.sqrt()) as f32;
        self.telemetry.f0_hz = if analysis.is_voiced() { self.frame.f0_hz as f32 } else { 0.0 };
        let period = self.buffer_len as f64 / self.sample_rate;
        self.telemetry.utilization = (started.elapsed().as_secs_f64() / period) as f32;
    }
}

/// The control-thread half of the engine. Cheap to clone.
#[derive(Clone)]
pub struct EngineHandle {
    config: Arc<EngineConfig>,
    shared: Arc<Shared>,
    mirror: Arc<Mutex<Mirror>>,
}

impl std::fmt::Debug for EngineHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EngineHandle").field("config", &self.config).finish()
    }
}

impl EngineHandle {
    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn mirror(&self) -> MutexGuard<'_, Mirror> {
        self.mirror.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Clamps and enqueues an update, returning the value that will be
    /// applied at the start of the next block.
    pub fn push_param(&self, update: ParamUpdate) -> Result<ParamValue, ParamError> {
        self.collect_garbage();
        if update.id == ParamId::Model {
            return self.select_model(&update.value.to_string());
        }
        let mut mirror = self.mirror();
        if let ParamId::HarmonicEdit(k) = update.id {
            if k as usize >= mirror.params.harmonic_edit.len() {
                return Err(ParamError::UnknownParam(update.id.to_string()));
            }
        }
        let value = clamp_numeric(update.id, &update.value)?;

        if matches!(update.id, ParamId::ReverbSize | ParamId::ReverbGlow) {
            let (size, glow) = match update.id {
                ParamId::ReverbSize => (value, mirror.params.reverb_glow),
                _ => (mirror.params.reverb_size, value),
            };
            let ir = build_ir(&self.config, size, glow).map_err(|e| ParamError::BadValue(e.to_string()))?;
            self.shared.irs.push(ir).map_err(|_| ParamError::QueueFull)?;
        }
        self.shared
            .params
            .push(QueuedParam { id: update.id, value })
            .map_err(|_| ParamError::QueueFull)?;
        update.id.write(&mut mirror.params, value);
        Ok(match update.id {
            ParamId::InputMode => ParamValue::Text(mirror.params.input_mode.as_str().to_string()),
            _ => ParamValue::Number(value),
        })
    }

    /// Loads `name` on the calling thread and queues it for the audio thread.
    /// On failure the current model keeps playing.
    pub fn select_model(&self, name: &str) -> Result<ParamValue, ParamError> {
        let model = load_model(&self.config.model_root, name).map_err(|e| ParamError::ModelLoad {
            name: name.to_string(),
            reason: match e {
                ModelError::MissingFile(_) => "not found".to_string(),
                other => other.to_string(),
            },
        })?;
        let model = Arc::new(model);
        let mut mirror = self.mirror();
        self.shared
            .models
            .push(Arc::clone(&model))
            .map_err(|_| ParamError::QueueFull)?;
        mirror.params.resize_harmonics(model.harmonics);
        mirror.model = model;
        Ok(ParamValue::Text(name.to_string()))
    }

    /// Current value of a parameter as the control side sees it.
    pub fn param_value(&self, id: ParamId) -> Option<ParamValue> {
        let mirror = self.mirror();
        match id {
            ParamId::Model => Some(ParamValue::Text(mirror.model.name.clone())),
            ParamId::InputMode => Some(ParamValue::Text(mirror.params.input_mode.as_str().to_string())),
            other => other.read(&mirror.params).map(ParamValue::Number),
        }
    }

    pub fn params(&self) -> MacroParams {
        self.mirror().params.clone()
    }

    pub fn model_name(&self) -> String {
        self.mirror().model.name.clone()
    }

    pub fn harmonics(&self) -> usize {
        self.mirror().model.harmonics
    }

    /// Names of the loadable models under the model root.
    pub fn available_models(&self) -> Vec<String> {
        model_names(&self.config.model_root)
    }

    /// Descriptors of every parameter for the active model.
    pub fn descriptors(&self) -> Vec<ParamDescriptor> {
        param_descriptors(self.harmonics(), &self.available_models())
    }

    /// Oldest unread telemetry frame.
    pub fn pop_telemetry(&self) -> Option<EngineTelemetry> {
        self.shared.telemetry.pop()
    }

    /// Newest telemetry frame, discarding older ones.
    pub fn latest_telemetry(&self) -> Option<EngineTelemetry> {
        let mut last = None;
        while let Some(t) = self.shared.telemetry.pop() {
            last = Some(t);
        }
        last
    }

    /// Frees models and impulse responses the audio thread has let go of.
    pub fn collect_garbage(&self) -> usize {
        let mut n = 0;
        while let Some(item) = self.shared.retired.pop() {
            match item {
                Retired::Model(m) => drop(m),
                Retired::Ir(ir) => drop(ir),
            }
            n += 1;
        }
        n
    }
}
