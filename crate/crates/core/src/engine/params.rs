//! Parameter identifiers, descriptors and updates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controls::{InputMode, MacroParams, ParamRange};

/// Every parameter the control surface can set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    Stretch,
    Shift,
    HarmonicGain,
    NoiseGain,
    NoiseColorAlpha,
    /// Gain of one harmonic in the graphic editor, zero-based.
    HarmonicEdit(u16),
    ReverbMix,
    ReverbSize,
    ReverbGlow,
    ModRate,
    ModAmount,
    ModDelay,
    MasterGain,
    InputMode,
    Model,
}

impl ParamId {
    /// Numeric parameters other than the per-harmonic gains, in display order.
    pub const SCALARS: [ParamId; 12] = [
        ParamId::Stretch,
        ParamId::Shift,
        ParamId::HarmonicGain,
        ParamId::NoiseGain,
        ParamId::NoiseColorAlpha,
        ParamId::ReverbMix,
        ParamId::ReverbSize,
        ParamId::ReverbGlow,
        ParamId::ModRate,
        ParamId::ModAmount,
        ParamId::ModDelay,
        ParamId::MasterGain,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamId::Stretch => "stretch",
            ParamId::Shift => "shift",
            ParamId::HarmonicGain => "harmonic_gain",
            ParamId::NoiseGain => "noise_gain",
            ParamId::NoiseColorAlpha => "noise_color_alpha",
            ParamId::HarmonicEdit(_) => "harmonic_edit",
            ParamId::ReverbMix => "reverb_mix",
            ParamId::ReverbSize => "reverb_size",
            ParamId::ReverbGlow => "reverb_glow",
            ParamId::ModRate => "mod_rate",
            ParamId::ModAmount => "mod_amount",
            ParamId::ModDelay => "mod_delay",
            ParamId::MasterGain => "master_gain",
            ParamId::InputMode => "input_mode",
            ParamId::Model => "model",
        }
    }

    /// Range of a numeric parameter.
    pub fn range(&self) -> Option<ParamRange> {
        Some(match self {
            ParamId::Stretch => MacroParams::STRETCH,
            ParamId::Shift => MacroParams::SHIFT,
            ParamId::HarmonicGain => MacroParams::HARMONIC_GAIN,
            ParamId::NoiseGain => MacroParams::NOISE_GAIN,
            ParamId::NoiseColorAlpha => MacroParams::NOISE_COLOR_ALPHA,
            ParamId::HarmonicEdit(_) => MacroParams::HARMONIC_EDIT,
            ParamId::ReverbMix => MacroParams::REVERB_MIX,
            ParamId::ReverbSize => MacroParams::REVERB_SIZE,
            ParamId::ReverbGlow => MacroParams::REVERB_GLOW,
            ParamId::ModRate => MacroParams::MOD_RATE,
            ParamId::ModAmount => MacroParams::MOD_AMOUNT,
            ParamId::ModDelay => MacroParams::MOD_DELAY,
            ParamId::MasterGain => MacroParams::MASTER_GAIN,
            ParamId::InputMode | ParamId::Model => return None,
        })
    }

    /// Reads the parameter from `params`. `None` for the model and for
    /// harmonic indices past the end.
    pub fn read(&self, params: &MacroParams) -> Option<f64> {
        Some(match self {
            ParamId::Stretch => params.stretch,
            ParamId::Shift => params.shift,
            ParamId::HarmonicGain => params.harmonic_gain,
            ParamId::NoiseGain => params.noise_gain,
            ParamId::NoiseColorAlpha => params.noise_color_alpha,
            ParamId::HarmonicEdit(k) => return params.harmonic_edit.get(*k as usize).copied(),
            ParamId::ReverbMix => params.reverb_mix,
            ParamId::ReverbSize => params.reverb_size,
            ParamId::ReverbGlow => params.reverb_glow,
            ParamId::ModRate => params.mod_rate,
            ParamId::ModAmount => params.mod_amount,
            ParamId::ModDelay => params.mod_delay,
            ParamId::MasterGain => params.master_gain,
            ParamId::InputMode => match params.input_mode {
                InputMode::Midi => 0.0,
                InputMode::Line => 1.0,
            },
            ParamId::Model => return None,
        })
    }

    /// Writes an already clamped value into `params`.
    pub(crate) fn write(&self, params: &mut MacroParams, value: f64) {
        match self {
            ParamId::Stretch => params.stretch = value,
            ParamId::Shift => params.shift = value,
            ParamId::HarmonicGain => params.harmonic_gain = value,
            ParamId::NoiseGain => params.noise_gain = value,
            ParamId::NoiseColorAlpha => params.noise_color_alpha = value,
            ParamId::HarmonicEdit(k) => {
                if let Some(g) = params.harmonic_edit.get_mut(*k as usize) {
                    *g = value;
                }
            }
            ParamId::ReverbMix => params.reverb_mix = value,
            ParamId::ReverbSize => params.reverb_size = value,
            ParamId::ReverbGlow => params.reverb_glow = value,
            ParamId::ModRate => params.mod_rate = value,
            ParamId::ModAmount => params.mod_amount = value,
            ParamId::ModDelay => params.mod_delay = value,
            ParamId::MasterGain => params.master_gain = value,
            ParamId::InputMode => {
                params.input_mode = if value >= 0.5 { InputMode::Line } else { InputMode::Midi }
            }
            ParamId::Model => {}
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::HarmonicEdit(k) => write!(f, "harmonic_edit[{k}]"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for ParamId {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("harmonic_edit[") {
            return rest
                .strip_suffix(']')
                .and_then(|k| k.parse::<u16>().ok())
                .map(ParamId::HarmonicEdit)
                .ok_or_else(|| ParamError::UnknownParam(s.to_string()));
        }
        ParamId::SCALARS
            .iter()
            .chain(&[ParamId::InputMode, ParamId::Model])
            .find(|id| id.name() == s)
            .copied()
            .ok_or_else(|| ParamError::UnknownParam(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Number(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamUpdate {
    pub id: ParamId,
    pub value: ParamValue,
}

impl ParamUpdate {
    pub fn new(id: ParamId, value: impl Into<ParamValue>) -> Self {
        Self {
            id,
            value: value.into(),
        }
    }

    /// Parses `key=value` as used on the command line.
    pub fn parse_assignment(text: &str) -> Result<Self, ParamError> {
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| ParamError::BadValue(format!("expected key=value, got {text:?}")))?;
        let id: ParamId = key.parse()?;
        let value = value.trim();
        let value = match value.parse::<f64>() {
            Ok(v) if !matches!(id, ParamId::Model) => ParamValue::Number(v),
            _ => ParamValue::Text(value.to_string()),
        };
        Ok(Self { id, value })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("bad value: {0}")]
    BadValue(String),
    #[error("model {name:?} not loaded: {reason}")]
    ModelLoad { name: String, reason: String },
    #[error("parameter queue full, update dropped")]
    QueueFull,
}

/// Widget hint for the control surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Knob,
    Toggle,
    Selector,
    Multi,
}

/// Self-description of one parameter for the control protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDescriptor {
    pub id: String,
    pub min: f64,
    pub max: f64,
    pub default: f64,
    pub kind: ParamKind,
    /// Number of elements for `multi` parameters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Choices for `selector` and `toggle` parameters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

/// Descriptors of every parameter for a model with `harmonics` harmonics.
pub fn param_descriptors(harmonics: usize, models: &[String]) -> Vec<ParamDescriptor> {
    let knob = |id: ParamId| {
        let r = id.range().expect("scalar parameters have ranges");
        ParamDescriptor {
            id: id.name().to_string(),
            min: r.min,
            max: r.max,
            default: r.default,
            kind: ParamKind::Knob,
            count: None,
            options: None,
        }
    };
    let mut out = vec![ParamDescriptor {
        id: ParamId::InputMode.name().to_string(),
        min: 0.0,
        max: 1.0,
        default: 0.0,
        kind: ParamKind::Toggle,
        count: None,
        options: Some(vec!["midi".into(), "line".into()]),
    }];
    out.push(ParamDescriptor {
        id: ParamId::Model.name().to_string(),
        min: 0.0,
        max: models.len().saturating_sub(1) as f64,
        default: 0.0,
        kind: ParamKind::Selector,
        count: None,
        options: Some(models.to_vec()),
    });
    out.extend(ParamId::SCALARS[..5].iter().copied().map(knob));
    let edit = MacroParams::HARMONIC_EDIT;
    out.push(ParamDescriptor {
        id: "harmonic_edit".to_string(),
        min: edit.min,
        max: edit.max,
        default: edit.default,
        kind: ParamKind::Multi,
        count: Some(harmonics),
        options: None,
    });
    out.extend(ParamId::SCALARS[5..].iter().copied().map(knob));
    out
}

/// Clamps a numeric update into range. `InputMode` accepts `"midi"`/`"line"`
/// or `0`/`1`.
pub(crate) fn clamp_numeric(id: ParamId, value: &ParamValue) -> Result<f64, ParamError> {
    match (id, value) {
        (ParamId::Model, _) => Err(ParamError::BadValue("model takes a name".into())),
        (ParamId::InputMode, ParamValue::Text(s)) => InputMode::parse(s)
            .map(|m| if m == InputMode::Line { 1.0 } else { 0.0 })
            .ok_or_else(|| ParamError::BadValue(format!("input_mode {s:?}"))),
        (ParamId::InputMode, ParamValue::Number(v)) if v.is_finite() => {
            Ok(if *v >= 0.5 { 1.0 } else { 0.0 })
        }
        (_, ParamValue::Number(v)) if !v.is_nan() => {
            Ok(id.range().expect("numeric parameter").clamp(*v))
        }
        (_, other) => Err(ParamError::BadValue(format!("{id} needs a number, got {other}"))),
    }
}
