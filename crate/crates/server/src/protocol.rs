//! Wire format: JSON text frames, one message each, tagged by `type`.
//!
//! Every message carries `seq`. Replies echo the `seq` of the request they
//! answer; messages the server sends on its own (telemetry, updates caused by
//! other clients) use `seq = 0`.

use harmonia::engine::{quantize_db, EngineTelemetry, ParamDescriptor, ParamValue};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;
pub const SUBPROTOCOL: &str = "harmonia.v1";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        seq: u64,
        version: u32,
    },
    ParamSet {
        #[serde(default)]
        seq: u64,
        id: String,
        value: ParamValue,
    },
    ModelList {
        #[serde(default)]
        seq: u64,
    },
    ModelSelect {
        #[serde(default)]
        seq: u64,
        name: String,
    },
}

impl ClientMessage {
    pub fn seq(&self) -> u64 {
        match self {
            ClientMessage::Hello { seq, .. }
            | ClientMessage::ParamSet { seq, .. }
            | ClientMessage::ModelList { seq }
            | ClientMessage::ModelSelect { seq, .. } => *seq,
        }
    }
}

/// A parameter descriptor plus its current value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamInfo {
    #[serde(flatten)]
    pub descriptor: ParamDescriptor,
    pub value: StateValue,
}

/// Value of a parameter as reported to clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum StateValue {
    Single(ParamValue),
    /// Every element of a `multi` parameter.
    List(Vec<f64>),
}

impl From<ParamValue> for StateValue {
    fn from(v: ParamValue) -> Self {
        StateValue::Single(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        seq: u64,
        version: u32,
        params: Vec<ParamInfo>,
        models: Vec<String>,
    },
    ParamState {
        seq: u64,
        id: String,
        value: StateValue,
    },
    ModelList {
        seq: u64,
        models: Vec<String>,
        active: String,
    },
    Telemetry {
        seq: u64,
        block: u64,
        /// Spectrogram column, 8-bit steps over [-120, 0] dB.
        spectrogram: Vec<u8>,
        peak_db: f32,
        rms_db: f32,
        f0_hz: f32,
        utilization: f32,
    },
    Error {
        seq: u64,
        reason: String,
    },
}

impl ServerMessage {
    pub fn error(seq: u64, reason: impl Into<String>) -> Self {
        ServerMessage::Error {
            seq,
            reason: reason.into(),
        }
    }

    pub fn telemetry(t: &EngineTelemetry) -> Self {
        ServerMessage::Telemetry {
            seq: 0,
            block: t.block,
            spectrogram: t.spectrogram.iter().map(|db| quantize_db(*db)).collect(),
            peak_db: t.peak_db,
            rms_db: t.rms_db,
            f0_hz: t.f0_hz,
            utilization: t.utilization,
        }
    }

    pub fn seq(&self) -> u64 {
        match self {
            ServerMessage::Hello { seq, .. }
            | ServerMessage::ParamState { seq, .. }
            | ServerMessage::ModelList { seq, .. }
            | ServerMessage::Telemetry { seq, .. }
            | ServerMessage::Error { seq, .. } => *seq,
        }
    }

    /// The same message addressed to a client that did not ask for it.
    pub fn unsolicited(mut self) -> Self {
        match &mut self {
            ServerMessage::Hello { seq, .. }
            | ServerMessage::ParamState { seq, .. }
            | ServerMessage::ModelList { seq, .. }
            | ServerMessage::Telemetry { seq, .. }
            | ServerMessage::Error { seq, .. } => *seq = 0,
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Parses a client frame. On failure returns the error reply, echoing `seq`
/// when the frame had one.
pub fn parse_client(text: &str) -> Result<ClientMessage, ServerMessage> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ServerMessage::error(0, format!("malformed JSON: {e}")))?;
    let seq = value.get("seq").and_then(serde_json::Value::as_u64).unwrap_or(0);
    let kind = value.get("type").and_then(serde_json::Value::as_str).map(str::to_owned);
    serde_json::from_value(value).map_err(|e| match kind {
        Some(k) if !["hello", "param_set", "model_list", "model_select"].contains(&k.as_str()) => {
            ServerMessage::error(seq, format!("unknown message type {k:?}"))
        }
        None => ServerMessage::error(seq, "missing message type"),
        Some(k) => ServerMessage::error(seq, format!("bad {k} message: {e}")),
    })
}
