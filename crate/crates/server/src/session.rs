use harmonia::engine::{EngineHandle, ParamError, ParamId, ParamUpdate, ParamValue};

use crate::protocol::{parse_client, ClientMessage, ParamInfo, ServerMessage, StateValue, PROTOCOL_VERSION};

/// What a session wants sent after handling one client frame.
#[derive(Debug, Default, PartialEq)]
pub struct Reply {
    /// To the client that sent the frame.
    pub direct: Vec<ServerMessage>,
    /// To every other connected client.
    pub broadcast: Vec<ServerMessage>,
    /// Close the connection after sending `direct`.
    pub close: bool,
}

impl Reply {
    fn direct(msg: ServerMessage) -> Self {
        Self {
            direct: vec![msg],
            ..Self::default()
        }
    }
}

/// Protocol state of one connection. Transport-free, so it can be driven
/// directly in tests.
#[derive(Debug, Clone)]
pub struct Session {
    handle: EngineHandle,
    greeted: bool,
}

impl Session {
    pub fn new(handle: EngineHandle) -> Self {
        Self { handle, greeted: false }
    }

    pub fn is_greeted(&self) -> bool {
        self.greeted
    }

    /// Handles one text frame. May block briefly while a model loads, so
    /// async callers should run it off the reactor.
    pub fn handle_text(&mut self, text: &str) -> Reply {
        match parse_client(text) {
            Ok(msg) => self.handle_message(msg),
            Err(err) => Reply::direct(err),
        }
    }

    pub fn handle_message(&mut self, msg: ClientMessage) -> Reply {
        let seq = msg.seq();
        match msg {
            ClientMessage::Hello { version, .. } if version != PROTOCOL_VERSION => Reply {
                direct: vec![ServerMessage::error(
                    seq,
                    format!("unsupported protocol version {version}, server speaks {PROTOCOL_VERSION}"),
                )],
                close: true,
                ..Reply::default()
            },
            ClientMessage::Hello { .. } => {
                self.greeted = true;
                Reply::direct(self.hello(seq))
            }
            _ if !self.greeted => Reply::direct(ServerMessage::error(seq, "send hello first")),
            ClientMessage::ParamSet { id, value, .. } => self.param_set(seq, &id, value),
            ClientMessage::ModelSelect { name, .. } => {
                self.param_set(seq, ParamId::Model.name(), ParamValue::Text(name))
            }
            ClientMessage::ModelList { .. } => Reply::direct(ServerMessage::ModelList {
                seq,
                models: self.handle.available_models(),
                active: self.handle.model_name(),
            }),
        }
    }

    /// The hello reply: every parameter with its range and current value.
    pub fn hello(&self, seq: u64) -> ServerMessage {
        let params = self
            .handle
            .descriptors()
            .into_iter()
            .map(|descriptor| {
                let value = self.state_value(&descriptor.id);
                ParamInfo { descriptor, value }
            })
            .collect();
        ServerMessage::Hello {
            seq,
            version: PROTOCOL_VERSION,
            params,
            models: self.handle.available_models(),
        }
    }

    fn state_value(&self, id: &str) -> StateValue {
        if id == "harmonic_edit" {
            return StateValue::List(self.handle.params().harmonic_edit);
        }
        id.parse::<ParamId>()
            .ok()
            .and_then(|id| self.handle.param_value(id))
            .map(StateValue::Single)
            .unwrap_or(StateValue::Single(ParamValue::Number(f64::NAN)))
    }

    fn param_set(&mut self, seq: u64, id: &str, value: ParamValue) -> Reply {
        let parsed = match id.parse::<ParamId>() {
            Ok(p) => p,
            Err(e) => return Reply::direct(ServerMessage::error(seq, reason(&e))),
        };
        match self.handle.push_param(ParamUpdate::new(parsed, value)) {
            Ok(applied) => {
                let mut direct = vec![ServerMessage::ParamState {
                    seq,
                    id: id.to_string(),
                    value: applied.into(),
                }];
                if parsed == ParamId::Model {
                    // a new model can change the harmonic count
                    direct.push(ServerMessage::ParamState {
                        seq,
                        id: "harmonic_edit".into(),
                        value: self.state_value("harmonic_edit"),
                    });
                }
                let broadcast = direct.iter().cloned().map(ServerMessage::unsolicited).collect();
                Reply {
                    direct,
                    broadcast,
                    close: false,
                }
            }
            Err(e) => Reply::direct(ServerMessage::error(seq, reason(&e))),
        }
    }
}

fn reason(e: &ParamError) -> String {
    match e {
        ParamError::ModelLoad { reason, .. } => reason.clone(),
        ParamError::BadValue(s) => s.clone(),
        other => other.to_string(),
    }
}
