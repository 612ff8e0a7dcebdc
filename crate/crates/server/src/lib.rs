//! WebSocket control server for a running harmonia engine.
//!
//! Clients connect to `/ws` with the `harmonia.v1` subprotocol, say hello,
//! and get back every parameter with its range and current value. From then
//! on they can set parameters, list and switch models, and receive telemetry
//! frames at a bounded rate. See [`protocol`] for the message set.
//!
//! The server never blocks the audio thread: updates go through the engine
//! handle's lock-free queues, and telemetry is sampled from the engine's
//! drop-oldest queue by a single pump task. Each client watches only the
//! newest frame, so a slow client skips frames instead of backing up.

pub mod protocol;
pub mod session;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use harmonia::engine::EngineHandle;
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio::sync::{broadcast, watch};

pub use protocol::{ClientMessage, ServerMessage, PROTOCOL_VERSION, SUBPROTOCOL};
pub use session::{Reply, Session};

pub const DEFAULT_TELEMETRY_HZ: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    /// Upper bound on telemetry frames per second per client.
    pub telemetry_hz: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            telemetry_hz: DEFAULT_TELEMETRY_HZ,
        }
    }
}

#[derive(Clone)]
struct AppState {
    handle: EngineHandle,
    telemetry: watch::Receiver<Option<Arc<str>>>,
    updates: broadcast::Sender<(u64, Arc<str>)>,
    next_client: Arc<AtomicU64>,
}

/// A bound control server, ready to run.
pub struct ControlServer {
    listener: TcpListener,
    handle: EngineHandle,
    config: ServerConfig,
}

impl ControlServer {
    pub async fn bind(addr: impl ToSocketAddrs, handle: EngineHandle, config: ServerConfig) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        Ok(Self {
            listener,
            handle,
            config,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `shutdown` resolves.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let (tx, rx) = watch::channel(None);
        let pump = tokio::spawn(pump_telemetry(self.handle.clone(), tx, self.config.telemetry_hz));
        let (updates, _) = broadcast::channel(256);
        let app = router(AppState {
            handle: self.handle,
            telemetry: rx,
            updates,
            next_client: Arc::new(AtomicU64::new(1)),
        });
        let result = axum::serve(self.listener, app).with_graceful_shutdown(shutdown).await;
        pump.abort();
        result
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/", get(|| async { "harmonia control server; connect a WebSocket to /ws\n" }))
        .route("/ws", get(upgrade))
        .with_state(state)
}

fn offers_subprotocol(headers: &HeaderMap) -> bool {
    headers
        .get_all(header::SEC_WEBSOCKET_PROTOCOL)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|p| p.trim() == SUBPROTOCOL)
}

async fn upgrade(ws: WebSocketUpgrade, headers: HeaderMap, State(state): State<AppState>) -> Response {
    if !offers_subprotocol(&headers) {
        return (
            StatusCode::BAD_REQUEST,
            format!("the {SUBPROTOCOL} subprotocol is required\n"),
        )
            .into_response();
    }
    ws.protocols([SUBPROTOCOL])
        .on_upgrade(move |socket| serve_client(socket, state))
}

/// Samples the newest engine telemetry at most `rate_hz` times a second.
/// Frames in between are dropped; with no clients they are dropped too.
async fn pump_telemetry(handle: EngineHandle, tx: watch::Sender<Option<Arc<str>>>, rate_hz: f64) {
    let rate = if rate_hz.is_finite() && rate_hz > 0.0 { rate_hz } else { DEFAULT_TELEMETRY_HZ };
    let mut tick = tokio::time::interval(Duration::from_secs_f64(1.0 / rate));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tick.tick().await;
        if let Some(t) = handle.latest_telemetry() {
            tx.send_replace(Some(ServerMessage::telemetry(&t).to_json().into()));
        }
        handle.collect_garbage();
    }
}

async fn serve_client(socket: WebSocket, state: AppState) {
    let client = state.next_client.fetch_add(1, Ordering::Relaxed);
    tracing::info!(client, "connected");
    let (mut sink, mut stream) = socket.split();
    let mut session = Session::new(state.handle.clone());
    let mut telemetry = state.telemetry.clone();
    telemetry.mark_unchanged();
    let mut updates = state.updates.subscribe();
    let mut pump_alive = true;

    loop {
        tokio::select! {
            frame = stream.next() => {
                let text = match frame {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Binary(_))) => {
                        let err = ServerMessage::error(0, "binary frames are not supported").to_json();
                        if sink.send(Message::Text(err.into())).await.is_err() {
                            break;
                        }
                        continue;
                    }
                    Some(Ok(Message::Close(_))) | None => break,
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => {
                        tracing::warn!(client, error = %e, "receive failed");
                        break;
                    }
                };
                // model loads touch the filesystem; keep them off the reactor
                let mut moved = session;
                let Ok((back, reply)) = tokio::task::spawn_blocking(move || {
                    let reply = moved.handle_text(&text);
                    (moved, reply)
                })
                .await
                else {
                    break;
                };
                session = back;
                for msg in &reply.broadcast {
                    let _ = state.updates.send((client, msg.to_json().into()));
                }
                let mut failed = false;
                for msg in reply.direct {
                    failed |= sink.send(Message::Text(msg.to_json().into())).await.is_err();
                }
                if reply.close || failed {
                    let _ = sink.send(Message::Close(None)).await;
                    break;
                }
            }
            changed = telemetry.changed(), if pump_alive && session.is_greeted() => {
                if changed.is_err() {
                    pump_alive = false;
                    continue;
                }
                let frame = telemetry.borrow_and_update().clone();
                if let Some(text) = frame {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
            }
            update = updates.recv() => match update {
                Ok((from, text)) if from != client && session.is_greeted() => {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    tracing::info!(client, "disconnected");
}
