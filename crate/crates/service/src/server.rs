//! Websocket transport: `GET /ws` upgrades to a guidance session, `GET /health` answers `ok`.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;

use reachguide::reach_mdp::ReachPolicy;
use reachguide::session::write_event_log;

use crate::handler::{ServiceConfig, SessionHandler};
use crate::wire::ServerMessage;

pub struct AppState {
    pub policy: Option<Arc<ReachPolicy>>,
    pub config: ServiceConfig,
    /// Completed transcripts are written here as event logs when set.
    pub transcript_dir: Option<PathBuf>,
    transcripts_written: AtomicU64,
}

impl AppState {
    pub fn new(
        policy: Option<Arc<ReachPolicy>>,
        config: ServiceConfig,
        transcript_dir: Option<PathBuf>,
    ) -> Self {
        Self {
            policy,
            config,
            transcript_dir,
            transcripts_written: AtomicU64::new(0),
        }
    }

    fn save_transcript(&self, msg: &ServerMessage) {
        let (Some(dir), ServerMessage::Transcript { events }) = (&self.transcript_dir, msg) else {
            return;
        };
        let n = self.transcripts_written.fetch_add(1, Ordering::Relaxed);
        let path = dir.join(format!("session-{n:05}.jsonl"));
        let res = std::fs::File::create(&path)
            .and_then(|f| write_event_log(events, std::io::BufWriter::new(f)));
        if let Err(e) = res {
            eprintln!("could not write transcript {}: {e}", path.display());
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ws", get(upgrade))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn fail(socket: &mut WebSocket, message: String) {
    let _ = send(socket, &ServerMessage::Error { message }).await;
    let _ = socket.send(Message::Close(None)).await;
}

async fn run_session(mut socket: WebSocket, state: Arc<AppState>) {
    let mut handler = SessionHandler::new(state.policy.clone(), state.config);
    let idle = Duration::from_secs_f64(state.config.idle_timeout);
    loop {
        let msg = match tokio::time::timeout(idle, socket.recv()).await {
            Err(_) => {
                fail(&mut socket, "idle timeout".into()).await;
                return;
            }
            Ok(None) | Ok(Some(Err(_))) => return,
            Ok(Some(Ok(m))) => m,
        };
        let text = match msg {
            Message::Text(t) => t,
            Message::Binary(_) => {
                fail(
                    &mut socket,
                    "binary frames are not part of the protocol".into(),
                )
                .await;
                return;
            }
            Message::Close(_) => return,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        match handler.handle_text(text.as_str()) {
            Ok(out) => {
                for m in &out {
                    state.save_transcript(m);
                    if !send(&mut socket, m).await {
                        return;
                    }
                }
            }
            Err(e) => {
                fail(&mut socket, e.to_string()).await;
                return;
            }
        }
    }
}
