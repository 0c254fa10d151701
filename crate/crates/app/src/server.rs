//! HTTP side of a live session: the `/ws` telemetry/control endpoint and,
//! optionally, static dashboard assets.

use std::path::PathBuf;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;
use tracing::{debug, info};

use crate::protocol::{parse_control, Envelope, Kind};
use crate::session::SessionHandle;
use crate::telemetry::Received;

pub fn router(session: SessionHandle, static_dir: Option<PathBuf>) -> Router {
    let router = Router::new().route("/ws", get(upgrade)).with_state(session);
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, session: SessionHandle, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        info!("telemetry endpoint ws://{addr}/ws");
    }
    axum::serve(listener, router(session, static_dir)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(session): State<SessionHandle>) -> Response {
    ws.on_upgrade(move |socket| client(socket, session))
}

/// One connected client: forwards telemetry and answers its control
/// messages. Replies go only to the client that asked.
async fn client(socket: WebSocket, session: SessionHandle) {
    let mut telemetry = session.hub().subscribe();
    let (mut tx, mut rx) = socket.split();
    let mut last_t = 0.0;
    loop {
        tokio::select! {
            got = telemetry.recv() => match got {
                Received::Line(line) => {
                    if tx.send(Message::Text(line.to_string())).await.is_err() {
                        break;
                    }
                }
                Received::Dropped(n) => debug!("slow client lost {n} telemetry messages"),
                Received::Closed => break,
            },
            msg = rx.next() => {
                let text = match msg {
                    Some(Ok(Message::Text(text))) => text,
                    Some(Ok(Message::Binary(_))) => {
                        let e = Envelope::error(last_t, None, "binary frames are not part of the protocol");
                        if tx.send(Message::Text(e.to_line())).await.is_err() {
                            break;
                        }
                        continue;
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let reply = match parse_control(line) {
                        Ok(control) => {
                            let cmd = control.name();
                            let answer = session.control(control).await;
                            match answer.result {
                                Ok(result) => Envelope::new(Kind::Ack, answer.t, json!({ "cmd": cmd, "result": result })),
                                Err(message) => Envelope::error(answer.t, Some(cmd), message),
                            }
                        }
                        Err(r) => Envelope::error(last_t, r.cmd.as_deref(), r.message),
                    };
                    last_t = reply.t;
                    if tx.send(Message::Text(reply.to_line())).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
}
