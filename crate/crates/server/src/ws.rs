//! `GET /ws/sessions/{id}`: the live session socket.
//!
//! Query parameters: `token` (or an `Authorization` header), `cid` (stable
//! client id, generated when absent), `name` and `kind` (`headset` or
//! `web`). The first frame is a `welcome` control frame, followed by the
//! late-join bundle and then live ops.

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, RawQuery, State};
use axum::http::HeaderMap;
use axum::response::Response;
use futures::{SinkExt, StreamExt};
use orbitcad_session::ClientKind;
use serde::Deserialize;
use tokio::sync::mpsc;
use tracing::debug;

use crate::auth::token_from;
use crate::session::{ConnectError, Outbound, CLOSE_DUPLICATE_CLIENT, CLOSE_FORBIDDEN, CLOSE_SESSION_DELETED, CLOSE_UNAUTHORIZED, CLOSE_UNKNOWN_SESSION};
use crate::store::new_id;
use crate::AppState;

#[derive(Deserialize)]
pub struct WsQuery {
    cid: Option<String>,
    name: Option<String>,
    kind: Option<ClientKind>,
}

/// Rejections are delivered as close codes after the upgrade, since
/// browsers cannot read the status of a failed handshake.
pub async fn handler(State(st): State<AppState>, Path(id): Path<String>, Query(q): Query<WsQuery>, RawQuery(raw): RawQuery, headers: HeaderMap, ws: WebSocketUpgrade) -> Response {
    let token = token_from(&headers, raw.as_deref());
    ws.on_upgrade(move |socket| run(st, id, q, token, socket))
}

async fn reject(mut socket: WebSocket, code: u16, reason: &str) {
    let _ = socket
        .send(Message::Close(Some(CloseFrame {
            code,
            reason: reason.into(),
        })))
        .await;
}

async fn run(st: AppState, id: String, q: WsQuery, token: Option<String>, socket: WebSocket) {
    let Some(user) = token.and_then(|t| st.store.user_by_token(&t)) else {
        return reject(socket, CLOSE_UNAUTHORIZED, "missing or unknown token").await;
    };
    let session = match st.sessions.get(&id) {
        Ok(Some(s)) => s,
        _ => return reject(socket, CLOSE_UNKNOWN_SESSION, "unknown session").await,
    };
    let Some(role) = st.store.role(&user, &session.project_id) else {
        return reject(socket, CLOSE_FORBIDDEN, "not a member of this project").await;
    };
    let cid = q.cid.filter(|c| !c.is_empty()).unwrap_or_else(|| new_id("c"));
    let name = q.name.unwrap_or_else(|| user.name.clone());
    let (tx, mut rx) = mpsc::unbounded_channel();
    match session.connect(&cid, &name, q.kind.unwrap_or(ClientKind::Web), role, tx) {
        Ok(()) => {}
        Err(ConnectError::Duplicate) => return reject(socket, CLOSE_DUPLICATE_CLIENT, "client id already connected").await,
        Err(ConnectError::Closed) => return reject(socket, CLOSE_SESSION_DELETED, "session deleted").await,
    }
    debug!(session = %id, client = %cid, "connected");
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            let msg = match out {
                Outbound::Text(t) => Message::Text(t.as_ref().into()),
                Outbound::Close(code, reason) => {
                    let _ = sink.send(Message::Close(Some(CloseFrame { code, reason: reason.into() }))).await;
                    break;
                }
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(t) => session.handle_frame(&cid, t.as_str()),
            Message::Close(_) => break,
            Message::Binary(_) => session.handle_frame(&cid, "binary frames are not part of the protocol"),
            _ => {}
        }
    }
    session.disconnect(&cid);
    writer.abort();
    debug!(session = %id, client = %cid, "disconnected");
}
