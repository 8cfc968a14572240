//! Live sessions: sequencing, broadcast, persistence and late-join bundles.
//!
//! Each session is one mutex-guarded state machine. A client frame is
//! validated, given the next op id, appended to the log, applied and
//! broadcast to every connected client, all under the lock, so every client
//! sees the same total order. Poses skip the log: they are applied and
//! broadcast with the current high-water id.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use orbitcad_session::{apply_op, bundle_from_state, squash_state, ClientKind, Payload, SessionOp, SessionState, WIRE_VERSION};
use serde_json::json;
use tokio::sync::mpsc::UnboundedSender;
use tracing::{error, info, warn};

use crate::config::POSE_HZ;
use crate::store::{ModelStatus, Role, Store};
use crate::wal::Wal;

/// Close codes sent to WebSocket clients.
pub const CLOSE_UNKNOWN_SESSION: u16 = 4404;
pub const CLOSE_DUPLICATE_CLIENT: u16 = 4409;
pub const CLOSE_SESSION_DELETED: u16 = 4410;
pub const CLOSE_UNAUTHORIZED: u16 = 4401;
pub const CLOSE_FORBIDDEN: u16 = 4403;

#[derive(Clone, Debug, PartialEq)]
pub enum Outbound {
    Text(Arc<str>),
    Close(u16, String),
}

pub type ClientTx = UnboundedSender<Outbound>;

struct Client {
    tx: ClientTx,
    role: Role,
    last_pose: Option<Instant>,
}

struct Inner {
    state: SessionState,
    wal: Wal,
    clients: BTreeMap<String, Client>,
    ops_since_compaction: usize,
    read_only: bool,
    closed: bool,
    last_t: u64,
}

pub struct LiveSession {
    pub session_id: String,
    pub project_id: String,
    store: Arc<Store>,
    inner: Mutex<Inner>,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct FlushReport {
    pub synced: bool,
    pub compacted: bool,
    pub high_water: u64,
    /// Ops in the compacted file, when compaction ran.
    pub compacted_ops: Option<usize>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum ConnectError {
    Duplicate,
    Closed,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

pub fn error_frame(code: &str, message: &str) -> String {
    json!({"v": WIRE_VERSION, "ctrl": "error", "code": code, "message": message}).to_string()
}

fn text(s: String) -> Outbound {
    Outbound::Text(Arc::from(s))
}

impl Inner {
    fn next_t(&mut self) -> u64 {
        self.last_t = self.last_t.max(now_ms());
        self.last_t
    }

    fn broadcast(&mut self, frame: &str) {
        let frame: Arc<str> = Arc::from(frame);
        // A dropped receiver means the socket task is gone; its disconnect
        // follows shortly.
        for c in self.clients.values() {
            let _ = c.tx.send(Outbound::Text(frame.clone()));
        }
    }

    /// Logs, applies and broadcasts a non-ephemeral payload.
    fn sequence(&mut self, cid: &str, payload: Payload) -> Result<SessionOp, (&'static str, String)> {
        if self.read_only {
            return Err(("read_only", "session log is unavailable; changes are not accepted".into()));
        }
        let t = self.next_t();
        let op = SessionOp::new(self.state.last_op_id + 1, cid, t, payload);
        if let Err(e) = self.wal.append(&op) {
            error!(error = %e, "session log append failed; session is now read-only");
            self.read_only = true;
            let frame = error_frame("read_only", &format!("session log write failed: {e}"));
            self.broadcast(&frame);
            return Err(("read_only", e.to_string()));
        }
        apply_op(&mut self.state, &op).expect("sequenced ids ascend");
        self.ops_since_compaction += 1;
        self.broadcast(&op.to_wire());
        Ok(op)
    }
}

impl LiveSession {
    /// Opens a session's log, rebuilding state from it. Participants left
    /// over from before a restart are sequenced out.
    pub fn open(store: Arc<Store>, session_id: &str, project_id: &str) -> io::Result<LiveSession> {
        let dir = store.session_dir(session_id);
        let (wal, rec) = Wal::open(&dir, session_id)?;
        let mut state = SessionState::new();
        let invalid = |e: orbitcad_session::ProtocolError| io::Error::new(io::ErrorKind::InvalidData, e.to_string());
        for op in &rec.compacted {
            apply_op(&mut state, op).map_err(invalid)?;
        }
        state.advance_to(rec.compacted_high_water);
        for op in &rec.tail {
            apply_op(&mut state, op).map_err(invalid)?;
        }
        let last_t = rec.compacted.iter().chain(&rec.tail).map(|o| o.wall_time).max().unwrap_or(0);
        if rec.truncated_bytes > 0 {
            warn!(session = session_id, bytes = rec.truncated_bytes, "cut torn record from session log");
        }
        info!(session = session_id, high_water = state.last_op_id, "session opened");
        let stale: Vec<String> = state.participants.keys().cloned().collect();
        let mut inner = Inner {
            state,
            wal,
            clients: BTreeMap::new(),
            ops_since_compaction: rec.tail.len(),
            read_only: false,
            closed: false,
            last_t,
        };
        for cid in stale {
            inner.sequence(&cid, Payload::Leave {}).map_err(|(_, m)| io::Error::other(m))?;
        }
        Ok(LiveSession {
            session_id: session_id.to_string(),
            project_id: project_id.to_string(),
            store,
            inner: Mutex::new(inner),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn state(&self) -> SessionState {
        self.lock().state.clone()
    }

    pub fn high_water(&self) -> u64 {
        self.lock().state.last_op_id
    }

    pub fn client_ids(&self) -> Vec<String> {
        self.lock().clients.keys().cloned().collect()
    }

    pub fn is_read_only(&self) -> bool {
        self.lock().read_only
    }

    /// Registers a client: sends the welcome frame and the late-join
    /// bundle, then sequences its `join`.
    pub fn connect(&self, cid: &str, name: &str, kind: ClientKind, role: Role, tx: ClientTx) -> Result<(), ConnectError> {
        let mut g = self.lock();
        if g.closed {
            return Err(ConnectError::Closed);
        }
        if g.clients.contains_key(cid) {
            return Err(ConnectError::Duplicate);
        }
        let bundle = bundle_from_state(&g.state, g.last_t);
        let welcome = json!({
            "v": WIRE_VERSION,
            "ctrl": "welcome",
            "cid": cid,
            "session": self.session_id,
            "high_water": g.state.last_op_id,
            "bundle": bundle.len(),
            "role": role,
            "read_only": g.read_only,
        });
        let _ = tx.send(text(welcome.to_string()));
        for op in &bundle {
            let _ = tx.send(text(op.to_wire()));
        }
        g.clients.insert(cid.to_string(), Client { tx, role, last_pose: None });
        let join = Payload::Join {
            name: name.to_string(),
            kind,
        };
        if let Err((code, m)) = g.sequence(cid, join) {
            if let Some(c) = g.clients.get(cid) {
                let _ = c.tx.send(text(error_frame(code, &m)));
            }
        }
        Ok(())
    }

    pub fn disconnect(&self, cid: &str) {
        let mut g = self.lock();
        if g.clients.remove(cid).is_none() || g.closed {
            return;
        }
        if g.state.participants.contains_key(cid) {
            if let Err((_, m)) = g.sequence(cid, Payload::Leave {}) {
                warn!(session = %self.session_id, client = cid, "leave not logged: {m}");
            }
        }
    }

    /// Handles one text frame from a connected client. Rejections are
    /// answered with an error frame to that client only.
    pub fn handle_frame(&self, cid: &str, frame: &str) {
        let mut g = self.lock();
        let Some(role) = g.clients.get(cid).map(|c| c.role) else { return };
        if let Err((code, message)) = self.handle_locked(&mut g, cid, role, frame) {
            if let Some(c) = g.clients.get(cid) {
                let _ = c.tx.send(text(error_frame(code, &message)));
            }
        }
    }

    fn handle_locked(&self, g: &mut Inner, cid: &str, role: Role, frame: &str) -> Result<(), (&'static str, String)> {
        let op = SessionOp::from_wire(frame).map_err(|e| ("malformed", e.to_string()))?;
        op.payload.validate().map_err(|m| ("invalid", m))?;
        let payload = op.payload;
        match &payload {
            Payload::Join { .. } | Payload::Leave {} | Payload::DefineSlide { .. } => {
                return Err(("forbidden_op", format!("{} is sent by the server only", payload.type_name())));
            }
            Payload::ParticipantPose { .. } => {}
            _ if role < Role::Member => {
                return Err(("forbidden", "viewers may only send poses".into()));
            }
            Payload::SetActiveModel { model_id } => match self.store.model_meta(model_id) {
                Some(m) if m.project_id == self.project_id && m.status == ModelStatus::Ready => {}
                Some(m) if m.project_id == self.project_id => {
                    return Err(("model_not_ready", format!("model {model_id} is {:?}", m.status).to_lowercase()));
                }
                _ => return Err(("unknown_model", format!("no model {model_id} in this project"))),
            },
            _ => {}
        }
        if let (Some(node), Some(model)) = (payload.node(), g.state.active_model.clone()) {
            if let Some(catalog) = self.store.catalog(&model) {
                if !catalog.contains(&node) {
                    return Err(("unknown_node", format!("model {model} has no node {node}")));
                }
            }
        }
        if payload.is_ephemeral() {
            let interval = Duration::from_secs_f64(1.0 / POSE_HZ as f64);
            let now = Instant::now();
            let client = g.clients.get_mut(cid).expect("checked above");
            if client.last_pose.is_some_and(|t| now.duration_since(t) < interval) {
                return Ok(());
            }
            client.last_pose = Some(now);
            if !g.state.participants.contains_key(cid) {
                return Ok(());
            }
            let t = g.next_t();
            let op = SessionOp::new(g.state.last_op_id, cid, t, payload);
            apply_op(&mut g.state, &op).expect("ephemeral ops always apply");
            g.broadcast(&op.to_wire());
            return Ok(());
        }
        g.sequence(cid, payload).map(|_| ())
    }

    /// Sequences an op on behalf of the server or a REST caller.
    pub fn submit(&self, cid: &str, payload: Payload) -> Result<SessionOp, (&'static str, String)> {
        self.lock().sequence(cid, payload)
    }

    /// Makes the log durable and, when `compact` is set and anything was
    /// logged since the last compaction, replaces it with the squashed state.
    pub fn flush(&self, compact: bool) -> io::Result<FlushReport> {
        let mut g = self.lock();
        let high_water = g.state.last_op_id;
        if g.closed {
            return Ok(FlushReport { synced: false, compacted: false, high_water, compacted_ops: None });
        }
        let synced = g.wal.sync()?;
        if !compact || g.ops_since_compaction == 0 {
            return Ok(FlushReport { synced, compacted: false, high_water, compacted_ops: None });
        }
        let squashed = squash_state(&g.state, g.last_t);
        g.wal.compact(&squashed, high_water)?;
        g.ops_since_compaction = 0;
        Ok(FlushReport {
            synced,
            compacted: true,
            high_water,
            compacted_ops: Some(squashed.len()),
        })
    }

    /// Disconnects everyone with `code` and refuses further connections.
    pub fn close(&self, code: u16, reason: &str) {
        let mut g = self.lock();
        g.closed = true;
        for (_, c) in std::mem::take(&mut g.clients) {
            let _ = c.tx.send(Outbound::Close(code, reason.to_string()));
        }
    }
}

/// Open sessions by id.
pub struct Sessions {
    store: Arc<Store>,
    open: Mutex<HashMap<String, Arc<LiveSession>>>,
}

impl Sessions {
    pub fn new(store: Arc<Store>) -> Self {
        Sessions {
            store,
            open: Mutex::new(HashMap::new()),
        }
    }

    /// The live session, opening its log on first use. `None` when the
    /// session does not exist.
    pub fn get(&self, id: &str) -> io::Result<Option<Arc<LiveSession>>> {
        let mut open = self.open.lock().unwrap();
        if let Some(s) = open.get(id) {
            return Ok(Some(s.clone()));
        }
        let Some(meta) = self.store.session_meta(id) else { return Ok(None) };
        let s = Arc::new(LiveSession::open(self.store.clone(), id, &meta.project_id)?);
        open.insert(id.to_string(), s.clone());
        Ok(Some(s))
    }

    pub fn remove(&self, id: &str) -> Option<Arc<LiveSession>> {
        self.open.lock().unwrap().remove(id)
    }

    pub fn all(&self) -> Vec<Arc<LiveSession>> {
        self.open.lock().unwrap().values().cloned().collect()
    }

    /// Flushes every open session; failures are logged and skipped.
    pub fn flush_all(&self, compact: bool) {
        for s in self.all() {
            if let Err(e) = s.flush(compact) {
                error!(session = %s.session_id, error = %e, "flush failed");
            }
        }
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.store.session_dir(id)
    }
}
