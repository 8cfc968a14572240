//! Kill-and-recover harness: drives a server process with a stream of ops,
//! kills it with SIGKILL mid-stream, restarts it on the same data directory
//! and checks the recovered state against the ops the client sent.
//!
//! Every op the server acknowledged must survive. Ops sent but not yet
//! acknowledged may or may not, but only as a prefix: the recovered state
//! must equal the fold of the first `m` sent ops for some
//! `acked <= m <= sent`.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use orbitcad_core::synth::SplitMix64;
use orbitcad_session::gen::{GenConfig, OpGen};
use orbitcad_session::{apply_op, canonical_json, Payload, SessionOp, SessionState};
use tokio_tungstenite::tungstenite::Message;

use crate::client::RestClient;

const TOKEN: &str = "crash-harness-admin";

#[derive(Clone, Debug)]
pub struct CrashTrial {
    pub acked: usize,
    pub sent: usize,
    /// Number of sent ops the recovered state corresponds to.
    pub recovered_prefix: Option<usize>,
}

impl CrashTrial {
    pub fn passed(&self) -> bool {
        self.recovered_prefix.is_some_and(|m| self.acked <= m && m <= self.sent)
    }
}

struct Server {
    child: Child,
    base: String,
}

/// Starts the server with `command`, pointing it at `data_dir` through the
/// environment, and waits for its "listening on" line.
fn launch(command: &dyn Fn() -> Command, data_dir: &Path, flush_secs: Option<f64>) -> Result<Server, String> {
    let mut cmd = command();
    cmd.env("ORBITCAD_DATA_DIR", data_dir)
        .env("ORBITCAD_BIND", "127.0.0.1:0")
        .env("ORBITCAD_ADMIN_TOKEN", TOKEN)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null());
    match flush_secs {
        Some(s) => cmd.env("ORBITCAD_FLUSH_SECS", s.to_string()),
        None => cmd.env("ORBITCAD_FLUSH_SECS", "3600"),
    };
    let mut child = cmd.spawn().map_err(|e| format!("spawn: {e}"))?;
    let stdout = child.stdout.take().ok_or("no stdout")?;
    let mut lines = BufReader::new(stdout).lines();
    loop {
        match lines.next() {
            Some(Ok(line)) => {
                if let Some(addr) = line.strip_prefix("listening on ") {
                    let base = format!("http://{}", addr.trim());
                    // Keep draining so the child never blocks on a full pipe.
                    std::thread::spawn(move || for _ in lines {});
                    return Ok(Server { child, base });
                }
            }
            _ => {
                let _ = child.kill();
                return Err("server exited before listening".into());
            }
        }
    }
}

fn payload_stream(seed: u64, n: usize) -> Vec<Payload> {
    let cfg = GenConfig {
        participants: false,
        ..Default::default()
    };
    let mut g = OpGen::new(seed, cfg);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = g.payload("w");
        // No model is uploaded, so model switches would be refused.
        if matches!(p, Payload::SetActiveModel { .. }) {
            continue;
        }
        g.sequence("w", p.clone());
        out.push(p);
    }
    out
}

/// Runs one trial. `command` builds the server invocation (binary and any
/// leading arguments); `flush_secs` enables periodic compaction while the
/// stream runs.
pub async fn crash_trial(command: &dyn Fn() -> Command, data_dir: &Path, seed: u64, min_acked: usize, flush_secs: Option<f64>) -> Result<CrashTrial, String> {
    let mut rng = SplitMix64::new(seed);
    let kill_after = min_acked + rng.below(min_acked as u64 / 2 + 1) as usize;
    let total = kill_after * 2 + 500;
    let payloads = payload_stream(seed, total);

    let mut server = launch(command, data_dir, flush_secs)?;
    let rest = RestClient::new(server.base.clone(), TOKEN);
    let err = |e: crate::client::ClientError| e.to_string();
    let project = rest.create_project("crash").await.map_err(err)?;
    let session = rest.create_session(&project, "crash", None).await.map_err(err)?;
    let url = format!("{}/ws/sessions/{session}?token={TOKEN}&cid=w&name=writer", rest.ws_base());
    let (ws, _) = tokio_tungstenite::connect_async(url).await.map_err(|e| e.to_string())?;
    let (mut sink, mut stream) = ws.split();

    let sent = Arc::new(AtomicUsize::new(0));
    let writer = {
        let sent = sent.clone();
        let payloads = payloads.clone();
        tokio::spawn(async move {
            for p in payloads {
                let frame = SessionOp::new(0, "w", 0, p).to_wire();
                // Counted before the write: an op may reach the server the
                // moment it leaves this task.
                sent.fetch_add(1, Ordering::SeqCst);
                if sink.send(Message::Text(frame.into())).await.is_err() {
                    break;
                }
            }
            sink
        })
    };

    // Echoes of our own ops, in order, plus anything else the server logged.
    let mut received: Vec<SessionOp> = Vec::new();
    let mut acked = 0usize;
    let mut welcome_seen = false;
    let mut bundle_left = 0u64;
    while acked < kill_after {
        let msg = tokio::time::timeout(Duration::from_secs(20), stream.next())
            .await
            .map_err(|_| format!("no ack after {acked} ops"))?;
        let Some(Ok(Message::Text(t))) = msg else { return Err(format!("socket ended after {acked} acks")) };
        let v: serde_json::Value = serde_json::from_str(t.as_str()).map_err(|e| e.to_string())?;
        if !welcome_seen {
            welcome_seen = true;
            bundle_left = v["bundle"].as_u64().unwrap_or(0);
            continue;
        }
        if v.get("ctrl").is_some() {
            return Err(format!("server refused an op: {v}"));
        }
        let op = SessionOp::from_value(v).map_err(|e| e.to_string())?;
        if bundle_left > 0 {
            bundle_left -= 1;
            continue;
        }
        if op.client_id == "w" && !matches!(op.payload, Payload::Join { .. }) {
            acked += 1;
        }
        received.push(op);
    }
    server.child.kill().map_err(|e| e.to_string())?;
    let _ = server.child.wait();
    let sent_count = sent.load(Ordering::SeqCst);
    writer.abort();

    let server2 = launch(command, data_dir, None)?;
    let rest2 = RestClient::new(server2.base.clone(), TOKEN);
    let recovered = rest2.session_state(&session, false).await.map_err(err);
    let mut server2 = server2;
    let _ = server2.child.kill();
    let _ = server2.child.wait();
    let recovered = recovered?;

    // Candidates: everything acknowledged, then each further sent op.
    let mut state = SessionState::new();
    for op in &received {
        apply_op(&mut state, op).map_err(|e| e.to_string())?;
    }
    let t = received.last().map_or(0, |o| o.wall_time);
    let mut prefix = None;
    if canonical_json(&state) == recovered {
        prefix = Some(acked);
    }
    for (m, p) in payloads.iter().enumerate().take(sent_count).skip(acked) {
        if prefix.is_some() {
            break;
        }
        let op = SessionOp::new(state.last_op_id + 1, "w", t, p.clone());
        apply_op(&mut state, &op).map_err(|e| e.to_string())?;
        if canonical_json(&state) == recovered {
            prefix = Some(m + 1);
        }
    }
    Ok(CrashTrial {
        acked,
        sent: sent_count,
        recovered_prefix: prefix,
    })
}
