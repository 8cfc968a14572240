//! Scripted multi-client sessions: many clients edit one session at random
//! times, one drops and rejoins mid-run, and at the end every client's
//! full-state hash must match the server's.
//!
//! Op streams are seeded; the interleaving depends on timing, so the final
//! hash varies between runs but the convergence verdict must not.

use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Args;
use orbitcad_core::io::{export_model, Format};
use orbitcad_core::synth::{random_tree, SplitMix64};
use orbitcad_server::client::{ClientError, Connect, Event, RestClient, SessionClient};
use orbitcad_server::{start, ServerConfig, ServerHandle};
use orbitcad_session::gen::{GenConfig, OpGen};
use orbitcad_session::{state_hash, ClientKind, Payload};
use serde::Serialize;
use serde_json::json;
use tokio::sync::Barrier;

use crate::{CliError, Output};

const MODELS: usize = 3;

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    #[arg(long, default_value_t = 20)]
    pub clients: usize,
    /// Ops each client sends.
    #[arg(long, default_value_t = 100)]
    pub ops: usize,
    /// Mean ops per second per client.
    #[arg(long, default_value_t = 50.0)]
    pub rate: f64,
    /// Run for this many seconds instead of a fixed op count.
    #[arg(long, conflicts_with = "ops")]
    pub duration: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Nodes per generated model.
    #[arg(long, default_value_t = 20)]
    pub nodes: usize,
    /// Server base URL; an in-process server on a scratch directory is
    /// started when absent.
    #[arg(long, requires = "token")]
    pub server: Option<String>,
    #[arg(long, env = "ORBITCAD_TOKEN")]
    pub token: Option<String>,
    /// Skip the mid-run disconnect and rejoin.
    #[arg(long)]
    pub no_rejoin: bool,
}

#[derive(Debug, Serialize)]
pub struct SimReport {
    pub converged: bool,
    pub seed: u64,
    pub clients: usize,
    pub ops_per_client: usize,
    pub sent: usize,
    pub rejected: usize,
    pub high_water: u64,
    pub distinct_hashes: usize,
    pub state_hash: String,
    pub rejoined: Option<String>,
    pub elapsed_ms: u64,
}

struct ClientPlan {
    cid: String,
    payloads: Vec<Payload>,
    delays: Vec<Duration>,
    rejoin_at: Option<usize>,
}

fn plans(a: &SimArgs, ops: usize, model_ids: &[String]) -> Vec<ClientPlan> {
    let rejoiner = (!a.no_rejoin && a.clients > 0).then(|| (a.seed % a.clients as u64) as usize);
    (0..a.clients)
        .map(|i| {
            let cid = format!("sim-{i}");
            let cfg = GenConfig {
                nodes: a.nodes as u32,
                clients: 1,
                max_slides: 3,
                participants: true,
            };
            let mut g = OpGen::new(a.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), cfg);
            let mut rng = SplitMix64::new(a.seed ^ (0x51u64 << 32) ^ i as u64);
            let mut payloads = Vec::with_capacity(ops);
            while payloads.len() < ops {
                let p = match g.payload(&cid) {
                    // Membership is the server's business.
                    Payload::Join { .. } | Payload::Leave {} => continue,
                    Payload::SetActiveModel { model_id } => {
                        let k: usize = model_id.trim_start_matches("model-").parse().unwrap_or(0);
                        Payload::SetActiveModel {
                            model_id: model_ids[k % model_ids.len()].clone(),
                        }
                    }
                    p => p,
                };
                payloads.push(p);
            }
            let mean = 1.0 / a.rate.max(1e-3);
            let delays = (0..ops).map(|_| Duration::from_secs_f64(rng.range(0.0, 2.0 * mean))).collect();
            ClientPlan {
                cid,
                payloads,
                delays,
                rejoin_at: (rejoiner == Some(i)).then_some(ops / 2),
            }
        })
        .collect()
}

/// Slide references are rewritten against the client's own view, since
/// slide ids come from server numbering.
fn resolve_slide(p: Payload, client: &SessionClient, rng: &mut SplitMix64) -> Payload {
    let pick = |rng: &mut SplitMix64| {
        let ids: Vec<&String> = client.state.slides.keys().collect();
        if ids.is_empty() {
            "s0".to_string()
        } else {
            ids[rng.below(ids.len() as u64) as usize].clone()
        }
    };
    match p {
        Payload::LoadSlide { .. } => Payload::LoadSlide { slide_id: pick(rng) },
        Payload::DeleteSlide { .. } => Payload::DeleteSlide { slide_id: pick(rng) },
        p => p,
    }
}

struct Target {
    rest: RestClient,
    session: String,
}

async fn connect(t: &Target, cid: &str) -> Result<SessionClient, ClientError> {
    SessionClient::connect(Connect {
        ws_base: &t.rest.ws_base(),
        session_id: &t.session,
        token: &t.rest.token,
        cid,
        name: cid,
        kind: if cid.ends_with(['0', '2', '4', '6', '8']) { ClientKind::Headset } else { ClientKind::Web },
    })
    .await
}

/// Sends the plan while folding everything the server broadcasts. Returns
/// the client and how many of its ops were refused.
async fn drive(t: Arc<Target>, plan: ClientPlan, seed: u64, done: Arc<Barrier>) -> Result<(SessionClient, usize), ClientError> {
    let mut client = connect(&t, &plan.cid).await?;
    let mut rng = SplitMix64::new(seed);
    let mut rejected = 0;
    for (k, p) in plan.payloads.into_iter().enumerate() {
        if plan.rejoin_at == Some(k) {
            client.close().await?;
            tokio::time::sleep(Duration::from_millis(100)).await;
            client = connect(&t, &plan.cid).await?;
        }
        let due = tokio::time::Instant::now() + plan.delays[k];
        loop {
            tokio::select! {
                _ = tokio::time::sleep_until(due) => break,
                e = client.next_event(Duration::from_secs(3600)) => {
                    if let Event::Error { .. } = e? {
                        rejected += 1;
                    }
                }
            }
        }
        let p = resolve_slide(p, &client, &mut rng);
        client.send(p).await?;
    }
    done.wait().await;
    for e in client.drain(Duration::from_millis(500)).await? {
        if let Event::Error { .. } = e {
            rejected += 1;
        }
    }
    Ok((client, rejected))
}

async fn simulate(a: SimArgs) -> Result<SimReport, CliError> {
    let started = Instant::now();
    let ops = match a.duration {
        Some(d) => (d * a.rate).round().max(1.0) as usize,
        None => a.ops,
    };
    let mut scratch: Option<(tempfile::TempDir, ServerHandle)> = None;
    let rest = match (&a.server, &a.token) {
        (Some(url), Some(token)) => RestClient::new(url.clone(), token.clone()),
        _ => {
            let dir = tempfile::tempdir()?;
            let mut cfg = ServerConfig::new(dir.path());
            cfg.bind = "127.0.0.1:0".parse().expect("literal address");
            let token = format!("sim-{:016x}", SplitMix64::new(a.seed).next_u64());
            cfg.admin_token = Some(token.clone());
            let h = start(cfg).await?;
            let rest = RestClient::new(format!("http://{}", h.addr), token);
            scratch = Some((dir, h));
            rest
        }
    };
    let project = rest.create_project("simulation").await?;
    let mut model_ids = Vec::with_capacity(MODELS);
    for k in 0..MODELS {
        let glb = export_model(&random_tree(a.seed + k as u64, a.nodes), Format::Gltf)?.bytes;
        let id = rest.upload_model(&project, &format!("tree-{k}.glb"), glb).await?;
        rest.wait_model(&id, Duration::from_secs(30)).await?;
        model_ids.push(id);
    }
    let session = rest.create_session(&project, "simulation", Some(&model_ids[0])).await?;
    let target = Arc::new(Target { rest: rest.clone(), session: session.clone() });

    let plans = plans(&a, ops, &model_ids);
    let rejoined = plans.iter().find(|p| p.rejoin_at.is_some()).map(|p| p.cid.clone());
    let done = Arc::new(Barrier::new(plans.len()));
    let tasks: Vec<_> = plans
        .into_iter()
        .enumerate()
        .map(|(i, plan)| tokio::spawn(drive(target.clone(), plan, a.seed.wrapping_add(i as u64), done.clone())))
        .collect();
    let mut clients = Vec::with_capacity(tasks.len());
    let mut rejected = 0;
    for t in tasks {
        let (c, r) = t.await.map_err(|e| CliError::new("simulation", e.to_string()))??;
        rejected += r;
        clients.push(c);
    }

    let resp = rest.request(reqwest_get(), &format!("/api/sessions/{session}/state?full=true")).send().await?;
    let server_hash = resp.headers().get("x-state-hash").and_then(|v| v.to_str().ok()).unwrap_or_default().to_string();
    let high_water: u64 = resp.headers().get("x-high-water").and_then(|v| v.to_str().ok()).and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut hashes: Vec<String> = clients.iter().map(|c| state_hash(&c.state)).collect();
    hashes.push(server_hash.clone());
    hashes.sort();
    hashes.dedup();
    for c in clients {
        let _ = c.close().await;
    }
    if let Some((_dir, h)) = scratch {
        h.shutdown().await?;
    }
    Ok(SimReport {
        converged: hashes.len() == 1,
        seed: a.seed,
        clients: a.clients,
        ops_per_client: ops,
        sent: a.clients * ops,
        rejected,
        high_water,
        distinct_hashes: hashes.len(),
        state_hash: server_hash,
        rejoined,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

fn reqwest_get() -> orbitcad_server::client::Method {
    orbitcad_server::client::Method::GET
}

pub fn run(a: &SimArgs) -> Result<Output, CliError> {
    if a.clients == 0 {
        return Err(CliError::new("usage", "--clients must be at least 1"));
    }
    if !(a.rate > 0.0 && a.rate.is_finite()) {
        return Err(CliError::new("usage", "--rate must be positive"));
    }
    let rt = tokio::runtime::Runtime::new()?;
    let report = rt.block_on(simulate(a.clone()))?;
    let text = format!(
        "converged: {}\nclients: {}, ops sent: {}, refused: {}, high water: {}\nstate hash: {}\nrejoined: {}\nelapsed: {} ms",
        report.converged,
        report.clients,
        report.sent,
        report.rejected,
        report.high_water,
        report.state_hash,
        report.rejoined.as_deref().unwrap_or("none"),
        report.elapsed_ms
    );
    let converged = report.converged;
    let out = Output {
        json: json!(report),
        text,
    };
    if converged {
        Ok(out)
    } else {
        Err(CliError {
            code: "diverged",
            message: out.text,
            exit: 5,
            extra: out.json,
        })
    }
}
