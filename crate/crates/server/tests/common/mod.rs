#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use orbitcad_core::io::{export_model, Format};
use orbitcad_core::synth::random_tree;
use orbitcad_server::client::{Connect, RestClient, SessionClient};
use orbitcad_server::{start, ServerConfig, ServerHandle};
use orbitcad_session::ClientKind;

pub const ADMIN: &str = "test-admin-token";
pub const WAIT: Duration = Duration::from_secs(10);

pub async fn server(dir: &Path) -> (ServerHandle, RestClient) {
    let mut cfg = ServerConfig::new(dir);
    cfg.bind = "127.0.0.1:0".parse().unwrap();
    cfg.admin_token = Some(ADMIN.into());
    cfg.flush_interval = Duration::from_secs(3600);
    let h = start(cfg).await.unwrap();
    let rest = RestClient::new(format!("http://{}", h.addr), ADMIN);
    (h, rest)
}

/// A ready model with `nodes` nodes, uploaded as binary glTF.
pub async fn ready_model(rest: &RestClient, project: &str, seed: u64, nodes: usize) -> String {
    let model = random_tree(seed, nodes);
    let glb = export_model(&model, Format::Gltf).unwrap().bytes;
    let id = rest.upload_model(project, "tree.glb", glb).await.unwrap();
    rest.wait_model(&id, WAIT).await.unwrap();
    id
}

/// Connects and waits for the client's own `join`, which is sequenced right
/// after the bundle.
pub async fn join(rest: &RestClient, token: &str, session: &str, cid: &str) -> SessionClient {
    let mut c = SessionClient::connect(Connect {
        ws_base: &rest.ws_base(),
        session_id: session,
        token,
        cid,
        name: cid,
        kind: ClientKind::Web,
    })
    .await
    .unwrap();
    c.sync_to(c.high_water_at_join + 1, WAIT).await.unwrap();
    c
}
