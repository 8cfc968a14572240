mod common;

use std::time::Duration;

use common::*;
use orbitcad_core::NodeId;
use orbitcad_server::client::{ClientError, Event};
use orbitcad_server::wal::Wal;
use orbitcad_session::gen::{random_pose, random_transform};
use orbitcad_session::{canonical_json, canonical_json_full, squash_bound, Payload, SessionOp};
use orbitcad_core::synth::SplitMix64;
use serde_json::{json, Value};

fn op(e: Event) -> SessionOp {
    match e {
        Event::Op(o) => o,
        other => panic!("expected op, got {other:?}"),
    }
}

fn error_code(e: Event) -> String {
    match e {
        Event::Error { code, .. } => code,
        other => panic!("expected error, got {other:?}"),
    }
}

async fn setup(rest: &orbitcad_server::client::RestClient) -> (String, String, String) {
    let project = rest.create_project("live").await.unwrap();
    let model = ready_model(rest, &project, 7, 20).await;
    let session = rest.create_session(&project, "review", Some(&model)).await.unwrap();
    (project, model, session)
}

#[tokio::test]
async fn poi_reaches_both_clients_with_one_id() {
    let dir = tempfile::tempdir().unwrap();
    let (h, rest) = server(dir.path()).await;
    let (_, _, session) = setup(&rest).await;
    let mut a = join(&rest, ADMIN, &session, "alice").await;
    let mut b = join(&rest, ADMIN, &session, "bob").await;
    a.sync_to(b.state.last_op_id, WAIT).await.unwrap();

    a.send(Payload::PlacePoi { position: [0.1, 0.2, 0.3], anchor: Some(NodeId(3)) }).await.unwrap();
    let ea = op(a.next_event(WAIT).await.unwrap());
    let eb = op(b.next_event(WAIT).await.unwrap());
    assert_eq!(ea, eb);
    assert_eq!(ea.client_id, "alice");
    assert_eq!(a.state.poi, b.state.poi);
    assert_eq!(a.state.poi.as_ref().unwrap().placer, "alice");
    assert_eq!(rest.session_state(&session, true).await.unwrap(), canonical_json_full(&a.state));
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn poses_are_broadcast_but_never_logged() {
    let dir = tempfile::tempdir().unwrap();
    let (h, rest) = server(dir.path()).await;
    let (_, _, session) = setup(&rest).await;
    let mut a = join(&rest, ADMIN, &session, "alice").await;
    let mut b = join(&rest, ADMIN, &session, "bob").await;
    a.sync_to(b.state.last_op_id, WAIT).await.unwrap();
    let hw = a.state.last_op_id;

    let pose = random_pose(&mut SplitMix64::new(3));
    a.send(Payload::ParticipantPose { pose }).await.unwrap();
    let pa = op(a.next_event(WAIT).await.unwrap());
    let pb = op(b.next_event(WAIT).await.unwrap());
    assert_eq!(pa, pb);
    assert_eq!(pa.op_id, hw, "poses carry the current high-water id");
    assert_eq!(b.state.participants["alice"].pose, Some(pose));

    // A second pose inside the throttle window is dropped.
    a.send(Payload::ParticipantPose { pose }).await.unwrap();
    assert!(b.drain(Duration::from_millis(20)).await.unwrap().is_empty());

    let report: Value = rest.flush(&session, false).await.unwrap();
    assert_eq!(report["synced"], true);
    let sdir = dir.path().join("sessions").join(&session);
    for (_, path) in Wal::files(&sdir, &session).unwrap() {
        let text = std::fs::read_to_string(path).unwrap();
        assert!(!text.contains("participant_pose"), "{text}");
    }
    // A late joiner still learns the pose from the bundle.
    let c = join(&rest, ADMIN, &session, "carol").await;
    assert_eq!(c.state.participants["alice"].pose, Some(pose));
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn invalid_ops_are_refused_to_the_sender_only() {
    let dir = tempfile::tempdir().unwrap();
    let (h, rest) = server(dir.path()).await;
    let (project, _, session) = setup(&rest).await;
    let mut a = join(&rest, ADMIN, &session, "alice").await;
    let mut b = join(&rest, ADMIN, &session, "bob").await;
    a.sync_to(b.state.last_op_id, WAIT).await.unwrap();
    let hw = b.state.last_op_id;

    let t = random_transform(&mut SplitMix64::new(1));
    a.send(Payload::TransformNode { node: NodeId(9999), transform: t }).await.unwrap();
    assert_eq!(error_code(a.next_event(WAIT).await.unwrap()), "unknown_node");
    a.send(Payload::SetActiveModel { model_id: "m-nope".into() }).await.unwrap();
    assert_eq!(error_code(a.next_event(WAIT).await.unwrap()), "unknown_model");
    a.send(Payload::Leave {}).await.unwrap();
    assert_eq!(error_code(a.next_event(WAIT).await.unwrap()), "forbidden_op");
    a.send_raw(r#"{"v":1,"type":"transform_node","body":{"node":"x"}}"#).await.unwrap();
    assert_eq!(error_code(a.next_event(WAIT).await.unwrap()), "malformed");
    a.send_raw(r#"{"v":9,"type":"clear_poi","body":{}}"#).await.unwrap();
    assert_eq!(error_code(a.next_event(WAIT).await.unwrap()), "malformed");

    // Viewers may only move their own head.
    let viewer: Value = rest.post("/api/users", &json!({"name": "vic"})).await.unwrap();
    let vid = viewer["user"]["user_id"].as_str().unwrap();
    let vtoken = viewer["token"].as_str().unwrap();
    let resp = rest
        .request(reqwest::Method::PUT, &format!("/api/projects/{project}/members/{vid}"))
        .json(&json!({"role": "viewer"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let mut v = join(&rest, vtoken, &session, "vic").await;
    v.send(Payload::ClearPoi {}).await.unwrap();
    let events = v.drain(Duration::from_millis(200)).await.unwrap();
    assert!(events.iter().any(|e| matches!(e, Event::Error { code, .. } if code == "forbidden")), "{events:?}");

    // Bob saw only the viewer's join.
    let seen: Vec<_> = b.drain(Duration::from_millis(200)).await.unwrap();
    assert_eq!(seen.len(), 1, "{seen:?}");
    assert_eq!(b.state.last_op_id, hw + 1);
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn close_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (h, rest) = server(dir.path()).await;
    let (_, _, session) = setup(&rest).await;
    let mut a = join(&rest, ADMIN, &session, "alice").await;

    let dup = orbitcad_server::client::SessionClient::connect(orbitcad_server::client::Connect {
        ws_base: &rest.ws_base(),
        session_id: &session,
        token: ADMIN,
        cid: "alice",
        name: "again",
        kind: orbitcad_session::ClientKind::Web,
    })
    .await;
    assert!(matches!(dup, Err(ClientError::Closed(4409))), "{:?}", dup.err());

    let missing = orbitcad_server::client::SessionClient::connect(orbitcad_server::client::Connect {
        ws_base: &rest.ws_base(),
        session_id: "s-missing",
        token: ADMIN,
        cid: "x",
        name: "x",
        kind: orbitcad_session::ClientKind::Web,
    })
    .await;
    assert!(matches!(missing, Err(ClientError::Closed(4404))), "{:?}", missing.err());

    let bad = orbitcad_server::client::SessionClient::connect(orbitcad_server::client::Connect {
        ws_base: &rest.ws_base(),
        session_id: &session,
        token: "wrong",
        cid: "y",
        name: "y",
        kind: orbitcad_session::ClientKind::Web,
    })
    .await;
    assert!(matches!(bad, Err(ClientError::Closed(4401))), "{:?}", bad.err());

    rest.delete(&format!("/api/sessions/{session}")).await.unwrap();
    let ended = loop {
        match a.next_event(WAIT).await {
            Ok(_) => continue,
            Err(e) => break e,
        }
    };
    assert!(matches!(ended, ClientError::Closed(4410)), "{ended:?}");
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn late_joiner_matches_continuous_client() {
    let dir = tempfile::tempdir().unwrap();
    let (h, rest) = server(dir.path()).await;
    let (_, _, session) = setup(&rest).await;
    let mut a = join(&rest, ADMIN, &session, "alice").await;
    let mut rng = SplitMix64::new(11);
    for i in 0..120u32 {
        let node = NodeId(1 + i % 15);
        let p = match i % 6 {
            0 => Payload::TransformNode { node, transform: random_transform(&mut rng) },
            1 => Payload::SetNodeVisibility { node, visible: i % 4 == 1 },
            2 => Payload::CreateSlide { name: format!("slide {i}") },
            3 => Payload::PlacePoi { position: [0.0, 1.0, i as f64 / 100.0], anchor: None },
            4 => Payload::SetCutPlane { axis: orbitcad_core::render::Axis::Z, offset: 0.25, enabled: i % 12 == 4 },
            _ => Payload::TransformWhole { transform: random_transform(&mut rng) },
        };
        a.send(p).await.unwrap();
    }
    a.sync_to(122, WAIT).await.unwrap();
    let target = rest.session_state(&session, false).await.unwrap();
    let mut b = join(&rest, ADMIN, &session, "bob").await;
    a.sync_to(b.state.last_op_id, WAIT).await.unwrap();
    b.sync_to(a.state.last_op_id, WAIT).await.unwrap();
    assert_eq!(canonical_json(&a.state), target);
    assert_eq!(canonical_json(&b.state), target);
    assert_eq!(canonical_json_full(&a.state), canonical_json_full(&b.state));
    assert!(b.high_water_at_join >= 121);
    h.shutdown().await.unwrap();
}

#[tokio::test]
async fn compaction_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (h, rest) = server(dir.path()).await;
    let (_, _, session) = setup(&rest).await;
    let mut a = join(&rest, ADMIN, &session, "alice").await;
    let mut rng = SplitMix64::new(5);
    for i in 0..400u32 {
        a.send(Payload::TransformNode { node: NodeId(1 + i % 8), transform: random_transform(&mut rng) }).await.unwrap();
        if i % 50 == 0 {
            a.send(Payload::CreateSlide { name: format!("s{i}") }).await.unwrap();
        }
    }
    a.sync_to(410, WAIT).await.unwrap();
    let before = rest.session_state(&session, false).await.unwrap();
    assert_eq!(before, canonical_json(&a.state));

    let r: Value = rest.flush(&session, true).await.unwrap();
    assert_eq!(r["compacted"], true);
    let n = r["compacted_ops"].as_u64().unwrap() as usize;
    assert!(n <= squash_bound(&a.state), "{n} > {}", squash_bound(&a.state));
    let sdir = dir.path().join("sessions").join(&session);
    let files = Wal::files(&sdir, &session).unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(files[0].0, 0);

    // Nothing new: no fsync, no rewrite.
    let r: Value = rest.flush(&session, true).await.unwrap();
    assert_eq!((r["synced"].clone(), r["compacted"].clone()), (json!(false), json!(false)));

    a.send(Payload::PlacePoi { position: [1.0, 2.0, 3.0], anchor: None }).await.unwrap();
    a.sync_to(a.state.last_op_id + 1, WAIT).await.unwrap();
    let hw = a.state.last_op_id;
    let after = rest.session_state(&session, false).await.unwrap();
    assert_ne!(before, after);
    drop(a);
    h.shutdown().await.unwrap();

    let (h, rest) = server(dir.path()).await;
    assert_eq!(rest.session_state(&session, false).await.unwrap(), after);
    // The new client continues above the old high-water mark.
    let b = join(&rest, ADMIN, &session, "bob").await;
    assert!(b.state.last_op_id > hw);
    assert_eq!(b.state.participants.keys().collect::<Vec<_>>(), ["bob"]);
    h.shutdown().await.unwrap();
}
