//! Log compaction and late-join bundles.
//!
//! A squashed log is a function of the folded state alone, emitted in a
//! fixed order:
//!
//! 1. `set_active_model` (when a model was chosen)
//! 2. `transform_whole` (when not identity)
//! 3. `set_cut_plane` (when enabled)
//! 4. `place_poi`, attributed to the original placer
//! 5. per touched node, ascending: `transform_node`, then `set_node_visibility`
//! 6. `define_slide` per slide, ascending id
//!
//! so at most `4 + 2·nodes + slides` ops come out, and squashing a squashed
//! log reproduces it exactly. Participants and poses are dropped.

use orbitcad_core::Transform;

use crate::op::{ClientKind, Payload, SessionOp};
use crate::state::{fold, SessionState};
use crate::ProtocolError;

/// Client id stamped on ops synthesized by squashing.
pub const SQUASH_CLIENT: &str = "squash";

/// Upper bound on the squash length of a state.
pub fn squash_bound(state: &SessionState) -> usize {
    3 + 2 * state.touched_nodes().len() + state.slides.len() + 1
}

fn push(out: &mut Vec<SessionOp>, cid: &str, t: u64, payload: Payload) {
    let id = out.len() as u64 + 1;
    out.push(SessionOp::new(id, cid, t, payload));
}

fn model_ops(state: &SessionState, t: u64, out: &mut Vec<SessionOp>) {
    if let Some(model_id) = &state.active_model {
        push(out, SQUASH_CLIENT, t, Payload::SetActiveModel { model_id: model_id.clone() });
    }
    if state.whole_transform != Transform::identity() {
        push(
            out,
            SQUASH_CLIENT,
            t,
            Payload::TransformWhole {
                transform: state.whole_transform,
            },
        );
    }
    if let Some(cp) = state.cut_plane {
        push(
            out,
            SQUASH_CLIENT,
            t,
            Payload::SetCutPlane {
                axis: cp.axis,
                offset: cp.offset,
                enabled: true,
            },
        );
    }
    if let Some(poi) = &state.poi {
        push(
            out,
            &poi.placer,
            t,
            Payload::PlacePoi {
                position: poi.position,
                anchor: poi.anchor,
            },
        );
    }
    for node in state.touched_nodes() {
        if let Some(transform) = state.node_transforms.get(&node) {
            push(out, SQUASH_CLIENT, t, Payload::TransformNode { node, transform: *transform });
        }
        if let Some(visible) = state.node_visibility.get(&node) {
            push(out, SQUASH_CLIENT, t, Payload::SetNodeVisibility { node, visible: *visible });
        }
    }
}

/// Ops rebuilding the model-side state only (no slides, no participants).
/// This is what a slide stores.
pub fn squash_model(state: &SessionState, wall_time: u64) -> Vec<SessionOp> {
    let mut out = Vec::new();
    model_ops(state, wall_time, &mut out);
    out
}

/// Ops rebuilding everything but participants, numbered from 1.
pub fn squash_state(state: &SessionState, wall_time: u64) -> Vec<SessionOp> {
    let mut out = Vec::new();
    model_ops(state, wall_time, &mut out);
    for slide in state.slides.values() {
        push(
            &mut out,
            SQUASH_CLIENT,
            wall_time,
            Payload::DefineSlide {
                slide_id: slide.slide_id.clone(),
                name: slide.name.clone(),
                ops: slide.ops.clone(),
            },
        );
    }
    out
}

/// Time of the last sequenced op, which squashed ops inherit.
pub fn last_wall_time(log: &[SessionOp]) -> u64 {
    log.iter().rev().find(|o| !o.payload.is_ephemeral()).map_or(0, |o| o.wall_time)
}

/// Compacts an ordered log. Errors if the log is not op-id ordered.
pub fn squash(log: &[SessionOp]) -> Result<Vec<SessionOp>, ProtocolError> {
    let state = fold(log)?;
    Ok(squash_state(&state, last_wall_time(log)))
}

/// What a late joiner receives: the squashed state followed by a `join`
/// and, when known, a pose for each live participant.
pub fn late_join_bundle(log: &[SessionOp]) -> Result<Vec<SessionOp>, ProtocolError> {
    let state = fold(log)?;
    Ok(bundle_from_state(&state, last_wall_time(log)))
}

/// [`late_join_bundle`] for an already folded state. Poses carry the id of
/// the preceding `join`, since ephemeral ops are not sequenced.
pub fn bundle_from_state(state: &SessionState, wall_time: u64) -> Vec<SessionOp> {
    let mut out = squash_state(state, wall_time);
    for (cid, p) in &state.participants {
        push(
            &mut out,
            cid,
            wall_time,
            Payload::Join {
                name: p.name.clone(),
                kind: p.kind,
            },
        );
        if let Some(pose) = p.pose {
            let id = out.len() as u64;
            out.push(SessionOp::new(id, cid.clone(), wall_time, Payload::ParticipantPose { pose }));
        }
    }
    out
}

/// Join op for a new participant, for tests and simulations.
pub fn join(op_id: u64, cid: &str, name: &str, kind: ClientKind) -> SessionOp {
    SessionOp::new(
        op_id,
        cid,
        0,
        Payload::Join {
            name: name.to_string(),
            kind,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::canonical_json;
    use crate::op::Pose;
    use nalgebra::Vector3;
    use orbitcad_core::NodeId;

    #[test]
    fn empty_log_squashes_to_empty() {
        assert!(squash(&[]).unwrap().is_empty());
    }

    #[test]
    fn repeated_transform_keeps_the_last() {
        let t1 = Transform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let t2 = Transform::from_translation(Vector3::new(2.0, 0.0, 0.0));
        let log = vec![
            SessionOp::new(1, "a", 10, Payload::TransformNode { node: NodeId(7), transform: t1 }),
            SessionOp::new(2, "b", 20, Payload::TransformNode { node: NodeId(7), transform: t2 }),
        ];
        let out = squash(&log).unwrap();
        assert_eq!(out, vec![SessionOp::new(1, SQUASH_CLIENT, 20, Payload::TransformNode { node: NodeId(7), transform: t2 })]);
    }

    #[test]
    fn unordered_log_is_an_error() {
        let log = vec![
            SessionOp::new(2, "a", 0, Payload::ClearPoi {}),
            SessionOp::new(1, "a", 0, Payload::ClearPoi {}),
        ];
        assert!(matches!(squash(&log), Err(ProtocolError::OutOfOrder { .. })));
    }

    #[test]
    fn fresh_join_bundle_holds_only_participants() {
        let pose = Pose {
            position: [0.0, 1.5, 2.0],
            orientation: [0.0, 0.0, 0.0, 1.0],
        };
        let log = vec![
            join(1, "h1", "Headset", ClientKind::Headset),
            SessionOp::new(1, "h1", 5, Payload::ParticipantPose { pose }),
        ];
        let bundle = late_join_bundle(&log).unwrap();
        assert_eq!(bundle.len(), 2);
        assert!(bundle.iter().all(|o| matches!(o.payload, Payload::Join { .. } | Payload::ParticipantPose { .. })));
        let a = fold(&log).unwrap();
        let b = fold(&bundle).unwrap();
        assert_eq!(a.participants, b.participants);
        assert_eq!(canonical_json(&a), canonical_json(&b));
    }
}
