use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use orbitcad_core::render::CutPlane;
use orbitcad_core::{NodeId, Transform};
use tracing::warn;

use crate::op::{ClientId, ClientKind, NudgeTarget, Payload, Pose, SessionOp, SlideId};
use crate::squash::squash_model;
use crate::ProtocolError;

#[derive(Clone, Debug, PartialEq)]
pub struct Poi {
    pub position: [f64; 3],
    pub placer: ClientId,
    pub anchor: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slide {
    pub slide_id: SlideId,
    pub name: String,
    /// Squashed ops that rebuild the model state at creation time.
    pub ops: Vec<SessionOp>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Participant {
    pub name: String,
    pub kind: ClientKind,
    pub pose: Option<Pose>,
}

/// Materialized session: the fold of every op applied so far.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SessionState {
    pub active_model: Option<String>,
    pub whole_transform: Transform,
    pub node_transforms: BTreeMap<NodeId, Transform>,
    pub node_visibility: BTreeMap<NodeId, bool>,
    pub cut_plane: Option<CutPlane>,
    pub poi: Option<Poi>,
    pub slides: BTreeMap<SlideId, Slide>,
    pub participants: BTreeMap<ClientId, Participant>,
    /// Highest sequenced op applied. Not part of the canonical state.
    pub last_op_id: u64,
}

impl SessionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Nodes with any per-node entry.
    pub fn touched_nodes(&self) -> BTreeSet<NodeId> {
        self.node_transforms.keys().chain(self.node_visibility.keys()).copied().collect()
    }

    /// Whether every model-side dimension is at its initial value.
    pub fn model_is_empty(&self) -> bool {
        self.active_model.is_none()
            && self.whole_transform == Transform::identity()
            && self.node_transforms.is_empty()
            && self.node_visibility.is_empty()
            && self.cut_plane.is_none()
            && self.poi.is_none()
    }

    /// Raises the op watermark without applying anything. Used after
    /// replaying a compacted log, whose renumbered ids can sit below the
    /// ids the live stream continues from.
    pub fn advance_to(&mut self, op_id: u64) {
        self.last_op_id = self.last_op_id.max(op_id);
    }

    fn take_model_from(&mut self, other: SessionState) {
        self.active_model = other.active_model;
        self.whole_transform = other.whole_transform;
        self.node_transforms = other.node_transforms;
        self.node_visibility = other.node_visibility;
        self.cut_plane = other.cut_plane;
        self.poi = other.poi;
    }

    pub fn is_hidden(&self, node: NodeId) -> bool {
        self.node_visibility.get(&node) == Some(&false)
    }
}

/// Applies `op` with no node catalog: every node id is accepted.
pub fn apply_op(state: &mut SessionState, op: &SessionOp) -> Result<(), ProtocolError> {
    apply_op_in(state, op, None)
}

/// Applies `op`. When `known` is given, ops naming a node outside it are
/// consumed (the watermark advances) but change nothing.
///
/// Ephemeral ops are not sequenced and skip the ordering check.
pub fn apply_op_in(state: &mut SessionState, op: &SessionOp, known: Option<&BTreeSet<NodeId>>) -> Result<(), ProtocolError> {
    if !op.payload.is_ephemeral() {
        if op.op_id <= state.last_op_id {
            return Err(ProtocolError::OutOfOrder {
                last: state.last_op_id,
                got: op.op_id,
            });
        }
        state.last_op_id = op.op_id;
    }
    if let (Some(node), Some(known)) = (op.payload.node(), known) {
        if !known.contains(&node) {
            warn!(op = op.op_id, %node, "ignoring op for unknown node");
            return Ok(());
        }
    }
    match &op.payload {
        Payload::SetActiveModel { model_id } => {
            state.active_model = Some(model_id.clone());
            state.node_transforms.clear();
            state.node_visibility.clear();
            state.poi = None;
        }
        Payload::TransformWhole { transform } => state.whole_transform = *transform,
        Payload::TransformNode { node, transform } => {
            state.node_transforms.insert(*node, *transform);
        }
        Payload::NudgeTransform { target, axis, delta } => {
            let d = Vector3::from(axis.project(*delta));
            match target {
                NudgeTarget::Whole => state.whole_transform.translation += d,
                NudgeTarget::Node(n) => state.node_transforms.entry(*n).or_default().translation += d,
            }
        }
        Payload::SetScale(spec) => state.whole_transform.scale = Vector3::repeat(spec.factor()),
        Payload::SetNodeVisibility { node, visible } => {
            state.node_visibility.insert(*node, *visible);
        }
        Payload::SetCutPlane { axis, offset, enabled } => {
            state.cut_plane = enabled.then_some(CutPlane { axis: *axis, offset: *offset });
        }
        Payload::PlacePoi { position, anchor } => {
            state.poi = Some(Poi {
                position: *position,
                placer: op.client_id.clone(),
                anchor: *anchor,
            })
        }
        Payload::ClearPoi {} => state.poi = None,
        Payload::CreateSlide { name } => {
            let slide_id = format!("s{}", op.op_id);
            let ops = squash_model(state, op.wall_time);
            state.slides.insert(slide_id.clone(), Slide { slide_id, name: name.clone(), ops });
        }
        Payload::DefineSlide { slide_id, name, ops } => {
            state.slides.insert(
                slide_id.clone(),
                Slide {
                    slide_id: slide_id.clone(),
                    name: name.clone(),
                    ops: ops.clone(),
                },
            );
        }
        Payload::LoadSlide { slide_id } => {
            if let Err(e) = load_slide(state, slide_id) {
                warn!(op = op.op_id, "{e}");
            }
        }
        Payload::DeleteSlide { slide_id } => {
            if state.slides.remove(slide_id).is_none() {
                warn!(op = op.op_id, slide = %slide_id, "delete of unknown slide");
            }
        }
        Payload::ParticipantPose { pose } => match state.participants.get_mut(&op.client_id) {
            Some(p) => p.pose = Some(*pose),
            None => warn!(client = %op.client_id, "pose from a client that has not joined"),
        },
        Payload::Join { name, kind } => {
            state.participants.insert(
                op.client_id.clone(),
                Participant {
                    name: name.clone(),
                    kind: *kind,
                    pose: None,
                },
            );
        }
        Payload::Leave {} => {
            state.participants.remove(&op.client_id);
        }
    }
    Ok(())
}

/// Folds `ops` into a fresh state.
pub fn fold<'a>(ops: impl IntoIterator<Item = &'a SessionOp>) -> Result<SessionState, ProtocolError> {
    let mut s = SessionState::new();
    for op in ops {
        apply_op(&mut s, op)?;
    }
    Ok(s)
}

/// The model state a slide captures: its ops folded into a fresh state.
pub fn slide_state(slide: &Slide) -> Result<SessionState, ProtocolError> {
    fold(&slide.ops)
}

/// Stores a slide of the current model state under `slide_id`.
pub fn create_slide(state: &mut SessionState, slide_id: impl Into<SlideId>, name: impl Into<String>, wall_time: u64) {
    let slide_id = slide_id.into();
    let ops = squash_model(state, wall_time);
    state.slides.insert(
        slide_id.clone(),
        Slide {
            slide_id,
            name: name.into(),
            ops,
        },
    );
}

/// Replaces the model-side dimensions with the slide's. Participants and
/// the slide list are untouched.
pub fn load_slide(state: &mut SessionState, slide_id: &str) -> Result<(), ProtocolError> {
    let slide = state.slides.get(slide_id).ok_or_else(|| ProtocolError::UnknownSlide(slide_id.to_string()))?;
    let snapshot = slide_state(slide)?;
    state.take_model_from(snapshot);
    Ok(())
}
