//! Session operations and their JSON wire encoding.
//!
//! Every frame is one object:
//!
//! ```json
//! {"v": 1, "op": 42, "cid": "alice", "t": 1700000000000,
//!  "type": "transform_node", "body": {"node": 7, "transform": {"t": [0,0,0], "r": [0,0,0,1], "s": [1,1,1]}}}
//! ```
//!
//! `op` is the server-assigned sequence number (0 on frames a client sends
//! before sequencing), `t` wall-clock milliseconds. Body shapes per `type`
//! are the variants of [`Payload`].

use std::fmt;

use orbitcad_core::render::Axis;
use orbitcad_core::{NodeId, Transform};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::ProtocolError;

pub const WIRE_VERSION: u32 = 1;

pub type ClientId = String;
pub type SlideId = String;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    Headset,
    Web,
}

/// Head pose of a participant: position in session meters and orientation
/// quaternion `[x, y, z, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

/// Movement constraint for [`Payload::NudgeTransform`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NudgeAxis {
    X,
    Y,
    Z,
    Free,
}

impl NudgeAxis {
    /// The part of `delta` the constraint lets through.
    pub fn project(self, delta: [f64; 3]) -> [f64; 3] {
        match self {
            NudgeAxis::X => [delta[0], 0.0, 0.0],
            NudgeAxis::Y => [0.0, delta[1], 0.0],
            NudgeAxis::Z => [0.0, 0.0, delta[2]],
            NudgeAxis::Free => delta,
        }
    }
}

/// What a nudge moves: the whole model or one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NudgeTarget {
    Whole,
    Node(NodeId),
}

impl Serialize for NudgeTarget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NudgeTarget::Whole => s.serialize_str("whole"),
            NudgeTarget::Node(n) => n.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for NudgeTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Node(NodeId),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "whole" => Ok(NudgeTarget::Whole),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("nudge target must be \"whole\" or a node id, got \"{w}\""))),
            Raw::Node(n) => Ok(NudgeTarget::Node(n)),
        }
    }
}

/// Named scale presets for [`Payload::SetScale`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePreset {
    /// 1:1, real size.
    Full,
    /// 1:10, fits a conference table.
    Tabletop,
    /// 1:100, fits in a hand.
    Handheld,
}

impl ScalePreset {
    pub fn factor(self) -> f64 {
        match self {
            ScalePreset::Full => 1.0,
            ScalePreset::Tabletop => 0.1,
            ScalePreset::Handheld => 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSpec {
    Preset { preset: ScalePreset },
    Factor { factor: f64 },
}

impl ScaleSpec {
    pub fn factor(&self) -> f64 {
        match self {
            ScaleSpec::Preset { preset } => preset.factor(),
            ScaleSpec::Factor { factor } => *factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    /// Switches the model for everyone; per-node state and the POI reset.
    SetActiveModel { model_id: String },
    TransformWhole { transform: Transform },
    /// Replaces the session offset of a node (applied after the node's
    /// authored local transform).
    TransformNode { node: NodeId, transform: Transform },
    /// Adds a translation, filtered by the axis constraint, to the current
    /// offset of the target.
    NudgeTransform { target: NudgeTarget, axis: NudgeAxis, delta: [f64; 3] },
    /// Sets the uniform scale of the whole-model transform.
    SetScale(ScaleSpec),
    SetNodeVisibility { node: NodeId, visible: bool },
    SetCutPlane { axis: Axis, offset: f64, enabled: bool },
    PlacePoi {
        position: [f64; 3],
        #[serde(default)]
        anchor: Option<NodeId>,
    },
    ClearPoi {},
    /// Snapshots the current model state as slide `s{op}`.
    CreateSlide { name: String },
    LoadSlide { slide_id: SlideId },
    DeleteSlide { slide_id: SlideId },
    /// A slide with explicit contents; emitted by squashing so a compacted
    /// log restores slides without replaying their history.
    DefineSlide { slide_id: SlideId, name: String, ops: Vec<SessionOp> },
    /// Ephemeral: broadcast but never persisted.
    ParticipantPose { pose: Pose },
    Join { name: String, kind: ClientKind },
    Leave {},
}

impl Payload {
    pub fn type_name(&self) -> &'static str {
        match self {
            Payload::SetActiveModel { .. } => "set_active_model",
            Payload::TransformWhole { .. } => "transform_whole",
            Payload::TransformNode { .. } => "transform_node",
            Payload::NudgeTransform { .. } => "nudge_transform",
            Payload::SetScale(_) => "set_scale",
            Payload::SetNodeVisibility { .. } => "set_node_visibility",
            Payload::SetCutPlane { .. } => "set_cut_plane",
            Payload::PlacePoi { .. } => "place_poi",
            Payload::ClearPoi {} => "clear_poi",
            Payload::CreateSlide { .. } => "create_slide",
            Payload::LoadSlide { .. } => "load_slide",
            Payload::DeleteSlide { .. } => "delete_slide",
            Payload::DefineSlide { .. } => "define_slide",
            Payload::ParticipantPose { .. } => "participant_pose",
            Payload::Join { .. } => "join",
            Payload::Leave {} => "leave",
        }
    }

    pub fn is_ephemeral(&self) -> bool {
        matches!(self, Payload::ParticipantPose { .. })
    }

    /// Node the op refers to, if any.
    pub fn node(&self) -> Option<NodeId> {
        match self {
            Payload::TransformNode { node, .. } | Payload::SetNodeVisibility { node, .. } => Some(*node),
            Payload::NudgeTransform {
                target: NudgeTarget::Node(n), ..
            } => Some(*n),
            Payload::PlacePoi { anchor, .. } => *anchor,
            _ => None,
        }
    }

    /// Value checks that need no state.
    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let transform_ok = |t: &Transform| {
            finite(t.translation.as_slice())
                && finite(t.rotation.coords.as_slice())
                && t.scale.iter().all(|s| s.is_finite() && *s > 0.0)
        };
        match self {
            Payload::TransformWhole { transform } | Payload::TransformNode { transform, .. } if !transform_ok(transform) => {
                Err("transform must be finite with positive scale".into())
            }
            Payload::NudgeTransform { delta, .. } if !finite(delta) => Err("nudge delta must be finite".into()),
            Payload::SetScale(s) if !(s.factor().is_finite() && s.factor() > 0.0) => Err(format!("scale factor must be positive, got {}", s.factor())),
            Payload::SetCutPlane { offset, .. } if !offset.is_finite() => Err("cut plane offset must be finite".into()),
            Payload::PlacePoi { position, .. } if !finite(position) => Err("POI position must be finite".into()),
            Payload::ParticipantPose { pose } if !finite(&pose.position) || !finite(&pose.orientation) => Err("pose must be finite".into()),
            Payload::DefineSlide { ops, .. } => ops.iter().try_for_each(|o| o.payload.validate()),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionOp {
    pub op_id: u64,
    pub client_id: ClientId,
    /// Wall-clock milliseconds.
    pub wall_time: u64,
    pub payload: Payload,
}

impl SessionOp {
    pub fn new(op_id: u64, client_id: impl Into<ClientId>, wall_time: u64, payload: Payload) -> Self {
        SessionOp {
            op_id,
            client_id: client_id.into(),
            wall_time,
            payload,
        }
    }

    pub fn to_value(&self) -> Value {
        let mut v = serde_json::to_value(&self.payload).expect("payload serializes");
        let obj = v.as_object_mut().expect("adjacently tagged payload is an object");
        obj.entry("body").or_insert_with(|| Value::Object(Default::default()));
        obj.insert("v".into(), WIRE_VERSION.into());
        obj.insert("op".into(), self.op_id.into());
        obj.insert("cid".into(), self.client_id.clone().into());
        obj.insert("t".into(), self.wall_time.into());
        v
    }

    pub fn to_wire(&self) -> String {
        self.to_value().to_string()
    }

    pub fn from_value(mut v: Value) -> Result<Self, ProtocolError> {
        let malformed = |m: String| ProtocolError::Malformed(m);
        let obj = v.as_object_mut().ok_or_else(|| malformed("frame must be a JSON object".into()))?;
        let version = obj.remove("v").and_then(|v| v.as_u64()).ok_or_else(|| malformed("missing version field \"v\"".into()))?;
        if version != WIRE_VERSION as u64 {
            return Err(ProtocolError::Version(version));
        }
        let op_id = match obj.remove("op") {
            None | Some(Value::Null) => 0,
            Some(x) => x.as_u64().ok_or_else(|| malformed("\"op\" must be a non-negative integer".into()))?,
        };
        let client_id = match obj.remove("cid") {
            Some(Value::String(s)) => s,
            None | Some(Value::Null) => String::new(),
            Some(_) => return Err(malformed("\"cid\" must be a string".into())),
        };
        let wall_time = match obj.remove("t") {
            None | Some(Value::Null) => 0,
            Some(x) => x.as_u64().ok_or_else(|| malformed("\"t\" must be a non-negative integer".into()))?,
        };
        let payload: Payload = serde_json::from_value(v).map_err(|e| malformed(e.to_string()))?;
        payload.validate().map_err(malformed)?;
        Ok(SessionOp {
            op_id,
            client_id,
            wall_time,
            payload,
        })
    }

    pub fn from_wire(text: &str) -> Result<Self, ProtocolError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        Self::from_value(v)
    }
}

impl Serialize for SessionOp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SessionOp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        SessionOp::from_value(Value::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for SessionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {} by {}", self.op_id, self.payload.type_name(), self.client_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn op(p: Payload) -> SessionOp {
        SessionOp::new(3, "alice", 1234, p)
    }

    #[test]
    fn wire_round_trip() {
        let payloads = vec![
            Payload::SetActiveModel { model_id: "m-1".into() },
            Payload::TransformNode {
                node: NodeId(4),
                transform: Transform::from_translation(Vector3::new(0.1, 0.2, 0.3)),
            },
            Payload::NudgeTransform {
                target: NudgeTarget::Whole,
                axis: NudgeAxis::Y,
                delta: [0.0, 0.25, 0.0],
            },
            Payload::NudgeTransform {
                target: NudgeTarget::Node(NodeId(9)),
                axis: NudgeAxis::Free,
                delta: [1.0, 2.0, 3.0],
            },
            Payload::SetScale(ScaleSpec::Preset { preset: ScalePreset::Tabletop }),
            Payload::SetScale(ScaleSpec::Factor { factor: 2.5 }),
            Payload::SetCutPlane {
                axis: Axis::Z,
                offset: -0.5,
                enabled: true,
            },
            Payload::PlacePoi {
                position: [1.0, 2.0, 3.0],
                anchor: None,
            },
            Payload::ClearPoi {},
            Payload::Leave {},
            Payload::Join {
                name: "Bea".into(),
                kind: ClientKind::Headset,
            },
            Payload::ParticipantPose {
                pose: Pose {
                    position: [0.0, 1.6, 0.0],
                    orientation: [0.0, 0.0, 0.0, 1.0],
                },
            },
        ];
        for p in payloads {
            let o = op(p);
            let back = SessionOp::from_wire(&o.to_wire()).unwrap();
            assert_eq!(back, o);
        }
    }

    #[test]
    fn wire_shape() {
        let v = op(Payload::ClearPoi {}).to_value();
        assert_eq!(v["type"], "clear_poi");
        assert_eq!(v["body"], serde_json::json!({}));
        assert_eq!(v["v"], 1);
        assert_eq!(v["op"], 3);
        assert_eq!(v["cid"], "alice");
        let v = op(Payload::SetScale(ScaleSpec::Factor { factor: 2.0 })).to_value();
        assert_eq!(v["body"], serde_json::json!({"factor": 2.0}));
    }

    #[test]
    fn bad_frames_are_rejected() {
        assert!(matches!(SessionOp::from_wire("[]"), Err(ProtocolError::Malformed(_))));
        assert!(matches!(SessionOp::from_wire(r#"{"v":2,"type":"leave","body":{}}"#), Err(ProtocolError::Version(2))));
        assert!(matches!(SessionOp::from_wire(r#"{"v":1,"type":"explode","body":{}}"#), Err(ProtocolError::Malformed(_))));
        assert!(matches!(SessionOp::from_wire(r#"{"v":1,"type":"set_scale","body":{"factor":-1}}"#), Err(ProtocolError::Malformed(_))));
        // Client frames may omit the sequence number and time.
        let o = SessionOp::from_wire(r#"{"v":1,"cid":"x","type":"leave","body":{}}"#).unwrap();
        assert_eq!((o.op_id, o.wall_time), (0, 0));
    }

    #[test]
    fn axis_constraint_filters_delta() {
        assert_eq!(NudgeAxis::X.project([1.0, 2.0, 3.0]), [1.0, 0.0, 0.0]);
        assert_eq!(NudgeAxis::Free.project([1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
    }
}
