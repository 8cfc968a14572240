//! Session protocol: ops, deterministic state folding, log squashing,
//! slides and late-join bundles. The server replays logs and every client
//! mirrors state with these same handlers.

pub mod canonical;
pub mod gen;
pub mod golden;
pub mod op;
pub mod squash;
pub mod state;
pub mod view;

pub use canonical::{canonical_json, canonical_json_full, state_hash};
pub use op::{ClientKind, NudgeAxis, NudgeTarget, Payload, Pose, ScalePreset, ScaleSpec, SessionOp, WIRE_VERSION};
pub use squash::{bundle_from_state, late_join_bundle, squash, squash_bound, squash_state, SQUASH_CLIENT};
pub use state::{apply_op, apply_op_in, create_slide, fold, load_slide, Participant, Poi, SessionState, Slide};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed op: {0}")]
    Malformed(String),
    #[error("unsupported wire version {0}")]
    Version(u64),
    #[error("op {got} arrived after op {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("unknown slide {0}")]
    UnknownSlide(String),
}
pub use view::{session_view, SessionView};
