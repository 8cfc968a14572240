//! Marker-based alignment: the printed four-tag sheet, planar PnP, and the
//! model transform that puts a virtual marker onto the physical one.

pub mod layout;
pub mod pnp;
pub mod pose;
pub mod sim;
pub mod svg;

pub use layout::{build_tag_layout, LayoutPoint, Role, TagLayout};
pub use pnp::{correspondences, occlusion_robust_solve, reprojection_rms, solve_pnp, Correspondence, Detection, Intrinsics, PnpSolution};
pub use pose::{marker_in_tracking, marker_to_session_transform, Pose};
pub use svg::layout_svg;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("layout: {0}")]
    Layout(String),
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("marker points must lie in the z = 0 plane")]
    NonPlanar,
    #[error("refinement did not converge (rms {rms} px)")]
    Diverged { rms: f64 },
    #[error("solution puts marker points behind the camera")]
    BehindCamera,
    #[error("no layout point for tag {tag} {role:?}")]
    UnknownPoint { tag: u8, role: Role },
}
