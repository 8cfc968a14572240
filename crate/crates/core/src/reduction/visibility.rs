//! Exterior visibility culling with a sphere of virtual cameras.
//!
//! Camera `i` sits on the sphere at height `z = 1 - 2·r(i + 1)`, where `r` is
//! the base-2 radical inverse, and azimuth `i × golden angle`. Every prefix of
//! that sequence is well spread, and the layout for `n` cameras is exactly the
//! first `n` positions of the layout for any larger count, so adding cameras
//! can only add visible nodes.

use std::collections::BTreeSet;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::render::{draw_items, rasterize, Camera, DrawItem, RasterOptions};
use crate::scene::{flatten, NodeId, SceneModel, Transform};

/// Per-camera render resolution (square).
pub const VISIBILITY_RESOLUTION: u32 = 256;
pub const MIN_CAMERAS: u32 = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CullError {
    #[error("sphere (center {center:?}, radius {radius}) does not enclose the model bounds")]
    NotEnclosing { center: [f64; 3], radius: f64 },
    #[error("camera count must be at least {MIN_CAMERAS}, got {0}")]
    TooFewCameras(u32),
    #[error("sphere radius must be positive, got {0}")]
    Radius(f64),
}

fn radical_inverse(mut i: u64) -> f64 {
    let mut inv = 0.5;
    let mut out = 0.0;
    while i > 0 {
        if i & 1 == 1 {
            out += inv;
        }
        inv *= 0.5;
        i >>= 1;
    }
    out
}

/// Unit directions of the nested camera layout.
pub fn camera_directions(count: u32) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - libm::sqrt(5.0));
    (0..count as u64)
        .map(|i| {
            let z = 1.0 - 2.0 * radical_inverse(i + 1);
            let r = libm::sqrt((1.0 - z * z).max(0.0));
            let phi = golden * i as f64;
            Vector3::new(r * libm::cos(phi), r * libm::sin(phi), z)
        })
        .collect()
}

/// The cameras used by [`visibility_cull`]: on the sphere, aimed at its
/// center, with a field of view wide enough for the whole model.
pub fn visibility_cameras(model: &SceneModel, center: Vector3<f64>, radius: f64, count: u32) -> Result<Vec<Camera>, CullError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(CullError::Radius(radius));
    }
    if count < MIN_CAMERAS {
        return Err(CullError::TooFewCameras(count));
    }
    // Farthest vertex, not bounds corners: a rotated part's box pokes out
    // past its geometry.
    let reach = flatten(model)
        .iter()
        .flat_map(|e| {
            let mesh = model.mesh(e.mesh).expect("referenced mesh exists");
            mesh.positions().iter().map(move |p| (e.world.transform_point(&Point3::from(*p)).coords - center).norm())
        })
        .fold(0.0, f64::max);
    if reach > radius * (1.0 + 1e-9) {
        return Err(CullError::NotEnclosing {
            center: center.into(),
            radius,
        });
    }
    let ratio = (reach / radius).min(1.0);
    let fov = (2.0 * libm::asin(ratio) * 1.02).clamp(1f64.to_radians(), 170f64.to_radians());
    let near = ((radius - reach) * 0.5).max(radius * 1e-4);
    let far = 2.0 * radius * 1.01;
    Ok(camera_directions(count)
        .into_iter()
        .map(|d| Camera::look_at(center + d * radius, center, Vector3::y(), fov, 1.0, near, far).expect("valid camera"))
        .collect())
}

/// Nodes with at least one fragment surviving the depth test in at least
/// one camera's render. Nodes drawn with opacity below 1 do not occlude.
pub fn visible_from(items: &[DrawItem], cameras: &[Camera]) -> BTreeSet<NodeId> {
    let opts = RasterOptions::new(VISIBILITY_RESOLUTION, VISIBILITY_RESOLUTION);
    cameras
        .par_iter()
        .map(|c| rasterize(items, c, &opts).visible_nodes(items))
        .reduce(BTreeSet::new, |mut a, b| {
            a.extend(b);
            a
        })
}

/// Mesh-bearing nodes visible from the camera sphere.
pub fn visibility_cull(model: &SceneModel, center: Vector3<f64>, radius: f64, camera_count: u32) -> Result<BTreeSet<NodeId>, CullError> {
    let cameras = visibility_cameras(model, center, radius, camera_count)?;
    let items = draw_items(model, &Transform::identity(), &BTreeSet::new());
    Ok(visible_from(&items, &cameras))
}
