use std::collections::BTreeSet;

use nalgebra::Vector3;

use super::camera::Camera;
use super::raster::{rasterize, CutPlane, DrawItem, RasterOptions};
use crate::scene::{Aabb, NodeId};

/// World bounds of the geometry an item actually draws.
pub fn item_bounds(item: &DrawItem) -> Aabb {
    let world = item.world_positions();
    let mut b = Aabb::EMPTY;
    for t in item.triangles() {
        for &v in t {
            b.include(&world[v as usize]);
        }
    }
    b
}

/// True when the box lies entirely outside one of the frustum planes.
pub fn aabb_outside_frustum(b: &Aabb, camera: &Camera) -> bool {
    if b.is_empty() {
        return true;
    }
    let c = b.center();
    let h = b.extent() * 0.5;
    camera.frustum_planes().iter().any(|(n, d)| {
        let r = n.x.abs() * h.x + n.y.abs() * h.y + n.z.abs() * h.z;
        n.dot(&c) + d - r > 0.0
    })
}

/// Nodes whose drawn bounds intersect the view frustum.
pub fn frustum_cull(items: &[DrawItem], camera: &Camera) -> BTreeSet<NodeId> {
    items
        .iter()
        .filter(|it| !aabb_outside_frustum(&item_bounds(it), camera))
        .map(|it| it.node)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionOptions {
    pub width: u32,
    pub height: u32,
    /// How many of the largest on-screen opaque items are rasterized as
    /// occluders.
    pub max_occluders: usize,
    pub cut_plane: Option<CutPlane>,
}

impl OcclusionOptions {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            max_occluders: 32,
            cut_plane: None,
        }
    }
}

/// Screen footprint of a box: pixel-space rectangle and nearest view depth,
/// or `None` when the box reaches behind the near plane.
struct Footprint {
    min: (f64, f64),
    max: (f64, f64),
    near_depth: f64,
}

fn footprint(b: &Aabb, camera: &Camera, w: u32, h: u32) -> Option<Footprint> {
    let f = camera.focal();
    let fx = f / camera.aspect;
    let (hw, hh) = (w as f64 * 0.5, h as f64 * 0.5);
    let mut fp = Footprint {
        min: (f64::INFINITY, f64::INFINITY),
        max: (f64::NEG_INFINITY, f64::NEG_INFINITY),
        near_depth: f64::INFINITY,
    };
    for c in b.corners() {
        let v = camera.to_view(&c);
        let depth = -v.z;
        if depth < camera.near {
            return None;
        }
        let x = hw + v.x * fx / depth * hw;
        let y = hh - v.y * f / depth * hh;
        fp.min = (fp.min.0.min(x), fp.min.1.min(y));
        fp.max = (fp.max.0.max(x), fp.max.1.max(y));
        fp.near_depth = fp.near_depth.min(depth);
    }
    Some(fp)
}

/// Two-pass occlusion culling. The largest opaque items by screen-space box
/// area are rasterized into a depth buffer; every other item is kept unless
/// all pixels under its (one-pixel dilated) screen box hold depth strictly
/// nearer than the box's nearest point. Occluders themselves are kept when
/// they own a pixel of that buffer.
pub fn occlusion_cull(items: &[DrawItem], camera: &Camera, opts: &OcclusionOptions) -> BTreeSet<NodeId> {
    let (w, h) = (opts.width.max(16), opts.height.max(16));
    let bounds: Vec<Aabb> = items.iter().map(item_bounds).collect();
    let prints: Vec<Option<Footprint>> = bounds.iter().map(|b| if b.is_empty() { None } else { footprint(b, camera, w, h) }).collect();

    let area = |i: usize| match &prints[i] {
        None if !bounds[i].is_empty() => f64::INFINITY,
        None => 0.0,
        Some(fp) => {
            let x0 = fp.min.0.clamp(0.0, w as f64);
            let x1 = fp.max.0.clamp(0.0, w as f64);
            let y0 = fp.min.1.clamp(0.0, h as f64);
            let y1 = fp.max.1.clamp(0.0, h as f64);
            (x1 - x0) * (y1 - y0)
        }
    };
    let mut order: Vec<usize> = (0..items.len())
        .filter(|&i| items[i].style.occlusion_only || items[i].style.opacity >= 1.0)
        .filter(|&i| area(i) > 0.0)
        .collect();
    order.sort_by(|a, b| area(*b).total_cmp(&area(*a)).then(a.cmp(b)));
    order.truncate(opts.max_occluders);
    let is_occluder: BTreeSet<usize> = order.iter().copied().collect();

    let occluders: Vec<DrawItem> = order.iter().map(|i| items[*i].clone()).collect();
    let mut ropts = RasterOptions::new(w, h);
    ropts.cut_plane = opts.cut_plane;
    let frame = rasterize(&occluders, camera, &ropts);

    let mut out: BTreeSet<NodeId> = frame.visible_items().into_iter().map(|k| occluders[k].node).collect();
    for (i, item) in items.iter().enumerate() {
        if is_occluder.contains(&i) || bounds[i].is_empty() {
            continue;
        }
        let Some(fp) = &prints[i] else {
            out.insert(item.node);
            continue;
        };
        let x0 = (fp.min.0.floor() as i64 - 1).max(0);
        let x1 = (fp.max.0.ceil() as i64 + 1).min(w as i64 - 1);
        let y0 = (fp.min.1.floor() as i64 - 1).max(0);
        let y1 = (fp.max.1.ceil() as i64 + 1).min(h as i64 - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let limit = fp.near_depth * (1.0 - 1e-9);
        let hidden = (y0..=y1).all(|y| (x0..=x1).all(|x| frame.depth[(y * w as i64 + x) as usize] < limit));
        if !hidden {
            out.insert(item.node);
        }
    }
    out
}

pub const LOD_NEAR_PX: f64 = 200.0;
pub const LOD_FAR_PX: f64 = 20.0;

/// Switch diameters (pixels) between consecutive levels, largest first.
/// Level 0 is drawn above [`LOD_NEAR_PX`], the last level below
/// [`LOD_FAR_PX`], with geometric spacing in between. A two-level chain
/// switches at [`LOD_NEAR_PX`].
pub fn lod_thresholds(level_count: usize) -> Vec<f64> {
    match level_count {
        0 | 1 => Vec::new(),
        2 => vec![LOD_NEAR_PX],
        n => (0..n - 1)
            .map(|k| LOD_NEAR_PX * libm::pow(LOD_FAR_PX / LOD_NEAR_PX, k as f64 / (n - 2) as f64))
            .collect(),
    }
}

/// Projected diameter, in pixels, of the bounding sphere of `bounds`.
pub fn projected_diameter_px(bounds: &Aabb, camera: &Camera, viewport_height: u32) -> f64 {
    if bounds.is_empty() {
        return 0.0;
    }
    let r = bounds.diagonal() * 0.5;
    let dist = (bounds.center() - camera.eye).norm();
    if dist <= r {
        return f64::INFINITY;
    }
    2.0 * r * camera.focal_px(viewport_height) / dist
}

/// Detail level for an instance with `level_count` levels.
pub fn select_lod(bounds: &Aabb, level_count: usize, camera: &Camera, viewport_height: u32) -> usize {
    let d = projected_diameter_px(bounds, camera, viewport_height);
    lod_thresholds(level_count).iter().filter(|b| d < **b).count()
}

/// Per-vertex oracle used by tests and diagnostics: does any vertex of the
/// item project inside the viewport between the near and far planes?
pub fn any_vertex_in_view(item: &DrawItem, camera: &Camera) -> bool {
    let f = camera.focal();
    let fx = f / camera.aspect;
    item.world_positions().iter().any(|p| {
        let v: Vector3<f64> = camera.to_view(p);
        let d = -v.z;
        d >= camera.near && d <= camera.far && (v.x * fx / d).abs() <= 1.0 && (v.y * f / d).abs() <= 1.0
    })
}
