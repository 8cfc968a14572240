//! Deterministic z-buffer rasterizer.
//!
//! Vertices are snapped to a fixed-point grid with [`SUBPIXEL_BITS`] bits of
//! sub-pixel precision and coverage is decided by integer edge functions
//! evaluated at pixel centers, with a top-left style tie rule so shared
//! edges are filled exactly once. Depth is the view-space distance along the
//! optical axis, interpolated as `1/z` (perspective correct). All remaining
//! floating point is plain IEEE arithmetic plus `libm`, so results do not
//! depend on the platform math library.

use std::collections::BTreeSet;
use std::io::Cursor;
use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use crate::scene::{flatten, Mesh, NodeId, RenderStyle, SceneModel, Transform};

pub const SUBPIXEL_BITS: u32 = 8;
const SUB: i64 = 1 << SUBPIXEL_BITS;
const HALF: i64 = SUB / 2;
/// Guard band, in NDC units, beyond which geometry is clipped so fixed-point
/// edge products stay well inside i64.
const GUARD: f64 = 16.0;

pub const NO_ID: u32 = u32::MAX;
pub const DEFAULT_COLOR: [f64; 3] = [0.72, 0.74, 0.78];
pub const TRANSPARENT: [u8; 4] = [0, 0, 0, 0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn unit(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.index()] = 1.0;
        v
    }
}

/// Axis-aligned section plane in world meters. Triangles whose centroid lies
/// strictly on the camera's side of the plane are dropped whole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutPlane {
    pub axis: Axis,
    pub offset: f64,
}

impl CutPlane {
    pub fn discards(&self, centroid: &Vector3<f64>, eye: &Vector3<f64>) -> bool {
        let k = self.axis.index();
        let cam_side = if eye[k] >= self.offset { 1.0 } else { -1.0 };
        (centroid[k] - self.offset) * cam_side > 0.0
    }
}

/// One mesh instance ready to draw.
#[derive(Clone, Debug)]
pub struct DrawItem {
    pub node: NodeId,
    pub world: Transform,
    pub mesh: Arc<Mesh>,
    pub level: usize,
    pub style: RenderStyle,
}

impl DrawItem {
    pub fn triangles(&self) -> &[[u32; 3]] {
        self.mesh.level(self.level)
    }

    pub fn world_positions(&self) -> Vec<Vector3<f64>> {
        self.mesh
            .positions()
            .iter()
            .map(|p| self.world.transform_point(&Point3::from(*p)).coords)
            .collect()
    }
}

/// Draw items for every mesh-bearing node in flatten order, skipping nodes
/// inside a hidden subtree. `whole` is applied on top of the model's own
/// world transforms.
pub fn draw_items(model: &SceneModel, whole: &Transform, hidden: &BTreeSet<NodeId>) -> Vec<DrawItem> {
    let is_hidden = |mut id: NodeId| loop {
        if hidden.contains(&id) {
            return true;
        }
        match model.node(id).and_then(|n| n.parent()) {
            Some(p) => id = p,
            None => return false,
        }
    };
    flatten(model)
        .into_iter()
        .filter(|e| hidden.is_empty() || !is_hidden(e.node))
        .map(|e| {
            let node = model.node(e.node).expect("flattened node exists");
            let mesh = model.mesh(e.mesh).expect("referenced mesh exists").clone();
            let level = (node.lod_level as usize).min(mesh.level_count() - 1);
            DrawItem {
                node: e.node,
                world: whole.compose(&e.world),
                mesh,
                level,
                style: node.style.clone(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterOptions {
    pub width: u32,
    pub height: u32,
    pub background: [u8; 4],
    pub cut_plane: Option<CutPlane>,
    /// Draw everything opaque in the default color (coverage-only render).
    pub ignore_styles: bool,
}

impl RasterOptions {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            background: TRANSPARENT,
            cut_plane: None,
            ignore_styles: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    /// RGBA8, row-major from the top-left pixel.
    pub color: Vec<u8>,
    /// View-space depth per pixel; `INFINITY` where nothing opaque landed.
    pub depth: Vec<f64>,
    /// Index of the draw item owning each pixel's depth, or [`NO_ID`].
    pub ids: Vec<u32>,
    /// Items with at least one fragment that passed the depth test and was
    /// not later overdrawn (opaque) or that blended in (transparent).
    reached: Vec<bool>,
}

impl Frame {
    fn new(w: u32, h: u32, background: [u8; 4], items: usize) -> Self {
        let n = w as usize * h as usize;
        Frame {
            width: w,
            height: h,
            color: background.iter().copied().cycle().take(n * 4).collect(),
            depth: vec![f64::INFINITY; n],
            ids: vec![NO_ID; n],
            reached: vec![false; items],
        }
    }

    /// Indices of draw items that contributed a surviving fragment.
    pub fn visible_items(&self) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = self.reached.iter().enumerate().filter(|(_, r)| **r).map(|(i, _)| i).collect();
        out.extend(self.ids.iter().filter(|i| **i != NO_ID).map(|i| *i as usize));
        out
    }

    pub fn visible_nodes(&self, items: &[DrawItem]) -> BTreeSet<NodeId> {
        self.visible_items().into_iter().map(|i| items[i].node).collect()
    }

    /// True where the pixel's alpha is non-zero.
    pub fn alpha_mask(&self) -> Vec<bool> {
        self.color.chunks(4).map(|p| p[3] > 0).collect()
    }

    pub fn to_png(&self) -> Vec<u8> {
        encode_png(self.width, self.height, &self.color)
    }

    /// Depth as little-endian f32, row-major.
    pub fn depth_f32_le(&self) -> Vec<u8> {
        self.depth.iter().flat_map(|d| (*d as f32).to_le_bytes()).collect()
    }
}

pub fn encode_png(width: u32, height: u32, rgba: &[u8]) -> Vec<u8> {
    let img = image::RgbaImage::from_raw(width, height, rgba.to_vec()).expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

/// Homogeneous clip planes in view space: keep `a·v + d >= 0`.
fn clip_planes(cam: &Camera) -> [(Vector3<f64>, f64); 6] {
    let f = cam.focal();
    let fx = f / cam.aspect;
    [
        (Vector3::new(0.0, 0.0, -1.0), -cam.near),
        (Vector3::new(0.0, 0.0, 1.0), cam.far),
        (Vector3::new(-fx, 0.0, -GUARD), 0.0),
        (Vector3::new(fx, 0.0, -GUARD), 0.0),
        (Vector3::new(0.0, -f, -GUARD), 0.0),
        (Vector3::new(0.0, f, -GUARD), 0.0),
    ]
}

fn clip(poly: &[Vector3<f64>], planes: &[(Vector3<f64>, f64)]) -> Vec<Vector3<f64>> {
    let mut cur = poly.to_vec();
    for (n, d) in planes {
        if cur.is_empty() {
            break;
        }
        let mut next = Vec::with_capacity(cur.len() + 2);
        for i in 0..cur.len() {
            let a = cur[i];
            let b = cur[(i + 1) % cur.len()];
            let da = n.dot(&a) + d;
            let db = n.dot(&b) + d;
            if da >= 0.0 {
                next.push(a);
            }
            if (da >= 0.0) != (db >= 0.0) {
                let t = da / (da - db);
                next.push(a + (b - a) * t);
            }
        }
        cur = next;
    }
    cur
}

/// Screen-space setup shared by every triangle of one render.
pub(crate) struct Projector {
    fx: f64,
    fy: f64,
    cx: i64,
    cy: i64,
    hw: f64,
    hh: f64,
    planes: [(Vector3<f64>, f64); 6],
    pub(crate) width: u32,
    pub(crate) height: u32,
}

impl Projector {
    pub(crate) fn new(cam: &Camera, width: u32, height: u32) -> Self {
        let f = cam.focal();
        Projector {
            fx: f / cam.aspect,
            fy: f,
            cx: width as i64 * HALF,
            cy: height as i64 * HALF,
            hw: width as f64 * HALF as f64,
            hh: height as f64 * HALF as f64,
            planes: clip_planes(cam),
            width,
            height,
        }
    }

    fn snap(&self, v: &Vector3<f64>) -> (i64, i64, f64) {
        let w = -v.z;
        let x = self.cx + ((v.x * self.fx / w) * self.hw).round() as i64;
        let y = self.cy - ((v.y * self.fy / w) * self.hh).round() as i64;
        (x, y, 1.0 / w)
    }

    fn inside(&self, v: &Vector3<f64>) -> bool {
        self.planes.iter().all(|(n, d)| n.dot(v) + d >= 0.0)
    }

    /// Calls `frag(pixel_index, depth)` for every covered pixel center of the
    /// view-space triangle, after clipping.
    pub(crate) fn triangle(&self, tri: [Vector3<f64>; 3], mut frag: impl FnMut(usize, f64)) {
        if tri.iter().all(|v| self.inside(v)) {
            self.raster([self.snap(&tri[0]), self.snap(&tri[1]), self.snap(&tri[2])], &mut frag);
            return;
        }
        let poly = clip(&tri, &self.planes);
        if poly.len() < 3 {
            return;
        }
        let s: Vec<_> = poly.iter().map(|v| self.snap(v)).collect();
        for k in 1..s.len() - 1 {
            self.raster([s[0], s[k], s[k + 1]], &mut frag);
        }
    }

    fn raster(&self, v: [(i64, i64, f64); 3], frag: &mut impl FnMut(usize, f64)) {
        let edge = |a: (i64, i64, f64), b: (i64, i64, f64), px: i64, py: i64| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
        let mut v = v;
        let mut area = edge(v[0], v[1], v[2].0, v[2].1);
        if area == 0 {
            return;
        }
        if area < 0 {
            v.swap(1, 2);
            area = -area;
        }
        let min_x = v.iter().map(|p| p.0).min().unwrap();
        let max_x = v.iter().map(|p| p.0).max().unwrap();
        let min_y = v.iter().map(|p| p.1).min().unwrap();
        let max_y = v.iter().map(|p| p.1).max().unwrap();
        let x0 = (min_x - HALF + SUB - 1).div_euclid(SUB).max(0);
        let x1 = (max_x - HALF).div_euclid(SUB).min(self.width as i64 - 1);
        let y0 = (min_y - HALF + SUB - 1).div_euclid(SUB).max(0);
        let y1 = (max_y - HALF).div_euclid(SUB).min(self.height as i64 - 1);
        if x0 > x1 || y0 > y1 {
            return;
        }
        // Edge k is opposite vertex k.
        let pairs = [(v[1], v[2]), (v[2], v[0]), (v[0], v[1])];
        let bias: [i64; 3] = pairs.map(|(a, b)| {
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            if dy < 0 || (dy == 0 && dx > 0) {
                0
            } else {
                -1
            }
        });
        let step_x: [i64; 3] = pairs.map(|(a, b)| -(b.1 - a.1) * SUB);
        let step_y: [i64; 3] = pairs.map(|(a, b)| (b.0 - a.0) * SUB);
        let (px0, py0) = (x0 * SUB + HALF, y0 * SUB + HALF);
        let mut row: [i64; 3] = [0, 1, 2].map(|k| edge(pairs[k].0, pairs[k].1, px0, py0));
        let inv_area = 1.0 / area as f64;
        let w = self.width as usize;
        for py in y0..=y1 {
            let mut e = row;
            for px in x0..=x1 {
                if e[0] + bias[0] >= 0 && e[1] + bias[1] >= 0 && e[2] + bias[2] >= 0 {
                    let inv = (e[0] as f64 * v[0].2 + e[1] as f64 * v[1].2 + e[2] as f64 * v[2].2) * inv_area;
                    frag(py as usize * w + px as usize, 1.0 / inv);
                }
                for k in 0..3 {
                    e[k] += step_x[k];
                }
            }
            for k in 0..3 {
                row[k] += step_y[k];
            }
        }
    }
}

fn shade(base: [f64; 3], tri: &[Vector3<f64>; 3]) -> [u8; 3] {
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let c = (tri[0] + tri[1] + tri[2]) / 3.0;
    let denom = n.norm() * c.norm();
    let lambert = if denom > 0.0 { (n.dot(&c) / denom).abs() } else { 0.0 };
    let k = 0.2 + 0.8 * lambert;
    base.map(|b| (b * k).clamp(0.0, 1.0) * 255.0).map(|v| v.round() as u8)
}

/// View-space vertices of an item, plus world-space ones when a cut plane
/// needs them.
fn prepare(item: &DrawItem, cam: &Camera, want_world: bool) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let world = item.world_positions();
    let view = world.iter().map(|p| cam.to_view(p)).collect();
    (view, if want_world { world } else { Vec::new() })
}

pub fn rasterize(items: &[DrawItem], camera: &Camera, opts: &RasterOptions) -> Frame {
    let mut frame = Frame::new(opts.width, opts.height, opts.background, items.len());
    let proj = Projector::new(camera, opts.width, opts.height);
    let mut deferred: Vec<(f64, usize, usize, [Vector3<f64>; 3])> = Vec::new();

    for (idx, item) in items.iter().enumerate() {
        let style = if opts.ignore_styles { RenderStyle::default() } else { item.style.clone() };
        let (view, world) = prepare(item, camera, opts.cut_plane.is_some());
        let base = style.color.unwrap_or(DEFAULT_COLOR);
        let transparent = !style.occlusion_only && style.opacity < 1.0;
        for (ti, t) in item.triangles().iter().enumerate() {
            if let Some(cp) = &opts.cut_plane {
                let c = (world[t[0] as usize] + world[t[1] as usize] + world[t[2] as usize]) / 3.0;
                if cp.discards(&c, &camera.eye) {
                    continue;
                }
            }
            let tri = [view[t[0] as usize], view[t[1] as usize], view[t[2] as usize]];
            if transparent {
                let depth = -(tri[0].z + tri[1].z + tri[2].z) / 3.0;
                deferred.push((depth, idx, ti, tri));
                continue;
            }
            let rgba = if style.occlusion_only {
                opts.background
            } else {
                let [r, g, b] = shade(base, &tri);
                [r, g, b, 255]
            };
            let id = idx as u32;
            proj.triangle(tri, |p, d| {
                if d < frame.depth[p] {
                    frame.depth[p] = d;
                    frame.ids[p] = id;
                    frame.color[p * 4..p * 4 + 4].copy_from_slice(&rgba);
                }
            });
        }
    }

    // Back to front; ties resolved by draw order.
    deferred.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, idx, _, tri) in deferred {
        let style = &items[idx].style;
        let alpha = style.opacity.clamp(0.0, 1.0);
        let src = shade(style.color.unwrap_or(DEFAULT_COLOR), &tri);
        let mut hit = false;
        proj.triangle(tri, |p, d| {
            if d < frame.depth[p] {
                hit = true;
                let px = &mut frame.color[p * 4..p * 4 + 4];
                for c in 0..3 {
                    px[c] = (src[c] as f64 * alpha + px[c] as f64 * (1.0 - alpha)).round() as u8;
                }
                px[3] = (255.0 * alpha + px[3] as f64 * (1.0 - alpha)).round() as u8;
            }
        });
        if hit {
            frame.reached[idx] = true;
        }
    }
    frame
}

pub fn rasterize_model(model: &SceneModel, camera: &Camera, opts: &RasterOptions) -> Frame {
    rasterize(&draw_items(model, &Transform::identity(), &BTreeSet::new()), camera, opts)
}
