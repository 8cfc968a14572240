//! Headless rendering: cameras, the software rasterizer, culling, LOD
//! selection, budgeted draw planning and sprite-sheet thumbnails.

mod camera;
mod cull;
mod drawplan;
mod raster;
mod sprite;

pub use camera::{sin_cos_deg, Camera, CameraError};
pub use cull::{
    aabb_outside_frustum, any_vertex_in_view, frustum_cull, item_bounds, lod_thresholds, occlusion_cull,
    projected_diameter_px, select_lod, OcclusionOptions, LOD_FAR_PX, LOD_NEAR_PX,
};
pub use drawplan::{plan_iterative_draw, DrawPlan};
pub use raster::{
    draw_items, encode_png, rasterize, rasterize_model, Axis, CutPlane, DrawItem, Frame, RasterOptions, DEFAULT_COLOR,
    NO_ID, SUBPIXEL_BITS, TRANSPARENT,
};
pub use sprite::{azimuth_step_deg, grid_dims, orbit_cameras, render_sprite_sheet, SpriteError, SpriteOptions, SpriteSheet};
