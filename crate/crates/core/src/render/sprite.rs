//! Orbit thumbnails stitched into a sprite sheet.
//!
//! Viewpoint `i` of `n` sits at azimuth `i × 360/n` degrees (azimuth 0 looks
//! from +Z towards -Z, increasing towards +X) and a fixed elevation above the
//! XZ plane, always aimed at the center of the model bounds. The camera
//! distance fits the bounds' bounding sphere, grown by the margin, inside the
//! narrower field of view. Tiles are laid out row-major in a grid of
//! `ceil(sqrt(n))` columns and `ceil(n / columns)` rows; unused tiles stay
//! transparent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::camera::{sin_cos_deg, Camera, CameraError};
use super::cull::item_bounds;
use super::raster::{encode_png, rasterize, CutPlane, DrawItem, RasterOptions, TRANSPARENT};
use crate::scene::Aabb;

#[derive(Debug, Error, PartialEq)]
pub enum SpriteError {
    #[error("nothing to render: the model has no triangles")]
    Empty,
    #[error("invalid sprite options: {0}")]
    Options(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpriteOptions {
    pub viewpoints: u32,
    pub tile_width: u32,
    pub tile_height: u32,
    pub elevation_deg: f64,
    /// Extra room around the bounding sphere, as a fraction of its radius.
    pub margin: f64,
    pub fov_y_deg: f64,
    pub background: [u8; 4],
    pub cut_plane: Option<CutPlane>,
}

impl Default for SpriteOptions {
    fn default() -> Self {
        Self {
            viewpoints: 24,
            tile_width: 256,
            tile_height: 256,
            elevation_deg: 20.0,
            margin: 0.1,
            fov_y_deg: 40.0,
            background: TRANSPARENT,
            cut_plane: None,
        }
    }
}

/// `(columns, rows)` for `n` tiles.
pub fn grid_dims(n: u32) -> (u32, u32) {
    if n == 0 {
        return (0, 0);
    }
    let mut cols = (n as f64).sqrt() as u32;
    while cols * cols < n {
        cols += 1;
    }
    (cols, n.div_ceil(cols))
}

pub fn azimuth_step_deg(n: u32) -> f64 {
    360.0 / n as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpriteSheet {
    pub viewpoints: u32,
    pub columns: u32,
    pub rows: u32,
    pub tile_width: u32,
    pub tile_height: u32,
    pub rgba: Vec<u8>,
}

impl SpriteSheet {
    pub fn width(&self) -> u32 {
        self.columns * self.tile_width
    }

    pub fn height(&self) -> u32 {
        self.rows * self.tile_height
    }

    pub fn tile_origin(&self, i: u32) -> (u32, u32) {
        ((i % self.columns) * self.tile_width, (i / self.columns) * self.tile_height)
    }

    /// RGBA bytes of tile `i`, row-major.
    pub fn tile(&self, i: u32) -> Vec<u8> {
        let (ox, oy) = self.tile_origin(i);
        let stride = self.width() as usize * 4;
        let mut out = Vec::with_capacity(self.tile_width as usize * self.tile_height as usize * 4);
        for y in 0..self.tile_height as usize {
            let start = (oy as usize + y) * stride + ox as usize * 4;
            out.extend_from_slice(&self.rgba[start..start + self.tile_width as usize * 4]);
        }
        out
    }

    pub fn to_png(&self) -> Vec<u8> {
        encode_png(self.width(), self.height(), &self.rgba)
    }
}

fn validate(opts: &SpriteOptions) -> Result<(), SpriteError> {
    if opts.viewpoints == 0 {
        return Err(SpriteError::Options("viewpoint count must be at least 1".into()));
    }
    if opts.tile_width == 0 || opts.tile_height == 0 {
        return Err(SpriteError::Options("tile dimensions must be positive".into()));
    }
    if !(opts.margin >= 0.0 && opts.margin.is_finite()) {
        return Err(SpriteError::Options(format!("margin must be non-negative, got {}", opts.margin)));
    }
    if !(opts.elevation_deg.abs() < 90.0) {
        return Err(SpriteError::Options(format!("elevation must be within (-90, 90) degrees, got {}", opts.elevation_deg)));
    }
    Ok(())
}

/// The orbit cameras used for a sheet over `bounds`.
pub fn orbit_cameras(bounds: &Aabb, opts: &SpriteOptions) -> Result<Vec<Camera>, SpriteError> {
    validate(opts)?;
    if bounds.is_empty() {
        return Err(SpriteError::Empty);
    }
    let center = bounds.center();
    let radius = (bounds.diagonal() * 0.5).max(1e-9) * (1.0 + opts.margin);
    let aspect = opts.tile_width as f64 / opts.tile_height as f64;
    let half_fov_y = opts.fov_y_deg.to_radians() * 0.5;
    let half_fov_x = libm::atan(libm::tan(half_fov_y) * aspect);
    let dist = radius / libm::sin(half_fov_y.min(half_fov_x));
    let near = (dist - radius) * 0.5;
    let far = dist + radius * 2.0;
    let (se, ce) = sin_cos_deg(opts.elevation_deg);
    let step = azimuth_step_deg(opts.viewpoints);
    (0..opts.viewpoints)
        .map(|i| {
            let (sa, ca) = sin_cos_deg(i as f64 * step);
            let dir = nalgebra::Vector3::new(ce * sa, se, ce * ca);
            let eye = center + dir * dist;
            Camera::look_at(eye, center, nalgebra::Vector3::y(), opts.fov_y_deg.to_radians(), aspect, near, far).map_err(SpriteError::from)
        })
        .collect()
}

pub fn render_sprite_sheet(items: &[DrawItem], opts: &SpriteOptions) -> Result<SpriteSheet, SpriteError> {
    let bounds = items.iter().map(item_bounds).fold(Aabb::EMPTY, |a, b| a.union(&b));
    let cameras = orbit_cameras(&bounds, opts)?;
    let mut ropts = RasterOptions::new(opts.tile_width, opts.tile_height);
    ropts.background = opts.background;
    ropts.cut_plane = opts.cut_plane;
    let tiles: Vec<Vec<u8>> = cameras.par_iter().map(|c| rasterize(items, c, &ropts).color).collect();

    let (columns, rows) = grid_dims(opts.viewpoints);
    let mut sheet = SpriteSheet {
        viewpoints: opts.viewpoints,
        columns,
        rows,
        tile_width: opts.tile_width,
        tile_height: opts.tile_height,
        rgba: Vec::new(),
    };
    sheet.rgba = opts
        .background
        .iter()
        .copied()
        .cycle()
        .take(sheet.width() as usize * sheet.height() as usize * 4)
        .collect();
    let stride = sheet.width() as usize * 4;
    let row_bytes = opts.tile_width as usize * 4;
    for (i, tile) in tiles.iter().enumerate() {
        let (ox, oy) = sheet.tile_origin(i as u32);
        for y in 0..opts.tile_height as usize {
            let dst = (oy as usize + y) * stride + ox as usize * 4;
            sheet.rgba[dst..dst + row_bytes].copy_from_slice(&tile[y * row_bytes..(y + 1) * row_bytes]);
        }
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry() {
        assert_eq!(grid_dims(24), (5, 5));
        assert_eq!(grid_dims(1), (1, 1));
        assert_eq!(grid_dims(2), (2, 1));
        assert_eq!(grid_dims(10), (4, 3));
        assert_eq!(grid_dims(16), (4, 4));
        assert_eq!(azimuth_step_deg(24), 15.0);
    }

    #[test]
    fn empty_bounds_fail() {
        assert_eq!(render_sprite_sheet(&[], &SpriteOptions::default()), Err(SpriteError::Empty));
    }

    #[test]
    fn zero_viewpoints_rejected() {
        let opts = SpriteOptions {
            viewpoints: 0,
            ..Default::default()
        };
        assert!(matches!(orbit_cameras(&Aabb::new(nalgebra::Vector3::zeros(), nalgebra::Vector3::repeat(1.0)), &opts), Err(SpriteError::Options(_))));
    }
}
