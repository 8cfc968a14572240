//! The printed alignment sheet: four square tags in a 2×2 grid.
//!
//! Marker frame: origin at the middle of the grid, +x right and +y up as the
//! sheet is read, +z out of the paper. Tags are numbered row-major from the
//! top-left; each contributes its corners counter-clockwise from the
//! top-left (TL, BL, BR, TR) and then its center.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::AlignError;

/// US letter, portrait, in meters.
pub const LETTER: [f64; 2] = [0.2159, 0.2794];
pub const DEFAULT_TAG_SIZE: f64 = 0.08;
pub const DEFAULT_SPACING: f64 = 0.02;
pub const TAG_COUNT: u8 = 4;
pub const POINTS_PER_TAG: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TopLeft,
    BottomLeft,
    BottomRight,
    TopRight,
    Center,
}

impl Role {
    pub const ORDER: [Role; 5] = [Role::TopLeft, Role::BottomLeft, Role::BottomRight, Role::TopRight, Role::Center];

    /// Offset from the tag center in units of half the tag size.
    fn unit_offset(self) -> [f64; 2] {
        match self {
            Role::TopLeft => [-1.0, 1.0],
            Role::BottomLeft => [-1.0, -1.0],
            Role::BottomRight => [1.0, -1.0],
            Role::TopRight => [1.0, 1.0],
            Role::Center => [0.0, 0.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutPoint {
    pub tag: u8,
    pub role: Role,
    pub position: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagLayout {
    pub tag_size: f64,
    pub spacing: f64,
    /// Page width and height in meters.
    pub page: [f64; 2],
    pub points: Vec<LayoutPoint>,
}

impl Default for TagLayout {
    fn default() -> Self {
        build_tag_layout(DEFAULT_TAG_SIZE, DEFAULT_SPACING).expect("default layout fits")
    }
}

/// Edge length of the square the four tags span.
pub fn corner_span(tag_size: f64, spacing: f64) -> f64 {
    2.0 * tag_size + spacing
}

pub fn build_tag_layout(tag_size: f64, spacing: f64) -> Result<TagLayout, AlignError> {
    build_tag_layout_on(tag_size, spacing, LETTER)
}

pub fn build_tag_layout_on(tag_size: f64, spacing: f64, page: [f64; 2]) -> Result<TagLayout, AlignError> {
    if !(tag_size > 0.0 && spacing >= 0.0 && tag_size.is_finite() && spacing.is_finite()) {
        return Err(AlignError::Layout(format!("tag size {tag_size} and spacing {spacing} must be positive")));
    }
    let span = corner_span(tag_size, spacing);
    if span > page[0].min(page[1]) {
        return Err(AlignError::Layout(format!("span {span} m does not fit a {} × {} m page", page[0], page[1])));
    }
    let pitch = (tag_size + spacing) / 2.0;
    let half = tag_size / 2.0;
    let mut points = Vec::with_capacity(TAG_COUNT as usize * POINTS_PER_TAG);
    for tag in 0..TAG_COUNT {
        let cx = if tag % 2 == 0 { -pitch } else { pitch };
        let cy = if tag < 2 { pitch } else { -pitch };
        for role in Role::ORDER {
            let [ox, oy] = role.unit_offset();
            points.push(LayoutPoint {
                tag,
                role,
                position: Vector3::new(cx + ox * half, cy + oy * half, 0.0),
            });
        }
    }
    Ok(TagLayout {
        tag_size,
        spacing,
        page,
        points,
    })
}

impl TagLayout {
    pub fn point(&self, tag: u8, role: Role) -> Option<&LayoutPoint> {
        self.points.iter().find(|p| p.tag == tag && p.role == role)
    }

    pub fn span(&self) -> f64 {
        corner_span(self.tag_size, self.spacing)
    }

    /// Center of a tag in the marker frame.
    pub fn tag_center(&self, tag: u8) -> Option<Vector3<f64>> {
        self.point(tag, Role::Center).map(|p| p.position)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sheet() {
        let l = build_tag_layout(0.08, 0.02).unwrap();
        assert_eq!(l.points.len(), 20);
        assert!((l.span() - 0.18).abs() < 1e-15 && l.span() <= LETTER[0]);
        assert!(l.points.iter().all(|p| p.position.z == 0.0));
        for tag in 0..4 {
            let corners: Vector3<f64> = l.points.iter().filter(|p| p.tag == tag && p.role != Role::Center).map(|p| p.position).sum();
            assert!((corners / 4.0 - l.tag_center(tag).unwrap()).norm() < 1e-15);
        }
    }

    #[test]
    fn ordering_is_row_major_and_counter_clockwise() {
        let l = TagLayout::default();
        let roles: Vec<Role> = l.points[..5].iter().map(|p| p.role).collect();
        assert_eq!(roles, Role::ORDER);
        // Tag 0 is top-left, tag 3 bottom-right.
        let c0 = l.tag_center(0).unwrap();
        let c3 = l.tag_center(3).unwrap();
        assert!(c0.x < 0.0 && c0.y > 0.0 && c3.x > 0.0 && c3.y < 0.0);
        // TL -> BL -> BR -> TR has positive signed area.
        let p: Vec<_> = l.points[..4].iter().map(|p| p.position).collect();
        let area: f64 = (0..4).map(|i| p[i].x * p[(i + 1) % 4].y - p[(i + 1) % 4].x * p[i].y).sum();
        assert!(area > 0.0);
    }

    #[test]
    fn oversize_layout_is_rejected() {
        assert!(matches!(build_tag_layout(0.11, 0.0), Err(AlignError::Layout(_))));
        assert!(build_tag_layout(0.1, 0.0159).is_ok());
    }
}
