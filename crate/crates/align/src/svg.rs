//! Printable placement sheet. Tag interiors are left for the detector's
//! own tag images; the sheet marks where each goes, its id and its center.

use std::fmt::Write;

use crate::layout::{Role, TagLayout};

/// SVG in millimeters, page-sized, marker origin at the page center.
pub fn layout_svg(layout: &TagLayout) -> String {
    let mm = |m: f64| m * 1000.0;
    let (w, h) = (mm(layout.page[0]), mm(layout.page[1]));
    let (ox, oy) = (w / 2.0, h / 2.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}mm" height="{h:.1}mm" viewBox="0 0 {w:.3} {h:.3}">"#
    );
    let _ = writeln!(s, r#"  <rect x="0" y="0" width="{w:.3}" height="{h:.3}" fill="white"/>"#);
    let size = mm(layout.tag_size);
    for tag in 0..crate::layout::TAG_COUNT {
        let Some(tl) = layout.point(tag, Role::TopLeft) else { continue };
        let Some(c) = layout.point(tag, Role::Center) else { continue };
        // SVG y grows downward.
        let (x, y) = (ox + mm(tl.position.x), oy - mm(tl.position.y));
        let (cx, cy) = (ox + mm(c.position.x), oy - mm(c.position.y));
        let _ = writeln!(
            s,
            r#"  <rect id="tag{tag}" x="{x:.3}" y="{y:.3}" width="{size:.3}" height="{size:.3}" fill="none" stroke="black" stroke-width="0.5"/>"#
        );
        let _ = writeln!(
            s,
            r#"  <path d="M {:.3} {cy:.3} H {:.3} M {cx:.3} {:.3} V {:.3}" stroke="black" stroke-width="0.2"/>"#,
            cx - 2.0,
            cx + 2.0,
            cy - 2.0,
            cy + 2.0
        );
        let _ = writeln!(
            s,
            r#"  <text x="{:.3}" y="{:.3}" font-family="monospace" font-size="4">{tag}</text>"#,
            x + 1.0,
            y - 1.5
        );
    }
    let _ = writeln!(
        s,
        r#"  <text x="5" y="{:.3}" font-family="monospace" font-size="3">tag {:.1} mm, spacing {:.1} mm</text>"#,
        h - 5.0,
        size,
        mm(layout.spacing)
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sheet_has_four_tags() {
        let svg = layout_svg(&TagLayout::default());
        assert_eq!(svg.matches("<rect id=\"tag").count(), 4);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains(r#"width="215.9mm""#));
        // Tag 0 top-left corner: 107.95 - 90, 139.7 - 90.
        assert!(svg.contains(r#"x="17.950" y="49.700""#));
    }
}
