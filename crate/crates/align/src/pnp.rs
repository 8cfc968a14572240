//! Planar Perspective-n-Point.
//!
//! The initial pose comes from a normalized DLT homography between the
//! marker plane and normalized image coordinates, decomposed into `[r1 r2 t]`
//! and projected onto SO(3). Levenberg–Marquardt then minimizes the summed
//! squared pixel residuals over a left-multiplied rotation increment and the
//! translation. It uses analytic Jacobians, Marquardt diagonal scaling,
//! an initial λ of 1e-3, ×10/÷10 damping steps, and stops when an accepted
//! step lowers the cost by less than 1e-12 relative, or after 100 iterations.

use nalgebra::{DMatrix, Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::layout::{Role, TagLayout};
use crate::pose::Pose;
use crate::AlignError;

pub const INITIAL_LAMBDA: f64 = 1e-3;
pub const COST_TOLERANCE: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 100;
/// Fewer points than this still solve, flagged low-confidence.
pub const CONFIDENT_POINTS: usize = 8;
pub const MIN_POINTS: usize = 4;

/// Pinhole intrinsics, pixels. Image x right, y down; the camera looks
/// along +z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Intrinsics { fx, fy, cx, cy }
    }

    /// Pixel of a camera-frame point, or `None` behind the camera.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        (p.z > 0.0).then(|| [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }

    pub fn project(&self, pose: &Pose, p: &Vector3<f64>) -> Option<[f64; 2]> {
        self.project_camera(&pose.apply(p))
    }

    pub fn normalize(&self, uv: [f64; 2]) -> [f64; 2] {
        [(uv[0] - self.cx) / self.fx, (uv[1] - self.cy) / self.fy]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub tag: u8,
    pub role: Role,
    pub point3d: Vector3<f64>,
    pub point2d: [f64; 2],
}

/// A detected point as stored in fixtures: which tag point, and where.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub tag: u8,
    pub role: Role,
    pub u: f64,
    pub v: f64,
}

pub fn correspondences(layout: &TagLayout, detections: &[Detection]) -> Result<Vec<Correspondence>, AlignError> {
    detections
        .iter()
        .map(|d| {
            let p = layout
                .point(d.tag, d.role)
                .ok_or_else(|| AlignError::UnknownPoint { tag: d.tag, role: d.role })?;
            Ok(Correspondence {
                tag: d.tag,
                role: d.role,
                point3d: p.position,
                point2d: [d.u, d.v],
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnpSolution {
    /// Marker-to-camera.
    pub pose: Pose,
    /// Root-mean-square reprojection distance, pixels.
    pub rms: f64,
    pub iterations: usize,
    /// False when the iteration cap ended refinement while the cost was
    /// still (slowly) falling. The pose is still the best one found.
    pub converged: bool,
    pub points: usize,
    pub low_confidence: bool,
}

/// RMS pixel distance between the observations and their reprojection.
/// Infinite if any point lands behind the camera.
pub fn reprojection_rms(pose: &Pose, corrs: &[Correspondence], k: &Intrinsics) -> f64 {
    if corrs.is_empty() {
        return 0.0;
    }
    let sum: f64 = corrs
        .iter()
        .map(|c| match k.project(pose, &c.point3d) {
            Some(uv) => (uv[0] - c.point2d[0]).powi(2) + (uv[1] - c.point2d[1]).powi(2),
            None => f64::INFINITY,
        })
        .sum();
    (sum / corrs.len() as f64).sqrt()
}

/// Similarity that moves the centroid to the origin and the mean distance
/// to √2.
fn hartley(pts: &[[f64; 2]]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    let mean_d = pts.iter().map(|p| ((p[0] - mx).powi(2) + (p[1] - my).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean_d > 0.0 { std::f64::consts::SQRT_2 / mean_d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Ratio of the smaller to the larger principal spread of a 2D point set;
/// zero when collinear.
fn spread_ratio(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let hi = tr / 2.0 + disc;
    let lo = tr / 2.0 - disc;
    if hi <= 0.0 {
        0.0
    } else {
        (lo / hi).max(0.0)
    }
}

/// Homography taking marker-plane `(x, y)` to normalized image coordinates.
fn homography(model: &[[f64; 2]], image: &[[f64; 2]]) -> Option<Matrix3<f64>> {
    let tm = hartley(model);
    let ti = hartley(image);
    let rows = (2 * model.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (m, p)) in model.iter().zip(image).enumerate() {
        let [x, y] = apply_h(&tm, *m);
        let [u, v] = apply_h(&ti, *p);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let k = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i)?;
    let h = vt.row(k);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let out = ti.try_inverse()? * hn * tm;
    out.iter().all(|x| x.is_finite()).then_some(out)
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

fn initial_pose(h: &Matrix3<f64>) -> Option<Pose> {
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let norm = (h1.norm() + h2.norm()) / 2.0;
    if norm <= 0.0 {
        return None;
    }
    let mut lambda = 1.0 / norm;
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r3 = r1.cross(&r2);
    let r = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));
    let rot = UnitQuaternion::from_matrix(&r);
    Some(Pose::new(rot, h3 * lambda))
}

fn cost(pose: &Pose, corrs: &[Correspondence], k: &Intrinsics) -> f64 {
    let rms = reprojection_rms(pose, corrs, k);
    rms * rms * corrs.len() as f64
}

/// Normal equations of the reprojection residuals at `pose`.
fn normal_equations(pose: &Pose, corrs: &[Correspondence], k: &Intrinsics) -> (Matrix6<f64>, Vector6<f64>) {
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for c in corrs {
        let rx = pose.rotation * c.point3d;
        let p = rx + pose.translation;
        let iz = 1.0 / p.z;
        let du = Vector3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz);
        let dv = Vector3::new(0.0, k.fy * iz, -k.fy * p.y * iz * iz);
        let res = [k.fx * p.x * iz + k.cx - c.point2d[0], k.fy * p.y * iz + k.cy - c.point2d[1]];
        for (d, r) in [(du, res[0]), (dv, res[1])] {
            // d(p)/dω = -[Rx]×, so d·(ω × Rx) = ω · (Rx × d).
            let jw = rx.cross(&d);
            let row = Vector6::new(jw.x, jw.y, jw.z, d.x, d.y, d.z);
            jtj += row * row.transpose();
            jtr += row * r;
        }
    }
    (jtj, jtr)
}

fn step(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let dq = UnitQuaternion::from_scaled_axis(w);
    Pose::new(dq * pose.rotation, pose.translation + Vector3::new(delta[3], delta[4], delta[5]))
}

/// Refines `start` by damped least squares. Returns the pose, iterations
/// used and whether the stopping rule was met.
pub fn refine(start: Pose, corrs: &[Correspondence], k: &Intrinsics) -> (Pose, usize, bool) {
    let mut pose = start;
    let mut c = cost(&pose, corrs, k);
    let mut lambda = INITIAL_LAMBDA;
    for it in 0..MAX_ITERATIONS {
        if c == 0.0 {
            return (pose, it, true);
        }
        let (jtj, jtr) = normal_equations(&pose, corrs, k);
        loop {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let accepted = a.cholesky().map(|ch| ch.solve(&-jtr)).map(|d| (step(&pose, &d), d)).and_then(|(cand, _)| {
                let nc = cost(&cand, corrs, k);
                (nc < c).then_some((cand, nc))
            });
            match accepted {
                Some((cand, nc)) => {
                    let drop = c - nc;
                    pose = cand;
                    lambda = (lambda / 10.0).max(1e-15);
                    let old = c;
                    c = nc;
                    if drop <= COST_TOLERANCE * old {
                        return (pose, it + 1, true);
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    // No descent direction left at machine precision.
                    if lambda > 1e16 {
                        return (pose, it + 1, true);
                    }
                }
            }
        }
    }
    (pose, MAX_ITERATIONS, false)
}

/// Pose of a planar marker (all `point3d.z == 0`) from ≥ 4 correspondences.
pub fn solve_pnp(corrs: &[Correspondence], k: &Intrinsics) -> Result<PnpSolution, AlignError> {
    if corrs.len() < MIN_POINTS {
        return Err(AlignError::TooFewPoints(corrs.len()));
    }
    if corrs.iter().any(|c| !(c.point3d.iter().all(|x| x.is_finite()) && c.point2d.iter().all(|x| x.is_finite()))) {
        return Err(AlignError::Degenerate("non-finite coordinates".into()));
    }
    let scale = corrs.iter().map(|c| c.point3d.norm()).fold(0.0, f64::max).max(1e-300);
    if corrs.iter().any(|c| c.point3d.z.abs() > 1e-9 * scale) {
        return Err(AlignError::NonPlanar);
    }
    let model: Vec<[f64; 2]> = corrs.iter().map(|c| [c.point3d.x, c.point3d.y]).collect();
    let image: Vec<[f64; 2]> = corrs.iter().map(|c| k.normalize(c.point2d)).collect();
    if spread_ratio(&model) < 1e-10 {
        return Err(AlignError::Degenerate("marker points are collinear".into()));
    }
    if spread_ratio(&image) < 1e-10 {
        return Err(AlignError::Degenerate("image points are collinear".into()));
    }
    let h = homography(&model, &image).ok_or_else(|| AlignError::Degenerate("homography is singular".into()))?;
    let start = initial_pose(&h).ok_or_else(|| AlignError::Degenerate("homography is singular".into()))?;
    let (pose, iterations, converged) = refine(start, corrs, k);
    let rms = reprojection_rms(&pose, corrs, k);
    if !rms.is_finite() {
        return Err(AlignError::Diverged { rms });
    }
    if corrs.iter().any(|c| pose.apply(&c.point3d).z <= 0.0) {
        return Err(AlignError::BehindCamera);
    }
    Ok(PnpSolution {
        pose,
        rms,
        iterations,
        converged,
        points: corrs.len(),
        low_confidence: corrs.len() < CONFIDENT_POINTS,
    })
}

/// Solves from whatever subset of the sheet was detected (occluded tags,
/// missing corners). Non-finite detections are dropped first.
pub fn occlusion_robust_solve(corrs: &[Correspondence], k: &Intrinsics) -> Result<PnpSolution, AlignError> {
    let usable: Vec<Correspondence> = corrs
        .iter()
        .filter(|c| c.point2d.iter().all(|x| x.is_finite()))
        .copied()
        .collect();
    solve_pnp(&usable, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::TagLayout;

    fn k() -> Intrinsics {
        Intrinsics::new(1000.0, 1000.0, 640.0, 480.0)
    }

    fn facing(t: [f64; 3]) -> Pose {
        // Marker +z toward the camera, +y up in the image.
        Pose::new(UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI), Vector3::from(t))
    }

    fn project_all(layout: &TagLayout, pose: &Pose) -> Vec<Correspondence> {
        layout
            .points
            .iter()
            .map(|p| Correspondence {
                tag: p.tag,
                role: p.role,
                point3d: p.position,
                point2d: k().project(pose, &p.position).unwrap(),
            })
            .collect()
    }

    #[test]
    fn centered_layout_is_symmetric_and_recovered() {
        let layout = TagLayout::default();
        let truth = facing([0.0, 0.0, 1.0]);
        let corrs = project_all(&layout, &truth);
        // Each point has a partner mirrored through the principal point.
        for c in &corrs {
            let [u, v] = c.point2d;
            assert!(corrs.iter().any(|d| (d.point2d[0] - (1280.0 - u)).abs() < 1e-9 && (d.point2d[1] - (960.0 - v)).abs() < 1e-9));
        }
        let sol = solve_pnp(&corrs, &k()).unwrap();
        assert!(sol.pose.rotation_error(&truth) < 1e-9);
        assert!(sol.pose.translation_error(&truth) < 1e-12);
        assert!(!sol.low_confidence);
    }

    #[test]
    fn four_corners_solve_with_low_confidence() {
        let layout = TagLayout::default();
        let truth = facing([0.05, -0.02, 0.8]);
        let corrs: Vec<_> = project_all(&layout, &truth).into_iter().filter(|c| c.tag == 2 && c.role != Role::Center).collect();
        let sol = solve_pnp(&corrs, &k()).unwrap();
        assert!(sol.low_confidence);
        assert!(sol.pose.translation_error(&truth) < 1e-9);
    }

    #[test]
    fn preconditions() {
        let layout = TagLayout::default();
        let corrs = project_all(&layout, &facing([0.0, 0.0, 1.0]));
        assert!(matches!(solve_pnp(&corrs[..3], &k()), Err(AlignError::TooFewPoints(3))));
        // The top corners of tags 0 and 1 all sit on one line.
        let mut line: Vec<_> = corrs.iter().filter(|c| c.tag < 2 && matches!(c.role, Role::TopLeft | Role::TopRight)).copied().collect();
        assert_eq!(line.len(), 4);
        assert!(matches!(solve_pnp(&line, &k()), Err(AlignError::Degenerate(_))));
        line[0].point3d.z = 0.01;
        assert!(matches!(solve_pnp(&line, &k()), Err(AlignError::NonPlanar)));
    }

    #[test]
    fn fixture_detections_resolve() {
        let layout = TagLayout::default();
        let dets = vec![Detection {
            tag: 1,
            role: Role::Center,
            u: 10.0,
            v: 20.0,
        }];
        let c = correspondences(&layout, &dets).unwrap();
        assert_eq!(c[0].point3d, layout.tag_center(1).unwrap());
        let bad = [Detection { tag: 7, ..dets[0] }];
        assert!(matches!(correspondences(&layout, &bad), Err(AlignError::UnknownPoint { tag: 7, .. })));
    }
}
