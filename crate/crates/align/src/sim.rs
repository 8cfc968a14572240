//! Synthetic projection harness: known poses, projected sheet points,
//! optional pixel noise.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::layout::TagLayout;
use crate::pnp::{solve_pnp, Correspondence, Intrinsics};
use crate::pose::Pose;

/// 1280×960 sensor, 1000 px focal length.
pub const SIM_INTRINSICS: Intrinsics = Intrinsics {
    fx: 1000.0,
    fy: 1000.0,
    cx: 640.0,
    cy: 480.0,
};

/// Pose with the sheet roughly facing the camera at `distance` meters: up to
/// 35° of tilt, any in-plane roll, lateral offset up to 10% of the distance.
pub fn random_pose<R: Rng>(rng: &mut R, distance: f64) -> Pose {
    let facing = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
    let roll = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let axis_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt_axis = Unit::new_normalize(Vector3::new(axis_angle.cos(), axis_angle.sin(), 0.0));
    let tilt = UnitQuaternion::from_axis_angle(&tilt_axis, rng.random_range(0.0..35f64.to_radians()));
    let lateral = 0.1 * distance;
    Pose::new(
        tilt * facing * roll,
        Vector3::new(rng.random_range(-lateral..lateral), rng.random_range(-lateral..lateral), distance),
    )
}

/// Exact projections of the layout points that land in front of the camera.
pub fn project_layout(layout: &TagLayout, pose: &Pose, k: &Intrinsics) -> Vec<Correspondence> {
    layout
        .points
        .iter()
        .filter_map(|p| {
            k.project(pose, &p.position).map(|uv| Correspondence {
                tag: p.tag,
                role: p.role,
                point3d: p.position,
                point2d: uv,
            })
        })
        .collect()
}

pub fn add_noise<R: Rng>(rng: &mut R, corrs: &mut [Correspondence], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    for c in corrs {
        c.point2d[0] += n.sample(rng);
        c.point2d[1] += n.sample(rng);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trial {
    pub rotation_error: f64,
    pub translation_error: f64,
    pub rms: f64,
}

#[derive(Clone, Debug)]
pub struct MonteCarlo {
    pub layout: TagLayout,
    pub intrinsics: Intrinsics,
    pub distance: f64,
    pub sigma: f64,
    /// Tag left out of every solve, simulating occlusion.
    pub drop_tag: Option<u8>,
}

impl MonteCarlo {
    /// Runs `trials` solves; trial `i` draws from its own stream so results
    /// do not depend on how trials are scheduled. Failed solves count as
    /// infinite error.
    pub fn run(&self, seed: u64, trials: usize) -> Vec<Trial> {
        (0..trials).map(|i| self.trial(seed, i as u64)).collect()
    }

    pub fn trial(&self, seed: u64, i: u64) -> Trial {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i);
        let truth = random_pose(&mut rng, self.distance);
        let mut corrs = project_layout(&self.layout, &truth, &self.intrinsics);
        add_noise(&mut rng, &mut corrs, self.sigma);
        if let Some(t) = self.drop_tag {
            corrs.retain(|c| c.tag != t);
        }
        match solve_pnp(&corrs, &self.intrinsics) {
            Ok(sol) => Trial {
                rotation_error: sol.pose.rotation_error(&truth),
                translation_error: sol.pose.translation_error(&truth),
                rms: sol.rms,
            },
            Err(_) => Trial {
                rotation_error: f64::INFINITY,
                translation_error: f64::INFINITY,
                rms: f64::INFINITY,
            },
        }
    }
}

/// The `q`-quantile (nearest rank) of `xs`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}
