use nalgebra::{Unit, UnitQuaternion, Vector3};
use orbitcad_align::sim::{project_layout, quantile, random_pose, MonteCarlo, SIM_INTRINSICS};
use orbitcad_align::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Independent projection: explicit rotation matrix, no library pose helpers.
fn oracle_rms(pose: &Pose, corrs: &[Correspondence], k: &Intrinsics) -> f64 {
    let r = pose.rotation.to_rotation_matrix().into_inner();
    let mut sum = 0.0;
    for c in corrs {
        let p = r * c.point3d + pose.translation;
        let u = k.fx * p.x / p.z + k.cx;
        let v = k.fy * p.y / p.z + k.cy;
        sum += (u - c.point2d[0]).powi(2) + (v - c.point2d[1]).powi(2);
    }
    (sum / corrs.len() as f64).sqrt()
}

#[test]
fn noiseless_suite_recovers_pose() {
    let layout = TagLayout::default();
    for i in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let truth = random_pose(&mut rng, 0.4 + (i % 10) as f64 * 0.25);
        let corrs = project_layout(&layout, &truth, &SIM_INTRINSICS);
        assert_eq!(corrs.len(), 20);
        let sol = solve_pnp(&corrs, &SIM_INTRINSICS).unwrap();
        assert!(sol.pose.rotation_error(&truth) < 1e-6, "trial {i}");
        assert!(sol.pose.translation_error(&truth) < 1e-9, "trial {i}");
        assert!(sol.rms < 1e-9, "trial {i}: rms {}", sol.rms);
    }
}

#[test]
fn reported_rms_matches_recomputation() {
    let layout = TagLayout::default();
    let mc = MonteCarlo {
        layout: layout.clone(),
        intrinsics: SIM_INTRINSICS,
        distance: 1.0,
        sigma: 1.0,
        drop_tag: None,
    };
    for i in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let truth = random_pose(&mut rng, mc.distance);
        let mut corrs = project_layout(&layout, &truth, &SIM_INTRINSICS);
        orbitcad_align::sim::add_noise(&mut rng, &mut corrs, mc.sigma);
        let sol = solve_pnp(&corrs, &SIM_INTRINSICS).unwrap();
        let want = oracle_rms(&sol.pose, &corrs, &SIM_INTRINSICS);
        assert!((sol.rms - want).abs() <= 1e-12 * want.max(1.0));
    }
}

/// Fraction of 1000 σ = 0.5 px trials at 1 m with a 0.16 m sheet whose
/// translation error is under 5 mm, plus the measured 95th percentile.
fn noise_suite(drop_tag: Option<u8>) -> Vec<f64> {
    let mc = MonteCarlo {
        layout: build_tag_layout(0.07, 0.02).unwrap(),
        intrinsics: SIM_INTRINSICS,
        distance: 1.0,
        sigma: 0.5,
        drop_tag,
    };
    (0..1000u64).into_par_iter().map(|i| mc.trial(2024, i).translation_error).collect()
}

// Established by the harness (seed 2024): 989/1000 trials under 5 mm,
// 95th percentile 3.934 mm.
const FROZEN_Q95_M: f64 = 0.003934;

#[test]
fn noisy_translation_error_is_bounded() {
    let errs = noise_suite(None);
    let under = errs.iter().filter(|e| **e < 0.005).count();
    assert!(under >= 950, "{under}/1000 under 5 mm");
    let q95 = quantile(&errs, 0.95);
    assert!(q95 <= FROZEN_Q95_M, "q95 {q95}");
}

#[test]
fn losing_a_tag_at_most_doubles_the_error() {
    let full: f64 = noise_suite(None).iter().sum::<f64>() / 1000.0;
    for tag in 0..4 {
        let partial: f64 = noise_suite(Some(tag)).iter().sum::<f64>() / 1000.0;
        assert!(partial <= 2.0 * full, "tag {tag}: {partial} vs {full}");
    }
}

#[test]
fn fixture_detections_solve() {
    let dets: Vec<Detection> = serde_json::from_str(include_str!("fixtures/detections.json")).unwrap();
    assert_eq!(dets.len(), 16);
    let corrs = correspondences(&TagLayout::default(), &dets).unwrap();
    let sol = solve_pnp(&corrs, &SIM_INTRINSICS).unwrap();
    // Rendered from this pose, pixels rounded to 1/1000.
    let truth = Pose::new(UnitQuaternion::from_euler_angles(2.9, 0.25, 0.6), Vector3::new(0.031, -0.042, 0.85));
    assert!(sol.pose.translation_error(&truth) < 1e-4);
    assert!(sol.pose.rotation_error(&truth) < 1e-3);
    assert!(sol.rms < 1e-3);
}

fn arb_pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..std::f64::consts::PI,
        prop::array::uniform3(-2.0f64..2.0),
    )
        .prop_filter_map("axis", |(a, angle, t)| {
            let axis = Vector3::from(a);
            (axis.norm() > 1e-3).then(|| Pose::new(UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle), Vector3::from(t)))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn solve_round_trips_random_poses(seed in any::<u64>(), distance in 0.3f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_pose(&mut rng, distance);
        let corrs = project_layout(&TagLayout::default(), &truth, &SIM_INTRINSICS);
        let sol = solve_pnp(&corrs, &SIM_INTRINSICS).unwrap();
        prop_assert!(sol.pose.rotation_error(&truth) < 1e-6);
        prop_assert!(sol.pose.translation_error(&truth) < 1e-9 * distance.max(1.0));
    }

    #[test]
    fn session_transform_maps_virtual_marker_onto_physical(physical in arb_pose(), placement in arb_pose()) {
        let t = marker_to_session_transform(&physical, &placement);
        for p in &TagLayout::default().points {
            let in_model = placement.apply(&p.position);
            let moved = t.transform_point(&in_model.into()).coords;
            prop_assert!((moved - physical.apply(&p.position)).norm() < 1e-9);
        }
    }

    #[test]
    fn session_transform_is_equivariant(physical in arb_pose(), placement in arb_pose(), r in arb_pose()) {
        // Pre-rotating both poses conjugates the result.
        let rot = Pose::new(r.rotation, Vector3::zeros());
        let t = marker_to_session_transform(&physical, &placement).to_matrix();
        let t2 = marker_to_session_transform(&rot.compose(&physical), &rot.compose(&placement)).to_matrix();
        let m = rot.to_isometry().to_homogeneous();
        let want = m * t * m.try_inverse().unwrap();
        prop_assert!((t2 - want).amax() < 1e-9);
    }
}
