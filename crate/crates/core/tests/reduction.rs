mod support;

use std::collections::BTreeSet;

use nalgebra::Vector3;
use orbitcad_core::reduction::{
    apply_plan, box_cut, plan_triangles, select_nodes, visibility_cameras, visibility_cull, BoxMode, OrientedBox, ReductionPlan,
    ReductionStep, Selector, Targets, VISIBILITY_RESOLUTION,
};
use orbitcad_core::scene::quat_from_xyzw;
use orbitcad_core::synth::{self, SplitMix64};
use orbitcad_core::{NodeId, SceneModel};
use proptest::prelude::*;
use support::{nested_box_scene, raycast_visible};

/// Hand-rolled matcher for `^M[0-9]+$`, independent of the regex engine.
fn is_m_number(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next() == Some('M') && {
        let rest: Vec<char> = chars.collect();
        !rest.is_empty() && rest.iter().all(|c| c.is_ascii_digit())
    }
}

#[test]
fn regex_selection_matches_reference_matcher() {
    let mut rng = SplitMix64::new(7);
    let mut m = SceneModel::new("names", "root");
    let alphabet: Vec<char> = "M0123456789m_x".chars().collect();
    for i in 0..100 {
        let len = 1 + rng.below(6) as usize;
        let mut name: String = (0..len).map(|_| alphabet[rng.below(alphabet.len() as u64) as usize]).collect();
        if i % 3 == 0 {
            name = format!("M{}", rng.below(1000));
        }
        m.add_node(m.root(), &name).unwrap();
    }
    let got = select_nodes(
        &m,
        &Selector::Name {
            pattern: "^M[0-9]+$".into(),
            is_regex: true,
        },
    )
    .unwrap();
    let want: BTreeSet<NodeId> = m.nodes().filter(|n| n.id != m.root() && is_m_number(&n.name)).map(|n| n.id).collect();
    assert!(want.len() >= 34);
    assert_eq!(got, want);
}

#[test]
fn nested_box_visibility_is_sound() {
    for seed in 0..4 {
        let scene = nested_box_scene(seed);
        let kept = visibility_cull(&scene.model, Vector3::zeros(), scene.sphere_radius, 16).unwrap();
        let cams = visibility_cameras(&scene.model, Vector3::zeros(), scene.sphere_radius, 16).unwrap();
        let mut oracle = BTreeSet::new();
        for c in &cams {
            oracle.extend(raycast_visible(&scene.boxes, c, VISIBILITY_RESOLUTION, VISIBILITY_RESOLUTION));
        }
        assert!(oracle.is_subset(&kept), "seed {seed}: oracle {oracle:?} kept {kept:?}");
        assert!(kept.is_disjoint(&scene.enclosed), "seed {seed}");
    }
}

#[test]
fn more_cameras_never_keep_less() {
    for seed in 10..13 {
        let scene = nested_box_scene(seed);
        let few = visibility_cull(&scene.model, Vector3::zeros(), scene.sphere_radius, 16).unwrap();
        let many = visibility_cull(&scene.model, Vector3::zeros(), scene.sphere_radius, 64).unwrap();
        assert!(few.is_subset(&many), "seed {seed}");
    }
}

fn unit_box(keep_min: [f64; 3], keep_max: [f64; 3]) -> OrientedBox {
    OrientedBox::new(keep_min, keep_max, quat_from_xyzw([0.0, 0.0, 0.0, 1.0]))
}

#[test]
fn box_cut_partitions_triangles() {
    let model = synth::random_tree(3, 40);
    let total = plan_triangles(&model);
    let mut rng = SplitMix64::new(99);
    for _ in 0..20 {
        // Random corners almost never coincide with a vertex.
        let lo = [rng.range(-6.0, 1.0), rng.range(-6.0, 1.0), rng.range(-6.0, 1.0)];
        let hi = [lo[0] + rng.range(0.5, 6.0), lo[1] + rng.range(0.5, 6.0), lo[2] + rng.range(0.5, 6.0)];
        let b = OrientedBox::new(lo, hi, quat_from_xyzw([rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), 1.0]));
        let mut keep = model.clone();
        box_cut(&mut keep, &b, BoxMode::Keep);
        let mut cut = model.clone();
        box_cut(&mut cut, &b, BoxMode::Cut);
        assert_eq!(plan_triangles(&keep) + plan_triangles(&cut), total);
        keep.validate().unwrap();
        cut.validate().unwrap();
    }
    let mut all = model.clone();
    box_cut(&mut all, &unit_box([-100.0; 3], [100.0; 3]), BoxMode::Keep);
    assert_eq!(plan_triangles(&all), total);
}

fn plan_steps() -> impl Strategy<Value = Vec<ReductionStep>> {
    let step = prop_oneof![
        (0.0f64..3.0).prop_map(|threshold| ReductionStep::RemoveBySize { threshold }),
        (0u32..10).prop_map(|d| ReductionStep::RemoveByName {
            pattern: format!("N{d}"),
            is_regex: false
        }),
        prop_oneof![Just("part"), Just("assembly")].prop_map(|t| ReductionStep::RemoveByType { node_type: t.into() }),
        (0.0f64..1.0).prop_map(|v| ReductionStep::SetOpacity {
            targets: Targets::All,
            value: v
        }),
        any::<bool>().prop_map(|flag| ReductionStep::SetOcclusionOnly {
            targets: Targets::All,
            flag
        }),
        ((-4.0f64..0.0), (0.5f64..5.0), any::<bool>()).prop_map(|(lo, size, keep)| ReductionStep::BoxCut {
            min: [lo; 3],
            max: [lo + size; 3],
            rotation: [0.0, 0.0, 0.0, 1.0],
            mode: if keep { BoxMode::Keep } else { BoxMode::Cut },
        }),
    ];
    proptest::collection::vec(step, 0..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plans_never_add_triangles(seed in 0u64..1000, steps in plan_steps()) {
        let model = synth::random_tree(seed, 30);
        let style_only = steps.iter().all(|s| s.is_style());
        let (out, report) = apply_plan(&model, &ReductionPlan::new(steps)).unwrap();
        prop_assert!(report.final_triangles <= report.initial_triangles);
        if style_only {
            prop_assert_eq!(report.final_triangles, report.initial_triangles);
        }
        prop_assert_eq!(report.total_delta(), report.initial_triangles as i64 - report.final_triangles as i64);
        prop_assert_eq!(report.final_triangles, plan_triangles(&out));
        out.validate().unwrap();
    }

    #[test]
    fn selectors_are_idempotent_on_survivors(seed in 0u64..1000, threshold in 0.0f64..3.0, which in 0usize..3) {
        let model = synth::random_tree(seed, 30);
        let (sel, step) = match which {
            0 => (Selector::Size { threshold }, ReductionStep::RemoveBySize { threshold }),
            1 => (Selector::Name { pattern: "N1".into(), is_regex: false }, ReductionStep::RemoveByName { pattern: "N1".into(), is_regex: false }),
            _ => (Selector::Type { node_type: "part".into() }, ReductionStep::RemoveByType { node_type: "part".into() }),
        };
        let (out, _) = apply_plan(&model, &ReductionPlan::new(vec![step])).unwrap();
        prop_assert!(select_nodes(&out, &sel).unwrap().is_empty());
    }

    #[test]
    fn style_steps_on_disjoint_ids_commute(seed in 0u64..1000, split in 1usize..20) {
        let model = synth::random_tree(seed, 20);
        let ids: Vec<NodeId> = model.node_ids().filter(|id| *id != model.root()).collect();
        let (a, b) = ids.split_at(split.min(ids.len()));
        let s1 = ReductionStep::SetColor { targets: Targets::Ids(a.to_vec()), rgb: [0.1, 0.2, 0.3] };
        let s2 = ReductionStep::SetColor { targets: Targets::Ids(b.to_vec()), rgb: [0.9, 0.8, 0.7] };
        let s3 = ReductionStep::SetOpacity { targets: Targets::Ids(b.to_vec()), value: 0.4 };
        let (x, _) = apply_plan(&model, &ReductionPlan::new(vec![s1.clone(), s2.clone(), s3.clone()])).unwrap();
        let (y, _) = apply_plan(&model, &ReductionPlan::new(vec![s3, s2, s1])).unwrap();
        prop_assert_eq!(x, y);
    }
}
