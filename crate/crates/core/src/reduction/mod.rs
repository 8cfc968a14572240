//! Ordered reduction plans: node removal by id, size, name, type and
//! visibility, box cuts, style edits and LOD generation, with a per-step
//! triangle report and a budget verdict.
//!
//! Plans are JSON documents; each step is an object tagged by `"op"`:
//!
//! ```json
//! {"model_id": "m-1a2b3c4d", "ideal_budget": 2000000, "hard_budget": 3000000,
//!  "steps": [{"op": "remove_by_size", "threshold": 0.05},
//!            {"op": "set_color", "targets": "all", "rgb": [1, 0, 0]}]}
//! ```

mod boxcut;
mod select;
mod visibility;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::lod::{generate_lods, LodError};
use crate::scene::{quat_from_xyzw, total_triangles, LodPolicy, MeshId, NodeId, SceneModel};

pub use boxcut::{triangle_box_overlap, BoxMode, OrientedBox};
pub use select::{compile, select_nodes, SelectError, Selector};
pub use visibility::{camera_directions, visibility_cameras, visibility_cull, visible_from, CullError, MIN_CAMERAS, VISIBILITY_RESOLUTION};

pub const DEFAULT_IDEAL_BUDGET: u64 = 2_000_000;
pub const DEFAULT_HARD_BUDGET: u64 = 3_000_000;

/// Nodes a style or LOD step applies to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Targets {
    All,
    Ids(Vec<NodeId>),
}

impl Serialize for Targets {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Targets::All => s.serialize_str("all"),
            Targets::Ids(ids) => ids.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Targets {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Ids(Vec<NodeId>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "all" => Ok(Targets::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("targets must be \"all\" or a list of node ids, got \"{w}\""))),
            Raw::Ids(ids) => Ok(Targets::Ids(ids)),
        }
    }
}

fn identity_xyzw() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReductionStep {
    RemoveNodes {
        ids: Vec<NodeId>,
    },
    /// Removes nodes whose own mesh has a world-bounds diagonal below
    /// `threshold` meters.
    RemoveBySize {
        threshold: f64,
    },
    RemoveByName {
        pattern: String,
        #[serde(default)]
        is_regex: bool,
    },
    RemoveByType {
        node_type: String,
    },
    VisibilityCull {
        center: [f64; 3],
        radius: f64,
        camera_count: u32,
    },
    BoxCut {
        min: [f64; 3],
        max: [f64; 3],
        /// Box orientation about its center, quaternion `[x, y, z, w]`.
        #[serde(default = "identity_xyzw")]
        rotation: [f64; 4],
        mode: BoxMode,
    },
    SetColor {
        targets: Targets,
        rgb: [f64; 3],
    },
    SetOpacity {
        targets: Targets,
        value: f64,
    },
    SetOcclusionOnly {
        targets: Targets,
        flag: bool,
    },
    /// Builds reduced levels for every mesh used by the targets and selects
    /// `select_level` (clamped to the chain) on the targeted nodes.
    GenerateLods {
        targets: Targets,
        ratios: Vec<f64>,
        #[serde(default)]
        select_level: u32,
    },
}

impl ReductionStep {
    pub fn op_name(&self) -> &'static str {
        match self {
            ReductionStep::RemoveNodes { .. } => "remove_nodes",
            ReductionStep::RemoveBySize { .. } => "remove_by_size",
            ReductionStep::RemoveByName { .. } => "remove_by_name",
            ReductionStep::RemoveByType { .. } => "remove_by_type",
            ReductionStep::VisibilityCull { .. } => "visibility_cull",
            ReductionStep::BoxCut { .. } => "box_cut",
            ReductionStep::SetColor { .. } => "set_color",
            ReductionStep::SetOpacity { .. } => "set_opacity",
            ReductionStep::SetOcclusionOnly { .. } => "set_occlusion_only",
            ReductionStep::GenerateLods { .. } => "generate_lods",
        }
    }

    pub fn is_style(&self) -> bool {
        matches!(self, ReductionStep::SetColor { .. } | ReductionStep::SetOpacity { .. } | ReductionStep::SetOcclusionOnly { .. })
    }

    /// Parameter checks that need no model.
    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            ReductionStep::RemoveBySize { threshold } if !(threshold.is_finite() && *threshold >= 0.0) => {
                Err(format!("size threshold must be a non-negative number, got {threshold}"))
            }
            ReductionStep::RemoveByName { pattern, is_regex: true } => compile(pattern).map(|_| ()).map_err(|e| e.to_string()),
            ReductionStep::VisibilityCull { center, radius, camera_count } => {
                if !finite(center) {
                    Err("sphere center must be finite".into())
                } else if !(radius.is_finite() && *radius > 0.0) {
                    Err(format!("sphere radius must be positive, got {radius}"))
                } else if *camera_count < MIN_CAMERAS {
                    Err(format!("camera_count must be at least {MIN_CAMERAS}, got {camera_count}"))
                } else {
                    Ok(())
                }
            }
            ReductionStep::BoxCut { min, max, rotation, .. } => {
                if !finite(min) || !finite(max) || !finite(rotation) {
                    Err("box corners and rotation must be finite".into())
                } else if (0..3).any(|k| max[k] <= min[k]) {
                    Err("box must have positive volume (max > min on every axis)".into())
                } else if rotation.iter().map(|c| c * c).sum::<f64>() < 1e-12 {
                    Err("box rotation quaternion must be non-zero".into())
                } else {
                    Ok(())
                }
            }
            ReductionStep::SetColor { rgb, .. } if !rgb.iter().all(|c| (0.0..=1.0).contains(c)) => Err(format!("color components must lie in [0, 1], got {rgb:?}")),
            ReductionStep::SetOpacity { value, .. } if !(0.0..=1.0).contains(value) => Err(format!("opacity must lie in [0, 1], got {value}")),
            ReductionStep::GenerateLods { ratios, .. } => {
                if ratios.is_empty() {
                    Err("ratios must not be empty".into())
                } else if !ratios.iter().all(|r| *r > 0.0 && *r <= 1.0) || ratios.windows(2).any(|w| w[1] >= w[0]) {
                    Err(format!("ratios must be strictly decreasing within (0, 1], got {ratios:?}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

fn default_ideal() -> u64 {
    DEFAULT_IDEAL_BUDGET
}

fn default_hard() -> u64 {
    DEFAULT_HARD_BUDGET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionPlan {
    /// Model the plan was authored against; empty accepts any model.
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub steps: Vec<ReductionStep>,
    #[serde(default = "default_ideal")]
    pub ideal_budget: u64,
    #[serde(default = "default_hard")]
    pub hard_budget: u64,
}

impl Default for ReductionPlan {
    fn default() -> Self {
        ReductionPlan {
            model_id: String::new(),
            steps: Vec::new(),
            ideal_budget: DEFAULT_IDEAL_BUDGET,
            hard_budget: DEFAULT_HARD_BUDGET,
        }
    }
}

impl ReductionPlan {
    pub fn new(steps: Vec<ReductionStep>) -> Self {
        ReductionPlan { steps, ..Default::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let plan: ReductionPlan = serde_json::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.ideal_budget > self.hard_budget {
            return Err(PlanError::Budget {
                ideal: self.ideal_budget,
                hard: self.hard_budget,
            });
        }
        for (index, step) in self.steps.iter().enumerate() {
            step.validate().map_err(|message| PlanError::InvalidStep { index, message })?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("malformed plan: {0}")]
    Parse(String),
    #[error("step {index}: {message}")]
    InvalidStep { index: usize, message: String },
    #[error("step {index}: unknown node {node}")]
    UnknownNode { index: usize, node: NodeId },
    #[error("ideal budget {ideal} exceeds hard budget {hard}")]
    Budget { ideal: u64, hard: u64 },
    #[error("plan targets model '{plan}' but was applied to '{model}'")]
    ModelMismatch { plan: String, model: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    UnderIdeal,
    UnderHard,
    Over,
}

impl Verdict {
    pub fn of(triangles: u64, ideal: u64, hard: u64) -> Verdict {
        if triangles <= ideal {
            Verdict::UnderIdeal
        } else if triangles <= hard {
            Verdict::UnderHard
        } else {
            Verdict::Over
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::UnderIdeal => "under_ideal",
            Verdict::UnderHard => "under_hard",
            Verdict::Over => "over",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub op: String,
    /// Nodes deleted by this step, ascending.
    pub removed: Vec<NodeId>,
    /// Nodes modified in place (style, geometry, stripped mesh, LOD level).
    pub affected: usize,
    pub triangles_before: u64,
    pub triangles_after: u64,
    /// `triangles_before - triangles_after`.
    pub triangle_delta: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub model_id: String,
    pub initial_triangles: u64,
    pub final_triangles: u64,
    pub steps: Vec<StepReport>,
    pub ideal_budget: u64,
    pub hard_budget: u64,
    pub verdict: Verdict,
}

impl ReductionReport {
    pub fn total_delta(&self) -> i64 {
        self.steps.iter().map(|s| s.triangle_delta).sum()
    }
}

/// Triangle count the report and verdict use: each node at its selected
/// detail level.
pub fn plan_triangles(model: &SceneModel) -> u64 {
    total_triangles(model, LodPolicy::PerNodeSelected)
}

/// Applies every step in order to a copy of `model`.
pub fn apply_plan(model: &SceneModel, plan: &ReductionPlan) -> Result<(SceneModel, ReductionReport), PlanError> {
    plan.validate()?;
    if !plan.model_id.is_empty() && plan.model_id != model.model_id {
        return Err(PlanError::ModelMismatch {
            plan: plan.model_id.clone(),
            model: model.model_id.clone(),
        });
    }
    let mut out = model.clone();
    let initial = plan_triangles(&out);
    let mut steps = Vec::with_capacity(plan.steps.len());
    let mut before = initial;
    for (index, step) in plan.steps.iter().enumerate() {
        let (removed, affected) = apply_step(&mut out, index, step)?;
        out.prune_meshes();
        let after = plan_triangles(&out);
        tracing::debug!(index, op = step.op_name(), removed = removed.len(), before, after, "reduction step");
        steps.push(StepReport {
            index,
            op: step.op_name().to_string(),
            removed,
            affected,
            triangles_before: before,
            triangles_after: after,
            triangle_delta: before as i64 - after as i64,
        });
        before = after;
    }
    let report = ReductionReport {
        model_id: model.model_id.clone(),
        initial_triangles: initial,
        final_triangles: before,
        steps,
        ideal_budget: plan.ideal_budget,
        hard_budget: plan.hard_budget,
        verdict: Verdict::of(before, plan.ideal_budget, plan.hard_budget),
    };
    Ok((out, report))
}

fn resolve(model: &SceneModel, index: usize, targets: &Targets) -> Result<Vec<NodeId>, PlanError> {
    match targets {
        Targets::All => Ok(model.node_ids().collect()),
        Targets::Ids(ids) => {
            if let Some(node) = ids.iter().find(|id| !model.contains(**id)) {
                return Err(PlanError::UnknownNode { index, node: *node });
            }
            let set: BTreeSet<NodeId> = ids.iter().copied().collect();
            Ok(set.into_iter().collect())
        }
    }
}

/// Removes each listed node with its subtree; ids inside an already removed
/// subtree are skipped.
fn remove_subtrees(model: &mut SceneModel, ids: &BTreeSet<NodeId>) -> Vec<NodeId> {
    let mut removed = BTreeSet::new();
    for id in ids {
        if model.contains(*id) {
            removed.extend(model.remove_subtree(*id).expect("non-root node exists"));
        }
    }
    removed.into_iter().collect()
}

/// Drops mesh nodes in `dropped`: a node whose subtree still holds a
/// surviving mesh keeps its place with the mesh stripped, otherwise the
/// whole subtree goes. Returns `(removed, stripped count)`.
fn drop_mesh_nodes(model: &mut SceneModel, dropped: &BTreeSet<NodeId>) -> (Vec<NodeId>, usize) {
    let order = model.subtree(model.root()).expect("root exists");
    let mut removed = BTreeSet::new();
    let mut stripped = 0;
    for id in order {
        if !dropped.contains(&id) || !model.contains(id) {
            continue;
        }
        let sub = model.subtree(id).expect("node exists");
        let survivor = sub.iter().any(|n| *n != id && model.node(*n).unwrap().mesh().is_some() && !dropped.contains(n));
        if survivor || id == model.root() {
            model.set_node_mesh(id, None).expect("node exists");
            model.node_mut(id).unwrap().lod_level = 0;
            stripped += 1;
        } else {
            removed.extend(model.remove_subtree(id).expect("non-root node exists"));
        }
    }
    (removed.into_iter().collect(), stripped)
}

fn apply_step(model: &mut SceneModel, index: usize, step: &ReductionStep) -> Result<(Vec<NodeId>, usize), PlanError> {
    let invalid = |message: String| PlanError::InvalidStep { index, message };
    let root = model.root();
    Ok(match step {
        ReductionStep::RemoveNodes { ids } => {
            if let Some(node) = ids.iter().find(|id| !model.contains(**id)) {
                return Err(PlanError::UnknownNode { index, node: *node });
            }
            if ids.contains(&root) {
                return Err(invalid("the root node cannot be removed".into()));
            }
            (remove_subtrees(model, &ids.iter().copied().collect()), 0)
        }
        ReductionStep::RemoveBySize { threshold } => {
            let sel = select_nodes(model, &Selector::Size { threshold: *threshold }).map_err(|e| invalid(e.to_string()))?;
            (remove_subtrees(model, &sel), 0)
        }
        ReductionStep::RemoveByName { pattern, is_regex } => {
            let sel = select_nodes(
                model,
                &Selector::Name {
                    pattern: pattern.clone(),
                    is_regex: *is_regex,
                },
            )
            .map_err(|e| invalid(e.to_string()))?;
            (remove_subtrees(model, &sel), 0)
        }
        ReductionStep::RemoveByType { node_type } => {
            let sel = select_nodes(model, &Selector::Type { node_type: node_type.clone() }).map_err(|e| invalid(e.to_string()))?;
            (remove_subtrees(model, &sel), 0)
        }
        ReductionStep::VisibilityCull { center, radius, camera_count } => {
            let kept = visibility_cull(model, Vector3::from(*center), *radius, *camera_count).map_err(|e| invalid(e.to_string()))?;
            let dropped: BTreeSet<NodeId> = model.nodes().filter(|n| n.mesh().is_some() && !kept.contains(&n.id)).map(|n| n.id).collect();
            drop_mesh_nodes(model, &dropped)
        }
        ReductionStep::BoxCut { min, max, rotation, mode } => {
            let b = OrientedBox::new(*min, *max, quat_from_xyzw(*rotation));
            box_cut(model, &b, *mode)
        }
        ReductionStep::SetColor { targets, rgb } => {
            let ids = resolve(model, index, targets)?;
            for id in &ids {
                model.node_mut(*id).unwrap().style.color = Some(*rgb);
            }
            (Vec::new(), ids.len())
        }
        ReductionStep::SetOpacity { targets, value } => {
            let ids = resolve(model, index, targets)?;
            for id in &ids {
                model.node_mut(*id).unwrap().style.opacity = *value;
            }
            (Vec::new(), ids.len())
        }
        ReductionStep::SetOcclusionOnly { targets, flag } => {
            let ids = resolve(model, index, targets)?;
            for id in &ids {
                model.node_mut(*id).unwrap().style.occlusion_only = *flag;
            }
            (Vec::new(), ids.len())
        }
        ReductionStep::GenerateLods { targets, ratios, select_level } => {
            let ids: Vec<NodeId> = resolve(model, index, targets)?.into_iter().filter(|id| model.node(*id).unwrap().mesh().is_some()).collect();
            let meshes: BTreeSet<MeshId> = ids.iter().filter_map(|id| model.node(*id).unwrap().mesh()).collect();
            let built: Vec<(MeshId, Result<_, LodError>)> = meshes
                .into_par_iter()
                .map(|m| (m, generate_lods(model.mesh(m).expect("referenced mesh exists"), ratios)))
                .collect();
            for (m, mesh) in built {
                model.replace_mesh(m, mesh.map_err(|e| invalid(e.to_string()))?).expect("mesh exists");
            }
            for id in &ids {
                let levels = model.node_mesh(*id).unwrap().level_count() as u32;
                model.node_mut(*id).unwrap().lod_level = (*select_level).min(levels - 1);
            }
            (Vec::new(), ids.len())
        }
    })
}

/// Keeps (`Keep`) or removes (`Cut`) every level-0 triangle touching the
/// box, tested in world space. Straddling triangles count as touching.
/// Changed nodes get a private mesh without LODs; emptied nodes are removed
/// (or stripped when descendants keep geometry).
pub fn box_cut(model: &mut SceneModel, b: &OrientedBox, mode: BoxMode) -> (Vec<NodeId>, usize) {
    let worlds = model.world_transforms();
    let entries: Vec<(NodeId, MeshId)> = model.nodes().filter_map(|n| n.mesh().map(|m| (n.id, m))).collect();
    let results: Vec<(NodeId, Option<Vec<[u32; 3]>>)> = entries
        .par_iter()
        .map(|(id, m)| {
            let mesh = model.mesh(*m).expect("referenced mesh exists");
            let w = &worlds[id];
            let world: Vec<Vector3<f64>> = mesh.positions().iter().map(|p| w.transform_point(&Point3::from(*p)).coords).collect();
            let survivors: Vec<[u32; 3]> = mesh
                .indices()
                .iter()
                .filter(|t| b.touches(&[world[t[0] as usize], world[t[1] as usize], world[t[2] as usize]]) == (mode == BoxMode::Keep))
                .copied()
                .collect();
            let changed = survivors.len() != mesh.triangle_count();
            (*id, changed.then_some(survivors))
        })
        .collect();

    let mut emptied = BTreeSet::new();
    let mut modified = 0;
    let mut private: BTreeMap<NodeId, crate::scene::Mesh> = BTreeMap::new();
    for (id, survivors) in results {
        let Some(tris) = survivors else { continue };
        if tris.is_empty() {
            emptied.insert(id);
        } else {
            private.insert(id, model.node_mesh(id).unwrap().subset(tris));
        }
    }
    for (id, mesh) in private {
        let m = model.add_mesh(mesh);
        model.set_node_mesh(id, Some(m)).expect("node exists");
        model.node_mut(id).unwrap().lod_level = 0;
        modified += 1;
    }
    let (removed, stripped) = drop_mesh_nodes(model, &emptied);
    model.prune_meshes();
    (removed, modified + stripped)
}
