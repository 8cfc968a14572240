//! In-memory scene graph: a rooted node tree whose nodes carry a local
//! transform, an optional reference to a shared mesh, and a render style.
//!
//! Meshes are instanced: several nodes may reference one [`MeshId`], and
//! every instance counts separately toward the triangle total.

mod aabb;
mod mesh;
mod transform;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aabb::Aabb;
pub use mesh::{LodLevel, Mesh};
pub use transform::{quat_from_xyzw, quat_to_xyzw, Transform, QUAT_NORM_TOLERANCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeshId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for MeshId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown mesh {0}")]
    UnknownMesh(MeshId),
    #[error("triangle {triangle} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        vertex_count: usize,
    },
    #[error("lod level {level} has more triangles than the level before it")]
    LodOrder { level: usize },
    #[error("the root node cannot be removed")]
    RemoveRoot,
    #[error("moving node {node} under {parent} would create a cycle")]
    Cycle { node: NodeId, parent: NodeId },
    #[error("invalid scene graph: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderStyle {
    /// Linear RGB in [0,1]; `None` renders with the default material color.
    pub color: Option<[f64; 3]>,
    pub opacity: f64,
    /// Written to the depth buffer only, never to color.
    pub occlusion_only: bool,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            color: None,
            opacity: 1.0,
            occlusion_only: false,
        }
    }
}

impl RenderStyle {
    pub fn is_opaque(&self) -> bool {
        self.opacity >= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneNode {
    pub id: NodeId,
    pub name: String,
    /// CAD metadata type string; empty when the source format has none.
    pub node_type: String,
    pub local_transform: Transform,
    pub style: RenderStyle,
    /// Detail level drawn for this instance (clamped to the mesh's chain).
    pub lod_level: u32,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    mesh: Option<MeshId>,
}

impl SceneNode {
    fn new(id: NodeId, name: &str, parent: Option<NodeId>) -> Self {
        Self {
            id,
            name: name.to_string(),
            node_type: String::new(),
            local_transform: Transform::identity(),
            style: RenderStyle::default(),
            lod_level: 0,
            parent,
            children: Vec::new(),
            mesh: None,
        }
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn mesh(&self) -> Option<MeshId> {
        self.mesh
    }
}

/// Which detail level [`total_triangles`] counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LodPolicy {
    Level0,
    PerNodeSelected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub model_id: String,
    /// Meters per model unit.
    pub unit_scale: f64,
    root: NodeId,
    nodes: BTreeMap<NodeId, SceneNode>,
    meshes: BTreeMap<MeshId, Arc<Mesh>>,
}

impl SceneModel {
    pub fn new(model_id: impl Into<String>, root_name: &str) -> Self {
        let root = NodeId(0);
        let mut nodes = BTreeMap::new();
        nodes.insert(root, SceneNode::new(root, root_name, None));
        Self {
            model_id: model_id.into(),
            unit_scale: 1.0,
            root,
            nodes,
            meshes: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> Option<&SceneNode> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut SceneNode> {
        self.nodes.get_mut(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SceneNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn mesh(&self, id: MeshId) -> Option<&Arc<Mesh>> {
        self.meshes.get(&id)
    }

    pub fn meshes(&self) -> impl Iterator<Item = (MeshId, &Arc<Mesh>)> {
        self.meshes.iter().map(|(k, v)| (*k, v))
    }

    pub fn mesh_count(&self) -> usize {
        self.meshes.len()
    }

    pub fn node_mesh(&self, id: NodeId) -> Option<&Arc<Mesh>> {
        self.nodes.get(&id)?.mesh.and_then(|m| self.meshes.get(&m))
    }

    pub fn add_node(&mut self, parent: NodeId, name: &str) -> Result<NodeId, SceneError> {
        let id = NodeId(self.nodes.keys().next_back().map_or(0, |n| n.0 + 1));
        self.insert_node(id, parent, name)?;
        Ok(id)
    }

    /// Adds a node with a caller-chosen id (used by deserializers).
    pub fn insert_node(&mut self, id: NodeId, parent: NodeId, name: &str) -> Result<(), SceneError> {
        if self.nodes.contains_key(&id) {
            return Err(SceneError::Invalid(format!("duplicate node id {id}")));
        }
        let p = self.nodes.get_mut(&parent).ok_or(SceneError::UnknownNode(parent))?;
        p.children.push(id);
        self.nodes.insert(id, SceneNode::new(id, name, Some(parent)));
        Ok(())
    }

    pub fn add_mesh(&mut self, mesh: Mesh) -> MeshId {
        let id = MeshId(self.meshes.keys().next_back().map_or(0, |m| m.0 + 1));
        self.meshes.insert(id, Arc::new(mesh));
        id
    }

    pub fn insert_mesh(&mut self, id: MeshId, mesh: Arc<Mesh>) {
        self.meshes.insert(id, mesh);
    }

    pub fn set_node_mesh(&mut self, node: NodeId, mesh: Option<MeshId>) -> Result<(), SceneError> {
        if let Some(m) = mesh {
            if !self.meshes.contains_key(&m) {
                return Err(SceneError::UnknownMesh(m));
            }
        }
        self.nodes.get_mut(&node).ok_or(SceneError::UnknownNode(node))?.mesh = mesh;
        Ok(())
    }

    /// Replaces a mesh for every node that references it.
    pub fn replace_mesh(&mut self, id: MeshId, mesh: Mesh) -> Result<(), SceneError> {
        let slot = self.meshes.get_mut(&id).ok_or(SceneError::UnknownMesh(id))?;
        *slot = Arc::new(mesh);
        Ok(())
    }

    /// Preorder list of `id` and all its descendants.
    pub fn subtree(&self, id: NodeId) -> Result<Vec<NodeId>, SceneError> {
        if !self.nodes.contains_key(&id) {
            return Err(SceneError::UnknownNode(id));
        }
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[&n].children.iter().rev());
        }
        Ok(out)
    }

    /// Removes `id` and its whole subtree; returns the removed ids in preorder.
    pub fn remove_subtree(&mut self, id: NodeId) -> Result<Vec<NodeId>, SceneError> {
        if id == self.root {
            return Err(SceneError::RemoveRoot);
        }
        let removed = self.subtree(id)?;
        if let Some(parent) = self.nodes[&id].parent {
            if let Some(p) = self.nodes.get_mut(&parent) {
                p.children.retain(|c| *c != id);
            }
        }
        for n in &removed {
            self.nodes.remove(n);
        }
        Ok(removed)
    }

    pub fn reparent(&mut self, id: NodeId, new_parent: NodeId) -> Result<(), SceneError> {
        if id == self.root {
            return Err(SceneError::Invalid("the root cannot be reparented".into()));
        }
        if !self.nodes.contains_key(&new_parent) {
            return Err(SceneError::UnknownNode(new_parent));
        }
        if self.subtree(id)?.contains(&new_parent) {
            return Err(SceneError::Cycle { node: id, parent: new_parent });
        }
        let old = self.nodes[&id].parent.expect("non-root has a parent");
        self.nodes.get_mut(&old).unwrap().children.retain(|c| *c != id);
        self.nodes.get_mut(&new_parent).unwrap().children.push(id);
        self.nodes.get_mut(&id).unwrap().parent = Some(new_parent);
        Ok(())
    }

    /// Drops meshes that no node references.
    pub fn prune_meshes(&mut self) {
        let used: BTreeSet<MeshId> = self.nodes.values().filter_map(|n| n.mesh).collect();
        self.meshes.retain(|id, _| used.contains(id));
    }

    /// Transform mapping model units under the root into world meters.
    pub fn base_transform(&self) -> Transform {
        Transform::from_uniform_scale(self.unit_scale)
    }

    /// World transform of every node, keyed by id.
    pub fn world_transforms(&self) -> BTreeMap<NodeId, Transform> {
        let mut out = BTreeMap::new();
        let base = self.base_transform();
        let mut stack = vec![(self.root, base)];
        while let Some((id, parent_world)) = stack.pop() {
            let node = &self.nodes[&id];
            let world = parent_world.compose(&node.local_transform);
            out.insert(id, world);
            for c in node.children.iter().rev() {
                stack.push((*c, world));
            }
        }
        out
    }

    pub fn world_transform(&self, id: NodeId) -> Result<Transform, SceneError> {
        let mut chain = Vec::new();
        let mut cur = Some(id);
        while let Some(n) = cur {
            let node = self.nodes.get(&n).ok_or(SceneError::UnknownNode(n))?;
            chain.push(node.local_transform);
            cur = node.parent;
        }
        let mut world = self.base_transform();
        for t in chain.iter().rev() {
            world = world.compose(t);
        }
        Ok(world)
    }

    /// Checks the tree and reference invariants.
    pub fn validate(&self) -> Result<(), SceneError> {
        let root = self.nodes.get(&self.root).ok_or(SceneError::UnknownNode(self.root))?;
        if root.parent.is_some() {
            return Err(SceneError::Invalid("root has a parent".into()));
        }
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return Err(SceneError::Invalid("unit scale must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                return Err(SceneError::Invalid(format!("node {n} reachable twice")));
            }
            let node = self.nodes.get(&n).ok_or(SceneError::UnknownNode(n))?;
            for c in &node.children {
                let child = self.nodes.get(c).ok_or(SceneError::UnknownNode(*c))?;
                if child.parent != Some(n) {
                    return Err(SceneError::Invalid(format!("node {c} does not point back to parent {n}")));
                }
                stack.push(*c);
            }
            if let Some(m) = node.mesh {
                if !self.meshes.contains_key(&m) {
                    return Err(SceneError::UnknownMesh(m));
                }
            }
        }
        if seen.len() != self.nodes.len() {
            return Err(SceneError::Invalid("nodes unreachable from the root".into()));
        }
        Ok(())
    }

    pub(crate) fn set_root(&mut self, root: NodeId) {
        self.root = root;
    }

    pub(crate) fn raw_insert(&mut self, node: SceneNode) {
        self.nodes.insert(node.id, node);
    }

    pub(crate) fn empty_with_root(model_id: String, unit_scale: f64, root: NodeId) -> Self {
        Self {
            model_id,
            unit_scale,
            root,
            nodes: BTreeMap::new(),
            meshes: BTreeMap::new(),
        }
    }
}

pub(crate) fn raw_node(
    id: NodeId,
    name: String,
    node_type: String,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    mesh: Option<MeshId>,
) -> SceneNode {
    SceneNode {
        id,
        name,
        node_type,
        local_transform: Transform::identity(),
        style: RenderStyle::default(),
        lod_level: 0,
        parent,
        children,
        mesh,
    }
}

/// World-space bounds of a node's own mesh (descendants excluded).
pub fn node_mesh_bounds(model: &SceneModel, node: NodeId, world: &Transform) -> Aabb {
    let Some(mesh) = model.node_mesh(node) else {
        return Aabb::EMPTY;
    };
    let mut b = Aabb::EMPTY;
    for p in mesh.positions() {
        b.include(&world.transform_point(&nalgebra::Point3::from(*p)).coords);
    }
    b
}

/// Bounds of the node's mesh and every descendant mesh, in world meters.
/// A subtree without meshes yields [`Aabb::EMPTY`].
pub fn compute_world_bounds(model: &SceneModel, node: NodeId) -> Result<Aabb, SceneError> {
    let ids = model.subtree(node)?;
    let start = model.world_transform(node)?;
    let mut worlds = BTreeMap::new();
    worlds.insert(node, start);
    let mut out = Aabb::EMPTY;
    for id in ids {
        let n = &model.nodes[&id];
        let w = if id == node {
            start
        } else {
            let pw = worlds[&n.parent.expect("descendant has a parent")];
            pw.compose(&n.local_transform)
        };
        worlds.insert(id, w);
        out = out.union(&node_mesh_bounds(model, id, &w));
    }
    Ok(out)
}

/// Sum of triangles over every mesh-bearing node; instances count separately.
pub fn total_triangles(model: &SceneModel, policy: LodPolicy) -> u64 {
    model
        .nodes
        .values()
        .filter_map(|n| {
            let mesh = model.meshes.get(&n.mesh?)?;
            Some(match policy {
                LodPolicy::Level0 => mesh.triangle_count(),
                LodPolicy::PerNodeSelected => mesh.level_triangle_count(n.lod_level as usize),
            } as u64)
        })
        .sum()
}

/// Per-node triangle count under `policy`; 0 for meshless nodes.
pub fn node_triangles(model: &SceneModel, node: &SceneNode, policy: LodPolicy) -> u64 {
    node.mesh
        .and_then(|m| model.meshes.get(&m))
        .map_or(0, |mesh| match policy {
            LodPolicy::Level0 => mesh.triangle_count() as u64,
            LodPolicy::PerNodeSelected => mesh.level_triangle_count(node.lod_level as usize) as u64,
        })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatEntry {
    pub node: NodeId,
    pub world: Transform,
    pub mesh: MeshId,
}

/// Depth-first, parent-before-child list of mesh-bearing nodes with their
/// composed world transforms.
pub fn flatten(model: &SceneModel) -> Vec<FlatEntry> {
    let mut out = Vec::new();
    let mut stack = vec![(model.root, model.base_transform())];
    while let Some((id, parent_world)) = stack.pop() {
        let node = &model.nodes[&id];
        let world = parent_world.compose(&node.local_transform);
        if let Some(mesh) = node.mesh {
            out.push(FlatEntry { node: id, world, mesh });
        }
        for c in node.children.iter().rev() {
            stack.push((*c, world));
        }
    }
    out
}
