use std::collections::BTreeSet;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::scene::{node_mesh_bounds, NodeId, SceneModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum Selector {
    /// World-bounds diagonal of the node's own mesh strictly below the
    /// threshold (meters).
    Size { threshold: f64 },
    /// Case-sensitive substring, or a regular expression searched anywhere in
    /// the name (anchor with `^…$` for whole-name matches).
    Name { pattern: String, is_regex: bool },
    /// Exact match on `node_type`.
    Type { node_type: String },
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid regular expression '{pattern}': {message}")]
pub struct SelectError {
    pub pattern: String,
    pub message: String,
}

pub fn compile(pattern: &str) -> Result<Regex, SelectError> {
    Regex::new(pattern).map_err(|e| SelectError {
        pattern: pattern.to_string(),
        message: e.to_string(),
    })
}

/// Nodes matching `selector`. The root is never selected.
pub fn select_nodes(model: &SceneModel, selector: &Selector) -> Result<BTreeSet<NodeId>, SelectError> {
    let root = model.root();
    let candidates = model.nodes().filter(|n| n.id != root);
    Ok(match selector {
        Selector::Size { threshold } => {
            let worlds = model.world_transforms();
            candidates
                .filter(|n| n.mesh().is_some())
                .filter(|n| node_mesh_bounds(model, n.id, &worlds[&n.id]).diagonal() < *threshold)
                .map(|n| n.id)
                .collect()
        }
        Selector::Name { pattern, is_regex: false } => candidates.filter(|n| n.name.contains(pattern.as_str())).map(|n| n.id).collect(),
        Selector::Name { pattern, is_regex: true } => {
            let re = compile(pattern)?;
            candidates.filter(|n| re.is_match(&n.name)).map(|n| n.id).collect()
        }
        Selector::Type { node_type } => candidates.filter(|n| &n.node_type == node_type).map(|n| n.id).collect(),
    })
}
