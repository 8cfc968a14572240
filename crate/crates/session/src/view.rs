//! Applying session state to a model for display.

use std::collections::BTreeSet;

use orbitcad_core::{NodeId, SceneModel, Transform};

/// What a client draws: the model with node offsets baked in, the whole-model
/// transform, and the hidden nodes (their subtrees are hidden too).
#[derive(Clone, Debug)]
pub struct SessionView {
    pub model: SceneModel,
    pub whole: Transform,
    pub hidden: BTreeSet<NodeId>,
}

/// A node's session offset applies after its authored local transform, so
/// nudges move parts along their parent's axes. Entries for nodes the model
/// lacks are skipped.
pub fn session_view(state: &crate::SessionState, model: &SceneModel) -> SessionView {
    let mut model = model.clone();
    for (id, offset) in &state.node_transforms {
        if let Some(n) = model.node_mut(*id) {
            n.local_transform = offset.compose(&n.local_transform);
        }
    }
    let hidden = state
        .node_visibility
        .iter()
        .filter(|(id, visible)| !**visible && model.node(**id).is_some())
        .map(|(id, _)| *id)
        .collect();
    SessionView {
        model,
        whole: state.whole_transform,
        hidden,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SessionState;
    use nalgebra::Vector3;
    use orbitcad_core::synth;

    #[test]
    fn offsets_compose_after_local() {
        let (model, small, _) = synth::two_size_fixture(0.5, 1.0);
        let mut state = SessionState::new();
        state.node_transforms.insert(small, Transform::from_translation(Vector3::new(0.0, 2.0, 0.0)));
        state.node_transforms.insert(NodeId(999), Transform::identity());
        state.node_visibility.insert(small, false);
        let v = session_view(&state, &model);
        let before = model.node(small).unwrap().local_transform.translation;
        assert_eq!(v.model.node(small).unwrap().local_transform.translation, before + Vector3::new(0.0, 2.0, 0.0));
        assert_eq!(v.hidden, [small].into());
    }
}
