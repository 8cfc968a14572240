use serde::{Deserialize, Serialize};

use crate::scene::NodeId;

/// Nodes split into successive frames, each drawing at most `budget`
/// triangles (a node larger than the budget gets a frame of its own).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawPlan {
    pub frames: Vec<Vec<NodeId>>,
    pub budget: u64,
}

impl DrawPlan {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Sorts by triangle count (largest first, ties by id) and fills each frame
/// by scanning the remaining nodes in that order and taking every node that
/// still fits.
pub fn plan_iterative_draw(nodes: &[(NodeId, u64)], budget: u64) -> DrawPlan {
    let budget = budget.max(1);
    let mut order: Vec<(NodeId, u64)> = nodes.to_vec();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut remaining: Vec<Option<(NodeId, u64)>> = order.into_iter().map(Some).collect();
    let mut left = remaining.len();
    let mut first = 0;
    let mut frames = Vec::new();
    while left > 0 {
        while remaining[first].is_none() {
            first += 1;
        }
        let mut frame = Vec::new();
        let mut used = 0u64;
        for slot in remaining[first..].iter_mut() {
            let Some((id, n)) = *slot else { continue };
            if frame.is_empty() || used + n <= budget {
                frame.push(id);
                used += n;
                *slot = None;
                left -= 1;
            }
        }
        frames.push(frame);
    }
    DrawPlan { frames, budget }
}
