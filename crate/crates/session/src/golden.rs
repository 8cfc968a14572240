//! Shared op-stream vectors. Any client that claims to mirror session state
//! must fold each vector's `ops` to exactly `canonical` / `canonical_full`,
//! and squash them to exactly `squash`.

use serde::{Deserialize, Serialize};

use crate::canonical::{canonical_json, canonical_json_full};
use crate::gen::{random_log, GenConfig};
use crate::op::SessionOp;
use crate::squash::squash;
use crate::state::fold;

pub const VECTOR_COUNT: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenVector {
    pub name: String,
    pub ops: Vec<SessionOp>,
    pub canonical: String,
    pub canonical_full: String,
    pub squash: Vec<SessionOp>,
}

pub fn vector(i: usize) -> GoldenVector {
    let cfg = GenConfig {
        nodes: 6 + (i % 15) as u32,
        clients: 1 + (i % 4) as u32,
        max_slides: i % 4,
        participants: i % 5 != 0,
    };
    let len = 1 + (i * 7919) % 30;
    let ops = random_log(0x5e55_0000 + i as u64, len, &cfg);
    let state = fold(&ops).expect("generated logs are ordered");
    GoldenVector {
        name: format!("vector-{i:03}"),
        canonical: canonical_json(&state),
        canonical_full: canonical_json_full(&state),
        squash: squash(&ops).expect("generated logs are ordered"),
        ops,
    }
}

pub fn vectors() -> Vec<GoldenVector> {
    (0..VECTOR_COUNT).map(vector).collect()
}

/// One JSON object per line.
pub fn to_jsonl(vs: &[GoldenVector]) -> String {
    let mut out = String::new();
    for v in vs {
        out.push_str(&serde_json::to_string(v).expect("vector serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<GoldenVector>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
