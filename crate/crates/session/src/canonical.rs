//! Byte-comparable state serialization: sorted keys, no whitespace, every
//! float printed with nine decimals (negative zero folded into zero).
//! Integers print as integers.
//!
//! Slides are serialized as the state their ops fold to, so two slides
//! compare equal whenever they restore the same thing.

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::state::{slide_state, SessionState};

fn model_value(s: &SessionState) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("active_model".into(), json!(s.active_model));
    m.insert("whole_transform".into(), json!(s.whole_transform));
    m.insert(
        "node_transforms".into(),
        Value::Object(s.node_transforms.iter().map(|(k, v)| (k.0.to_string(), json!(v))).collect()),
    );
    m.insert(
        "node_visibility".into(),
        Value::Object(s.node_visibility.iter().map(|(k, v)| (k.0.to_string(), json!(v))).collect()),
    );
    m.insert(
        "cut_plane".into(),
        s.cut_plane.map_or(Value::Null, |c| json!({"axis": c.axis, "offset": c.offset})),
    );
    m.insert(
        "poi".into(),
        s.poi.as_ref().map_or(Value::Null, |p| json!({"position": p.position, "placer": p.placer, "anchor": p.anchor})),
    );
    m
}

/// The canonical state as a JSON value. Participants are included only when
/// `participants` is set.
pub fn state_value(s: &SessionState, participants: bool) -> Value {
    let mut m = model_value(s);
    let slides = s
        .slides
        .iter()
        .map(|(id, slide)| {
            // Slide ops come from squashing, so they always fold.
            let snap = slide_state(slide).unwrap_or_default();
            (id.clone(), json!({"name": slide.name, "state": Value::Object(model_value(&snap))}))
        })
        .collect();
    m.insert("slides".into(), Value::Object(slides));
    if participants {
        let ps = s
            .participants
            .iter()
            .map(|(cid, p)| (cid.clone(), json!({"name": p.name, "kind": p.kind, "pose": p.pose})))
            .collect();
        m.insert("participants".into(), Value::Object(ps));
    }
    Value::Object(m)
}

/// Writes `v` in canonical form.
pub fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                let f = n.as_f64().unwrap_or(0.0);
                let text = format!("{f:.9}");
                // -0.0 and tiny negatives that round to zero.
                if text.trim_start_matches('-').trim_start_matches(['0', '.']).is_empty() {
                    out.push_str("0.000000000");
                } else {
                    out.push_str(&text);
                }
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(x, out);
            }
            out.push(']');
        }
        Value::Object(o) => {
            let mut keys: Vec<&String> = o.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&o[k], out);
            }
            out.push('}');
        }
    }
}

pub fn to_canonical(v: &Value) -> String {
    let mut s = String::new();
    write_canonical(v, &mut s);
    s
}

/// Canonical serialization without participants: what squashing preserves.
pub fn canonical_json(s: &SessionState) -> String {
    to_canonical(&state_value(s, false))
}

/// Canonical serialization including participants and their poses.
pub fn canonical_json_full(s: &SessionState) -> String {
    to_canonical(&state_value(s, true))
}

/// Hex SHA-256 of [`canonical_json_full`].
pub fn state_hash(s: &SessionState) -> String {
    hex::encode(Sha256::digest(canonical_json_full(s).as_bytes()))
}
