//! Seeded random op streams for property tests, golden vectors and load
//! simulation.

use nalgebra::Vector3;
use orbitcad_core::render::Axis;
use orbitcad_core::scene::quat_from_xyzw;
use orbitcad_core::synth::SplitMix64;
use orbitcad_core::{NodeId, Transform};

use crate::op::{ClientKind, NudgeAxis, NudgeTarget, Payload, Pose, ScalePreset, ScaleSpec, SessionOp};

#[derive(Clone, Debug)]
pub struct GenConfig {
    /// Node ids are drawn from `1..=nodes`.
    pub nodes: u32,
    pub clients: u32,
    /// `create_slide` is not generated while this many slides exist.
    pub max_slides: usize,
    /// Include joins, leaves and poses.
    pub participants: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            nodes: 20,
            clients: 4,
            max_slides: 3,
            participants: true,
        }
    }
}

fn pick<'a, T>(rng: &mut SplitMix64, xs: &'a [T]) -> &'a T {
    &xs[rng.below(xs.len() as u64) as usize]
}

/// Coordinates on a millimeter grid keep golden files short and exact.
fn coord(rng: &mut SplitMix64, span: f64) -> f64 {
    (rng.range(-span, span) * 1000.0).round() / 1000.0
}

fn vec3(rng: &mut SplitMix64, span: f64) -> [f64; 3] {
    [coord(rng, span), coord(rng, span), coord(rng, span)]
}

pub fn random_transform(rng: &mut SplitMix64) -> Transform {
    let q = quat_from_xyzw([rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(0.1, 1.0)]);
    let s = (rng.range(0.05, 3.0) * 100.0).round() / 100.0;
    Transform::new(Vector3::from(vec3(rng, 5.0)), q, Vector3::repeat(s))
}

pub fn random_pose(rng: &mut SplitMix64) -> Pose {
    let q = quat_from_xyzw([rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(0.1, 1.0)]);
    Pose {
        position: vec3(rng, 3.0),
        orientation: orbitcad_core::scene::quat_to_xyzw(&q),
    }
}

/// Stateful generator: tracks live slides and participants so most
/// references resolve, with a few dangling ones mixed in.
pub struct OpGen {
    rng: SplitMix64,
    cfg: GenConfig,
    next_id: u64,
    time: u64,
    slides: Vec<String>,
    joined: Vec<String>,
}

impl OpGen {
    pub fn new(seed: u64, cfg: GenConfig) -> Self {
        OpGen {
            rng: SplitMix64::new(seed),
            cfg,
            next_id: 1,
            time: 1_700_000_000_000,
            slides: Vec::new(),
            joined: Vec::new(),
        }
    }

    fn node(&mut self) -> NodeId {
        NodeId(1 + self.rng.below(self.cfg.nodes.max(1) as u64) as u32)
    }

    /// A payload from client `cid`, not yet sequenced.
    pub fn payload(&mut self, cid: &str) -> Payload {
        loop {
            let roll = self.rng.below(100);
            let p = match roll {
                0..=17 => Payload::TransformNode {
                    node: self.node(),
                    transform: random_transform(&mut self.rng),
                },
                18..=31 => {
                    let target = if self.rng.below(4) == 0 { NudgeTarget::Whole } else { NudgeTarget::Node(self.node()) };
                    let axis = *pick(&mut self.rng, &[NudgeAxis::X, NudgeAxis::Y, NudgeAxis::Z, NudgeAxis::Free]);
                    Payload::NudgeTransform {
                        target,
                        axis,
                        delta: vec3(&mut self.rng, 0.5),
                    }
                }
                32..=45 => Payload::SetNodeVisibility {
                    node: self.node(),
                    visible: self.rng.below(2) == 0,
                },
                46..=49 => Payload::TransformWhole {
                    transform: random_transform(&mut self.rng),
                },
                50..=53 => Payload::SetScale(if self.rng.below(2) == 0 {
                    ScaleSpec::Preset {
                        preset: *pick(&mut self.rng, &[ScalePreset::Full, ScalePreset::Tabletop, ScalePreset::Handheld]),
                    }
                } else {
                    ScaleSpec::Factor {
                        factor: (self.rng.range(0.01, 4.0) * 100.0).round() / 100.0 + 0.01,
                    }
                }),
                54..=60 => Payload::SetCutPlane {
                    axis: *pick(&mut self.rng, &[Axis::X, Axis::Y, Axis::Z]),
                    offset: coord(&mut self.rng, 2.0),
                    enabled: self.rng.below(4) != 0,
                },
                61..=66 => Payload::PlacePoi {
                    position: vec3(&mut self.rng, 3.0),
                    anchor: (self.rng.below(2) == 0).then(|| self.node()),
                },
                67..=69 => Payload::ClearPoi {},
                70 => Payload::SetActiveModel {
                    model_id: format!("model-{}", self.rng.below(3)),
                },
                71..=73 if self.slides.len() < self.cfg.max_slides => Payload::CreateSlide {
                    name: format!("slide {}", self.rng.below(1000)),
                },
                74..=77 if !self.slides.is_empty() || self.rng.below(8) == 0 => Payload::LoadSlide {
                    slide_id: self.slide_ref(),
                },
                78..=79 if !self.slides.is_empty() => Payload::DeleteSlide {
                    slide_id: self.slide_ref(),
                },
                80..=91 if self.cfg.participants => Payload::ParticipantPose {
                    pose: random_pose(&mut self.rng),
                },
                92..=95 if self.cfg.participants => Payload::Join {
                    name: format!("user {cid}"),
                    kind: if self.rng.below(2) == 0 { ClientKind::Headset } else { ClientKind::Web },
                },
                96..=97 if self.cfg.participants => Payload::Leave {},
                _ => continue,
            };
            return p;
        }
    }

    fn slide_ref(&mut self) -> String {
        if self.slides.is_empty() || self.rng.below(10) == 0 {
            format!("s{}", 900_000 + self.rng.below(10))
        } else {
            pick(&mut self.rng, &self.slides).clone()
        }
    }

    /// Assigns the next id (ephemeral ops reuse the current one) and keeps
    /// the generator's view of slides and participants current.
    pub fn sequence(&mut self, cid: &str, payload: Payload) -> SessionOp {
        self.time += 1 + self.rng.below(250);
        let id = if payload.is_ephemeral() {
            self.next_id - 1
        } else {
            self.next_id += 1;
            self.next_id - 1
        };
        match &payload {
            Payload::CreateSlide { .. } => self.slides.push(format!("s{id}")),
            Payload::DeleteSlide { slide_id } => self.slides.retain(|s| s != slide_id),
            Payload::Join { .. } if !self.joined.iter().any(|c| c == cid) => self.joined.push(cid.to_string()),
            Payload::Leave {} => self.joined.retain(|c| c != cid),
            _ => {}
        }
        SessionOp::new(id, cid, self.time, payload)
    }

    pub fn next_op(&mut self) -> SessionOp {
        let cid = format!("c{}", self.rng.below(self.cfg.clients.max(1) as u64));
        let p = self.payload(&cid);
        self.sequence(&cid, p)
    }
}

/// A sequenced log of `len` ops.
pub fn random_log(seed: u64, len: usize, cfg: &GenConfig) -> Vec<SessionOp> {
    let mut g = OpGen::new(seed, cfg.clone());
    (0..len).map(|_| g.next_op()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::fold;

    #[test]
    fn logs_are_deterministic_and_ordered() {
        let cfg = GenConfig::default();
        let a = random_log(9, 500, &cfg);
        assert_eq!(a, random_log(9, 500, &cfg));
        fold(&a).unwrap();
        let types: std::collections::BTreeSet<&str> = a.iter().map(|o| o.payload.type_name()).collect();
        assert!(types.len() >= 14, "{types:?}");
    }

    #[test]
    fn slide_cap_is_respected() {
        let cfg = GenConfig { max_slides: 2, ..Default::default() };
        let log = random_log(4, 3000, &cfg);
        assert!(fold(&log).unwrap().slides.len() <= 2);
    }
}
