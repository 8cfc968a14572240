//! Scene model, mesh interchange, level-of-detail generation, model
//! reduction and headless rendering for the orbitcad server.

pub mod container;
pub mod io;
pub mod lod;
pub mod reduction;
pub mod render;
pub mod scene;
pub mod synth;

pub use scene::{
    compute_world_bounds, flatten, total_triangles, Aabb, FlatEntry, LodPolicy, Mesh, MeshId, NodeId, RenderStyle,
    SceneError, SceneModel, SceneNode, Transform,
};
