//! Geometry: parametric proxy head, meshes, cameras and occluders.

pub mod mesh;
pub mod proxy;
pub mod scene;

pub use mesh::Mesh;
pub use proxy::{FaceParams, ProxyHead, Region};
pub use scene::{Occluder, OccluderKind, Scene};
