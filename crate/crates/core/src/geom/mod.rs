//! Point-set primitives: clouds, loading, synthetic scenes, block sampling,
//! farthest point sampling, and exact k-nearest-neighbor queries.

mod block;
mod cloud;
mod fps;
mod knn;
mod synth;

pub use block::sample_block;
pub use cloud::{load_point_cloud, write_point_cloud, FeatureSchema, PointCloud};
pub use fps::farthest_point_sample;
pub use knn::{knn, NeighborTable};
pub use synth::{synth_scene, Primitive, PrimitiveKind, SceneSpec};

/// 3-D position in meters.
pub type Point3 = [f64; 3];

pub(crate) fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
