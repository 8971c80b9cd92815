//! Point clouds, meshes, neighbor search, sampling and file formats.

pub mod cloud;
pub mod fps;
pub mod io;
pub mod knn;
pub mod mesh;
pub mod patches;

pub use cloud::{normalize, NormalizationTransform, Patch, Point3, PointCloud, TriangleMesh};
pub use fps::farthest_point_sample;
pub use knn::{knn, KdTree};
pub use mesh::{point_mesh_distance, point_triangle_distance, sample_mesh};
pub use patches::{extract_patches, merge_patches};
