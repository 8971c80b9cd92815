//! Training losses (projection, ACD) and evaluation metrics (CD, HD, P2F).

pub mod metrics;
pub mod report;
pub mod tape;

pub use metrics::{
    acd, chamfer, directed_mean_min_sq, hausdorff, p2f, project_point, projection_distance,
    projection_loss, total_loss, LossWeights, ProjectionConfig,
};
pub use report::MetricReport;
