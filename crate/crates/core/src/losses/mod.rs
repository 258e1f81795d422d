//! Loss terms and distortion metrics.
//!
//! Each training term is a plain function returning its value together with
//! gradients for its inputs; trainers insert them into the tape as loss
//! nodes. Terms are averaged (over points, corners or edges) so the fixed
//! weights do not depend on mesh size.

mod chamfer;
mod cycle;
mod ddl;
mod metrics;
mod objective;
mod triangle;
mod unwrapping;
mod weights;

pub use chamfer::{chamfer, chamfer_grad};
pub use cycle::{cycle_consistency_loss, weighted_cosine, weighted_l1};
pub use ddl::{differential_distortion_loss, eigen_gap, eigen_gap_grad, wrap_partials};
pub use metrics::{evaluate, evaluate_points, point_graph, seam_length, ChartMetrics, DistortionReport, UvLayout, POINT_GRAPH_K};
pub use objective::{chart_eps, chart_losses, global_loss, ChartInputs, ChartLossOutput, LossTerms};
pub use triangle::{
    conformal_tdl_grad, conformal_tdl_grad_with, corner_angle, face_angles, isometric_tdl_grad, triangle_distortion_loss,
    TriangleMode,
};
pub use unwrapping::{unwrapping_loss, unwrapping_loss_grad};
pub use weights::{ChartLossWeights, DynamicThresholds, GlobalLossWeights, ThresholdCoefs};
