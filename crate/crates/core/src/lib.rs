//! Test-time refinement of dense displacement fields.
//!
//! Given a fixed image, a moving image and an initial displacement field
//! (for example a network prediction, or zero), [`refine`] optimizes the
//! field voxel by voxel with Adam under a weighted sum of local NCC, SSIM and
//! a diffusion smoothness penalty, with loss-based early stopping.
//! [`metrics`] scores the result with Dice, HD95 and the spread of the
//! log-Jacobian determinant.

pub mod adam;
pub mod error;
pub mod loss;
pub mod metaimage;
pub mod metrics;
pub mod refine;
pub mod synth;
pub mod volume;
pub mod warp;

pub use adam::AdamState;
pub use error::{Error, Result};
pub use loss::{
    finite_diff_grad, hybrid_loss, hybrid_loss_grad, ncc_loss_grad, smooth_loss_grad, ssim_loss_grad,
    LossBreakdown, LossOptions, LossWeights, SsimConstants,
};
pub use metaimage::{read_field, read_labels, read_volume, write_field, write_labels, write_volume};
pub use metrics::{dice, evaluate, hd95, sdlogj, MetricsReport};
pub use refine::{refine, warm_vs_cold_report, RefineResult, StopReason, TtrConfig, WarmColdReport};
pub use volume::{normalize_intensity, Dims, DisplacementField, GradField, LabelMap, Volume};
pub use warp::{jacobian_determinant, sample_trilinear, warp, warp_labels, SampleResult};
