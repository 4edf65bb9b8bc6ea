//! Statistically optimal triangulation: the two-view polynomial method, its
//! single-image quadratic specialization, and the n-view linear MLE (LOST).

mod hs;
mod lost;
pub mod poly;
mod quat;

pub use hs::{epipolar_setup, hs_covariance, hs_triangulate, reprojection_jacobian, EpipolarSetup, PolySix};
pub use lost::{
    companion, lost_covariance, lost_gamma, lost_triangulate, lost_weights, residual_cov_pseudoinverse,
    residual_cov_pseudoinverse_isotropic, residual_covariance, LostWeights,
};
pub use quat::{quat_triangulate, QuatCoeffs};

use crate::camera::ImagePlanePoint;
use crate::linear::TriangulationEstimate;

/// Result of an optimal two-observation solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalTwoView {
    /// Corrected image-plane points; they satisfy the coplanarity constraint.
    pub corrected: [ImagePlanePoint; 2],
    pub estimate: TriangulationEstimate,
    /// Minimizing polynomial parameter (`None` for the asymptote or QUAT).
    pub t: Option<f64>,
    /// Weighted image-plane cost at the corrected points.
    pub cost: f64,
}
