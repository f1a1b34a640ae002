//! Virtual outlier synthesis: parametric draws from the low-likelihood
//! region of class Gaussians, and kNN-anchored kernel sampling.

mod gaussian;
mod nonparametric;
mod vos;

pub use gaussian::{
    estimate_class_gaussians, sample_virtual_outliers, ClassGaussians, ClassQueues, CovarianceKind, SynthesisConfig,
    VirtualOutliers,
};
pub use nonparametric::{boundary_anchors, sample_nonparametric_outliers, NonParametricOutliers};
pub use vos::{energy_score, energy_scores, train_vos, VosConfig, VosModel};
