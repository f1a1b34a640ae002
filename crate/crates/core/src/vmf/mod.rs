//! von Mises-Fisher mixtures on the unit hypersphere: density, posterior,
//! shaping loss with learnable concentrations, and the two OOD scores.

mod density;
mod siren;

pub use density::{
    estimate_kappa, fit_mixture, kappa_from_mean_resultant, knn_score, log_normalizer, log_normalizer_derivative,
    siren_loss, vmf_log_density, vmf_posterior, vmf_score, EmaOutcome, SirenGrads, VmfMixture, KAPPA_MAX, KAPPA_MIN,
};
pub use siren::{train_siren, KappaMode, PrototypeInit, SirenConfig, SirenModel};
