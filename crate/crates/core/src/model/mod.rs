//! From-scratch rectifier networks: the K-way classifier, the energy head
//! with its uncertainty loss, and the binary head `g_θ`.

mod binary;
mod classifier;
mod energy;
mod mlp;

pub use binary::{train_binary, BinaryHead, Detector};
pub use classifier::{
    argmax, continue_erm, cross_entropy, gradient_to_layer_layout, mean_loss, per_sample_gradient, train_erm,
    MlpClassifier, Prediction, TrainConfig,
};
pub use energy::{energy, energy_with_grad, uncertainty_loss, EnergyHead, UncertaintyGrads, PHI_HIDDEN};
pub use mlp::{batches, Mlp, Sgd, Trace};

pub(crate) use classifier::check_labeled;
pub(crate) use mlp::{check_loss, check_params};

