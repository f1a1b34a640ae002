//! Unknown-aware learning toolkit.
//!
//! Outlier synthesis in feature space, hyperspherical (vMF) representation
//! shaping, gradient-SVD filtering of unlabeled wild data, and subspace
//! membership scoring, all on dense feature matrices, together with the
//! detection metrics and seeded toy generators used to evaluate them.

pub mod datagen;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod subspace;
pub mod synthesis;
pub mod vmf;
pub mod wildfilter;

pub use datagen::{LabeledSet, WildSet};
pub use error::{Error, Result};
pub use numerics::{Matrix, RngState};
