//! Dense linear algebra, special functions, nearest-neighbour distances and
//! the seeded random stream shared by every other module.

mod knn;
mod linalg;
mod matrix;
mod rng;
mod special;

pub use knn::{knn_distance, knn_distances_within};
pub use linalg::{
    cholesky_sample, fix_sign, top_singular_vectors, Cholesky, SingularPairs, DEFAULT_MAX_ITERS,
    DEFAULT_TOL, JITTER_ATTEMPTS,
};
pub use matrix::{axpy, dot, norm, normalize, squared_distance, Matrix};
pub use rng::RngState;
pub use special::{bessel_i, bessel_ratio, log_bessel_i, log_sum_exp, sigmoid, softmax, softplus};
