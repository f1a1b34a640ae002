//! Seeded inputs shared by the benchmarks in `benches/`.

use ualk_core::datagen::{make_gaussian_classes, toy_cov, toy_means};
use ualk_core::model::MlpClassifier;
use ualk_core::{LabeledSet, Matrix, RngState};

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RngState::new(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
    Matrix::new(rows, cols, data).expect("finite draws")
}

pub fn scores(n: usize, shift: f64, seed: u64) -> Vec<f64> {
    let mut rng = RngState::new(seed);
    (0..n).map(|_| rng.normal() + shift).collect()
}

pub fn toy(per_class: usize, seed: u64) -> LabeledSet {
    make_gaussian_classes(&toy_means(), &toy_cov(), per_class, &mut RngState::new(seed)).expect("toy parameters are valid")
}

pub fn classifier(seed: u64) -> MlpClassifier {
    MlpClassifier::new(2, &[64, 64], 3, &mut RngState::new(seed)).expect("valid widths")
}
