//! Outliers sampled around boundary embeddings with a Gaussian kernel.

use rayon::prelude::*;

use super::gaussian::SynthesisConfig;
use crate::error::{arg, Result};
use crate::numerics::{knn_distance, knn_distances_within, Matrix, RngState};

/// Indices of the `⌈fraction · n⌉` rows with the largest distances, in
/// decreasing order; ties go to the lower index.
pub fn boundary_anchors(knn_dists: &[f64], fraction: f64) -> Vec<usize> {
    let n = knn_dists.len();
    let count = ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1)).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| knn_dists[b].total_cmp(&knn_dists[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

#[derive(Debug, Clone)]
pub struct NonParametricOutliers {
    /// One synthesized point per anchor.
    pub points: Matrix,
    pub anchors: Vec<usize>,
    /// kNN distance of each synthesized point to the embedding set.
    pub knn_dists: Vec<f64>,
}

/// Normalizes the rows, takes the boundary anchors by self-excluded kNN
/// distance, and for each anchor keeps the kernel draw `N(z, σ² I)` farthest
/// (in kNN distance) from the embedding set.
pub fn sample_nonparametric_outliers(
    embeddings: &Matrix,
    cfg: &SynthesisConfig,
    rng: &mut RngState,
) -> Result<NonParametricOutliers> {
    cfg.validate()?;
    if cfg.knn_k >= embeddings.rows() {
        return arg(format!(
            "knn_k = {} must be below the {} embeddings",
            cfg.knn_k,
            embeddings.rows()
        ));
    }
    let z = embeddings.normalized_rows();
    let dists = knn_distances_within(&z, cfg.knn_k)?;
    let anchors = boundary_anchors(&dists, cfg.anchor_fraction);
    let sigma = cfg.sigma2.sqrt();
    let stream = rng.next_u64();
    let base = rng.split(stream);
    let picked: Vec<(Vec<f64>, f64)> = anchors
        .par_iter()
        .map(|&a| {
            let mut local = base.split(a as u64);
            let centre = z.row(a);
            let mut best: Option<(Vec<f64>, f64)> = None;
            for _ in 0..cfg.candidates_per_anchor {
                let cand: Vec<f64> = centre.iter().map(|c| c + sigma * local.normal()).collect();
                let dist = knn_distance(&cand, &z, cfg.knn_k, false)?;
                if best.as_ref().is_none_or(|(_, d)| dist > *d) {
                    best = Some((cand, dist));
                }
            }
            Ok(best.expect("at least one candidate"))
        })
        .collect::<Result<_>>()?;
    let (rows, knn_dists): (Vec<Vec<f64>>, Vec<f64>) = picked.into_iter().unzip();
    Ok(NonParametricOutliers {
        points: Matrix::from_rows(&rows)?,
        anchors,
        knn_dists,
    })
}
