//! Class-conditional Gaussians in feature space and sampling from their
//! low-likelihood region.

use std::collections::VecDeque;

use crate::error::{arg, Error, Result};
use crate::numerics::{Cholesky, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceKind {
    /// One covariance pooled over all classes.
    #[default]
    Tied,
    PerClass,
}

#[derive(Debug, Clone)]
pub struct ClassGaussians {
    means: Matrix,
    covs: Vec<Matrix>,
    factors: Vec<Cholesky>,
}

impl ClassGaussians {
    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        self.means.row(k)
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn is_tied(&self) -> bool {
        self.covs.len() == 1
    }

    /// Covariance of class `k` (the shared one when tied).
    pub fn covariance(&self, k: usize) -> &Matrix {
        &self.covs[if self.is_tied() { 0 } else { k }]
    }

    pub fn factor(&self, k: usize) -> &Cholesky {
        &self.factors[if self.is_tied() { 0 } else { k }]
    }

    pub fn log_density(&self, k: usize, x: &[f64]) -> f64 {
        self.factor(k).gaussian_log_density(x, self.mean(k))
    }
}

/// Class means and the pooled within-class scatter
/// `Σ = (1/N) Σ_k Σ_{y_i = k} (h_i − μ_k)(h_i − μ_k)ᵀ`; with
/// [`CovarianceKind::PerClass`] each class is normalized by its own count.
pub fn estimate_class_gaussians(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    kind: CovarianceKind,
) -> Result<ClassGaussians> {
    if labels.len() != features.rows() {
        return arg(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.rows()
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return arg(format!("label {bad} out of range for {num_classes} classes"));
    }
    let d = features.cols();
    let mut counts = vec![0usize; num_classes];
    let mut sums = vec![vec![0.0; d]; num_classes];
    for (x, &y) in features.iter_rows().zip(labels) {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(x) {
            *s += v;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c < 2) {
        return Err(Error::Estimation(format!(
            "class {k} has {} samples, need at least 2",
            counts[k]
        )));
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let mut scatter = vec![vec![0.0; d * d]; num_classes];
    for (x, &y) in features.iter_rows().zip(labels) {
        let diff: Vec<f64> = x.iter().zip(&means[y]).map(|(a, b)| a - b).collect();
        let s = &mut scatter[y];
        for i in 0..d {
            for j in 0..=i {
                s[i * d + j] += diff[i] * diff[j];
            }
        }
    }
    let finish = |mut s: Vec<f64>, n: usize| {
        for i in 0..d {
            for j in 0..=i {
                let v = s[i * d + j] / n as f64;
                s[i * d + j] = v;
                s[j * d + i] = v;
            }
        }
        Matrix::new(d, d, s)
    };
    let covs = match kind {
        CovarianceKind::Tied => {
            let mut total = vec![0.0; d * d];
            for s in &scatter {
                for (t, v) in total.iter_mut().zip(s) {
                    *t += v;
                }
            }
            vec![finish(total, features.rows())?]
        }
        CovarianceKind::PerClass => scatter
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| finish(s, c))
            .collect::<Result<_>>()?,
    };
    let factors = covs.iter().map(Cholesky::decompose_definite).collect::<Result<_>>()?;
    Ok(ClassGaussians {
        means: Matrix::from_rows(&means)?,
        covs,
        factors,
    })
}

/// Fixed-capacity FIFO of recent feature vectors per class.
#[derive(Debug, Clone)]
pub struct ClassQueues {
    capacity: usize,
    dim: usize,
    queues: Vec<VecDeque<Vec<f64>>>,
}

impl ClassQueues {
    pub fn new(num_classes: usize, capacity: usize, dim: usize) -> Result<Self> {
        if capacity < 2 {
            return arg("queue capacity must be at least 2");
        }
        Ok(Self {
            capacity,
            dim,
            queues: vec![VecDeque::with_capacity(capacity); num_classes],
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self, k: usize) -> usize {
        self.queues[k].len()
    }

    pub fn all_full(&self) -> bool {
        self.queues.iter().all(|q| q.len() == self.capacity)
    }

    /// Enqueues `feature` for class `k`, dequeuing the oldest entry once full.
    pub fn push(&mut self, k: usize, feature: Vec<f64>) -> Result<()> {
        if k >= self.queues.len() {
            return arg(format!("class {k} out of range"));
        }
        if feature.len() != self.dim {
            return arg(format!("feature has {} dims, queue holds {}", feature.len(), self.dim));
        }
        let q = &mut self.queues[k];
        if q.len() == self.capacity {
            q.pop_front();
        }
        q.push_back(feature);
        Ok(())
    }

    pub fn iter(&self, k: usize) -> impl Iterator<Item = &[f64]> {
        self.queues[k].iter().map(Vec::as_slice)
    }

    pub fn estimate(&self, kind: CovarianceKind) -> Result<ClassGaussians> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (k, q) in self.queues.iter().enumerate() {
            rows.extend(q.iter().cloned());
            labels.extend(std::iter::repeat_n(k, q.len()));
        }
        let features = if rows.is_empty() {
            Matrix::zeros(0, self.dim)
        } else {
            Matrix::from_rows(&rows)?
        };
        estimate_class_gaussians(&features, &labels, self.queues.len(), kind)
    }
}

/// Knobs for both outlier synthesizers.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    /// Rank of the density that defines ε within the pool.
    pub t: usize,
    pub pool_size: usize,
    /// Outliers returned per class and draw.
    pub n_outliers: usize,
    /// Kernel variance of the non-parametric sampler.
    pub sigma2: f64,
    pub knn_k: usize,
    pub candidates_per_anchor: usize,
    /// Fraction of rows used as boundary anchors.
    pub anchor_fraction: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            t: 1,
            pool_size: 10_000,
            n_outliers: 1,
            sigma2: 0.03,
            knn_k: 10,
            candidates_per_anchor: 10,
            anchor_fraction: 0.05,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.t > self.pool_size {
            return arg(format!("t = {} must be in 1..={}", self.t, self.pool_size));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return arg(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if self.knn_k == 0 || self.candidates_per_anchor == 0 {
            return arg("knn_k and candidates_per_anchor must be positive");
        }
        if !(self.anchor_fraction > 0.0 && self.anchor_fraction <= 1.0) {
            return arg(format!("anchor_fraction must be in (0, 1], got {}", self.anchor_fraction));
        }
        Ok(())
    }
}

/// Virtual outliers of class `k` together with the threshold that produced
/// them.
#[derive(Debug, Clone)]
pub struct VirtualOutliers {
    pub points: Matrix,
    pub log_densities: Vec<f64>,
    /// `log ε`, the `t`-th smallest log density in the pool.
    pub log_epsilon: f64,
}

/// Draws `pool_size` candidates from class `k`'s Gaussian and returns the
/// `n_outliers` least likely, all of which lie in the region where the
/// density is at most ε.
///
/// Candidates are drawn as `μ_k + L z`; their log densities are
/// `−½(d log 2π + log det Σ + ‖z‖²)`, so ranking happens on `‖z‖²` and only
/// the retained candidates are mapped to feature space.
pub fn sample_virtual_outliers(
    g: &ClassGaussians,
    cfg: &SynthesisConfig,
    k: usize,
    rng: &mut RngState,
) -> Result<VirtualOutliers> {
    cfg.validate()?;
    if k >= g.num_classes() {
        return arg(format!("class {k} out of range"));
    }
    if cfg.n_outliers > cfg.t {
        return arg(format!(
            "{} outliers requested but only t = {} candidates lie at or below ε",
            cfg.n_outliers, cfg.t
        ));
    }
    let d = g.dim();
    // the t largest radii, kept sorted descending
    let mut kept: Vec<(f64, Vec<f64>)> = Vec::with_capacity(cfg.t + 1);
    for _ in 0..cfg.pool_size {
        let z = rng.normal_vec(d);
        let r2: f64 = z.iter().map(|v| v * v).sum();
        if kept.len() == cfg.t && r2 <= kept[cfg.t - 1].0 {
            continue;
        }
        let pos = kept.partition_point(|(r, _)| *r >= r2);
        kept.insert(pos, (r2, z));
        kept.truncate(cfg.t);
    }
    let factor = g.factor(k);
    let base = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + factor.log_det());
    let log_epsilon = base - 0.5 * kept[cfg.t - 1].0;
    let mut data = Vec::with_capacity(cfg.n_outliers * d);
    let mut log_densities = Vec::with_capacity(cfg.n_outliers);
    let lower = factor.lower();
    for (r2, z) in kept.iter().take(cfg.n_outliers) {
        for i in 0..d {
            let row = lower.row(i);
            let s: f64 = row[..=i].iter().zip(&z[..=i]).map(|(a, b)| a * b).sum();
            data.push(g.mean(k)[i] + s);
        }
        log_densities.push(base - 0.5 * r2);
    }
    Ok(VirtualOutliers {
        points: Matrix::new(cfg.n_outliers, d, data)?,
        log_densities,
        log_epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cholesky_sample;

    fn two_class(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = RngState::new(seed);
        let cov = Matrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.5]]).unwrap();
        let a = cholesky_sample(&[1.0, -1.0], &cov, n, &mut rng).unwrap();
        let b = cholesky_sample(&[-2.0, 0.5], &cov, n, &mut rng).unwrap();
        let mut labels = vec![0; n];
        labels.extend(vec![1; n]);
        (a.vstack(&b).unwrap(), labels)
    }

    #[test]
    fn recovers_known_gaussians() {
        let (f, y) = two_class(10_000, 7);
        let g = estimate_class_gaussians(&f, &y, 2, CovarianceKind::Tied).unwrap();
        let close = |a: f64, b: f64, tol: f64| assert!((a - b).abs() < tol, "{a} vs {b}");
        close(g.mean(0)[0], 1.0, 0.05);
        close(g.mean(1)[1], 0.5, 0.05);
        let s = g.covariance(0);
        close(s.get(0, 0), 1.0, 0.02);
        close(s.get(0, 1), 0.3, 0.02);
        close(s.get(1, 1), 0.5, 0.02);
    }

    #[test]
    fn tied_matches_double_loop() {
        let (f, y) = two_class(100, 2);
        let g = estimate_class_gaussians(&f, &y, 2, CovarianceKind::Tied).unwrap();
        let mut naive = [[0.0; 2]; 2];
        for i in 0..f.rows() {
            let mu = g.mean(y[i]);
            for a in 0..2 {
                for b in 0..2 {
                    naive[a][b] += (f.get(i, a) - mu[a]) * (f.get(i, b) - mu[b]) / f.rows() as f64;
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                assert!((g.covariance(1).get(a, b) - naive[a][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_points_give_zero_covariance() {
        let f = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [5.0, 0.0], [5.0, 0.0]]).unwrap();
        let g = estimate_class_gaussians(&f, &[0, 0, 1, 1], 2, CovarianceKind::Tied).unwrap();
        assert!(g.covariance(0).as_slice().iter().all(|&v| v == 0.0));
        assert!(g.factor(0).jitter() > 0.0);
    }

    #[test]
    fn small_class_is_an_estimation_error() {
        let f = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let r = estimate_class_gaussians(&f, &[0, 0, 1], 2, CovarianceKind::Tied);
        assert!(matches!(r, Err(Error::Estimation(_))));
    }

    #[test]
    fn estimation_is_permutation_invariant() {
        let (f, y) = two_class(50, 3);
        let perm = RngState::new(4).permutation(f.rows());
        let fp = f.select_rows(&perm);
        let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let a = estimate_class_gaussians(&f, &y, 2, CovarianceKind::Tied).unwrap();
        let b = estimate_class_gaussians(&fp, &yp, 2, CovarianceKind::Tied).unwrap();
        for (x, z) in a.covariance(0).as_slice().iter().zip(b.covariance(0).as_slice()) {
            assert!((x - z).abs() < 1e-12);
        }
        for (x, z) in a.means().as_slice().iter().zip(b.means().as_slice()) {
            assert!((x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn queues_are_fifo() {
        let mut q = ClassQueues::new(2, 3, 1).unwrap();
        for v in 0..5 {
            q.push(0, vec![v as f64]).unwrap();
        }
        let held: Vec<f64> = q.iter(0).map(|r| r[0]).collect();
        assert_eq!(held, vec![2.0, 3.0, 4.0]);
        assert!(!q.all_full());
        assert!(q.push(0, vec![1.0, 2.0]).is_err());
    }

    /// Unit covariance around (0, 0) and (3, 0).
    fn identity_gaussians() -> ClassGaussians {
        let f = Matrix::from_rows(&[
            [1.0, 1.0],
            [1.0, -1.0],
            [-1.0, 1.0],
            [-1.0, -1.0],
            [4.0, 1.0],
            [4.0, -1.0],
            [2.0, 1.0],
            [2.0, -1.0],
        ])
        .unwrap();
        estimate_class_gaussians(&f, &[0, 0, 0, 0, 1, 1, 1, 1], 2, CovarianceKind::PerClass).unwrap()
    }

    #[test]
    fn radius_follows_the_max_order_statistic() {
        // squared radius of a 2-D standard normal is 2·Exp(1); the max of n
        // has mean 2·H_n
        let g = identity_gaussians();
        let cfg = SynthesisConfig {
            pool_size: 1000,
            ..SynthesisConfig::default()
        };
        let mut rng = RngState::new(11);
        let trials = 300;
        let mean_r2: f64 = (0..trials)
            .map(|_| {
                let out = sample_virtual_outliers(&g, &cfg, 0, &mut rng).unwrap();
                let x = out.points.row(0);
                x[0] * x[0] + x[1] * x[1]
            })
            .sum::<f64>()
            / trials as f64;
        let harmonic: f64 = (1..=1000).map(|i| 1.0 / i as f64).sum();
        let se = (std::f64::consts::PI.powi(2) / 6.0 * 4.0 / trials as f64).sqrt();
        assert!((mean_r2 - 2.0 * harmonic).abs() < 4.0 * se, "{mean_r2} vs {}", 2.0 * harmonic);
    }

    #[test]
    fn minimum_density_member_is_returned() {
        let g = identity_gaussians();
        let cfg = SynthesisConfig {
            pool_size: 500,
            ..SynthesisConfig::default()
        };
        let out = sample_virtual_outliers(&g, &cfg, 1, &mut RngState::new(5)).unwrap();
        assert_eq!(out.points.rows(), 1);
        let x = out.points.row(0);
        // recompute the pool from the same stream
        let mut rng = RngState::new(5);
        let pool: Vec<Vec<f64>> = (0..500).map(|_| rng.normal_vec(2)).collect();
        let radius = |p: &[f64]| g.factor(1).mahalanobis_sq(p, g.mean(1));
        let mapped: Vec<Vec<f64>> = pool
            .iter()
            .map(|z| {
                let l = g.factor(1).lower();
                (0..2)
                    .map(|i| g.mean(1)[i] + (0..=i).map(|j| l.get(i, j) * z[j]).sum::<f64>())
                    .collect()
            })
            .collect();
        let best = mapped.iter().map(|p| radius(p)).fold(f64::MIN, f64::max);
        assert!((radius(x) - best).abs() < 1e-9);
        assert!(out.log_densities[0] <= out.log_epsilon);
        assert!((g.log_density(1, x) - out.log_densities[0]).abs() < 1e-9);
    }

    #[test]
    fn epsilon_grows_with_t() {
        let g = identity_gaussians();
        let mut last = f64::NEG_INFINITY;
        for t in [1, 2, 5, 20, 100] {
            let cfg = SynthesisConfig {
                t,
                n_outliers: t,
                pool_size: 1000,
                ..SynthesisConfig::default()
            };
            let out = sample_virtual_outliers(&g, &cfg, 0, &mut RngState::new(6)).unwrap();
            assert!(out.log_epsilon >= last);
            assert!(out.log_densities.iter().all(|&l| l <= out.log_epsilon));
            last = out.log_epsilon;
        }
    }

    #[test]
    fn too_many_outliers_is_rejected() {
        let g = identity_gaussians();
        let cfg = SynthesisConfig {
            n_outliers: 2,
            ..SynthesisConfig::default()
        };
        assert!(sample_virtual_outliers(&g, &cfg, 0, &mut RngState::new(0)).is_err());
    }
}
