//! Membership estimation over an unlabeled embedding mixture through a
//! singular-value-weighted top-k subspace, and the truthfulness classifier
//! trained on the resulting split.

use rayon::prelude::*;

use crate::error::{arg, Result};
use crate::metrics::{auroc, nearest_rank_quantile, ScoreSets};
use crate::model::{train_binary, BinaryHead, Detector, TrainConfig};
use crate::numerics::{dot, top_singular_vectors, Matrix, DEFAULT_MAX_ITERS, DEFAULT_TOL};

/// Truthfulness classifier width for full-size embeddings.
pub const FULL_SCALE_WIDTH: usize = 1024;
/// Truthfulness classifier width for the synthetic mixtures.
pub const TOY_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub center: Vec<f64>,
    /// `k × d`, orthonormal rows.
    pub vectors: Matrix,
    /// Descending.
    pub values: Vec<f64>,
    /// Rows are L2-normalized before centering.
    pub normalize: bool,
}

impl SubspaceModel {
    pub fn k(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    fn prepare(&self, f: &Matrix) -> Result<Matrix> {
        if f.cols() != self.dim() {
            return arg(format!("embeddings have {} dims, model has {}", f.cols(), self.dim()));
        }
        Ok(if self.normalize { f.normalized_rows() } else { f.clone() })
    }
}

/// Centers `f` by its column means and keeps the top `k` right singular pairs.
pub fn fit_subspace(f: &Matrix, k: usize, normalize: bool) -> Result<SubspaceModel> {
    if k == 0 {
        return arg("k must be at least 1");
    }
    if f.rows() <= k {
        return arg(format!("need more than k = {k} embeddings, got {}", f.rows()));
    }
    let f = if normalize { f.normalized_rows() } else { f.clone() };
    let center = f.column_means();
    let centered = f.centered(&center)?;
    let pairs = top_singular_vectors(&centered, k, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    Ok(SubspaceModel {
        center,
        vectors: pairs.vectors,
        values: pairs.values,
        normalize,
    })
}

fn scores_with(model: &SubspaceModel, f: &Matrix, weights: &[f64]) -> Result<Vec<f64>> {
    let f = model.prepare(f)?;
    let k = model.k() as f64;
    Ok((0..f.rows())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = f.row(i).iter().zip(&model.center).map(|(a, m)| a - m).collect();
            model
                .vectors
                .iter_rows()
                .zip(weights)
                .map(|(v, w)| w * dot(&x, v).powi(2))
                .sum::<f64>()
                / k
        })
        .collect())
}

/// `ζ_i = (1/k) Σ_j σ_j ⟨f_i − μ, v_j⟩²`; higher means more likely outlying.
pub fn membership_scores(model: &SubspaceModel, f: &Matrix) -> Result<Vec<f64>> {
    scores_with(model, f, &model.values)
}

/// [`membership_scores`] with every `σ_j` replaced by 1.
pub fn membership_scores_unweighted(model: &SubspaceModel, f: &Matrix) -> Result<Vec<f64>> {
    scores_with(model, f, &vec![1.0; model.k()])
}

/// Disjoint, exhaustive split of row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipSplit {
    /// `ζ > T`: candidate hallucinations.
    pub outlying: Vec<usize>,
    /// `ζ ≤ T`: candidate truthful samples.
    pub inlying: Vec<usize>,
}

pub fn split(scores: &[f64], threshold: f64) -> MembershipSplit {
    let (outlying, inlying) = (0..scores.len()).partition(|&i| scores[i] > threshold);
    MembershipSplit { outlying, inlying }
}

/// Binary head with the inlying rows as positives (truthful) and the
/// outlying rows as negatives.
pub fn train_truthfulness(f: &Matrix, split: &MembershipSplit, cfg: &TrainConfig) -> Result<BinaryHead> {
    train_binary(&f.select_rows(&split.inlying), &f.select_rows(&split.outlying), cfg)
}

/// The `k` in `candidates` with the best validation AUROC of membership
/// scores against known validation flags (`true` = hallucinated); ties go to
/// the smaller `k`.
pub fn tune_k(
    train: &Matrix,
    validation: &Matrix,
    validation_flags: &[bool],
    candidates: &[usize],
    normalize: bool,
) -> Result<usize> {
    if validation_flags.len() != validation.rows() {
        return arg("one flag per validation row is required");
    }
    let mut best: Option<(usize, f64)> = None;
    let mut ks = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let model = fit_subspace(train, k, normalize)?;
        let z = membership_scores(&model, validation)?;
        let mut s = ScoreSets::default();
        for (&v, &bad) in z.iter().zip(validation_flags) {
            // truthful samples are the positives
            if bad {
                s.ood_scores.push(-v);
            } else {
                s.id_scores.push(-v);
            }
        }
        let a = auroc(&s)?;
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((k, a));
        }
    }
    best.map(|(k, _)| k).ok_or_else(|| crate::error::Error::Argument("no candidate k given".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaloConfig {
    pub k: usize,
    /// Nearest-rank quantile of `ζ` used as `T`.
    pub threshold_quantile: f64,
    pub normalize: bool,
    pub classifier: TrainConfig,
}

impl Default for HaloConfig {
    fn default() -> Self {
        Self {
            k: 1,
            threshold_quantile: 0.85,
            normalize: false,
            classifier: TrainConfig {
                hidden: vec![TOY_WIDTH],
                weight_decay: 0.1,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaloModel {
    pub subspace: SubspaceModel,
    pub threshold: f64,
    pub split: MembershipSplit,
    pub head: BinaryHead,
}

impl HaloModel {
    /// `S(x) = σ(g_θ(x))`, the probability of being truthful.
    pub fn truthfulness(&self, f: &Matrix) -> Result<Vec<f64>> {
        self.head.id_probabilities(f)
    }
}

/// Subspace fit, membership split at the configured quantile, then the
/// truthfulness classifier.
pub fn train_halo(f: &Matrix, cfg: &HaloConfig) -> Result<HaloModel> {
    let subspace = fit_subspace(f, cfg.k, cfg.normalize)?;
    let scores = membership_scores(&subspace, f)?;
    let threshold = nearest_rank_quantile(&scores, cfg.threshold_quantile)?;
    let split = split(&scores, threshold);
    let head = train_truthfulness(f, &split, &cfg.classifier)?;
    Ok(HaloModel {
        subspace,
        threshold,
        split,
        head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::make_subspace_mixture;
    use crate::error::Error;
    use crate::metrics::{planted_direction, wild_score_sets};
    use crate::numerics::{norm, RngState};
    use proptest::prelude::*;

    #[test]
    fn rank_one_data() {
        let u = [0.6, 0.0, -0.8];
        let rows: Vec<Vec<f64>> = (0..20).map(|i| u.iter().map(|x| x * (i as f64 - 7.0) + 1.0).collect()).collect();
        let f = Matrix::from_rows(&rows).unwrap();
        let m = fit_subspace(&f, 2, false).unwrap();
        assert!((dot(m.vectors.row(0), &u).abs() - 1.0).abs() < 1e-10);
        assert!(m.values[1] < 1e-6 * m.values[0]);
        let centered = f.centered(&m.center).unwrap();
        assert!(centered.column_means().iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn recovers_planted_direction() {
        let mix = make_subspace_mixture(2000, 16, 0.1, 5.0, &mut RngState::new(1)).unwrap();
        let m = fit_subspace(&mix.wild.points, 1, false).unwrap();
        assert!(dot(m.vectors.row(0), planted_direction(&mix)).abs() > 0.9);
    }

    #[test]
    fn score_examples() {
        let mix = make_subspace_mixture(300, 6, 0.2, 4.0, &mut RngState::new(2)).unwrap();
        let m = fit_subspace(&mix.wild.points, 1, false).unwrap();
        let at_center = membership_scores(&m, &Matrix::from_rows(std::slice::from_ref(&m.center)).unwrap()).unwrap();
        assert_eq!(at_center, vec![0.0]);
        let z = membership_scores(&m, &mix.wild.points).unwrap();
        for (i, row) in mix.wild.points.iter_rows().enumerate() {
            let x: Vec<f64> = row.iter().zip(&m.center).map(|(a, b)| a - b).collect();
            let want = m.values[0] * dot(&x, m.vectors.row(0)).powi(2);
            assert!((z[i] - want).abs() <= 1e-12 * want.max(1.0));
        }
        assert!(membership_scores(&m, &Matrix::zeros(1, 5)).is_err());
        let m3 = fit_subspace(&mix.wild.points, 3, false).unwrap();
        assert_ne!(membership_scores(&m3, &mix.wild.points).unwrap(), membership_scores_unweighted(&m3, &mix.wild.points).unwrap());
    }

    #[test]
    fn split_examples() {
        let z = [0.5, 2.0, 0.0, 1.0];
        let all_in = split(&z, 2.0);
        assert!(all_in.outlying.is_empty());
        let all_out = split(&z, -1.0);
        assert_eq!(all_out.outlying, vec![0, 1, 2, 3]);
        let s = split(&z, 0.7);
        assert_eq!((s.outlying, s.inlying), (vec![1, 3], vec![0, 2]));
    }

    #[test]
    fn invariances() {
        let mix = make_subspace_mixture(400, 8, 0.1, 5.0, &mut RngState::new(3)).unwrap();
        let f = &mix.wild.points;
        let m = fit_subspace(f, 2, false).unwrap();
        let z = membership_scores(&m, f).unwrap();
        let shifted_rows: Vec<Vec<f64>> = f.iter_rows().map(|r| r.iter().enumerate().map(|(j, x)| x + 3.0 - j as f64).collect()).collect();
        let shifted = Matrix::from_rows(&shifted_rows).unwrap();
        let ms = fit_subspace(&shifted, 2, false).unwrap();
        let zs = membership_scores(&ms, &shifted).unwrap();
        for (a, b) in z.iter().zip(&zs) {
            assert!((a - b).abs() < 1e-10 * a.max(1.0));
        }
        let mut flipped = m.clone();
        for x in flipped.vectors.row_mut(1) {
            *x = -*x;
        }
        assert_eq!(membership_scores(&flipped, f).unwrap(), z);
        let perm = RngState::new(4).permutation(f.rows());
        let mp = fit_subspace(&f.select_rows(&perm), 2, false).unwrap();
        for (a, b) in m.center.iter().zip(&mp.center) {
            assert!((a - b).abs() < 1e-12);
        }
        for j in 0..2 {
            assert!((m.values[j] - mp.values[j]).abs() < 1e-9 * m.values[j]);
            assert!((dot(m.vectors.row(j), mp.vectors.row(j)).abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rows_are_orthonormal() {
        let mix = make_subspace_mixture(500, 10, 0.1, 5.0, &mut RngState::new(5)).unwrap();
        let m = fit_subspace(&mix.wild.points, 4, true).unwrap();
        for i in 0..4 {
            assert!((norm(m.vectors.row(i)) - 1.0).abs() < 1e-8);
            for j in 0..i {
                assert!(dot(m.vectors.row(i), m.vectors.row(j)).abs() < 1e-8);
            }
        }
        assert!(m.values.windows(2).all(|w| w[0] >= w[1]));
        assert!(fit_subspace(&mix.wild.points.select_rows(&[0, 1]), 2, false).is_err());
    }

    #[test]
    fn classifier_and_detector() {
        let mix = make_subspace_mixture(600, 8, 0.1, 5.0, &mut RngState::new(6)).unwrap();
        let cfg = HaloConfig {
            classifier: TrainConfig {
                epochs: 20,
                ..HaloConfig::default().classifier
            },
            ..HaloConfig::default()
        };
        let model = train_halo(&mix.wild.points, &cfg).unwrap();
        assert_eq!(model.split.outlying.len() + model.split.inlying.len(), 600);
        let s = model.truthfulness(&mix.wild.points).unwrap();
        let a = auroc(&wild_score_sets(&mix.wild, &s, false).unwrap()).unwrap();
        assert!(a > 0.9, "auroc {a}");
        for x in mix.wild.points.iter_rows().take(50) {
            let g = model.head.logit(x).unwrap();
            assert_eq!(model.head.detect(x, 0.5).unwrap(), g >= 0.0);
        }
        let one_sided = MembershipSplit {
            outlying: vec![],
            inlying: (0..600).collect(),
        };
        assert!(matches!(
            train_truthfulness(&mix.wild.points, &one_sided, &cfg.classifier),
            Err(Error::EmptyCandidates(_))
        ));
    }

    #[test]
    fn tuning_picks_a_candidate() {
        let mut rng = RngState::new(7);
        let train = make_subspace_mixture(500, 8, 0.1, 5.0, &mut rng).unwrap();
        let val = make_subspace_mixture(300, 8, 0.1, 5.0, &mut rng).unwrap();
        let flags = crate::metrics::export_membership(&val.wild);
        let k = tune_k(&train.wild.points, &val.wild.points, &flags, &[3, 1, 2], false).unwrap();
        assert!([1, 2, 3].contains(&k));
    }

    proptest! {
        #[test]
        fn split_partitions(z in prop::collection::vec(0.0f64..5.0, 0..50), t in -1.0f64..6.0) {
            let s = split(&z, t);
            let mut all: Vec<usize> = s.outlying.iter().chain(&s.inlying).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..z.len()).collect::<Vec<_>>());
        }
    }
}
