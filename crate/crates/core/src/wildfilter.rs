//! Candidate-outlier filtering of unlabeled wild data by the top singular
//! directions of reference-subtracted gradients, and the binary OOD
//! classifier trained on the result.

use rayon::prelude::*;

use crate::datagen::{LabeledSet, WildSet};
use crate::error::{arg, Error, Result};
use crate::metrics::{filtering_errors, nearest_rank_quantile};
use crate::model::{per_sample_gradient, train_binary, train_erm, BinaryHead, MlpClassifier, TrainConfig};
use crate::numerics::{dot, top_singular_vectors, Matrix, DEFAULT_MAX_ITERS, DEFAULT_TOL};

/// Mean final-layer gradient over the labeled pairs.
pub fn reference_gradient(clf: &MlpClassifier, id_data: &LabeledSet) -> Result<Vec<f64>> {
    if id_data.is_empty() {
        return arg("reference gradient of an empty dataset");
    }
    let mut sum = vec![0.0; clf.gradient_dim()];
    for (x, &y) in id_data.points.iter_rows().zip(&id_data.labels) {
        let g = per_sample_gradient(clf, x, y)?;
        sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
    }
    let n = id_data.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

fn gradient_rows(clf: &MlpClassifier, points: &Matrix, labels: &[usize], reference: &[f64]) -> Result<Matrix> {
    if reference.len() != clf.gradient_dim() {
        return arg(format!(
            "reference gradient has {} entries, classifier gradients have {}",
            reference.len(),
            clf.gradient_dim()
        ));
    }
    if points.cols() != clf.input_dim() {
        return arg(format!("points have {} columns, classifier expects {}", points.cols(), clf.input_dim()));
    }
    let rows: Vec<Vec<f64>> = (0..points.rows())
        .into_par_iter()
        .map(|i| {
            let mut g = per_sample_gradient(clf, points.row(i), labels[i])?;
            g.iter_mut().zip(reference).for_each(|(a, r)| *a -= r);
            Ok(g)
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, reference.len()));
    }
    Matrix::from_rows(&rows)
}

/// Row `i` is the gradient at `(x̃_i, ŷ_i)` minus `reference`, with `ŷ_i` the
/// classifier's prediction.
pub fn gradient_matrix(clf: &MlpClassifier, points: &Matrix, reference: &[f64]) -> Result<Matrix> {
    if points.cols() != clf.input_dim() {
        return arg(format!("points have {} columns, classifier expects {}", points.cols(), clf.input_dim()));
    }
    let predicted = clf.predict_labels(points)?;
    gradient_rows(clf, points, &predicted, reference)
}

/// Mean squared projection of each row onto the rows of `vectors`.
pub fn projection_scores(g: &Matrix, vectors: &Matrix) -> Result<Vec<f64>> {
    if g.cols() != vectors.cols() {
        return arg("gradient rows and singular vectors differ in dimension");
    }
    let k = vectors.rows() as f64;
    Ok(g.iter_rows()
        .map(|row| vectors.iter_rows().map(|v| dot(row, v).powi(2)).sum::<f64>() / k)
        .collect())
}

/// Top `num_vectors` right singular vectors of `g` and the uniformly
/// averaged squared projections onto them.
pub fn filter_scores_multi(g: &Matrix, num_vectors: usize) -> Result<(Vec<f64>, Matrix)> {
    if g.is_empty() {
        return arg("gradient matrix is empty");
    }
    let pairs = top_singular_vectors(g, num_vectors, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    Ok((projection_scores(g, &pairs.vectors)?, pairs.vectors))
}

/// `τ_i = ⟨G_i, v⟩²` for the top right singular vector `v`.
pub fn filter_scores(g: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let (tau, v) = filter_scores_multi(g, 1)?;
    Ok((tau, v.row(0).to_vec()))
}

/// Nearest-rank `quantile` of the scores of the labeled ID samples, using
/// their true labels.
pub fn select_threshold(
    clf: &MlpClassifier,
    id_data: &LabeledSet,
    vectors: &Matrix,
    reference: &[f64],
    quantile: f64,
) -> Result<f64> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return arg(format!("quantile must be in (0, 1), got {quantile}"));
    }
    let g = gradient_rows(clf, &id_data.points, &id_data.labels, reference)?;
    nearest_rank_quantile(&projection_scores(&g, vectors)?, quantile)
}

/// Indices with `τ_i > threshold`, in order.
pub fn filter(tau: &[f64], threshold: f64) -> Vec<usize> {
    (0..tau.len()).filter(|&i| tau[i] > threshold).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub quantile: f64,
    /// Per predicted class reference gradients, vectors and thresholds.
    pub class_conditional: bool,
    /// Singular vectors averaged into the score.
    pub num_vectors: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            quantile: 0.95,
            class_conditional: true,
            num_vectors: 1,
        }
    }
}

/// One scoring group: the whole wild set, or the wild samples predicted as
/// one class.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBucket {
    /// `None` for the global group.
    pub class: Option<usize>,
    pub reference: Vec<f64>,
    /// Unit singular vectors, one per row.
    pub vectors: Matrix,
    pub threshold: f64,
    /// Wild indices scored in this bucket.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub buckets: Vec<FilterBucket>,
    /// `τ` for every wild sample.
    pub scores: Vec<f64>,
    /// Bucket index of every wild sample.
    pub bucket_of: Vec<usize>,
    /// `S_T`, ascending.
    pub candidates: Vec<usize>,
}

impl FilterResult {
    /// Threshold applied to each wild sample.
    pub fn thresholds(&self) -> Vec<f64> {
        self.bucket_of.iter().map(|&b| self.buckets[b].threshold).collect()
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }
}

fn score_bucket(
    clf: &MlpClassifier,
    id_data: &LabeledSet,
    wild: &Matrix,
    members: Vec<usize>,
    predicted: &[usize],
    class: Option<usize>,
    cfg: &FilterConfig,
) -> Result<(FilterBucket, Vec<f64>)> {
    let reference = reference_gradient(clf, id_data)?;
    let points = wild.select_rows(&members);
    let labels: Vec<usize> = members.iter().map(|&i| predicted[i]).collect();
    let g = gradient_rows(clf, &points, &labels, &reference)?;
    let (tau, vectors) = filter_scores_multi(&g, cfg.num_vectors)?;
    let threshold = select_threshold(clf, id_data, &vectors, &reference, cfg.quantile)?;
    Ok((
        FilterBucket {
            class,
            reference,
            vectors,
            threshold,
            members,
        },
        tau,
    ))
}

fn assemble(buckets: Vec<(FilterBucket, Vec<f64>)>, m: usize) -> FilterResult {
    let mut scores = vec![0.0; m];
    let mut bucket_of = vec![usize::MAX; m];
    let mut kept = Vec::with_capacity(buckets.len());
    for (b, (bucket, tau)) in buckets.into_iter().enumerate() {
        for (&i, &t) in bucket.members.iter().zip(&tau) {
            scores[i] = t;
            bucket_of[i] = b;
        }
        kept.push(bucket);
    }
    let candidates = (0..m).filter(|&i| scores[i] > kept[bucket_of[i]].threshold).collect();
    FilterResult {
        buckets: kept,
        scores,
        bucket_of,
        candidates,
    }
}

fn check_inputs(clf: &MlpClassifier, id_data: &LabeledSet, wild: &Matrix, cfg: &FilterConfig) -> Result<()> {
    if wild.rows() == 0 {
        return arg("wild set is empty");
    }
    if wild.cols() != clf.input_dim() || id_data.dim() != clf.input_dim() {
        return arg("data dimension does not match the classifier");
    }
    if id_data.num_classes != clf.num_classes() {
        return arg("ID class count does not match the classifier");
    }
    if cfg.num_vectors == 0 {
        return arg("need at least one singular vector");
    }
    Ok(())
}

/// Single reference gradient, vector set and threshold over the whole wild set.
pub fn global_filter(clf: &MlpClassifier, id_data: &LabeledSet, wild: &Matrix, cfg: &FilterConfig) -> Result<FilterResult> {
    check_inputs(clf, id_data, wild, cfg)?;
    let predicted = clf.predict_labels(wild)?;
    let bucket = score_bucket(clf, id_data, wild, (0..wild.rows()).collect(), &predicted, None, cfg)?;
    Ok(assemble(vec![bucket], wild.rows()))
}

/// Buckets the wild set by predicted class and filters each bucket against
/// the ID samples of that class. Classes with fewer than two wild or ID
/// members (or fewer members than singular vectors) are scored on the
/// global path instead.
pub fn class_conditional_filter(
    clf: &MlpClassifier,
    id_data: &LabeledSet,
    wild: &Matrix,
    cfg: &FilterConfig,
) -> Result<FilterResult> {
    check_inputs(clf, id_data, wild, cfg)?;
    let predicted = clf.predict_labels(wild)?;
    let k = clf.num_classes();
    let mut buckets = Vec::new();
    let mut fallback = Vec::new();
    let min = cfg.num_vectors.max(2);
    for c in 0..k {
        let members: Vec<usize> = (0..wild.rows()).filter(|&i| predicted[i] == c).collect();
        let id_idx = id_data.class_indices(c);
        if members.len() < min || id_idx.len() < 2 {
            fallback.extend(members);
            continue;
        }
        let id_c = id_data.subset(&id_idx);
        buckets.push(score_bucket(clf, &id_c, wild, members, &predicted, Some(c), cfg)?);
    }
    if !fallback.is_empty() {
        fallback.sort_unstable();
        if fallback.len() < cfg.num_vectors {
            return arg(format!(
                "{} fallback samples cannot support {} singular vectors",
                fallback.len(),
                cfg.num_vectors
            ));
        }
        buckets.push(score_bucket(clf, id_data, wild, fallback, &predicted, None, cfg)?);
    }
    Ok(assemble(buckets, wild.rows()))
}

/// Dispatches on `cfg.class_conditional`.
pub fn filter_wild(clf: &MlpClassifier, id_data: &LabeledSet, wild: &Matrix, cfg: &FilterConfig) -> Result<FilterResult> {
    if cfg.class_conditional {
        class_conditional_filter(clf, id_data, wild, cfg)
    } else {
        global_filter(clf, id_data, wild, cfg)
    }
}

/// `(err_in, err_out)`: hidden inliers kept as candidates, hidden outliers
/// passed as ID.
pub fn err_rates(result: &FilterResult, wild: &WildSet) -> Result<(f64, f64)> {
    if result.scores.len() != wild.len() {
        return arg("filter result does not belong to this wild set");
    }
    filtering_errors(wild, &result.scores, &result.thresholds())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalConfig {
    pub erm: TrainConfig,
    pub filter: FilterConfig,
    pub binary: TrainConfig,
}

impl Default for SalConfig {
    fn default() -> Self {
        Self {
            erm: TrainConfig::default(),
            filter: FilterConfig::default(),
            binary: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
        }
    }
}

impl SalConfig {
    /// Settings for the 2-D three-Gaussian toy. Strong weight decay keeps
    /// the reference classifier from saturating on distant wild points, whose
    /// gradients would otherwise vanish.
    pub fn toy(seed: u64) -> Self {
        Self {
            erm: TrainConfig {
                weight_decay: 0.2,
                seed,
                ..TrainConfig::default()
            },
            filter: FilterConfig::default(),
            binary: TrainConfig {
                seed: seed.wrapping_add(1),
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalModel {
    pub clf: MlpClassifier,
    pub filter: FilterResult,
    pub head: BinaryHead,
}

/// ERM, filtering of the wild set, then a binary head with the ID samples
/// as positives and the candidates as negatives.
pub fn train_sal(id_data: &LabeledSet, wild: &WildSet, cfg: &SalConfig) -> Result<SalModel> {
    let clf = train_erm(id_data, &cfg.erm)?;
    train_sal_with(clf, id_data, wild, cfg)
}

/// [`train_sal`] from an already trained classifier.
pub fn train_sal_with(clf: MlpClassifier, id_data: &LabeledSet, wild: &WildSet, cfg: &SalConfig) -> Result<SalModel> {
    let filter = filter_wild(&clf, id_data, &wild.points, &cfg.filter)?;
    if filter.candidates.is_empty() {
        return Err(Error::EmptyCandidates(format!(
            "no wild sample scored above the threshold at quantile {}; lower the quantile",
            cfg.filter.quantile
        )));
    }
    let negatives = wild.points.select_rows(&filter.candidates);
    let head = train_binary(&id_data.points, &negatives, &cfg.binary)?;
    Ok(SalModel { clf, filter, head })
}
