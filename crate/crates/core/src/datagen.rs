//! Seeded synthetic data: Gaussian class mixtures, the two wild-outlier
//! scenarios of the gradient-filtering toy, Huber wild mixtures, and a
//! planted-direction embedding mixture.

use crate::error::{arg, Result};
use crate::numerics::{cholesky_sample, normalize, squared_distance, Matrix, RngState};

/// Labeled in-distribution data.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub points: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledSet {
    pub fn new(points: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != points.rows() {
            return arg(format!(
                "{} labels for {} points",
                labels.len(),
                points.rows()
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return arg(format!("label {bad} outside 0..{num_classes}"));
        }
        Ok(Self {
            points,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of the samples of class `k`.
    pub fn class_indices(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == k).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            points: self.points.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Both sets must share the class count and dimension.
    pub fn concat(&self, other: &LabeledSet) -> Result<LabeledSet> {
        if self.num_classes != other.num_classes {
            return arg("cannot concatenate sets with different class counts");
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledSet::new(self.points.vstack(&other.points)?, labels, self.num_classes)
    }
}

/// Unlabeled wild data: a mixture of ID and OOD points.
///
/// The membership flags are recorded for evaluation only. They cannot be read
/// through this type; the evaluation entry points in [`crate::metrics`] are
/// the only way to reach them.
///
/// ```compile_fail
/// # use ualk_core::{Matrix, WildSet};
/// let w = WildSet::from_parts(Matrix::zeros(1, 1), vec![true], 1.0).unwrap();
/// let _flags = &w.hidden_is_ood;
/// ```
#[derive(Debug, Clone)]
pub struct WildSet {
    pub points: Matrix,
    hidden_is_ood: Vec<bool>,
    pub pi: f64,
    /// Set when a source had to be sampled with replacement.
    pub with_replacement: bool,
}

impl WildSet {
    /// Reassembles a wild set, e.g. from files written by the `gen` pipeline.
    pub fn from_parts(points: Matrix, hidden_is_ood: Vec<bool>, pi: f64) -> Result<Self> {
        if hidden_is_ood.len() != points.rows() {
            return arg("membership flag count does not match point count");
        }
        if !(pi > 0.0 && pi <= 1.0) {
            return arg(format!("mixing ratio must be in (0, 1], got {pi}"));
        }
        Ok(Self {
            points,
            hidden_is_ood,
            pi,
            with_replacement: false,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub(crate) fn hidden_is_ood(&self) -> &[bool] {
        &self.hidden_is_ood
    }

    pub fn subset(&self, indices: &[usize]) -> WildSet {
        WildSet {
            points: self.points.select_rows(indices),
            hidden_is_ood: indices.iter().map(|&i| self.hidden_is_ood[i]).collect(),
            pi: self.pi,
            with_replacement: self.with_replacement,
        }
    }
}

/// `per_class` draws from `N(means[k], cov)` for each class `k`, class-major.
pub fn make_gaussian_classes(means: &Matrix, cov: &Matrix, per_class: usize, rng: &mut RngState) -> Result<LabeledSet> {
    let k = means.rows();
    let d = means.cols();
    let mut data = Vec::with_capacity(k * per_class * d);
    let mut labels = Vec::with_capacity(k * per_class);
    for c in 0..k {
        let draws = cholesky_sample(means.row(c), cov, per_class, rng)?;
        data.extend_from_slice(draws.as_slice());
        labels.extend(std::iter::repeat_n(c, per_class));
    }
    LabeledSet::new(Matrix::new(k * per_class, d, data)?, labels, k)
}

/// Class means of the three-Gaussian toy: `[-2, 0]`, `[2, 0]`, `[0, 2√3]`.
pub fn toy_means() -> Matrix {
    Matrix::from_parts(3, 2, vec![-2.0, 0.0, 2.0, 0.0, 0.0, 2.0 * 3f64.sqrt()])
}

/// Shared toy covariance `0.25 · I`.
pub fn toy_cov() -> Matrix {
    Matrix::from_parts(2, 2, vec![0.25, 0.0, 0.0, 0.25])
}

/// Centre of the wild-outlier scenarios, `[0, 2/√3]`.
pub fn toy_center() -> [f64; 2] {
    [0.0, 2.0 / 3f64.sqrt()]
}

const SCENARIO_POOL: usize = 100_000;
const SCENARIO_KEEP: usize = 1_000;
const POOL_STREAM: u64 = 0x5A1_0001;

/// The two wild-outlier scenarios of the toy.
///
/// Scenario 1 draws 100,000 points from `N([0, 2/√3], 7I)` on a dedicated
/// sub-stream and keeps the 1,000 farthest from the mean. Scenario 2 draws
/// 1,000 points from `N([10, 2/√3], 0.25I)`.
pub fn make_sal_ood(scenario: u8, rng: &mut RngState) -> Result<Matrix> {
    let center = toy_center();
    match scenario {
        1 => {
            // keyed on the parent seed only, so the pool ignores earlier draws
            let mut pool_rng = rng.split(POOL_STREAM);
            let cov = Matrix::from_parts(2, 2, vec![7.0, 0.0, 0.0, 7.0]);
            let pool = cholesky_sample(&center, &cov, SCENARIO_POOL, &mut pool_rng)?;
            let order = farthest_first(&pool, &center);
            Ok(pool.select_rows(&order[..SCENARIO_KEEP]))
        }
        2 => {
            let mean = [10.0, center[1]];
            cholesky_sample(&mean, &toy_cov(), SCENARIO_KEEP, rng)
        }
        other => arg(format!("scenario must be 1 or 2, got {other}")),
    }
}

/// Row indices sorted by decreasing distance to `center` (ties by index).
pub fn farthest_first(points: &Matrix, center: &[f64]) -> Vec<usize> {
    let d: Vec<f64> = points.iter_rows().map(|r| squared_distance(r, center)).collect();
    let mut order: Vec<usize> = (0..points.rows()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    order
}

/// How wild membership is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WildComposition {
    /// Each row independently OOD with probability `pi`.
    Bernoulli,
    /// Exactly `round(pi · m)` OOD rows, in shuffled positions.
    Fixed,
}

/// Mixes `m` rows from two sources with OOD rate `pi`.
///
/// Rows are drawn without replacement when each source is large enough for
/// the drawn count, otherwise with replacement (and `with_replacement` set).
pub fn make_wild(
    id_points: &Matrix,
    ood_points: &Matrix,
    pi: f64,
    m: usize,
    composition: WildComposition,
    rng: &mut RngState,
) -> Result<WildSet> {
    if id_points.rows() == 0 || ood_points.rows() == 0 {
        return arg("wild sources must be non-empty");
    }
    if id_points.cols() != ood_points.cols() {
        return arg("wild sources must share a dimension");
    }
    if !(pi > 0.0 && pi <= 1.0) {
        return arg(format!("mixing ratio must be in (0, 1], got {pi}"));
    }
    let flags: Vec<bool> = match composition {
        WildComposition::Bernoulli => (0..m).map(|_| rng.bernoulli(pi)).collect(),
        WildComposition::Fixed => {
            let n_ood = (pi * m as f64).round() as usize;
            let mut f: Vec<bool> = (0..m).map(|i| i < n_ood).collect();
            rng.shuffle(&mut f);
            f
        }
    };
    let n_ood = flags.iter().filter(|&&f| f).count();
    let n_id = m - n_ood;
    let mut with_replacement = false;
    let mut draw = |src: &Matrix, count: usize, rng: &mut RngState| -> Vec<usize> {
        if count <= src.rows() {
            let mut idx = rng.permutation(src.rows());
            idx.truncate(count);
            idx
        } else {
            with_replacement = true;
            (0..count).map(|_| rng.below(src.rows())).collect()
        }
    };
    let ood_idx = draw(ood_points, n_ood, rng);
    let id_idx = draw(id_points, n_id, rng);
    let d = id_points.cols();
    let mut data = Vec::with_capacity(m * d);
    let (mut io, mut ii) = (0, 0);
    for &is_ood in &flags {
        if is_ood {
            data.extend_from_slice(ood_points.row(ood_idx[io]));
            io += 1;
        } else {
            data.extend_from_slice(id_points.row(id_idx[ii]));
            ii += 1;
        }
    }
    Ok(WildSet {
        points: Matrix::new(m, d, data)?,
        hidden_is_ood: flags,
        pi,
        with_replacement,
    })
}

/// Concatenates every row of both sources and shuffles them; the OOD rate is
/// whatever the source sizes imply.
pub fn make_wild_exact(id_points: &Matrix, ood_points: &Matrix, rng: &mut RngState) -> Result<WildSet> {
    if id_points.rows() == 0 || ood_points.rows() == 0 {
        return arg("wild sources must be non-empty");
    }
    let all = id_points.vstack(ood_points)?;
    let flags: Vec<bool> = (0..all.rows()).map(|i| i >= id_points.rows()).collect();
    let order = rng.permutation(all.rows());
    let pi = ood_points.rows() as f64 / all.rows() as f64;
    Ok(WildSet {
        points: all.select_rows(&order),
        hidden_is_ood: order.iter().map(|&i| flags[i]).collect(),
        pi,
        with_replacement: false,
    })
}

/// Embedding mixture with outliers displaced along a hidden unit direction.
#[derive(Debug, Clone)]
pub struct SubspaceMixture {
    pub wild: WildSet,
    direction: Vec<f64>,
}

impl SubspaceMixture {
    pub(crate) fn direction(&self) -> &[f64] {
        &self.direction
    }
}

/// Inliers `~ N(0, I)`, outliers `~ N(shift · u, I)` for a random unit `u`,
/// each row an outlier with probability `pi`.
pub fn make_subspace_mixture(n: usize, d: usize, pi: f64, shift: f64, rng: &mut RngState) -> Result<SubspaceMixture> {
    if d < 2 {
        return arg("subspace mixture needs d >= 2");
    }
    if !(shift >= 0.0) {
        return arg("shift must be non-negative");
    }
    if !(pi > 0.0 && pi <= 1.0) {
        return arg(format!("mixing ratio must be in (0, 1], got {pi}"));
    }
    let direction = loop {
        if let Some(u) = normalize(&rng.normal_vec(d)) {
            break u;
        }
    };
    let mut data = Vec::with_capacity(n * d);
    let mut flags = Vec::with_capacity(n);
    for _ in 0..n {
        let is_ood = rng.bernoulli(pi);
        let z = rng.normal_vec(d);
        if is_ood {
            data.extend(z.iter().zip(&direction).map(|(a, u)| a + shift * u));
        } else {
            data.extend(z);
        }
        flags.push(is_ood);
    }
    Ok(SubspaceMixture {
        wild: WildSet {
            points: Matrix::new(n, d, data)?,
            hidden_is_ood: flags,
            pi,
            with_replacement: false,
        },
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_classes_shape_and_labels() {
        let mut rng = RngState::new(1);
        let set = make_gaussian_classes(&toy_means(), &toy_cov(), 1000, &mut rng).unwrap();
        assert_eq!(set.points.shape(), (3000, 2));
        assert_eq!(set.class_counts(), vec![1000, 1000, 1000]);
    }

    #[test]
    fn zero_covariance_single_class_is_constant() {
        let means = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
        let set = make_gaussian_classes(&means, &Matrix::zeros(2, 2), 10, &mut RngState::new(2)).unwrap();
        assert!(set.points.iter_rows().all(|r| r == [1.0, -1.0]));
    }

    #[test]
    fn scenario_one_keeps_the_farthest_points() {
        let mut rng = RngState::new(5);
        let kept = make_sal_ood(1, &mut rng).unwrap();
        assert_eq!(kept.rows(), 1000);
        // rebuild the pool from the same sub-stream and compare by full sort
        let mut pool_rng = RngState::new(5).split(POOL_STREAM);
        let pool = cholesky_sample(
            &toy_center(),
            &Matrix::from_parts(2, 2, vec![7.0, 0.0, 0.0, 7.0]),
            SCENARIO_POOL,
            &mut pool_rng,
        )
        .unwrap();
        let mut radii: Vec<f64> = pool.iter_rows().map(|r| squared_distance(r, &toy_center())).collect();
        radii.sort_by(|a, b| b.total_cmp(a));
        let min_kept = kept
            .iter_rows()
            .map(|r| squared_distance(r, &toy_center()))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min_kept, radii[999]);
        assert!(radii[1000] <= min_kept);
    }

    #[test]
    fn scenario_two_is_centred_at_ten() {
        let pts = make_sal_ood(2, &mut RngState::new(8)).unwrap();
        let m = pts.column_means();
        assert!((m[0] - 10.0).abs() < 0.05);
        assert!((m[1] - toy_center()[1]).abs() < 0.05);
        assert!(make_sal_ood(3, &mut RngState::new(8)).is_err());
    }

    #[test]
    fn pure_ood_wild_set() {
        let id = Matrix::from_rows(&[[0.0]]).unwrap();
        let ood = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let w = make_wild(&id, &ood, 1.0, 20, WildComposition::Bernoulli, &mut RngState::new(0)).unwrap();
        assert!(w.hidden_is_ood().iter().all(|&f| f));
        assert!(w.points.iter_rows().all(|r| r[0] >= 1.0));
        assert!(w.with_replacement);
    }

    #[test]
    fn bernoulli_count_within_three_sigma() {
        let id = Matrix::zeros(20_000, 1);
        let ood = Matrix::new(20_000, 1, vec![1.0; 20_000]).unwrap();
        let w = make_wild(&id, &ood, 0.1, 12_000, WildComposition::Bernoulli, &mut RngState::new(4)).unwrap();
        let n_ood = w.hidden_is_ood().iter().filter(|&&f| f).count() as f64;
        let sigma = (12_000.0 * 0.1 * 0.9f64).sqrt();
        assert!((n_ood - 1200.0).abs() < 3.0 * sigma);
        assert!(!w.with_replacement);
        // rows agree with their flags
        for (r, &f) in w.points.iter_rows().zip(w.hidden_is_ood()) {
            assert_eq!(r[0] == 1.0, f);
        }
    }

    #[test]
    fn fixed_composition_is_exact() {
        let id = Matrix::zeros(100, 1);
        let ood = Matrix::new(100, 1, vec![1.0; 100]).unwrap();
        let w = make_wild(&id, &ood, 0.25, 40, WildComposition::Fixed, &mut RngState::new(4)).unwrap();
        assert_eq!(w.hidden_is_ood().iter().filter(|&&f| f).count(), 10);
    }

    #[test]
    fn empty_sources_rejected() {
        let e = Matrix::zeros(0, 1);
        let o = Matrix::zeros(3, 1);
        assert!(make_wild(&e, &o, 0.5, 3, WildComposition::Bernoulli, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn generators_are_bit_reproducible() {
        let a = make_subspace_mixture(200, 8, 0.1, 3.0, &mut RngState::new(12)).unwrap();
        let b = make_subspace_mixture(200, 8, 0.1, 3.0, &mut RngState::new(12)).unwrap();
        assert_eq!(a.wild.points, b.wild.points);
        assert_eq!(a.wild.hidden_is_ood(), b.wild.hidden_is_ood());
        assert_eq!(a.direction(), b.direction());
    }
}
