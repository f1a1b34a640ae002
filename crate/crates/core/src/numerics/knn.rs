//! Brute-force k-nearest-neighbour distances.

use rayon::prelude::*;

use super::matrix::{squared_distance, Matrix};
use crate::error::{arg, Result};

/// Euclidean distance from `query` to its `k`-th nearest row of `set`.
///
/// With `exclude_self`, the first row bitwise equal to `query` is skipped once.
pub fn knn_distance(query: &[f64], set: &Matrix, k: usize, exclude_self: bool) -> Result<f64> {
    if query.len() != set.cols() {
        return arg(format!(
            "query has {} dims, set has {}",
            query.len(),
            set.cols()
        ));
    }
    let mut skipped = !exclude_self;
    let mut dists = Vec::with_capacity(set.rows());
    for row in set.iter_rows() {
        if !skipped && bitwise_eq(row, query) {
            skipped = true;
            continue;
        }
        dists.push(squared_distance(query, row));
    }
    kth_smallest(&mut dists, k).map(f64::sqrt)
}

/// k-th nearest-neighbour distance of every row of `set` to the other rows.
pub fn knn_distances_within(set: &Matrix, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k >= set.rows() {
        return arg(format!(
            "k = {k} must be in 1..{} for a set of {} rows",
            set.rows(),
            set.rows()
        ));
    }
    (0..set.rows())
        .into_par_iter()
        .map(|i| {
            let q = set.row(i);
            let mut dists: Vec<f64> = set
                .iter_rows()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| squared_distance(q, r))
                .collect();
            kth_smallest(&mut dists, k).map(f64::sqrt)
        })
        .collect()
}

fn kth_smallest(dists: &mut [f64], k: usize) -> Result<f64> {
    if k == 0 || k > dists.len() {
        return arg(format!(
            "k = {k} exceeds the {} available neighbours",
            dists.len()
        ));
    }
    let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn self_exclusion_skips_query_once() {
        let set = col(&[0.0, 1.0, 3.0]);
        assert_eq!(knn_distance(&[0.0], &set, 1, true).unwrap(), 1.0);
        assert_eq!(knn_distance(&[0.0], &set, 1, false).unwrap(), 0.0);
        let dup = col(&[0.0, 0.0, 3.0]);
        assert_eq!(knn_distance(&[0.0], &dup, 1, true).unwrap(), 0.0);
    }

    #[test]
    fn kth_neighbour() {
        let set = col(&[1.0, 3.0]);
        assert_eq!(knn_distance(&[0.0], &set, 2, false).unwrap(), 3.0);
    }

    #[test]
    fn k_beyond_effective_size_is_rejected() {
        let set = col(&[0.0, 1.0]);
        assert!(knn_distance(&[0.0], &set, 2, true).is_err());
        assert!(knn_distance(&[0.0], &set, 0, false).is_err());
        assert!(knn_distances_within(&set, 2).is_err());
    }
}
