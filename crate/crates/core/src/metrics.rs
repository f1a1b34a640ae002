//! Detection metrics and the evaluation entry points for hidden wild
//! membership.
//!
//! Scores follow one orientation throughout: higher means more
//! in-distribution. Thresholds use the nearest-rank rule and accept a score
//! when it is `≥ λ`, so results are exact functions of the sorted scores.

use crate::datagen::{SubspaceMixture, WildSet};
use crate::error::{arg, Error, Result};

/// ID and OOD scores, higher = more ID.
#[derive(Debug, Clone, Default)]
pub struct ScoreSets {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSets {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Self {
        Self {
            id_scores,
            ood_scores,
        }
    }

    /// Swaps the roles of the two sets.
    pub fn swapped(&self) -> ScoreSets {
        ScoreSets::new(self.ood_scores.clone(), self.id_scores.clone())
    }

    /// Negates every score, for sources where higher means more OOD.
    pub fn negated(&self) -> ScoreSets {
        ScoreSets::new(
            self.id_scores.iter().map(|s| -s).collect(),
            self.ood_scores.iter().map(|s| -s).collect(),
        )
    }

    fn check(&self) -> Result<()> {
        if self.id_scores.is_empty() || self.ood_scores.is_empty() {
            return arg("both score sets must be non-empty");
        }
        if self.id_scores.iter().chain(&self.ood_scores).any(|s| s.is_nan()) {
            return arg("scores must not be NaN");
        }
        Ok(())
    }
}

/// Smallest rank `r` with `r / n ≥ rate`.
fn nearest_rank(rate: f64, n: usize) -> usize {
    let mut r = ((rate * n as f64).ceil() as usize).clamp(1, n);
    while r > 1 && (r - 1) as f64 / n as f64 >= rate {
        r -= 1;
    }
    while r < n && (r as f64 / n as f64) < rate {
        r += 1;
    }
    r
}

/// Fraction of OOD scores accepted at the threshold that accepts a `tpr`
/// fraction of ID scores.
///
/// `λ` is the `r`-th largest ID score with `r = ⌈tpr · n⌉`, i.e. the largest
/// threshold whose acceptance rate `#{id ≥ λ}/n` still reaches `tpr`.
pub fn fpr_at_tpr(s: &ScoreSets, tpr: f64) -> Result<f64> {
    s.check()?;
    if !(tpr > 0.0 && tpr < 1.0) {
        return arg(format!("tpr must be in (0, 1), got {tpr}"));
    }
    let lambda = threshold_at_tpr(&s.id_scores, tpr);
    let accepted = s.ood_scores.iter().filter(|&&x| x >= lambda).count();
    Ok(accepted as f64 / s.ood_scores.len() as f64)
}

/// The acceptance threshold used by [`fpr_at_tpr`].
pub fn threshold_at_tpr(id_scores: &[f64], tpr: f64) -> f64 {
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let r = nearest_rank(tpr, sorted.len());
    sorted[r - 1]
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counted one half.
pub fn auroc(s: &ScoreSets) -> Result<f64> {
    s.check()?;
    let mut all: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&x| (x, true))
        .chain(s.ood_scores.iter().map(|&x| (x, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the Mann-Whitney count, in integers
    let mut twice_wins: u128 = 0;
    let mut ood_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut id_tie, mut ood_tie) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                id_tie += 1;
            } else {
                ood_tie += 1;
            }
            j += 1;
        }
        twice_wins += id_tie * (2 * ood_below + ood_tie);
        ood_below += ood_tie;
        i = j;
    }
    let total = 2 * s.id_scores.len() as u128 * s.ood_scores.len() as u128;
    Ok(twice_wins as f64 / total as f64)
}

/// Nearest-rank empirical quantile: the `⌈q · n⌉`-th smallest value.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return arg("quantile of an empty list");
    }
    if !(q > 0.0 && q < 1.0) {
        return arg(format!("quantile must be in (0, 1), got {q}"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(q, sorted.len()) - 1])
}

/// Both metrics in one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionReport {
    pub auroc: f64,
    pub fpr95: f64,
}

pub fn report(s: &ScoreSets) -> Result<DetectionReport> {
    Ok(DetectionReport {
        auroc: auroc(s)?,
        fpr95: fpr_at_tpr(s, 0.95)?,
    })
}

// ---------------------------------------------------------------------------
// Evaluation entry points. These are the only readers of hidden membership.
// ---------------------------------------------------------------------------

/// Splits per-sample wild scores by hidden membership.
///
/// `scores` must be oriented so that higher means more ID; pass
/// `higher_is_ood = true` for outlier scores such as filtering or
/// membership scores and they are negated.
pub fn wild_score_sets(wild: &WildSet, scores: &[f64], higher_is_ood: bool) -> Result<ScoreSets> {
    let flags = wild.hidden_is_ood();
    if scores.len() != flags.len() {
        return arg(format!(
            "{} scores for {} wild samples",
            scores.len(),
            flags.len()
        ));
    }
    let sign = if higher_is_ood { -1.0 } else { 1.0 };
    let mut out = ScoreSets::default();
    for (&s, &ood) in scores.iter().zip(flags) {
        if ood {
            out.ood_scores.push(sign * s);
        } else {
            out.id_scores.push(sign * s);
        }
    }
    Ok(out)
}

/// Fraction of `candidates` that are hidden inliers; 0 for an empty set.
pub fn contamination(wild: &WildSet, candidates: &[usize]) -> Result<f64> {
    let flags = wild.hidden_is_ood();
    if let Some(&bad) = candidates.iter().find(|&&i| i >= flags.len()) {
        return arg(format!("candidate index {bad} out of range"));
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let inliers = candidates.iter().filter(|&&i| !flags[i]).count();
    Ok(inliers as f64 / candidates.len() as f64)
}

/// Counts of hidden (inliers, outliers).
pub fn membership_counts(wild: &WildSet) -> (usize, usize) {
    let ood = wild.hidden_is_ood().iter().filter(|&&f| f).count();
    (wild.len() - ood, ood)
}

/// Copy of the hidden flags, for persisting evaluation ground truth.
pub fn export_membership(wild: &WildSet) -> Vec<bool> {
    wild.hidden_is_ood().to_vec()
}

/// Empirical filtering errors for per-sample outlier scores and thresholds:
/// `(err_in, err_out)` where `err_in` is the fraction of hidden inliers with
/// score above their threshold and `err_out` the fraction of hidden outliers
/// at or below it.
pub fn filtering_errors(wild: &WildSet, scores: &[f64], thresholds: &[f64]) -> Result<(f64, f64)> {
    let flags = wild.hidden_is_ood();
    if scores.len() != flags.len() || thresholds.len() != flags.len() {
        return arg("scores and thresholds must match the wild set length");
    }
    let (mut n_in, mut n_out, mut bad_in, mut bad_out) = (0usize, 0usize, 0usize, 0usize);
    for ((&s, &t), &ood) in scores.iter().zip(thresholds).zip(flags) {
        if ood {
            n_out += 1;
            if s <= t {
                bad_out += 1;
            }
        } else {
            n_in += 1;
            if s > t {
                bad_in += 1;
            }
        }
    }
    if n_in == 0 && n_out == 0 {
        return Err(Error::State("wild set carries no membership flags".into()));
    }
    let rate = |bad: usize, n: usize| if n == 0 { 0.0 } else { bad as f64 / n as f64 };
    Ok((rate(bad_in, n_in), rate(bad_out, n_out)))
}

/// The planted outlier direction of a synthetic embedding mixture.
pub fn planted_direction(mix: &SubspaceMixture) -> &[f64] {
    mix.direction()
}
