//! Image-level detection metrics. Label `true` means anomalous (positive).
//!
//! All arithmetic is done in `f64`.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check_lengths(scores: &[f32], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Indices sorted by descending score; ties keep input order.
fn descending(scores: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Cumulative (true positives, false positives) at the end of every group of
/// equal scores, walking from the highest score down, with each group's score.
fn tie_groups(scores: &[f32], labels: &[bool]) -> Vec<(f32, usize, usize)> {
    let order = descending(scores);
    let mut groups = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        groups.push((s, tp, fp));
    }
    groups
}

/// Area under the ROC curve via the Mann–Whitney statistic with average ranks
/// for ties: `(R⁺ − n⁺(n⁺+1)/2) / (n⁺·n⁻)`.
pub fn auroc(scores: &[f32], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision, `Σ (Rₖ − Rₖ₋₁)·Pₖ` over descending score thresholds with
/// tied scores entering together.
pub fn average_precision(scores: &[f32], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (_, tp, fp) in tie_groups(scores, labels) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[inline]
pub(crate) fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Best F1 over thresholds at the unique scores (predict anomalous when
/// `score ≥ θ`), with the lowest threshold that reaches it.
pub fn max_f1(scores: &[f32], labels: &[bool]) -> Result<(f64, f32)> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut best = (f64::NEG_INFINITY, f32::NAN);
    for (theta, tp, fp) in tie_groups(scores, labels) {
        let f1 = f1_from_counts(tp, fp, pos - tp);
        if f1 >= best.0 {
            best = (f1, theta);
        }
    }
    Ok(best)
}

/// Fraction of entries where `score ≥ θ` agrees with the label.
pub fn accuracy_at(scores: &[f32], labels: &[bool], threshold: f32) -> Result<f64> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == l)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.3, 0.5, 0.2], &[true, true, false, false]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.4, 0.4], &[true, false]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn ap_examples() {
        assert_relative_eq!(
            average_precision(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap(),
            0.5 * 1.0 + 0.5 * (2.0 / 3.0),
            max_relative = 1e-12
        );
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        let n = 7;
        let scores: Vec<f32> = (0..n).map(|i| (n - i) as f32).collect();
        let mut labels = vec![false; n];
        labels[n - 1] = true;
        assert_relative_eq!(average_precision(&scores, &labels).unwrap(), 1.0 / n as f64, max_relative = 1e-12);
        assert!(matches!(average_precision(&[0.1], &[false]), Err(Error::NoPositives)));
    }

    #[test]
    fn f1_examples() {
        let (f1, theta) = max_f1(&[0.9, 0.8, 0.2], &[true, false, true]).unwrap();
        assert_relative_eq!(f1, 0.8, max_relative = 1e-12);
        assert_eq!(theta, 0.2);
        assert_eq!(max_f1(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), (1.0, 0.8));
        // balanced data, every prediction positive: TP = n⁺, FP = n⁻
        let scores = [0.5f32; 6];
        let labels = [true, false, true, false, true, false];
        assert_relative_eq!(max_f1(&scores, &labels).unwrap().0, 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let labels = [true, false, true, false, false];
        let scores = [0.9, 0.8, 0.2, 0.3, 0.1];
        assert_relative_eq!(accuracy_at(&scores, &labels, -1.0).unwrap(), 0.4, max_relative = 1e-12);
        assert_eq!(accuracy_at(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
        assert_relative_eq!(
            accuracy_at(&[0.9, 0.8, 0.2], &[true, false, true], 0.2).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-12
        );
        assert!(accuracy_at(&[], &[], 0.0).is_err());
    }

    fn labelled() -> impl Strategy<Value = (Vec<f32>, Vec<bool>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..12).prop_map(|q| q as f32 * 0.25), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance((scores, labels) in labelled()) {
            let t: Vec<f32> = scores.iter().map(|&s| (s * 3.0 + 1.0).exp()).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&t, &labels).unwrap());
            prop_assert_eq!(average_precision(&scores, &labels).unwrap(), average_precision(&t, &labels).unwrap());
        }

        #[test]
        fn negated_scores_complement(seed in any::<u64>(), n in 2usize..80) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            labels[0] = true;
            labels[1] = false;
            let neg: Vec<f32> = scores.iter().map(|s| -s).collect();
            let sum = auroc(&scores, &labels).unwrap() + auroc(&neg, &labels).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
