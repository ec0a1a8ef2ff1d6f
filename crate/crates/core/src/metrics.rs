//! Ranking and calibration metrics for binary labels.

use alloc::vec::Vec;

use crate::autodiff::binary_cross_entropy;
use crate::error::{Error, Result};

fn check_lengths(labels: &[f64], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::dim("metric", &[labels.len()], &[scores.len()]));
    }
    if labels.is_empty() {
        return Err(Error::Argument("metrics need at least one sample".into()));
    }
    if labels.iter().chain(scores).any(|v| v.is_nan()) {
        return Err(Error::Numeric("metric input".into()));
    }
    Ok(())
}

/// Area under the ROC curve via the Mann-Whitney rank statistic. Tied
/// scores share their average rank, so each positive-negative tie counts
/// one half.
pub fn auc(labels: &[f64], scores: &[f64]) -> Result<f64> {
    check_lengths(labels, scores)?;
    let positives = labels.iter().filter(|&&y| y > 0.5).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps the half ranks of tie groups integral.
    let mut positive_rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based: start+1 ..= end); twice their mean.
        let rank2 = (start + 1 + end) as u128;
        let pos_in_group = order[start..end]
            .iter()
            .filter(|&&i| labels[i] > 0.5)
            .count() as u128;
        positive_rank_sum2 += rank2 * pos_in_group;
        start = end;
    }
    let p = positives as u128;
    let u2 = positive_rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Mean binary cross-entropy with clipped probabilities.
pub fn logloss(labels: &[f64], probs: &[f64]) -> Result<f64> {
    check_lengths(labels, probs)?;
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| binary_cross_entropy(p, y))
        .sum();
    Ok(total / labels.len() as f64)
}
