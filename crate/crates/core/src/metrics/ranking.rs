//! Threshold-free ranking metrics over (score, label) pairs.

use crate::error::{Error, Result};

/// Pairs sorted by descending score, split into runs of equal score.
/// Each run is `(positives, negatives, score)`.
fn tie_groups<T: Copy + Into<f64>>(scores: &[T], labels: &[bool]) -> Result<Vec<(u64, u64, f64)>> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(scores.len());
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        let s: f64 = s.into();
        if s.is_nan() {
            return Err(Error::NonFinite(i));
        }
        pairs.push((s, y));
    }
    pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(u64, u64, f64)> = Vec::new();
    for (s, y) in pairs {
        match groups.last_mut() {
            Some(g) if g.2 == s => {
                if y {
                    g.0 += 1
                } else {
                    g.1 += 1
                }
            }
            _ => groups.push((y as u64, !y as u64, s)),
        }
    }
    Ok(groups)
}

fn class_totals(groups: &[(u64, u64, f64)]) -> (u64, u64) {
    groups.iter().fold((0, 0), |(p, n), g| (p + g.0, n + g.1))
}

/// Area under the ROC curve as the Mann–Whitney statistic with midranks:
/// P(positive > negative) + ½·P(tie).
pub fn auroc<T: Copy + Into<f64>>(scores: &[T], labels: &[bool]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    let (pos, neg) = class_totals(&groups);
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUROC needs both classes".into()));
    }
    // Walking down from the top, every positive beats the negatives still
    // below it and ties half of those in its own group.
    let mut negatives_seen = 0u64;
    let mut twice_wins = 0u128;
    for &(p, n, _) in &groups {
        let below = neg - negatives_seen - n;
        twice_wins += p as u128 * (2 * below + n) as u128;
        negatives_seen += n;
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Step-interpolated average precision, Σ (R_k − R_{k−1})·P_k over
/// descending thresholds, with tied scores forming one threshold.
pub fn average_precision<T: Copy + Into<f64>>(scores: &[T], labels: &[bool]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    let (pos, _) = class_totals(&groups);
    if pos == 0 {
        return Err(Error::Metric("average precision needs a positive".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for &(p, n, _) in &groups {
        tp += p;
        fp += n;
        if p > 0 {
            ap += p as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap / pos as f64)
}

/// Best F1 over thresholds at every distinct score (positive when
/// score ≥ threshold), with the threshold achieving it. Ties in F1 go to
/// the lowest threshold.
pub fn f1_max<T: Copy + Into<f64>>(scores: &[T], labels: &[bool]) -> Result<(f64, f64)> {
    let groups = tie_groups(scores, labels)?;
    let (pos, _) = class_totals(&groups);
    if pos == 0 {
        return Err(Error::Metric("F1 needs a positive".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for &(p, n, s) in &groups {
        tp += p;
        fp += n;
        let f1 = 2.0 * tp as f64 / (tp + fp + pos) as f64;
        if f1 >= best.0 {
            best = (f1, s);
        }
    }
    Ok(best)
}
