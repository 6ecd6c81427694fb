//! Ranking and regression metrics.

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann–Whitney rank sum; tied scores
/// share their average rank, which counts a positive/negative tie as 1/2.
pub fn auroc(scores: &[(f64, bool)]) -> Result<f64> {
    let pos = scores.iter().filter(|(_, y)| *y).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        let group_pos = sorted[i..=j].iter().filter(|(_, y)| *y).count();
        rank_sum += avg * group_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Step-wise area under the precision–recall curve (average precision);
/// tied scores form a single threshold.
pub fn auprc(scores: &[(f64, bool)]) -> Result<f64> {
    let pos = scores.iter().filter(|(_, y)| *y).count();
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// `(MAE, RMSE)` of `(prediction, truth)` pairs.
pub fn mae_rmse(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Empty);
    }
    let n = pairs.len() as f64;
    let (abs, sq) = pairs.iter().fold((0.0, 0.0), |(a, s), (p, t)| {
        let r = p - t;
        (a + r.abs(), s + r * r)
    });
    Ok((abs / n, (sq / n).sqrt()))
}
