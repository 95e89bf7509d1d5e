use crate::error::{Error, Result};

/// Percentage of matching predictions.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::input("accuracy of an empty set"));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Average the chunk probability vectors of one speaker. Returns the arg-max class and the
/// mean probability of class 1.
pub fn soft_vote(chunks: &[Vec<f64>]) -> Result<(usize, f64)> {
    let k = chunks.first().map(Vec::len).ok_or_else(|| Error::input("soft vote over zero chunks"))?;
    if k < 2 || chunks.iter().any(|c| c.len() != k) {
        return Err(Error::shape("soft vote needs equal-length probability vectors of at least 2 classes"));
    }
    let mut mean = vec![0.0; k];
    for c in chunks {
        for (m, &p) in mean.iter_mut().zip(c) {
            *m += p;
        }
    }
    let n = chunks.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok((argmax(&mean), mean[1]))
}

/// Area under the ROC curve as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half. Computed by ranking, O(n log n).
pub fn roc_auc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::input("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("NaN score"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::input("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Count, in half-units, negatives strictly below plus half the tied negatives.
    let mut twice = 0u128;
    let mut below_neg = 0u128;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (mut pos, mut neg) = (0u128, 0u128);
        for &o in &order[i..j] {
            if positive[o] {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        twice += pos * (2 * below_neg + neg);
        below_neg += neg;
        i = j;
    }
    Ok(twice as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// Macro average of one-vs-rest AUCs over the classes that have both positives and
/// negatives in `labels`.
pub fn multiclass_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::input("score matrix and labels must be equally long and non-empty"));
    }
    let k = scores[0].len();
    if scores.iter().any(|r| r.len() != k) {
        return Err(Error::shape("score rows differ in length"));
    }
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::input("multi-class AUC needs at least two classes present"));
    }
    if let Some(&c) = present.iter().find(|&&c| c >= k) {
        return Err(Error::input(format!("label {c} has no score column")));
    }
    let mut total = 0.0;
    for &c in &present {
        let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        total += roc_auc_binary(&col, &pos)?;
    }
    let skipped = k - present.len();
    if skipped > 0 {
        log::debug!("multi-class AUC: {skipped} classes without positives skipped");
    }
    Ok(total / present.len() as f64)
}

/// Mean and population standard deviation.
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::input("aggregate over zero values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// `"66.20 ± 1.17"`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(accuracy(&[1, 0], &[1, 1]).unwrap(), 50.0);
        assert!(accuracy(&[], &[]).is_err());
        let (c, s) = soft_vote(&[vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
        assert_eq!(c, 1);
        assert!((s - 0.6).abs() < 1e-12);
        assert_eq!(soft_vote(&[vec![0.5, 0.5]]).unwrap().0, 0);
        let auc = roc_auc_binary(&[0.9, 0.3, 0.8, 0.4], &[true, false, false, true]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(roc_auc_binary(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(roc_auc_binary(&[0.1, 0.2], &[true, true]).is_err());
        let (m, s) = aggregate_seeds(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(format_mean_std(66.2, 1.17), "66.20 ± 1.17");
    }
}
