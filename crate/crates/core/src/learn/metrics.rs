use crate::error::{PolylogueError, Result};

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from mid-ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(PolylogueError::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PolylogueError::DegenerateLabel("AUC is undefined".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(PolylogueError::Numeric("NaN score in AUC".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based mid-rank of the tie block i..=j
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn accuracy(predictions: &[bool], labels: &[bool]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Accuracy of `p >= 0.5` predictions.
pub fn accuracy_at_half(probabilities: &[f64], labels: &[bool]) -> f64 {
    let preds: Vec<bool> = probabilities.iter().map(|&p| p >= 0.5).collect();
    accuracy(&preds, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    total += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        total / pairs
    }

    #[test]
    fn examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        let s = [0.9, 0.5, 0.5, 0.1];
        let l = [true, true, false, false];
        assert_eq!(auc(&s, &l).unwrap(), 0.875);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn matches_pair_enumeration() {
        let s = [0.3, 0.3, 0.1, 0.7, 0.7, 0.7, 0.2, 0.9, 0.0, 0.3];
        let l = [true, false, false, true, false, true, true, false, false, true];
        assert!((auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() < 1e-15);
    }

    #[test]
    fn accuracy_threshold() {
        let l = [true, false, true, false];
        assert_eq!(accuracy_at_half(&[0.5, 0.49, 0.2, 0.9], &l), 0.5);
        assert_eq!(accuracy_at_half(&[0.9, 0.1, 0.7, 0.3], &l), 1.0);
    }
}
