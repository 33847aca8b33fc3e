//! Paragraph-level persona rankings and mean reciprocal rank, with the
//! uniform-random and label-frequency baselines.

use serde::{Deserialize, Serialize};

use crate::error::{PolylogueError, Result};
use crate::polylogue::{ParagraphSegmentation, PolylogueMatrix};

/// Ranking of all personas for one paragraph; `ranks[k]` is persona `k`'s
/// 1-based rank (1 = most active).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphRanking {
    pub trace_id: String,
    pub paragraph: usize,
    pub ranks: Vec<usize>,
    pub label: usize,
}

impl ParagraphRanking {
    pub fn reciprocal_rank(&self) -> f64 {
        1.0 / self.ranks[self.label] as f64
    }
}

/// Descending-score ranks; ties go to the lower persona index.
pub fn rank_personas(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
        return Err(PolylogueError::Numeric(format!("non-finite score for persona {k}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps index order among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0; scores.len()];
    for (pos, &k) in order.iter().enumerate() {
        ranks[k] = pos + 1;
    }
    Ok(ranks)
}

pub fn mrr(rankings: &[ParagraphRanking]) -> Result<f64> {
    if rankings.is_empty() {
        return Err(PolylogueError::EmptyInput("no ranked paragraphs".into()));
    }
    let total: f64 = rankings.iter().map(ParagraphRanking::reciprocal_rank).sum();
    Ok(total / rankings.len() as f64)
}

/// Expected MRR of a uniformly random ranking over `k` personas.
pub fn mrr_random(k: usize) -> f64 {
    assert!(k >= 1, "need at least one persona");
    (1..=k).map(|r| 1.0 / r as f64).sum::<f64>() / k as f64
}

/// Global ranking by decreasing label count; ties go to the lower index.
pub fn frequency_ranks(labels: &[usize], num_personas: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_personas];
    for &l in labels {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..num_personas).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
    let mut ranks = vec![0; num_personas];
    for (pos, &k) in order.iter().enumerate() {
        ranks[k] = pos + 1;
    }
    ranks
}

/// MRR of scoring every paragraph against one frequency-based ranking.
pub fn mrr_frequency(labels: &[usize], num_personas: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(PolylogueError::EmptyInput("no paragraph labels".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_personas) {
        return Err(PolylogueError::Validation(format!(
            "label {bad} out of range for K={num_personas}"
        )));
    }
    let ranks = frequency_ranks(labels, num_personas);
    Ok(labels.iter().map(|&l| 1.0 / ranks[l] as f64).sum::<f64>() / labels.len() as f64)
}

/// Rankings for every labelled, non-empty paragraph of one trace, from
/// paragraph means of (normally whitened) scores.
pub fn paragraph_rankings(
    scores: &PolylogueMatrix,
    segmentation: &ParagraphSegmentation,
    labels: &[(usize, usize)],
) -> Result<Vec<ParagraphRanking>> {
    let k_count = scores.num_personas();
    let mut out = Vec::new();
    for &(paragraph, label) in labels {
        let range = segmentation.ranges.get(paragraph).ok_or_else(|| {
            PolylogueError::Validation(format!(
                "trace {} labels paragraph {paragraph} but has only {}",
                scores.trace_id,
                segmentation.num_paragraphs()
            ))
        })?;
        if label >= k_count {
            return Err(PolylogueError::Validation(format!(
                "trace {} paragraph {paragraph}: label {label} out of range for K={k_count}",
                scores.trace_id
            )));
        }
        let Some(means) = scores.mean_over(range.clone()) else {
            continue;
        };
        out.push(ParagraphRanking {
            trace_id: scores.trace_id.clone(),
            paragraph,
            ranks: rank_personas(&means)?,
            label,
        });
    }
    out.sort_by_key(|r| r.paragraph);
    Ok(out)
}

/// One row of the semantic-faithfulness table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrrReport {
    pub model: String,
    #[serde(rename = "Rnd")]
    pub rnd: f64,
    #[serde(rename = "Frq")]
    pub frq: f64,
    #[serde(rename = "Poly")]
    pub poly: Option<f64>,
    pub paragraphs: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(ranks: Vec<usize>, label: usize) -> ParagraphRanking {
        ParagraphRanking { trace_id: "t".into(), paragraph: 0, ranks, label }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_personas(&[0.9, 0.1, 0.5]).unwrap(), vec![1, 3, 2]);
        assert_eq!(rank_personas(&[0.2; 5]).unwrap(), vec![1, 2, 3, 4, 5]);
        assert!(rank_personas(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn mrr_examples() {
        let top = vec![ranking(vec![1, 2, 3], 0), ranking(vec![2, 1, 3], 1)];
        assert_eq!(mrr(&top).unwrap(), 1.0);
        let mixed = vec![ranking(vec![1, 2, 3, 4], 0), ranking(vec![1, 2, 3, 4], 3)];
        assert_eq!(mrr(&mixed).unwrap(), 0.625);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn random_baseline() {
        assert_eq!(mrr_random(1), 1.0);
        assert_eq!(mrr_random(2), 0.75);
        // (1 + 1/2 + ... + 1/8) / 8 = 761/2240
        assert!((mrr_random(8) - 761.0 / 2240.0).abs() < 1e-15);
        assert_eq!((mrr_random(8) * 100.0).round() / 100.0, 0.34);
    }

    #[test]
    fn frequency_baseline() {
        assert_eq!(mrr_frequency(&[4, 4, 4], 8).unwrap(), 1.0);
        assert!((mrr_frequency(&[0, 0, 1], 8).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        // uniform labels: tie rule gives the identity ranking, so the MRR is
        // the mean of 1/r over r = 1..8
        let uniform: Vec<usize> = (0..8).collect();
        let brute: f64 = uniform.iter().map(|&l| 1.0 / (l + 1) as f64).sum::<f64>() / 8.0;
        assert!((mrr_frequency(&uniform, 8).unwrap() - brute).abs() < 1e-15);
        assert!((brute - mrr_random(8)).abs() < 1e-15);
        assert!(mrr_frequency(&[], 8).is_err());
        assert!(mrr_frequency(&[8], 8).is_err());
    }
}
