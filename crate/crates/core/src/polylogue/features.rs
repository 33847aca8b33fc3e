//! The canonical per-response feature vector.
//!
//! Layout for `K` personas and `n_b` paragraph bins:
//!
//! | block                 | length      |
//! |-----------------------|-------------|
//! | bin means (b-major)   | `n_b · K`   |
//! | volatilities          | `K`         |
//! | final similarities    | `K`         |
//! | dominance shares      | `K`         |
//! | dominance entropy     | 1           |
//! | switching rate        | 1           |
//!
//! With the eight reasoning personas and 20 bins that is 186 values.

use super::{descriptors, paragraph_bin, project, segment_paragraphs, ParagraphSegmentation, PolylogueMatrix};
use crate::error::{PolylogueError, Result};
use crate::store::{ActivationTrace, FeatureRow, PersonaBank};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub n_bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { n_bins: DEFAULT_BINS }
    }
}

impl FeatureConfig {
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(PolylogueError::Config("n_bins must be >= 1".into()));
        }
        Ok(Self { n_bins })
    }
}

pub fn feature_dimension(num_personas: usize, n_bins: usize) -> usize {
    n_bins * num_personas + 3 * num_personas + 2
}

/// Human-readable names in canonical order, e.g. `para 0 interpreter`.
pub fn feature_names(personas: &[String], n_bins: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(feature_dimension(personas.len(), n_bins));
    for b in 0..n_bins {
        names.extend(personas.iter().map(|p| format!("para {b} {p}")));
    }
    names.extend(personas.iter().map(|p| format!("volatility {p}")));
    names.extend(personas.iter().map(|p| format!("final sim {p}")));
    names.extend(personas.iter().map(|p| format!("dominance share {p}")));
    names.push("dominance entropy".into());
    names.push("switching rate".into());
    names
}

pub fn assemble_features(
    scores: &PolylogueMatrix,
    segmentation: &ParagraphSegmentation,
    config: &FeatureConfig,
) -> Result<FeatureRow> {
    if scores.trace_id != segmentation.trace_id {
        return Err(PolylogueError::Consistency(format!(
            "scores belong to {} but the segmentation to {}",
            scores.trace_id, segmentation.trace_id
        )));
    }
    if segmentation.num_tokens() != scores.num_tokens() {
        return Err(PolylogueError::Dimension(format!(
            "segmentation covers {} tokens, scores have {}",
            segmentation.num_tokens(),
            scores.num_tokens()
        )));
    }
    let k_count = scores.num_personas();
    let n_bins = config.n_bins;
    let num_paragraphs = segmentation.num_paragraphs();

    let mut sums = vec![0.0f64; n_bins * k_count];
    let mut counts = vec![0usize; n_bins];
    for (p, range) in segmentation.ranges.iter().enumerate() {
        let b = paragraph_bin(p, num_paragraphs, n_bins);
        counts[b] += range.len();
        for t in range.clone() {
            for k in 0..k_count {
                sums[b * k_count + k] += scores.score(k, t);
            }
        }
    }
    let mut values = Vec::with_capacity(feature_dimension(k_count, n_bins));
    for b in 0..n_bins {
        for k in 0..k_count {
            values.push(if counts[b] == 0 {
                0.0
            } else {
                sums[b * k_count + k] / counts[b] as f64
            });
        }
    }
    let d = descriptors(scores);
    values.extend_from_slice(&d.volatility);
    values.extend_from_slice(&d.final_sim);
    values.extend_from_slice(&d.dominance_share);
    values.push(d.dominance_entropy);
    values.push(d.switching_rate);

    Ok(FeatureRow {
        trace_id: scores.trace_id.clone(),
        values,
        label: None,
    })
}

/// Raw projection, segmentation and assembly for one trace; the row carries
/// the trace's correctness label.
pub fn trace_features(trace: &ActivationTrace, bank: &PersonaBank, config: &FeatureConfig) -> Result<FeatureRow> {
    let scores = project(trace, bank)?;
    let segmentation = segment_paragraphs(trace);
    let mut row = assemble_features(&scores, &segmentation, config)?;
    row.label = trace.correct();
    Ok(row)
}
