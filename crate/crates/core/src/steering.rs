//! Steering schedules from fitted coefficients, the steering update, and
//! the online paragraph counter that decides which rules are live.

use serde::{Deserialize, Serialize};

use crate::error::{PolylogueError, Result};
use crate::learn::SparseLogisticModel;
use crate::polylogue::feature_dimension;
use crate::store::{ActivationTrace, PersonaBank, SteerDirection, SteeringRule, SteeringSchedule};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyConfig {
    pub top_k: usize,
    /// Median paragraph count of the training responses.
    pub median_paragraphs: usize,
    pub n_bins: usize,
}

impl StrategyConfig {
    pub fn new(top_k: usize, median_paragraphs: usize, n_bins: usize) -> Result<Self> {
        if top_k < 1 {
            return Err(PolylogueError::Config("top_k must be >= 1".into()));
        }
        if median_paragraphs < 1 {
            return Err(PolylogueError::Config("median paragraph count must be >= 1".into()));
        }
        if n_bins < 1 {
            return Err(PolylogueError::Config("n_bins must be >= 1".into()));
        }
        Ok(Self { top_k, median_paragraphs, n_bins })
    }
}

/// Median of the counts, rounded half up.
pub fn median_paragraph_count(counts: &[usize]) -> Result<usize> {
    if counts.is_empty() {
        return Err(PolylogueError::EmptyInput("no paragraph counts".into()));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        // (a + b) / 2 rounded half up
        (sorted[n / 2 - 1] + sorted[n / 2]).div_ceil(2)
    })
}

/// 1-based inclusive paragraph range covered by bin `b` when a response has
/// `m` paragraphs.
pub fn bin_paragraph_range(b: usize, m: usize, n_bins: usize) -> (usize, usize) {
    let start = b * m / n_bins + 1;
    let end = ((b + 1) * m / n_bins).max(start);
    (start, end)
}

/// A paragraph-bin coefficient picked for steering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub feature: usize,
    pub bin: usize,
    pub persona: usize,
    pub coefficient: f64,
}

/// Paragraph-bin coefficients ranked by magnitude, largest first; equal
/// magnitudes keep feature order. Zero weights are skipped.
pub fn rank_paragraph_features(
    model: &SparseLogisticModel,
    num_personas: usize,
    n_bins: usize,
) -> Result<Vec<SelectedFeature>> {
    let expected = feature_dimension(num_personas, n_bins);
    if model.weights.len() != expected {
        return Err(PolylogueError::Dimension(format!(
            "model has {} weights, expected {expected} for K={num_personas}, n_b={n_bins}",
            model.weights.len()
        )));
    }
    let mut picked: Vec<SelectedFeature> = model.weights[..n_bins * num_personas]
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(j, &w)| SelectedFeature {
            feature: j,
            bin: j / num_personas,
            persona: j % num_personas,
            coefficient: w,
        })
        .collect();
    picked.sort_by(|a, b| b.coefficient.abs().total_cmp(&a.coefficient.abs()));
    Ok(picked)
}

/// Translates the `top_k` strongest paragraph-bin coefficients into rules,
/// ordered by decreasing magnitude. The schedule uses the bank's layer and
/// default α.
pub fn derive_strategy(
    model: &SparseLogisticModel,
    config: &StrategyConfig,
    bank: &PersonaBank,
) -> Result<SteeringSchedule> {
    let ranked = rank_paragraph_features(model, bank.num_personas(), config.n_bins)?;
    let rules = ranked
        .iter()
        .take(config.top_k)
        .map(|f| {
            let (start, end) = bin_paragraph_range(f.bin, config.median_paragraphs, config.n_bins);
            let direction = if f.coefficient > 0.0 {
                SteerDirection::Amplify
            } else {
                SteerDirection::Suppress
            };
            SteeringRule::new(f.persona, start, end, direction)
        })
        .collect::<Result<Vec<_>>>()?;
    SteeringSchedule::new(bank.layer(), bank.default_alpha(), rules)
}

/// `h + Σ direction·α·v_k` over the active rules.
pub fn steer_step(
    hidden: &[f64],
    active: &[(usize, SteerDirection)],
    alpha: f64,
    bank: &PersonaBank,
) -> Result<Vec<f64>> {
    if hidden.len() != bank.hidden_size() {
        return Err(PolylogueError::Dimension(format!(
            "hidden state has d={}, bank d={}",
            hidden.len(),
            bank.hidden_size()
        )));
    }
    let mut out = hidden.to_vec();
    for &(k, direction) in active {
        if k >= bank.num_personas() {
            return Err(PolylogueError::Validation(format!(
                "persona {k} out of range for K={}",
                bank.num_personas()
            )));
        }
        if bank.is_degenerate(k) {
            return Err(PolylogueError::DegeneratePersona { index: k, name: bank.names()[k].clone() });
        }
        let scale = direction.sign() * alpha;
        for (h, &v) in out.iter_mut().zip(bank.vector(k)) {
            *h += scale * f64::from(v);
        }
    }
    Ok(out)
}

/// Online paragraph counter for one generated sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParagraphJudgeState {
    separators: usize,
    /// The last character seen was a `'\n'` not yet used by a separator.
    pending_newline: bool,
}

impl ParagraphJudgeState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current 1-based paragraph number.
    pub fn paragraph(&self) -> usize {
        self.separators + 1
    }

    pub fn separators(&self) -> usize {
        self.separators
    }
}

/// Scans one decoded token and returns the paragraph number after it.
/// Matches `"\n\n"` greedily and without overlap, across token boundaries.
pub fn judge_feed(state: &mut ParagraphJudgeState, token_text: &str) -> usize {
    for ch in token_text.chars() {
        if ch == '\n' {
            if state.pending_newline {
                state.separators += 1;
                state.pending_newline = false;
            } else {
                state.pending_newline = true;
            }
        } else {
            state.pending_newline = false;
        }
    }
    state.paragraph()
}

pub fn active_mask(state: &ParagraphJudgeState, schedule: &SteeringSchedule) -> Vec<bool> {
    let p = state.paragraph();
    schedule.rules.iter().map(|r| r.covers(p)).collect()
}

/// Mask log entry: which rules were live while step `step` was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub step: usize,
    pub paragraph: usize,
    pub mask: Vec<bool>,
}

/// Offline replay of a generation: paragraph numbers and masks per step,
/// computed from the tokens decoded before that step.
pub fn replay_masks(tokens: &[String], schedule: &SteeringSchedule) -> Vec<MaskRecord> {
    let mut state = ParagraphJudgeState::new();
    tokens
        .iter()
        .enumerate()
        .map(|(step, tok)| {
            let record = MaskRecord { step, paragraph: state.paragraph(), mask: active_mask(&state, schedule) };
            judge_feed(&mut state, tok);
            record
        })
        .collect()
}

/// Applies a schedule to every step of a stored trace. Returns the perturbed
/// trace (same id and metadata) and the mask log.
pub fn steer_trace(
    trace: &ActivationTrace,
    schedule: &SteeringSchedule,
    bank: &PersonaBank,
) -> Result<(ActivationTrace, Vec<MaskRecord>)> {
    schedule.validate_against(bank)?;
    if trace.layer() != schedule.layer {
        log::warn!(
            "trace {} was captured at layer {} but the schedule targets layer {}",
            trace.trace_id(),
            trace.layer(),
            schedule.layer
        );
    }
    let masks = replay_masks(trace.tokens(), schedule);
    let mut out = Vec::with_capacity(trace.activations().len());
    for (row, record) in trace.rows().zip(&masks) {
        let active: Vec<(usize, SteerDirection)> = schedule
            .rules
            .iter()
            .zip(&record.mask)
            .filter(|(_, &on)| on)
            .map(|(r, _)| (r.persona, r.direction))
            .collect();
        let hidden: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        let steered = steer_step(&hidden, &active, schedule.alpha, bank)?;
        out.extend(steered.into_iter().map(|v| v as f32));
    }
    Ok((trace.clone().with_activations(out)?, masks))
}
