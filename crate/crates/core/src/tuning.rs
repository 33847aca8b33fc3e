//! Layer and steering-coefficient selection from judge readouts.

use std::collections::BTreeMap;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PolylogueError, Result};

pub const DEFAULT_MASS_THRESHOLD: f64 = 0.25;
pub const DEFAULT_BETA: f64 = 0.7;

/// Judge logits over the integer scores 0..=100 plus the share of total
/// probability that landed on those numeric tokens. Absent scores have
/// logit −∞.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeReadout {
    pub logits: BTreeMap<u32, f64>,
    pub numeric_mass: f64,
}

impl JudgeReadout {
    pub fn new(logits: BTreeMap<u32, f64>, numeric_mass: f64) -> Result<Self> {
        if let Some(&k) = logits.keys().find(|&&k| k > 100) {
            return Err(PolylogueError::Validation(format!("score token {k} outside 0..=100")));
        }
        if !(0.0..=1.0).contains(&numeric_mass) {
            return Err(PolylogueError::Validation(format!(
                "numeric mass {numeric_mass} outside [0, 1]"
            )));
        }
        if logits.values().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(PolylogueError::Validation("logits must be finite or -inf".into()));
        }
        Ok(Self { logits, numeric_mass })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JudgeScore {
    Score(f64),
    Discarded,
}

impl JudgeScore {
    pub fn value(self) -> Option<f64> {
        match self {
            Self::Score(v) => Some(v),
            Self::Discarded => None,
        }
    }
}

/// Probability-weighted mean score, or `Discarded` when too little mass
/// fell on numeric tokens.
pub fn expected_numeric_score(readout: &JudgeReadout, mass_threshold: f64) -> Result<JudgeScore> {
    if readout.numeric_mass < mass_threshold {
        return Ok(JudgeScore::Discarded);
    }
    let max = readout
        .logits
        .values()
        .copied()
        .filter(|l| l.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(PolylogueError::Numeric("every score logit is -inf".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&k, &l) in &readout.logits {
        let w = (l - max).exp();
        num += k as f64 * w;
        den += w;
    }
    Ok(JudgeScore::Score(num / den))
}

/// Weighted geometric mean `score^β · coherence^(1-β)`.
pub fn objective(score: f64, coherence: f64, beta: f64) -> f64 {
    score.powf(beta) * coherence.powf(1.0 - beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptScores {
    pub prompt_id: String,
    pub trait_score: JudgeScore,
    pub coherence: JudgeScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub layer: usize,
    pub alpha: f64,
    pub prompts: Vec<PromptScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub candidates: Vec<Candidate>,
    pub beta: f64,
}

impl TuningGrid {
    pub fn new(candidates: Vec<Candidate>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(PolylogueError::Config(format!("beta must lie in (0, 1), got {beta}")));
        }
        for c in &candidates {
            for p in &c.prompts {
                for v in [p.trait_score.value(), p.coherence.value()].into_iter().flatten() {
                    if !(0.0..=100.0).contains(&v) {
                        return Err(PolylogueError::Validation(format!(
                            "prompt {} at layer {} alpha {}: score {v} outside [0, 100]",
                            p.prompt_id, c.layer, c.alpha
                        )));
                    }
                }
            }
        }
        Ok(Self { candidates, beta })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub layer: usize,
    pub alpha: f64,
    /// `None` when every prompt was discarded.
    pub mean_objective: Option<f64>,
    pub valid_prompts: usize,
    pub total_prompts: usize,
}

/// Mean objective over prompts whose trait and coherence scores both
/// survived.
pub fn summarize(candidate: &Candidate, beta: f64) -> CandidateSummary {
    let values: Vec<f64> = candidate
        .prompts
        .iter()
        .filter_map(|p| match (p.trait_score, p.coherence) {
            (JudgeScore::Score(s), JudgeScore::Score(c)) => Some(objective(s, c, beta)),
            _ => None,
        })
        .collect();
    CandidateSummary {
        layer: candidate.layer,
        alpha: candidate.alpha,
        mean_objective: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
        valid_prompts: values.len(),
        total_prompts: candidate.prompts.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub layer: usize,
    pub alpha: f64,
    pub mean_objective: f64,
    pub candidates: Vec<CandidateSummary>,
}

/// Highest mean objective wins; ties go to the lower layer, then the lower α.
pub fn select_config(grid: &TuningGrid) -> Result<Selection> {
    let summaries: Vec<CandidateSummary> = grid.candidates.par_iter().map(|c| summarize(c, grid.beta)).collect();
    let mut best: Option<&CandidateSummary> = None;
    for s in &summaries {
        let Some(value) = s.mean_objective else { continue };
        best = match best {
            None => Some(s),
            Some(b) => {
                let bv = b.mean_objective.unwrap_or(f64::NEG_INFINITY);
                let better = value > bv
                    || (value == bv && (s.layer, s.alpha).partial_cmp(&(b.layer, b.alpha)) == Some(std::cmp::Ordering::Less));
                Some(if better { s } else { b })
            }
        };
    }
    let best = best.ok_or(PolylogueError::NoValidConfig)?;
    Ok(Selection {
        layer: best.layer,
        alpha: best.alpha,
        mean_objective: best.mean_objective.unwrap_or_default(),
        candidates: summaries.clone(),
    })
}

/// One line of the judge grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRecord {
    pub layer: usize,
    pub alpha: f64,
    pub prompt_id: String,
    /// Score token → logit; `null` or an absent key means −∞.
    pub trait_logits: BTreeMap<String, Option<f64>>,
    pub coherence_logits: BTreeMap<String, Option<f64>>,
    pub numeric_mass_trait: f64,
    pub numeric_mass_coherence: f64,
}

fn readout_from(map: &BTreeMap<String, Option<f64>>, mass: f64) -> Result<JudgeReadout> {
    let mut logits = BTreeMap::new();
    for (key, value) in map {
        let k: u32 = key
            .parse()
            .map_err(|_| PolylogueError::Validation(format!("score key {key:?} is not an integer")))?;
        logits.insert(k, value.unwrap_or(f64::NEG_INFINITY));
    }
    JudgeReadout::new(logits, mass)
}

/// Parses JSONL grid records; blank lines are skipped.
pub fn read_grid_records(reader: impl BufRead) -> Result<Vec<GridRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PolylogueError::Validation(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GridRecord = serde_json::from_str(&line)
            .map_err(|e| PolylogueError::Validation(format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Groups records into candidates sorted by (layer, α), scoring every
/// readout with threshold `mass_threshold`.
pub fn build_grid(records: &[GridRecord], mass_threshold: f64, beta: f64) -> Result<TuningGrid> {
    if records.is_empty() {
        return Err(PolylogueError::EmptyInput("tuning grid has no records".into()));
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for r in records {
        if !(r.alpha.is_finite()) {
            return Err(PolylogueError::Validation(format!("alpha {} is not finite", r.alpha)));
        }
        let prompt = PromptScores {
            prompt_id: r.prompt_id.clone(),
            trait_score: expected_numeric_score(&readout_from(&r.trait_logits, r.numeric_mass_trait)?, mass_threshold)?,
            coherence: expected_numeric_score(
                &readout_from(&r.coherence_logits, r.numeric_mass_coherence)?,
                mass_threshold,
            )?,
        };
        match candidates.iter_mut().find(|c| c.layer == r.layer && c.alpha == r.alpha) {
            Some(c) => {
                if c.prompts.iter().any(|p| p.prompt_id == r.prompt_id) {
                    return Err(PolylogueError::Validation(format!(
                        "prompt {} appears twice for layer {} alpha {}",
                        r.prompt_id, r.layer, r.alpha
                    )));
                }
                c.prompts.push(prompt);
            }
            None => candidates.push(Candidate { layer: r.layer, alpha: r.alpha, prompts: vec![prompt] }),
        }
    }
    candidates.sort_by(|a, b| a.layer.cmp(&b.layer).then(a.alpha.total_cmp(&b.alpha)));
    TuningGrid::new(candidates, beta)
}

/// The selected configuration in the shape of a per-model results row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub model: String,
    pub layer: usize,
    pub coef: f64,
    pub mean_objective: f64,
    pub beta: f64,
    pub mass_threshold: f64,
    pub candidates: Vec<CandidateSummary>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn readout(pairs: &[(u32, f64)], mass: f64) -> JudgeReadout {
        JudgeReadout::new(pairs.iter().copied().collect(), mass).unwrap()
    }

    #[test]
    fn score_examples() {
        let point = readout(&[(50, 1.3)], 1.0);
        assert_eq!(expected_numeric_score(&point, 0.25).unwrap(), JudgeScore::Score(50.0));
        let mix = readout(&[(0, 0.0), (100, 3f64.ln()), (40, f64::NEG_INFINITY)], 0.9);
        let JudgeScore::Score(v) = expected_numeric_score(&mix, 0.25).unwrap() else { panic!() };
        assert!((v - 75.0).abs() < 1e-12);
        assert_eq!(expected_numeric_score(&readout(&[(50, 0.0)], 0.1), 0.25).unwrap(), JudgeScore::Discarded);
        assert!(expected_numeric_score(&readout(&[(3, f64::NEG_INFINITY)], 0.9), 0.25).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let r = readout(&[(10, 1000.0), (20, 1000.0)], 1.0);
        assert_eq!(expected_numeric_score(&r, 0.25).unwrap(), JudgeScore::Score(15.0));
    }

    #[test]
    fn objective_examples() {
        assert_eq!(objective(80.0, 0.0, 0.7), 0.0);
        assert!((objective(42.0, 42.0, 0.3) - 42.0).abs() < 1e-12);
        // 100^0.7 · 25^0.3 = 10^1.4 · 5^0.6
        let expected = 10f64.powf(1.4) * 5f64.powf(0.6);
        assert!((objective(100.0, 25.0, 0.7) - expected).abs() < 1e-9);
        assert!((objective(100.0, 25.0, 0.7) - 65.98).abs() < 0.01);
        assert!((objective(9.0, 4.0, 0.5) - 6.0).abs() < 1e-12);
    }

    fn prompt(id: &str, s: Option<f64>, c: Option<f64>) -> PromptScores {
        let wrap = |v: Option<f64>| v.map_or(JudgeScore::Discarded, JudgeScore::Score);
        PromptScores { prompt_id: id.into(), trait_score: wrap(s), coherence: wrap(c) }
    }

    #[test]
    fn discarded_candidate_loses() {
        let grid = TuningGrid::new(
            vec![
                Candidate { layer: 1, alpha: 1.0, prompts: vec![prompt("a", None, Some(90.0))] },
                Candidate { layer: 2, alpha: 1.0, prompts: vec![prompt("a", Some(5.0), Some(5.0))] },
            ],
            0.7,
        )
        .unwrap();
        let s = select_config(&grid).unwrap();
        assert_eq!((s.layer, s.alpha), (2, 1.0));
        let none = TuningGrid::new(vec![Candidate { layer: 1, alpha: 1.0, prompts: vec![prompt("a", None, None)] }], 0.7)
            .unwrap();
        assert!(matches!(select_config(&none), Err(PolylogueError::NoValidConfig)));
    }

    #[test]
    fn two_by_two_grid_matches_hand_evaluation() {
        let beta = 0.7;
        let scores = [
            (8, 1.0, [(60.0, 90.0), (70.0, 80.0)]),
            (8, 2.0, [(85.0, 60.0), (90.0, 40.0)]),
            (12, 1.0, [(75.0, 85.0), (65.0, 95.0)]),
            (12, 2.0, [(95.0, 20.0), (99.0, 10.0)]),
        ];
        let candidates = scores
            .iter()
            .map(|(l, a, ps)| Candidate {
                layer: *l,
                alpha: *a,
                prompts: ps.iter().enumerate().map(|(i, (s, c))| prompt(&i.to_string(), Some(*s), Some(*c))).collect(),
            })
            .collect();
        let s = select_config(&TuningGrid::new(candidates, beta).unwrap()).unwrap();
        let hand: Vec<f64> = scores
            .iter()
            .map(|(_, _, ps)| ps.iter().map(|(s, c)| s.powf(beta) * c.powf(1.0 - beta)).sum::<f64>() / 2.0)
            .collect();
        let best = (0..4).fold(0, |b, i| if hand[i] > hand[b] { i } else { b });
        assert_eq!((s.layer, s.alpha), (scores[best].0, scores[best].1));
        assert_eq!(best, 2);
    }

    #[test]
    fn ties_prefer_low_layer_then_low_alpha() {
        let c = |layer, alpha| Candidate { layer, alpha, prompts: vec![prompt("p", Some(50.0), Some(50.0))] };
        let grid = TuningGrid::new(vec![c(9, 1.0), c(4, 3.0), c(4, 2.0)], 0.7).unwrap();
        let s = select_config(&grid).unwrap();
        assert_eq!((s.layer, s.alpha), (4, 2.0));
    }

    #[test]
    fn jsonl_ingest() {
        let text = r#"{"layer":3,"alpha":2.0,"prompt_id":"p0","trait_logits":{"0":0.0,"100":1.0986122886681098},"coherence_logits":{"80":0.0},"numeric_mass_trait":0.9,"numeric_mass_coherence":0.8}

{"layer":3,"alpha":2.0,"prompt_id":"p1","trait_logits":{"50":0.0,"60":null},"coherence_logits":{"80":0.0},"numeric_mass_trait":0.1,"numeric_mass_coherence":0.8}
{"layer":1,"alpha":4.0,"prompt_id":"p0","trait_logits":{"10":0.0},"coherence_logits":{"10":0.0},"numeric_mass_trait":0.9,"numeric_mass_coherence":0.9}
"#;
        let records = read_grid_records(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 3);
        let grid = build_grid(&records, DEFAULT_MASS_THRESHOLD, DEFAULT_BETA).unwrap();
        assert_eq!(grid.candidates[0].layer, 1);
        assert_eq!(grid.candidates[1].prompts[1].trait_score, JudgeScore::Discarded);
        let s = select_config(&grid).unwrap();
        assert_eq!(s.layer, 3);
        assert_eq!(s.candidates[1].valid_prompts, 1);
        assert!(read_grid_records(r#"{"layer":1}"#.as_bytes()).is_err());
    }
}
