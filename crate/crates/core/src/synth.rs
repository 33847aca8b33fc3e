//! Seeded synthetic traces with planted persona structure.
//!
//! Every token of a segment planted with persona `k` is `γ·v_k + σ·ε` for an
//! orthonormal bank `v`, and every segment is one paragraph. Because the
//! ground truth is known, the whole pipeline can be checked end to end.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PolylogueError, Result};
use crate::personas::{self, ExtractionSet};
use crate::polylogue::{paragraph_bin, SEPARATOR};
use crate::store::{self, ActivationTrace, PersonaBank};

/// The label is true when the planted alignment with `persona`, averaged
/// over the tokens of paragraph bin `bin`, reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub bin: usize,
    pub persona: usize,
    pub threshold: f64,
    pub n_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub seed: u64,
    pub num_personas: usize,
    pub hidden_size: usize,
    /// `(persona, token count)` per paragraph, in order.
    pub segments: Vec<(usize, usize)>,
    pub gamma: f64,
    pub sigma: f64,
    pub label_rule: Option<LabelRule>,
    pub response_start: usize,
}

impl PlantSpec {
    fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(PolylogueError::Validation("plan has no segments".into()));
        }
        for &(k, count) in &self.segments {
            if count == 0 {
                return Err(PolylogueError::Validation("segment token counts must be >= 1".into()));
            }
            if k >= self.num_personas {
                return Err(PolylogueError::Validation(format!(
                    "segment persona {k} out of range for K={}",
                    self.num_personas
                )));
            }
        }
        if !(self.gamma > 0.0) || !(self.sigma >= 0.0) {
            return Err(PolylogueError::Validation("need gamma > 0 and sigma >= 0".into()));
        }
        if let Some(rule) = &self.label_rule {
            if rule.bin >= rule.n_bins || rule.persona >= self.num_personas {
                return Err(PolylogueError::Validation("label rule out of range".into()));
            }
        }
        Ok(())
    }

    /// Planted persona per token.
    pub fn token_personas(&self) -> Vec<usize> {
        self.segments
            .iter()
            .flat_map(|&(k, count)| std::iter::repeat_n(k, count))
            .collect()
    }

    /// Label implied by the rule, from the planted (noise-free) alignments.
    pub fn planted_label(&self) -> Option<bool> {
        let rule = self.label_rule?;
        let p_total = self.segments.len();
        let (mut hits, mut tokens) = (0usize, 0usize);
        for (p, &(k, count)) in self.segments.iter().enumerate() {
            if paragraph_bin(p, p_total, rule.n_bins) == rule.bin {
                tokens += count;
                if k == rule.persona {
                    hits += count;
                }
            }
        }
        if tokens == 0 {
            return Some(false);
        }
        Some(self.gamma * hits as f64 / tokens as f64 >= rule.threshold)
    }
}

/// `k` orthonormal directions from Gram–Schmidt on seeded normal draws.
pub fn gen_bank(k: usize, d: usize, seed: u64) -> Result<PersonaBank> {
    if k == 0 || d < k {
        return Err(PolylogueError::Dimension(format!("need 1 <= K <= d, got K={k}, d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        // two passes keep the rows orthogonal to rounding level
        for _ in 0..2 {
            for u in &rows {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, a) in v.iter_mut().zip(u) {
                    *x -= dot * a;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let names = if k == personas::persona_names().len() {
        personas::persona_names()
    } else {
        (0..k).map(|i| format!("persona{i}")).collect()
    };
    let vectors = rows.into_iter().flatten().map(|x| x as f32).collect();
    PersonaBank::new(0, names, vectors, d, 1.0, format!("synthetic orthonormal bank, seed {seed}"))
}

fn token_text(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 12] =
        ["the", "so", "check", "value", "then", "option", "we", "compute", "which", "is", "not", "answer"];
    format!(" {}", WORDS.choose(rng).expect("non-empty"))
}

pub fn gen_trace(trace_id: &str, spec: &PlantSpec, bank: &PersonaBank) -> Result<ActivationTrace> {
    spec.validate()?;
    if bank.num_personas() != spec.num_personas || bank.hidden_size() != spec.hidden_size {
        return Err(PolylogueError::Dimension(format!(
            "plan wants K={}, d={} but the bank has K={}, d={}",
            spec.num_personas,
            spec.hidden_size,
            bank.num_personas(),
            bank.hidden_size()
        )));
    }
    let d = spec.hidden_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut activations = Vec::new();
    let mut tokens = Vec::new();
    let last = spec.segments.len() - 1;
    for (p, &(k, count)) in spec.segments.iter().enumerate() {
        let v = bank.vector(k);
        for i in 0..count {
            for &vj in v {
                let eps: f64 = StandardNormal.sample(&mut rng);
                activations.push((spec.gamma * f64::from(vj) + spec.sigma * eps) as f32);
            }
            let mut text = token_text(&mut rng);
            if i + 1 == count && p != last {
                text.push_str(SEPARATOR);
            }
            tokens.push(text);
        }
    }
    let labels: Vec<(usize, usize)> = spec.segments.iter().enumerate().map(|(p, &(k, _))| (p, k)).collect();
    ActivationTrace::new(trace_id, "synthetic", bank.layer(), d, activations, tokens)?
        .with_response_start(spec.response_start)?
        .with_correct(spec.planted_label())
        .with_paragraph_labels(Some(labels))
}

/// Knobs for a full synthetic study: extraction sets for every persona plus
/// a labelled corpus whose label is planted in one (bin, persona) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub hidden_size: usize,
    pub layer: usize,
    pub gamma: f64,
    /// Noise scale relative to `gamma`.
    pub noise_ratio: f64,
    pub num_traces: usize,
    pub paragraphs: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub extraction_traces: usize,
    pub extraction_tokens: usize,
    pub n_bins: usize,
    pub label_bin: usize,
    pub label_persona: usize,
    /// Chance that a paragraph outside the label bin ignores the phase
    /// template and picks a persona at random.
    pub off_template: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            hidden_size: 64,
            layer: 16,
            gamma: 1.0,
            noise_ratio: 0.1,
            num_traces: 200,
            paragraphs: 40,
            min_tokens: 3,
            max_tokens: 8,
            extraction_traces: 24,
            extraction_tokens: 16,
            n_bins: 20,
            label_bin: 7,
            label_persona: 2,
            off_template: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn sigma(&self) -> f64 {
        self.noise_ratio * self.gamma
    }

    pub fn label_rule(&self) -> LabelRule {
        LabelRule {
            bin: self.label_bin,
            persona: self.label_persona,
            threshold: 0.5 * self.gamma,
            n_bins: self.n_bins,
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(PolylogueError::Config("need 1 <= min_tokens <= max_tokens".into()));
        }
        if self.label_bin >= self.n_bins || self.label_persona >= k {
            return Err(PolylogueError::Config("label cell out of range".into()));
        }
        if self.paragraphs == 0 || self.num_traces == 0 || self.extraction_traces == 0 || self.extraction_tokens == 0 {
            return Err(PolylogueError::Config("counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.off_template) {
            return Err(PolylogueError::Config("off_template must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Derived per-trace seed; `stream` separates the trace families.
fn trace_seed(seed: u64, stream: u64, index: usize) -> u64 {
    seed ^ (stream << 40) ^ index as u64
}

const STREAM_POSITIVE: u64 = 1;
const STREAM_NEGATIVE: u64 = 2;
const STREAM_LABELLED: u64 = 3;
const PREFIX_TOKENS: usize = 4;

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub planted_bank: PersonaBank,
    pub extraction: Vec<ExtractionSet>,
    pub traces: Vec<ActivationTrace>,
}

/// Positive responses are planted with persona `k` after a short prompt
/// prefix; negatives cycle through the other personas, so the expected
/// contrast is `γ·(v_k − mean_{j≠k} v_j)`.
fn extraction_set(config: &SynthConfig, bank: &PersonaBank, k: usize) -> Result<ExtractionSet> {
    let k_count = bank.num_personas();
    let others: Vec<usize> = (0..k_count).filter(|&j| j != k).collect();
    let make = |stream: u64, i: usize, persona: usize, sign: &str| {
        let seed = trace_seed(config.seed, stream, k * 10_000 + i);
        let prefix = (k + i) % k_count;
        let spec = PlantSpec {
            seed,
            num_personas: k_count,
            hidden_size: config.hidden_size,
            segments: vec![(prefix, PREFIX_TOKENS), (persona, config.extraction_tokens)],
            gamma: config.gamma,
            sigma: config.sigma(),
            label_rule: None,
            response_start: PREFIX_TOKENS,
        };
        let id = format!("{}-{sign}-{i:03}", bank.names()[k]);
        Ok::<_, PolylogueError>(gen_trace(&id, &spec, bank)?.with_paragraph_labels(None)?)
    };
    let positive = (0..config.extraction_traces)
        .map(|i| make(STREAM_POSITIVE, i, k, "pos"))
        .collect::<Result<Vec<_>>>()?;
    let negative = (0..config.extraction_traces)
        .map(|i| make(STREAM_NEGATIVE, i, others[i % others.len()], "neg"))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtractionSet { positive, negative })
}

/// Persona per paragraph: a phase template that walks through the personas
/// in order, random off-template paragraphs, and a coin flip between the
/// label persona and a random other persona inside the label bin.
fn labelled_plan(config: &SynthConfig, k_count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let rule = config.label_rule();
    (0..config.paragraphs)
        .map(|p| {
            let persona = if paragraph_bin(p, config.paragraphs, config.n_bins) == rule.bin {
                if rng.random_bool(0.5) {
                    rule.persona
                } else {
                    let j = rng.random_range(0..k_count - 1);
                    if j >= rule.persona {
                        j + 1
                    } else {
                        j
                    }
                }
            } else if rng.random_bool(config.off_template) {
                rng.random_range(0..k_count)
            } else {
                p * k_count / config.paragraphs
            };
            (persona, rng.random_range(config.min_tokens..=config.max_tokens))
        })
        .collect()
}

pub fn generate_dataset(config: &SynthConfig) -> Result<SynthDataset> {
    let k_count = personas::persona_names().len();
    config.validate(k_count)?;
    let base = gen_bank(k_count, config.hidden_size, config.seed)?;
    let planted_bank = PersonaBank::new(
        config.layer,
        base.names().to_vec(),
        base.vectors().to_vec(),
        config.hidden_size,
        1.0,
        base.provenance(),
    )?;
    let extraction = (0..k_count)
        .into_par_iter()
        .map(|k| extraction_set(config, &planted_bank, k))
        .collect::<Result<Vec<_>>>()?;
    let traces = (0..config.num_traces)
        .into_par_iter()
        .map(|i| {
            let seed = trace_seed(config.seed, STREAM_LABELLED, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let segments = labelled_plan(config, k_count, &mut rng);
            let spec = PlantSpec {
                seed: rng.random(),
                num_personas: k_count,
                hidden_size: config.hidden_size,
                segments,
                gamma: config.gamma,
                sigma: config.sigma(),
                label_rule: Some(config.label_rule()),
                response_start: 0,
            };
            gen_trace(&format!("trace-{i:04}"), &spec, &planted_bank)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset { config: config.clone(), planted_bank, extraction, traces })
}

pub const TRUTH_FILE: &str = "truth.json";

/// Ground truth written next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub label_rule: LabelRule,
    pub positives: usize,
    pub negatives: usize,
}

/// Layout: `planted_bank/`, `extraction/<persona>/{positive,negative}/<id>/`,
/// `traces/<id>/` and `truth.json`.
pub fn write_dataset(dataset: &SynthDataset, dir: &Path) -> Result<()> {
    store::persist_bank(&dataset.planted_bank, &dir.join("planted_bank"))?;
    let names = dataset.planted_bank.names();
    dataset
        .extraction
        .par_iter()
        .zip(names.par_iter())
        .try_for_each(|(set, name)| {
            for (sub, traces) in [("positive", &set.positive), ("negative", &set.negative)] {
                for t in traces.iter() {
                    store::persist_trace(t, &dir.join("extraction").join(name).join(sub).join(t.trace_id()))?;
                }
            }
            Ok::<_, PolylogueError>(())
        })?;
    dataset
        .traces
        .par_iter()
        .try_for_each(|t| store::persist_trace(t, &dir.join("traces").join(t.trace_id())))?;
    let positives = dataset.traces.iter().filter(|t| t.correct() == Some(true)).count();
    store::write_json(
        &dir.join(TRUTH_FILE),
        &SynthTruth {
            config: dataset.config.clone(),
            label_rule: dataset.config.label_rule(),
            positives,
            negatives: dataset.traces.len() - positives,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::personas::extract_persona_vector;
    use crate::polylogue::{project, segment_paragraphs};

    #[test]
    fn bank_is_orthonormal() {
        let bank = gen_bank(8, 64, 5).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = bank.vector(i).iter().zip(bank.vector(j)).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                // stored as f32
                assert!((dot - expected).abs() < 1e-6, "{i},{j}: {dot}");
            }
        }
        assert_eq!(bank.vectors(), gen_bank(8, 64, 5).unwrap().vectors());
        assert!(gen_bank(8, 7, 5).is_err());
    }

    fn spec(segments: Vec<(usize, usize)>, sigma: f64, seed: u64) -> PlantSpec {
        PlantSpec {
            seed,
            num_personas: 3,
            hidden_size: 6,
            segments,
            gamma: 2.0,
            sigma,
            label_rule: None,
            response_start: 0,
        }
    }

    #[test]
    fn noiseless_projection_recovers_plan() {
        let bank = gen_bank(3, 6, 1).unwrap();
        let s = spec(vec![(0, 2), (2, 3), (1, 1)], 0.0, 9);
        let trace = gen_trace("t", &s, &bank).unwrap();
        let scores = project(&trace, &bank).unwrap();
        for (t, &k) in s.token_personas().iter().enumerate() {
            for j in 0..3 {
                let expected = if j == k { 2.0 } else { 0.0 };
                assert!((scores.score(j, t) - expected).abs() < 1e-5);
            }
        }
        assert_eq!(segment_paragraphs(&trace).num_paragraphs(), 3);
        assert_eq!(trace.paragraph_labels().unwrap(), &[(0, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn noiseless_extraction_is_contrast() {
        let bank = gen_bank(3, 6, 1).unwrap();
        let pos: Vec<ActivationTrace> = (0..3).map(|i| gen_trace("p", &spec(vec![(0, 2 + i)], 0.0, i as u64), &bank).unwrap()).collect();
        let neg: Vec<ActivationTrace> = (0..2).map(|i| gen_trace("n", &spec(vec![(2, 4)], 0.0, i as u64), &bank).unwrap()).collect();
        let dir = extract_persona_vector(&ExtractionSet { positive: pos, negative: neg }).unwrap();
        for (j, v) in dir.values.iter().enumerate() {
            let expected = 2.0 * (f64::from(bank.vector(0)[j]) - f64::from(bank.vector(2)[j]));
            assert!((v - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn seeded_traces_are_bitwise_stable() {
        let bank = gen_bank(3, 6, 1).unwrap();
        let s = spec(vec![(0, 2), (1, 2)], 0.3, 4);
        assert!(gen_trace("t", &s, &bank).unwrap().bit_eq(&gen_trace("t", &s, &bank).unwrap()));
    }

    #[test]
    fn label_rule_uses_token_share() {
        let mut s = spec(vec![(1, 4), (0, 3), (2, 5), (1, 2)], 0.0, 0);
        s.label_rule = Some(LabelRule { bin: 0, persona: 1, threshold: 1.0, n_bins: 2 });
        // bin 0 holds paragraphs 0 and 1: share 4/7 of gamma 2 = 1.14
        assert_eq!(s.planted_label(), Some(true));
        s.segments[0].1 = 2;
        // 2/5 · 2 = 0.8
        assert_eq!(s.planted_label(), Some(false));
    }

    #[test]
    fn small_dataset_has_both_classes() {
        let config = SynthConfig { num_traces: 40, extraction_traces: 3, ..SynthConfig::default() };
        let ds = generate_dataset(&config).unwrap();
        assert_eq!(ds.traces.len(), 40);
        assert_eq!(ds.extraction.len(), 8);
        let pos = ds.traces.iter().filter(|t| t.correct() == Some(true)).count();
        assert!(pos > 5 && pos < 35, "{pos}");
        for t in &ds.traces {
            assert_eq!(segment_paragraphs(t).num_paragraphs(), 40);
        }
    }
}
