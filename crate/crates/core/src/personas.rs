//! The eight reasoning personas and contrastive direction extraction.
//!
//! Registry order is canonical: it defines persona indices 0..8 in every
//! bank, schedule, feature vector and label file.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PolylogueError, Result};
use crate::store::{self, ActivationTrace, PersonaBank, DEGENERATE_NORM};

/// A persona together with the prompt pair used to elicit and suppress it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub name: String,
    pub episode: String,
    pub description: String,
    pub inducing_prompt: String,
    pub inhibiting_prompt: String,
}

const DEFAULTS: [(&str, &str, &str, &str, &str); 8] = [
    (
        "interpreter",
        "Read",
        "Reads the task carefully and restates what is being asked.",
        "Respond like a careful reader who first restates the problem in their own words.",
        "Do not restate or paraphrase the problem.",
    ),
    (
        "analyst",
        "Analyse",
        "Breaks the problem into its structure, constraints and relevant concepts.",
        "Respond like an analyst who identifies the structure and constraints of the problem.",
        "Do not analyse the structure or constraints of the problem.",
    ),
    (
        "planner",
        "Plan",
        "Lays out an approach before acting and follows it.",
        "Respond like a strategic planner.",
        "Do not plan or outline.",
    ),
    (
        "solver",
        "Implement",
        "Carries out the chosen approach step by step with explicit work.",
        "Respond like a solver who works through each calculation explicitly.",
        "Do not show calculations or intermediate steps.",
    ),
    (
        "explorer",
        "Explore",
        "Tries alternative ideas and hypotheses in search of a way forward.",
        "Respond like an explorer who tries several alternative ideas.",
        "Do not consider alternatives; stick to a single idea.",
    ),
    (
        "verifier",
        "Verify",
        "Checks intermediate and final results for errors.",
        "Respond like a verifier who double-checks every result.",
        "Do not check or verify any result.",
    ),
    (
        "monitor",
        "Monitor",
        "Keeps track of progress and changes course when stuck.",
        "Respond like someone who keeps monitoring their progress and adjusts course.",
        "Do not reflect on or track your own progress.",
    ),
    (
        "arbiter",
        "Answer",
        "Commits to one final answer and states it plainly.",
        "Respond like an arbiter who commits to a clear final answer.",
        "Do not commit to a final answer.",
    ),
];

/// Persona specs in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub personas: Vec<PersonaSpec>,
}

impl Default for Registry {
    fn default() -> Self {
        let personas = DEFAULTS
            .iter()
            .map(|&(name, episode, description, inducing, inhibiting)| PersonaSpec {
                name: name.into(),
                episode: episode.into(),
                description: description.into(),
                inducing_prompt: inducing.into(),
                inhibiting_prompt: inhibiting.into(),
            })
            .collect();
        Self { personas }
    }
}

impl Registry {
    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.personas.iter().map(|p| p.name.clone()).collect()
    }

    /// Loads a `personas.json`. Prompt texts may be overridden but names
    /// must match the canonical set and order.
    pub fn load(path: &Path) -> Result<Self> {
        let registry: Registry = store::read_json(path)?;
        let canonical = Registry::default().names();
        if registry.names() != canonical {
            return Err(PolylogueError::Validation(format!(
                "{} must list the personas {canonical:?} in order",
                path.display()
            )));
        }
        Ok(registry)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        store::write_json(path, self)
    }
}

/// Canonical persona names.
pub fn persona_names() -> Vec<String> {
    Registry::default().names()
}

/// Responses generated under one persona's inducing (positive) and
/// inhibiting (negative) prompts.
#[derive(Debug, Clone)]
pub struct ExtractionSet {
    pub positive: Vec<ActivationTrace>,
    pub negative: Vec<ActivationTrace>,
}

/// A raw extracted persona direction, kept in f64 until it is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaDirection {
    pub values: Vec<f64>,
}

impl PersonaDirection {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_degenerate(&self) -> bool {
        self.norm() < DEGENERATE_NORM
    }
}

fn response_mean(trace: &ActivationTrace) -> Result<Vec<f64>> {
    let start = trace.response_start();
    let count = trace.num_tokens().saturating_sub(start);
    if count == 0 {
        return Err(PolylogueError::DegenerateTrace(trace.trace_id().to_string()));
    }
    let mut sum = vec![0.0f64; trace.hidden_size()];
    for row in trace.rows().skip(start) {
        for (s, &a) in sum.iter_mut().zip(row) {
            *s += f64::from(a);
        }
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

fn mean_of_response_means(traces: &[ActivationTrace], d: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0f64; d];
    for trace in traces {
        for (a, m) in acc.iter_mut().zip(response_mean(trace)?) {
            *a += m;
        }
    }
    Ok(acc.into_iter().map(|a| a / traces.len() as f64).collect())
}

/// Difference of mean post-marker activations, positive minus negative.
///
/// Each response is averaged over its own tokens first, and the response
/// means are then averaged with equal weight, so long responses do not
/// dominate.
pub fn extract_persona_vector(set: &ExtractionSet) -> Result<PersonaDirection> {
    let first = set
        .positive
        .first()
        .ok_or_else(|| PolylogueError::EmptyInput("no positive responses".into()))?;
    if set.negative.is_empty() {
        return Err(PolylogueError::EmptyInput("no negative responses".into()));
    }
    let d = first.hidden_size();
    for trace in set.positive.iter().chain(&set.negative) {
        if trace.hidden_size() != d {
            return Err(PolylogueError::Dimension(format!(
                "trace {} has d={}, expected {d}",
                trace.trace_id(),
                trace.hidden_size()
            )));
        }
        if trace.layer() != first.layer() {
            return Err(PolylogueError::Consistency(format!(
                "trace {} is from layer {}, expected {}",
                trace.trace_id(),
                trace.layer(),
                first.layer()
            )));
        }
    }
    let pos = mean_of_response_means(&set.positive, d)?;
    let neg = mean_of_response_means(&set.negative, d)?;
    Ok(PersonaDirection {
        values: pos.iter().zip(&neg).map(|(p, n)| p - n).collect(),
    })
}

/// Extracts one direction per set, in parallel.
pub fn extract_all(sets: &[ExtractionSet]) -> Result<Vec<PersonaDirection>> {
    sets.par_iter().map(extract_persona_vector).collect()
}

/// Packs one direction per registry persona into a bank.
pub fn build_bank(
    directions: &[PersonaDirection],
    layer: usize,
    alpha: f64,
    provenance: impl Into<String>,
) -> Result<PersonaBank> {
    let names = persona_names();
    if directions.len() != names.len() {
        return Err(PolylogueError::Dimension(format!(
            "expected {} persona vectors, got {}",
            names.len(),
            directions.len()
        )));
    }
    let d = directions[0].values.len();
    if d == 0 {
        return Err(PolylogueError::Dimension("persona vectors are empty".into()));
    }
    let mut vectors = Vec::with_capacity(names.len() * d);
    for (k, dir) in directions.iter().enumerate() {
        if dir.values.len() != d {
            return Err(PolylogueError::Dimension(format!(
                "persona {k} vector has length {}, expected {d}",
                dir.values.len()
            )));
        }
        if dir.is_degenerate() {
            log::warn!("persona {} extracted a degenerate direction", names[k]);
        }
        vectors.extend(dir.values.iter().map(|&v| v as f32));
    }
    PersonaBank::new(layer, names, vectors, d, alpha, provenance)
}
