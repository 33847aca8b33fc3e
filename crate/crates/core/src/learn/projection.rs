use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::personas;
use crate::store::PersonaBank;

/// `k` rows drawn from a standard normal and scaled to unit length.
/// Deterministic per seed.
pub fn random_unit_vectors(k: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(k >= 1 && d >= 1, "need k, d >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// A bank of random directions standing in for the persona vectors. With
/// eight rows the canonical persona names are reused so downstream reports
/// line up.
pub fn random_bank(k: usize, d: usize, seed: u64, layer: usize, alpha: f64) -> Result<PersonaBank> {
    let canonical = personas::persona_names();
    let names = if k == canonical.len() {
        canonical
    } else {
        (0..k).map(|i| format!("random{i}")).collect()
    };
    let vectors = random_unit_vectors(k, d, seed)
        .into_iter()
        .flatten()
        .map(|v| v as f32)
        .collect();
    PersonaBank::new(layer, names, vectors, d, alpha, format!("random unit vectors, seed {seed}"))
}
