// L1-penalised logistic regression along a path of C values.

use nalgebra::DMatrix;
use polylogue::learn::{l1_logistic_fit, objective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run() -> polylogue::Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, p) = (120, 10);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    // only columns 0 and 3 matter
    let y: Vec<bool> = (0..n)
        .map(|i| 3.0 * x[(i, 0)] - 2.0 * x[(i, 3)] + rng.random_range(-0.5..0.5) > 0.0)
        .collect();
    let mut support = Vec::new();
    for c in [0.01, 0.1, 1.0, 10.0] {
        let m = l1_logistic_fit(&x, &y, c)?;
        let f = objective(&x, &y, &m.weights, m.intercept, c);
        println!("C={c:<5} nonzero={:<2} objective={f:.4} sweeps={}", m.nonzero(), m.sweeps);
        support.push(m.nonzero());
    }
    Ok(support)
}

#[allow(dead_code)]
fn main() {
    run().expect("fit failed");
}
