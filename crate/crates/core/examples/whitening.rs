// Shrinkage whitening of pooled projection rows.

use nalgebra::DMatrix;
use polylogue::polylogue::fit_whitening;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn run() -> polylogue::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // correlated 3-column data: x, x + noise, 5 * noise
    let rows = DMatrix::from_row_iterator(
        2000,
        3,
        (0..2000).flat_map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let c: f64 = StandardNormal.sample(&mut rng);
            [a + 2.0, a + 0.3 * b, 5.0 * c]
        }),
    );
    let model = fit_whitening(&rows, 0.0)?;
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= model.mu.transpose();
    }
    let z = centered * &model.w;
    let cov = z.transpose() * &z / z.nrows() as f64;
    let err = (cov - DMatrix::<f64>::identity(3, 3)).abs().max();
    println!("max |cov(z) - I| = {err:.2e}");
    let shrunk = fit_whitening(&rows, 0.05)?;
    println!("shrunk covariance diagonal {:?}", shrunk.shrunk_covariance.diagonal().as_slice());
    Ok(err)
}

#[allow(dead_code)]
fn main() {
    run().expect("whitening failed");
}
