// Nested cross-validation with an inner search over C.

use nalgebra::DMatrix;
use polylogue::learn::{cv_fit, log_spaced_grid, CvConfig, CvReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run() -> polylogue::Result<CvReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, p) = (80, 12);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let y: Vec<bool> = (0..n).map(|i| x[(i, 2)] + 0.3 * rng.random_range(-1.0..1.0) > 0.0).collect();
    let config = CvConfig { outer_folds: 4, inner_folds: 3, c_grid: log_spaced_grid(1e-2, 1e2, 5), ..CvConfig::default() };
    let (model, report) = cv_fit(&x, &y, &config)?;
    for f in &report.folds {
        println!("fold {} C={:<8} acc={:.3} auc={:.3}", f.fold, f.c, f.accuracy, f.auc);
    }
    println!("auc {:.3} ± {:.3}, final C {}, {} nonzero", report.auc_mean, report.auc_std, report.final_c, model.model.nonzero());
    Ok(report)
}

#[allow(dead_code)]
fn main() {
    run().expect("cv failed");
}
