// Principal components of last-token hidden states, the activation
// baseline for correctness prediction.

use nalgebra::DMatrix;
use polylogue::learn::pca_fit;
use polylogue::synth::{generate_dataset, SynthConfig};

pub fn run() -> polylogue::Result<Vec<f64>> {
    let config = SynthConfig { num_traces: 40, extraction_traces: 1, ..SynthConfig::default() };
    let data = generate_dataset(&config)?;
    let d = config.hidden_size;
    let x = DMatrix::from_fn(data.traces.len(), d, |i, j| {
        let t = &data.traces[i];
        f64::from(t.row(t.num_tokens() - 1)[j])
    });
    let pca = pca_fit(&x, 8)?;
    let scores = pca.apply(&x)?;
    println!("explained variance {:?}", pca.explained_variance.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>());
    println!("score matrix {}x{}", scores.nrows(), scores.ncols());
    Ok(pca.explained_variance)
}

#[allow(dead_code)]
fn main() {
    run().expect("pca failed");
}
