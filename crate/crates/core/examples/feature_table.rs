// The per-trace feature vector and its column names.

use polylogue::polylogue::{feature_names, trace_features, FeatureConfig};
use polylogue::store::features_to_csv;
use polylogue::synth::{generate_dataset, SynthConfig};

pub fn run() -> polylogue::Result<usize> {
    let config = SynthConfig { num_traces: 3, extraction_traces: 1, ..SynthConfig::default() };
    let data = generate_dataset(&config)?;
    let fc = FeatureConfig::default();
    let rows = data
        .traces
        .iter()
        .map(|t| trace_features(t, &data.planted_bank, &fc))
        .collect::<polylogue::Result<Vec<_>>>()?;
    let names = feature_names(data.planted_bank.names(), fc.n_bins);
    for j in [0, 58, 159, 160, 167, 175, 184, 185] {
        println!("f{j:03} {:<28} {:+.4}", names[j], rows[0].values[j]);
    }
    let csv = features_to_csv(&rows)?;
    println!("{} bytes of CSV, {} columns per row", csv.len(), names.len());
    Ok(rows[0].values.len())
}

#[allow(dead_code)]
fn main() {
    run().expect("features failed");
}
