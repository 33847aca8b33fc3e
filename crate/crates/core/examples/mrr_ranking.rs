// Paragraph ranking MRR against the random and frequency baselines.

use polylogue::polylogue::{fit_whitening, pool_rows, project, segment_paragraphs};
use polylogue::ranking::{mrr, mrr_frequency, mrr_random, paragraph_rankings, MrrReport};
use polylogue::synth::{generate_dataset, SynthConfig};

pub fn run() -> polylogue::Result<MrrReport> {
    let config = SynthConfig { num_traces: 20, noise_ratio: 0.8, extraction_traces: 2, ..SynthConfig::default() };
    let data = generate_dataset(&config)?;
    let bank = &data.planted_bank;
    let raw = data.traces.iter().map(|t| project(t, bank)).collect::<polylogue::Result<Vec<_>>>()?;
    let model = fit_whitening(&pool_rows(&raw)?, 0.05)?;
    let mut rankings = Vec::new();
    for (trace, m) in data.traces.iter().zip(&raw) {
        let white = model.apply(m)?;
        let labels = trace.paragraph_labels().unwrap_or(&[]);
        rankings.extend(paragraph_rankings(&white, &segment_paragraphs(trace), labels)?);
    }
    let labels: Vec<usize> = rankings.iter().map(|r| r.label).collect();
    let report = MrrReport {
        model: "synthetic".into(),
        rnd: mrr_random(bank.num_personas()),
        frq: mrr_frequency(&labels, bank.num_personas())?,
        poly: Some(mrr(&rankings)?),
        paragraphs: rankings.len(),
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("serialisable"));
    Ok(report)
}

#[allow(dead_code)]
fn main() {
    run().expect("mrr failed");
}
