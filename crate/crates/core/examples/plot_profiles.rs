// Progress-binned similarity and paragraph-label profiles as CSV.

use polylogue::plot::{label_profile, profile_csv, similarity_profile, LabelledTrace};
use polylogue::polylogue::{project, segment_paragraphs};
use polylogue::synth::{generate_dataset, SynthConfig};

pub fn run() -> polylogue::Result<(String, String)> {
    let config = SynthConfig { num_traces: 10, extraction_traces: 1, ..SynthConfig::default() };
    let data = generate_dataset(&config)?;
    let bank = &data.planted_bank;
    let matrices = data.traces.iter().map(|t| project(t, bank)).collect::<polylogue::Result<Vec<_>>>()?;
    let sims = similarity_profile(&matrices, 10)?;
    let labelled: Vec<LabelledTrace<'_>> = data
        .traces
        .iter()
        .map(|t| LabelledTrace {
            num_paragraphs: segment_paragraphs(t).num_paragraphs(),
            labels: t.paragraph_labels().unwrap_or(&[]),
        })
        .collect();
    let freqs = label_profile(&labelled, bank.num_personas(), 10)?;
    let sims_csv = String::from_utf8(profile_csv(&sims, bank.names(), "similarity")?).expect("utf8");
    let freqs_csv = String::from_utf8(profile_csv(&freqs, bank.names(), "frequency")?).expect("utf8");
    print!("{}", sims_csv.lines().take(9).collect::<Vec<_>>().join("\n"));
    println!();
    Ok((sims_csv, freqs_csv))
}

#[allow(dead_code)]
fn main() {
    run().expect("plot data failed");
}
