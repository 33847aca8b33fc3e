// Recover persona directions from contrastive response sets and compare
// them with the directions that were planted.

use polylogue::personas::{build_bank, extract_all};
use polylogue::synth::{generate_dataset, SynthConfig};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn run() -> polylogue::Result<Vec<f64>> {
    let config = SynthConfig { num_traces: 4, extraction_traces: 12, ..SynthConfig::default() };
    let data = generate_dataset(&config)?;
    let directions = extract_all(&data.extraction)?;
    let bank = build_bank(&directions, config.layer, 4.0, "example")?;
    let planted = &data.planted_bank;
    let k = planted.num_personas();
    let mut cosines = Vec::with_capacity(k);
    for j in 0..k {
        // negatives cycle through the other personas, so the expected
        // contrast is v_j minus the mean of the rest
        let expected: Vec<f64> = (0..planted.hidden_size())
            .map(|i| {
                let others: f64 = (0..k).filter(|&o| o != j).map(|o| f64::from(planted.vector(o)[i])).sum();
                f64::from(planted.vector(j)[i]) - others / (k - 1) as f64
            })
            .collect();
        let c = cosine(&directions[j].values, &expected);
        println!("{:<12} norm {:.3}  cosine {:.4}", bank.names()[j], bank.norm(j), c);
        cosines.push(c);
    }
    Ok(cosines)
}

#[allow(dead_code)]
fn main() {
    run().expect("extraction failed");
}
