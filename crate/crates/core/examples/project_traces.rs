// Per-step persona alignment of a single trace and its whole-response
// descriptors.

use polylogue::polylogue::{descriptors, project, segment_paragraphs};
use polylogue::synth::{gen_bank, gen_trace, PlantSpec};

pub fn run() -> polylogue::Result<Vec<usize>> {
    let bank = gen_bank(8, 32, 11)?;
    let spec = PlantSpec {
        seed: 5,
        num_personas: 8,
        hidden_size: 32,
        segments: vec![(0, 4), (1, 6), (3, 8), (5, 3), (7, 2)],
        gamma: 1.0,
        sigma: 0.05,
        label_rule: None,
        response_start: 0,
    };
    let trace = gen_trace("demo", &spec, &bank)?;
    let scores = project(&trace, &bank)?;
    let seg = segment_paragraphs(&trace);
    let mut dominant = Vec::new();
    for (p, range) in seg.ranges.iter().enumerate() {
        let means = scores.mean_over(range.clone()).expect("non-empty paragraph");
        let best = (0..means.len()).fold(0, |b, k| if means[k] > means[b] { k } else { b });
        println!("paragraph {p}: {} tokens, strongest persona {}", range.len(), bank.names()[best]);
        dominant.push(best);
    }
    let d = descriptors(&scores);
    println!("switching rate {:.3}, dominance entropy {:.3}", d.switching_rate, d.dominance_entropy);
    Ok(dominant)
}

#[allow(dead_code)]
fn main() {
    run().expect("projection failed");
}
