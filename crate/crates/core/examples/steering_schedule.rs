// From a fitted sparse model to a paragraph-conditioned steering schedule,
// replayed over a stored trace.

use polylogue::learn::SparseLogisticModel;
use polylogue::polylogue::feature_dimension;
use polylogue::steering::{derive_strategy, steer_trace, StrategyConfig};
use polylogue::store::SteeringSchedule;
use polylogue::synth::{gen_bank, gen_trace, PlantSpec};

pub fn run() -> polylogue::Result<SteeringSchedule> {
    let bank = gen_bank(8, 16, 2)?;
    let mut weights = vec![0.0; feature_dimension(8, 20)];
    weights[7 * 8 + 2] = 1.4; // bin 7, persona 2
    weights[15 * 8 + 5] = -0.6; // bin 15, persona 5
    weights[170] = 3.0; // a descriptor, never steered
    let model = SparseLogisticModel { weights, intercept: 0.1, c: 1.0, converged: true, sweeps: 1 };
    let schedule = derive_strategy(&model, &StrategyConfig::new(5, 40, 20)?, &bank)?;
    for r in &schedule.rules {
        println!(
            "{:?} {:<10} paragraphs {}..={}",
            r.direction,
            bank.names()[r.persona],
            r.start_paragraph,
            r.end_paragraph
        );
    }
    let segments: Vec<(usize, usize)> = (0..40).map(|p| (p % 8, 2)).collect();
    let spec = PlantSpec {
        seed: 1,
        num_personas: 8,
        hidden_size: 16,
        segments,
        gamma: 1.0,
        sigma: 0.0,
        label_rule: None,
        response_start: 0,
    };
    let trace = gen_trace("replay", &spec, &bank)?;
    let (_, masks) = steer_trace(&trace, &schedule, &bank)?;
    let steered_steps = masks.iter().filter(|m| m.mask.iter().any(|&on| on)).count();
    println!("{steered_steps} of {} steps steered", masks.len());
    Ok(schedule)
}

#[allow(dead_code)]
fn main() {
    run().expect("steering failed");
}
