// Writing and reading trace, bank and schedule bundles.

use polylogue::store::{
    load_bank, load_schedule, load_trace, persist_bank, persist_schedule, persist_trace, ActivationTrace,
    SteerDirection, SteeringRule, SteeringSchedule,
};
use polylogue::synth::gen_bank;

pub fn run() -> polylogue::Result<bool> {
    let dir = tempfile::tempdir().expect("temp dir");
    let tokens: Vec<String> = ["Let", " me", " think", ".\n\n", "So", " 4"].iter().map(|s| s.to_string()).collect();
    let acts: Vec<f32> = (0..tokens.len() * 4).map(|i| i as f32 * 0.25).collect();
    let trace = ActivationTrace::new("t1", "toy-model", 3, 4, acts, tokens)?
        .with_response_start(0)?
        .with_correct(Some(true))
        .with_paragraph_labels(Some(vec![(0, 2), (1, 7)]))?;
    persist_trace(&trace, &dir.path().join("traces/t1"))?;
    let back = load_trace(&dir.path().join("traces/t1"))?;

    let bank = gen_bank(8, 8, 0)?;
    persist_bank(&bank, &dir.path().join("bank"))?;
    let bank_back = load_bank(&dir.path().join("bank"))?;

    let schedule = SteeringSchedule::new(3, 2.0, vec![SteeringRule::new(2, 1, 3, SteerDirection::Amplify)?])?;
    persist_schedule(&schedule, &dir.path().join("schedule.json"))?;
    let schedule_back = load_schedule(&dir.path().join("schedule.json"))?;

    let ok = back.bit_eq(&trace) && bank_back == bank && schedule_back == schedule;
    println!("round trip exact: {ok}");
    Ok(ok)
}

#[allow(dead_code)]
fn main() {
    run().expect("bundle round trip failed");
}
