// Pick a steering layer and coefficient from judge readouts.

use polylogue::tuning::{build_grid, read_grid_records, select_config, Selection};

const GRID: &str = r#"{"layer":12,"alpha":1.0,"prompt_id":"p0","trait_logits":{"80":0.0,"90":0.0},"coherence_logits":{"90":0.0},"numeric_mass_trait":0.9,"numeric_mass_coherence":0.95}
{"layer":12,"alpha":1.0,"prompt_id":"p1","trait_logits":{"70":0.0},"coherence_logits":{"85":0.0,"95":0.0},"numeric_mass_trait":0.8,"numeric_mass_coherence":0.9}
{"layer":12,"alpha":4.0,"prompt_id":"p0","trait_logits":{"100":0.0},"coherence_logits":{"20":0.0},"numeric_mass_trait":0.9,"numeric_mass_coherence":0.9}
{"layer":12,"alpha":4.0,"prompt_id":"p1","trait_logits":{"100":0.0},"coherence_logits":{"10":0.0,"0":null},"numeric_mass_trait":0.9,"numeric_mass_coherence":0.1}
{"layer":16,"alpha":1.0,"prompt_id":"p0","trait_logits":{"60":0.0},"coherence_logits":{"95":0.0},"numeric_mass_trait":0.9,"numeric_mass_coherence":0.9}
{"layer":16,"alpha":1.0,"prompt_id":"p1","trait_logits":{"50":0.0},"coherence_logits":{"90":0.0},"numeric_mass_trait":0.9,"numeric_mass_coherence":0.9}
"#;

pub fn run() -> polylogue::Result<Selection> {
    let records = read_grid_records(GRID.as_bytes())?;
    let selection = select_config(&build_grid(&records, 0.25, 0.7)?)?;
    for c in &selection.candidates {
        println!(
            "layer {} alpha {}: objective {:?} over {}/{} prompts",
            c.layer, c.alpha, c.mean_objective, c.valid_prompts, c.total_prompts
        );
    }
    println!("selected layer {} alpha {}", selection.layer, selection.alpha);
    Ok(selection)
}

#[allow(dead_code)]
fn main() {
    run().expect("selection failed");
}
