// The online paragraph counter fed one decoded token at a time, checked
// against offline segmentation of the finished text.

use polylogue::polylogue::segment_tokens;
use polylogue::steering::{judge_feed, ParagraphJudgeState};

pub fn run() -> Vec<usize> {
    let tokens: Vec<String> = ["First", " idea", ".\n", "\nSecond", "\n", "\n\n", "\n", "Third", "\n\n"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut state = ParagraphJudgeState::new();
    let online: Vec<usize> = tokens.iter().map(|t| judge_feed(&mut state, t)).collect();
    let ranges = segment_tokens(&tokens);
    println!("{} paragraphs offline, judge ends on paragraph {}", ranges.len(), state.paragraph());
    for (t, (tok, p)) in tokens.iter().zip(&online).enumerate() {
        println!("step {t}: {tok:?} -> paragraph {p}");
    }
    online
}

#[allow(dead_code)]
fn main() {
    run();
}
