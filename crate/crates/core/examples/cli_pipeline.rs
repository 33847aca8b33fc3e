// The whole pipeline through the command line, on a small synthetic
// dataset in a temporary directory.

use polylogue::cli::run as cli;

pub fn run() -> Vec<i32> {
    let dir = tempfile::tempdir().expect("temp dir");
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (data, traces) = (p("data"), p("data/traces"));
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--out".into(), data.clone(), "--traces".into(), "40".into(), "--extraction-traces".into(), "6".into()],
        vec!["extract-personas".into(), "--input".into(), p("data/extraction"), "--out".into(), p("bank")],
        vec!["whiten".into(), "--traces".into(), traces.clone(), "--bank".into(), p("bank"), "--out".into(), p("whitening.json")],
        vec!["mrr".into(), "--traces".into(), traces.clone(), "--bank".into(), p("bank"), "--whitening".into(), p("whitening.json"), "--out".into(), p("mrr.json")],
        vec!["features".into(), "--traces".into(), traces.clone(), "--bank".into(), p("bank"), "--out".into(), p("features.csv")],
        vec!["fit".into(), "--features".into(), p("features.csv"), "--out".into(), p("model.json"), "--report".into(), p("cv.json"), "--outer-folds".into(), "3".into(), "--inner-folds".into(), "3".into(), "--c-count".into(), "4".into()],
        vec!["coeffs".into(), "--model".into(), p("model.json"), "--out".into(), p("coeffs.csv"), "--top".into(), "5".into()],
        vec!["derive-strategy".into(), "--model".into(), p("model.json"), "--bank".into(), p("bank"), "--traces".into(), traces.clone(), "--out".into(), p("schedule.json")],
        vec!["steer-sim".into(), "--traces".into(), traces.clone(), "--bank".into(), p("bank"), "--schedule".into(), p("schedule.json"), "--out".into(), p("steered")],
        vec!["plot-data".into(), "--traces".into(), traces, "--bank".into(), p("bank"), "--out".into(), p("plot")],
    ];
    let codes: Vec<i32> = steps.iter().map(|argv| cli(argv.clone())).collect();
    for (argv, code) in steps.iter().zip(&codes) {
        println!("{:<16} exit {code}", argv[0]);
    }
    if let Ok(text) = std::fs::read_to_string(dir.path().join("coeffs.csv")) {
        print!("{text}");
    }
    codes
}

#[allow(dead_code)]
fn main() {
    run();
}
