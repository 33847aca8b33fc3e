use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use polylogue::cli::{run, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use polylogue::store::{persist_trace, ActivationTrace};

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn ok(argv: &[&str]) {
    assert_eq!(run(argv.iter().copied()), EXIT_OK, "{argv:?}");
}

/// Relative path → bytes for every file below `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if root.is_dir() {
        walk(root, root, &mut out);
    } else {
        out.insert(PathBuf::new(), std::fs::read(root).unwrap());
    }
    out
}

fn small_synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--out", &s(&data), "--traces", "40", "--extraction-traces", "6", "--paragraphs", "30"]);
    data
}

const TUNE_GRID: &str = concat!(
    r#"{"layer":8,"alpha":2.0,"prompt_id":"a","trait_logits":{"60":0.0,"80":1.0},"coherence_logits":{"90":0.0},"numeric_mass_trait":0.9,"numeric_mass_coherence":0.8}"#,
    "\n",
    r#"{"layer":8,"alpha":4.0,"prompt_id":"a","trait_logits":{"90":0.0},"coherence_logits":{"40":0.0,"50":null},"numeric_mass_trait":0.9,"numeric_mass_coherence":0.8}"#,
    "\n"
);

/// Every subcommand writing into `out`, in pipeline order.
fn pipeline(data: &Path, out: &Path) -> Vec<Vec<String>> {
    let t = s(&data.join("traces"));
    let o = |name: &str| s(&out.join(name));
    let grid = out.join("grid.jsonl");
    std::fs::create_dir_all(out).unwrap();
    std::fs::write(&grid, TUNE_GRID).unwrap();
    let v = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        v(&["extract-personas", "--input", &s(&data.join("extraction")), "--out", &o("bank"), "--write-registry", &o("personas.json")]),
        v(&["project", "--traces", &t, "--bank", &o("bank"), "--out", &o("proj")]),
        v(&["whiten", "--traces", &t, "--bank", &o("bank"), "--out", &o("whitening.json")]),
        v(&["project", "--traces", &t, "--bank", &o("bank"), "--whitening", &o("whitening.json"), "--out", &o("proj_white")]),
        v(&["mrr", "--traces", &t, "--bank", &o("bank"), "--whitening", &o("whitening.json"), "--out", &o("mrr.json")]),
        v(&["features", "--traces", &t, "--bank", &o("bank"), "--out", &o("features.csv")]),
        v(&["features", "--traces", &t, "--bank", &o("bank"), "--random-seed", "5", "--out", &o("random.csv")]),
        v(&["features", "--traces", &t, "--baseline", "activation", "--components", "8", "--out", &o("activation.csv")]),
        v(&["fit", "--features", &o("features.csv"), "--out", &o("model.json"), "--report", &o("cv.json"), "--outer-folds", "3", "--inner-folds", "3", "--c-count", "4"]),
        v(&["coeffs", "--model", &o("model.json"), "--bank", &o("bank"), "--out", &o("coeffs.csv")]),
        v(&["derive-strategy", "--model", &o("model.json"), "--bank", &o("bank"), "--traces", &t, "--out", &o("schedule.json")]),
        v(&["steer-sim", "--traces", &t, "--bank", &o("bank"), "--schedule", &o("schedule.json"), "--out", &o("steered")]),
        v(&["tune-select", "--grid", &s(&grid), "--out", &o("selection.json")]),
        v(&["plot-data", "--traces", &t, "--bank", &o("bank"), "--out", &o("plot")]),
    ]
}

#[test]
fn every_subcommand_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path());
    let data_again = dir.path().join("data_again");
    ok(&["synth", "--out", &s(&data_again), "--traces", "40", "--extraction-traces", "6", "--paragraphs", "30"]);
    assert_eq!(snapshot(&data), snapshot(&data_again));

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let steps_a = pipeline(&data, &a);
    for argv in &steps_a {
        assert_eq!(run(argv.clone()), EXIT_OK, "{argv:?}");
    }
    let first = snapshot(&a);
    // rerun in place: outputs are overwritten with identical bytes
    for argv in &steps_a {
        assert_eq!(run(argv.clone()), EXIT_OK, "{argv:?}");
    }
    assert_eq!(first, snapshot(&a));
    // and a fresh directory, under a different thread count
    for argv in pipeline(&data, &b) {
        let mut with_threads = vec!["--threads".to_string(), "2".to_string()];
        with_threads.extend(argv);
        assert_eq!(run(with_threads.clone()), EXIT_OK, "{with_threads:?}");
    }
    let second = snapshot(&b);
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (k, v) in &first {
        if k.to_string_lossy().ends_with("grid.jsonl") {
            continue;
        }
        assert!(second[k] == *v, "{} differs", k.display());
    }
    for name in ["bank/bank.json", "coeffs.csv", "schedule.json", "mrr.json", "plot/similarities.csv", "plot/labels.csv"] {
        assert!(first.contains_key(Path::new(name)), "missing {name}");
    }
    let masks = first.keys().filter(|k| k.ends_with("masks.jsonl")).count();
    assert_eq!(masks, 40);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(["fit"]), EXIT_USAGE);
    assert_eq!(run(["features", "--traces", "x", "--out", "y", "--baseline", "pixels"]), EXIT_USAGE);
    assert_eq!(run(["derive-strategy", "--model", "m", "--bank", "b", "--out", "o", "--traces", "t", "--median-paragraphs", "3"]), EXIT_USAGE);
    assert_eq!(run(Vec::<String>::new()), EXIT_USAGE);
    assert_eq!(run(["help"]), EXIT_OK);
}

#[test]
fn empty_label_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("x.json");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(run(["mrr", "--labels", &s(&empty)]), EXIT_DATA);
    std::fs::write(&empty, "[]").unwrap();
    assert_eq!(run(["mrr", "--labels", &s(&empty)]), EXIT_DATA);
}

#[test]
fn label_file_drives_mrr() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path());
    let t = s(&data.join("traces"));
    let bank = s(&data.join("planted_bank"));
    let labels = dir.path().join("labels.json");
    std::fs::write(
        &labels,
        r#"[{"trace_id":"trace-0000","paragraph":0,"persona":"interpreter"},{"trace_id":"trace-0001","paragraph":29,"persona":7}]"#,
    )
    .unwrap();
    let out = dir.path().join("mrr.json");
    ok(&["mrr", "--traces", &t, "--bank", &bank, "--labels", &s(&labels), "--out", &s(&out), "--model", "synthetic"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["paragraphs"], 2);
    assert_eq!(report["model"], "synthetic");
    std::fs::write(&labels, r#"[{"trace_id":"trace-0000","paragraph":0,"persona":"nobody"}]"#).unwrap();
    assert_eq!(run(["mrr", "--traces", &t, "--bank", &bank, "--labels", &s(&labels)]), EXIT_DATA);
    std::fs::write(&labels, r#"[{"trace_id":"ghost","paragraph":0,"persona":0}]"#).unwrap();
    assert_eq!(run(["mrr", "--traces", &t, "--bank", &bank, "--labels", &s(&labels)]), EXIT_DATA);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = s(&dir.path().join("nope"));
    assert_eq!(run(["project", "--traces", &missing, "--bank", &missing, "--out", &missing]), EXIT_DATA);
    assert_eq!(run(["tune-select", "--grid", &missing]), EXIT_DATA);

    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "[fit]\nsede = 1\n").unwrap();
    assert_eq!(run(["--config", &s(&bad_config), "tune-select", "--grid", &missing]), EXIT_DATA);

    let data = small_synth(dir.path());
    let t = s(&data.join("traces"));
    assert_eq!(run(["--threads", "0", "plot-data", "--traces", &t, "--bank", &s(&data.join("planted_bank")), "--out", &missing]), EXIT_DATA);

    // unlabelled rows cannot be fitted
    let csv = dir.path().join("unlabelled.csv");
    std::fs::write(&csv, "trace_id,label,f000,f001\na,,0.1,0.2\nb,1,0.3,0.4\n").unwrap();
    assert_eq!(run(["fit", "--features", &s(&csv), "--out", &s(&dir.path().join("m.json"))]), EXIT_DATA);

    // every readout under the mass threshold
    let grid = dir.path().join("grid.jsonl");
    std::fs::write(
        &grid,
        r#"{"layer":1,"alpha":1.0,"prompt_id":"p","trait_logits":{"50":0.0},"coherence_logits":{"50":0.0},"numeric_mass_trait":0.1,"numeric_mass_coherence":0.9}"#,
    )
    .unwrap();
    assert_eq!(run(["tune-select", "--grid", &s(&grid)]), EXIT_DATA);
}

#[test]
fn non_convergence_exits_4_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path());
    let features = dir.path().join("f.csv");
    ok(&["features", "--traces", &s(&data.join("traces")), "--bank", &s(&data.join("planted_bank")), "--out", &s(&features)]);
    let model = dir.path().join("model.json");
    let report = dir.path().join("cv.json");
    let code = run([
        "fit", "--features", &s(&features), "--out", &s(&model), "--report", &s(&report),
        "--outer-folds", "2", "--inner-folds", "2", "--c-count", "2", "--c-min", "100", "--c-max", "1000",
        "--max-sweeps", "1", "--tolerance", "1e-12",
    ]);
    assert_eq!(code, EXIT_NUMERIC);
    assert!(model.is_file() && report.is_file());
}

#[test]
fn constant_projections_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path());
    let zeros = dir.path().join("zeros");
    for i in 0..3 {
        let tokens = vec!["a".to_string(), "\n\n".to_string(), "b".to_string()];
        let trace = ActivationTrace::new(format!("z{i}"), "m", 16, 64, vec![0.0; 3 * 64], tokens).unwrap();
        persist_trace(&trace, &zeros.join(format!("z{i}"))).unwrap();
    }
    let code = run([
        "whiten", "--traces", &s(&zeros), "--bank", &s(&data.join("planted_bank")), "--out", &s(&dir.path().join("w.json")),
    ]);
    assert_eq!(code, EXIT_NUMERIC);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("polylogue.toml");
    std::fs::write(&cfg, "threads = 1\n[synth]\ntraces = 5\nparagraphs = 20\nextraction_traces = 2\n").unwrap();
    let out = dir.path().join("data");
    ok(&["--config", &s(&cfg), "synth", "--out", &s(&out)]);
    assert_eq!(std::fs::read_dir(out.join("traces")).unwrap().count(), 5);
}
