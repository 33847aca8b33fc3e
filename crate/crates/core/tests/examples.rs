//! Every example compiled in as a module and run with light checks on what
//! it returns.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));
        }
    };
}

example!(cli_pipeline);
example!(extract_personas);
example!(feature_table);
example!(mrr_ranking);
example!(nested_cv);
example!(paragraph_judge);
example!(pca_baseline);
example!(plot_profiles);
example!(project_traces);
example!(sparse_logistic);
example!(steering_schedule);
example!(trace_bundles);
example!(tune_select);
example!(whitening);

#[test]
fn cli_pipeline_runs_clean() {
    assert!(cli_pipeline::run().iter().all(|&c| c == 0));
}

#[test]
fn extraction_recovers_directions() {
    assert!(extract_personas::run().unwrap().iter().all(|&c| c > 0.98));
}

#[test]
fn feature_table_width() {
    assert_eq!(feature_table::run().unwrap(), 186);
}

#[test]
fn mrr_beats_baselines() {
    let r = mrr_ranking::run().unwrap();
    assert!(r.poly.unwrap() > r.frq && r.poly.unwrap() > r.rnd);
}

#[test]
fn nested_cv_separates() {
    assert!(nested_cv::run().unwrap().auc_mean > 0.9);
}

#[test]
fn judge_numbers() {
    assert_eq!(paragraph_judge::run(), vec![1, 1, 1, 2, 2, 3, 4, 4, 5]);
}

#[test]
fn pca_variances_descend() {
    let v = pca_baseline::run().unwrap();
    assert_eq!(v.len(), 8);
    assert!(v.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn plot_profiles_shape() {
    let (sims, freqs) = plot_profiles::run().unwrap();
    assert_eq!(sims.lines().count(), 1 + 10 * 8);
    assert_eq!(freqs.lines().count(), 1 + 10 * 8);
}

#[test]
fn projection_finds_planted_personas() {
    assert_eq!(project_traces::run().unwrap(), vec![0, 1, 3, 5, 7]);
}

#[test]
fn support_grows_with_c() {
    let s = sparse_logistic::run().unwrap();
    assert_eq!(s[0], 0);
    assert!(s.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn schedule_from_weights() {
    let s = steering_schedule::run().unwrap();
    assert_eq!(s.rules.len(), 2);
    assert_eq!((s.rules[0].persona, s.rules[0].start_paragraph, s.rules[0].end_paragraph), (2, 15, 16));
    assert_eq!((s.rules[1].persona, s.rules[1].start_paragraph, s.rules[1].end_paragraph), (5, 31, 32));
}

#[test]
fn bundles_round_trip() {
    assert!(trace_bundles::run().unwrap());
}

#[test]
fn tuning_picks_coherent_config() {
    let s = tune_select::run().unwrap();
    assert_eq!((s.layer, s.alpha), (12, 1.0));
}

#[test]
fn whitening_decorrelates() {
    assert!(whitening::run().unwrap() < 1e-8);
}
