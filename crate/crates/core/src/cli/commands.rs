use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ConfigFile;
use super::{
    Baseline, CoeffsArgs, ExtractArgs, FeaturesArgs, FitArgs, MrrArgs, PlotArgs, ProjectArgs, StrategyArgs,
    SteerArgs, SynthArgs, TuneArgs, WhitenArgs,
};
use crate::error::{PolylogueError, Result};
use crate::learn::{
    cv_fit, load_classifier, log_spaced_grid, pca_fit, persist_classifier, random_bank, CvConfig, CvReport,
    SolverOptions,
};
use crate::personas::{self, ExtractionSet, Registry};
use crate::plot::{label_profile, profile_csv, similarity_profile, LabelledTrace};
use crate::polylogue::{
    export_matrix, feature_dimension, feature_names, fit_whitening_with_floor, load_whitening, persist_whitening,
    pool_rows, project as project_trace, segment_paragraphs, trace_features, FeatureConfig, PolylogueMatrix, WhiteningModel,
    DEFAULT_BINS, DEFAULT_LAMBDA,
};
use crate::ranking::{mrr as mean_reciprocal_rank, mrr_frequency, mrr_random, paragraph_rankings, MrrReport};
use crate::steering::{derive_strategy as derive, median_paragraph_count, steer_trace, StrategyConfig, DEFAULT_TOP_K};
use crate::store::{
    discover_bundles, load_bank, load_schedule, load_trace, persist_bank, persist_schedule, persist_trace,
    to_json_bytes, write_atomic, write_features_csv, read_features_csv, write_json, ActivationTrace, FeatureRow,
    PersonaBank, SteeringSchedule,
};
use crate::synth::{generate_dataset, write_dataset, SynthConfig};
use crate::tuning::{
    build_grid, read_grid_records, select_config, SelectionReport, DEFAULT_BETA, DEFAULT_MASS_THRESHOLD,
};

const DEFAULT_COMPONENTS: usize = 128;
const DEFAULT_ALPHA: f64 = 1.0;

fn load_traces(root: &Path) -> Result<Vec<ActivationTrace>> {
    let dirs = discover_bundles(root)?;
    if dirs.is_empty() {
        return Err(PolylogueError::EmptyInput(format!("no trace bundles under {}", root.display())));
    }
    dirs.par_iter().map(|d| load_trace(d)).collect()
}

fn project_all(traces: &[ActivationTrace], bank: &PersonaBank) -> Result<Vec<PolylogueMatrix>> {
    traces.par_iter().map(|t| project_trace(t, bank)).collect()
}

fn whiten_all(matrices: &[PolylogueMatrix], model: &WhiteningModel) -> Result<Vec<PolylogueMatrix>> {
    matrices.par_iter().map(|m| model.apply(m)).collect()
}

fn check_names(expected: &[String], found: &[String], what: &str) -> Result<()> {
    if expected != found {
        return Err(PolylogueError::Consistency(format!(
            "{what} was built for personas {found:?}, the bank has {expected:?}"
        )));
    }
    Ok(())
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", String::from_utf8_lossy(&to_json_bytes(value)));
            Ok(())
        }
    }
}

pub(super) fn extract_personas(args: ExtractArgs, config: &ConfigFile) -> Result<()> {
    let registry = match &args.registry {
        Some(path) => Registry::load(path)?,
        None => Registry::default(),
    };
    let alpha = args.alpha.or(config.extract.alpha).unwrap_or(DEFAULT_ALPHA);
    let sets = registry
        .names()
        .iter()
        .map(|name| {
            let dir = args.input.join(name);
            Ok(ExtractionSet {
                positive: load_traces(&dir.join("positive"))?,
                negative: load_traces(&dir.join("negative"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let layer = sets[0].positive[0].layer();
    let directions = personas::extract_all(&sets)?;
    for (k, dir) in directions.iter().enumerate() {
        if dir.is_degenerate() {
            log::warn!("persona {} has a near-zero direction", registry.names()[k]);
        }
    }
    let counts: Vec<String> = sets
        .iter()
        .map(|s| format!("{}/{}", s.positive.len(), s.negative.len()))
        .collect();
    let provenance = format!("mean difference of response means; pos/neg per persona {}", counts.join(","));
    let bank = personas::build_bank(&directions, layer, alpha, provenance)?;
    persist_bank(&bank, &args.out)?;
    if let Some(path) = &args.write_registry {
        registry.save(path)?;
    }
    Ok(())
}

pub(super) fn project(args: ProjectArgs) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let traces = load_traces(&args.traces)?;
    let mut matrices = project_all(&traces, &bank)?;
    if let Some(path) = &args.whitening {
        let (model, names) = load_whitening(path)?;
        check_names(bank.names(), &names, "whitening")?;
        matrices = whiten_all(&matrices, &model)?;
    }
    matrices
        .par_iter()
        .try_for_each(|m| export_matrix(m, bank.names(), &args.out.join(&m.trace_id)))
}

pub(super) fn whiten(args: WhitenArgs, config: &ConfigFile) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let traces = load_traces(&args.traces)?;
    let matrices = project_all(&traces, &bank)?;
    let lambda = args.lambda.or(config.whiten.lambda).unwrap_or(DEFAULT_LAMBDA);
    let floor = args.eig_floor.or(config.whiten.eig_floor);
    let model = fit_whitening_with_floor(&pool_rows(&matrices)?, lambda, floor)?;
    persist_whitening(&model, bank.names(), &args.out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PersonaRef {
    Index(usize),
    Name(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelEntry {
    trace_id: String,
    paragraph: usize,
    persona: PersonaRef,
}

fn read_label_file(path: &Path) -> Result<Vec<LabelEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| PolylogueError::io(path, e))?;
    if text.trim().is_empty() {
        return Err(PolylogueError::Validation(format!("{} is empty", path.display())));
    }
    let entries: Vec<LabelEntry> =
        serde_json::from_str(&text).map_err(|e| PolylogueError::format(path, e.to_string()))?;
    if entries.is_empty() {
        return Err(PolylogueError::Validation(format!("{} holds no labels", path.display())));
    }
    Ok(entries)
}

fn labels_by_trace(entries: Vec<LabelEntry>, names: &[String]) -> Result<BTreeMap<String, Vec<(usize, usize)>>> {
    let mut out: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for e in entries {
        let k = match e.persona {
            PersonaRef::Index(k) if k < names.len() => k,
            PersonaRef::Index(k) => {
                return Err(PolylogueError::Validation(format!("persona index {k} out of range")));
            }
            PersonaRef::Name(name) => names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| PolylogueError::Validation(format!("unknown persona {name:?}")))?,
        };
        let list = out.entry(e.trace_id.clone()).or_default();
        if list.iter().any(|&(p, _)| p == e.paragraph) {
            return Err(PolylogueError::Validation(format!(
                "trace {} paragraph {} is labelled twice",
                e.trace_id, e.paragraph
            )));
        }
        list.push((e.paragraph, k));
    }
    Ok(out)
}

pub(super) fn mrr(args: MrrArgs, config: &ConfigFile) -> Result<()> {
    let file_labels = args.labels.as_deref().map(read_label_file).transpose()?;
    let (Some(traces_dir), Some(bank_dir)) = (&args.traces, &args.bank) else {
        return Err(PolylogueError::Config("mrr needs --traces and --bank".into()));
    };
    let bank = load_bank(bank_dir)?;
    let traces = load_traces(traces_dir)?;
    let raw = project_all(&traces, &bank)?;
    let scores = if args.no_whiten {
        raw
    } else {
        let model = match &args.whitening {
            Some(path) => {
                let (model, names) = load_whitening(path)?;
                check_names(bank.names(), &names, "whitening")?;
                model
            }
            None => {
                let lambda = config.whiten.lambda.unwrap_or(DEFAULT_LAMBDA);
                fit_whitening_with_floor(&pool_rows(&raw)?, lambda, config.whiten.eig_floor)?
            }
        };
        whiten_all(&raw, &model)?
    };
    let by_trace = file_labels.map(|e| labels_by_trace(e, bank.names())).transpose()?;
    if let Some(map) = &by_trace {
        for id in map.keys() {
            if !traces.iter().any(|t| t.trace_id() == id) {
                return Err(PolylogueError::Validation(format!("labels name unknown trace {id}")));
            }
        }
    }
    let mut rankings = Vec::new();
    for (trace, m) in traces.iter().zip(&scores) {
        let labels: &[(usize, usize)] = match &by_trace {
            Some(map) => map.get(trace.trace_id()).map(Vec::as_slice).unwrap_or(&[]),
            None => trace.paragraph_labels().unwrap_or(&[]),
        };
        rankings.extend(paragraph_rankings(m, &segment_paragraphs(trace), labels)?);
    }
    if rankings.is_empty() {
        return Err(PolylogueError::EmptyInput("no labelled non-empty paragraphs".into()));
    }
    let labels: Vec<usize> = rankings.iter().map(|r| r.label).collect();
    let report = MrrReport {
        model: args.model,
        rnd: mrr_random(bank.num_personas()),
        frq: mrr_frequency(&labels, bank.num_personas())?,
        poly: Some(mean_reciprocal_rank(&rankings)?),
        paragraphs: rankings.len(),
    };
    emit_json(&report, args.out.as_deref())
}

fn activation_rows(traces: &[ActivationTrace], components: usize) -> Result<Vec<FeatureRow>> {
    let d = traces[0].hidden_size();
    if let Some(t) = traces.iter().find(|t| t.hidden_size() != d) {
        return Err(PolylogueError::Dimension(format!("trace {} has d={}, expected {d}", t.trace_id(), t.hidden_size())));
    }
    let x = DMatrix::from_fn(traces.len(), d, |i, j| f64::from(traces[i].row(traces[i].num_tokens() - 1)[j]));
    let pca = pca_fit(&x, components)?;
    let z = pca.apply(&x)?;
    Ok(traces
        .iter()
        .enumerate()
        .map(|(i, t)| FeatureRow {
            trace_id: t.trace_id().to_string(),
            values: z.row(i).iter().copied().collect(),
            label: t.correct(),
        })
        .collect())
}

pub(super) fn features(args: FeaturesArgs, config: &ConfigFile) -> Result<()> {
    let traces = load_traces(&args.traces)?;
    let rows = match args.baseline {
        Baseline::Activation => {
            let m = args.components.or(config.features.components).unwrap_or(DEFAULT_COMPONENTS);
            activation_rows(&traces, m)?
        }
        Baseline::Polylogue => {
            let n_bins = args.n_bins.or(config.features.n_bins).unwrap_or(DEFAULT_BINS);
            let fc = FeatureConfig::new(n_bins)?;
            let bank_dir = args
                .bank
                .as_ref()
                .ok_or_else(|| PolylogueError::Config("polylogue features need --bank".into()))?;
            let mut bank = load_bank(bank_dir)?;
            if let Some(seed) = args.random_seed {
                bank = random_bank(bank.num_personas(), bank.hidden_size(), seed, bank.layer(), bank.default_alpha())?;
            }
            traces
                .par_iter()
                .map(|t| trace_features(t, &bank, &fc))
                .collect::<Result<Vec<_>>>()?
        }
    };
    write_features_csv(&args.out, &rows)
}

#[derive(Serialize)]
struct FitReport {
    condition: String,
    rows: usize,
    features: usize,
    positives: usize,
    nonzero: usize,
    converged: bool,
    cv: CvReport,
}

pub(super) fn fit(args: FitArgs, config: &ConfigFile) -> Result<()> {
    let rows = read_features_csv(&args.features)?;
    if rows.is_empty() {
        return Err(PolylogueError::EmptyInput(format!("{} has no rows", args.features.display())));
    }
    let y = rows
        .iter()
        .map(|r| {
            r.label
                .ok_or_else(|| PolylogueError::Validation(format!("row {} has no label", r.trace_id)))
        })
        .collect::<Result<Vec<bool>>>()?;
    let p = rows[0].values.len();
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i].values[j]);
    let f = &config.fit;
    let defaults = CvConfig::default();
    let grid = log_spaced_grid(
        args.c_min.or(f.c_min).unwrap_or(defaults.c_grid[0]),
        args.c_max.or(f.c_max).unwrap_or(defaults.c_grid[defaults.c_grid.len() - 1]),
        args.c_count.or(f.c_count).unwrap_or(defaults.c_grid.len()),
    );
    if grid.is_empty() || grid.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(PolylogueError::Config("the C grid must hold positive finite values".into()));
    }
    let cv_config = CvConfig {
        outer_folds: args.outer_folds.or(f.outer_folds).unwrap_or(defaults.outer_folds),
        inner_folds: args.inner_folds.or(f.inner_folds).unwrap_or(defaults.inner_folds),
        c_grid: grid,
        seed: args.seed.or(f.seed).unwrap_or(defaults.seed),
        solver: SolverOptions {
            tolerance: args.tolerance.or(f.tolerance).unwrap_or(defaults.solver.tolerance),
            max_sweeps: args.max_sweeps.or(f.max_sweeps).unwrap_or(defaults.solver.max_sweeps),
            ..defaults.solver
        },
    };
    let (classifier, cv) = cv_fit(&x, &y, &cv_config)?;
    persist_classifier(&classifier, &args.out)?;
    let converged = classifier.model.converged;
    let report = FitReport {
        condition: args.condition,
        rows: rows.len(),
        features: p,
        positives: y.iter().filter(|&&v| v).count(),
        nonzero: classifier.model.nonzero(),
        converged,
        cv,
    };
    emit_json(&report, args.report.as_deref())?;
    if !converged {
        return Err(PolylogueError::NonConvergence(format!(
            "final refit stopped after {} sweeps",
            classifier.model.sweeps
        )));
    }
    Ok(())
}

pub(super) fn coeffs(args: CoeffsArgs, config: &ConfigFile) -> Result<()> {
    let classifier = load_classifier(&args.model)?;
    let weights = &classifier.model.weights;
    let personas = match &args.bank {
        Some(dir) => load_bank(dir)?.names().to_vec(),
        None => personas::persona_names(),
    };
    let n_bins = args.n_bins.or(config.features.n_bins).unwrap_or(DEFAULT_BINS);
    let names = if weights.len() == feature_dimension(personas.len(), n_bins) {
        feature_names(&personas, n_bins)
    } else {
        (0..weights.len()).map(crate::store::feature_column_name).collect()
    };
    let mut order: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] != 0.0).collect();
    order.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()));
    if let Some(top) = args.top {
        order.truncate(top);
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| PolylogueError::Validation(e.to_string());
    w.write_record(["rank", "feature", "name", "coef"]).map_err(csv_err)?;
    for (rank, &j) in order.iter().enumerate() {
        w.write_record([(rank + 1).to_string(), j.to_string(), names[j].clone(), weights[j].to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| PolylogueError::Validation(e.to_string()))?;
    write_atomic(&args.out, &bytes)
}

pub(super) fn derive_strategy(args: StrategyArgs, config: &ConfigFile) -> Result<()> {
    let classifier = load_classifier(&args.model)?;
    let bank = load_bank(&args.bank)?;
    let median = match (args.median_paragraphs, &args.traces) {
        (Some(m), _) => m,
        (None, Some(dir)) => {
            let counts: Vec<usize> = load_traces(dir)?
                .iter()
                .map(|t| segment_paragraphs(t).num_paragraphs())
                .collect();
            median_paragraph_count(&counts)?
        }
        (None, None) => {
            return Err(PolylogueError::Config("derive-strategy needs --traces or --median-paragraphs".into()));
        }
    };
    let strategy = StrategyConfig::new(
        args.top_k.or(config.strategy.top_k).unwrap_or(DEFAULT_TOP_K),
        median,
        args.n_bins.or(config.strategy.n_bins).unwrap_or(DEFAULT_BINS),
    )?;
    let mut schedule = derive(&classifier.model, &strategy, &bank)?;
    if let Some(alpha) = args.alpha {
        schedule = SteeringSchedule::new(schedule.layer, alpha, schedule.rules)?;
    }
    persist_schedule(&schedule, &args.out)
}

pub(super) fn steer_sim(args: SteerArgs) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let schedule = load_schedule(&args.schedule)?;
    schedule.validate_against(&bank)?;
    let traces = load_traces(&args.traces)?;
    traces.par_iter().try_for_each(|t| {
        let (steered, masks) = steer_trace(t, &schedule, &bank)?;
        let dir = args.out.join(t.trace_id());
        persist_trace(&steered, &dir)?;
        let mut log = Vec::new();
        for record in &masks {
            log.extend(serde_json::to_vec(record).map_err(|e| PolylogueError::Validation(e.to_string()))?);
            log.push(b'\n');
        }
        write_atomic(&dir.join("masks.jsonl"), &log)
    })
}

pub(super) fn tune_select(args: TuneArgs, config: &ConfigFile) -> Result<()> {
    let file = File::open(&args.grid).map_err(|e| PolylogueError::io(&args.grid, e))?;
    let records = read_grid_records(BufReader::new(file))?;
    let beta = args.beta.or(config.tune.beta).unwrap_or(DEFAULT_BETA);
    let tau = args
        .mass_threshold
        .or(config.tune.mass_threshold)
        .unwrap_or(DEFAULT_MASS_THRESHOLD);
    let selection = select_config(&build_grid(&records, tau, beta)?)?;
    let report = SelectionReport {
        model: args.model,
        layer: selection.layer,
        coef: selection.alpha,
        mean_objective: selection.mean_objective,
        beta,
        mass_threshold: tau,
        candidates: selection.candidates,
    };
    emit_json(&report, args.out.as_deref())
}

pub(super) fn synth(args: SynthArgs, config: &ConfigFile) -> Result<()> {
    let s = &config.synth;
    let mut c = SynthConfig::default();
    c.seed = args.seed.or(s.seed).unwrap_or(c.seed);
    c.num_traces = args.num_traces.or(s.traces).unwrap_or(c.num_traces);
    c.hidden_size = args.hidden_size.or(s.hidden_size).unwrap_or(c.hidden_size);
    c.gamma = args.gamma.or(s.gamma).unwrap_or(c.gamma);
    c.noise_ratio = args.noise_ratio.or(s.noise_ratio).unwrap_or(c.noise_ratio);
    c.paragraphs = args.paragraphs.or(s.paragraphs).unwrap_or(c.paragraphs);
    c.extraction_traces = args.extraction_traces.or(s.extraction_traces).unwrap_or(c.extraction_traces);
    c.label_bin = args.label_bin.or(s.label_bin).unwrap_or(c.label_bin);
    c.label_persona = args.label_persona.or(s.label_persona).unwrap_or(c.label_persona);
    if !(c.gamma.is_finite() && c.gamma > 0.0) || !(c.noise_ratio.is_finite() && c.noise_ratio >= 0.0) {
        return Err(PolylogueError::Config("need gamma > 0 and noise_ratio >= 0".into()));
    }
    write_dataset(&generate_dataset(&c)?, &args.out)
}

pub(super) fn plot_data(args: PlotArgs, config: &ConfigFile) -> Result<()> {
    let bank = load_bank(&args.bank)?;
    let traces = load_traces(&args.traces)?;
    let n_bins = args.n_bins.or(config.plot.n_bins).unwrap_or(DEFAULT_BINS);
    let mut matrices = project_all(&traces, &bank)?;
    if let Some(path) = &args.whitening {
        let (model, names) = load_whitening(path)?;
        check_names(bank.names(), &names, "whitening")?;
        matrices = whiten_all(&matrices, &model)?;
    }
    let sims = similarity_profile(&matrices, n_bins)?;
    let labelled: Vec<LabelledTrace<'_>> = traces
        .iter()
        .filter_map(|t| {
            t.paragraph_labels().map(|labels| LabelledTrace {
                num_paragraphs: segment_paragraphs(t).num_paragraphs(),
                labels,
            })
        })
        .collect();
    let freqs = label_profile(&labelled, bank.num_personas(), n_bins)?;
    write_atomic(&args.out.join("similarities.csv"), &profile_csv(&sims, bank.names(), "similarity")?)?;
    write_atomic(&args.out.join("labels.csv"), &profile_csv(&freqs, bank.names(), "frequency")?)
}
