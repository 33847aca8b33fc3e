use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::{l1_logistic_fit_with, SolverOptions, SparseLogisticModel};
use super::metrics::{accuracy_at_half, auc};
use super::standardize::Standardizer;
use crate::error::{PolylogueError, Result};
use crate::store;

/// `n` values spaced evenly in log10 between `lo` and `hi` inclusive.
pub fn log_spaced_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && n >= 1, "bad grid bounds");
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    /// Candidate penalties in ascending order.
    pub c_grid: Vec<f64>,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            outer_folds: 5,
            inner_folds: 5,
            c_grid: log_spaced_grid(1e-4, 1e4, 10),
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

/// Fold index for every sample. Each class is shuffled with the seed and
/// dealt round-robin, so every fold holds within one sample of its share of
/// either class.
pub fn stratified_folds(y: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(PolylogueError::Config(format!("need at least 2 folds, got {folds}")));
    }
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    let minority = pos.len().min(neg.len());
    if minority < folds {
        return Err(PolylogueError::InsufficientData(format!(
            "minority class has {minority} samples, need at least {folds} for {folds}-fold stratification"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; y.len()];
    let mut next = 0;
    for mut class in [pos, neg] {
        class.shuffle(&mut rng);
        for i in class {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Standardizer plus model; takes raw feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedClassifier {
    pub standardizer: Standardizer,
    pub model: SparseLogisticModel,
}

impl FittedClassifier {
    pub fn fit(x: &DMatrix<f64>, y: &[bool], c: f64, solver: &SolverOptions) -> Result<Self> {
        let standardizer = Standardizer::fit(x)?;
        let model = l1_logistic_fit_with(&standardizer.apply(x)?, y, c, solver, None, None)?;
        Ok(Self { standardizer, model })
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.model.predict_proba(&self.standardizer.apply(x)?)
    }
}

pub const MODEL_MAGIC: &str = "PLYM1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    magic: String,
    num_features: usize,
    standardizer: Standardizer,
    weights: Vec<f64>,
    intercept: f64,
    c: f64,
    converged: bool,
    sweeps: usize,
}

pub fn persist_classifier(classifier: &FittedClassifier, path: &Path) -> Result<()> {
    let m = &classifier.model;
    store::write_json(
        path,
        &ModelFile {
            magic: MODEL_MAGIC.into(),
            num_features: m.weights.len(),
            standardizer: classifier.standardizer.clone(),
            weights: m.weights.clone(),
            intercept: m.intercept,
            c: m.c,
            converged: m.converged,
            sweeps: m.sweeps,
        },
    )
}

pub fn load_classifier(path: &Path) -> Result<FittedClassifier> {
    let file: ModelFile = store::read_json(path)?;
    if file.magic != MODEL_MAGIC {
        return Err(PolylogueError::format(path, format!("bad magic {:?}", file.magic)));
    }
    let n = file.num_features;
    if file.weights.len() != n || file.standardizer.means.len() != n || file.standardizer.scales.len() != n {
        return Err(PolylogueError::format(path, format!("expected {n} weights, means and scales")));
    }
    Ok(FittedClassifier {
        standardizer: file.standardizer,
        model: SparseLogisticModel {
            weights: file.weights,
            intercept: file.intercept,
            c: file.c,
            converged: file.converged,
            sweeps: file.sweeps,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub c: f64,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub selected_c: Vec<f64>,
    pub final_c: f64,
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn split(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != fold)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Validation AUC of every grid value, fit along the ascending C path with
/// warm starts.
fn path_aucs(
    x_train: &DMatrix<f64>,
    y_train: &[bool],
    x_val: &DMatrix<f64>,
    y_val: &[bool],
    config: &CvConfig,
) -> Result<Vec<f64>> {
    let standardizer = Standardizer::fit(x_train)?;
    let xt = standardizer.apply(x_train)?;
    let xv = standardizer.apply(x_val)?;
    let mut warm: Option<SparseLogisticModel> = None;
    let mut out = Vec::with_capacity(config.c_grid.len());
    for &c in &config.c_grid {
        let model = l1_logistic_fit_with(&xt, y_train, c, &config.solver, warm.as_ref(), None)?;
        out.push(auc(&model.decision_function(&xv)?, y_val)?);
        warm = Some(model);
    }
    Ok(out)
}

/// Inner cross-validation: the grid value with the best mean AUC, the
/// smaller C winning ties.
fn select_c(x: &DMatrix<f64>, y: &[bool], config: &CvConfig, seed: u64) -> Result<f64> {
    let assignment = stratified_folds(y, config.inner_folds, seed)?;
    let mut totals = vec![0.0; config.c_grid.len()];
    for fold in 0..config.inner_folds {
        let (train, val) = split(&assignment, fold);
        let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let yv: Vec<bool> = val.iter().map(|&i| y[i]).collect();
        let aucs = path_aucs(&select_rows(x, &train), &yt, &select_rows(x, &val), &yv, config)?;
        for (t, a) in totals.iter_mut().zip(aucs) {
            *t += a;
        }
    }
    let mut best = 0;
    for (i, &t) in totals.iter().enumerate() {
        if t > totals[best] {
            best = i;
        }
    }
    Ok(config.c_grid[best])
}

/// Most frequent value; ties go to the smaller one.
fn mode(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], 0);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        if j > best.1 {
            best = (sorted[i], j);
        }
        i += j;
    }
    best.0
}

/// Nested cross-validation. Standardization is fit inside every training
/// split. The returned classifier is refit on all rows with the most often
/// selected C.
pub fn cv_fit(x: &DMatrix<f64>, y: &[bool], config: &CvConfig) -> Result<(FittedClassifier, CvReport)> {
    if x.nrows() != y.len() {
        return Err(PolylogueError::Dimension(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if config.c_grid.is_empty() || config.c_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(PolylogueError::Config("C grid must be non-empty and positive".into()));
    }
    if config.c_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PolylogueError::Config("C grid must be strictly ascending".into()));
    }
    let n_pos = y.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(PolylogueError::DegenerateLabel("cannot cross-validate".into()));
    }
    let assignment = stratified_folds(y, config.outer_folds, config.seed)?;

    let folds: Vec<FoldReport> = (0..config.outer_folds)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = split(&assignment, fold);
            let x_train = select_rows(x, &train);
            let y_train: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let x_test = select_rows(x, &test);
            let y_test: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            let inner_seed = config.seed.wrapping_add(1 + fold as u64);
            let c = select_c(&x_train, &y_train, config, inner_seed)?;
            let clf = FittedClassifier::fit(&x_train, &y_train, c, &config.solver)?;
            let probs = clf.predict_proba(&x_test)?;
            Ok(FoldReport {
                fold,
                n_train: train.len(),
                n_test: test.len(),
                c,
                accuracy: accuracy_at_half(&probs, &y_test),
                auc: auc(&probs, &y_test)?,
            })
        })
        .collect::<Result<_>>()?;

    let selected_c: Vec<f64> = folds.iter().map(|f| f.c).collect();
    let final_c = mode(&selected_c);
    let classifier = FittedClassifier::fit(x, y, final_c, &config.solver)?;
    let (accuracy_mean, accuracy_std) = mean_std(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    let (auc_mean, auc_std) = mean_std(&folds.iter().map(|f| f.auc).collect::<Vec<_>>());
    Ok((
        classifier,
        CvReport {
            folds,
            accuracy_mean,
            accuracy_std,
            auc_mean,
            auc_std,
            selected_c,
            final_c,
        },
    ))
}
