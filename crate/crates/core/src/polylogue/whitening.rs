//! Global Mahalanobis whitening of persona projections with shrinkage
//! towards a scaled identity.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::PolylogueMatrix;
use crate::error::{PolylogueError, Result};
use crate::store;

pub const DEFAULT_LAMBDA: f64 = 0.05;
/// Default eigenvalue floor, relative to the mean variance.
pub const RELATIVE_EIG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    pub mu: DVector<f64>,
    pub lambda: f64,
    pub w: DMatrix<f64>,
    pub eig_floor: f64,
    /// The shrunk covariance that `w` inverts the square root of.
    pub shrunk_covariance: DMatrix<f64>,
}

impl WhiteningModel {
    pub fn num_personas(&self) -> usize {
        self.mu.len()
    }

    pub fn identity(k: usize) -> Self {
        Self {
            mu: DVector::zeros(k),
            lambda: 0.0,
            w: DMatrix::identity(k, k),
            eig_floor: 0.0,
            shrunk_covariance: DMatrix::identity(k, k),
        }
    }

    /// `(s - mu) W` for one score vector.
    pub fn whiten(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.mu.len() {
            return Err(PolylogueError::Dimension(format!(
                "score vector has K={}, model has K={}",
                s.len(),
                self.mu.len()
            )));
        }
        // W is symmetric, so the row-vector product equals W (s - mu).
        Ok(&self.w * (s - &self.mu))
    }

    pub fn apply(&self, scores: &PolylogueMatrix) -> Result<PolylogueMatrix> {
        if scores.num_personas() != self.mu.len() {
            return Err(PolylogueError::Dimension(format!(
                "scores have K={}, model has K={}",
                scores.num_personas(),
                self.mu.len()
            )));
        }
        let mut centered = scores.scores.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mu;
        }
        Ok(PolylogueMatrix {
            trace_id: scores.trace_id.clone(),
            scores: &self.w * centered,
            whitened: true,
        })
    }
}

/// Stacks the per-token projection vectors of many traces into an `N×K`
/// matrix.
pub fn pool_rows(matrices: &[PolylogueMatrix]) -> Result<DMatrix<f64>> {
    let k = matrices
        .first()
        .map(PolylogueMatrix::num_personas)
        .ok_or_else(|| PolylogueError::EmptyInput("no projection matrices to pool".into()))?;
    let n: usize = matrices.iter().map(PolylogueMatrix::num_tokens).sum();
    let mut rows = DMatrix::zeros(n, k);
    let mut r = 0;
    for m in matrices {
        if m.num_personas() != k {
            return Err(PolylogueError::Dimension(format!(
                "matrix {} has K={}, expected {k}",
                m.trace_id,
                m.num_personas()
            )));
        }
        for t in 0..m.num_tokens() {
            for j in 0..k {
                rows[(r, j)] = m.scores[(j, t)];
            }
            r += 1;
        }
    }
    Ok(rows)
}

/// Fits `mu` and `W = Σ̂^{-1/2}` on pooled rows with the default eigenvalue
/// floor (`1e-10` times the mean variance).
pub fn fit_whitening(rows: &DMatrix<f64>, lambda: f64) -> Result<WhiteningModel> {
    fit_whitening_with_floor(rows, lambda, None)
}

pub fn fit_whitening_with_floor(
    rows: &DMatrix<f64>,
    lambda: f64,
    eig_floor: Option<f64>,
) -> Result<WhiteningModel> {
    let (n, k) = rows.shape();
    if n < 2 {
        return Err(PolylogueError::InsufficientData(format!(
            "whitening needs at least 2 rows, got {n}"
        )));
    }
    if k == 0 {
        return Err(PolylogueError::Dimension("whitening needs K >= 1".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(PolylogueError::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(PolylogueError::Numeric("non-finite projection in whitening input".into()));
    }

    let mu = DVector::from_iterator(k, (0..k).map(|j| rows.column(j).sum() / n as f64));
    let mut centered = rows.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    // population covariance
    let sigma = (centered.transpose() * &centered) / n as f64;
    let mean_var = sigma.diagonal().sum() / k as f64;
    let shrunk = sigma * (1.0 - lambda) + DMatrix::identity(k, k) * (lambda * mean_var);

    let floor = eig_floor.unwrap_or(RELATIVE_EIG_FLOOR * mean_var);
    if !(floor > 0.0) {
        return Err(PolylogueError::Numeric(
            "projections have zero variance; whitening is undefined".into(),
        ));
    }
    let eig = SymmetricEigen::new(shrunk.clone());
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(floor).sqrt());
    let u = &eig.eigenvectors;
    let mut w = u * DMatrix::from_diagonal(&inv_sqrt) * u.transpose();
    // symmetrise away rounding
    w = (&w + w.transpose()) * 0.5;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(PolylogueError::Numeric("whitening matrix is not finite".into()));
    }
    Ok(WhiteningModel {
        mu,
        lambda,
        w,
        eig_floor: floor,
        shrunk_covariance: shrunk,
    })
}

pub const WHITENING_MAGIC: &str = "PLYW1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WhiteningFile {
    magic: String,
    names: Vec<String>,
    lambda: f64,
    eig_floor: f64,
    mu: Vec<f64>,
    /// Row-major `K×K`.
    w: Vec<Vec<f64>>,
    shrunk_covariance: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from(path: &Path, rows: &[Vec<f64>], k: usize) -> Result<DMatrix<f64>> {
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(PolylogueError::format(path, format!("expected a {k}x{k} matrix")));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

/// Writes the model and the persona names it was fit for as JSON.
pub fn persist_whitening(model: &WhiteningModel, names: &[String], path: &Path) -> Result<()> {
    if names.len() != model.num_personas() {
        return Err(PolylogueError::Dimension(format!(
            "{} names for a K={} whitening model",
            names.len(),
            model.num_personas()
        )));
    }
    let file = WhiteningFile {
        magic: WHITENING_MAGIC.into(),
        names: names.to_vec(),
        lambda: model.lambda,
        eig_floor: model.eig_floor,
        mu: model.mu.iter().copied().collect(),
        w: rows_of(&model.w),
        shrunk_covariance: rows_of(&model.shrunk_covariance),
    };
    store::write_json(path, &file)
}

pub fn load_whitening(path: &Path) -> Result<(WhiteningModel, Vec<String>)> {
    let file: WhiteningFile = store::read_json(path)?;
    if file.magic != WHITENING_MAGIC {
        return Err(PolylogueError::format(path, format!("bad magic {:?}", file.magic)));
    }
    let k = file.mu.len();
    if file.names.len() != k {
        return Err(PolylogueError::Consistency(format!(
            "{} lists {} names for K={k}",
            path.display(),
            file.names.len()
        )));
    }
    let model = WhiteningModel {
        mu: DVector::from_vec(file.mu),
        lambda: file.lambda,
        w: matrix_from(path, &file.w, k)?,
        eig_floor: file.eig_floor,
        shrunk_covariance: matrix_from(path, &file.shrunk_covariance, k)?,
    };
    Ok((model, file.names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f64]]) -> DMatrix<f64> {
        let k = data[0].len();
        DMatrix::from_row_iterator(data.len(), k, data.iter().flat_map(|r| r.iter().copied()))
    }

    #[test]
    fn identity_case() {
        // zero mean, identity population covariance
        let x = rows(&[&[1.0, 1.0], &[1.0, -1.0], &[-1.0, 1.0], &[-1.0, -1.0]]);
        let m = fit_whitening(&x, 0.0).unwrap();
        assert!(m.mu.norm() < 1e-15);
        assert!((&m.w - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn file_round_trip() {
        let x = rows(&[&[1.0, 0.3], &[0.2, -1.0], &[-0.7, 0.9], &[0.1, 0.4]]);
        let m = fit_whitening(&x, DEFAULT_LAMBDA).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("whitening.json");
        let names = vec!["a".to_string(), "b".to_string()];
        persist_whitening(&m, &names, &path).unwrap();
        let (back, back_names) = load_whitening(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_names, names);
        assert!(persist_whitening(&m, &names[..1], &path).is_err());
    }

    #[test]
    fn one_dimensional_hand_case() {
        let x = rows(&[&[0.0], &[2.0]]);
        let m = fit_whitening(&x, DEFAULT_LAMBDA).unwrap();
        assert!((m.mu[0] - 1.0).abs() < 1e-15);
        assert!((m.w[(0, 0)] - 1.0).abs() < 1e-12);
        let lo = m.whiten(&DVector::from_vec(vec![0.0])).unwrap();
        let hi = m.whiten(&DVector::from_vec(vec![2.0])).unwrap();
        assert!((lo[0] + 1.0).abs() < 1e-12);
        assert!((hi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shrinkage_hand_case() {
        // population covariance [[1,1],[1,1]]
        let x = rows(&[&[1.0, 1.0], &[-1.0, -1.0]]);
        let m = fit_whitening(&x, 0.05).unwrap();
        let expected = rows(&[&[1.0, 0.95], &[0.95, 1.0]]);
        assert!((&m.shrunk_covariance - &expected).abs().max() < 1e-12);
        let mut ev: Vec<f64> = SymmetricEigen::new(m.w.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 1.0 / 1.95f64.sqrt()).abs() < 1e-9);
        assert!((ev[1] - 1.0 / 0.05f64.sqrt()).abs() < 1e-9);
        assert!(m.w.iter().all(|v| v.is_finite()));
        assert!((&m.w - m.w.transpose()).abs().max() == 0.0);
    }

    #[test]
    fn singular_covariance_stays_finite_with_floor() {
        let x = rows(&[&[1.0, 1.0], &[-1.0, -1.0]]);
        let m = fit_whitening(&x, 0.0).unwrap();
        assert!(m.w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            fit_whitening(&rows(&[&[1.0, 2.0]]), 0.05),
            Err(PolylogueError::InsufficientData(_))
        ));
        assert!(matches!(
            fit_whitening(&rows(&[&[1.0], &[f64::NAN]]), 0.05),
            Err(PolylogueError::Numeric(_))
        ));
        assert!(matches!(
            fit_whitening(&rows(&[&[1.0], &[1.0]]), 0.05),
            Err(PolylogueError::Numeric(_))
        ));
    }

    #[test]
    fn apply_identity_is_noop_and_flags() {
        let m = WhiteningModel::identity(2);
        let scores = PolylogueMatrix {
            trace_id: "x".into(),
            scores: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 9.0]),
            whitened: false,
        };
        let out = m.apply(&scores).unwrap();
        assert_eq!(out.scores, scores.scores);
        assert!(out.whitened);
        assert!(WhiteningModel::identity(3).apply(&scores).is_err());
    }
}
