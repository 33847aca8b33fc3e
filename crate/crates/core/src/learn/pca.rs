use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{PolylogueError, Result};

/// Top principal directions of a centred data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// `m×D`, orthonormal rows, decreasing explained variance.
    pub components: DMatrix<f64>,
    pub means: DVector<f64>,
    pub explained_variance: Vec<f64>,
}

/// Eigendecomposition of the population covariance. When `D > N` the
/// `N×N` Gram matrix is decomposed instead and mapped back, which yields
/// the same non-trivial components.
pub fn pca_fit(x: &DMatrix<f64>, m: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(PolylogueError::InsufficientData(format!("PCA needs at least 2 rows, got {n}")));
    }
    if m == 0 {
        return Err(PolylogueError::Config("PCA needs at least one component".into()));
    }
    let limit = (n - 1).min(d);
    let m = if m > limit {
        log::warn!("PCA: {m} components requested, truncating to {limit}");
        limit
    } else {
        m
    };

    let means = DVector::from_iterator(d, x.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= means.transpose();
    }

    let mut pairs: Vec<(f64, DVector<f64>)> = if d <= n {
        let cov = centered.transpose() * &centered / n as f64;
        let eig = SymmetricEigen::new(cov);
        (0..d)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
            .collect()
    } else {
        let gram = &centered * centered.transpose() / n as f64;
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .map(|i| {
                let dir = centered.transpose() * eig.eigenvectors.column(i);
                (eig.eigenvalues[i], dir)
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let top = pairs.first().map_or(0.0, |p| p.0.max(0.0));
    let mut rows = Vec::with_capacity(m);
    let mut explained = Vec::with_capacity(m);
    for (value, mut dir) in pairs.into_iter().take(m) {
        let norm = dir.norm();
        if d > n && (value <= 1e-12 * top || norm == 0.0) {
            log::warn!("PCA: dropping a null-variance component");
            continue;
        }
        dir /= norm;
        // largest-magnitude entry positive
        let pivot = dir.iamax();
        if dir[pivot] < 0.0 {
            dir = -dir;
        }
        rows.push(dir.transpose());
        explained.push(value.max(0.0));
    }
    if rows.is_empty() {
        return Err(PolylogueError::InsufficientData("data has no variance".into()));
    }
    Ok(PcaModel {
        components: DMatrix::from_rows(&rows),
        means,
        explained_variance: explained,
    })
}

impl PcaModel {
    pub fn num_components(&self) -> usize {
        self.components.nrows()
    }

    /// `N×D` to `N×m` scores.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(PolylogueError::Dimension(format!(
                "matrix has {} columns, PCA was fit on {}",
                x.ncols(),
                self.means.len()
            )));
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.means.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    /// Maps scores back to centred data space.
    pub fn back_project(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        scores * &self.components
    }
}
