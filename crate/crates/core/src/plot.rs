//! Progress-binned summaries for plotting: persona similarity profiles over
//! the course of a response and paragraph-label frequencies.

use nalgebra::DMatrix;

use crate::error::{PolylogueError, Result};
use crate::polylogue::{paragraph_bin, PolylogueMatrix};

/// Bin of token `t` out of `num_tokens`, by relative position.
pub fn progress_bin(t: usize, num_tokens: usize, n_bins: usize) -> usize {
    ((t * n_bins) / num_tokens).min(n_bins - 1)
}

/// `n_b×K` profile: per bin, the mean similarity of each persona averaged
/// over the traces that reach that bin, then softmax-normalised across
/// personas. A bin no trace reaches comes out uniform.
pub fn similarity_profile(matrices: &[PolylogueMatrix], n_bins: usize) -> Result<DMatrix<f64>> {
    let k = matrices
        .first()
        .map(PolylogueMatrix::num_personas)
        .ok_or_else(|| PolylogueError::EmptyInput("no traces to profile".into()))?;
    if n_bins == 0 {
        return Err(PolylogueError::Config("n_bins must be >= 1".into()));
    }
    let mut sums = DMatrix::<f64>::zeros(n_bins, k);
    let mut reached = vec![0usize; n_bins];
    for m in matrices {
        if m.num_personas() != k {
            return Err(PolylogueError::Dimension(format!("trace {} has K={}, expected {k}", m.trace_id, m.num_personas())));
        }
        let t_total = m.num_tokens();
        let mut bin_sum = DMatrix::<f64>::zeros(n_bins, k);
        let mut bin_count = vec![0usize; n_bins];
        for t in 0..t_total {
            let b = progress_bin(t, t_total, n_bins);
            bin_count[b] += 1;
            for j in 0..k {
                bin_sum[(b, j)] += m.scores[(j, t)];
            }
        }
        for b in 0..n_bins {
            if bin_count[b] > 0 {
                reached[b] += 1;
                for j in 0..k {
                    sums[(b, j)] += bin_sum[(b, j)] / bin_count[b] as f64;
                }
            }
        }
    }
    let mut out = DMatrix::zeros(n_bins, k);
    for b in 0..n_bins {
        let means: Vec<f64> = (0..k)
            .map(|j| if reached[b] > 0 { sums[(b, j)] / reached[b] as f64 } else { 0.0 })
            .collect();
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = means.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for j in 0..k {
            out[(b, j)] = exps[j] / total;
        }
    }
    Ok(out)
}

/// A trace's paragraph count and its `(paragraph, persona)` labels.
pub struct LabelledTrace<'a> {
    pub num_paragraphs: usize,
    pub labels: &'a [(usize, usize)],
}

/// `n_b×K` share of each persona among the labels falling in each bin;
/// bins without labels are all zero.
pub fn label_profile(traces: &[LabelledTrace<'_>], num_personas: usize, n_bins: usize) -> Result<DMatrix<f64>> {
    if n_bins == 0 {
        return Err(PolylogueError::Config("n_bins must be >= 1".into()));
    }
    let mut counts = DMatrix::<f64>::zeros(n_bins, num_personas);
    for tr in traces {
        for &(p, k) in tr.labels {
            if p >= tr.num_paragraphs || k >= num_personas {
                return Err(PolylogueError::Validation(format!(
                    "label ({p}, {k}) out of range for {} paragraphs and K={num_personas}",
                    tr.num_paragraphs
                )));
            }
            counts[(paragraph_bin(p, tr.num_paragraphs, n_bins), k)] += 1.0;
        }
    }
    for mut row in counts.row_iter_mut() {
        let total = row.sum();
        if total > 0.0 {
            row /= total;
        }
    }
    Ok(counts)
}

/// Long-format CSV: `progress_bin,persona,<value_column>`.
pub fn profile_csv(profile: &DMatrix<f64>, names: &[String], value_column: &str) -> Result<Vec<u8>> {
    if names.len() != profile.ncols() {
        return Err(PolylogueError::Dimension(format!("{} names for {} personas", names.len(), profile.ncols())));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| PolylogueError::Validation(e.to_string());
    w.write_record(["progress_bin", "persona", value_column]).map_err(csv_err)?;
    for b in 0..profile.nrows() {
        for (j, name) in names.iter().enumerate() {
            w.write_record([b.to_string(), name.clone(), profile[(b, j)].to_string()])
                .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| PolylogueError::Validation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions() {
        let m = PolylogueMatrix {
            trace_id: "t".into(),
            scores: DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0]),
            whitened: false,
        };
        let p = similarity_profile(&[m], 2).unwrap();
        for row in p.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        // first half favours persona 0, second half persona 1
        assert!((p[(0, 0)] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
        assert!(p[(1, 1)] > p[(1, 0)]);
        // more bins than tokens: unreached bins are uniform
        let short = PolylogueMatrix { trace_id: "s".into(), scores: DMatrix::from_element(2, 1, 3.0), whitened: false };
        let q = similarity_profile(&[short], 3).unwrap();
        assert_eq!(q[(2, 0)], 0.5);
    }

    #[test]
    fn label_fractions() {
        let labels = [(0, 1), (1, 1), (2, 0), (3, 2)];
        let p = label_profile(&[LabelledTrace { num_paragraphs: 4, labels: &labels }], 3, 2).unwrap();
        assert_eq!(p.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert_eq!(p.row(1).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0, 0.5]);
        assert!(label_profile(&[LabelledTrace { num_paragraphs: 2, labels: &labels }], 3, 2).is_err());
    }

    #[test]
    fn csv_shape() {
        let p = DMatrix::from_row_slice(1, 2, &[0.25, 0.75]);
        let text = String::from_utf8(profile_csv(&p, &["a".into(), "b".into()], "value").unwrap()).unwrap();
        assert_eq!(text, "progress_bin,persona,value\n0,a,0.25\n0,b,0.75\n");
    }
}
