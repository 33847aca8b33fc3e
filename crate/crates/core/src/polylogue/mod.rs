//! Per-step persona alignment and everything derived from it.

mod descriptors;
mod features;
mod paragraphs;
mod whitening;

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use descriptors::{descriptors, dominant_personas, DescriptorSet};
pub use features::{assemble_features, feature_dimension, feature_names, trace_features, FeatureConfig, DEFAULT_BINS};
pub use paragraphs::{bin_paragraphs, paragraph_bin, segment_paragraphs, segment_tokens, ParagraphSegmentation, SEPARATOR};
pub use whitening::{
    fit_whitening, fit_whitening_with_floor, load_whitening, persist_whitening, pool_rows, WhiteningModel, DEFAULT_LAMBDA,
};

use crate::error::{PolylogueError, Result};
use crate::store::{self, ActivationTrace, PersonaBank};

pub const POLYLOGUE_MAGIC: &str = "PLYP1";

/// The `K×T` alignment time series of one trace. Column `t` holds every
/// persona's score at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolylogueMatrix {
    pub trace_id: String,
    pub scores: DMatrix<f64>,
    pub whitened: bool,
}

impl PolylogueMatrix {
    pub fn num_personas(&self) -> usize {
        self.scores.nrows()
    }

    pub fn num_tokens(&self) -> usize {
        self.scores.ncols()
    }

    pub fn score(&self, k: usize, t: usize) -> f64 {
        self.scores[(k, t)]
    }

    pub fn step(&self, t: usize) -> DVector<f64> {
        self.scores.column(t).into_owned()
    }

    /// Mean score per persona over token range `range`; `None` when empty.
    pub fn mean_over(&self, range: std::ops::Range<usize>) -> Option<Vec<f64>> {
        if range.is_empty() {
            return None;
        }
        let n = range.len() as f64;
        Some(
            (0..self.num_personas())
                .map(|k| range.clone().map(|t| self.scores[(k, t)]).sum::<f64>() / n)
                .collect(),
        )
    }
}

/// `s[k,t] = <v_k, a_t> / |v_k|` for every persona and step.
pub fn project(trace: &ActivationTrace, bank: &PersonaBank) -> Result<PolylogueMatrix> {
    if trace.hidden_size() != bank.hidden_size() {
        return Err(PolylogueError::Dimension(format!(
            "trace {} has d={} but the bank has d={}",
            trace.trace_id(),
            trace.hidden_size(),
            bank.hidden_size()
        )));
    }
    bank.ensure_non_degenerate()?;
    let k_count = bank.num_personas();
    let norms: Vec<f64> = (0..k_count).map(|k| bank.norm(k)).collect();
    let mut scores = DMatrix::zeros(k_count, trace.num_tokens());
    for (t, row) in trace.rows().enumerate() {
        for k in 0..k_count {
            let dot: f64 = bank
                .vector(k)
                .iter()
                .zip(row)
                .map(|(&v, &a)| f64::from(v) * f64::from(a))
                .sum();
            scores[(k, t)] = dot / norms[k];
        }
    }
    Ok(PolylogueMatrix {
        trace_id: trace.trace_id().to_string(),
        scores,
        whitened: false,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixHeader {
    magic: String,
    trace_id: String,
    num_personas: usize,
    num_tokens: usize,
    whitened: bool,
    names: Vec<String>,
    dtype: String,
}

pub const MATRIX_HEADER_FILE: &str = "polylogue.json";
pub const MATRIX_DATA_FILE: &str = "polylogue.bin";

/// Writes `polylogue.json` plus `polylogue.bin` (row `k` is persona `k`'s
/// series, f32 little-endian) into `dir`.
pub fn export_matrix(matrix: &PolylogueMatrix, names: &[String], dir: &Path) -> Result<()> {
    if names.len() != matrix.num_personas() {
        return Err(PolylogueError::Dimension(format!(
            "{} names for {} personas",
            names.len(),
            matrix.num_personas()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| PolylogueError::io(dir, e))?;
    let mut data = Vec::with_capacity(matrix.scores.len());
    for k in 0..matrix.num_personas() {
        data.extend(matrix.scores.row(k).iter().map(|&v| v as f32));
    }
    store::write_atomic(&dir.join(MATRIX_DATA_FILE), &store::f32_to_le_bytes(&data))?;
    let header = MatrixHeader {
        magic: POLYLOGUE_MAGIC.into(),
        trace_id: matrix.trace_id.clone(),
        num_personas: matrix.num_personas(),
        num_tokens: matrix.num_tokens(),
        whitened: matrix.whitened,
        names: names.to_vec(),
        dtype: store::DTYPE_F32LE.into(),
    };
    store::write_json(&dir.join(MATRIX_HEADER_FILE), &header)
}

/// Reads a matrix written by [`export_matrix`] (values come back at f32
/// precision).
pub fn import_matrix(dir: &Path) -> Result<(PolylogueMatrix, Vec<String>)> {
    let header_path = dir.join(MATRIX_HEADER_FILE);
    let header: MatrixHeader = store::read_json(&header_path)?;
    if header.magic != POLYLOGUE_MAGIC {
        return Err(PolylogueError::format(&header_path, format!("bad magic {:?}", header.magic)));
    }
    let data_path = dir.join(MATRIX_DATA_FILE);
    let bytes = fs::read(&data_path).map_err(|e| PolylogueError::io(&data_path, e))?;
    let (k, t) = (header.num_personas, header.num_tokens);
    if bytes.len() != k * t * 4 {
        return Err(PolylogueError::Dimension(format!(
            "{} holds {} bytes, expected {}",
            data_path.display(),
            bytes.len(),
            k * t * 4
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let scores = DMatrix::from_row_slice(k, t, &values);
    Ok((
        PolylogueMatrix {
            trace_id: header.trace_id,
            scores,
            whitened: header.whitened,
        },
        header.names,
    ))
}
