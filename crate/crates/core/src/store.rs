//! Data model and on-disk formats.
//!
//! A trace bundle is a directory holding `meta.json`, `activations.bin`
//! (row-major `T×d` little-endian `f32`) and `tokens.jsonl`. A persona bank
//! bundle holds `bank.json` and `vectors.bin` (`K×d`, same encoding). A
//! steering schedule is a single `schedule.json`. Feature matrices are CSV
//! files with a `trace_id,label,f000,...` header.
//!
//! Every writer is deterministic and goes through [`write_atomic`], so a
//! reader never observes a half-written file.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PolylogueError, Result};

pub const TRACE_MAGIC: &str = "PLYG1";
pub const BANK_MAGIC: &str = "PLYB1";
pub const SCHEDULE_MAGIC: &str = "PLYS1";
pub const DTYPE_F32LE: &str = "f32le";

pub const TRACE_META_FILE: &str = "meta.json";
pub const TRACE_ACTIVATIONS_FILE: &str = "activations.bin";
pub const TRACE_TOKENS_FILE: &str = "tokens.jsonl";
pub const BANK_META_FILE: &str = "bank.json";
pub const BANK_VECTORS_FILE: &str = "vectors.bin";

/// Rows with a Euclidean norm below this are degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// One response's hidden states at a monitored layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    trace_id: String,
    model_id: String,
    layer: usize,
    hidden_size: usize,
    response_start: usize,
    activations: Vec<f32>,
    tokens: Vec<String>,
    correct: Option<bool>,
    paragraph_labels: Option<Vec<(usize, usize)>>,
}

impl ActivationTrace {
    /// Builds a trace from a row-major `T×d` activation buffer and `T` token
    /// texts. `response_start` starts at 0, with no label and no paragraph
    /// labels.
    pub fn new(
        trace_id: impl Into<String>,
        model_id: impl Into<String>,
        layer: usize,
        hidden_size: usize,
        activations: Vec<f32>,
        tokens: Vec<String>,
    ) -> Result<Self> {
        if hidden_size == 0 {
            return Err(PolylogueError::Dimension("hidden_size must be >= 1".into()));
        }
        if tokens.is_empty() {
            return Err(PolylogueError::Dimension("a trace needs at least one token".into()));
        }
        if activations.len() != tokens.len() * hidden_size {
            return Err(PolylogueError::Dimension(format!(
                "activations hold {} values but T={} and d={} require {}",
                activations.len(),
                tokens.len(),
                hidden_size,
                tokens.len() * hidden_size
            )));
        }
        Ok(Self {
            trace_id: trace_id.into(),
            model_id: model_id.into(),
            layer,
            hidden_size,
            response_start: 0,
            activations,
            tokens,
            correct: None,
            paragraph_labels: None,
        })
    }

    pub fn with_response_start(mut self, response_start: usize) -> Result<Self> {
        if response_start >= self.num_tokens() {
            return Err(PolylogueError::Validation(format!(
                "response_start {response_start} outside [0, {})",
                self.num_tokens()
            )));
        }
        self.response_start = response_start;
        Ok(self)
    }

    pub fn with_correct(mut self, correct: Option<bool>) -> Self {
        self.correct = correct;
        self
    }

    pub fn with_paragraph_labels(mut self, labels: Option<Vec<(usize, usize)>>) -> Result<Self> {
        if let Some(labels) = &labels {
            let mut seen = HashSet::new();
            for &(paragraph, _) in labels {
                if !seen.insert(paragraph) {
                    return Err(PolylogueError::Validation(format!(
                        "paragraph {paragraph} labelled twice in trace {}",
                        self.trace_id
                    )));
                }
            }
        }
        self.paragraph_labels = labels;
        Ok(self)
    }

    /// Same trace with a different trace id.
    pub fn renamed(mut self, trace_id: impl Into<String>) -> Self {
        self.trace_id = trace_id.into();
        self
    }

    /// Same metadata and tokens with a replacement activation buffer.
    pub fn with_activations(mut self, activations: Vec<f32>) -> Result<Self> {
        if activations.len() != self.activations.len() {
            return Err(PolylogueError::Dimension(format!(
                "replacement buffer holds {} values, expected {}",
                activations.len(),
                self.activations.len()
            )));
        }
        self.activations = activations;
        Ok(self)
    }

    pub fn trace_id(&self) -> &str {
        &self.trace_id
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn response_start(&self) -> usize {
        self.response_start
    }

    pub fn activations(&self) -> &[f32] {
        &self.activations
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.activations[t * self.hidden_size..(t + 1) * self.hidden_size]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.activations.chunks_exact(self.hidden_size)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn correct(&self) -> Option<bool> {
        self.correct
    }

    pub fn paragraph_labels(&self) -> Option<&[(usize, usize)]> {
        self.paragraph_labels.as_deref()
    }

    /// Bitwise equality, including NaN payloads in the activations.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.trace_id == other.trace_id
            && self.model_id == other.model_id
            && self.layer == other.layer
            && self.hidden_size == other.hidden_size
            && self.response_start == other.response_start
            && self.tokens == other.tokens
            && self.correct == other.correct
            && self.paragraph_labels == other.paragraph_labels
            && self.activations.len() == other.activations.len()
            && self
                .activations
                .iter()
                .zip(&other.activations)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// The ordered persona directions at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaBank {
    layer: usize,
    hidden_size: usize,
    names: Vec<String>,
    vectors: Vec<f32>,
    default_alpha: f64,
    provenance: String,
}

impl PersonaBank {
    pub fn new(
        layer: usize,
        names: Vec<String>,
        vectors: Vec<f32>,
        hidden_size: usize,
        default_alpha: f64,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(PolylogueError::Dimension("a bank needs at least one persona".into()));
        }
        if hidden_size == 0 {
            return Err(PolylogueError::Dimension("hidden_size must be >= 1".into()));
        }
        if vectors.len() != names.len() * hidden_size {
            return Err(PolylogueError::Dimension(format!(
                "vectors hold {} values but K={} and d={hidden_size} require {}",
                vectors.len(),
                names.len(),
                names.len() * hidden_size
            )));
        }
        let unique: HashSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(PolylogueError::Consistency("persona names must be unique".into()));
        }
        if !(default_alpha.is_finite() && default_alpha > 0.0) {
            return Err(PolylogueError::Validation(format!(
                "default_alpha must be a positive finite number, got {default_alpha}"
            )));
        }
        Ok(Self {
            layer,
            hidden_size,
            names,
            vectors,
            default_alpha,
            provenance: provenance.into(),
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn num_personas(&self) -> usize {
        self.names.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, k: usize) -> &[f32] {
        &self.vectors[k * self.hidden_size..(k + 1) * self.hidden_size]
    }

    pub fn default_alpha(&self) -> f64 {
        self.default_alpha
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn norm(&self, k: usize) -> f64 {
        self.vector(k)
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_degenerate(&self, k: usize) -> bool {
        self.norm(k) < DEGENERATE_NORM
    }

    pub fn degenerate_rows(&self) -> Vec<usize> {
        (0..self.num_personas()).filter(|&k| self.is_degenerate(k)).collect()
    }

    /// Errors on the first degenerate row.
    pub fn ensure_non_degenerate(&self) -> Result<()> {
        match self.degenerate_rows().first() {
            Some(&index) => Err(PolylogueError::DegeneratePersona {
                index,
                name: self.names[index].clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Direction of a steering rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SteerDirection {
    Amplify,
    Suppress,
}

impl SteerDirection {
    pub fn sign(self) -> f64 {
        match self {
            Self::Amplify => 1.0,
            Self::Suppress => -1.0,
        }
    }

    pub fn from_sign(value: i64) -> Result<Self> {
        match value {
            1 => Ok(Self::Amplify),
            -1 => Ok(Self::Suppress),
            other => Err(PolylogueError::Validation(format!(
                "rule direction must be -1 or +1, got {other}"
            ))),
        }
    }

    fn as_i64(self) -> i64 {
        match self {
            Self::Amplify => 1,
            Self::Suppress => -1,
        }
    }
}

/// Steer `persona` in `direction` for 1-based paragraphs `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SteeringRule {
    pub persona: usize,
    pub start_paragraph: usize,
    pub end_paragraph: usize,
    pub direction: SteerDirection,
}

impl SteeringRule {
    pub fn new(
        persona: usize,
        start_paragraph: usize,
        end_paragraph: usize,
        direction: SteerDirection,
    ) -> Result<Self> {
        if start_paragraph < 1 || start_paragraph > end_paragraph {
            return Err(PolylogueError::Validation(format!(
                "rule range {start_paragraph}..={end_paragraph} must satisfy 1 <= start <= end"
            )));
        }
        Ok(Self {
            persona,
            start_paragraph,
            end_paragraph,
            direction,
        })
    }

    pub fn covers(&self, paragraph: usize) -> bool {
        (self.start_paragraph..=self.end_paragraph).contains(&paragraph)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSchedule {
    pub layer: usize,
    pub alpha: f64,
    pub rules: Vec<SteeringRule>,
}

impl SteeringSchedule {
    pub fn new(layer: usize, alpha: f64, rules: Vec<SteeringRule>) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(PolylogueError::Validation(format!(
                "alpha must be a positive finite number, got {alpha}"
            )));
        }
        Ok(Self { layer, alpha, rules })
    }

    /// Checks every rule's persona index against the bank it will be used with.
    pub fn validate_against(&self, bank: &PersonaBank) -> Result<()> {
        for rule in &self.rules {
            if rule.persona >= bank.num_personas() {
                return Err(PolylogueError::Validation(format!(
                    "rule persona {} out of range for a bank with K={}",
                    rule.persona,
                    bank.num_personas()
                )));
            }
        }
        Ok(())
    }
}

/// One response's feature vector in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub trace_id: String,
    pub values: Vec<f64>,
    pub label: Option<bool>,
}

// ---------------------------------------------------------------------------
// Serialized shapes
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceMetaFile {
    magic: String,
    trace_id: String,
    model_id: String,
    layer: usize,
    hidden_size: usize,
    num_tokens: usize,
    response_start: usize,
    dtype: String,
    correct: Option<bool>,
    paragraph_labels: Option<Vec<[usize; 2]>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenLine {
    t: usize,
    text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankMetaFile {
    magic: String,
    layer: usize,
    num_personas: usize,
    hidden_size: usize,
    names: Vec<String>,
    default_alpha: f64,
    provenance: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    magic: String,
    layer: usize,
    alpha: f64,
    rules: Vec<RuleFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    persona: usize,
    start: usize,
    end: usize,
    direction: i64,
}

// ---------------------------------------------------------------------------
// IO helpers
// ---------------------------------------------------------------------------

/// Writes `bytes` to a temp file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| PolylogueError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| PolylogueError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| PolylogueError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| PolylogueError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| PolylogueError::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_member(path)?;
    serde_json::from_slice(&bytes).map_err(|e| PolylogueError::format(path, e.to_string()))
}

fn read_member(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let member = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Err(PolylogueError::IncompleteBundle {
                path: path.parent().map(Path::to_path_buf).unwrap_or_default(),
                member,
            })
        }
        Err(e) => Err(PolylogueError::io(path, e)),
    }
}

/// Parses JSON after checking the `magic` field, so a foreign file reports
/// a format error rather than a schema mismatch.
fn parse_with_magic<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8], magic: &str) -> Result<T> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| PolylogueError::format(path, e.to_string()))?;
    match value.get("magic").and_then(|m| m.as_str()) {
        Some(m) if m == magic => {}
        Some(m) => {
            return Err(PolylogueError::format(
                path,
                format!("bad magic {m:?}, expected {magic:?}"),
            ))
        }
        None => return Err(PolylogueError::format(path, "missing magic")),
    }
    serde_json::from_value(value).map_err(|e| PolylogueError::format(path, e.to_string()))
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn f32_from_le_bytes(path: &Path, bytes: &[u8], rows: usize, cols: usize) -> Result<Vec<f32>> {
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| PolylogueError::Dimension("declared shape overflows".into()))?;
    if bytes.len() != expected {
        return Err(PolylogueError::Dimension(format!(
            "{} holds {} bytes; declared {rows}x{cols} f32 needs {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

// ---------------------------------------------------------------------------
// Trace bundles
// ---------------------------------------------------------------------------

pub fn persist_trace(trace: &ActivationTrace, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PolylogueError::io(dir, e))?;
    let meta = TraceMetaFile {
        magic: TRACE_MAGIC.into(),
        trace_id: trace.trace_id.clone(),
        model_id: trace.model_id.clone(),
        layer: trace.layer,
        hidden_size: trace.hidden_size,
        num_tokens: trace.num_tokens(),
        response_start: trace.response_start,
        dtype: DTYPE_F32LE.into(),
        correct: trace.correct,
        paragraph_labels: trace
            .paragraph_labels
            .as_ref()
            .map(|l| l.iter().map(|&(p, k)| [p, k]).collect()),
    };
    let mut tokens = Vec::new();
    for (t, text) in trace.tokens.iter().enumerate() {
        let line = TokenLine { t, text: text.clone() };
        serde_json::to_writer(&mut tokens, &line).expect("serializable token");
        tokens.push(b'\n');
    }
    write_atomic(&dir.join(TRACE_ACTIVATIONS_FILE), &f32_to_le_bytes(&trace.activations))?;
    write_atomic(&dir.join(TRACE_TOKENS_FILE), &tokens)?;
    // meta last: its presence marks a complete bundle
    write_json(&dir.join(TRACE_META_FILE), &meta)
}

pub fn load_trace(dir: &Path) -> Result<ActivationTrace> {
    let meta_path = dir.join(TRACE_META_FILE);
    let meta: TraceMetaFile = parse_with_magic(&meta_path, &read_member(&meta_path)?, TRACE_MAGIC)?;
    if meta.dtype != DTYPE_F32LE {
        return Err(PolylogueError::format(
            &meta_path,
            format!("unsupported dtype {:?}", meta.dtype),
        ));
    }
    let act_path = dir.join(TRACE_ACTIVATIONS_FILE);
    let tok_path = dir.join(TRACE_TOKENS_FILE);
    let act_bytes = read_member(&act_path)?;
    let tok_bytes = read_member(&tok_path)?;
    let activations = f32_from_le_bytes(&act_path, &act_bytes, meta.num_tokens, meta.hidden_size)?;

    let mut tokens = Vec::with_capacity(meta.num_tokens);
    for (i, line) in BufReader::new(tok_bytes.as_slice()).lines().enumerate() {
        let line = line.map_err(|e| PolylogueError::io(&tok_path, e))?;
        if line.is_empty() {
            continue;
        }
        let parsed: TokenLine =
            serde_json::from_str(&line).map_err(|e| PolylogueError::format(&tok_path, e.to_string()))?;
        if parsed.t != tokens.len() {
            return Err(PolylogueError::Consistency(format!(
                "{} line {}: token index {} out of sequence",
                tok_path.display(),
                i + 1,
                parsed.t
            )));
        }
        tokens.push(parsed.text);
    }
    if tokens.len() != meta.num_tokens {
        return Err(PolylogueError::Consistency(format!(
            "{} lists {} tokens, meta declares {}",
            tok_path.display(),
            tokens.len(),
            meta.num_tokens
        )));
    }

    ActivationTrace::new(
        meta.trace_id,
        meta.model_id,
        meta.layer,
        meta.hidden_size,
        activations,
        tokens,
    )?
    .with_response_start(meta.response_start)?
    .with_paragraph_labels(
        meta.paragraph_labels
            .map(|l| l.into_iter().map(|[p, k]| (p, k)).collect()),
    )
    .map(|t| t.with_correct(meta.correct))
}

/// Bundle directories under `root`: `root` itself when it holds a
/// `meta.json`, otherwise its immediate sub-directories that do, sorted by
/// name.
pub fn discover_bundles(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(TRACE_META_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = fs::read_dir(root).map_err(|e| PolylogueError::io(root, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| PolylogueError::io(root, e))?.path();
        if path.is_dir() && path.join(TRACE_META_FILE).is_file() {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}

// ---------------------------------------------------------------------------
// Bank bundles
// ---------------------------------------------------------------------------

pub fn persist_bank(bank: &PersonaBank, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PolylogueError::io(dir, e))?;
    let meta = BankMetaFile {
        magic: BANK_MAGIC.into(),
        layer: bank.layer,
        num_personas: bank.num_personas(),
        hidden_size: bank.hidden_size,
        names: bank.names.clone(),
        default_alpha: bank.default_alpha,
        provenance: bank.provenance.clone(),
    };
    write_atomic(&dir.join(BANK_VECTORS_FILE), &f32_to_le_bytes(&bank.vectors))?;
    write_json(&dir.join(BANK_META_FILE), &meta)
}

pub fn load_bank(dir: &Path) -> Result<PersonaBank> {
    let meta_path = dir.join(BANK_META_FILE);
    let meta: BankMetaFile = parse_with_magic(&meta_path, &read_member(&meta_path)?, BANK_MAGIC)?;
    if meta.names.len() != meta.num_personas {
        return Err(PolylogueError::Consistency(format!(
            "bank lists {} names but declares K={}",
            meta.names.len(),
            meta.num_personas
        )));
    }
    let vec_path = dir.join(BANK_VECTORS_FILE);
    let vectors = f32_from_le_bytes(
        &vec_path,
        &read_member(&vec_path)?,
        meta.num_personas,
        meta.hidden_size,
    )?;
    let bank = PersonaBank::new(
        meta.layer,
        meta.names,
        vectors,
        meta.hidden_size,
        meta.default_alpha,
        meta.provenance,
    )?;
    for k in bank.degenerate_rows() {
        log::warn!("{}: persona {k} ({}) is degenerate", dir.display(), bank.names[k]);
    }
    Ok(bank)
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

pub fn schedule_to_bytes(schedule: &SteeringSchedule) -> Vec<u8> {
    let file = ScheduleFile {
        magic: SCHEDULE_MAGIC.into(),
        layer: schedule.layer,
        alpha: schedule.alpha,
        rules: schedule
            .rules
            .iter()
            .map(|r| RuleFile {
                persona: r.persona,
                start: r.start_paragraph,
                end: r.end_paragraph,
                direction: r.direction.as_i64(),
            })
            .collect(),
    };
    to_json_bytes(&file)
}

pub fn persist_schedule(schedule: &SteeringSchedule, path: &Path) -> Result<()> {
    write_atomic(path, &schedule_to_bytes(schedule))
}

pub fn schedule_from_bytes(path: &Path, bytes: &[u8]) -> Result<SteeringSchedule> {
    let file: ScheduleFile = parse_with_magic(path, bytes, SCHEDULE_MAGIC)?;
    let rules = file
        .rules
        .into_iter()
        .map(|r| SteeringRule::new(r.persona, r.start, r.end, SteerDirection::from_sign(r.direction)?))
        .collect::<Result<Vec<_>>>()?;
    SteeringSchedule::new(file.layer, file.alpha, rules)
}

pub fn load_schedule(path: &Path) -> Result<SteeringSchedule> {
    schedule_from_bytes(path, &read_member(path)?)
}

// ---------------------------------------------------------------------------
// Feature CSV
// ---------------------------------------------------------------------------

pub fn feature_column_name(j: usize) -> String {
    format!("f{j:03}")
}

pub fn features_to_csv(rows: &[FeatureRow]) -> Result<Vec<u8>> {
    let width = rows.first().map_or(0, |r| r.values.len());
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["trace_id".to_string(), "label".to_string()];
    header.extend((0..width).map(feature_column_name));
    writer.write_record(&header).map_err(csv_err)?;
    for row in rows {
        if row.values.len() != width {
            return Err(PolylogueError::Dimension(format!(
                "feature row {} has {} values, expected {width}",
                row.trace_id,
                row.values.len()
            )));
        }
        let mut record = Vec::with_capacity(width + 2);
        record.push(row.trace_id.clone());
        record.push(match row.label {
            Some(true) => "1".into(),
            Some(false) => "0".into(),
            None => String::new(),
        });
        record.extend(row.values.iter().map(|v| v.to_string()));
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.into_inner().map_err(|e| PolylogueError::Validation(e.to_string()))
}

pub fn write_features_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    write_atomic(path, &features_to_csv(rows)?)
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let bytes = read_member(path)?;
    let mut reader = csv::ReaderBuilder::new().from_reader(bytes.as_slice());
    let header = reader
        .headers()
        .map_err(|e| PolylogueError::format(path, e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "trace_id" || &header[1] != "label" {
        return Err(PolylogueError::format(path, "header must start with trace_id,label"));
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != feature_column_name(j) {
            return Err(PolylogueError::format(
                path,
                format!("column {} is {name:?}, expected {:?}", j + 2, feature_column_name(j)),
            ));
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| PolylogueError::format(path, e.to_string()))?;
        let label = match &record[1] {
            "1" | "true" => Some(true),
            "0" | "false" => Some(false),
            "" => None,
            other => {
                return Err(PolylogueError::format(path, format!("bad label {other:?}")));
            }
        };
        let values = record
            .iter()
            .skip(2)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| PolylogueError::format(path, format!("bad value {v:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            trace_id: record[0].to_string(),
            values,
            label,
        });
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> PolylogueError {
    PolylogueError::Validation(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> ActivationTrace {
        let tokens = vec!["Hello".to_string(), " world\n\n".into(), "ok \"q\"".into()];
        let acts = vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0, 7.0, 1e-30, f32::MAX];
        ActivationTrace::new("tr-1", "toy", 3, 3, acts, tokens)
            .unwrap()
            .with_response_start(1)
            .unwrap()
            .with_correct(Some(true))
            .with_paragraph_labels(Some(vec![(0, 2), (1, 7)]))
            .unwrap()
    }

    #[test]
    fn trace_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let trace = sample_trace();
        persist_trace(&trace, dir.path()).unwrap();
        let back = load_trace(dir.path()).unwrap();
        assert!(trace.bit_eq(&back));
    }

    #[test]
    fn nan_payload_survives() {
        let dir = tempfile::tempdir().unwrap();
        let nan = f32::from_bits(0x7fc0_1234);
        let trace = ActivationTrace::new("n", "m", 0, 1, vec![nan], vec!["x".into()]).unwrap();
        persist_trace(&trace, dir.path()).unwrap();
        let back = load_trace(dir.path()).unwrap();
        assert_eq!(back.activations()[0].to_bits(), 0x7fc0_1234);
    }

    #[test]
    fn short_payload_is_dimension_error() {
        let dir = tempfile::tempdir().unwrap();
        let trace = ActivationTrace::new("x", "m", 0, 4, vec![0.0; 8], vec!["a".into(), "b".into()]).unwrap();
        persist_trace(&trace, dir.path()).unwrap();
        fs::write(dir.path().join(TRACE_ACTIVATIONS_FILE), f32_to_le_bytes(&[0.0; 7])).unwrap();
        assert!(matches!(load_trace(dir.path()), Err(PolylogueError::Dimension(_))));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        persist_trace(&sample_trace(), dir.path()).unwrap();
        let meta = fs::read_to_string(dir.path().join(TRACE_META_FILE)).unwrap();
        fs::write(dir.path().join(TRACE_META_FILE), meta.replace("PLYG1", "XXXX")).unwrap();
        assert!(matches!(load_trace(dir.path()), Err(PolylogueError::Format { .. })));
    }

    #[test]
    fn missing_member_is_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        persist_trace(&sample_trace(), dir.path()).unwrap();
        fs::remove_file(dir.path().join(TRACE_TOKENS_FILE)).unwrap();
        match load_trace(dir.path()) {
            Err(PolylogueError::IncompleteBundle { member, .. }) => assert_eq!(member, TRACE_TOKENS_FILE),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn meta_keys_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        persist_trace(&sample_trace(), dir.path()).unwrap();
        let meta: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(TRACE_META_FILE)).unwrap()).unwrap();
        let keys: Vec<&String> = meta.as_object().unwrap().keys().collect();
        let mut expected = vec![
            "magic",
            "trace_id",
            "model_id",
            "layer",
            "hidden_size",
            "num_tokens",
            "response_start",
            "dtype",
            "correct",
            "paragraph_labels",
        ];
        expected.sort();
        let mut keys: Vec<&str> = keys.iter().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, expected);
        assert_eq!(meta["paragraph_labels"], serde_json::json!([[0, 2], [1, 7]]));
    }

    #[test]
    fn duplicate_paragraph_label_rejected() {
        let t = ActivationTrace::new("x", "m", 0, 1, vec![0.0], vec!["a".into()]).unwrap();
        assert!(t.with_paragraph_labels(Some(vec![(0, 1), (0, 2)])).is_err());
    }

    #[test]
    fn response_start_must_lie_inside_trace() {
        let t = ActivationTrace::new("x", "m", 0, 1, vec![0.0, 1.0], vec!["a".into(), "b".into()]).unwrap();
        assert!(t.clone().with_response_start(1).is_ok());
        assert!(t.with_response_start(2).is_err());
    }

    fn bank_8x4() -> PersonaBank {
        let names = (0..8).map(|k| format!("p{k}")).collect();
        let mut vectors: Vec<f32> = (0..32).map(|i| i as f32 * 0.25 - 3.0).collect();
        vectors[8..12].fill(0.0);
        PersonaBank::new(5, names, vectors, 4, 2.0, "unit test").unwrap()
    }

    #[test]
    fn bank_round_trip_and_degenerate_flag() {
        let dir = tempfile::tempdir().unwrap();
        let bank = bank_8x4();
        persist_bank(&bank, dir.path()).unwrap();
        let back = load_bank(dir.path()).unwrap();
        assert_eq!(bank, back);
        assert_eq!(back.degenerate_rows(), vec![2]);
        assert!(matches!(
            back.ensure_non_degenerate(),
            Err(PolylogueError::DegeneratePersona { index: 2, .. })
        ));
    }

    #[test]
    fn bank_with_short_names_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        persist_bank(&bank_8x4(), dir.path()).unwrap();
        let path = dir.path().join(BANK_META_FILE);
        let mut meta: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        meta["names"].as_array_mut().unwrap().pop();
        fs::write(&path, serde_json::to_vec(&meta).unwrap()).unwrap();
        assert!(matches!(load_bank(dir.path()), Err(PolylogueError::Consistency(_))));
    }

    fn five_rule_schedule() -> SteeringSchedule {
        let rules = vec![
            SteeringRule::new(6, 20, 20, SteerDirection::Suppress).unwrap(),
            SteeringRule::new(0, 1, 1, SteerDirection::Amplify).unwrap(),
            SteeringRule::new(0, 8, 8, SteerDirection::Suppress).unwrap(),
            SteeringRule::new(2, 20, 20, SteerDirection::Amplify).unwrap(),
            SteeringRule::new(7, 19, 19, SteerDirection::Amplify).unwrap(),
        ];
        SteeringSchedule::new(23, 2.0, rules).unwrap()
    }

    #[test]
    fn schedule_round_trip_and_canonical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schedule.json");
        let schedule = five_rule_schedule();
        persist_schedule(&schedule, &path).unwrap();
        let first = fs::read(&path).unwrap();
        let back = load_schedule(&path).unwrap();
        assert_eq!(schedule, back);
        persist_schedule(&back, &path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
    }

    #[test]
    fn schedule_validation_errors() {
        assert!(SteeringRule::new(0, 4, 2, SteerDirection::Amplify).is_err());
        assert!(SteeringRule::new(0, 0, 2, SteerDirection::Amplify).is_err());
        assert!(SteerDirection::from_sign(0).is_err());
        let text = br#"{"magic":"PLYS1","layer":1,"alpha":1.0,"rules":[{"persona":0,"start":1,"end":2,"direction":0}]}"#;
        assert!(matches!(
            schedule_from_bytes(Path::new("s.json"), text),
            Err(PolylogueError::Validation(_))
        ));
        let text = br#"{"magic":"PLYS1","layer":1,"alpha":1.0,"rules":[{"persona":0,"start":4,"end":2,"direction":1}]}"#;
        assert!(matches!(
            schedule_from_bytes(Path::new("s.json"), text),
            Err(PolylogueError::Validation(_))
        ));
    }

    #[test]
    fn schedule_persona_checked_against_bank() {
        let bank = bank_8x4();
        let bad = SteeringSchedule::new(5, 1.0, vec![SteeringRule::new(8, 1, 1, SteerDirection::Amplify).unwrap()]).unwrap();
        assert!(bad.validate_against(&bank).is_err());
        assert!(five_rule_schedule().validate_against(&bank).is_ok());
    }

    #[test]
    fn feature_csv_header_and_round_trip() {
        let rows = vec![
            FeatureRow { trace_id: "a".into(), values: vec![0.1, -2.0, 1e-300], label: Some(true) },
            FeatureRow { trace_id: "b".into(), values: vec![0.0, 3.5, f64::MAX], label: None },
        ];
        let bytes = features_to_csv(&rows).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("trace_id,label,f000,f001,f002\n"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_features_csv(&path, &rows).unwrap();
        assert_eq!(read_features_csv(&path).unwrap(), rows);
    }
}
