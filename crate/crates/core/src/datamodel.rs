//! Record schemas, ingestion, validation, and table persistence.
//!
//! Generation logs are line-delimited JSON, one record per line, with field
//! names exactly as the types below declare them. Unknown fields are ignored
//! with a counted warning so newer logs stay readable. All log-probabilities
//! are natural logs; every entropy and NLL downstream is therefore in nats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorers::Method;

/// Tolerance used when validating similarity-matrix symmetry and diagonal.
const SIM_TOL: f64 = 1e-9;

/// The greedy/beam decoded output sequence of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSequence {
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

/// One sampled output sequence together with its optional per-sample context
/// (semantic cluster id, latent embedding, token relevance weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGeneration {
    pub text: String,
    pub token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_relevance: Option<Vec<f64>>,
}

/// Pairwise sentence similarity between the sampled sequences of one record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_sim: Option<Vec<Vec<f64>>>,
}

impl SimilarityData {
    pub fn is_empty(&self) -> bool {
        self.sentence_sim.is_none()
    }
}

/// One prompt with its decoded answer, sampled sequences, and risk labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub dataset: String,
    pub model: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default)]
    pub references: Vec<String>,
    pub answer: AnswerSequence,
    #[serde(default)]
    pub samples: Vec<SampleGeneration>,
    #[serde(default, skip_serializing_if = "SimilarityData::is_empty")]
    pub similarity: SimilarityData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_true_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_correct: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_strength: Option<f64>,
    pub sampling_temperature: f64,
}

/// Top-level field names a record line may carry; anything else is warned about.
const KNOWN_FIELDS: &[&str] = &[
    "id",
    "dataset",
    "model",
    "question",
    "context",
    "references",
    "answer",
    "samples",
    "similarity",
    "p_true_logprob",
    "ood_label",
    "exact_correct",
    "perturbation_strength",
    "sampling_temperature",
];

impl GenerationRecord {
    /// Number of sampled sequences.
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// Embedding dimensionality shared by the record's samples, if all samples
    /// that carry embeddings agree on it.
    pub fn embedding_dim(&self) -> Option<usize> {
        let mut dim = None;
        for s in &self.samples {
            if let Some(e) = &s.embedding {
                match dim {
                    None => dim = Some(e.len()),
                    Some(d) if d != e.len() => return None,
                    _ => {}
                }
            }
        }
        dim
    }

    /// Checks every declared type invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| -> Result<()> {
            Err(Error::Validation {
                record: self.id.clone(),
                field: field.to_string(),
                msg,
            })
        };

        let temperature = self.sampling_temperature;
        if !temperature.is_finite() || temperature <= 0.0 {
            return fail(
                "sampling_temperature",
                format!("must be > 0, got {temperature}"),
            );
        }
        check_logprobs(&self.id, "answer.token_logprobs", &self.answer.token_logprobs)?;
        for (i, s) in self.samples.iter().enumerate() {
            let ctx = format!("samples[{i}].token_logprobs");
            check_logprobs(&self.id, &ctx, &s.token_logprobs)?;
            if let Some(rel) = &s.token_relevance {
                if rel.len() != s.token_logprobs.len() {
                    return fail(
                        &format!("samples[{i}].token_relevance"),
                        format!(
                            "length {} does not match token_logprobs length {}",
                            rel.len(),
                            s.token_logprobs.len()
                        ),
                    );
                }
                if let Some(r) = rel.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                    return fail(
                        &format!("samples[{i}].token_relevance"),
                        format!("value {r} outside [0,1]"),
                    );
                }
            }
            if let Some(e) = &s.embedding {
                if e.iter().any(|v| !v.is_finite()) {
                    return fail(&format!("samples[{i}].embedding"), "non-finite value".into());
                }
            }
        }
        // Embedding dimensionality must be uniform within a record.
        if self.samples.iter().any(|s| s.embedding.is_some()) && self.embedding_dim().is_none() {
            return fail("samples.embedding", "inconsistent dimensionality".into());
        }
        if let Some(sim) = &self.similarity.sentence_sim {
            let n = self.samples.len();
            if sim.len() != n || sim.iter().any(|row| row.len() != n) {
                return fail(
                    "similarity.sentence_sim",
                    format!("must be a square matrix of side {n}"),
                );
            }
            for (i, row) in sim.iter().enumerate() {
                if (row[i] - 1.0).abs() > SIM_TOL {
                    return fail(
                        "similarity.sentence_sim",
                        format!("diagonal entry [{i}][{i}] = {} is not 1", row[i]),
                    );
                }
                for (j, v) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(v) {
                        return fail(
                            "similarity.sentence_sim",
                            format!("entry [{i}][{j}] = {v} outside [0,1]"),
                        );
                    }
                    if (v - sim[j][i]).abs() > SIM_TOL {
                        return fail("similarity.sentence_sim", "matrix is not symmetric".into());
                    }
                }
            }
        }
        if let Some(p) = self.p_true_logprob {
            if p.is_nan() || p > 0.0 {
                return fail("p_true_logprob", format!("must be ≤ 0, got {p}"));
            }
        }
        for (field, v) in [("ood_label", self.ood_label), ("exact_correct", self.exact_correct)] {
            if let Some(v) = v {
                if v > 1 {
                    return fail(field, format!("must be 0 or 1, got {v}"));
                }
            }
        }
        if let Some(s) = self.perturbation_strength {
            if !(0.0..=1.0).contains(&s) {
                return fail("perturbation_strength", format!("must be in [0,1], got {s}"));
            }
        }
        Ok(())
    }
}

fn check_logprobs(record: &str, field: &str, lps: &[f64]) -> Result<()> {
    for lp in lps {
        // −inf is a representable floor; NaN and positives are not log-probs.
        if lp.is_nan() || *lp > 0.0 {
            return Err(Error::Validation {
                record: record.to_string(),
                field: field.to_string(),
                msg: format!("token log-probability {lp} must be ≤ 0"),
            });
        }
    }
    Ok(())
}

/// Records loaded from a log plus the non-fatal warnings collected on the way.
#[derive(Debug)]
pub struct LoadedLog {
    pub records: Vec<GenerationRecord>,
    pub warnings: Vec<String>,
}

/// Reads a line-delimited generation log, validating every record.
///
/// Order-preserving; blank lines are skipped with a warning, unknown fields
/// are ignored with a warning. Any malformed line or invariant violation
/// aborts the load.
pub fn load_records(path: impl AsRef<Path>) -> Result<LoadedLog> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut unknown_fields: BTreeSet<String> = BTreeSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            warnings.push(format!("{}:{lineno}: blank line skipped", path.display()));
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: e.to_string(),
            })?;
        if let Some(obj) = value.as_object() {
            for key in obj.keys() {
                if !KNOWN_FIELDS.contains(&key.as_str()) && unknown_fields.insert(key.clone()) {
                    warnings.push(format!(
                        "{}:{lineno}: unknown field '{key}' ignored",
                        path.display()
                    ));
                }
            }
        }
        let record: GenerationRecord =
            serde_json::from_value(value).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: e.to_string(),
            })?;
        record.validate()?;
        records.push(record);
    }
    Ok(LoadedLog { records, warnings })
}

/// Writes records as line-delimited JSON; inverse of [`load_records`].
pub fn write_records(records: &[GenerationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Numerical(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-record report of the fields a method needs but the record lacks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequirementReport {
    pub record_id: String,
    pub method: String,
    pub missing: Vec<String>,
}

impl RequirementReport {
    pub fn is_satisfied(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Lists what `method` is missing on `record`; an empty report means the
/// record can be scored. Unknown method ids are a configuration error.
pub fn check_method_requirements(
    record: &GenerationRecord,
    method: &str,
) -> Result<RequirementReport> {
    let parsed = Method::from_str(method)?;
    Ok(RequirementReport {
        record_id: record.id.clone(),
        method: method.to_string(),
        missing: parsed.missing_requirements(record),
    })
}

// ---------------------------------------------------------------------------
// Generic comma-separated tables
// ---------------------------------------------------------------------------

/// A plain comma-separated table with a header; the persistence format for
/// scores, correctness columns, experiment results, Elo outputs and report
/// matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Shape(format!(
                "row has {} cells, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Index of a named column.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingData(format!("table has no column '{name}'")))
    }
}

/// Writes a table as comma-separated text with deterministic column order.
///
/// Cells must not contain commas or line breaks; the format is deliberately
/// quote-free so files round-trip byte-for-byte through [`read_table`].
pub fn write_table(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in std::iter::once(&table.header).chain(table.rows.iter()) {
        for cell in row {
            if cell.contains(',') || cell.contains('\n') || cell.contains('\r') {
                return Err(Error::Validation {
                    record: String::new(),
                    field: "cell".into(),
                    msg: format!("cell '{cell}' contains a separator character"),
                });
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`write_table`].
pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.split(',').map(str::to_string).collect::<Vec<_>>(),
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "empty table file".into(),
            })
        }
    };
    let mut table = Table::new(header);
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != table.header.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!(
                    "row has {} cells, header has {}",
                    row.len(),
                    table.header.len()
                ),
            });
        }
        table.rows.push(row);
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Experiment results
// ---------------------------------------------------------------------------

/// Which risk indicator an experiment correlated uncertainty against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Indicator {
    Sp,
    SpMoji,
    Ood,
    Perturb,
}

impl Indicator {
    /// Closed interval of admissible ξ values for this indicator.
    pub fn codomain(&self) -> (f64, f64) {
        match self {
            Indicator::Sp | Indicator::SpMoji | Indicator::Ood => (0.0, 1.0),
            Indicator::Perturb => (-1.0, 1.0),
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Indicator::Sp => "sp",
            Indicator::SpMoji => "sp_moji",
            Indicator::Ood => "ood",
            Indicator::Perturb => "perturb",
        };
        f.write_str(s)
    }
}

impl FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sp" => Ok(Indicator::Sp),
            "sp_moji" | "sp-moji" => Ok(Indicator::SpMoji),
            "ood" => Ok(Indicator::Ood),
            "perturb" => Ok(Indicator::Perturb),
            other => Err(Error::Config(format!("unknown indicator '{other}'"))),
        }
    }
}

/// One cell of the experiment grid: the performance ξ of a method on a
/// (dataset, model, indicator) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub method: String,
    pub dataset: String,
    pub model: String,
    pub indicator: Indicator,
    pub value: f64,
    pub partition_tags: BTreeSet<String>,
}

impl ExperimentResult {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.indicator.codomain();
        if !(self.value >= lo && self.value <= hi) {
            return Err(Error::Validation {
                record: self.method.clone(),
                field: "value".into(),
                msg: format!(
                    "{} outside the {} codomain [{lo},{hi}]",
                    self.value, self.indicator
                ),
            });
        }
        for tag in &self.partition_tags {
            if tag.contains('|') || tag.contains(',') {
                return Err(Error::Validation {
                    record: self.method.clone(),
                    field: "partition_tags".into(),
                    msg: format!("tag '{tag}' contains a separator character"),
                });
            }
        }
        Ok(())
    }
}

/// Header of the results table format.
pub const RESULTS_HEADER: [&str; 6] = [
    "method",
    "dataset",
    "model",
    "indicator",
    "value",
    "partition_tags",
];

/// Converts results to the documented `method,dataset,model,indicator,value,partition_tags`
/// table (tags `|`-joined).
pub fn results_to_table(results: &[ExperimentResult]) -> Result<Table> {
    let mut table = Table::new(RESULTS_HEADER.iter().map(|s| s.to_string()).collect());
    for r in results {
        r.validate()?;
        let tags = r.partition_tags.iter().cloned().collect::<Vec<_>>().join("|");
        table.push_row(vec![
            r.method.clone(),
            r.dataset.clone(),
            r.model.clone(),
            r.indicator.to_string(),
            r.value.to_string(),
            tags,
        ])?;
    }
    Ok(table)
}

/// Parses a results table back into [`ExperimentResult`] rows.
pub fn results_from_table(table: &Table) -> Result<Vec<ExperimentResult>> {
    if table.header != RESULTS_HEADER {
        return Err(Error::Shape(format!(
            "unexpected results header {:?}",
            table.header
        )));
    }
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let value: f64 = row[4]
            .parse()
            .map_err(|_| Error::Config(format!("bad ξ value '{}'", row[4])))?;
        let tags = if row[5].is_empty() {
            BTreeSet::new()
        } else {
            row[5].split('|').map(str::to_string).collect()
        };
        let result = ExperimentResult {
            method: row[0].clone(),
            dataset: row[1].clone(),
            model: row[2].clone(),
            indicator: row[3].parse()?,
            value,
            partition_tags: tags,
        };
        result.validate()?;
        out.push(result);
    }
    Ok(out)
}

/// Groups records by (dataset, model), preserving record order inside groups.
pub fn group_by_dataset_model(
    records: &[GenerationRecord],
) -> BTreeMap<(String, String), Vec<&GenerationRecord>> {
    let mut groups: BTreeMap<(String, String), Vec<&GenerationRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.dataset.clone(), r.model.clone()))
            .or_default()
            .push(r);
    }
    groups
}
