//! Approximate and exact correctness functions plus judge-verdict aggregation.
//!
//! N-gram metrics tokenize by lowercasing, splitting on whitespace, and
//! stripping non-alphanumeric characters from token boundaries; that one
//! explicit rule keeps agreement matrices reproducible across runs. Scores
//! binarize at a threshold `d` with ties counting as correct. A legacy mode
//! reproduces the widely deployed implementation artifact of returning zero
//! whenever either side is shorter than the n-gram size.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::datamodel::Table;
use crate::error::{Error, Result};

/// Which correctness function a column was produced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectnessKind {
    RougeN,
    RougeL,
    Bleu,
    Exact,
}

/// Parameters θ_c of an n-gram correctness column.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessConfig {
    pub kind: CorrectnessKind,
    /// n-gram order; required for `RougeN`, the maximum order for `Bleu`.
    pub n: Option<usize>,
    /// Binarization threshold d.
    pub threshold: f64,
    /// Reproduce the short-answer-returns-zero artifact.
    pub legacy_short_zero: bool,
}

impl CorrectnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == CorrectnessKind::RougeN && self.n.is_none() {
            return Err(Error::Config("rouge_n requires an n-gram order".into()));
        }
        if let Some(n) = self.n {
            if n < 1 {
                return Err(Error::Config("n-gram order must be ≥ 1".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must be in [0,1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Canonical column name, e.g. `rouge_1@0.5`, `bleu_4@0.3+legacy`, `exact`.
    pub fn column_name(&self) -> String {
        let base = match self.kind {
            CorrectnessKind::RougeN => format!("rouge_{}", self.n.unwrap_or(0)),
            CorrectnessKind::RougeL => "rouge_l".to_string(),
            CorrectnessKind::Bleu => format!("bleu_{}", self.n.unwrap_or(4)),
            CorrectnessKind::Exact => return "exact".to_string(),
        };
        let legacy = if self.legacy_short_zero { "+legacy" } else { "" };
        format!("{base}@{}{legacy}", self.threshold)
    }
}

impl fmt::Display for CorrectnessConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.column_name())
    }
}

impl FromStr for CorrectnessConfig {
    type Err = Error;

    /// Parses column specs of the form `exact`, `rouge_1@0.5`, `rouge_l@0.5`,
    /// `bleu_4@0.3`, optionally suffixed `+legacy`.
    fn from_str(s: &str) -> Result<Self> {
        let (body, legacy) = match s.strip_suffix("+legacy") {
            Some(b) => (b, true),
            None => (s, false),
        };
        if body == "exact" {
            if legacy {
                return Err(Error::Config("exact has no legacy mode".into()));
            }
            return Ok(CorrectnessConfig {
                kind: CorrectnessKind::Exact,
                n: None,
                threshold: 0.5,
                legacy_short_zero: false,
            });
        }
        let (name, threshold) = match body.split_once('@') {
            Some((name, d)) => {
                let d: f64 = d
                    .parse()
                    .map_err(|_| Error::Config(format!("bad threshold in '{s}'")))?;
                (name, d)
            }
            None => (body, 0.5),
        };
        let config = if name == "rouge_l" {
            CorrectnessConfig {
                kind: CorrectnessKind::RougeL,
                n: None,
                threshold,
                legacy_short_zero: legacy,
            }
        } else if let Some(n) = name.strip_prefix("rouge_") {
            CorrectnessConfig {
                kind: CorrectnessKind::RougeN,
                n: Some(n.parse().map_err(|_| {
                    Error::Config(format!("bad n-gram order in '{s}'"))
                })?),
                threshold,
                legacy_short_zero: legacy,
            }
        } else if name == "bleu" {
            CorrectnessConfig {
                kind: CorrectnessKind::Bleu,
                n: Some(4),
                threshold,
                legacy_short_zero: legacy,
            }
        } else if let Some(n) = name.strip_prefix("bleu_") {
            CorrectnessConfig {
                kind: CorrectnessKind::Bleu,
                n: Some(n.parse().map_err(|_| {
                    Error::Config(format!("bad n-gram order in '{s}'"))
                })?),
                threshold,
                legacy_short_zero: legacy,
            }
        } else {
            return Err(Error::Config(format!("unknown correctness spec '{s}'")));
        };
        config.validate()?;
        Ok(config)
    }
}

/// Lowercases, splits on whitespace, and strips punctuation from token edges.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// ROUGE-N against a single reference: F1 of the n-gram multiset overlap.
pub fn rouge_n(candidate: &str, reference: &str, n: usize, legacy_short_zero: bool) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if legacy_short_zero && (cand.len() < n || refr.len() < n) {
        return 0.0;
    }
    let cand_grams = ngram_counts(&cand, n);
    let ref_grams = ngram_counts(&refr, n);
    let cand_total: usize = cand_grams.values().sum();
    let ref_total: usize = ref_grams.values().sum();
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let overlap: usize = cand_grams
        .iter()
        .map(|(gram, c)| ref_grams.get(gram).copied().unwrap_or(0).min(*c))
        .sum();
    f1(
        overlap as f64 / cand_total as f64,
        overlap as f64 / ref_total as f64,
    )
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L against a single reference: LCS-based F1 over tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&cand, &refr) as f64;
    f1(lcs / cand.len() as f64, lcs / refr.len() as f64)
}

/// BLEU with modified n-gram precision up to `max_n` and a brevity penalty.
///
/// Multiple references clip counts by the per-gram maximum and use the
/// closest reference length (shorter on ties) for the penalty. In legacy
/// mode a candidate, or reference set, shorter than `max_n` scores zero.
pub fn bleu(candidate: &str, references: &[String], max_n: usize, legacy_short_zero: bool) -> f64 {
    if max_n < 1 {
        return 0.0;
    }
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    if cand.is_empty() || refs.iter().all(|r| r.is_empty()) {
        return 0.0;
    }
    if legacy_short_zero && (cand.len() < max_n || refs.iter().all(|r| r.len() < max_n)) {
        return 0.0;
    }
    let mut log_precision_sum = 0.0;
    for n in 1..=max_n {
        let cand_grams = ngram_counts(&cand, n);
        let total: usize = cand_grams.values().sum();
        if total == 0 {
            return 0.0;
        }
        let ref_grams: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let mut clipped = 0usize;
        for (gram, count) in &cand_grams {
            let max_ref = ref_grams
                .iter()
                .map(|m| m.get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += (*count).min(max_ref);
        }
        if clipped == 0 {
            return 0.0;
        }
        log_precision_sum += (clipped as f64 / total as f64).ln();
    }
    let c = cand.len() as f64;
    // Effective reference length: closest to the candidate, shorter on ties.
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|len| {
            let diff = (*len as i64 - c as i64).abs();
            (diff, *len)
        })
        .unwrap_or(0) as f64;
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    brevity * (log_precision_sum / max_n as f64).exp()
}

/// 1 iff `score` ≥ `d`; ties at the threshold count as correct.
pub fn binarize(score: f64, d: f64) -> u8 {
    u8::from(score >= d)
}

/// Mean over the non-null judge verdicts of one record.
pub fn moji_mean(verdicts: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = verdicts.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::MissingData(
            "no non-null verdicts to average".into(),
        ));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Binary entropy of a MoJI mean, in nats; 0·ln 0 is taken as 0.
pub fn moji_entropy(mean: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&mean));
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(mean) + term(1.0 - mean)
}

/// Per-record correctness columns; values are in {0,1}, fractional [0,1]
/// (MoJI means), or null.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrectnessTable {
    pub record_ids: Vec<String>,
    /// Column name → per-record values, aligned with `record_ids`.
    pub columns: Vec<(String, Vec<Option<f64>>)>,
}

impl CorrectnessTable {
    pub fn new(record_ids: Vec<String>) -> Self {
        CorrectnessTable {
            record_ids,
            columns: Vec::new(),
        }
    }

    pub fn add_column(&mut self, name: String, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.record_ids.len() {
            return Err(Error::Shape(format!(
                "column '{name}' has {} values for {} records",
                values.len(),
                self.record_ids.len()
            )));
        }
        if self.columns.iter().any(|(existing, _)| *existing == name) {
            return Err(Error::Config(format!("duplicate column '{name}'")));
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::MissingData(format!("no correctness column '{name}'")))
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Row-wise values of the named columns for one record index.
    fn row_values(&self, columns: &[String], idx: usize) -> Result<Vec<Option<f64>>> {
        columns
            .iter()
            .map(|c| Ok(self.column(c)?[idx]))
            .collect()
    }

    /// Record ids whose MoJI entropy over `columns` is at or below `threshold`.
    ///
    /// Records with no non-null verdict have no MoJI mean and are retained.
    pub fn filter_by_entropy(&self, columns: &[String], threshold: f64) -> Result<Vec<String>> {
        let mut keep = Vec::new();
        for (idx, id) in self.record_ids.iter().enumerate() {
            let row = self.row_values(columns, idx)?;
            match moji_mean(&row) {
                Ok(mean) => {
                    if moji_entropy(mean) <= threshold {
                        keep.push(id.clone());
                    }
                }
                Err(_) => keep.push(id.clone()),
            }
        }
        Ok(keep)
    }

    /// Serializes to the `record_id,<column>...` table with `null` markers.
    pub fn to_table(&self) -> Result<Table> {
        let mut header = vec!["record_id".to_string()];
        header.extend(self.column_names());
        let mut table = Table::new(header);
        for (idx, id) in self.record_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            for (_, values) in &self.columns {
                row.push(match values[idx] {
                    Some(v) => v.to_string(),
                    None => "null".to_string(),
                });
            }
            table.push_row(row)?;
        }
        Ok(table)
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        if table.header.first().map(String::as_str) != Some("record_id") {
            return Err(Error::Shape(
                "correctness table must start with a record_id column".into(),
            ));
        }
        let mut out = CorrectnessTable::new(
            table.rows.iter().map(|r| r[0].clone()).collect(),
        );
        for (col_idx, name) in table.header.iter().enumerate().skip(1) {
            let mut values = Vec::with_capacity(table.rows.len());
            for row in &table.rows {
                let cell = &row[col_idx];
                if cell == "null" || cell.is_empty() {
                    values.push(None);
                } else {
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::Config(format!("bad correctness value '{cell}' in '{name}'"))
                    })?;
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Validation {
                            record: row[0].clone(),
                            field: name.clone(),
                            msg: format!("correctness value {v} outside [0,1]"),
                        });
                    }
                    values.push(Some(v));
                }
            }
            out.add_column(name.clone(), values)?;
        }
        Ok(out)
    }
}

/// Best n-gram score of a candidate over all references (max rule).
pub fn score_against_references(
    config: &CorrectnessConfig,
    candidate: &str,
    references: &[String],
) -> f64 {
    match config.kind {
        CorrectnessKind::RougeN => references
            .iter()
            .map(|r| rouge_n(candidate, r, config.n.unwrap_or(1), config.legacy_short_zero))
            .fold(0.0, f64::max),
        CorrectnessKind::RougeL => references
            .iter()
            .map(|r| rouge_l(candidate, r))
            .fold(0.0, f64::max),
        CorrectnessKind::Bleu => bleu(
            candidate,
            references,
            config.n.unwrap_or(4),
            config.legacy_short_zero,
        ),
        CorrectnessKind::Exact => 0.0,
    }
}
