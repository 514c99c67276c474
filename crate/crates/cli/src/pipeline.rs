//! Orchestration between loaded records, score tables, correctness columns,
//! and the risk-correlation objectives: everything the `eval` subcommand does
//! between reading its inputs and writing result rows.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use uqeval::correctness::{
    binarize, score_against_references, CorrectnessConfig, CorrectnessKind, CorrectnessTable,
};
use uqeval::datamodel::{ExperimentResult, GenerationRecord, Indicator};
use uqeval::error::{Error, Result};
use uqeval::perturbation::split_perturbed_id;
use uqeval::report::XiCell;
use uqeval::riskmetrics::{ood_auroc, xi_perturb, xi_sp, xi_sp_moji, CorKind};
use uqeval::scorers::ScoreRow;

/// Scores indexed as method → record id → score.
pub type ScoreIndex = BTreeMap<String, HashMap<String, f64>>;

pub fn index_scores(rows: &[ScoreRow]) -> ScoreIndex {
    let mut index: ScoreIndex = BTreeMap::new();
    for row in rows {
        index
            .entry(row.method.clone())
            .or_default()
            .insert(row.record_id.clone(), row.score);
    }
    index
}

/// Computes correctness columns directly from records for the given specs.
///
/// N-gram metrics store the raw score (binarization happens per column at
/// evaluation time); `exact` passes through the exact-correctness label.
/// Records that cannot be scored (no references, empty answer, missing label)
/// get null with a counted warning.
pub fn build_metric_columns(
    records: &[GenerationRecord],
    specs: &[CorrectnessConfig],
    table: &mut CorrectnessTable,
    warnings: &mut Vec<String>,
) -> Result<()> {
    for spec in specs {
        spec.validate()?;
        let mut values = Vec::with_capacity(records.len());
        let mut skipped = 0usize;
        for record in records {
            let value = match spec.kind {
                CorrectnessKind::Exact => record.exact_correct.map(f64::from),
                _ => {
                    if record.references.is_empty() || record.answer.text.is_empty() {
                        None
                    } else {
                        Some(score_against_references(
                            spec,
                            &record.answer.text,
                            &record.references,
                        ))
                    }
                }
            };
            if value.is_none() {
                skipped += 1;
            }
            values.push(value);
        }
        if skipped > 0 {
            warnings.push(format!(
                "column {}: {skipped} of {} records not scoreable (null)",
                spec.column_name(),
                records.len()
            ));
        }
        table.add_column(spec.column_name(), values)?;
    }
    Ok(())
}

/// Re-aligns a correctness table loaded from disk onto the given record order;
/// ids absent from the file become null rows.
pub fn align_table(
    file_table: &CorrectnessTable,
    records: &[GenerationRecord],
    warnings: &mut Vec<String>,
) -> Result<CorrectnessTable> {
    let mut row_of: HashMap<&str, usize> = HashMap::new();
    for (idx, id) in file_table.record_ids.iter().enumerate() {
        row_of.insert(id.as_str(), idx);
    }
    let mut aligned = CorrectnessTable::new(records.iter().map(|r| r.id.clone()).collect());
    let mut missing = 0usize;
    for record in records {
        if !row_of.contains_key(record.id.as_str()) {
            missing += 1;
        }
    }
    if missing > 0 {
        warnings.push(format!(
            "{missing} record ids absent from the correctness table; their rows are null"
        ));
    }
    for (name, values) in &file_table.columns {
        let column = records
            .iter()
            .map(|r| row_of.get(r.id.as_str()).and_then(|idx| values[*idx]))
            .collect();
        aligned.add_column(name.clone(), column)?;
    }
    Ok(aligned)
}

/// Binarization threshold for a column: the one encoded in its name when the
/// name parses as a correctness spec, otherwise the run-level default.
fn column_threshold(name: &str, default: f64) -> f64 {
    name.parse::<CorrectnessConfig>()
        .map(|c| c.threshold)
        .unwrap_or(default)
}

/// Everything `eval` needs beyond the records themselves.
pub struct EvalRequest {
    pub indicator: Indicator,
    /// Correctness columns to evaluate against (sp: exactly one).
    pub columns: Vec<String>,
    /// Fallback binarization threshold for columns without an encoded one.
    pub threshold: f64,
    /// Extra partition tags stamped on every result row.
    pub tags: BTreeSet<String>,
    /// Drop records whose MoJI entropy over `columns` exceeds this.
    pub entropy_filter: Option<f64>,
    /// Rank correlation for the perturbation objective.
    pub cor_kind: CorKind,
}

/// Result rows plus the per-column ξ grid and accumulated warnings.
#[derive(Debug, Default)]
pub struct EvalOutcome {
    pub results: Vec<ExperimentResult>,
    pub xi_cells: Vec<XiCell>,
    pub warnings: Vec<String>,
}

pub fn evaluate(
    records: &[GenerationRecord],
    scores: &ScoreIndex,
    table: &CorrectnessTable,
    request: &EvalRequest,
) -> Result<EvalOutcome> {
    let mut outcome = EvalOutcome::default();
    if scores.is_empty() {
        return Err(Error::MissingData("the scores table is empty".into()));
    }

    let retained: Option<BTreeSet<String>> = match request.entropy_filter {
        Some(threshold) => {
            if !matches!(request.indicator, Indicator::Sp | Indicator::SpMoji) {
                return Err(Error::Config(
                    "--entropy-filter applies to sp and sp-moji modes only".into(),
                ));
            }
            let keep = table.filter_by_entropy(&request.columns, threshold)?;
            let dropped = records.len() - keep.len();
            if dropped > 0 {
                outcome.warnings.push(format!(
                    "entropy filter at {threshold} dropped {dropped} records"
                ));
            }
            Some(keep.into_iter().collect())
        }
        None => None,
    };
    let keep = |record: &GenerationRecord| {
        retained
            .as_ref()
            .map(|set| set.contains(&record.id))
            .unwrap_or(true)
    };

    // Row index of each record in the aligned correctness table.
    let row_of: HashMap<&str, usize> = table
        .record_ids
        .iter()
        .enumerate()
        .map(|(idx, id)| (id.as_str(), idx))
        .collect();

    let mut groups: BTreeMap<(String, String), Vec<&GenerationRecord>> = BTreeMap::new();
    for record in records.iter().filter(|r| keep(r)) {
        groups
            .entry((record.dataset.clone(), record.model.clone()))
            .or_default()
            .push(record);
    }

    match request.indicator {
        Indicator::Sp | Indicator::SpMoji => {
            if request.columns.is_empty() {
                return Err(Error::Config("no correctness columns selected".into()));
            }
            if request.indicator == Indicator::Sp && request.columns.len() != 1 {
                return Err(Error::Config(format!(
                    "sp mode evaluates exactly one correctness column, got {}",
                    request.columns.len()
                )));
            }
            let binarized: Vec<(String, Vec<Option<u8>>)> = request
                .columns
                .iter()
                .map(|name| {
                    let threshold = column_threshold(name, request.threshold);
                    let values = table
                        .column(name)?
                        .iter()
                        .map(|v| v.map(|x| binarize(x, threshold)))
                        .collect();
                    Ok((name.clone(), values))
                })
                .collect::<Result<_>>()?;
            for ((dataset, model), group) in &groups {
                for (method, by_record) in scores {
                    let mut u = Vec::new();
                    let mut rows = Vec::new();
                    for record in group {
                        if let Some(score) = by_record.get(&record.id) {
                            u.push(*score);
                            rows.push(row_of.get(record.id.as_str()).copied());
                        }
                    }
                    if u.is_empty() {
                        continue;
                    }
                    let column_view = |values: &Vec<Option<u8>>| -> Vec<Option<u8>> {
                        rows.iter()
                            .map(|row| row.and_then(|idx| values[idx]))
                            .collect()
                    };
                    let per_column: Vec<(String, Vec<Option<u8>>)> = binarized
                        .iter()
                        .map(|(name, values)| (name.clone(), column_view(values)))
                        .collect();
                    let value = if request.indicator == Indicator::Sp {
                        match xi_sp(&u, &per_column[0].1) {
                            Ok(v) => v,
                            Err(Error::UndefinedMetric(msg)) => {
                                outcome.warnings.push(format!(
                                    "{method} on {dataset}/{model}: ξ_SP undefined ({msg})"
                                ));
                                continue;
                            }
                            Err(e) => return Err(e),
                        }
                    } else {
                        let columns: Vec<Vec<Option<u8>>> =
                            per_column.iter().map(|(_, v)| v.clone()).collect();
                        match xi_sp_moji(&u, &columns) {
                            Ok(moji) => {
                                for ((name, _), xi) in
                                    per_column.iter().zip(&moji.per_column)
                                {
                                    match xi {
                                        Some(xi) => outcome.xi_cells.push(XiCell {
                                            method: method.clone(),
                                            dataset: dataset.clone(),
                                            model: model.clone(),
                                            column: name.clone(),
                                            xi: *xi,
                                        }),
                                        None => outcome.warnings.push(format!(
                                            "{method} on {dataset}/{model}: column {name} undefined, skipped"
                                        )),
                                    }
                                }
                                moji.value
                            }
                            Err(Error::UndefinedMetric(msg)) => {
                                outcome.warnings.push(format!(
                                    "{method} on {dataset}/{model}: ξ_SP-MoJI undefined ({msg})"
                                ));
                                continue;
                            }
                            Err(e) => return Err(e),
                        }
                    };
                    if request.indicator == Indicator::Sp {
                        outcome.xi_cells.push(XiCell {
                            method: method.clone(),
                            dataset: dataset.clone(),
                            model: model.clone(),
                            column: per_column[0].0.clone(),
                            xi: value,
                        });
                    } else {
                        outcome.xi_cells.push(XiCell {
                            method: method.clone(),
                            dataset: dataset.clone(),
                            model: model.clone(),
                            column: "sp_moji".into(),
                            xi: value,
                        });
                    }
                    outcome.results.push(ExperimentResult {
                        method: method.clone(),
                        dataset: dataset.clone(),
                        model: model.clone(),
                        indicator: request.indicator,
                        value,
                        partition_tags: request.tags.clone(),
                    });
                }
            }
        }
        Indicator::Ood => {
            for ((dataset, model), group) in &groups {
                for (method, by_record) in scores {
                    let mut u = Vec::new();
                    let mut labels = Vec::new();
                    for record in group {
                        if let (Some(score), Some(label)) =
                            (by_record.get(&record.id), record.ood_label)
                        {
                            u.push(*score);
                            labels.push(label);
                        }
                    }
                    if u.is_empty() {
                        continue;
                    }
                    match ood_auroc(&u, &labels) {
                        Ok(value) => outcome.results.push(ExperimentResult {
                            method: method.clone(),
                            dataset: dataset.clone(),
                            model: model.clone(),
                            indicator: Indicator::Ood,
                            value,
                            partition_tags: request.tags.clone(),
                        }),
                        Err(Error::UndefinedMetric(msg)) => outcome.warnings.push(format!(
                            "{method} on {dataset}/{model}: OOD AUROC undefined ({msg})"
                        )),
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        Indicator::Perturb => {
            for ((dataset, model), group) in &groups {
                // Families keyed by the base id stamped by generate_grid.
                let mut families: BTreeMap<&str, Vec<&GenerationRecord>> = BTreeMap::new();
                for record in group {
                    if record.perturbation_strength.is_none() {
                        continue;
                    }
                    let base = split_perturbed_id(&record.id)
                        .map(|(base, _)| base)
                        .unwrap_or(record.id.as_str());
                    families.entry(base).or_default().push(record);
                }
                if families.is_empty() {
                    outcome.warnings.push(format!(
                        "{dataset}/{model}: no perturbation-stamped records, group skipped"
                    ));
                    continue;
                }
                for (base, members) in &families {
                    let mut strengths: Vec<f64> = members
                        .iter()
                        .filter_map(|r| r.perturbation_strength)
                        .collect();
                    strengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    strengths.dedup();
                    if strengths.len() < 2 {
                        return Err(Error::Validation {
                            record: base.to_string(),
                            field: "perturbation_strength".into(),
                            msg: "perturbation families need at least two distinct strengths"
                                .into(),
                        });
                    }
                }
                for (method, by_record) in scores {
                    let mut series = Vec::new();
                    let mut dropped = 0usize;
                    for members in families.values() {
                        let points: Vec<(f64, f64)> = members
                            .iter()
                            .filter_map(|r| {
                                by_record
                                    .get(&r.id)
                                    .map(|u| (r.perturbation_strength.unwrap(), *u))
                            })
                            .collect();
                        let distinct = {
                            let mut s: Vec<f64> = points.iter().map(|(s, _)| *s).collect();
                            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                            s.dedup();
                            s.len()
                        };
                        if distinct >= 2 {
                            series.push(points);
                        } else {
                            dropped += 1;
                        }
                    }
                    if dropped > 0 {
                        outcome.warnings.push(format!(
                            "{method} on {dataset}/{model}: {dropped} families lacked scored strengths"
                        ));
                    }
                    if series.is_empty() {
                        outcome.warnings.push(format!(
                            "{method} on {dataset}/{model}: no scoreable perturbation family"
                        ));
                        continue;
                    }
                    let perturb = xi_perturb(&series, request.cor_kind)?;
                    if perturb.constant_records > 0 {
                        outcome.warnings.push(format!(
                            "{method} on {dataset}/{model}: {} constant-uncertainty families contribute 0",
                            perturb.constant_records
                        ));
                    }
                    outcome.results.push(ExperimentResult {
                        method: method.clone(),
                        dataset: dataset.clone(),
                        model: model.clone(),
                        indicator: Indicator::Perturb,
                        value: perturb.value,
                        partition_tags: request.tags.clone(),
                    });
                }
            }
        }
    }

    if outcome.results.is_empty() {
        return Err(Error::UndefinedMetric(
            "no (method, dataset, model) combination produced a defined ξ".into(),
        ));
    }
    outcome.results.sort_by(|a, b| {
        (&a.method, &a.dataset, &a.model).cmp(&(&b.method, &b.dataset, &b.model))
    });
    outcome.xi_cells.sort_by(|a, b| {
        (&a.method, &a.dataset, &a.model, &a.column).cmp(&(
            &b.method,
            &b.dataset,
            &b.model,
            &b.column,
        ))
    });
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use uqeval::datamodel::AnswerSequence;

    fn record(id: &str, dataset: &str) -> GenerationRecord {
        GenerationRecord {
            id: id.into(),
            dataset: dataset.into(),
            model: "m".into(),
            question: "q".into(),
            context: None,
            references: vec!["paris".into()],
            answer: AnswerSequence {
                text: "paris".into(),
                token_logprobs: vec![-0.5],
            },
            samples: vec![],
            similarity: Default::default(),
            p_true_logprob: None,
            ood_label: None,
            exact_correct: Some(1),
            perturbation_strength: None,
            sampling_temperature: 1.0,
        }
    }

    fn scores_for(records: &[GenerationRecord], values: &[f64]) -> ScoreIndex {
        let rows: Vec<ScoreRow> = records
            .iter()
            .zip(values)
            .map(|(r, v)| ScoreRow {
                record_id: r.id.clone(),
                method: "m1".into(),
                score: *v,
                n_samples_used: 0,
            })
            .collect();
        index_scores(&rows)
    }

    fn request(indicator: Indicator, columns: &[&str]) -> EvalRequest {
        EvalRequest {
            indicator,
            columns: columns.iter().map(|s| s.to_string()).collect(),
            threshold: 0.5,
            tags: BTreeSet::new(),
            entropy_filter: None,
            cor_kind: CorKind::Spearman,
        }
    }

    #[test]
    fn sp_eval_uses_binarized_column() {
        let records: Vec<_> = (0..4).map(|i| record(&format!("r{i}"), "d")).collect();
        let scores = scores_for(&records, &[0.9, 0.8, 0.2, 0.1]);
        let mut table = CorrectnessTable::new(records.iter().map(|r| r.id.clone()).collect());
        table
            .add_column(
                "c".into(),
                vec![Some(0.0), Some(0.0), Some(1.0), Some(1.0)],
            )
            .unwrap();
        let outcome = evaluate(&records, &scores, &table, &request(Indicator::Sp, &["c"])).unwrap();
        assert_eq!(outcome.results.len(), 1);
        // Uncertainty perfectly ranks the incorrect (=0) records first.
        assert_eq!(outcome.results[0].value, 1.0);
        assert_eq!(outcome.xi_cells.len(), 1);
    }

    #[test]
    fn sp_moji_single_column_matches_sp_value() {
        let records: Vec<_> = (0..6).map(|i| record(&format!("r{i}"), "d")).collect();
        let scores = scores_for(&records, &[0.9, 0.1, 0.6, 0.4, 0.8, 0.3]);
        let mut table = CorrectnessTable::new(records.iter().map(|r| r.id.clone()).collect());
        let column = vec![Some(0.0), Some(1.0), Some(1.0), None, Some(0.0), Some(1.0)];
        table.add_column("j".into(), column).unwrap();
        let sp = evaluate(&records, &scores, &table, &request(Indicator::Sp, &["j"])).unwrap();
        let moji = evaluate(&records, &scores, &table, &request(Indicator::SpMoji, &["j"]))
            .unwrap();
        assert!((sp.results[0].value - moji.results[0].value).abs() < 1e-12);
        assert_eq!(sp.results[0].indicator, Indicator::Sp);
        assert_eq!(moji.results[0].indicator, Indicator::SpMoji);
    }

    #[test]
    fn ood_eval_groups_by_dataset() {
        let mut records: Vec<_> = (0..4).map(|i| record(&format!("a{i}"), "d1")).collect();
        records.extend((0..4).map(|i| record(&format!("b{i}"), "d2")));
        for (i, r) in records.iter_mut().enumerate() {
            r.ood_label = Some(u8::from(i % 2 == 0));
        }
        let scores = scores_for(&records, &[0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8]);
        let table = CorrectnessTable::new(records.iter().map(|r| r.id.clone()).collect());
        let outcome =
            evaluate(&records, &scores, &table, &request(Indicator::Ood, &[])).unwrap();
        assert_eq!(outcome.results.len(), 2);
        assert_eq!(outcome.results[0].value, 1.0); // d1 aligned
        assert_eq!(outcome.results[1].value, 0.0); // d2 anti-aligned
    }

    #[test]
    fn perturb_eval_builds_family_series() {
        let mut records = Vec::new();
        for base in ["p0", "p1"] {
            for strength in [0.0, 0.5, 1.0] {
                let mut r = record(&format!("{base}::s{strength}"), "d");
                r.perturbation_strength = Some(strength);
                records.push(r);
            }
        }
        // Uncertainty equals strength → ξ_perturb = 1.
        let values: Vec<f64> = records
            .iter()
            .map(|r| r.perturbation_strength.unwrap())
            .collect();
        let scores = scores_for(&records, &values);
        let table = CorrectnessTable::new(records.iter().map(|r| r.id.clone()).collect());
        let outcome =
            evaluate(&records, &scores, &table, &request(Indicator::Perturb, &[])).unwrap();
        assert_eq!(outcome.results[0].value, 1.0);
        let negated: Vec<f64> = values.iter().map(|v| -v).collect();
        let scores = scores_for(&records, &negated);
        let outcome =
            evaluate(&records, &scores, &table, &request(Indicator::Perturb, &[])).unwrap();
        assert_eq!(outcome.results[0].value, -1.0);
    }

    #[test]
    fn deficient_family_is_validation_error() {
        let mut r = record("solo::s0", "d");
        r.perturbation_strength = Some(0.0);
        let records = vec![r];
        let scores = scores_for(&records, &[0.5]);
        let table = CorrectnessTable::new(vec!["solo::s0".into()]);
        assert!(matches!(
            evaluate(&records, &scores, &table, &request(Indicator::Perturb, &[])),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn entropy_filter_drops_split_records() {
        let records: Vec<_> = (0..4).map(|i| record(&format!("r{i}"), "d")).collect();
        let scores = scores_for(&records, &[0.9, 0.8, 0.2, 0.1]);
        let mut table = CorrectnessTable::new(records.iter().map(|r| r.id.clone()).collect());
        table
            .add_column("j1".into(), vec![Some(0.0), Some(0.0), Some(1.0), Some(1.0)])
            .unwrap();
        table
            .add_column("j2".into(), vec![Some(0.0), Some(1.0), Some(1.0), Some(1.0)])
            .unwrap();
        let mut req = request(Indicator::SpMoji, &["j1", "j2"]);
        req.entropy_filter = Some(0.0);
        let outcome = evaluate(&records, &scores, &table, &req).unwrap();
        // r1 is split (0 vs 1) and gets dropped; the rest remain unanimous.
        assert!(outcome.warnings.iter().any(|w| w.contains("dropped 1")));
        assert_eq!(outcome.results.len(), 1);
    }

    #[test]
    fn metric_columns_score_against_references() {
        let mut records = vec![record("r0", "d"), record("r1", "d")];
        records[1].answer.text = "london".into();
        let specs = vec!["rouge_1@0.5".parse::<CorrectnessConfig>().unwrap()];
        let mut table = CorrectnessTable::new(records.iter().map(|r| r.id.clone()).collect());
        let mut warnings = Vec::new();
        build_metric_columns(&records, &specs, &mut table, &mut warnings).unwrap();
        let column = table.column("rouge_1@0.5").unwrap();
        assert_eq!(column[0], Some(1.0));
        assert_eq!(column[1], Some(0.0));
    }

    #[test]
    fn align_table_fills_missing_rows_with_null() {
        let records = vec![record("a", "d"), record("b", "d")];
        let mut file_table = CorrectnessTable::new(vec!["b".into(), "zz".into()]);
        file_table
            .add_column("c".into(), vec![Some(1.0), Some(0.0)])
            .unwrap();
        let mut warnings = Vec::new();
        let aligned = align_table(&file_table, &records, &mut warnings).unwrap();
        assert_eq!(aligned.column("c").unwrap(), &[None, Some(1.0)]);
        assert_eq!(warnings.len(), 1);
    }
}
