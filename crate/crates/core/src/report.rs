//! Analysis reports over correctness tables and per-column ξ grids:
//! mutual-AUROC agreement matrices, ranking agreement between correctness
//! functions, and adversarial correctness selection.

use std::collections::{BTreeMap, BTreeSet};

use crate::correctness::{binarize, CorrectnessTable};
use crate::datamodel::Table;
use crate::error::{Error, Result};
use crate::riskmetrics::{auroc, spearman};

/// A labeled square matrix with possibly-undefined cells.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl LabeledMatrix {
    /// Serializes as a table whose first column names the row.
    pub fn to_table(&self) -> Result<Table> {
        let mut header = vec!["column".to_string()];
        header.extend(self.labels.clone());
        let mut table = Table::new(header);
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut cells = vec![label.clone()];
            cells.extend(row.iter().map(|v| match v {
                Some(v) => v.to_string(),
                None => "undefined".to_string(),
            }));
            table.push_row(cells)?;
        }
        Ok(table)
    }
}

/// Mutual-AUROC agreement between correctness columns.
///
/// Cell (i, j) is the AUROC of column j's raw scores against column i
/// binarized at 0.5, over records where both columns are non-null. The matrix
/// is not symmetric; the diagonal is 1 by convention; cells where the
/// binarized labels collapse to one class are undefined.
pub fn agreement_matrix(table: &CorrectnessTable) -> Result<LabeledMatrix> {
    let labels = table.column_names();
    if labels.len() < 2 {
        return Err(Error::Config(
            "agreement matrix needs at least two correctness columns".into(),
        ));
    }
    let mut values = vec![vec![None; labels.len()]; labels.len()];
    for (i, row_col) in labels.iter().enumerate() {
        let binarizer = table.column(row_col)?;
        for (j, score_col) in labels.iter().enumerate() {
            if i == j {
                values[i][j] = Some(1.0);
                continue;
            }
            let scores = table.column(score_col)?;
            let mut s = Vec::new();
            let mut l = Vec::new();
            for (a, b) in scores.iter().zip(binarizer) {
                if let (Some(a), Some(b)) = (a, b) {
                    s.push(*a);
                    l.push(binarize(*b, 0.5));
                }
            }
            values[i][j] = match auroc(&s, &l) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
        }
    }
    Ok(LabeledMatrix { labels, values })
}

/// Per-(column, method) ξ values, the input grain of the ranking and
/// adversarial reports. `unit` identifies one dataset/model experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct XiCell {
    pub method: String,
    pub dataset: String,
    pub model: String,
    pub column: String,
    pub xi: f64,
}

/// Header of the ξ-grid table format.
pub const XI_GRID_HEADER: [&str; 5] = ["method", "dataset", "model", "column", "xi"];

pub fn xi_cells_to_table(cells: &[XiCell]) -> Result<Table> {
    let mut table = Table::new(XI_GRID_HEADER.iter().map(|s| s.to_string()).collect());
    for c in cells {
        table.push_row(vec![
            c.method.clone(),
            c.dataset.clone(),
            c.model.clone(),
            c.column.clone(),
            c.xi.to_string(),
        ])?;
    }
    Ok(table)
}

pub fn xi_cells_from_table(table: &Table) -> Result<Vec<XiCell>> {
    if table.header != XI_GRID_HEADER {
        return Err(Error::Shape(format!(
            "unexpected ξ grid header {:?}",
            table.header
        )));
    }
    table
        .rows
        .iter()
        .map(|row| {
            Ok(XiCell {
                method: row[0].clone(),
                dataset: row[1].clone(),
                model: row[2].clone(),
                column: row[3].clone(),
                xi: row[4]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad ξ value '{}'", row[4])))?,
            })
        })
        .collect()
}

/// Collapses ξ cells to column → method → mean ξ over (dataset, model) units.
pub fn mean_xis_by_column(cells: &[XiCell]) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut sums: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for c in cells {
        let entry = sums
            .entry(c.column.clone())
            .or_default()
            .entry(c.method.clone())
            .or_insert((0.0, 0));
        entry.0 += c.xi;
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(col, methods)| {
            (
                col,
                methods
                    .into_iter()
                    .map(|(m, (total, n))| (m, total / n as f64))
                    .collect(),
            )
        })
        .collect()
}

/// Spearman agreement between the method rankings induced by pairs of
/// correctness columns. Cells with fewer than three common methods, or with a
/// constant ξ vector, are undefined.
pub fn ranking_agreement(
    xis: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<LabeledMatrix> {
    if xis.len() < 2 {
        return Err(Error::Config(
            "ranking agreement needs at least two correctness columns".into(),
        ));
    }
    let labels: Vec<String> = xis.keys().cloned().collect();
    let mut values = vec![vec![None; labels.len()]; labels.len()];
    for (i, col_i) in labels.iter().enumerate() {
        for (j, col_j) in labels.iter().enumerate() {
            if i == j {
                values[i][j] = Some(1.0);
                continue;
            }
            let common: Vec<&String> = xis[col_i]
                .keys()
                .filter(|m| xis[col_j].contains_key(*m))
                .collect();
            if common.len() < 3 {
                continue;
            }
            let a: Vec<f64> = common.iter().map(|m| xis[col_i][*m]).collect();
            let b: Vec<f64> = common.iter().map(|m| xis[col_j][*m]).collect();
            values[i][j] = match spearman(&a, &b) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
        }
    }
    Ok(LabeledMatrix { labels, values })
}

/// Adversarial correctness selection summary for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialRow {
    pub method: String,
    /// Top-3 membership frequency under the reference column.
    pub reference_freq: f64,
    /// Top-3 membership frequency when the column is chosen per unit to favor
    /// the method.
    pub adversarial_freq: f64,
    pub increase: f64,
    /// Per unit: (dataset, model, best column, member under it).
    pub best_per_unit: Vec<(String, String, String, bool)>,
}

/// Competition rank of a method inside one (unit, column) ξ map: 1 plus the
/// number of methods with strictly larger ξ.
fn rank_of(method: &str, xis: &BTreeMap<String, f64>) -> Option<usize> {
    let own = *xis.get(method)?;
    Some(1 + xis.values().filter(|v| **v > own).count())
}

/// Measures how much each method's apparent Top-3 membership improves when
/// the correctness column is chosen adversarially per unit, against the
/// membership under `reference`. Units are (dataset, model) pairs that carry
/// the reference column with at least three ranked methods.
pub fn adversarial_selection(
    cells: &[XiCell],
    pool: &[String],
    reference: &str,
) -> Result<Vec<AdversarialRow>> {
    if pool.is_empty() {
        return Err(Error::Config("adversarial report needs a column pool".into()));
    }
    // unit → column → method → ξ
    let mut grid: BTreeMap<(String, String), BTreeMap<String, BTreeMap<String, f64>>> =
        BTreeMap::new();
    for c in cells {
        grid.entry((c.dataset.clone(), c.model.clone()))
            .or_default()
            .entry(c.column.clone())
            .or_default()
            .insert(c.method.clone(), c.xi);
    }
    let units: Vec<&(String, String)> = grid
        .keys()
        .filter(|unit| {
            grid[*unit]
                .get(reference)
                .map(|xis| xis.len() >= 3)
                .unwrap_or(false)
        })
        .collect();
    if units.is_empty() {
        return Err(Error::MissingData(format!(
            "no unit carries reference column '{reference}' with ≥ 3 methods"
        )));
    }
    let methods: BTreeSet<String> = units
        .iter()
        .flat_map(|unit| grid[*unit][reference].keys().cloned())
        .collect();

    let mut rows = Vec::new();
    for method in &methods {
        let mut reference_hits = 0usize;
        let mut adversarial_hits = 0usize;
        let mut rankable_units = 0usize;
        let mut best_per_unit = Vec::new();
        for unit in &units {
            let columns = &grid[*unit];
            let Some(ref_rank) = rank_of(method, &columns[reference]) else {
                continue;
            };
            rankable_units += 1;
            if ref_rank <= 3 {
                reference_hits += 1;
            }
            // Best column: the one giving the method its lowest rank;
            // lexicographically first on ties.
            let mut best: Option<(usize, &String)> = None;
            for col in pool {
                let Some(xis) = columns.get(col) else { continue };
                let Some(rank) = rank_of(method, xis) else { continue };
                if best.map(|(r, _)| rank < r).unwrap_or(true) {
                    best = Some((rank, col));
                }
            }
            if let Some((rank, col)) = best {
                let member = rank <= 3;
                if member {
                    adversarial_hits += 1;
                }
                best_per_unit.push((unit.0.clone(), unit.1.clone(), col.clone(), member));
            } else {
                best_per_unit.push((unit.0.clone(), unit.1.clone(), String::new(), false));
            }
        }
        if rankable_units == 0 {
            continue;
        }
        let reference_freq = reference_hits as f64 / rankable_units as f64;
        let adversarial_freq = adversarial_hits as f64 / rankable_units as f64;
        rows.push(AdversarialRow {
            method: method.clone(),
            reference_freq,
            adversarial_freq,
            increase: adversarial_freq - reference_freq,
            best_per_unit,
        });
    }
    Ok(rows)
}

/// Serializes adversarial rows as `method,reference,adversarial,increase`.
pub fn adversarial_to_table(rows: &[AdversarialRow]) -> Result<Table> {
    let mut table = Table::new(vec![
        "method".to_string(),
        "reference".to_string(),
        "adversarial".to_string(),
        "increase".to_string(),
    ]);
    for r in rows {
        table.push_row(vec![
            r.method.clone(),
            r.reference_freq.to_string(),
            r.adversarial_freq.to_string(),
            r.increase.to_string(),
        ])?;
    }
    Ok(table)
}

/// Serializes the per-unit best-column detail of the adversarial report.
pub fn adversarial_detail_to_table(rows: &[AdversarialRow]) -> Result<Table> {
    let mut table = Table::new(vec![
        "method".to_string(),
        "dataset".to_string(),
        "model".to_string(),
        "best_column".to_string(),
        "in_top3".to_string(),
    ]);
    for r in rows {
        for (dataset, model, column, member) in &r.best_per_unit {
            table.push_row(vec![
                r.method.clone(),
                dataset.clone(),
                model.clone(),
                column.clone(),
                member.to_string(),
            ])?;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn correctness_table() -> CorrectnessTable {
        let mut t = CorrectnessTable::new(
            (0..6).map(|i| format!("r{i}")).collect(),
        );
        let base = vec![Some(1.0), Some(0.0), Some(1.0), Some(0.0), Some(1.0), Some(0.0)];
        let complement: Vec<Option<f64>> =
            base.iter().map(|v| v.map(|x| 1.0 - x)).collect();
        t.add_column("base".into(), base).unwrap();
        t.add_column("complement".into(), complement).unwrap();
        t.add_column(
            "graded".into(),
            vec![Some(0.9), Some(0.1), Some(0.8), Some(0.2), Some(0.7), Some(0.4)],
        )
        .unwrap();
        t
    }

    #[test]
    fn agreement_diagonal_and_complement() {
        let m = agreement_matrix(&correctness_table()).unwrap();
        let idx = |name: &str| m.labels.iter().position(|l| l == name).unwrap();
        assert_eq!(m.values[idx("base")][idx("base")], Some(1.0));
        // Complement scores anti-rank the base labels.
        assert_relative_eq!(
            m.values[idx("base")][idx("complement")].unwrap(),
            0.0
        );
        // Graded column perfectly ranks base labels.
        assert_relative_eq!(m.values[idx("base")][idx("graded")].unwrap(), 1.0);
    }

    #[test]
    fn agreement_skips_single_class_cells() {
        let mut t = CorrectnessTable::new(vec!["a".into(), "b".into()]);
        t.add_column("ones".into(), vec![Some(1.0), Some(1.0)]).unwrap();
        t.add_column("scores".into(), vec![Some(0.2), Some(0.9)]).unwrap();
        let m = agreement_matrix(&t).unwrap();
        assert_eq!(m.values[0][1], None);
    }

    #[test]
    fn agreement_matrix_is_asymmetric_in_general() {
        // A graded column vs a binary column differs by direction.
        let mut t = CorrectnessTable::new((0..4).map(|i| format!("r{i}")).collect());
        t.add_column("bin".into(), vec![Some(1.0), Some(1.0), Some(0.0), Some(0.0)])
            .unwrap();
        t.add_column(
            "grad".into(),
            vec![Some(0.9), Some(0.4), Some(0.6), Some(0.1)],
        )
        .unwrap();
        let m = agreement_matrix(&t).unwrap();
        assert_relative_eq!(m.values[0][1].unwrap(), 0.75);
        assert_relative_eq!(m.values[1][0].unwrap(), 0.5);
    }

    fn xi_map(entries: &[(&str, &[(&str, f64)])]) -> BTreeMap<String, BTreeMap<String, f64>> {
        entries
            .iter()
            .map(|(col, methods)| {
                (
                    col.to_string(),
                    methods
                        .iter()
                        .map(|(m, x)| (m.to_string(), *x))
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn ranking_agreement_extremes() {
        let same = xi_map(&[
            ("c1", &[("m1", 0.9), ("m2", 0.8), ("m3", 0.7)]),
            ("c2", &[("m1", 0.6), ("m2", 0.5), ("m3", 0.4)]),
        ]);
        let m = ranking_agreement(&same).unwrap();
        assert_relative_eq!(m.values[0][1].unwrap(), 1.0);
        let reversed = xi_map(&[
            ("c1", &[("m1", 0.9), ("m2", 0.8), ("m3", 0.7)]),
            ("c2", &[("m1", 0.4), ("m2", 0.5), ("m3", 0.6)]),
        ]);
        let m = ranking_agreement(&reversed).unwrap();
        assert_relative_eq!(m.values[0][1].unwrap(), -1.0);
    }

    #[test]
    fn ranking_agreement_needs_three_common_methods() {
        let thin = xi_map(&[
            ("c1", &[("m1", 0.9), ("m2", 0.8)]),
            ("c2", &[("m1", 0.6), ("m2", 0.5)]),
        ]);
        let m = ranking_agreement(&thin).unwrap();
        assert_eq!(m.values[0][1], None);
    }

    #[test]
    fn ranking_agreement_hand_case() {
        let grid = xi_map(&[
            ("c1", &[("m1", 0.9), ("m2", 0.8), ("m3", 0.7), ("m4", 0.6)]),
            ("c2", &[("m1", 0.9), ("m2", 0.7), ("m3", 0.8), ("m4", 0.6)]),
        ]);
        let m = ranking_agreement(&grid).unwrap();
        // Ranks (1,2,3,4) vs (1,3,2,4): ρ = 0.8 by hand.
        assert_relative_eq!(m.values[0][1].unwrap(), 0.8, epsilon = 1e-12);
    }

    fn cells(entries: &[(&str, &str, &str, f64)]) -> Vec<XiCell> {
        entries
            .iter()
            .map(|(method, dataset, column, xi)| XiCell {
                method: method.to_string(),
                dataset: dataset.to_string(),
                model: "m".to_string(),
                column: column.to_string(),
                xi: *xi,
            })
            .collect()
    }

    #[test]
    fn adversarial_dominant_method_cannot_increase() {
        let mut grid = Vec::new();
        for dataset in ["d1", "d2"] {
            for column in ["ref", "alt"] {
                grid.extend(cells(&[
                    ("m1", dataset, column, 0.9),
                    ("m2", dataset, column, 0.8),
                    ("m3", dataset, column, 0.7),
                    ("m4", dataset, column, 0.6),
                ]));
            }
        }
        let rows =
            adversarial_selection(&grid, &["ref".into(), "alt".into()], "ref").unwrap();
        let m1 = rows.iter().find(|r| r.method == "m1").unwrap();
        assert_relative_eq!(m1.reference_freq, 1.0);
        assert_relative_eq!(m1.adversarial_freq, 1.0);
        assert_relative_eq!(m1.increase, 0.0);
    }

    #[test]
    fn adversarial_constructed_full_increase() {
        // m4 is last under the reference but first under alt on every dataset.
        let mut grid = Vec::new();
        for dataset in ["d1", "d2", "d3"] {
            grid.extend(cells(&[
                ("m1", dataset, "ref", 0.9),
                ("m2", dataset, "ref", 0.8),
                ("m3", dataset, "ref", 0.7),
                ("m4", dataset, "ref", 0.1),
                ("m1", dataset, "alt", 0.2),
                ("m2", dataset, "alt", 0.3),
                ("m3", dataset, "alt", 0.4),
                ("m4", dataset, "alt", 0.9),
            ]));
        }
        let rows =
            adversarial_selection(&grid, &["ref".into(), "alt".into()], "ref").unwrap();
        let m4 = rows.iter().find(|r| r.method == "m4").unwrap();
        assert_relative_eq!(m4.reference_freq, 0.0);
        assert_relative_eq!(m4.adversarial_freq, 1.0);
        assert_relative_eq!(m4.increase, 1.0);
        assert!(m4.best_per_unit.iter().all(|(_, _, col, _)| col == "alt"));
    }

    #[test]
    fn xi_cells_round_trip() {
        let cells = cells(&[("m1", "d1", "ref", 0.75)]);
        let table = xi_cells_to_table(&cells).unwrap();
        assert_eq!(xi_cells_from_table(&table).unwrap(), cells);
    }

    #[test]
    fn matrix_table_round_trips_through_writer() {
        let m = LabeledMatrix {
            labels: vec!["a".into(), "b".into()],
            values: vec![vec![Some(1.0), None], vec![Some(0.25), Some(1.0)]],
        };
        let table = m.to_table().unwrap();
        assert_eq!(table.rows[0][2], "undefined");
        assert_eq!(table.rows[1][1], "0.25");
    }
}
