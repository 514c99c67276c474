//! Elo aggregation of risk-correlation experiment grids.
//!
//! Each (dataset, model, indicator) cell of the experiment grid is a game
//! pool: every rating step samples one cell uniformly among those holding at
//! least two rated methods, then two distinct methods within it, and the
//! method with the higher ξ wins (exact ties score ½ each). Updates follow
//! the standard rule with one shared delta, so the total rating is conserved.
//! Methods need not appear in every cell; partially overlapping grids still
//! aggregate through indirect comparisons.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{ExperimentResult, Table};
use crate::error::{Error, Result};

/// Rating-loop parameters; defaults follow the evaluation protocol
/// (initial 1000, K = 2, s = 400, statistics over the last 1000 steps).
#[derive(Debug, Clone, PartialEq)]
pub struct EloConfig {
    pub k: f64,
    pub scale: f64,
    pub initial_rating: f64,
    pub window: usize,
}

impl Default for EloConfig {
    fn default() -> Self {
        EloConfig {
            k: 2.0,
            scale: 400.0,
            initial_rating: 1000.0,
            window: 1000,
        }
    }
}

impl EloConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.k) || !positive(self.scale) {
            return Err(Error::Config("Elo K and scale must be > 0".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("Elo window must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Expected score of A against B: 1 / (1 + 10^((r_B − r_A)/s)).
pub fn expected_score(rating_a: f64, rating_b: f64, scale: f64) -> f64 {
    debug_assert!(scale > 0.0);
    1.0 / (1.0 + 10f64.powf((rating_b - rating_a) / scale))
}

/// Result of one pairwise comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameOutcome {
    AWins,
    BWins,
    Tie,
}

/// Ratings per method with a bounded history of snapshots.
#[derive(Debug, Clone)]
pub struct EloState {
    methods: Vec<String>,
    ratings: Vec<f64>,
    step: u64,
    history: VecDeque<Vec<f64>>,
    config: EloConfig,
}

impl EloState {
    /// Initializes every method at the configured initial rating. Methods are
    /// kept in sorted order so runs are reproducible.
    pub fn new(methods: impl IntoIterator<Item = String>, config: EloConfig) -> Result<Self> {
        config.validate()?;
        let mut methods: Vec<String> = methods.into_iter().collect();
        methods.sort();
        methods.dedup();
        if methods.len() < 2 {
            return Err(Error::Config("Elo rating needs at least two methods".into()));
        }
        let ratings = vec![config.initial_rating; methods.len()];
        Ok(EloState {
            methods,
            ratings,
            step: 0,
            history: VecDeque::with_capacity(config.window),
            config,
        })
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rating(&self, method: &str) -> Option<f64> {
        self.index_of(method).map(|i| self.ratings[i])
    }

    fn index_of(&self, method: &str) -> Option<usize> {
        self.methods.binary_search_by(|m| m.as_str().cmp(method)).ok()
    }

    /// Plays one game and snapshots the ratings. One shared delta keeps the
    /// rating sum exactly conserved.
    pub fn play_game(&mut self, a: &str, b: &str, outcome: GameOutcome) -> Result<()> {
        if a == b {
            return Err(Error::Config(format!("method '{a}' cannot play itself")));
        }
        let ia = self
            .index_of(a)
            .ok_or_else(|| Error::Config(format!("unknown method '{a}'")))?;
        let ib = self
            .index_of(b)
            .ok_or_else(|| Error::Config(format!("unknown method '{b}'")))?;
        self.play_game_by_index(ia, ib, outcome);
        Ok(())
    }

    fn play_game_by_index(&mut self, ia: usize, ib: usize, outcome: GameOutcome) {
        let score_a = match outcome {
            GameOutcome::AWins => 1.0,
            GameOutcome::BWins => 0.0,
            GameOutcome::Tie => 0.5,
        };
        let expected_a = expected_score(self.ratings[ia], self.ratings[ib], self.config.scale);
        let delta = self.config.k * (score_a - expected_a);
        self.ratings[ia] += delta;
        self.ratings[ib] -= delta;
        self.step += 1;
        if self.history.len() == self.config.window {
            self.history.pop_front();
        }
        self.history.push_back(self.ratings.clone());
    }

    /// Mean and population variance of each rating over the retained window.
    pub fn window_stats(&self) -> BTreeMap<String, (f64, f64)> {
        let mut stats = BTreeMap::new();
        let n = self.history.len().max(1) as f64;
        for (idx, method) in self.methods.iter().enumerate() {
            let (mean, var) = if self.history.is_empty() {
                (self.ratings[idx], 0.0)
            } else {
                let mean =
                    self.history.iter().map(|snap| snap[idx]).sum::<f64>() / n;
                let var = self
                    .history
                    .iter()
                    .map(|snap| (snap[idx] - mean).powi(2))
                    .sum::<f64>()
                    / n;
                (mean, var)
            };
            stats.insert(method.clone(), (mean, var));
        }
        stats
    }

    pub fn total_rating(&self) -> f64 {
        self.ratings.iter().sum()
    }
}

/// Per-method outcome of a rating run.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingStats {
    pub mean: f64,
    pub variance: f64,
    /// Rating at the final step.
    pub last: f64,
}

/// Convergence trace entry: the largest absolute rating movement inside one
/// block of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockChange {
    pub end_step: u64,
    pub max_abs_change: f64,
}

/// Outcome of [`run_rating`].
#[derive(Debug, Clone, PartialEq)]
pub struct RatingRun {
    pub ratings: BTreeMap<String, RatingStats>,
    pub trace: Vec<BlockChange>,
    /// Cells that entered the pool (those with ≥ 2 rated methods).
    pub cells_used: usize,
}

const TRACE_BLOCK: u64 = 1000;

/// Runs the full rating loop over an experiment grid.
///
/// `partition` filters results to rows carrying all the given tags (empty
/// filter keeps everything). Deterministic per seed.
pub fn run_rating(
    results: &[ExperimentResult],
    partition: &[String],
    steps: u64,
    seed: u64,
    config: EloConfig,
) -> Result<RatingRun> {
    config.validate()?;
    let filtered: Vec<&ExperimentResult> = results
        .iter()
        .filter(|r| partition.iter().all(|t| r.partition_tags.contains(t)))
        .collect();
    if filtered.is_empty() {
        return Err(Error::MissingData(format!(
            "no experiment results match partition {partition:?}"
        )));
    }
    // (dataset, model, indicator) → per-method ξ.
    let mut cells: BTreeMap<(String, String, String), BTreeMap<String, f64>> = BTreeMap::new();
    for r in &filtered {
        let key = (r.dataset.clone(), r.model.clone(), r.indicator.to_string());
        let cell = cells.entry(key.clone()).or_default();
        if cell.insert(r.method.clone(), r.value).is_some() {
            return Err(Error::Validation {
                record: r.method.clone(),
                field: "results".into(),
                msg: format!("duplicate result for cell {key:?}"),
            });
        }
    }
    let methods: Vec<String> = {
        let mut m: Vec<String> = filtered.iter().map(|r| r.method.clone()).collect();
        m.sort();
        m.dedup();
        m
    };
    let index: BTreeMap<&str, usize> = methods
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();
    let pool: Vec<Vec<(usize, f64)>> = cells
        .values()
        .filter(|cell| cell.len() >= 2)
        .map(|cell| {
            cell.iter()
                .map(|(m, xi)| (index[m.as_str()], *xi))
                .collect()
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::MissingData(
            "no experiment cell holds two or more methods".into(),
        ));
    }
    let mut state = EloState::new(methods.clone(), config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let mut block_start = state.ratings.clone();
    for step in 1..=steps {
        let cell = &pool[rng.gen_range(0..pool.len())];
        let i = rng.gen_range(0..cell.len());
        let mut j = rng.gen_range(0..cell.len() - 1);
        if j >= i {
            j += 1;
        }
        let (method_a, xi_a) = cell[i];
        let (method_b, xi_b) = cell[j];
        let outcome = if xi_a > xi_b {
            GameOutcome::AWins
        } else if xi_a < xi_b {
            GameOutcome::BWins
        } else {
            GameOutcome::Tie
        };
        state.play_game_by_index(method_a, method_b, outcome);
        if step % TRACE_BLOCK == 0 || step == steps {
            let max_change = state
                .ratings
                .iter()
                .zip(&block_start)
                .map(|(now, then)| (now - then).abs())
                .fold(0.0, f64::max);
            trace.push(BlockChange {
                end_step: step,
                max_abs_change: max_change,
            });
            block_start = state.ratings.clone();
        }
    }
    let stats = state.window_stats();
    let ratings = state
        .methods
        .iter()
        .enumerate()
        .map(|(idx, m)| {
            let (mean, variance) = stats[m];
            (
                m.clone(),
                RatingStats {
                    mean,
                    variance,
                    last: state.ratings[idx],
                },
            )
        })
        .collect();
    Ok(RatingRun {
        ratings,
        trace,
        cells_used: pool.len(),
    })
}

/// Header of the Elo output table.
pub const ELO_HEADER: [&str; 4] = ["method", "partition", "elo_mean", "elo_var"];

/// Serializes a rating run as `method,partition,elo_mean,elo_var`.
pub fn rating_run_to_table(run: &RatingRun, partition: &str) -> Result<Table> {
    let mut table = Table::new(ELO_HEADER.iter().map(|s| s.to_string()).collect());
    for (method, stats) in &run.ratings {
        table.push_row(vec![
            method.clone(),
            partition.to_string(),
            stats.mean.to_string(),
            stats.variance.to_string(),
        ])?;
    }
    Ok(table)
}

/// Serializes the convergence trace as `block_end_step,max_abs_change`.
pub fn trace_to_table(run: &RatingRun) -> Result<Table> {
    let mut table = Table::new(vec![
        "block_end_step".to_string(),
        "max_abs_change".to_string(),
    ]);
    for block in &run.trace {
        table.push_row(vec![
            block.end_step.to_string(),
            block.max_abs_change.to_string(),
        ])?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Indicator;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    #[test]
    fn expected_score_matches_one_to_ten_odds() {
        assert_relative_eq!(expected_score(1000.0, 1000.0, 400.0), 0.5);
        assert_relative_eq!(
            expected_score(1400.0, 1000.0, 400.0),
            10.0 / 11.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            expected_score(1000.0, 1400.0, 400.0),
            1.0 / 11.0,
            epsilon = 1e-12
        );
    }

    fn two_method_state() -> EloState {
        EloState::new(
            ["a".to_string(), "b".to_string()],
            EloConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn equal_ratings_win_moves_one_point() {
        let mut state = two_method_state();
        state.play_game("a", "b", GameOutcome::AWins).unwrap();
        assert_relative_eq!(state.rating("a").unwrap(), 1001.0);
        assert_relative_eq!(state.rating("b").unwrap(), 999.0);
    }

    #[test]
    fn tie_at_equal_ratings_changes_nothing() {
        let mut state = two_method_state();
        state.play_game("a", "b", GameOutcome::Tie).unwrap();
        assert_relative_eq!(state.rating("a").unwrap(), 1000.0);
        assert_relative_eq!(state.rating("b").unwrap(), 1000.0);
    }

    #[test]
    fn favored_winner_gains_little() {
        let mut state = two_method_state();
        // Put a 400 points ahead first.
        for _ in 0..1000 {
            state.play_game("a", "b", GameOutcome::AWins).unwrap();
            if state.rating("a").unwrap() - state.rating("b").unwrap() >= 400.0 {
                break;
            }
        }
        let gap = state.rating("a").unwrap() - state.rating("b").unwrap();
        assert!(gap >= 400.0);
        let before = state.rating("a").unwrap();
        state.play_game("a", "b", GameOutcome::AWins).unwrap();
        let gain = state.rating("a").unwrap() - before;
        // At exactly +400 the expected gain is 2·(1/11).
        assert!((gain - 2.0 / 11.0).abs() < 0.02, "gain {gain}");
    }

    #[test]
    fn unknown_method_rejected() {
        let mut state = two_method_state();
        assert!(state.play_game("a", "zz", GameOutcome::AWins).is_err());
        assert!(state.play_game("a", "a", GameOutcome::Tie).is_err());
    }

    type CellSpec<'a> = (&'a str, &'a str, &'a [(&'a str, f64)]);

    fn grid(cells: &[CellSpec]) -> Vec<ExperimentResult> {
        let mut out = Vec::new();
        for (dataset, model, methods) in cells {
            for (method, xi) in *methods {
                out.push(ExperimentResult {
                    method: method.to_string(),
                    dataset: dataset.to_string(),
                    model: model.to_string(),
                    indicator: Indicator::Sp,
                    value: *xi,
                    partition_tags: BTreeSet::new(),
                });
            }
        }
        out
    }

    #[test]
    fn dominant_method_pulls_ahead() {
        let results = grid(&[
            ("d1", "m", &[("good", 0.9), ("bad", 0.6)]),
            ("d2", "m", &[("good", 0.8), ("bad", 0.5)]),
        ]);
        let run = run_rating(&results, &[], 5000, 3, EloConfig::default()).unwrap();
        assert!(run.ratings["good"].mean > run.ratings["bad"].mean + 100.0);
        assert_eq!(run.cells_used, 2);
    }

    #[test]
    fn identical_xis_stay_at_initial_rating() {
        let results = grid(&[
            ("d1", "m", &[("a", 0.7), ("b", 0.7), ("c", 0.7)]),
            ("d2", "m", &[("a", 0.6), ("b", 0.6), ("c", 0.6)]),
        ]);
        let run = run_rating(&results, &[], 20_000, 5, EloConfig::default()).unwrap();
        for stats in run.ratings.values() {
            assert!((stats.mean - 1000.0).abs() < 5.0);
        }
    }

    #[test]
    fn zero_sum_holds_over_long_runs() {
        let results = grid(&[
            ("d1", "m", &[("a", 0.9), ("b", 0.2), ("c", 0.5)]),
            ("d2", "m", &[("a", 0.1), ("b", 0.8), ("c", 0.6)]),
        ]);
        let run = run_rating(&results, &[], 50_000, 11, EloConfig::default()).unwrap();
        let total: f64 = run.ratings.values().map(|s| s.last).sum();
        assert!((total - 3000.0).abs() < 1e-9, "total {total}");
    }

    #[test]
    fn seed_determinism_is_bitwise() {
        let results = grid(&[
            ("d1", "m", &[("a", 0.9), ("b", 0.2)]),
            ("d2", "m", &[("a", 0.1), ("b", 0.8)]),
        ]);
        let run1 = run_rating(&results, &[], 10_000, 123, EloConfig::default()).unwrap();
        let run2 = run_rating(&results, &[], 10_000, 123, EloConfig::default()).unwrap();
        assert_eq!(run1, run2);
    }

    #[test]
    fn relabeling_methods_permutes_ratings() {
        let base = grid(&[
            ("d1", "m", &[("x", 0.9), ("y", 0.2)]),
            ("d2", "m", &[("x", 0.4), ("y", 0.8)]),
        ]);
        // Swap the two labels while keeping each method's ξ profile: the
        // sampled (cell, slot) sequence is identical because sorting restores
        // the same positional layout.
        let swapped = grid(&[
            ("d1", "m", &[("x", 0.2), ("y", 0.9)]),
            ("d2", "m", &[("x", 0.8), ("y", 0.4)]),
        ]);
        let run1 = run_rating(&base, &[], 20_000, 9, EloConfig::default()).unwrap();
        let run2 = run_rating(&swapped, &[], 20_000, 9, EloConfig::default()).unwrap();
        assert_relative_eq!(run1.ratings["x"].mean, run2.ratings["y"].mean, epsilon = 1e-6);
        assert_relative_eq!(run1.ratings["y"].mean, run2.ratings["x"].mean, epsilon = 1e-6);
    }

    #[test]
    fn partition_filter_restricts_cells() {
        let mut results = grid(&[("d1", "m", &[("a", 0.9), ("b", 0.2)])]);
        for r in &mut results {
            r.partition_tags.insert("qa".into());
        }
        results.extend(grid(&[("d2", "m", &[("a", 0.1), ("b", 0.8)])]));
        let run = run_rating(
            &results,
            &["qa".to_string()],
            2000,
            3,
            EloConfig::default(),
        )
        .unwrap();
        assert_eq!(run.cells_used, 1);
        assert!(run.ratings["a"].mean > run.ratings["b"].mean);
        assert!(run_rating(&results, &["nope".into()], 10, 3, EloConfig::default()).is_err());
    }

    #[test]
    fn duplicate_cell_entry_rejected() {
        let mut results = grid(&[("d1", "m", &[("a", 0.9), ("b", 0.2)])]);
        results.push(results[0].clone());
        assert!(run_rating(&results, &[], 10, 3, EloConfig::default()).is_err());
    }
}
