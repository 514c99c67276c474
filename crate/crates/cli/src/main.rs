//! `uqeval` — uncertainty-estimation scoring and risk-correlation evaluation
//! over generation logs.
//!
//! Subcommands: `score`, `judge`, `eval` (sp | sp-moji | ood | perturb),
//! `perturb`, `elo`, `verify-auroc` (noise | bias), `bootstrap-sd`, and
//! `report` (agreement | ranking | adversarial). Exit status is 0 on success,
//! 1 on validation/configuration problems, 2 on I/O or transport failures.

mod config;
mod pipeline;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use uqeval::correctness::{CorrectnessConfig, CorrectnessTable};
use uqeval::datamodel::{
    load_records, read_table, results_from_table, results_to_table, write_records, write_table,
    Indicator, Table,
};
use uqeval::elo::{rating_run_to_table, run_rating, trace_to_table, EloConfig};
use uqeval::error::{Error, Result};
use uqeval::judge::{query_judges, JudgeConfig};
use uqeval::perturbation::generate_grid;
use uqeval::report::{
    adversarial_detail_to_table, adversarial_selection, adversarial_to_table, agreement_matrix,
    mean_xis_by_column, ranking_agreement, xi_cells_from_table, xi_cells_to_table,
};
use uqeval::riskmetrics::{
    bootstrap_sd, verify_bias_decomposition, verify_noise_identity, CorKind,
};
use uqeval::scorers::{
    score_all, scores_from_table, scores_to_table, Method, ScorerConfig,
};

#[derive(Parser)]
#[command(name = "uqeval", version, about = "Uncertainty-estimation evaluation toolkit")]
struct Cli {
    /// Key-value configuration file; flags on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute uncertainty scores for every record in a generation log.
    Score(ScoreArgs),
    /// Query judge endpoints and write their verdicts as a correctness table.
    Judge(JudgeArgs),
    /// Run a risk-correlation experiment over scores and correctness columns.
    Eval(EvalArgs),
    /// Derive word-shuffled perturbation grids from record contexts.
    Perturb(PerturbArgs),
    /// Aggregate experiment results into Elo ratings.
    Elo(EloArgs),
    /// Verify the AUROC label-noise / label-bias identities on synthetic data.
    VerifyAuroc(VerifyAurocArgs),
    /// Bootstrap SD of a judge-ensemble performance estimate per ensemble size.
    BootstrapSd(BootstrapSdArgs),
    /// Agreement, ranking-agreement, and adversarial-selection reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct ScoreArgs {
    /// Generation log (line-delimited JSON).
    #[arg(long)]
    records: PathBuf,
    /// Method ids to score; defaults to every known method.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// SentenceSAR/SAR similarity-penalty temperature.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// EigenScore covariance regularizer.
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    /// Output scores table.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct JudgeArgs {
    #[arg(long)]
    records: PathBuf,
    /// Judge configurations ([[judge]] entries in TOML).
    #[arg(long)]
    judges: PathBuf,
    /// Directory of append-only per-judge verdict caches.
    #[arg(long)]
    cache_dir: PathBuf,
    /// Output correctness table of judge verdicts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Risk indicator: sp, sp-moji, ood, or perturb.
    #[arg(long)]
    mode: String,
    #[arg(long)]
    records: PathBuf,
    /// Scores table produced by `score`.
    #[arg(long)]
    scores: PathBuf,
    /// Correctness table to read judge or precomputed columns from.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Correctness columns to evaluate (sp: exactly one; sp-moji: defaults to
    /// every available column).
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    /// Correctness specs computed from the records, e.g. rouge_1@0.5,exact.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    /// Fallback binarization threshold for columns without an encoded one.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Partition tags stamped on every result row.
    #[arg(long, value_delimiter = ',')]
    tags: Vec<String>,
    /// Drop records whose MoJI entropy over the selected columns exceeds this.
    #[arg(long)]
    entropy_filter: Option<f64>,
    /// Rank correlation for perturb mode: spearman or pair-auroc.
    #[arg(long, default_value = "spearman")]
    cor: String,
    /// Write the per-column ξ grid alongside the results.
    #[arg(long)]
    xis_out: Option<PathBuf>,
    /// Persist the assembled correctness table (file + computed columns).
    #[arg(long)]
    write_table: Option<PathBuf>,
    /// Output results table.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    records: PathBuf,
    /// Strength grid; must be distinct and include 0.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
    strengths: Vec<f64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output generation log of derived records (answers cleared).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EloArgs {
    /// Results tables; repeat the flag to merge several.
    #[arg(long, required = true)]
    results: Vec<PathBuf>,
    /// Partition tags a result row must carry to enter the pool.
    #[arg(long, value_delimiter = ',')]
    partition: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Elo update step size.
    #[arg(long, default_value_t = 2.0)]
    k: f64,
    /// Elo logistic scale.
    #[arg(long, default_value_t = 400.0)]
    scale: f64,
    #[arg(long)]
    out: PathBuf,
    /// Optional per-block convergence trace.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyAurocArgs {
    /// noise or bias.
    #[arg(long)]
    mode: String,
    /// Base AUROC levels (defaults: noise 0.75,0.9; bias 0.6,0.75,0.9).
    #[arg(long = "auroc", value_delimiter = ',')]
    aurocs: Vec<f64>,
    /// Bernoulli flip probabilities (noise mode).
    #[arg(long = "p", value_delimiter = ',')]
    ps: Vec<f64>,
    /// Distortion rates (bias mode).
    #[arg(long = "rate", value_delimiter = ',')]
    rates: Vec<f64>,
    /// Sample size (defaults: noise 2000, bias 1000).
    #[arg(long)]
    n: Option<usize>,
    /// Trials per grid point (defaults: noise 100, bias 120).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapSdArgs {
    /// Judge ξ values, comma-separated.
    #[arg(long, value_delimiter = ',')]
    xis: Vec<f64>,
    /// Table to read ξ values from instead.
    #[arg(long)]
    xis_file: Option<PathBuf>,
    /// Column of --xis-file holding the ξ values.
    #[arg(long, default_value = "xi")]
    column: String,
    /// Largest ensemble size to evaluate.
    #[arg(long, default_value_t = 14)]
    n_max: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(subcommand)]
    kind: ReportKind,
}

#[derive(Subcommand)]
enum ReportKind {
    /// Mutual-AUROC agreement between correctness columns.
    Agreement {
        /// Correctness table.
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spearman agreement between method rankings under column pairs.
    Ranking {
        /// ξ grid table (method,dataset,model,column,xi).
        #[arg(long)]
        xis: PathBuf,
        /// Restrict to one dataset (otherwise mean over units).
        #[arg(long)]
        dataset: Option<String>,
        /// Restrict to one model.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adversarial correctness-function selection per method.
    Adversarial {
        #[arg(long)]
        xis: PathBuf,
        /// Reference column (the SP-MoJI ensemble by default).
        #[arg(long, default_value = "sp_moji")]
        reference: String,
        /// Candidate column pool; defaults to every column in the grid.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-unit best-column detail table.
        #[arg(long)]
        detail_out: Option<PathBuf>,
    },
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run_score(args: ScoreArgs) -> Result<()> {
    let loaded = load_records(&args.records)?;
    warn_all(&loaded.warnings);
    let methods: Vec<Method> = if args.methods.is_empty() {
        Method::all()
    } else {
        args.methods
            .iter()
            .map(|m| Method::from_str(m))
            .collect::<Result<_>>()?
    };
    let configs: Vec<ScorerConfig> = methods
        .into_iter()
        .map(|method| ScorerConfig {
            method,
            tau: args.tau,
            alpha: args.alpha,
        })
        .collect();
    let outcome = score_all(&loaded.records, &configs)?;
    if !outcome.skipped.is_empty() {
        let mut per_method: std::collections::BTreeMap<&str, usize> = Default::default();
        for s in &outcome.skipped {
            *per_method.entry(s.method.as_str()).or_insert(0) += 1;
        }
        for (method, count) in per_method {
            eprintln!("warning: {method}: {count} records skipped");
        }
    }
    write_table(&scores_to_table(&outcome.rows)?, &args.out)?;
    println!(
        "scored {} rows over {} records ({} skipped pairs) -> {}",
        outcome.rows.len(),
        loaded.records.len(),
        outcome.skipped.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(serde::Deserialize)]
struct JudgesFile {
    judge: Vec<JudgeConfig>,
}

fn run_judge(args: JudgeArgs) -> Result<()> {
    let loaded = load_records(&args.records)?;
    warn_all(&loaded.warnings);
    let raw = std::fs::read_to_string(&args.judges)
        .map_err(|e| Error::Io { path: args.judges.clone(), source: e })?;
    let judges: JudgesFile =
        toml::from_str(&raw).map_err(|e| Error::Config(format!("bad judges file: {e}")))?;
    if judges.judge.is_empty() {
        return Err(Error::Config("judges file declares no judges".into()));
    }
    let verdicts = query_judges(&loaded.records, &judges.judge, &args.cache_dir)?;
    let mut table = CorrectnessTable::new(loaded.records.iter().map(|r| r.id.clone()).collect());
    let row_of: std::collections::HashMap<&str, usize> = loaded
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut nulls = 0usize;
    for config in &judges.judge {
        for sample_index in 0..config.num_samples {
            let name = if config.num_samples == 1 {
                config.judge_id.clone()
            } else {
                format!("{}#{sample_index}", config.judge_id)
            };
            let mut values = vec![None; loaded.records.len()];
            for v in verdicts
                .iter()
                .filter(|v| v.judge_id == config.judge_id && v.sample_index == sample_index)
            {
                if let Some(idx) = row_of.get(v.record_id.as_str()) {
                    values[*idx] = v.verdict.map(f64::from);
                    if v.verdict.is_none() {
                        nulls += 1;
                    }
                }
            }
            table.add_column(name, values)?;
        }
    }
    if nulls > 0 {
        eprintln!("warning: {nulls} null verdicts in the table");
    }
    write_table(&table.to_table()?, &args.out)?;
    println!(
        "collected {} verdicts from {} judges -> {}",
        verdicts.len(),
        judges.judge.len(),
        args.out.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let indicator: Indicator = args.mode.parse()?;
    let loaded = load_records(&args.records)?;
    warn_all(&loaded.warnings);
    let score_rows = scores_from_table(&read_table(&args.scores)?)?;
    let scores = pipeline::index_scores(&score_rows);

    let mut warnings = Vec::new();
    let mut table = match &args.table {
        Some(path) => {
            let file_table = CorrectnessTable::from_table(&read_table(path)?)?;
            pipeline::align_table(&file_table, &loaded.records, &mut warnings)?
        }
        None => CorrectnessTable::new(loaded.records.iter().map(|r| r.id.clone()).collect()),
    };
    let specs: Vec<CorrectnessConfig> = args
        .metrics
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_>>()?;
    pipeline::build_metric_columns(&loaded.records, &specs, &mut table, &mut warnings)?;
    if let Some(path) = &args.write_table {
        write_table(&table.to_table()?, path)?;
    }

    let columns = if args.columns.is_empty() {
        table.column_names()
    } else {
        args.columns.clone()
    };
    let request = pipeline::EvalRequest {
        indicator,
        columns,
        threshold: args.threshold,
        tags: args.tags.iter().cloned().collect::<BTreeSet<String>>(),
        entropy_filter: args.entropy_filter,
        cor_kind: match args.cor.as_str() {
            "spearman" => CorKind::Spearman,
            "pair-auroc" => CorKind::PairAuroc,
            other => {
                return Err(Error::Config(format!(
                    "unknown rank correlation '{other}' (use spearman or pair-auroc)"
                )))
            }
        },
    };
    let outcome = pipeline::evaluate(&loaded.records, &scores, &table, &request)?;
    warn_all(&warnings);
    warn_all(&outcome.warnings);
    write_table(&results_to_table(&outcome.results)?, &args.out)?;
    if let Some(path) = &args.xis_out {
        write_table(&xi_cells_to_table(&outcome.xi_cells)?, path)?;
    }
    println!(
        "evaluated {} result rows ({indicator}) -> {}",
        outcome.results.len(),
        args.out.display()
    );
    Ok(())
}

fn run_perturb(args: PerturbArgs) -> Result<()> {
    let loaded = load_records(&args.records)?;
    warn_all(&loaded.warnings);
    let mut derived = Vec::new();
    for record in &loaded.records {
        derived.extend(generate_grid(record, &args.strengths, args.seed)?);
    }
    write_records(&derived, &args.out)?;
    println!(
        "derived {} perturbed records from {} originals -> {}",
        derived.len(),
        loaded.records.len(),
        args.out.display()
    );
    Ok(())
}

fn run_elo(args: EloArgs) -> Result<()> {
    let mut results = Vec::new();
    for path in &args.results {
        results.extend(results_from_table(&read_table(path)?)?);
    }
    let config = EloConfig {
        k: args.k,
        scale: args.scale,
        ..EloConfig::default()
    };
    let run = run_rating(&results, &args.partition, args.steps, args.seed, config)?;
    let partition_label = if args.partition.is_empty() {
        "all".to_string()
    } else {
        args.partition.join("+")
    };
    write_table(&rating_run_to_table(&run, &partition_label)?, &args.out)?;
    if let Some(path) = &args.trace_out {
        write_table(&trace_to_table(&run)?, path)?;
    }
    println!(
        "rated {} methods over {} cells ({} steps) -> {}",
        run.ratings.len(),
        run.cells_used,
        args.steps,
        args.out.display()
    );
    Ok(())
}

fn run_verify_auroc(args: VerifyAurocArgs) -> Result<()> {
    match args.mode.as_str() {
        "noise" => {
            let targets = if args.aurocs.is_empty() { vec![0.75, 0.9] } else { args.aurocs };
            let ps = if args.ps.is_empty() { vec![0.1, 0.2, 0.3] } else { args.ps };
            let n = args.n.unwrap_or(2000);
            let trials = args.trials.unwrap_or(100);
            let rows = verify_noise_identity(&targets, &ps, n, trials, args.seed)?;
            let mut table = Table::new(
                ["base_auroc", "sample_auroc", "p", "predicted", "empirical_mean", "abs_error", "n", "trials"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            );
            for r in &rows {
                let err = (r.empirical_mean - r.predicted).abs();
                println!(
                    "base {} p {}: predicted {:.4} empirical {:.4} (|err| {:.4})",
                    r.target_auroc, r.p, r.predicted, r.empirical_mean, err
                );
                table.push_row(vec![
                    r.target_auroc.to_string(),
                    r.sample_auroc.to_string(),
                    r.p.to_string(),
                    r.predicted.to_string(),
                    r.empirical_mean.to_string(),
                    err.to_string(),
                    r.n.to_string(),
                    r.trials.to_string(),
                ])?;
            }
            write_table(&table, &args.out)?;
        }
        "bias" => {
            let targets = if args.aurocs.is_empty() { vec![0.6, 0.75, 0.9] } else { args.aurocs };
            let rates = if args.rates.is_empty() { vec![0.1, 0.2, 0.3] } else { args.rates };
            let n = args.n.unwrap_or(1000);
            let trials = args.trials.unwrap_or(120);
            let rows = verify_bias_decomposition(&targets, &rates, n, trials, args.seed)?;
            let mut table = Table::new(
                ["target_auroc", "distortion_rate", "n", "trials", "mean_residual", "sd_residual"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            );
            for r in &rows {
                println!(
                    "target {} rate {}: mean residual {:+.5} (sd {:.5})",
                    r.target_auroc, r.distortion_rate, r.mean_residual, r.sd_residual
                );
                table.push_row(vec![
                    r.target_auroc.to_string(),
                    r.distortion_rate.to_string(),
                    r.n.to_string(),
                    r.trials.to_string(),
                    r.mean_residual.to_string(),
                    r.sd_residual.to_string(),
                ])?;
            }
            write_table(&table, &args.out)?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown verify-auroc mode '{other}' (use noise or bias)"
            )))
        }
    }
    Ok(())
}

fn run_bootstrap_sd(args: BootstrapSdArgs) -> Result<()> {
    let xis: Vec<f64> = if let Some(path) = &args.xis_file {
        if !args.xis.is_empty() {
            return Err(Error::Config("pass either --xis or --xis-file, not both".into()));
        }
        let table = read_table(path)?;
        let idx = table.column_index(&args.column)?;
        table
            .rows
            .iter()
            .map(|row| {
                row[idx]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad ξ value '{}'", row[idx])))
            })
            .collect::<Result<_>>()?
    } else {
        args.xis.clone()
    };
    if xis.is_empty() {
        return Err(Error::Config("no ξ values given".into()));
    }
    let mut table = Table::new(vec!["n".to_string(), "sd".to_string()]);
    for n in 1..=args.n_max {
        let sd = bootstrap_sd(&xis, n, args.trials, args.seed.wrapping_add(n as u64))?;
        println!("n {n}: bootstrap sd {sd:.5}");
        table.push_row(vec![n.to_string(), sd.to_string()])?;
    }
    write_table(&table, &args.out)?;
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<()> {
    match args.kind {
        ReportKind::Agreement { table, out } => {
            let correctness = CorrectnessTable::from_table(&read_table(&table)?)?;
            let matrix = agreement_matrix(&correctness)?;
            write_table(&matrix.to_table()?, &out)?;
            println!("agreement matrix over {} columns -> {}", matrix.labels.len(), out.display());
        }
        ReportKind::Ranking { xis, dataset, model, out } => {
            let mut cells = xi_cells_from_table(&read_table(&xis)?)?;
            if let Some(dataset) = &dataset {
                cells.retain(|c| &c.dataset == dataset);
            }
            if let Some(model) = &model {
                cells.retain(|c| &c.model == model);
            }
            if cells.is_empty() {
                return Err(Error::MissingData("no ξ cells match the filter".into()));
            }
            let matrix = ranking_agreement(&mean_xis_by_column(&cells))?;
            write_table(&matrix.to_table()?, &out)?;
            println!("ranking agreement over {} columns -> {}", matrix.labels.len(), out.display());
        }
        ReportKind::Adversarial { xis, reference, columns, out, detail_out } => {
            let cells = xi_cells_from_table(&read_table(&xis)?)?;
            let pool: Vec<String> = if columns.is_empty() {
                let mut all: Vec<String> = cells.iter().map(|c| c.column.clone()).collect();
                all.sort();
                all.dedup();
                all
            } else {
                columns
            };
            let rows = adversarial_selection(&cells, &pool, &reference)?;
            write_table(&adversarial_to_table(&rows)?, &out)?;
            if let Some(path) = &detail_out {
                write_table(&adversarial_detail_to_table(&rows)?, path)?;
            }
            println!("adversarial report over {} methods -> {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Score(args) => run_score(args),
        Command::Judge(args) => run_judge(args),
        Command::Eval(args) => run_eval(args),
        Command::Perturb(args) => run_perturb(args),
        Command::Elo(args) => run_elo(args),
        Command::VerifyAuroc(args) => run_verify_auroc(args),
        Command::BootstrapSd(args) => run_bootstrap_sd(args),
        Command::Report(args) => run_report(args),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::expand_with_config(argv) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
