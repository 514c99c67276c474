//! Uncertainty-estimation methods.
//!
//! Every scorer is a deterministic function of one [`GenerationRecord`] and
//! returns a real score where higher means more uncertain. Sequence
//! log-probabilities are sums of natural-log token probabilities, so all
//! entropies and NLLs here are in nats.
//!
//! Method inventory:
//!
//! * `predictive_entropy`, `predictive_entropy_ln` — Monte-Carlo mean NLL of
//!   the sampled sequences, optionally length-normalized per sample.
//! * `semantic_entropy[_discrete|_ln]` — mean negative log cluster mass over
//!   the samples' semantic clusters; the discrete variant uses cluster counts,
//!   the others sequence likelihood (optionally length-normalized).
//! * `sentence_sar`, `token_sar`, `sar` — similarity-penalized sequence NLLs
//!   and relevance-weighted token NLLs.
//! * `eigenscore` — mean log eigenvalue of the regularized centered embedding
//!   covariance.
//! * `g_nll`, `perplexity` — single-sequence scores on the decoded answer.
//! * `p_true` — one minus the model's own probability that its answer is true.
//! * `sequence_length_{answer,samples}_{chars,tokens}` — length heuristics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::datamodel::{AnswerSequence, GenerationRecord, SampleGeneration, Table};
use crate::error::{Error, Result};

/// Agreement demanded between the log-det and sum-of-log-eigenvalue routes
/// inside [`eigenscore`].
const EIGENSCORE_FORM_TOL: f64 = 1e-6;

/// Which likelihood enters the semantic-entropy cluster masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SeVariant {
    /// Cluster mass from raw sequence likelihoods, renormalized over samples.
    Likelihood,
    /// Same with length-normalized sequence likelihoods.
    LengthNormalized,
    /// Cluster mass is the cluster's share of the N samples.
    Discrete,
}

/// Whether lengths are measured in characters or tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LengthMode {
    Chars,
    Tokens,
}

/// Which sequence the length heuristic measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LengthSource {
    Answer,
    SamplesMean,
}

/// Identity of an uncertainty-estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    PredictiveEntropy { length_normalized: bool },
    SemanticEntropy { variant: SeVariant },
    SentenceSar,
    TokenSar,
    Sar,
    EigenScore,
    GNll,
    Perplexity,
    PTrue,
    SequenceLength { source: LengthSource, mode: LengthMode },
}

impl Method {
    /// All method ids the toolkit knows, in canonical order.
    pub fn all() -> Vec<Method> {
        use Method::*;
        vec![
            PredictiveEntropy { length_normalized: false },
            PredictiveEntropy { length_normalized: true },
            SemanticEntropy { variant: SeVariant::Likelihood },
            SemanticEntropy { variant: SeVariant::LengthNormalized },
            SemanticEntropy { variant: SeVariant::Discrete },
            SentenceSar,
            TokenSar,
            Sar,
            EigenScore,
            GNll,
            Perplexity,
            PTrue,
            SequenceLength { source: LengthSource::Answer, mode: LengthMode::Chars },
            SequenceLength { source: LengthSource::Answer, mode: LengthMode::Tokens },
            SequenceLength { source: LengthSource::SamplesMean, mode: LengthMode::Chars },
            SequenceLength { source: LengthSource::SamplesMean, mode: LengthMode::Tokens },
        ]
    }

    /// Fields `record` lacks for this method; empty when scoreable.
    pub fn missing_requirements(&self, record: &GenerationRecord) -> Vec<String> {
        let mut missing = Vec::new();
        let n = record.n_samples();
        let needs_samples = |missing: &mut Vec<String>| {
            if n == 0 {
                missing.push("samples (N≥1)".to_string());
            }
        };
        let needs_sample_tokens = |missing: &mut Vec<String>| {
            if record.samples.iter().any(|s| s.token_logprobs.is_empty()) {
                missing.push("samples.token_logprobs (non-empty)".to_string());
            }
        };
        match self {
            Method::PredictiveEntropy { .. } => {
                needs_samples(&mut missing);
                needs_sample_tokens(&mut missing);
            }
            Method::SemanticEntropy { variant } => {
                needs_samples(&mut missing);
                if record.samples.iter().any(|s| s.cluster_id.is_none()) {
                    missing.push("cluster_id (on every sample)".to_string());
                }
                if *variant != SeVariant::Discrete {
                    needs_sample_tokens(&mut missing);
                }
            }
            Method::SentenceSar => {
                needs_samples(&mut missing);
                needs_sample_tokens(&mut missing);
                if record.similarity.sentence_sim.is_none() {
                    missing.push("similarity.sentence_sim".to_string());
                }
            }
            Method::TokenSar => {
                needs_samples(&mut missing);
                needs_sample_tokens(&mut missing);
                if record.samples.iter().any(|s| s.token_relevance.is_none()) {
                    missing.push("token_relevance (on every sample)".to_string());
                }
            }
            Method::Sar => {
                missing.extend(Method::TokenSar.missing_requirements(record));
                if record.similarity.sentence_sim.is_none() {
                    missing.push("similarity.sentence_sim".to_string());
                }
            }
            Method::EigenScore => {
                needs_samples(&mut missing);
                if record.samples.iter().any(|s| s.embedding.is_none()) {
                    missing.push("embedding (on every sample)".to_string());
                }
            }
            Method::GNll | Method::Perplexity => {
                if record.answer.token_logprobs.is_empty() {
                    missing.push("answer.token_logprobs (non-empty)".to_string());
                }
            }
            Method::PTrue => {
                if record.p_true_logprob.is_none() {
                    missing.push("p_true_logprob".to_string());
                }
            }
            Method::SequenceLength { source, .. } => {
                if *source == LengthSource::SamplesMean {
                    needs_samples(&mut missing);
                }
            }
        }
        missing
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::PredictiveEntropy { length_normalized: false } => "predictive_entropy",
            Method::PredictiveEntropy { length_normalized: true } => "predictive_entropy_ln",
            Method::SemanticEntropy { variant: SeVariant::Likelihood } => "semantic_entropy",
            Method::SemanticEntropy { variant: SeVariant::LengthNormalized } => {
                "semantic_entropy_ln"
            }
            Method::SemanticEntropy { variant: SeVariant::Discrete } => "semantic_entropy_discrete",
            Method::SentenceSar => "sentence_sar",
            Method::TokenSar => "token_sar",
            Method::Sar => "sar",
            Method::EigenScore => "eigenscore",
            Method::GNll => "g_nll",
            Method::Perplexity => "perplexity",
            Method::PTrue => "p_true",
            Method::SequenceLength { source, mode } => {
                let s = match (source, mode) {
                    (LengthSource::Answer, LengthMode::Chars) => "sequence_length_answer_chars",
                    (LengthSource::Answer, LengthMode::Tokens) => "sequence_length_answer_tokens",
                    (LengthSource::SamplesMean, LengthMode::Chars) => {
                        "sequence_length_samples_chars"
                    }
                    (LengthSource::SamplesMean, LengthMode::Tokens) => {
                        "sequence_length_samples_tokens"
                    }
                };
                return f.write_str(s);
            }
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::all()
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown method id '{s}'")))
    }
}

/// Hyperparameters a scorer run is configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerConfig {
    pub method: Method,
    /// SentenceSAR/SAR similarity-penalty temperature.
    pub tau: f64,
    /// EigenScore covariance regularizer.
    pub alpha: f64,
}

impl ScorerConfig {
    pub fn new(method: Method) -> Self {
        ScorerConfig {
            method,
            tau: 1.0,
            alpha: 0.001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::Config(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One scored (record, method) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub record_id: String,
    pub method: String,
    pub score: f64,
    pub n_samples_used: usize,
}

// ---------------------------------------------------------------------------
// Individual scorers
// ---------------------------------------------------------------------------

/// Sum of token log-probabilities: log p(y|x,w).
pub fn sequence_logprob(sample: &SampleGeneration) -> Result<f64> {
    if sample.token_logprobs.is_empty() {
        return Err(Error::DegenerateInput(
            "sequence has no token log-probabilities".into(),
        ));
    }
    Ok(sample.token_logprobs.iter().sum())
}

/// Monte-Carlo predictive entropy: (1/N) Σₙ −log p(yⁿ|x,w).
///
/// With `length_normalized`, each term is divided by the sample's token count,
/// which equals the mean log-perplexity over samples.
pub fn predictive_entropy(samples: &[SampleGeneration], length_normalized: bool) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput(
            "predictive entropy needs at least one sample".into(),
        ));
    }
    let mut total = 0.0;
    for s in samples {
        let nll = -sequence_logprob(s)?;
        total += if length_normalized {
            nll / s.token_logprobs.len() as f64
        } else {
            nll
        };
    }
    Ok(total / samples.len() as f64)
}

/// log(Σ exp(xᵢ)) computed stably.
fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Semantic entropy over the samples' cluster assignments:
/// (1/N) Σₙ −log p̂(C(yⁿ)|x,w).
///
/// Cluster masses p̂ are cluster counts over N (`Discrete`) or cluster
/// likelihood mass renormalized by the total sampled mass, computed in
/// log-space so long sequences never underflow.
pub fn semantic_entropy(samples: &[SampleGeneration], variant: SeVariant) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput(
            "semantic entropy needs at least one sample".into(),
        ));
    }
    let mut clusters = Vec::with_capacity(samples.len());
    for s in samples {
        clusters.push(s.cluster_id.ok_or_else(|| Error::Requirement {
            record: String::new(),
            method: "semantic_entropy".into(),
            missing: vec!["cluster_id".into()],
        })?);
    }
    let n = samples.len() as f64;
    let log_mass_of: BTreeMap<u32, f64> = match variant {
        SeVariant::Discrete => {
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for c in &clusters {
                *counts.entry(*c).or_insert(0) += 1;
            }
            counts
                .into_iter()
                .map(|(c, k)| (c, (k as f64 / n).ln()))
                .collect()
        }
        SeVariant::Likelihood | SeVariant::LengthNormalized => {
            let mut log_probs = Vec::with_capacity(samples.len());
            for s in samples {
                let lp = sequence_logprob(s)?;
                log_probs.push(if variant == SeVariant::LengthNormalized {
                    lp / s.token_logprobs.len() as f64
                } else {
                    lp
                });
            }
            let log_total = log_sum_exp(&log_probs);
            let mut per_cluster: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            for (c, lp) in clusters.iter().zip(&log_probs) {
                per_cluster.entry(*c).or_default().push(*lp);
            }
            per_cluster
                .into_iter()
                .map(|(c, lps)| (c, log_sum_exp(&lps) - log_total))
                .collect()
        }
    };
    let total: f64 = clusters.iter().map(|c| -log_mass_of[c]).sum();
    Ok(total / n)
}

fn sim_matrix(sim: &[Vec<f64>], n: usize) -> Result<&[Vec<f64>]> {
    if sim.len() != n || sim.iter().any(|row| row.len() != n) {
        return Err(Error::Shape(format!(
            "similarity matrix side {} does not match sample count {n}",
            sim.len()
        )));
    }
    Ok(sim)
}

/// SentenceSAR: (1/N) Σₙ [ −log p(yⁿ) + (Σ_{k≠n} sim(yⁿ,yᵏ)·p(yᵏ)) / τ ].
pub fn sentence_sar(samples: &[SampleGeneration], sim: &[Vec<f64>], tau: f64) -> Result<f64> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    if samples.is_empty() {
        return Err(Error::DegenerateInput(
            "sentence_sar needs at least one sample".into(),
        ));
    }
    let sim = sim_matrix(sim, samples.len())?;
    let log_probs: Vec<f64> = samples
        .iter()
        .map(sequence_logprob)
        .collect::<Result<_>>()?;
    sar_combine(&log_probs.iter().map(|lp| -lp).collect::<Vec<_>>(), sim, tau)
}

/// TokenSAR: relevance-weighted average of token NLLs.
pub fn token_sar(sample: &SampleGeneration) -> Result<f64> {
    let relevance = sample.token_relevance.as_ref().ok_or_else(|| {
        Error::Requirement {
            record: String::new(),
            method: "token_sar".into(),
            missing: vec!["token_relevance".into()],
        }
    })?;
    if relevance.len() != sample.token_logprobs.len() {
        return Err(Error::Shape(format!(
            "token_relevance length {} does not match token_logprobs length {}",
            relevance.len(),
            sample.token_logprobs.len()
        )));
    }
    if sample.token_logprobs.is_empty() {
        return Err(Error::DegenerateInput("sequence has no tokens".into()));
    }
    let total_relevance: f64 = relevance.iter().sum();
    if total_relevance <= 0.0 {
        return Err(Error::DegenerateInput(
            "token relevance weights sum to zero".into(),
        ));
    }
    Ok(sample
        .token_logprobs
        .iter()
        .zip(relevance)
        .map(|(lp, r)| -lp * r)
        .sum::<f64>()
        / total_relevance)
}

/// SAR: the SentenceSAR combination applied to TokenSAR-weighted NLLs, i.e.
/// each −log p(yⁿ) is replaced by token_sar(yⁿ) and each p(yᵏ) by
/// exp(−token_sar(yᵏ)).
pub fn sar(samples: &[SampleGeneration], sim: &[Vec<f64>], tau: f64) -> Result<f64> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    if samples.is_empty() {
        return Err(Error::DegenerateInput("sar needs at least one sample".into()));
    }
    let sim = sim_matrix(sim, samples.len())?;
    let nlls: Vec<f64> = samples.iter().map(token_sar).collect::<Result<_>>()?;
    sar_combine(&nlls, sim, tau)
}

/// Shared SentenceSAR-shaped combination over per-sample NLLs.
fn sar_combine(nlls: &[f64], sim: &[Vec<f64>], tau: f64) -> Result<f64> {
    let n = nlls.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut penalty = 0.0;
        for k in 0..n {
            if k != i {
                penalty += sim[i][k] * (-nlls[k]).exp();
            }
        }
        total += nlls[i] + penalty / tau;
    }
    Ok(total / n as f64)
}

/// EigenScore: (1/N) Σₖ log λₖ of (Σ + αI_N) with Σ = Zᵀ·J_d·Z, where Z is
/// the d×N matrix of sample embeddings and J_d = I_d − (1/d)·1_d centers the
/// embedding coordinates.
///
/// The log-det and sum-of-log-eigenvalue routes are both evaluated and must
/// agree to 1e−6; disagreement is reported as a numerical error.
pub fn eigenscore(samples: &[SampleGeneration], alpha: f64) -> Result<f64> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
    }
    if samples.is_empty() {
        return Err(Error::DegenerateInput(
            "eigenscore needs at least one sample".into(),
        ));
    }
    let n = samples.len();
    let mut dim = None;
    let mut columns: Vec<&[f64]> = Vec::with_capacity(n);
    for s in samples {
        let e = s.embedding.as_deref().ok_or_else(|| Error::Requirement {
            record: String::new(),
            method: "eigenscore".into(),
            missing: vec!["embedding".into()],
        })?;
        match dim {
            None => dim = Some(e.len()),
            Some(d) if d != e.len() => {
                return Err(Error::Shape(format!(
                    "embedding dimensions differ: {d} vs {}",
                    e.len()
                )))
            }
            _ => {}
        }
        columns.push(e);
    }
    let d = dim.unwrap();
    if d == 0 {
        return Err(Error::DegenerateInput("embeddings are empty vectors".into()));
    }
    // J_d·Z subtracts each column's coordinate mean; Σ = (J_d·Z)ᵀ(J_d·Z)
    // because the centering matrix is idempotent.
    let centered = DMatrix::from_fn(d, n, |a, k| {
        let mean = columns[k].iter().sum::<f64>() / d as f64;
        columns[k][a] - mean
    });
    let mut reg = centered.transpose() * &centered;
    for k in 0..n {
        reg[(k, k)] += alpha;
    }
    let eigenvalues = reg
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .collect::<Vec<f64>>();
    if eigenvalues.iter().any(|l| !l.is_finite() || *l <= 0.0) {
        return Err(Error::Numerical(
            "regularized covariance has a non-positive or non-finite eigenvalue".into(),
        ));
    }
    let sum_logs = eigenvalues.iter().map(|l| l.ln()).sum::<f64>() / n as f64;
    let log_det = reg
        .cholesky()
        .map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() / n as f64)
        .ok_or_else(|| Error::Numerical("regularized covariance is not positive definite".into()))?;
    if (sum_logs - log_det).abs() > EIGENSCORE_FORM_TOL {
        return Err(Error::Numerical(format!(
            "eigenscore routes disagree: sum-of-logs {sum_logs} vs log-det {log_det}"
        )));
    }
    Ok(sum_logs)
}

/// G-NLL: negated log-probability sum of the greedily decoded answer.
pub fn g_nll(answer: &AnswerSequence) -> Result<f64> {
    if answer.token_logprobs.is_empty() {
        return Err(Error::DegenerateInput("answer has no tokens".into()));
    }
    Ok(-answer.token_logprobs.iter().sum::<f64>())
}

/// Perplexity: exp of the mean token NLL.
pub fn perplexity(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::DegenerateInput("sequence has no tokens".into()));
    }
    let mean_nll = -token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok(mean_nll.exp())
}

/// P(True) uncertainty: 1 − exp(log p("True")).
pub fn p_true(record: &GenerationRecord) -> Result<f64> {
    let lp = record.p_true_logprob.ok_or_else(|| Error::Requirement {
        record: record.id.clone(),
        method: "p_true".into(),
        missing: vec!["p_true_logprob".into()],
    })?;
    if lp > 0.0 {
        return Err(Error::Validation {
            record: record.id.clone(),
            field: "p_true_logprob".into(),
            msg: format!("must be ≤ 0, got {lp}"),
        });
    }
    Ok(1.0 - lp.exp())
}

/// Length heuristic: characters or tokens of the answer, or the mean over
/// samples.
pub fn sequence_length(
    record: &GenerationRecord,
    source: LengthSource,
    mode: LengthMode,
) -> Result<f64> {
    let measure = |text: &str, logprobs: &[f64]| -> f64 {
        match mode {
            LengthMode::Chars => text.chars().count() as f64,
            LengthMode::Tokens => logprobs.len() as f64,
        }
    };
    match source {
        LengthSource::Answer => Ok(measure(&record.answer.text, &record.answer.token_logprobs)),
        LengthSource::SamplesMean => {
            if record.samples.is_empty() {
                return Err(Error::Requirement {
                    record: record.id.clone(),
                    method: "sequence_length".into(),
                    missing: vec!["samples (N≥1)".into()],
                });
            }
            let total: f64 = record
                .samples
                .iter()
                .map(|s| measure(&s.text, &s.token_logprobs))
                .sum();
            Ok(total / record.samples.len() as f64)
        }
    }
}

/// Scores one record with one configured method.
pub fn score_record(record: &GenerationRecord, config: &ScorerConfig) -> Result<ScoreRow> {
    config.validate()?;
    let n = record.n_samples();
    let sim = record.similarity.sentence_sim.as_deref();
    let need_sim = || -> Result<&[Vec<f64>]> {
        sim.ok_or_else(|| Error::Requirement {
            record: record.id.clone(),
            method: config.method.to_string(),
            missing: vec!["similarity.sentence_sim".into()],
        })
    };
    let (score, n_used) = match config.method {
        Method::PredictiveEntropy { length_normalized } => {
            (predictive_entropy(&record.samples, length_normalized)?, n)
        }
        Method::SemanticEntropy { variant } => (semantic_entropy(&record.samples, variant)?, n),
        Method::SentenceSar => (sentence_sar(&record.samples, need_sim()?, config.tau)?, n),
        Method::TokenSar => {
            // Record-level TokenSAR: relevance weights live on the samples,
            // so the record score is the mean over sampled sequences.
            if record.samples.is_empty() {
                return Err(Error::DegenerateInput(
                    "token_sar needs at least one sample".into(),
                ));
            }
            let total: f64 = record
                .samples
                .iter()
                .map(token_sar)
                .collect::<Result<Vec<_>>>()?
                .iter()
                .sum();
            (total / n as f64, n)
        }
        Method::Sar => (sar(&record.samples, need_sim()?, config.tau)?, n),
        Method::EigenScore => (eigenscore(&record.samples, config.alpha)?, n),
        Method::GNll => (g_nll(&record.answer)?, 0),
        Method::Perplexity => (perplexity(&record.answer.token_logprobs)?, 0),
        Method::PTrue => (p_true(record)?, 0),
        Method::SequenceLength { source, mode } => {
            let used = if source == LengthSource::SamplesMean { n } else { 0 };
            (sequence_length(record, source, mode)?, used)
        }
    };
    if !score.is_finite() {
        return Err(Error::Numerical(format!(
            "{} produced non-finite score {score} on record '{}'",
            config.method, record.id
        )));
    }
    Ok(ScoreRow {
        record_id: record.id.clone(),
        method: config.method.to_string(),
        score,
        n_samples_used: n_used,
    })
}

/// A (record, method) pair left unscored, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedScore {
    pub record_id: String,
    pub method: String,
    pub reason: String,
}

/// Output of [`score_all`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreOutcome {
    pub rows: Vec<ScoreRow>,
    pub skipped: Vec<SkippedScore>,
}

/// Scores every record with every configured method. Records missing a
/// method's requirements (or degenerate for it) are skipped with a reason;
/// rows come back sorted by (record id, method).
pub fn score_all(records: &[GenerationRecord], configs: &[ScorerConfig]) -> Result<ScoreOutcome> {
    for c in configs {
        c.validate()?;
    }
    let mut outcome = ScoreOutcome::default();
    for record in records {
        for config in configs {
            match score_record(record, config) {
                Ok(row) => outcome.rows.push(row),
                Err(e @ (Error::Requirement { .. }
                | Error::DegenerateInput(_)
                | Error::Numerical(_)
                | Error::Shape(_))) => outcome.skipped.push(SkippedScore {
                    record_id: record.id.clone(),
                    method: config.method.to_string(),
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    outcome
        .rows
        .sort_by(|a, b| (&a.record_id, &a.method).cmp(&(&b.record_id, &b.method)));
    outcome
        .skipped
        .sort_by(|a, b| (&a.record_id, &a.method).cmp(&(&b.record_id, &b.method)));
    Ok(outcome)
}

/// Header of the scores table format.
pub const SCORES_HEADER: [&str; 4] = ["record_id", "method", "score", "n_samples_used"];

/// Converts score rows to the `record_id,method,score,n_samples_used` table.
pub fn scores_to_table(rows: &[ScoreRow]) -> Result<Table> {
    let mut table = Table::new(SCORES_HEADER.iter().map(|s| s.to_string()).collect());
    for r in rows {
        table.push_row(vec![
            r.record_id.clone(),
            r.method.clone(),
            r.score.to_string(),
            r.n_samples_used.to_string(),
        ])?;
    }
    Ok(table)
}

/// Parses a scores table back into rows.
pub fn scores_from_table(table: &Table) -> Result<Vec<ScoreRow>> {
    if table.header != SCORES_HEADER {
        return Err(Error::Shape(format!(
            "unexpected scores header {:?}",
            table.header
        )));
    }
    table
        .rows
        .iter()
        .map(|row| {
            Ok(ScoreRow {
                record_id: row[0].clone(),
                method: row[1].clone(),
                score: row[2]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad score '{}'", row[2])))?,
                n_samples_used: row[3]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad sample count '{}'", row[3])))?,
            })
        })
        .collect()
}
