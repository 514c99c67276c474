//! Uncertainty-estimation evaluation toolkit for natural language generation.
//!
//! The crate ingests generation logs (prompts with decoded answers, sampled
//! sequences, token log-probabilities, and optional embeddings, cluster
//! assignments, and similarity matrices) and provides:
//!
//! * [`scorers`] — the uncertainty-estimation methods themselves, from
//!   predictive and semantic entropy through SAR variants, EigenScore, G-NLL,
//!   perplexity, P(True), and length heuristics.
//! * [`correctness`] — exact and approximate correctness functions (ROUGE,
//!   BLEU, threshold binarization) and judge-verdict aggregation (MoJI).
//! * [`judge`] — a cached LLM-as-a-judge client with the evaluation prompts
//!   and the yes/no parse rule.
//! * [`riskmetrics`] — sample AUROC with tie handling, Spearman, the
//!   selective-prediction objectives ξ_SP and ξ_SP-MoJI, OOD and perturbation
//!   objectives, label-noise/label-bias identities with synthetic
//!   verification, and bootstrap SDs of judge ensembles.
//! * [`perturbation`] — seeded word-shuffle perturbations of record contexts.
//! * [`elo`] — Elo aggregation of experiment grids into per-method ratings.
//! * [`report`] — agreement matrices, ranking agreement, and adversarial
//!   correctness selection.
//!
//! Everything stochastic takes an explicit seed and all file formats are
//! plain line-delimited JSON or comma-separated tables, so every pipeline run
//! is reproducible byte-for-byte.

pub mod correctness;
pub mod datamodel;
pub mod elo;
pub mod error;
pub mod judge;
pub mod perturbation;
pub mod report;
pub mod riskmetrics;
pub mod scorers;

pub use error::{Error, Result};
