//! Word-shuffle perturbations of record contexts at controlled strengths.
//!
//! A strength s displaces ⌊s·W⌋ of the W whitespace-separated words: the
//! selected positions are drawn uniformly without replacement and the selected
//! words are uniformly permuted among them (not a derangement, so a selected
//! word may land back in place). Output is rejoined with single spaces.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{AnswerSequence, GenerationRecord};
use crate::error::{Error, Result};
use crate::riskmetrics::mix_seed;

/// Shuffles a strength-controlled fraction of the words of `text`;
/// deterministic per seed.
pub fn shuffle_words(text: &str, strength: f64, seed: u64) -> Result<String> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Config(format!(
            "perturbation strength must be in [0,1], got {strength}"
        )));
    }
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let displaced = (strength * words.len() as f64).floor() as usize;
    if displaced >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions = rand::seq::index::sample(&mut rng, words.len(), displaced).into_vec();
        positions.sort_unstable();
        let mut selected: Vec<&str> = positions.iter().map(|&p| words[p]).collect();
        selected.shuffle(&mut rng);
        for (pos, word) in positions.into_iter().zip(selected) {
            words[pos] = word;
        }
    }
    Ok(words.join(" "))
}

/// Formats a strength for use in derived record ids.
fn strength_suffix(strength: f64) -> String {
    format!("{strength}")
}

/// Derives one record per strength with a shuffled context.
///
/// The strength grid must be duplicate-free and contain 0 so the unperturbed
/// point is part of every series. Derived records keep the question and
/// references, get `perturbation_strength` set and a strength-stamped id, and
/// have their answer, samples, and answer-derived labels cleared: outputs must
/// be regenerated externally and re-ingested before scoring.
pub fn generate_grid(
    record: &GenerationRecord,
    strengths: &[f64],
    seed: u64,
) -> Result<Vec<GenerationRecord>> {
    let context = record.context.as_deref().ok_or_else(|| Error::Requirement {
        record: record.id.clone(),
        method: "perturbation".into(),
        missing: vec!["context".into()],
    })?;
    let mut sorted = strengths.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    if sorted.len() != strengths.len() {
        return Err(Error::Config("perturbation strengths must be distinct".into()));
    }
    if !strengths.contains(&0.0) {
        return Err(Error::Config("perturbation strengths must include 0".into()));
    }
    let mut derived = Vec::with_capacity(strengths.len());
    for &strength in strengths {
        let sub_seed = mix_seed(seed, &[strength.to_bits()]);
        let mut out = record.clone();
        out.id = format!("{}::s{}", record.id, strength_suffix(strength));
        out.context = Some(shuffle_words(context, strength, sub_seed)?);
        out.perturbation_strength = Some(strength);
        out.answer = AnswerSequence {
            text: String::new(),
            token_logprobs: Vec::new(),
        };
        out.samples.clear();
        out.similarity = Default::default();
        out.p_true_logprob = None;
        out.exact_correct = None;
        derived.push(out);
    }
    Ok(derived)
}

/// Splits a derived id back into (base id, strength suffix), if stamped.
pub fn split_perturbed_id(id: &str) -> Option<(&str, &str)> {
    id.rsplit_once("::s")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn word_multiset(text: &str) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for w in text.split_whitespace() {
            *counts.entry(w).or_insert(0) += 1;
        }
        counts
    }

    #[test]
    fn strength_zero_is_identity_modulo_whitespace() {
        assert_eq!(shuffle_words("a  b\tc", 0.0, 1).unwrap(), "a b c");
    }

    #[test]
    fn multiset_is_preserved_at_any_strength() {
        let text = "the quick brown fox jumps over the lazy dog";
        for (i, strength) in [0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            let out = shuffle_words(text, *strength, i as u64).unwrap();
            assert_eq!(word_multiset(&out), word_multiset(text));
        }
    }

    #[test]
    fn full_strength_is_a_permutation_and_deterministic() {
        let out1 = shuffle_words("a b c", 1.0, 42).unwrap();
        let out2 = shuffle_words("a b c", 1.0, 42).unwrap();
        assert_eq!(out1, out2);
        assert_eq!(word_multiset(&out1), word_multiset("a b c"));
    }

    #[test]
    fn empty_text_stays_empty() {
        assert_eq!(shuffle_words("", 1.0, 7).unwrap(), "");
    }

    fn record() -> GenerationRecord {
        GenerationRecord {
            id: "base".into(),
            dataset: "d".into(),
            model: "m".into(),
            question: "q".into(),
            context: Some("one two three four".into()),
            references: vec!["r".into()],
            answer: AnswerSequence {
                text: "a".into(),
                token_logprobs: vec![-1.0],
            },
            samples: vec![],
            similarity: Default::default(),
            p_true_logprob: Some(-0.5),
            ood_label: Some(0),
            exact_correct: Some(1),
            perturbation_strength: None,
            sampling_temperature: 1.0,
        }
    }

    #[test]
    fn grid_produces_stamped_records() {
        let grid = generate_grid(&record(), &[0.0, 0.5, 1.0], 9).unwrap();
        assert_eq!(grid.len(), 3);
        assert_eq!(grid[0].id, "base::s0");
        assert_eq!(grid[0].context.as_deref(), Some("one two three four"));
        assert_eq!(grid[1].perturbation_strength, Some(0.5));
        assert!(grid.iter().all(|r| r.samples.is_empty()));
        assert!(grid.iter().all(|r| r.answer.token_logprobs.is_empty()));
        let ids: std::collections::BTreeSet<_> = grid.iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn grid_is_deterministic_per_seed() {
        let a = generate_grid(&record(), &[0.0, 0.5, 1.0], 9).unwrap();
        let b = generate_grid(&record(), &[0.0, 0.5, 1.0], 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_requires_context_and_zero_strength() {
        let mut r = record();
        r.context = None;
        assert!(matches!(
            generate_grid(&r, &[0.0, 0.5], 9),
            Err(Error::Requirement { .. })
        ));
        assert!(generate_grid(&record(), &[0.5, 1.0], 9).is_err());
        assert!(generate_grid(&record(), &[0.0, 0.5, 0.5], 9).is_err());
    }

    #[test]
    fn perturbed_ids_split_back() {
        assert_eq!(split_perturbed_id("base::s0.25"), Some(("base", "0.25")));
        assert_eq!(split_perturbed_id("plain"), None);
    }
}
