//! LLM-as-a-judge client: prompt rendering, verdict parsing, and a cached,
//! concurrency-limited HTTP layer for querying judge endpoints.
//!
//! Verdicts are cached append-only, one line-delimited JSON file per judge
//! configuration, keyed by a hash of (model, rendered prompt, temperature,
//! sample index). A rerun with an intact cache performs no network I/O and
//! reproduces the verdict set bit-for-bit.
//!
//! The wire protocol is a minimal completion endpoint: HTTP POST of
//! `{model, prompt, temperature, max_tokens}`, response `{"text": "..."}`.
//! An auth token is read from the `UQEVAL_JUDGE_TOKEN` environment variable
//! and sent as a bearer header when present.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::GenerationRecord;
use crate::error::{Error, Result};

/// Environment variable holding the judge endpoint bearer token.
pub const TOKEN_ENV_VAR: &str = "UQEVAL_JUDGE_TOKEN";

/// QA-style prompt: asks whether the proposed answer means the same as the
/// expected one.
pub const QA_TEMPLATE: &str = "We are assessing the quality of answers\n\
to the following question: {question}\n\
The expected answer is: {correct_answer}.\n\
The proposed answer is: {predicted_answer}\n\
Within the context of the question,\n\
does the proposed answer mean the same as the expected answer?\n\
Respond only with yes or no.\n\
Response:";

/// General prompt variant: asks whether the proposed answer is correct given
/// example answers.
pub const GEN_TEMPLATE: &str = "We are assessing the quality of answers\n\
to the following question: {question}\n\
The following are example answers: {correct_answer}.\n\
The proposed answer is: {predicted_answer}\n\
Within the context of the question and example answer,\n\
is the proposed answer correct?\n\
Respond only with yes or no.\n\
Response:";

/// Which prompt template a judge uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptTemplate {
    Qa,
    Gen,
}

impl PromptTemplate {
    pub fn text(&self) -> &'static str {
        match self {
            PromptTemplate::Qa => QA_TEMPLATE,
            PromptTemplate::Gen => GEN_TEMPLATE,
        }
    }
}

fn default_max_tokens() -> u32 {
    8
}

fn default_parallelism() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    30
}

/// One judge configuration θ_k: model, prompt, temperature, endpoint, and
/// sampling/transport limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub judge_id: String,
    pub model_name: String,
    pub prompt_template: PromptTemplate,
    pub temperature: f64,
    pub endpoint_url: String,
    pub num_samples: u32,
    #[serde(default)]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism_limit: usize,
    /// Maximum completion tokens requested; judge replies are a few tokens.
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.judge_id.is_empty() {
            return Err(Error::Config("judge_id must not be empty".into()));
        }
        if self.num_samples < 1 {
            return Err(Error::Config("num_samples must be ≥ 1".into()));
        }
        if self.parallelism_limit < 1 {
            return Err(Error::Config("parallelism_limit must be ≥ 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::Config(format!(
                "temperature must be ≥ 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One judge invocation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub record_id: String,
    pub judge_id: String,
    pub sample_index: u32,
    pub raw_text: String,
    /// 1 = yes, 0 = no, null = neither token present (or the call failed).
    pub verdict: Option<u8>,
    /// Unix seconds when the verdict was produced.
    pub timestamp: u64,
    /// Failure annotation for null verdicts caused by transport problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Renders a judge prompt with `{question}`, `{correct_answer}`, and
/// `{predicted_answer}` substituted; multiple references join with "; ".
pub fn render_prompt(
    template: PromptTemplate,
    question: &str,
    references: &[String],
    predicted: &str,
) -> Result<String> {
    if question.is_empty() {
        return Err(Error::Validation {
            record: String::new(),
            field: "question".into(),
            msg: "judge prompts need a non-empty question".into(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Validation {
            record: String::new(),
            field: "predicted_answer".into(),
            msg: "judge prompts need a non-empty predicted answer".into(),
        });
    }
    if references.is_empty() || references.iter().all(|r| r.is_empty()) {
        return Err(Error::Validation {
            record: String::new(),
            field: "references".into(),
            msg: "judge prompts need at least one reference answer".into(),
        });
    }
    let joined = references.join("; ");
    Ok(template
        .text()
        .replace("{question}", question)
        .replace("{correct_answer}", &joined)
        .replace("{predicted_answer}", predicted))
}

/// Maps a raw judge completion to a verdict: any "yes" word means 1, else any
/// "no" word means 0, otherwise null. "yes" wins when both appear.
pub fn parse_verdict(raw_text: &str) -> Option<u8> {
    let lowered = raw_text.to_lowercase();
    let mut saw_no = false;
    for word in lowered.split(|c: char| !c.is_alphanumeric()) {
        match word {
            "yes" => return Some(1),
            "no" => saw_no = true,
            _ => {}
        }
    }
    if saw_no {
        Some(0)
    } else {
        None
    }
}

/// Cache key: hash of everything that determines a completion.
pub fn cache_key(model_name: &str, prompt: &str, temperature: f64, sample_index: u32) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_name.as_bytes());
    hasher.update([0x1f]);
    hasher.update(prompt.as_bytes());
    hasher.update([0x1f]);
    hasher.update(temperature.to_le_bytes());
    hasher.update(sample_index.to_le_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    cache_key: String,
    record_id: String,
    judge_id: String,
    sample_index: u32,
    raw_text: String,
    verdict: Option<u8>,
    timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl CacheEntry {
    fn into_verdict(self) -> JudgeVerdict {
        JudgeVerdict {
            record_id: self.record_id,
            judge_id: self.judge_id,
            sample_index: self.sample_index,
            raw_text: self.raw_text,
            verdict: self.verdict,
            timestamp: self.timestamp,
            error: self.error,
        }
    }
}

fn cache_path(cache_dir: &Path, judge_id: &str) -> PathBuf {
    cache_dir.join(format!("{judge_id}.jsonl"))
}

fn load_cache(path: &Path) -> Result<HashMap<String, CacheEntry>> {
    let mut entries = HashMap::new();
    if !path.exists() {
        return Ok(entries);
    }
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: CacheEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        entries.insert(entry.cache_key.clone(), entry);
    }
    Ok(entries)
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Performs one completion call with bounded exponential-backoff retries.
/// Transport failures and malformed responses come back as `Err(annotation)`.
fn complete_with_retries(
    client: &reqwest::blocking::Client,
    config: &JudgeConfig,
    prompt: &str,
    token: Option<&str>,
) -> std::result::Result<String, String> {
    let request = CompletionRequest {
        model: &config.model_name,
        prompt,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };
    let mut last_error = String::new();
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(100u64 << (attempt - 1).min(6)));
        }
        let mut builder = client.post(&config.endpoint_url).json(&request);
        if let Some(token) = token {
            builder = builder.bearer_auth(token);
        }
        match builder.send() {
            Ok(response) => {
                let status = response.status();
                if status.is_success() {
                    // A 2xx body that fails to parse is a protocol problem;
                    // retrying would not change it.
                    return match response.json::<CompletionResponse>() {
                        Ok(body) => Ok(body.text),
                        Err(e) => Err(format!("malformed endpoint response: {e}")),
                    };
                }
                last_error = format!("endpoint returned status {status}");
            }
            Err(e) => last_error = format!("transport failure: {e}"),
        }
    }
    Err(format!(
        "exhausted {} retries: {last_error}",
        config.max_retries
    ))
}

struct PendingCall {
    key: String,
    record_id: String,
    sample_index: u32,
    prompt: String,
}

/// Queries every (record, judge config, sample index) combination, serving
/// hits from the per-judge cache and fanning misses out over up to
/// `parallelism_limit` worker threads per config.
///
/// Exactly one verdict per combination comes back, sorted by
/// (record id, judge id, sample index). Failed invocations yield null verdicts
/// with an error annotation rather than aborting the batch. Records whose
/// prompt cannot be rendered (empty question/answer/references) also yield
/// annotated null verdicts, without touching network or cache.
pub fn query_judges(
    records: &[GenerationRecord],
    configs: &[JudgeConfig],
    cache_dir: impl AsRef<Path>,
) -> Result<Vec<JudgeVerdict>> {
    let cache_dir = cache_dir.as_ref();
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    for config in configs {
        config.validate()?;
    }
    let token = std::env::var(TOKEN_ENV_VAR).ok();
    let mut verdicts: Vec<JudgeVerdict> = Vec::new();

    for config in configs {
        let path = cache_path(cache_dir, &config.judge_id);
        let cache = load_cache(&path)?;
        let mut pending: Vec<PendingCall> = Vec::new();

        for record in records {
            let rendered = render_prompt(
                config.prompt_template,
                &record.question,
                &record.references,
                &record.answer.text,
            );
            for sample_index in 0..config.num_samples {
                match &rendered {
                    Ok(prompt) => {
                        let key = cache_key(
                            &config.model_name,
                            prompt,
                            config.temperature,
                            sample_index,
                        );
                        if let Some(entry) = cache.get(&key) {
                            verdicts.push(entry.clone().into_verdict());
                        } else {
                            pending.push(PendingCall {
                                key,
                                record_id: record.id.clone(),
                                sample_index,
                                prompt: prompt.clone(),
                            });
                        }
                    }
                    Err(e) => verdicts.push(JudgeVerdict {
                        record_id: record.id.clone(),
                        judge_id: config.judge_id.clone(),
                        sample_index,
                        raw_text: String::new(),
                        verdict: None,
                        timestamp: now_unix(),
                        error: Some(format!("prompt not renderable: {e}")),
                    }),
                }
            }
        }

        if pending.is_empty() {
            continue;
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let mut writer = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let queue = Mutex::new(pending);
        let (tx, rx) = mpsc::channel::<CacheEntry>();
        let workers = config
            .parallelism_limit
            .min(queue.lock().unwrap().len())
            .max(1);
        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..workers {
                let tx = tx.clone();
                let client = &client;
                let queue = &queue;
                let token = token.as_deref();
                scope.spawn(move || loop {
                    let call = match queue.lock().unwrap().pop() {
                        Some(call) => call,
                        None => break,
                    };
                    let (raw_text, error) =
                        match complete_with_retries(client, config, &call.prompt, token) {
                            Ok(text) => (text, None),
                            Err(annotation) => (String::new(), Some(annotation)),
                        };
                    let verdict = if error.is_none() {
                        parse_verdict(&raw_text)
                    } else {
                        None
                    };
                    let entry = CacheEntry {
                        cache_key: call.key,
                        record_id: call.record_id,
                        judge_id: config.judge_id.clone(),
                        sample_index: call.sample_index,
                        raw_text,
                        verdict,
                        timestamp: now_unix(),
                        error,
                    };
                    if tx.send(entry).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            // Single writer: append entries as they complete.
            for entry in rx.iter() {
                let line = serde_json::to_string(&entry)
                    .map_err(|e| Error::Numerical(e.to_string()))?;
                writeln!(writer, "{line}").map_err(|e| Error::io(&path, e))?;
                verdicts.push(entry.into_verdict());
            }
            writer.flush().map_err(|e| Error::io(&path, e))?;
            Ok(())
        })?;
    }

    verdicts.sort_by(|a, b| {
        (&a.record_id, &a.judge_id, a.sample_index).cmp(&(
            &b.record_id,
            &b.judge_id,
            b.sample_index,
        ))
    });
    Ok(verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qa_prompt_renders_byte_exactly() {
        let rendered = render_prompt(
            PromptTemplate::Qa,
            "Q",
            &["A".to_string()],
            "B",
        )
        .unwrap();
        let expected = "We are assessing the quality of answers\n\
to the following question: Q\n\
The expected answer is: A.\n\
The proposed answer is: B\n\
Within the context of the question,\n\
does the proposed answer mean the same as the expected answer?\n\
Respond only with yes or no.\n\
Response:";
        assert_eq!(rendered, expected);
        assert!(rendered.contains("does the proposed answer mean the same as the expected answer?"));
    }

    #[test]
    fn gen_prompt_contains_its_question() {
        let rendered = render_prompt(
            PromptTemplate::Gen,
            "Q",
            &["A".to_string()],
            "B",
        )
        .unwrap();
        assert!(rendered.contains("is the proposed answer correct?"));
        assert!(rendered.contains("The following are example answers: A."));
    }

    #[test]
    fn multiple_references_join_with_semicolons() {
        let rendered = render_prompt(
            PromptTemplate::Qa,
            "Q",
            &["A".to_string(), "A2".to_string()],
            "B",
        )
        .unwrap();
        assert!(rendered.contains("The expected answer is: A; A2."));
    }

    #[test]
    fn empty_fields_rejected() {
        assert!(render_prompt(PromptTemplate::Qa, "", &["A".into()], "B").is_err());
        assert!(render_prompt(PromptTemplate::Qa, "Q", &[], "B").is_err());
        assert!(render_prompt(PromptTemplate::Qa, "Q", &["A".into()], "").is_err());
    }

    #[test]
    fn verdict_parse_rule() {
        assert_eq!(parse_verdict("Yes."), Some(1));
        assert_eq!(parse_verdict("no"), Some(0));
        assert_eq!(parse_verdict("maybe"), None);
        assert_eq!(parse_verdict("Yes, correct"), Some(1));
        assert_eq!(parse_verdict("yes means anything"), Some(1));
        // "yes" wins when both tokens appear.
        assert_eq!(parse_verdict("no, wait — yes"), Some(1));
        assert_eq!(parse_verdict("Noted"), None);
        assert_eq!(parse_verdict(""), None);
    }

    #[test]
    fn cache_keys_separate_inputs() {
        let base = cache_key("m", "p", 0.5, 0);
        assert_eq!(base, cache_key("m", "p", 0.5, 0));
        assert_ne!(base, cache_key("m", "p", 0.5, 1));
        assert_ne!(base, cache_key("m", "p", 1.0, 0));
        assert_ne!(base, cache_key("m2", "p", 0.5, 0));
        assert_ne!(base, cache_key("m", "p2", 0.5, 0));
    }
}
