//! Integration tests for the command-line surface: exit codes, file formats,
//! judge caching against a stub endpoint, and cross-mode consistency.

mod common;

use std::fs;

use common::{data_dir, run, StubEndpoint};
use uqeval::datamodel::{load_records, read_table};
use uqeval::judge::{query_judges, JudgeConfig, PromptTemplate};

fn corpus() -> String {
    data_dir().join("synthetic_log.jsonl").display().to_string()
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let (code, _, stderr) = run(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_one() {
    let (code, _, _) = run(&["elo", "--no-such-flag", "x"]);
    assert_eq!(code, 1);
}

#[test]
fn help_exits_zero() {
    let (code, stdout, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("score"));
}

#[test]
fn missing_input_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scores.csv");
    let (code, _, stderr) = run(&[
        "score",
        "--records",
        "/nonexistent/log.jsonl",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn invalid_record_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    fs::write(
        &log,
        "{\"id\":\"x\",\"dataset\":\"d\",\"model\":\"m\",\"question\":\"q\",\
         \"answer\":{\"text\":\"a\",\"token_logprobs\":[0.5]},\"sampling_temperature\":1.0}\n",
    )
    .unwrap();
    let out = dir.path().join("scores.csv");
    let (code, _, stderr) = run(&[
        "score",
        "--records",
        log.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(stderr.contains("token log-probability"), "stderr: {stderr}");
}

#[test]
fn score_then_eval_sp_moji_k1_matches_sp_values() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    let (code, _, _) = run(&[
        "score",
        "--records",
        &corpus(),
        "--methods",
        "perplexity,g_nll,p_true",
        "--out",
        scores.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let sp = dir.path().join("sp.csv");
    let moji = dir.path().join("moji.csv");
    for (mode, out) in [("sp", &sp), ("sp-moji", &moji)] {
        let (code, _, stderr) = run(&[
            "eval",
            "--mode",
            mode,
            "--records",
            &corpus(),
            "--scores",
            scores.to_str().unwrap(),
            "--metrics",
            "rouge_1@0.5",
            "--columns",
            "rouge_1@0.5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "stderr: {stderr}");
    }
    let sp_table = read_table(&sp).unwrap();
    let moji_table = read_table(&moji).unwrap();
    assert_eq!(sp_table.rows.len(), moji_table.rows.len());
    for (a, b) in sp_table.rows.iter().zip(&moji_table.rows) {
        assert_eq!(a[0], b[0]);
        assert_eq!(a[3], "sp");
        assert_eq!(b[3], "sp_moji");
        // With a single column the ensemble mean is the single ξ.
        assert_eq!(a[4], b[4]);
    }
}

#[test]
fn perturb_cli_is_deterministic_and_multiset_preserving() {
    let dir = tempfile::tempdir().unwrap();
    // Perturbation needs contexts; keep only context-bearing records.
    let loaded = load_records(data_dir().join("synthetic_log.jsonl")).unwrap();
    let with_context: Vec<_> = loaded
        .records
        .into_iter()
        .filter(|r| r.context.is_some() && r.perturbation_strength.is_none())
        .collect();
    let log = dir.path().join("ctx.jsonl");
    uqeval::datamodel::write_records(&with_context, &log).unwrap();

    let out1 = dir.path().join("p1.jsonl");
    let out2 = dir.path().join("p2.jsonl");
    for out in [&out1, &out2] {
        let (code, _, stderr) = run(&[
            "perturb",
            "--records",
            log.to_str().unwrap(),
            "--strengths",
            "0,0.5,1",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "stderr: {stderr}");
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());

    let derived = load_records(&out1).unwrap().records;
    assert_eq!(derived.len(), with_context.len() * 3);
    let multiset = |text: &str| {
        let mut words: Vec<&str> = text.split_whitespace().collect();
        words.sort_unstable();
        words.join(" ")
    };
    for (original, chunk) in with_context.iter().zip(derived.chunks(3)) {
        for d in chunk {
            assert_eq!(
                multiset(d.context.as_deref().unwrap()),
                multiset(original.context.as_deref().unwrap())
            );
            assert!(d.samples.is_empty());
        }
        assert_eq!(chunk[0].perturbation_strength, Some(0.0));
    }
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    let config = dir.path().join("uqeval.toml");
    fs::write(
        &config,
        format!(
            "[score]\nrecords = \"{}\"\nmethods = [\"perplexity\"]\n",
            corpus()
        ),
    )
    .unwrap();
    let (code, _, stderr) = run(&[
        "score",
        "--config",
        config.to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let table = read_table(&scores).unwrap();
    assert!(table.rows.iter().all(|r| r[1] == "perplexity"));
}

fn judge_config(url: &str, judge_id: &str, samples: u32) -> JudgeConfig {
    JudgeConfig {
        judge_id: judge_id.into(),
        model_name: "stub-model".into(),
        prompt_template: PromptTemplate::Qa,
        temperature: 0.5,
        endpoint_url: url.into(),
        num_samples: samples,
        max_retries: 1,
        parallelism_limit: 2,
        max_tokens: 8,
        timeout_secs: 5,
    }
}

fn judge_record(id: &str, answer: &str) -> uqeval::datamodel::GenerationRecord {
    uqeval::datamodel::GenerationRecord {
        id: id.into(),
        dataset: "d".into(),
        model: "m".into(),
        question: "is this right?".into(),
        context: None,
        references: vec!["reference".into()],
        answer: uqeval::datamodel::AnswerSequence {
            text: answer.into(),
            token_logprobs: vec![-0.5],
        },
        samples: vec![],
        similarity: Default::default(),
        p_true_logprob: None,
        ood_label: None,
        exact_correct: None,
        perturbation_strength: None,
        sampling_temperature: 1.0,
    }
}

#[test]
fn verify_auroc_noise_reports_the_predicted_transform() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("noise.csv");
    let (code, stdout, stderr) = run(&[
        "verify-auroc",
        "--mode",
        "noise",
        "--auroc",
        "0.9",
        "--p",
        "0.1",
        "--n",
        "2000",
        "--trials",
        "100",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("predicted"), "stdout: {stdout}");
    let table = read_table(&out).unwrap();
    assert_eq!(table.rows.len(), 1);
    let col = |name: &str| -> f64 {
        let idx = table.column_index(name).unwrap();
        table.rows[0][idx].parse().unwrap()
    };
    // The sample AUROC tracks the 0.9 target, so the prediction sits at
    // ≈ 0.9·0.8 + 0.1 = 0.82 and the simulation must match it tightly.
    assert!((col("predicted") - 0.82).abs() < 0.01, "predicted {}", col("predicted"));
    assert!((col("empirical_mean") - col("predicted")).abs() <= 0.01);

    let (code, _, _) = run(&["verify-auroc", "--mode", "sideways", "--out", "x.csv"]);
    assert_eq!(code, 1);
}

#[test]
fn judge_cache_makes_rerun_network_free_and_bit_identical() {
    let endpoint = StubEndpoint::spawn();
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let records = vec![
        judge_record("r1", "goodanswer"),
        judge_record("r2", "badanswer"),
        judge_record("r3", "mumble"),
    ];
    let configs = vec![
        judge_config(&endpoint.url, "j_a", 2),
        judge_config(&endpoint.url, "j_b", 1),
    ];
    let first = query_judges(&records, &configs, &cache).unwrap();
    // 3 records × (2 + 1) samples across configs.
    assert_eq!(first.len(), 9);
    assert_eq!(endpoint.call_count(), 9);
    let verdict_of = |verdicts: &[uqeval::judge::JudgeVerdict], id: &str| {
        verdicts
            .iter()
            .find(|v| v.record_id == id && v.judge_id == "j_b")
            .unwrap()
            .verdict
    };
    assert_eq!(verdict_of(&first, "r1"), Some(1));
    assert_eq!(verdict_of(&first, "r2"), Some(0));
    assert_eq!(verdict_of(&first, "r3"), None);

    let cache_bytes = fs::read(cache.join("j_a.jsonl")).unwrap();
    let second = query_judges(&records, &configs, &cache).unwrap();
    assert_eq!(endpoint.call_count(), 9, "rerun must not touch the network");
    assert_eq!(second, first);
    assert_eq!(fs::read(cache.join("j_a.jsonl")).unwrap(), cache_bytes);
}

#[test]
fn failing_endpoint_yields_annotated_null_verdicts() {
    let endpoint = StubEndpoint::spawn_with_status(500);
    let dir = tempfile::tempdir().unwrap();
    let records = vec![judge_record("r1", "goodanswer")];
    let configs = vec![judge_config(&endpoint.url, "j_err", 1)];
    let verdicts = query_judges(&records, &configs, dir.path().join("cache")).unwrap();
    assert_eq!(verdicts.len(), 1);
    assert_eq!(verdicts[0].verdict, None);
    assert!(verdicts[0].error.as_deref().unwrap().contains("500"));
    // One initial attempt plus one retry.
    assert_eq!(endpoint.call_count(), 2);
}

#[test]
fn judge_subcommand_writes_correctness_table() {
    let endpoint = StubEndpoint::spawn();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    uqeval::datamodel::write_records(
        &[
            judge_record("r1", "goodanswer"),
            judge_record("r2", "badanswer"),
        ],
        &log,
    )
    .unwrap();
    let judges = dir.path().join("judges.toml");
    fs::write(
        &judges,
        format!(
            "[[judge]]\njudge_id = \"j_a\"\nmodel_name = \"stub\"\nprompt_template = \"qa\"\n\
             temperature = 0.5\nendpoint_url = \"{}\"\nnum_samples = 2\n",
            endpoint.url
        ),
    )
    .unwrap();
    let out = dir.path().join("verdicts.csv");
    let (code, _, stderr) = run(&[
        "judge",
        "--records",
        log.to_str().unwrap(),
        "--judges",
        judges.to_str().unwrap(),
        "--cache-dir",
        dir.path().join("cache").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let table = read_table(&out).unwrap();
    assert_eq!(table.header, vec!["record_id", "j_a#0", "j_a#1"]);
    assert_eq!(table.rows[0], vec!["r1", "1", "1"]);
    assert_eq!(table.rows[1], vec!["r2", "0", "0"]);
}
