use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use nambert::chardata::Vocab;
use nambert::llm::mock::{MockReply, MockServer};
use nambert::model::{ModelConfig, NamBert};
use nambert::toy::{generate, ToyConfig};

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nambert"))
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("CSC_LLM_BASE_URL")
        .env_remove("CSC_LLM_MODEL")
        .env_remove("CSC_LLM_API_KEY")
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let missing = run(&["prepare-data", "--config", "/nonexistent/run.json", "--out", out]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));

    let cfg = toy_config();
    let unknown = run(&[
        "prepare-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out,
        "--set",
        "trian.epochs=3",
    ]);
    assert_eq!(unknown.status.code(), Some(1));
    let preset = run(&[
        "prepare-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out,
        "--set",
        "model.preset=huge",
    ]);
    assert_eq!(preset.status.code(), Some(1));
}

#[test]
fn manifests_record_overrides_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    let hash_of = |out: &Path, set: &str| {
        let o = run(&[
            "prepare-data",
            "--config",
            cfg,
            "--out",
            out.to_str().unwrap(),
            "--set",
            set,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        json(&out.join("prepare-data.manifest.json"))
    };
    let a = hash_of(&dir.path().join("a"), "train.epochs=3");
    let b = hash_of(&dir.path().join("b"), "train.epochs=3");
    let c = hash_of(&dir.path().join("c"), "train.epochs=4");
    assert_eq!(a["config_sha256"], b["config_sha256"]);
    assert_ne!(a["config_sha256"], c["config_sha256"]);
    assert_eq!(a["config"]["train"]["epochs"], 3);
    assert_eq!(a["config"]["train"]["seed"], a["seed"]);
    assert_eq!(a["config"]["model"]["d_semantic"], 64);
    let vocab_a = std::fs::read_to_string(dir.path().join("a/vocab.txt")).unwrap();
    let vocab_b = std::fs::read_to_string(dir.path().join("b/vocab.txt")).unwrap();
    assert_eq!(vocab_a, vocab_b);
}

#[test]
fn correct_keeps_sentence_length() {
    let toy = generate(&ToyConfig::default()).unwrap();
    let chars: BTreeSet<char> = toy.train.iter().flat_map(|e| e.target.iter().copied()).collect();
    let vocab = Vocab::from_chars(chars).unwrap();
    let model = NamBert::<f32>::new(ModelConfig::toy(vocab.len()), vocab, &toy.pinyin, &toy.glyphs, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.namb");
    model.save(&path).unwrap();
    for text in ["妈妈昨甜停音乐", "ab中c", "我"] {
        let o = run(&["correct", "--checkpoint", path.to_str().unwrap(), "--text", text]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let line = String::from_utf8(o.stdout).unwrap();
        assert_eq!(line.trim_end_matches('\n').chars().count(), text.chars().count());
    }
}

#[test]
fn llm_eval_against_mock_endpoint_and_replay() {
    let server = MockServer::start(vec![], MockReply::Echo).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("llm");
    let cfg = toy_config();
    let o = Command::new(env!("CARGO_BIN_EXE_nambert"))
        .args([
            "llm-eval",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .args(["--set", "llm.limit=6", "--set", "llm.endpoint.backoff_ms=1"])
        .env("RUST_LOG", "error")
        .env("CSC_LLM_BASE_URL", server.base_url())
        .env("CSC_LLM_MODEL", "mock")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let live = json(&out.join("llm_eval.json"));
    assert_eq!(live["metrics"]["sentences"], 6);
    assert_eq!(live["metrics"]["flagged"], 0);
    assert_eq!(live["replayed"], false);
    assert_eq!(server.requests(), 6);

    let log = out.join("llm_log.jsonl");
    let again = dir.path().join("again");
    let o = run(&[
        "llm-eval",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
        "--set",
        &format!("llm.replay={}", log.display()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let replayed = json(&again.join("llm_eval.json"));
    assert_eq!(replayed["metrics"], live["metrics"]);
    assert_eq!(replayed["replayed"], true);
}

#[test]
fn llm_eval_without_endpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let o = run(&[
        "llm-eval",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CSC_LLM_BASE_URL"));
}
