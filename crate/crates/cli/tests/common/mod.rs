#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mpolab_core::jsonl::write_jsonl_file;
use mpolab_engine::dataengine::EngineConfig;
use mpolab_engine::scripted::scripted_corpus;

pub const GEN_SEED: u64 = 5;
pub const CORPUS_SEED: u64 = 2024;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn gen10() -> PathBuf {
    fixtures().join("gen10")
}

pub fn mpolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpolab"))
        .args(args)
        .output()
        .expect("mpolab binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Runs gen-data on the 10-sample fixture into `dir`.
pub fn gen_data(dir: &Path, extra: &[&str]) -> Output {
    let corpus = gen10().join("corpus.jsonl");
    let script = gen10().join("mock_script.json");
    let mut args = vec![
        "gen-data",
        "--corpus",
        corpus.to_str().unwrap(),
        "--mock-script",
        script.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
    ];
    let seed = GEN_SEED.to_string();
    args.extend(["--seed", seed.as_str()]);
    args.extend(extra);
    mpolab(&args)
}

/// Rewrites the fixture corpus and mock script, then the expected outputs.
/// Run with `MPOLAB_BLESS=1` after an intentional change.
pub fn bless_gen10() {
    let dir = gen10();
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = EngineConfig {
        seed: GEN_SEED,
        ..EngineConfig::default()
    };
    let corpus = scripted_corpus(10, &cfg, CORPUS_SEED).unwrap();
    write_jsonl_file(&corpus.samples, &dir.join("corpus.jsonl")).unwrap();
    let mut script = serde_json::to_vec_pretty(&corpus.script).unwrap();
    script.push(b'\n');
    std::fs::write(dir.join("mock_script.json"), script).unwrap();
    let mut expected = serde_json::to_vec_pretty(&corpus.expected).unwrap();
    expected.push(b'\n');
    std::fs::write(dir.join("expected_cost.json"), expected).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_data(tmp.path(), &[])), 0);
    for name in ["pairs.jsonl", "stats.json", "cost.json"] {
        std::fs::copy(tmp.path().join(name), dir.join(name)).unwrap();
    }
}

pub fn blessing() -> bool {
    std::env::var_os("MPOLAB_BLESS").is_some()
}
