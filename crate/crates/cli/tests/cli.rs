mod common;

use std::collections::BTreeMap;
use std::fs;

use common::*;
use serde_json::Value;

#[test]
fn gen_data_matches_golden_and_is_repeatable() {
    if blessing() {
        bless_gen10();
    }
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_data(a.path(), &[])), 0);
    assert_eq!(code(&gen_data(b.path(), &[])), 0);
    for name in ["pairs.jsonl", "stats.json", "cost.json", "outcomes.jsonl"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    for name in ["pairs.jsonl", "stats.json", "cost.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(gen10().join(name)).unwrap(),
            "{name} differs from the golden copy"
        );
    }
}

#[test]
fn gen_data_cost_matches_programmed_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen_data(dir.path(), &[])), 0);
    let cost: Value = serde_json::from_slice(&fs::read(dir.path().join("cost.json")).unwrap()).unwrap();
    let exp: Value = serde_json::from_slice(&fs::read(gen10().join("expected_cost.json")).unwrap()).unwrap();
    for key in ["generator_calls", "failed_calls", "prompt_tokens", "completion_tokens"] {
        assert_eq!(cost[key], exp[key], "{key}");
    }
    let pairs = exp["correctness_pairs"].as_u64().unwrap() + exp["dropout_pairs"].as_u64().unwrap();
    assert_eq!(cost["pairs"].as_u64().unwrap(), pairs);
}

#[test]
fn branch_flag_restricts_output() {
    for (branch, source) in [("correctness", "correctness"), ("dropout", "dropout_ntp")] {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(code(&gen_data(dir.path(), &["--branch", branch])), 0);
        let text = fs::read_to_string(dir.path().join("pairs.jsonl")).unwrap();
        assert!(!text.is_empty());
        for line in text.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["source"], source);
        }
    }
}

#[test]
fn gen_data_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let script = gen10().join("mock_script.json");
    let out_dir = dir.path().join("out");
    let run = |corpus: &str| {
        mpolab(&[
            "gen-data",
            "--corpus",
            corpus,
            "--mock-script",
            script.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
    };
    let empty_run = run(empty.to_str().unwrap());
    assert_eq!(code(&empty_run), 2);
    assert!(String::from_utf8_lossy(&empty_run.stderr).contains("no samples"));
    assert_eq!(code(&run("/nonexistent/corpus.jsonl")), 2);
    let corpus = gen10().join("corpus.jsonl");
    let no_generator = mpolab(&[
        "gen-data",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&no_generator), 2);
    assert_eq!(code(&gen_data(&out_dir, &["--dropout-ratio", "1.5"])), 2);
    assert_eq!(code(&gen_data(&out_dir, &["--branch", "both"])), 2);
}

fn field(values: &[usize]) -> (f64, usize, usize) {
    let sum: usize = values.iter().sum();
    (
        sum as f64 / values.len() as f64,
        *values.iter().min().unwrap(),
        *values.iter().max().unwrap(),
    )
}

#[test]
fn stats_reports_known_aggregates() {
    let path = gen10().join("pairs.jsonl");
    let out = mpolab(&["stats", "--pairs", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();

    let text = fs::read_to_string(&path).unwrap();
    let mut groups: BTreeMap<String, Vec<Value>> = BTreeMap::new();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        groups.entry("overall".into()).or_default().push(v.clone());
        groups
            .entry(v["source"].as_str().unwrap().to_string())
            .or_default()
            .push(v);
    }
    for (group, pairs) in &groups {
        let got = if group == "overall" {
            &report["overall"]
        } else {
            &report["by_source"][group]
        };
        assert_eq!(got["count"].as_u64().unwrap() as usize, pairs.len(), "{group}");
        let lens = |f: &dyn Fn(&Value) -> usize| pairs.iter().map(f).collect::<Vec<_>>();
        let checks = [
            (
                "instruction",
                lens(&|p| p["instruction"].as_str().unwrap().split_whitespace().count()),
            ),
            ("chosen", lens(&|p| p["chosen"]["tokens"].as_array().unwrap().len())),
            ("rejected", lens(&|p| p["rejected"]["tokens"].as_array().unwrap().len())),
        ];
        for (name, values) in checks {
            let (mean, min, max) = field(&values);
            assert!(
                (got[name]["mean"].as_f64().unwrap() - mean).abs() < 1e-12,
                "{group}.{name}"
            );
            assert_eq!(got[name]["min"].as_u64().unwrap() as usize, min, "{group}.{name}");
            assert_eq!(got[name]["max"].as_u64().unwrap() as usize, max, "{group}.{name}");
        }
    }
}

#[test]
fn stats_formats_and_errors() {
    let path = gen10().join("pairs.jsonl");
    let csv = mpolab(&["stats", "--pairs", path.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code(&csv), 0);
    let text = stdout(&csv);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("group,count,instruction_mean"));
    assert!(lines[1].starts_with("overall,"));
    assert_eq!(lines.len(), 4);

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&mpolab(&["stats", "--pairs", empty.to_str().unwrap()])), 2);
    assert_eq!(
        code(&mpolab(&[
            "stats",
            "--pairs",
            path.to_str().unwrap(),
            "--format",
            "xml"
        ])),
        2
    );
}

fn small_train(dir: &std::path::Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec![
        "train",
        "--synthetic",
        "--n-pairs",
        "200",
        "--max-steps",
        "30",
        "--seed",
        "3",
        "--out-dir",
        dir.to_str().unwrap(),
    ];
    args.extend(extra);
    mpolab(&args)
}

#[test]
fn train_writes_metrics_manifest_and_policy() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_train(a.path(), &["--beta", "0.2"])), 0);
    assert_eq!(code(&small_train(b.path(), &["--beta", "0.2"])), 0);
    for name in [
        "metrics.csv",
        "metrics.jsonl",
        "manifest.json",
        "policy.json",
        "summary.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let csv = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "step,mean_loss,reward_accuracy,chosen_lp,rejected_lp,margin,delta"
    );
    assert_eq!(csv.lines().count(), 31);
    let manifest: Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["params"]["beta"]["source"], "override");
    assert_eq!(manifest["params"]["beta"]["value"], 0.2);
    assert_eq!(manifest["params"]["w_p"]["source"], "paper");
    assert_eq!(manifest["params"]["batch_size"]["source"], "artifact");
    assert_eq!(manifest["params"]["seed"]["source"], "override");
    assert_eq!(manifest["corpus"]["kind"], "synthetic");
    let policy: Value = serde_json::from_slice(&fs::read(a.path().join("policy.json")).unwrap()).unwrap();
    assert_eq!(policy["V"], 64);
    assert_eq!(policy["step"], 30);
}

#[test]
fn train_on_generated_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = gen10().join("pairs.jsonl");
    let out = mpolab(&[
        "train",
        "--pairs",
        pairs.to_str().unwrap(),
        "--loss-id",
        "dpo",
        "--batch-size",
        "4",
        "--epochs",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["corpus"]["kind"], "file");
}

#[test]
fn train_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_train(dir.path(), &["--loss-id", "kto"])), 2);
    assert_eq!(code(&small_train(dir.path(), &["--loss-id", "tr_dpo"])), 2);
    assert_eq!(code(&small_train(dir.path(), &["--compare", "dpo"])), 2);
    assert_eq!(code(&mpolab(&["train", "--out-dir", dir.path().to_str().unwrap()])), 2);
    assert_eq!(code(&mpolab(&["train", "--bogus-flag"])), 2);
}

#[test]
fn compare_emits_dynamics_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_train(dir.path(), &["--compare", "dpo,mpo"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("verdict: "));
    let text = fs::read_to_string(dir.path().join("dynamics.txt")).unwrap();
    assert!(text.lines().next().unwrap().split_whitespace().eq([
        "step",
        "dpo_chosen_lp",
        "mpo_chosen_lp",
        "dpo_margin",
        "mpo_margin"
    ]));
    assert_eq!(text.lines().count(), 1 + 30 + 3);
    for run in ["dpo", "mpo"] {
        assert!(dir.path().join(run).join("metrics.csv").exists());
        let m: Value = serde_json::from_slice(&fs::read(dir.path().join(run).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["params"]["loss_id"]["value"], run);
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"seed": 3, "train": {"loss_id": "not_a_loss", "batch_size": 8}}"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&small_train(dir.path(), &["--config", c])), 2);
    let out_dir = dir.path().join("run");
    let ok = small_train(&out_dir, &["--config", c, "--loss-id", "dpo"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let m: Value = serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["params"]["loss_id"]["value"], "dpo");
    assert_eq!(m["params"]["batch_size"]["value"], 8);
    assert_eq!(m["params"]["batch_size"]["source"], "override");

    fs::write(&cfg, r#"{"train": {"not_a_field": 1}}"#).unwrap();
    assert_eq!(code(&small_train(dir.path(), &["--config", c])), 2);
}

#[test]
fn gradcheck_passes_and_catches_a_perturbed_gradient() {
    let ok = mpolab(&["gradcheck", "--points", "20"]);
    assert_eq!(code(&ok), 0);
    assert_eq!(stdout(&ok).lines().filter(|l| l.starts_with("PASS")).count(), 10);

    let one = mpolab(&["gradcheck", "--loss", "dpo", "--points", "20"]);
    assert_eq!(code(&one), 0);
    let text = stdout(&one);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("PASS dpo"));

    let bad = mpolab(&[
        "gradcheck",
        "--loss",
        "dpo,mpo",
        "--points",
        "20",
        "--perturb-analytic",
        "1e-3",
    ]);
    assert_eq!(code(&bad), 1);
    assert_eq!(stdout(&bad).lines().filter(|l| l.starts_with("FAIL")).count(), 2);

    assert_eq!(code(&mpolab(&["gradcheck", "--loss", "kto"])), 2);
}

#[test]
fn help_states_defaults_and_provenance() {
    for sub in ["gen-data", "train", "gradcheck", "stats"] {
        let out = mpolab(&[sub, "--help"]);
        assert_eq!(code(&out), 0);
        let text = stdout(&out);
        assert!(text.contains("--seed"), "{sub}");
        assert!(text.contains("--out-dir"), "{sub}");
        assert!(text.contains("artifact]"), "{sub}");
    }
    let train = stdout(&mpolab(&["train", "--help"]));
    for needle in [
        "[default: 0.1, paper]",
        "[default: 0.8, paper]",
        "[default: 32, artifact]",
        "[default: 1, paper]",
    ] {
        assert!(train.contains(needle), "{needle}");
    }
    let gen = stdout(&mpolab(&["gen-data", "--help"]));
    for needle in [
        "[default: 32, paper]",
        "[default: 15, paper]",
        "[default: 0.5, paper]",
        "RETAINED",
    ] {
        assert!(gen.contains(needle), "{needle}");
    }
}
