use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use mpolab_core::jsonl::read_jsonl_file;
use mpolab_core::policy::PolicyCheckpoint;
use mpolab_core::trainer::{
    dynamics_report, make_synthetic_corpus, train, write_metrics_csv, write_metrics_jsonl, MetricsRow, Objective,
    RunManifest, TrainConfig, TrainOutput,
};
use mpolab_core::{LossConfig, LossWeights, PreferencePair, ShiftMode};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{merge, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::{emit, write_file, write_json, Globals};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const POLICY_FILE: &str = "policy.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DYNAMICS_TEXT: &str = "dynamics.txt";
pub const DYNAMICS_JSON: &str = "dynamics.json";

/// Synthetic corpus defaults.
pub const SYNTHETIC_VOCAB: usize = 64;
pub const SYNTHETIC_PAIRS: usize = 2000;
pub const SYNTHETIC_LEN: usize = 20;
pub const SYNTHETIC_SKEW: f64 = 2.0;

/// Where the training pairs came from.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSpec {
    File {
        path: String,
        pairs: usize,
    },
    Synthetic {
        vocab_size: usize,
        n_pairs: usize,
        seq_len: usize,
        skew: f64,
        seed: u64,
    },
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    loss_id: &'a str,
    steps: usize,
    initial_eval: &'a MetricsRow,
    final_eval: &'a MetricsRow,
    epoch_evals: &'a [MetricsRow],
}

pub fn train_config(a: &TrainArgs, vocab_size: usize, seed: u64) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let dl = LossConfig::default();
    let objective: Objective = match &a.loss_id {
        Some(s) => s.parse().map_err(CliError::usage)?,
        None => d.objective,
    };
    let weights = LossWeights {
        w_p: a.w_p.unwrap_or(dl.weights.w_p),
        w_q: a.w_q.unwrap_or(dl.weights.w_q),
        w_g: a.w_g.unwrap_or(dl.weights.w_g),
    };
    let cfg = TrainConfig {
        objective,
        loss_cfg: LossConfig {
            beta: a.beta.unwrap_or(dl.beta),
            epsilon: a.epsilon.unwrap_or(dl.epsilon),
            orpo_lambda: a.orpo_lambda.unwrap_or(dl.orpo_lambda),
            weights,
            shift_mode: a.ema_decay.map_or(dl.shift_mode, |decay| ShiftMode::Ema { decay }),
        },
        vocab_size,
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        epochs: a.epochs.unwrap_or(d.epochs),
        max_steps: a.max_steps.or(d.max_steps),
        seed,
        tr_dpo_every_k: a.tr_dpo_every_k.or(d.tr_dpo_every_k),
        peak_lr: a.peak_lr.unwrap_or(d.peak_lr),
        warmup_fraction: a.warmup_fraction.unwrap_or(d.warmup_fraction),
        min_lr: a.min_lr.unwrap_or(d.min_lr),
        adam_beta1: a.adam_beta1.unwrap_or(d.adam_beta1),
        adam_beta2: a.adam_beta2.unwrap_or(d.adam_beta2),
        adam_eps: a.adam_eps.unwrap_or(d.adam_eps),
        weight_decay: a.weight_decay.unwrap_or(d.weight_decay),
        apply_weight_decay: a.apply_weight_decay.unwrap_or(d.apply_weight_decay),
    };
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

/// Loads or generates the corpus. Returns it with its description and the
/// policy vocabulary size.
pub fn load_corpus(a: &TrainArgs, seed: u64) -> CliResult<(Vec<PreferencePair>, CorpusSpec, usize)> {
    match (&a.pairs, a.synthetic.unwrap_or(false)) {
        (Some(path), false) => {
            let pairs = read_pairs(path)?;
            let max_id = pairs
                .iter()
                .flat_map(|p| p.chosen.tokens.iter().chain(&p.rejected.tokens))
                .copied()
                .max()
                .unwrap_or(0);
            let vocab = a.vocab_size.unwrap_or(max_id as usize + 1);
            let spec = CorpusSpec::File {
                path: path.display().to_string(),
                pairs: pairs.len(),
            };
            Ok((pairs, spec, vocab))
        }
        (None, true) => {
            let vocab = a.vocab_size.unwrap_or(SYNTHETIC_VOCAB);
            let n = a.n_pairs.unwrap_or(SYNTHETIC_PAIRS);
            let len = a.seq_len.unwrap_or(SYNTHETIC_LEN);
            let skew = a.skew.unwrap_or(SYNTHETIC_SKEW);
            let cseed = a.corpus_seed.unwrap_or(seed);
            if n == 0 {
                return Err(CliError::Usage("--n-pairs must be at least 1".into()));
            }
            let pairs = make_synthetic_corpus(vocab, n, len, skew, cseed).map_err(CliError::usage)?;
            let spec = CorpusSpec::Synthetic {
                vocab_size: vocab,
                n_pairs: n,
                seq_len: len,
                skew,
                seed: cseed,
            };
            Ok((pairs, spec, vocab))
        }
        (Some(_), true) => Err(CliError::Usage("give either --pairs or --synthetic, not both".into())),
        (None, false) => Err(CliError::Usage(
            "a corpus is required: --pairs PATH or --synthetic".into(),
        )),
    }
}

fn read_pairs(path: &Path) -> CliResult<Vec<PreferencePair>> {
    let pairs: Vec<PreferencePair> =
        read_jsonl_file(path).map_err(|e| CliError::Usage(format!("cannot read pairs {}: {e}", path.display())))?;
    if pairs.is_empty() {
        return Err(CliError::Usage(format!("pairs file {} is empty", path.display())));
    }
    Ok(pairs)
}

/// Manifest keys that the caller set explicitly.
fn overridden(set: &BTreeSet<String>, seed_given: bool) -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = set
        .iter()
        .map(|k| {
            if k == "ema_decay" {
                "reward_shift".to_string()
            } else {
                k.clone()
            }
        })
        .collect();
    if seed_given {
        keys.insert("seed".into());
    }
    keys
}

fn write_run(dir: &Path, out: &TrainOutput, manifest: &Value, cfg: &TrainConfig) -> CliResult<()> {
    let mut csv = Vec::new();
    write_metrics_csv(&out.metrics, &mut csv).map_err(CliError::run)?;
    write_file(&dir.join(METRICS_CSV), &csv)?;
    let mut jsonl = Vec::new();
    write_metrics_jsonl(&out.metrics, &mut jsonl).map_err(CliError::run)?;
    write_file(&dir.join(METRICS_JSONL), &jsonl)?;
    write_json(&dir.join(MANIFEST_FILE), manifest)?;
    let steps = out.metrics.last().map_or(0, |r| r.step);
    write_json(
        &dir.join(POLICY_FILE),
        &PolicyCheckpoint::from_policy(&out.policy, steps),
    )?;
    write_json(
        &dir.join(SUMMARY_FILE),
        &Summary {
            loss_id: cfg.objective.as_str(),
            steps,
            initial_eval: &out.initial_eval,
            final_eval: &out.final_eval,
            epoch_evals: &out.epoch_evals,
        },
    )
}

fn summary_line(cfg: &TrainConfig, out: &TrainOutput) -> String {
    format!(
        "{}: {} steps, reward_accuracy {:.4} -> {:.4}, chosen_lp {:.6} -> {:.6}, loss {:.6} -> {:.6}\n",
        cfg.objective,
        out.metrics.len(),
        out.initial_eval.reward_accuracy,
        out.final_eval.reward_accuracy,
        out.initial_eval.mean_chosen_logp_norm,
        out.final_eval.mean_chosen_logp_norm,
        out.initial_eval.mean_loss,
        out.final_eval.mean_loss
    )
}

pub fn run(flags: &TrainArgs, file: &TrainArgs, g: &Globals, stdout: &mut dyn Write) -> CliResult<()> {
    let (a, set) = merge(flags, file)?;
    let compare: Option<Vec<Objective>> = a
        .compare
        .as_deref()
        .map(|s| {
            s.split(',')
                .map(|x| x.trim().parse().map_err(CliError::usage))
                .collect()
        })
        .transpose()?;
    if let Some(objs) = &compare {
        if objs.len() != 2 || objs[0] == objs[1] {
            return Err(CliError::Usage(
                "--compare takes two distinct objectives, e.g. dpo,mpo".into(),
            ));
        }
    }
    // Validate the flags before paying for corpus generation.
    train_config(&a, a.vocab_size.unwrap_or(SYNTHETIC_VOCAB).max(1), g.seed)?;
    let (corpus, spec, vocab) = load_corpus(&a, g.seed)?;
    let base = train_config(&a, vocab, g.seed)?;
    let over = overridden(&set, g.seed_given);

    let runs: Vec<(Objective, std::path::PathBuf)> = match &compare {
        None => vec![(base.objective, g.out_dir.clone())],
        Some(objs) => objs.iter().map(|&o| (o, g.out_dir.join(o.as_str()))).collect(),
    };
    let mut outputs = Vec::new();
    for (objective, dir) in runs {
        let cfg = TrainConfig {
            objective,
            ..base.clone()
        };
        let mut keys = over.clone();
        if compare.is_some() {
            keys.insert("loss_id".into());
        }
        let manifest = json!({
            "corpus": spec,
            "params": RunManifest::from_config(&cfg, &keys).params,
        });
        log::info!("training {objective} on {} pairs", corpus.len());
        let out = train(&corpus, &cfg).map_err(CliError::usage)?;
        write_run(&dir, &out, &manifest, &cfg)?;
        emit(stdout, &summary_line(&cfg, &out))?;
        outputs.push(out);
    }

    if let [first, second] = &outputs[..] {
        let report = dynamics_report(&first.metrics, &second.metrics).map_err(CliError::run)?;
        let text = report.render_text();
        write_file(&g.out_dir.join(DYNAMICS_TEXT), text.as_bytes())?;
        write_json(&g.out_dir.join(DYNAMICS_JSON), &report)?;
        emit(stdout, &format!("verdict: {}\n", report.verdict.as_str()))?;
    }
    Ok(())
}
