//! Command-line flags and the JSON config file they override.
//!
//! Every tunable is an `Option` so that "not given" can be told apart from
//! "given with the default value". Defaults are tagged `paper` when they are
//! the published value and `artifact` when they were chosen for this tool.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

const PROVENANCE_NOTE: &str =
    "Defaults tagged `paper` are published values; `artifact` defaults were chosen for this tool.\n\
Values from --config are used when the flag is absent; explicit flags always win.\n\
Exit codes: 0 success, 1 check or run failure, 2 usage or input error.";

#[derive(Debug, Parser)]
#[command(name = "mpolab", version, about = "Preference-data engine and preference-optimization laboratory", after_help = PROVENANCE_NOTE)]
pub struct Cli {
    /// JSON config file with optional `seed`, `out_dir`, `gen_data`, `train`, `gradcheck` and `stats` sections
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every seeded step [default: 0, artifact]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files [default: out, artifact]
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Log progress to stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build preference pairs from an instruction corpus
    #[command(after_help = PROVENANCE_NOTE)]
    GenData(GenDataArgs),
    /// Train a toy policy on a pairs file or a synthetic corpus
    #[command(after_help = PROVENANCE_NOTE)]
    Train(TrainArgs),
    /// Compare analytic loss partials against central finite differences
    #[command(after_help = PROVENANCE_NOTE)]
    Gradcheck(GradcheckArgs),
    /// Length statistics of a pairs file
    #[command(after_help = PROVENANCE_NOTE)]
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataArgs {
    /// Instruction corpus, one JSON sample per line (required)
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Replay replies from a mock script instead of calling an endpoint
    #[arg(long, value_name = "PATH", conflicts_with = "endpoint_url")]
    pub mock_script: Option<PathBuf>,
    /// Chat-completions URL of the generator
    #[arg(long, value_name = "URL")]
    pub endpoint_url: Option<String>,
    /// Model name sent to the endpoint [default: default, artifact]
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token [default: none, artifact]
    #[arg(long, value_name = "VAR")]
    pub api_key_env: Option<String>,
    /// Send attachments as image-URL parts [default: false, artifact]
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub multimodal: Option<bool>,
    /// Maximum in-flight HTTP requests [default: 4, artifact]
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    /// Per-request timeout in milliseconds [default: 120000, artifact]
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Attempts per request, including the first [default: 5, artifact]
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// First retry delay in milliseconds, doubled per retry [default: 1000, artifact]
    #[arg(long)]
    pub retry_base_ms: Option<u64>,
    /// Pipelines to run: all, correctness or dropout [default: all, artifact]
    #[arg(long)]
    pub branch: Option<String>,
    /// Candidate responses sampled per correctness query [default: 32, paper]
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Pairs kept per correctness query [default: 15, paper]
    #[arg(long)]
    pub max_pairs_per_query: Option<usize>,
    /// Sampling temperature [default: 1.0, paper]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Fraction of the chosen response RETAINED as the DropoutNTP prefix [default: 0.5, paper]
    #[arg(long)]
    pub dropout_ratio: Option<f64>,
    /// Relative tolerance for numeric answers [default: 1e-6, artifact]
    #[arg(long)]
    pub numeric_tolerance: Option<f64>,
    /// Token budget per generation [default: 1024, artifact]
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// DropoutNTP pairs built per open-ended query [default: 1, artifact]
    #[arg(long)]
    pub dropout_pairs_per_query: Option<usize>,
    /// Admit general-VQA and document samples to the correctness branch [default: false, paper]
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub include_all_domains: Option<bool>,
    /// Force one CoT prompt style: plain, background_knowledge, visual_content or grounded [default: routed by domain, artifact]
    #[arg(long)]
    pub cot_kind: Option<String>,
    /// Queries processed concurrently [default: 8, artifact]
    #[arg(long)]
    pub query_concurrency: Option<usize>,
    /// Generator calls in flight per query [default: 8, artifact]
    #[arg(long)]
    pub call_concurrency: Option<usize>,
    /// Hash vocabulary for tokenizing responses [default: 4096, artifact]
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

/// Field names match the keys of the run manifest.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Pairs file to train on
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    pub pairs: Option<PathBuf>,
    /// Train on a generated separable corpus instead of a pairs file
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub synthetic: Option<bool>,
    /// Synthetic corpus size [default: 2000, artifact]
    #[arg(long)]
    pub n_pairs: Option<usize>,
    /// Synthetic sequence length [default: 20, artifact]
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Synthetic log-weight on the preferred half of the vocabulary [default: 2.0, artifact]
    #[arg(long)]
    pub skew: Option<f64>,
    /// Synthetic corpus seed [default: --seed, artifact]
    #[arg(long)]
    pub corpus_seed: Option<u64>,
    /// Train each listed objective and report their dynamics side by side, e.g. dpo,mpo
    #[arg(long, value_name = "A,B")]
    pub compare: Option<String>,
    /// Objective: dpo, rso, ipo, cdpo, robust_dpo, bco, sppo, orpo, tr_dpo or mpo [default: mpo, artifact]
    #[arg(long, alias = "loss")]
    pub loss_id: Option<String>,
    /// KL penalty coefficient [default: 0.1, paper]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Label-noise rate of cdpo and robust_dpo [default: 0.1, artifact]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Odds-ratio weight of orpo [default: 1.0, artifact]
    #[arg(long)]
    pub orpo_lambda: Option<f64>,
    /// Preference-loss weight of the mpo blend [default: 0.8, paper]
    #[arg(long)]
    pub w_p: Option<f64>,
    /// Quality-loss weight of the mpo blend [default: 0.2, paper]
    #[arg(long)]
    pub w_q: Option<f64>,
    /// Generation-loss weight of the mpo blend [default: 1.0, paper]
    #[arg(long)]
    pub w_g: Option<f64>,
    /// Track the reward shift as an EMA with this decay [default: cumulative mean, artifact]
    #[arg(long)]
    pub ema_decay: Option<f64>,
    /// Vocabulary size of the policy [default: 64 synthetic, largest token id + 1 for a pairs file, artifact]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Pairs per optimizer step [default: 32, artifact]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Passes over the corpus [default: 1, paper]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many steps, cycling epochs as needed [default: none, artifact]
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Reference re-sync interval, required by tr_dpo [default: none, artifact]
    #[arg(long)]
    pub tr_dpo_every_k: Option<usize>,
    /// Peak learning rate [default: 0.05, artifact]
    #[arg(long, alias = "lr")]
    pub peak_lr: Option<f64>,
    /// Fraction of steps spent in linear warmup [default: 0.05, paper]
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    /// Learning rate at the final step [default: 0, paper]
    #[arg(long)]
    pub min_lr: Option<f64>,
    /// AdamW first-moment decay [default: 0.9, paper]
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    /// AdamW second-moment decay [default: 0.999, paper]
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    /// AdamW denominator epsilon [default: 1e-8, artifact]
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// AdamW decoupled weight decay [default: 0.05, paper]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Apply weight decay to the policy logits [default: false, artifact]
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub apply_weight_decay: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckArgs {
    /// Comma-separated losses to check [default: every loss, artifact]
    #[arg(long)]
    pub loss: Option<String>,
    /// Random evaluation points per loss [default: 100, artifact]
    #[arg(long)]
    pub points: Option<usize>,
    /// Central-difference step [default: 1e-5, artifact]
    #[arg(long)]
    pub h: Option<f64>,
    /// Maximum relative error [default: 1e-6, artifact]
    #[arg(long)]
    pub tol: Option<f64>,
    /// KL penalty coefficient [default: 0.1, paper]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Negative control: scale the analytic partials by (1 + EPS) before comparing [default: off]
    #[arg(long, value_name = "EPS")]
    pub perturb_analytic: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsArgs {
    /// Pairs file to summarize (required)
    #[arg(long, value_name = "PATH")]
    pub pairs: Option<PathBuf>,
    /// Output format: json or csv [default: json, artifact]
    #[arg(long)]
    pub format: Option<String>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub gen_data: GenDataArgs,
    pub train: TrainArgs,
    pub gradcheck: GradcheckArgs,
    pub stats: StatsArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }
}

fn non_null(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Overlays `flags` on `file`. Returns the merged arguments and the names of
/// every field that either source set.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: &T) -> CliResult<(T, BTreeSet<String>)> {
    let to_map = |t: &T| serde_json::to_value(t).map(non_null).map_err(CliError::usage);
    let mut merged = to_map(file)?;
    merged.extend(to_map(flags)?);
    let set = merged.keys().cloned().collect();
    let out = serde_json::from_value(Value::Object(merged)).map_err(CliError::usage)?;
    Ok((out, set))
}
