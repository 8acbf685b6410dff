use std::io::Write;
use std::path::Path;

use mpolab_core::jsonl::{encode_jsonl, read_jsonl_file};
use mpolab_core::{InstructionSample, PairSource};
use mpolab_engine::dataengine::{dataset_stats, run_pipeline, Branch, EngineConfig};
use mpolab_engine::genclient::{Generator, HttpConfig, HttpGenerator, MockGenerator, MockScript};
use mpolab_engine::EngineError;

use crate::args::{merge, GenDataArgs};
use crate::error::{CliError, CliResult};
use crate::{emit, write_file, write_json, Globals};

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const COST_FILE: &str = "cost.json";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::Config(_) | EngineError::DuplicateSample(_) => CliError::usage(e),
        other => CliError::run(other),
    }
}

pub fn engine_config(a: &GenDataArgs, seed: u64) -> CliResult<EngineConfig> {
    let d = EngineConfig::default();
    let cfg = EngineConfig {
        max_samples: a.max_samples.unwrap_or(d.max_samples),
        max_pairs_per_query: a.max_pairs_per_query.unwrap_or(d.max_pairs_per_query),
        temperature: a.temperature.unwrap_or(d.temperature),
        dropout_ratio: a.dropout_ratio.unwrap_or(d.dropout_ratio),
        numeric_tolerance: a.numeric_tolerance.unwrap_or(d.numeric_tolerance),
        seed,
        max_tokens: a.max_tokens.unwrap_or(d.max_tokens),
        dropout_pairs_per_query: a.dropout_pairs_per_query.unwrap_or(d.dropout_pairs_per_query),
        include_all_domains: a.include_all_domains.unwrap_or(d.include_all_domains),
        cot_kind: a
            .cot_kind
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(engine_error)?,
        query_concurrency: a.query_concurrency.unwrap_or(d.query_concurrency),
        call_concurrency: a.call_concurrency.unwrap_or(d.call_concurrency),
        vocab_size: a.vocab_size.unwrap_or(d.vocab_size),
    };
    cfg.validate().map_err(engine_error)?;
    Ok(cfg)
}

fn generator(a: &GenDataArgs) -> CliResult<Box<dyn Generator>> {
    match (&a.mock_script, &a.endpoint_url) {
        (Some(path), None) => {
            let script = MockScript::from_path(path)
                .map_err(|e| CliError::Usage(format!("cannot load mock script {}: {e}", path.display())))?;
            Ok(Box::new(MockGenerator::new(script)))
        }
        (None, Some(url)) => {
            let d = HttpConfig::default();
            let cfg = HttpConfig {
                endpoint_url: url.clone(),
                model: a.model.clone().unwrap_or(d.model),
                api_key_env: a.api_key_env.clone(),
                max_concurrency: a.max_concurrency.unwrap_or(d.max_concurrency),
                multimodal: a.multimodal.unwrap_or(d.multimodal),
                timeout_ms: a.timeout_ms.unwrap_or(d.timeout_ms),
                retry: mpolab_engine::genclient::RetryPolicy {
                    max_attempts: a.max_attempts.unwrap_or(d.retry.max_attempts),
                    base_delay_ms: a.retry_base_ms.unwrap_or(d.retry.base_delay_ms),
                    ..d.retry
                },
                endpoint_id: None,
            };
            Ok(Box::new(HttpGenerator::new(cfg).map_err(CliError::usage)?))
        }
        (Some(_), Some(_)) => Err(CliError::Usage(
            "give either --mock-script or --endpoint-url, not both".into(),
        )),
        (None, None) => Err(CliError::Usage(
            "a generator is required: --mock-script or --endpoint-url".into(),
        )),
    }
}

fn load_corpus(path: &Path) -> CliResult<Vec<InstructionSample>> {
    let samples: Vec<InstructionSample> =
        read_jsonl_file(path).map_err(|e| CliError::Usage(format!("cannot read corpus {}: {e}", path.display())))?;
    if samples.is_empty() {
        return Err(CliError::Usage(format!("corpus {} has no samples", path.display())));
    }
    Ok(samples)
}

pub fn run(flags: &GenDataArgs, file: &GenDataArgs, g: &Globals, stdout: &mut dyn Write) -> CliResult<()> {
    let (a, _) = merge(flags, file)?;
    let corpus_path = a
        .corpus
        .as_deref()
        .ok_or_else(|| CliError::Usage("--corpus is required".into()))?;
    let branch: Branch = a.branch.as_deref().unwrap_or("all").parse().map_err(engine_error)?;
    let cfg = engine_config(&a, g.seed)?;
    let samples = load_corpus(corpus_path)?;
    let gen = generator(&a)?;
    log::info!(
        "{} samples, branch {}, endpoint {}",
        samples.len(),
        branch.as_str(),
        gen.endpoint_id()
    );

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::run)?;
    let out = runtime
        .block_on(run_pipeline(&samples, gen.as_ref(), &cfg, branch))
        .map_err(engine_error)?;

    let pairs = encode_jsonl(&out.pairs).map_err(CliError::run)?;
    write_file(&g.out_dir.join(PAIRS_FILE), &pairs)?;
    let outcomes = encode_outcomes(&out.outcomes)?;
    write_file(&g.out_dir.join(OUTCOMES_FILE), &outcomes)?;
    write_json(&g.out_dir.join(COST_FILE), &out.cost)?;
    if out.pairs.is_empty() {
        log::warn!("no pairs were produced");
        write_json(&g.out_dir.join(STATS_FILE), &serde_json::Value::Null)?;
    } else {
        let stats = dataset_stats(&out.pairs).map_err(CliError::run)?;
        write_json(&g.out_dir.join(STATS_FILE), &stats)?;
    }

    let count = |s: PairSource| out.pairs.iter().filter(|p| p.source == s).count();
    emit(
        stdout,
        &format!(
            "{} pairs ({} correctness, {} dropout_ntp) from {} samples; {} calls, {} failed; written to {}\n",
            out.pairs.len(),
            count(PairSource::Correctness),
            count(PairSource::DropoutNtp),
            samples.len(),
            out.cost.generator_calls,
            out.cost.failed_calls,
            g.out_dir.display()
        ),
    )
}

fn encode_outcomes<T: serde::Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(CliError::run)?;
        out.push(b'\n');
    }
    Ok(out)
}
