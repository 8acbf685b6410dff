use std::fmt::Write as _;
use std::io::Write;

use mpolab_core::jsonl::read_jsonl_file;
use mpolab_core::PreferencePair;
use mpolab_engine::dataengine::{dataset_stats, SourceStats, StatsReport};

use crate::args::{merge, StatsArgs};
use crate::emit;
use crate::error::{CliError, CliResult};

pub const CSV_HEADER: &str = "group,count,instruction_mean,instruction_min,instruction_max,chosen_mean,chosen_min,chosen_max,rejected_mean,rejected_min,rejected_max";

fn csv_row(out: &mut String, group: &str, s: &SourceStats) {
    let _ = writeln!(
        out,
        "{group},{},{},{},{},{},{},{},{},{},{}",
        s.count,
        s.instruction.mean,
        s.instruction.min,
        s.instruction.max,
        s.chosen.mean,
        s.chosen.min,
        s.chosen.max,
        s.rejected.mean,
        s.rejected.min,
        s.rejected.max
    );
}

/// One row for all pairs, then one per source.
pub fn render_csv(report: &StatsReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    csv_row(&mut out, "overall", &report.overall);
    for (source, s) in &report.by_source {
        csv_row(&mut out, source, s);
    }
    out
}

pub fn render_json(report: &StatsReport) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(CliError::run)?;
    s.push('\n');
    Ok(s)
}

pub fn run(flags: &StatsArgs, file: &StatsArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let (a, _) = merge(flags, file)?;
    let path = a
        .pairs
        .as_deref()
        .ok_or_else(|| CliError::Usage("--pairs is required".into()))?;
    let format = a.format.as_deref().unwrap_or("json");
    if !matches!(format, "json" | "csv") {
        return Err(CliError::Usage(format!(
            "unknown format {format:?}; expected json or csv"
        )));
    }
    let pairs: Vec<PreferencePair> =
        read_jsonl_file(path).map_err(|e| CliError::Usage(format!("cannot read pairs {}: {e}", path.display())))?;
    if pairs.is_empty() {
        return Err(CliError::Usage(format!("pairs file {} is empty", path.display())));
    }
    let report = dataset_stats(&pairs).map_err(CliError::run)?;
    let text = match format {
        "csv" => render_csv(&report),
        _ => render_json(&report)?,
    };
    emit(stdout, &text)
}
