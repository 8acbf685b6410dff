//! The `mpolab` command-line tool: gen-data, train, gradcheck and stats.

pub mod args;
pub mod commands;
pub mod error;

use std::io::Write;
use std::path::{Path, PathBuf};

use args::{Cli, Command, ConfigFile};
pub use error::{CliError, CliResult};

/// Settings shared by every command after the config file is applied.
#[derive(Debug, Clone)]
pub struct Globals {
    pub seed: u64,
    /// Whether the seed came from a flag or the config file.
    pub seed_given: bool,
    pub out_dir: PathBuf,
}

/// Runs one parsed invocation, writing human-readable output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = cli.seed.or(file.seed);
    let globals = Globals {
        seed: seed.unwrap_or(0),
        seed_given: seed.is_some(),
        out_dir: cli.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from("out")),
    };
    match cli.command {
        Command::GenData(a) => commands::gen_data::run(&a, &file.gen_data, &globals, stdout),
        Command::Train(a) => commands::train::run(&a, &file.train, &globals, stdout),
        Command::Gradcheck(a) => commands::gradcheck::run(&a, &file.gradcheck, &globals, stdout),
        Command::Stats(a) => commands::stats::run(&a, &file.stats, stdout),
    }
}

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

/// Writes `bytes` to `path`, creating parent directories.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::run)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub(crate) fn emit(stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    stdout.write_all(text.as_bytes()).map_err(CliError::run)
}
