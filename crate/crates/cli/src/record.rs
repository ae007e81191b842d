use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: Vec<String>,
    seed: Option<u64>,
    config: &'a C,
}

/// `<output>.run.toml`, next to the output.
pub fn record_path(output: &Path) -> PathBuf {
    let mut name: OsString = output.as_os_str().to_owned();
    name.push(".run.toml");
    PathBuf::from(name)
}

/// Writes the reproducibility record of a run: tool version, command line,
/// seed and the effective configuration.
pub fn write_record<C: Serialize>(output: &Path, command: &str, seed: Option<u64>, config: &C) -> Result<()> {
    let record = RunRecord {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        args: std::env::args().skip(1).collect(),
        seed,
        config,
    };
    fs::write(record_path(output), toml::to_string(&record)?)?;
    Ok(())
}
