//! Library half of the `treat` binary: run documents, the four commands and
//! the mapping from failures to exit codes.

pub mod config;
pub mod eval;
pub mod exit;
pub mod simulate;
pub mod suites;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// Environment variable naming the default output directory.
pub const OUTDIR_ENV: &str = "TREAT_OUTDIR";

/// `flag`, else `$TREAT_OUTDIR`, else the working directory.
pub fn output_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTDIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// `train.jsonl` -> `train.config.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
