//! Run documents. Each command resolves its flags into one of these and
//! writes it beside its outputs; passing that file back with `--config`
//! repeats the run.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use treat_core::data::{DatasetConfig, Split};
use treat_core::physics::SystemKind;
use treat_core::training::TrainingConfig;

use crate::exit;

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRun {
    pub schema_version: u32,
    pub seed: u64,
    pub dataset: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub schema_version: u32,
    pub seed: u64,
    pub data: PathBuf,
    /// Test trajectories for the summary; defaults to the test split of `data`.
    #[serde(default)]
    pub test_data: Option<PathBuf>,
    pub training: TrainingConfig,
    /// Extra prediction lengths reported in the summary.
    #[serde(default)]
    pub buckets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub schema_version: u32,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: Split,
    pub horizon: usize,
    #[serde(default)]
    pub buckets: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Lemma1,
    Theorem1,
    Lemma2,
    Energy,
    Mle,
    All,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Lemma1,
        Suite::Theorem1,
        Suite::Lemma2,
        Suite::Energy,
        Suite::Mle,
        Suite::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Theorem1 => "theorem1",
            Suite::Lemma2 => "lemma2",
            Suite::Energy => "energy",
            Suite::Mle => "mle",
            Suite::All => "all",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected lemma1, theorem1, lemma2, energy, mle or all)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRun {
    pub schema_version: u32,
    pub seed: u64,
    pub suite: Suite,
    /// Restricts the per-system suites (lemma1, energy) to one system.
    #[serde(default)]
    pub system: Option<SystemKind>,
}

/// Reads a run document, rejecting unknown fields and other schema versions.
pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("invalid run config {}", path.display()))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> anyhow::Result<T> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    match raw.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(RUN_SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(exit::config(format!(
                "schema_version {v} is not supported (expected {RUN_SCHEMA_VERSION})"
            )))
        }
        None => return Err(exit::config("missing field `schema_version`")),
    }
    Ok(serde_json::from_value(raw)?)
}

/// Nested configs carry their own seed; it has to agree with the run's.
pub fn check_seed(field: &str, run_seed: u64, inner: u64) -> anyhow::Result<()> {
    if run_seed != inner {
        return Err(exit::config(format!("{field} ({inner}) disagrees with seed ({run_seed})")));
    }
    Ok(())
}
