//! JSON-lines dataset files: one header line followed by one record per
//! trajectory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, DatasetConfig, TrajectoryRecord};

pub const SCHEMA_VERSION: u32 = 1;
pub const DATASET_FORMAT: &str = "treat-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub format: String,
    pub n_records: usize,
    pub condition_len: usize,
    pub scale: f64,
    /// Present when the dataset came from the simulator.
    pub generator: Option<DatasetConfig>,
}

impl DatasetHeader {
    pub fn new(cfg: &DatasetConfig, n_records: usize, scale: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            format: DATASET_FORMAT.to_string(),
            n_records,
            condition_len: cfg.condition_len,
            scale,
            generator: Some(cfg.clone()),
        }
    }
}

impl Dataset {
    pub fn write_to(&self, mut w: impl Write) -> Result<(), DataError> {
        let header = DatasetHeader {
            n_records: self.records.len(),
            ..self.header.clone()
        };
        writeln!(w, "{}", to_json(&header))?;
        for r in &self.records {
            writeln!(w, "{}", to_json(r))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, DataError> {
        let mut lines = r.lines();
        let first = lines.next().ok_or(DataError::Malformed {
            line: 1,
            message: "missing header".into(),
        })??;
        let header = parse_header(&first)?;
        let mut records = Vec::with_capacity(header.n_records.min(1 << 16));
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                return Err(DataError::Malformed {
                    line: line_no,
                    message: "empty line".into(),
                });
            }
            let record = parse_record(&line, line_no)?;
            check_record(&record, &header, line_no)?;
            records.push(record);
        }
        if records.len() != header.n_records {
            return Err(DataError::Malformed {
                line: records.len() + 1,
                message: format!(
                    "header declares {} records but the file holds {}",
                    header.n_records,
                    records.len()
                ),
            });
        }
        Ok(Dataset { header, records })
    }

    /// Parses a dataset held in memory.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        Self::read_from(text.as_bytes())
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("dataset types always serialize")
}

fn parse_header(line: &str) -> Result<DatasetHeader, DataError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| DataError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    check_version(&value, 1)?;
    let header: DatasetHeader = serde_json::from_value(value).map_err(|e| DataError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != DATASET_FORMAT {
        return Err(DataError::Malformed {
            line: 1,
            message: format!("format is `{}`, expected `{DATASET_FORMAT}`", header.format),
        });
    }
    if !(header.scale > 0.0 && header.scale.is_finite()) {
        return Err(DataError::Malformed {
            line: 1,
            message: format!("scale must be positive, got {}", header.scale),
        });
    }
    Ok(header)
}

fn check_version(value: &serde_json::Value, line: usize) -> Result<(), DataError> {
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => Ok(()),
        Some(v) => Err(DataError::Version {
            line,
            found: u32::try_from(v).unwrap_or(u32::MAX),
            expected: SCHEMA_VERSION,
        }),
        None => Err(DataError::Malformed {
            line,
            message: "missing integer schema_version".into(),
        }),
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<TrajectoryRecord, DataError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| DataError::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    check_version(&value, line_no)?;
    serde_json::from_value(value).map_err(|e| DataError::Malformed {
        line: line_no,
        message: e.to_string(),
    })
}

fn check_record(r: &TrajectoryRecord, header: &DatasetHeader, line: usize) -> Result<(), DataError> {
    let bad = |message: String| Err(DataError::Malformed { line, message });
    if let Err(e) = r.params.validate() {
        return bad(e.to_string());
    }
    if r.system != r.params.kind {
        return bad(format!("system `{}` disagrees with params kind `{}`", r.system, r.params.kind));
    }
    if r.scale != header.scale {
        return bad(format!("record scale {} differs from header scale {}", r.scale, header.scale));
    }
    if r.times.is_empty() || r.times.len() != r.states.len() {
        return bad(format!(
            "{} timestamps but {} states",
            r.times.len(),
            r.states.len()
        ));
    }
    if let Some(index) = r.times.iter().position(|t| !t.is_finite()) {
        return bad(format!("timestamp {index} is not finite"));
    }
    if let Some(index) = r.times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(DataError::NonMonotone { line, index: index + 1 });
    }
    let width = r.n_agents() * r.agent_dim();
    for (k, s) in r.states.iter().enumerate() {
        if s.len() != width {
            return bad(format!("state {k} has {} values, expected {width}", s.len()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return bad(format!("state {k} holds a non-finite value"));
        }
    }
    if header.condition_len == 0 || header.condition_len > r.times.len() {
        return bad(format!(
            "condition window of {} points does not fit {} timestamps",
            header.condition_len,
            r.times.len()
        ));
    }
    if r.observed.len() != r.n_agents() {
        return bad(format!(
            "observations listed for {} agents, expected {}",
            r.observed.len(),
            r.n_agents()
        ));
    }
    for (a, idx) in r.observed.iter().enumerate() {
        if idx.is_empty() {
            return bad(format!("agent {a} has no observations"));
        }
        if idx.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("observation indices of agent {a} are not strictly increasing"));
        }
        if idx.last().is_some_and(|&k| k >= header.condition_len) {
            return bad(format!("agent {a} observes a point outside the condition window"));
        }
    }
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), DataError> {
    dataset.write_to(BufWriter::new(File::create(path)?))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    Dataset::read_from(BufReader::new(File::open(path)?))
}
