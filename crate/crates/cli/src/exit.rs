use std::fmt;

use treat_core::data::DataError;
use treat_core::model::ModelError;
use treat_core::training::TrainError;
use treat_core::verify::VerifyError;

pub const SUCCESS: u8 = 0;
/// A verification assertion did not hold.
pub const CHECK_FAILED: u8 = 1;
pub const CONFIG: u8 = 2;
pub const SIMULATION: u8 = 3;
pub const DIVERGED: u8 = 4;
pub const MISMATCH: u8 = 5;

/// Bad flags or run documents raised by the CLI itself.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A checkpoint that does not fit the data it is asked to run on.
#[derive(Debug)]
pub struct MismatchError(pub String);

impl fmt::Display for MismatchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MismatchError {}

pub fn config(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn mismatch(msg: impl Into<String>) -> anyhow::Error {
    MismatchError(msg.into()).into()
}

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::Simulation { .. } => SIMULATION,
        _ => CONFIG,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Mismatch(_) | ModelError::Checkpoint(_) | ModelError::Batch(_) => MISMATCH,
        ModelError::Diverged { .. } => DIVERGED,
        _ => CONFIG,
    }
}

/// Exit code for the first classifiable error in the chain.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() {
            return CONFIG;
        }
        if cause.is::<MismatchError>() {
            return MISMATCH;
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return data_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Model(m) => model_code(m),
                TrainError::Data(d) => data_code(d),
                TrainError::Config(_) => CONFIG,
                TrainError::Shape(_) => MISMATCH,
                TrainError::NonFiniteGradient { .. } | TrainError::Diverged { .. } | TrainError::AllDiverged(_) => {
                    DIVERGED
                }
            };
        }
        if let Some(e) = cause.downcast_ref::<VerifyError>() {
            return match e {
                VerifyError::Config(_) => CONFIG,
                _ => SIMULATION,
            };
        }
        if cause.is::<std::io::Error>() {
            return CONFIG;
        }
    }
    CONFIG
}

/// Whether retrying with a smaller step could help.
pub fn is_divergence(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::NonFiniteGradient { .. }
            | TrainError::Diverged { .. }
            | TrainError::AllDiverged(_)
            | TrainError::Model(ModelError::Diverged { .. })
    )
}
