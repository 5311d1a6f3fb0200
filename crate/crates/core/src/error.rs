//! Crate-wide error type. Programming contracts (shape mismatches, out-of-range
//! arguments to internal kernels) panic instead; everything that can go wrong
//! from user input or the filesystem surfaces here.

use crate::trainer::StepMetrics;

#[derive(Debug, thiserror::Error)]
pub enum CarpError {
    /// A configuration value is malformed or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// The config file names a key that does not exist.
    #[error("unknown config key: {0}")]
    UnknownKey(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// An IDX file failed validation (bad magic, truncation, count mismatch).
    #[error("idx data: {0}")]
    Idx(String),

    /// A checkpoint file failed validation; the message names the field.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Training hit a non-finite loss; carries the offending step's metrics.
    #[error("training aborted at step {step}: non-finite loss (consistency={c}, entropy_term={e})",
            c = metrics.loss.consistency, e = metrics.loss.entropy_term)]
    NonFiniteLoss { step: usize, metrics: Box<StepMetrics> },

    /// One or more ablation cells failed; the sweep itself completed.
    #[error("ablation finished with failed cells: {0}")]
    AblationFailures(String),
}

impl CarpError {
    /// Process exit code policy: 2 for configuration mistakes (bad or
    /// unknown keys, invalid values), 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CarpError::Config(_) | CarpError::UnknownKey(_) => 2,
            _ => 1,
        }
    }
}
