//! Correlation power analysis against Midori64.
//!
//! Stage one attacks the sixteen first-round S-boxes and yields the
//! whitening key `WK = k0 ^ k1`. Stage two uses that `WK` to predict the
//! second-round S-box inputs and yields `RK0 = k0 ^ α0`. Removing the public
//! constant gives `k0`, and `k1 = WK ^ k0`.

mod attack;
mod metrics;
mod pearson;

use thiserror::Error;

use crate::leakage::LeakageError;

pub use attack::{
    attack_full, attack_round1, attack_round2, attack_second_stage, recover_cell, AttackResult,
    CellResult, KeyCheck, RoundAttack, TIE_TOLERANCE,
};
pub use metrics::{success_metrics, sweep, SuccessReport, SweepRow};
pub use pearson::{
    build_hypotheses_round1, build_hypotheses_round2, pearson, CenteredTraces, CorrelationMatrix,
    HypothesisMatrix,
};

/// Size of the key-guess space for one cell.
pub const NUM_GUESSES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("correlation needs at least 2 traces, got {0}")]
    TooFewTraces(usize),
    #[error("cell index {0} out of range (0..16)")]
    InvalidCell(usize),
    #[error("round must be 1 or 2, got {0}")]
    InvalidRound(u8),
    #[error("hypothesis matrix has {hypotheses} rows but the trace set has {traces} traces")]
    LengthMismatch { hypotheses: usize, traces: usize },
    #[error("success metrics need at least one experiment")]
    NoExperiments,
    #[error("sweep needs at least one trial")]
    NoTrials,
    #[error(transparent)]
    Leakage(#[from] LeakageError),
}
