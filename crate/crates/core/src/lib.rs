//! Midori64 with a Hamming-weight power leakage simulator and a two-stage
//! correlation power analysis that recovers the full 128-bit key.
//!
//! - [`cipher`]: the block cipher, its key schedule and round intermediates.
//! - [`leakage`]: simulated traces and trace sets.
//! - [`cpa`]: hypothesis matrices, Pearson correlation, key recovery and
//!   success metrics.
//! - [`trace_io`]: the CSV trace format, flat config files and manifests.
//! - [`cli`]: the `midori-cpa` command line.

pub mod cipher;
pub mod cli;
pub mod cpa;
pub mod leakage;
pub mod trace_io;
