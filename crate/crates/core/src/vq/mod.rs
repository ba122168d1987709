//! Pooling driven by quantized codebook indices.
//!
//! Each frame carries a tuple of `G` indices. Two families of methods use
//! them:
//!
//! * partitioning: frames judged equal are merged into partitions, each
//!   partition is averaged, and the partition means are averaged
//!   ([`squash_partition`], [`allsquash_partition`], [`pool_squashed`]);
//! * frequency weighting: frames whose indices are frequent, either over the
//!   training set or inside the utterance itself, are down-weighted
//!   ([`weights_sif`], [`weights_gp`], [`weights_lp`], [`weights_bp`]).

mod counts;
mod partition;
mod weights;

use std::fmt;
use std::str::FromStr;

pub use counts::{build_counts, CodebookCounts, COUNTS_MAGIC};
pub use partition::{allsquash_partition, pool_squashed, squash_partition, FramePartition};
pub use weights::{weights_bp, weights_gp, weights_lp, weights_sif, SifOptions, DEFAULT_SIF_A};

/// How two frames' index tuples are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EqualityMode {
    /// Equal in every group.
    And,
    /// Equal in at least one group.
    Or,
}

impl fmt::Display for EqualityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EqualityMode::And => "and",
            EqualityMode::Or => "or",
        })
    }
}

impl FromStr for EqualityMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "and" => Ok(EqualityMode::And),
            "or" => Ok(EqualityMode::Or),
            _ => Err(crate::Error::Param(format!(
                "equality mode must be `and` or `or`, got `{s}`"
            ))),
        }
    }
}

/// Frame equality under `mode`. Tuples must have the same length.
pub fn frames_equal(a: &[u16], b: &[u16], mode: EqualityMode) -> bool {
    debug_assert_eq!(a.len(), b.len());
    match mode {
        EqualityMode::And => a == b,
        EqualityMode::Or => a.iter().zip(b).any(|(x, y)| x == y),
    }
}
