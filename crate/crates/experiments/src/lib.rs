//! Experiment suites over the fair multi-agent environments: paired
//! interventions, reward-term ablations, fairness frontiers and baselines.

pub mod catalog;
pub mod output;
pub mod studies;

use mafe_core::MafeError;

/// Process exit code for an error: 3 for environment contract violations,
/// 2 for everything else (configuration, names, files).
pub fn exit_code(e: &MafeError) -> u8 {
    match e {
        MafeError::Contract { .. } | MafeError::Shape { .. } | MafeError::Layout(_) | MafeError::Schema(_) => 3,
        MafeError::Config(_) | MafeError::Parse { .. } | MafeError::Unknown(_) | MafeError::Io(_) => 2,
    }
}
