//! Snapshot types returned by the read endpoints.

use d3po_core::d3po::{EpochStats, PreferenceLabel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingStatus {
    Idle,
    Training,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub a: usize,
    pub b: usize,
    pub tie: usize,
}

impl LabelCounts {
    pub fn add(&mut self, label: PreferenceLabel) {
        match label {
            PreferenceLabel::A => self.a += 1,
            PreferenceLabel::B => self.b += 1,
            PreferenceLabel::Tie => self.tie += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.a + self.b + self.tie
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub epoch: u64,
    pub queued: usize,
    pub claimed: usize,
    pub labeled: usize,
    pub ties: usize,
    pub status: TrainingStatus,
    pub min_labeled: usize,
}

/// One finished epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    /// Mean monitoring score over every image generated for the epoch.
    pub mean_score: Option<f64>,
    pub labels: LabelCounts,
    pub stats: EpochStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub objective: Option<String>,
    pub history: Vec<EpochMetrics>,
    /// Labels so far in the open epoch.
    pub current: LabelCounts,
    /// Monitoring score of the open epoch's images.
    pub current_score: Option<f64>,
}
