//! Bitrate timelines, peak-rate/latency trade-off curves and task metrics.

mod metrics;
mod timeline;
mod tradeoff;

pub use metrics::{agreement_score, edit_counts, metrics_from_tasks, word_error_rate, EditCounts, TaskMetrics};
pub use timeline::{airtime, bitrate_timeline, timeline_csv, Airtime, TimelineSample};
pub use tradeoff::{embedding_point, tradeoff_csv, tradeoff_curve, TradeoffMode, TradeoffPoint};

use thiserror::Error;

/// Token payload rate: 13 bits at 50 Hz.
pub const TOKEN_PAYLOAD_BPS: f64 = 650.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("{name} must be positive and finite, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("reference is empty")]
    EmptyReference,
    #[error("label sequences are empty")]
    EmptyLabels,
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("task file line {line}: {message}")]
    TaskParse { line: usize, message: String },
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64, AnalysisError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(AnalysisError::NotPositive { name, value })
    }
}
