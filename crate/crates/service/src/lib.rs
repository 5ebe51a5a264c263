//! HTTP labeling service: queues pairs sampled from the current policy,
//! serves them as PNGs, collects A/B/tie labels and trains one epoch on
//! request.

pub mod error;
pub mod http;
pub mod queue;
pub mod render;
pub mod service;
pub mod session;

pub use error::{Result, ServiceError};
pub use http::{router, serve};
pub use service::{checkpoint_path, PairView, Service, ServiceConfig, ID_STRIDE};
pub use session::{EpochMetrics, LabelCounts, MetricsSnapshot, SessionState, TrainingStatus};
