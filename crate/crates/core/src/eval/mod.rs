//! Forecast scoring, naive baselines and the node-scaling probe.

pub mod baselines;
pub mod metrics;
pub mod panel;
pub mod report;
pub mod scaling;

pub use baselines::{persistence, HistoricalAverage};
pub use metrics::{crossing_rate, interval_coverage, mae, pinball, rmse};
pub use panel::ForecastSet;
pub use report::MetricRecord;
pub use scaling::{scaling_probe, ProbeSettings, ScalingReport};
