//! Minimal transformer forecaster with quantile heads, its training loop,
//! metrics and checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod loss;
pub mod model;
pub mod train;

pub use config::{EncoderKind, ModelConfig, StaticInjection};
pub use data::{ForecastBatch, Window, WindowSet};
pub use loss::{metrics, pinball, quantile_loss, MetricSums, MetricsReport};
pub use model::{build_model, param_group, Forecaster, ForwardOutput};
pub use train::{evaluate, predict, train, train_subset, Adam, History, Predictions, TrainConfig};
