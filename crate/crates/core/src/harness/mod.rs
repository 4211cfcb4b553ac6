//! Training, evaluation and timing.

mod config;
mod eval;
mod optim;
mod train;

pub use config::{ClassWeightMode, ModelKind, TrainConfig};
pub use eval::{evaluate, evaluate_samples, forecast_frames, timing_probe, EvalOptions, Method, Prediction, Predictor, SrccTarget, TimingStats};
pub use optim::Adam;
pub use train::{load_split, prepare, train, train_forecaster_samples, train_samples, validate_model, EpochLog, PreparedSample, TrainLog};
