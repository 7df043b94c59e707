//! Continual-learning regression of bending angle from a drifting 1-D
//! strain-sensor signal: a two-part LSTM/dense network, a Wasserstein-based
//! drift gate, rehearsal with teacher regularization, benchmark trainers and
//! the RMSE-based continual-learning metrics.

pub mod bench;
pub mod config;
pub mod data;
pub mod drift;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod replay;
pub mod report;
pub mod tensor;
pub mod trainer;

pub use config::RunConfig;
pub use data::{ExperimentDataset, SuiteConfig, SynthConfig, TaskSequence};
pub use drift::{wasserstein1, DriftGateConfig, EmpiricalDistribution};
pub use error::{Error, Result};
pub use metrics::AccuracyMatrix;
pub use model::TwoPartModel;
pub use replay::ReplayBuffer;
pub use report::RunReport;
pub use trainer::TrainerConfig;
