//! End-to-end federated simulation: configuration, the round loop,
//! checkpoints, and metric files.

mod checkpoint;
mod config;
mod metrics;
mod sim;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{
    Algorithm, DataConfig, DataSource, ExperimentConfig, LrSchedule, ModelConfig, PoolConfig,
    TrainConfig,
};
pub use metrics::{read_metrics_csv, CsvRow, MetricsWriter, CSV_COLUMNS};
pub use sim::{
    aggregate_networks, build_federation, evaluate_global, pretrain_server, run_experiment,
    Evaluation, ExperimentOutcome, Federation, RoundMetrics, SelectionSummary, Simulation,
};
