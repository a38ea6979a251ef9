//! Experiment orchestration: local training, aggregation, evaluation and
//! per-epoch metrics.

mod config;
mod metrics;
mod run;

pub use crate::aggregation::distance_range;
pub use config::{
    ArchChoice, DataSource, DataSpec, ExperimentConfig, InitChoice, Mode, OptimizerSpec,
    PartitionScheme, TopologyKind,
};
pub use metrics::{
    best_client, epoch_threshold, first_exceeding, ClientRecord, EpochRecord, MetricsLog, RunMeta,
};
pub use run::{
    build_partition, client_graph, config_architecture, evaluate, load_data, local_update,
    run_experiment, run_experiment_with, ClientState, TestSet,
};
