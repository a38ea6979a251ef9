//! Parameter mixing: consensus, direct averaging, FedAvg, and segmented
//! sharing plans.

mod consensus;
mod fedavg;
mod plan;

pub use consensus::{
    consensus_step, direct_average, distance_range, max_pairwise_distance, run_consensus,
    segmented_aggregate, AlphaRule,
};
pub use fedavg::{fedavg_participants, fedavg_round, fedavg_select};
pub use plan::{
    build_plan, run_aggregation, AggregationOutcome, AggregationPlan, MixingRule, PlanSpec, Setting,
};
