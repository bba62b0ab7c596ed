//! Desk-scale exact verification of synchronous data-parallel SGD.
//!
//! A tiny fully-connected network with analytic gradients stands in for the
//! real model. Workers with heterogeneous batch sizes compute gradients on
//! their own shards, combine them with a segmented ring allreduce, and apply
//! identical SGD updates, so the whole distributed step can be compared
//! number-for-number against single-node training on the combined batch.

mod data;
mod mlp;
mod ring;
mod schedule;
mod tensor;
mod trainer;

pub use data::{evaluate_accuracy, synthetic_classification};
pub use mlp::{forward_backward, Activation, LossKind, MlpModel, Sample, Target};
pub use ring::{ring_schedule, weighted_allreduce, TransferOp};
pub use schedule::{lr_at, LrSchedule, ScheduleMode};
pub use tensor::{GradientTensor, LayerShape};
pub use trainer::{
    train_distributed, train_single_node, Averaging, LossTracePoint, TrainRun, WorkerState,
};
