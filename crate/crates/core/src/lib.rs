//! Stannis: a toolkit for heterogeneous data-parallel training on clusters
//! of computational storage devices (CSDs).
//!
//! The crate models a training cluster made of one host processor and a set
//! of in-storage processing engines with very different speeds, and answers
//! the questions that come up when such a cluster runs synchronous
//! ring-allreduce training:
//!
//! * [`profiles`] ingests per-node throughput benchmarks and fits the
//!   saturating throughput curves everything else consumes.
//! * [`tuner`] picks per-node batch sizes so every node finishes a step in
//!   near-equal wall time.
//! * [`partitioner`] assigns dataset shards so all nodes run the same number
//!   of steps per epoch without private data ever leaving its owning node.
//! * [`simengine`] is a deterministic epoch simulator with a ring-allreduce
//!   sync-cost model and a calibrated wall-power model, producing
//!   throughput, speedup, and energy-per-image reports.
//! * [`minitrain`] is an exact desk-scale synchronous-SGD implementation
//!   (tiny MLP, analytic gradients, segmented ring reduction) used to verify
//!   that heterogeneous-batch training is numerically equivalent to
//!   single-node training.

// Validation uses `!(x >= 0.0)` deliberately: it rejects NaN where `x < 0.0`
// would let it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod minitrain;
pub mod partitioner;
pub mod profiles;
pub mod simengine;
pub mod tuner;

pub use error::{Error, Result};
