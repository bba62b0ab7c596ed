//! In-process synchronous data-parallel training.
//!
//! Workers are simulated with a deterministic step barrier: each computes a
//! gradient on its next batch, the gradients are combined by the segmented
//! ring allreduce, and the identical reduced gradient is applied to every
//! replica, which therefore stay bit-identical step after step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitioner::PartitionPlan;

use super::mlp::{forward_backward, MlpModel, Sample};
use super::ring::weighted_allreduce;
use super::schedule::{lr_at, LrSchedule};

/// How per-worker gradients are combined.
///
/// Batch-weighted averaging is exactly equivalent to SGD on the combined
/// batch; uniform averaging is what a stock allreduce does and drifts when
/// batch sizes differ. Both are available so the drift can be measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    BatchWeighted,
    Uniform,
}

/// One worker's slice of the job.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub worker_id: String,
    pub batch_size: usize,
    /// Ordered sample indices this worker reads, cyclically.
    pub shard: Vec<usize>,
    pub model_replica: MlpModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTracePoint {
    pub step: u64,
    pub lr: f64,
    pub worker_count: usize,
    pub total_batch: usize,
    pub loss: f64,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub final_model: MlpModel,
    pub loss_trace: Vec<LossTracePoint>,
}

impl TrainRun {
    /// Loss-trace CSV: `step,lr,worker_count,total_batch,loss`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,lr,worker_count,total_batch,loss\n");
        for p in &self.loss_trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.step, p.lr, p.worker_count, p.total_batch, p.loss
            ));
        }
        out
    }
}

fn next_batch(dataset: &[Sample], shard: &[usize], cursor: &mut usize, batch_size: usize) -> Result<Vec<Sample>> {
    if shard.is_empty() {
        return Err(Error::invalid("worker", "shard must be non-empty"));
    }
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let idx = shard[*cursor % shard.len()];
        let sample = dataset.get(idx).ok_or_else(|| Error::invalid(
            "worker",
            format!("shard references sample {idx} beyond the dataset"),
        ))?;
        batch.push(sample.clone());
        *cursor += 1;
    }
    Ok(batch)
}

/// Runs `steps` of synchronous data-parallel SGD.
///
/// All replicas must start identical. When a partition plan is given, each
/// worker's shard length and batch size are checked against it. Every step
/// asserts the replicas are still bit-identical; any divergence is an
/// implementation bug, not a tolerance issue.
pub fn train_distributed(
    workers: &[WorkerState],
    dataset: &[Sample],
    plan: Option<&PartitionPlan>,
    schedule: &LrSchedule,
    steps: u64,
    averaging: Averaging,
) -> Result<TrainRun> {
    if workers.is_empty() {
        return Err(Error::invalid("train", "needs at least one worker"));
    }
    schedule.validate()?;
    for w in &workers[1..] {
        if w.model_replica != workers[0].model_replica {
            return Err(Error::invalid(
                "train",
                format!("replica on `{}` differs from `{}` before step 0", w.worker_id, workers[0].worker_id),
            ));
        }
    }
    if let Some(plan) = plan {
        for w in workers {
            let assignment = plan.per_node.get(&w.worker_id).ok_or_else(|| Error::UnknownNode {
                node_id: w.worker_id.clone(),
                context: "partition plan".into(),
            })?;
            let expected = w.batch_size as u64 * plan.epoch_steps;
            if assignment.total() != expected {
                return Err(Error::InconsistentPlan {
                    detail: format!(
                        "worker `{}` holds {} samples, batch x steps = {expected}",
                        w.worker_id,
                        assignment.total()
                    ),
                });
            }
            if w.shard.len() as u64 != assignment.total() {
                return Err(Error::InconsistentPlan {
                    detail: format!(
                        "worker `{}` shard has {} samples, plan assigns {}",
                        w.worker_id,
                        w.shard.len(),
                        assignment.total()
                    ),
                });
            }
        }
    }

    let mut replicas: Vec<MlpModel> = workers.iter().map(|w| w.model_replica.clone()).collect();
    let mut cursors = vec![0usize; workers.len()];
    let total_batch: usize = workers.iter().map(|w| w.batch_size).sum();
    let mut trace = Vec::with_capacity(steps as usize);

    for step in 0..steps {
        let mut grads = Vec::with_capacity(workers.len());
        let mut weighted_loss = 0.0;
        for (i, w) in workers.iter().enumerate() {
            let batch = next_batch(dataset, &w.shard, &mut cursors[i], w.batch_size)?;
            let (loss, grad) = forward_backward(&replicas[i], &batch)?;
            weighted_loss += loss * w.batch_size as f64;
            let weight = match averaging {
                Averaging::BatchWeighted => w.batch_size as f64,
                Averaging::Uniform => 1.0,
            };
            grads.push((grad, weight));
        }
        let reduced = weighted_allreduce(&grads)?;
        let lr = lr_at(schedule, step);
        for replica in &mut replicas {
            replica.weights.sgd_step(&reduced, lr)?;
        }
        for replica in &replicas[1..] {
            if replica.weights.values != replicas[0].weights.values {
                return Err(Error::invalid(
                    "train",
                    format!("replicas diverged after step {step}; this is a bug"),
                ));
            }
        }
        trace.push(LossTracePoint {
            step,
            lr,
            worker_count: workers.len(),
            total_batch,
            loss: weighted_loss / total_batch as f64,
        });
    }

    Ok(TrainRun {
        final_model: replicas.into_iter().next().unwrap(),
        loss_trace: trace,
    })
}

/// Single-node SGD over the union batch: at each step the node consumes what
/// the distributed workers would have consumed, concatenated in worker
/// order. This is the independent reference the distributed path is compared
/// against; it never touches the ring.
pub fn train_single_node(
    model: &MlpModel,
    workers: &[(usize, Vec<usize>)],
    dataset: &[Sample],
    schedule: &LrSchedule,
    steps: u64,
) -> Result<TrainRun> {
    if workers.is_empty() {
        return Err(Error::invalid("train", "needs at least one shard"));
    }
    schedule.validate()?;
    let mut model = model.clone();
    let mut cursors = vec![0usize; workers.len()];
    let total_batch: usize = workers.iter().map(|&(b, _)| b).sum();
    let mut trace = Vec::with_capacity(steps as usize);

    for step in 0..steps {
        let mut union = Vec::with_capacity(total_batch);
        for (i, (batch_size, shard)) in workers.iter().enumerate() {
            union.extend(next_batch(dataset, shard, &mut cursors[i], *batch_size)?);
        }
        let (loss, grad) = forward_backward(&model, &union)?;
        let lr = lr_at(schedule, step);
        model.weights.sgd_step(&grad, lr)?;
        trace.push(LossTracePoint {
            step,
            lr,
            worker_count: 1,
            total_batch,
            loss,
        });
    }

    Ok(TrainRun {
        final_model: model,
        loss_trace: trace,
    })
}
