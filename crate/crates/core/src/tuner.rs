//! Per-node batch-size tuning.
//!
//! Synchronous training runs at the pace of the slowest node, so the tuner
//! first fixes the slowest node's batch size (the candidate with the best
//! images-per-second), then grows every faster node's batch until its step
//! time climbs into a one-sided margin band just below the slow node's step
//! time. The growth step is the batch times the relative step-time gap,
//! damped by `C`; the band width is `1/E` of the slow step time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{max_batch_for_memory, ClusterSpec, NetworkDescriptor, ThroughputCurve};

/// Tuning knobs.
///
/// `C >= 1` damps the batch update (larger C, finer updates). `E > 1` sets
/// the step-time margin `1/E`; the default 5 gives the fixed 20% band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub candidate_batches: Vec<u64>,
    pub c: f64,
    pub e: f64,
    pub max_iterations: u32,
    pub memory_cap_enforced: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            candidate_batches: vec![8, 15, 16, 25, 32, 50, 64, 128, 256, 512],
            c: 4.0,
            e: 5.0,
            max_iterations: 100,
            memory_cap_enforced: true,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_batches.is_empty() {
            return Err(Error::invalid("tune config", "candidate batch list is empty"));
        }
        if !self.candidate_batches.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(
                "tune config",
                "candidate batches must be strictly increasing",
            ));
        }
        if self.candidate_batches[0] == 0 {
            return Err(Error::invalid("tune config", "candidate batches must be positive"));
        }
        if !(self.c >= 1.0) {
            return Err(Error::invalid("tune config", format!("C must be >= 1, got {}", self.c)));
        }
        if !(self.e > 1.0) {
            return Err(Error::invalid("tune config", format!("E must be > 1, got {}", self.e)));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("tune config", "max_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Why a fast-node tuning loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneStatus {
    /// Step time entered the margin band.
    Converged,
    /// Memory cap reached before the margin.
    Capped,
    /// Iteration budget exhausted; best-so-far returned.
    Unconverged,
}

/// Slow-node selection result.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowNodeChoice {
    pub batch_size: u64,
    pub images_per_sec: f64,
    pub step_time: f64,
}

/// Fast-node tuning result.
#[derive(Debug, Clone, PartialEq)]
pub struct FastNodeChoice {
    pub batch_size: u64,
    pub step_time: f64,
    pub status: TuneStatus,
    pub iterations: u32,
    /// Size of the last batch increment applied (0 if none was).
    pub last_update_quantum: u64,
}

/// Per-node outcome inside a [`TuneResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTune {
    pub batch: u64,
    pub step_time_sec: f64,
    pub img_per_sec: f64,
}

/// Cluster-wide tuning outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub slow_node: String,
    /// Largest relative step-time gap to the slow node.
    pub margin_achieved: f64,
    pub per_node: BTreeMap<String, NodeTune>,
}

impl TuneResult {
    pub fn node(&self, node_id: &str) -> Result<&NodeTune> {
        self.per_node.get(node_id).ok_or_else(|| Error::UnknownNode {
            node_id: node_id.to_string(),
            context: "tune result".into(),
        })
    }

    pub fn total_batch(&self) -> u64 {
        self.per_node.values().map(|n| n.batch).sum()
    }
}

/// Picks the slow node's batch: the candidate under the memory cap with the
/// highest throughput, ties broken toward the smallest batch.
pub fn select_slow_node_batch(
    curve: &ThroughputCurve,
    config: &TuneConfig,
    mem_cap: u64,
) -> Result<SlowNodeChoice> {
    config.validate()?;
    let mut best: Option<(u64, f64)> = None;
    for &b in config.candidate_batches.iter().filter(|&&b| b <= mem_cap) {
        let t = curve.throughput_at(b);
        match best {
            Some((_, bt)) if t <= bt => {}
            _ => best = Some((b, t)),
        }
    }
    let (batch_size, images_per_sec) =
        best.ok_or(Error::NoFeasibleCandidate { mem_cap })?;
    Ok(SlowNodeChoice {
        batch_size,
        images_per_sec,
        step_time: batch_size as f64 / images_per_sec,
    })
}

/// Grows a fast node's batch until its step time reaches the margin band
/// `[slow * (1 - 1/E), slow]`.
///
/// Update rule: `b += max(1, round(b * (slow - step(b)) / (C * slow)))`.
/// The relative gap keeps the increment dimensionless; the floor of 1
/// guarantees progress, so the loop terminates within `mem_cap - initial`
/// steps or the iteration budget.
pub fn tune_fast_node(
    fast_curve: &ThroughputCurve,
    slow_step_time: f64,
    config: &TuneConfig,
    initial_batch: u64,
    mem_cap: u64,
) -> Result<FastNodeChoice> {
    config.validate()?;
    if !(slow_step_time > 0.0) {
        return Err(Error::invalid("tune", "slow step time must be positive"));
    }
    if initial_batch == 0 {
        return Err(Error::invalid("tune", "initial batch must be positive"));
    }
    if mem_cap == 0 {
        return Err(Error::NoFeasibleCandidate { mem_cap });
    }

    let band_floor = slow_step_time * (1.0 - 1.0 / config.e);
    let mut batch = initial_batch.min(mem_cap);
    let mut iterations = 0u32;
    let mut last_quantum = 0u64;
    loop {
        let step = fast_curve.step_time(batch);
        if step >= band_floor {
            return Ok(FastNodeChoice {
                batch_size: batch,
                step_time: step,
                status: TuneStatus::Converged,
                iterations,
                last_update_quantum: last_quantum,
            });
        }
        if batch >= mem_cap {
            return Ok(FastNodeChoice {
                batch_size: batch,
                step_time: step,
                status: TuneStatus::Capped,
                iterations,
                last_update_quantum: last_quantum,
            });
        }
        if iterations >= config.max_iterations {
            return Ok(FastNodeChoice {
                batch_size: batch,
                step_time: step,
                status: TuneStatus::Unconverged,
                iterations,
                last_update_quantum: last_quantum,
            });
        }
        let rel_gap = (slow_step_time - step) / slow_step_time;
        // Round half-up, floor increment of 1.
        let raw = (batch as f64 * rel_gap / config.c + 0.5).floor() as u64;
        let quantum = raw.max(1);
        let next = batch.saturating_add(quantum).min(mem_cap);
        last_quantum = next - batch;
        batch = next;
        iterations += 1;
    }
}

/// Tunes a whole cluster for one network.
///
/// The slow node is the one with the largest plateau step-time floor
/// (saturation batch over plateau throughput); ties break toward the
/// lexicographically smallest node id so the result is order-independent.
pub fn tune_cluster(
    cluster: &ClusterSpec,
    net: &NetworkDescriptor,
    config: &TuneConfig,
) -> Result<TuneResult> {
    config.validate()?;
    net.validate()?;

    let mem_cap = |node: &crate::profiles::NodeProfile| -> Result<u64> {
        if config.memory_cap_enforced {
            max_batch_for_memory(node, net).map_err(|e| Error::NodeTuning {
                node_id: node.node_id.clone(),
                source: Box::new(e),
            })
        } else {
            Ok(u64::MAX)
        }
    };

    // Rank nodes by plateau step-time floor.
    let mut slow_id: Option<(&str, f64)> = None;
    for node in cluster.nodes() {
        let curve = node.curve(&net.name)?;
        let floor = curve.plateau_step_floor();
        slow_id = match slow_id {
            None => Some((&node.node_id, floor)),
            Some((sid, sfloor)) => {
                if floor > sfloor || (floor == sfloor && node.node_id.as_str() < sid) {
                    Some((&node.node_id, floor))
                } else {
                    Some((sid, sfloor))
                }
            }
        };
    }
    let slow_id = slow_id.expect("cluster has at least the host").0.to_string();

    let slow_node = cluster
        .nodes()
        .find(|n| n.node_id == slow_id)
        .expect("slow node came from the cluster");
    let slow_curve = slow_node.curve(&net.name)?;
    let slow_cap = mem_cap(slow_node)?;
    let slow = select_slow_node_batch(slow_curve, config, slow_cap).map_err(|e| Error::NodeTuning {
        node_id: slow_id.clone(),
        source: Box::new(e),
    })?;

    let mut per_node = BTreeMap::new();
    per_node.insert(
        slow_id.clone(),
        NodeTune {
            batch: slow.batch_size,
            step_time_sec: slow.step_time,
            img_per_sec: slow.images_per_sec,
        },
    );

    for node in cluster.nodes().filter(|n| n.node_id != slow_id) {
        let curve = node.curve(&net.name)?;
        let cap = mem_cap(node)?;
        let fast = tune_fast_node(curve, slow.step_time, config, slow.batch_size.min(cap), cap)
            .map_err(|e| Error::NodeTuning {
                node_id: node.node_id.clone(),
                source: Box::new(e),
            })?;
        per_node.insert(
            node.node_id.clone(),
            NodeTune {
                batch: fast.batch_size,
                step_time_sec: fast.step_time,
                img_per_sec: curve.throughput_at(fast.batch_size),
            },
        );
    }

    let margin_achieved = per_node
        .values()
        .map(|n| (n.step_time_sec - slow.step_time).abs() / slow.step_time)
        .fold(0.0, f64::max);

    Ok(TuneResult {
        slow_node: slow_id,
        margin_achieved,
        per_node,
    })
}
