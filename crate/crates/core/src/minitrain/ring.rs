//! Segmented ring allreduce.
//!
//! The tensor is split into `N` floor-balanced contiguous segments. A
//! reduce-scatter phase runs `N-1` rounds in which worker `w` sends segment
//! `(w - round) mod N` to worker `(w + 1) mod N`, which accumulates it; an
//! allgather phase runs another `N-1` rounds broadcasting the reduced
//! segments the same way. Segment `s` therefore accumulates contributions
//! starting at worker `(s + 1) mod N` in ring order — a fixed, documented
//! reduction order, so every run is bit-identical.

use std::ops::Range;

use crate::error::{Error, Result};

use super::tensor::GradientTensor;

/// One send in one round of the ring schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferOp {
    pub sender: usize,
    pub receiver: usize,
    pub segment: Range<usize>,
}

/// Floor-balanced contiguous segment `s` of a `tensor_len` vector split `n` ways.
fn segment_range(s: usize, n: usize, tensor_len: usize) -> Range<usize> {
    let start = s * tensor_len / n;
    let end = (s + 1) * tensor_len / n;
    start..end
}

/// The full 2(N-1)-round transfer schedule of the ring.
///
/// Every worker sends exactly one segment per round to its ring successor;
/// after all rounds every worker holds every reduced segment. Aggregate
/// traffic is `2(N-1)` times the tensor length, i.e. `2(N-1)/N` of the
/// payload per worker.
pub fn ring_schedule(n_workers: usize, tensor_len: usize) -> Result<Vec<Vec<TransferOp>>> {
    if n_workers < 2 {
        return Err(Error::RingTooSmall { n_workers });
    }
    let n = n_workers;
    let mut rounds = Vec::with_capacity(2 * (n - 1));
    // Reduce-scatter rounds.
    for r in 0..n - 1 {
        let mut ops = Vec::with_capacity(n);
        for w in 0..n {
            let seg = (w + n - r % n) % n;
            ops.push(TransferOp {
                sender: w,
                receiver: (w + 1) % n,
                segment: segment_range(seg, n, tensor_len),
            });
        }
        rounds.push(ops);
    }
    // Allgather rounds: each worker starts by forwarding the segment it just
    // finished reducing, (w + 1) mod N.
    for r in 0..n - 1 {
        let mut ops = Vec::with_capacity(n);
        for w in 0..n {
            let seg = (w + 1 + n - r % n) % n;
            ops.push(TransferOp {
                sender: w,
                receiver: (w + 1) % n,
                segment: segment_range(seg, n, tensor_len),
            });
        }
        rounds.push(ops);
    }
    Ok(rounds)
}

/// Batch-weighted mean of gradients, reduced over the ring schedule.
///
/// Computes `sum(w_i * g_i) / sum(w_i)`; the segmented ring fixes the
/// accumulation order. The result is within 1e-12 relative of the directly
/// computed weighted mean.
pub fn weighted_allreduce(grads: &[(GradientTensor, f64)]) -> Result<GradientTensor> {
    if grads.is_empty() {
        return Err(Error::invalid("allreduce", "needs at least one gradient"));
    }
    let len = grads[0].0.len();
    for (g, w) in grads {
        if g.len() != len {
            return Err(Error::LengthMismatch {
                left: len,
                right: g.len(),
            });
        }
        if !(*w > 0.0) {
            return Err(Error::invalid("allreduce", format!("weight {w} must be positive")));
        }
    }
    let weight_sum: f64 = grads.iter().map(|(_, w)| w).sum();

    if grads.len() == 1 {
        // A ring needs two nodes; a single worker's weighted mean is itself.
        return Ok(grads[0].0.clone());
    }

    // Every worker starts from its pre-scaled contribution.
    let n = grads.len();
    let mut buffers: Vec<Vec<f64>> = grads
        .iter()
        .map(|(g, w)| g.values.iter().map(|&v| v * w).collect())
        .collect();

    let rounds = ring_schedule(n, len)?;
    let (reduce_rounds, gather_rounds) = rounds.split_at(n - 1);

    for round in reduce_rounds {
        // Sends happen concurrently: snapshot outgoing segments first.
        let outgoing: Vec<Vec<f64>> = round
            .iter()
            .map(|op| buffers[op.sender][op.segment.clone()].to_vec())
            .collect();
        for (op, data) in round.iter().zip(outgoing) {
            let dst = &mut buffers[op.receiver][op.segment.clone()];
            for (d, s) in dst.iter_mut().zip(data) {
                *d += s;
            }
        }
    }
    for round in gather_rounds {
        let outgoing: Vec<Vec<f64>> = round
            .iter()
            .map(|op| buffers[op.sender][op.segment.clone()].to_vec())
            .collect();
        for (op, data) in round.iter().zip(outgoing) {
            buffers[op.receiver][op.segment.clone()].copy_from_slice(&data);
        }
    }

    // All workers now hold identical reduced copies.
    debug_assert!(buffers.iter().all(|b| b == &buffers[0]));

    let mut out = grads[0].0.clone();
    for (o, v) in out.values.iter_mut().zip(&buffers[0]) {
        *o = v / weight_sum;
    }
    Ok(out)
}
