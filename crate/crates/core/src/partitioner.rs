//! Privacy-aware dataset partitioning.
//!
//! Every node must run the same number of steps per epoch, so each node's
//! sample count is its batch size times the common step count. Private
//! samples never leave their owning node; the shared public pool fills the
//! remainder. When the pool runs dry a node repeats its own private samples
//! cyclically rather than stalling the ring.
//!
//! The step count is chosen to maximize the number of distinct samples seen
//! per epoch, tie-broken toward fewer duplicates (i.e. the smallest such
//! step count). Sample identity is modeled as integer ranges: public ids are
//! global `[0, public_total)`, private ids are scoped to their node.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tuner::TuneResult;

/// Where the samples for one epoch come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub public_total: u64,
    /// Private sample count resident on each node. Nodes absent from the map
    /// (the host, typically) hold no private data and are fed public samples
    /// only.
    #[serde(default)]
    pub private_per_node: BTreeMap<String, u64>,
}

impl DatasetSpec {
    pub fn private_on(&self, node_id: &str) -> u64 {
        self.private_per_node.get(node_id).copied().unwrap_or(0)
    }
}

/// One node's assignment for an epoch.
///
/// `private` is a range of node-scoped private ids, `public` a range of
/// global public ids, and `duplicated` the count of extra passes over the
/// node's own private range used to pad the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAssignment {
    pub private: [u64; 2],
    pub public: [u64; 2],
    pub duplicated: u64,
    pub steps_per_epoch: u64,
}

impl NodeAssignment {
    pub fn private_assigned(&self) -> u64 {
        self.private[1] - self.private[0]
    }

    pub fn public_assigned(&self) -> u64 {
        self.public[1] - self.public[0]
    }

    pub fn total(&self) -> u64 {
        self.private_assigned() + self.public_assigned() + self.duplicated
    }
}

/// Per-node dataset assignment with a common step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub epoch_steps: u64,
    pub per_node: BTreeMap<String, NodeAssignment>,
}

/// Steps per epoch follow from the dataset and batch size; the host's share
/// is the common step count times its own batch size (drop-remainder).
pub fn host_dataset_size(dataset_card: u64, batchsize_card: u64, batchsize_host: u64) -> u64 {
    assert!(dataset_card >= 1 && batchsize_card >= 1 && batchsize_host >= 1);
    (dataset_card / batchsize_card) * batchsize_host
}

/// Distinct samples consumed at step count `s`: all usable private plus the
/// public actually drawn.
fn distinct_at(s: u64, batches: &[(String, u64, u64)], public_total: u64) -> u64 {
    let mut distinct = 0u64;
    let mut public_demand = 0u64;
    for &(_, batch, private) in batches {
        let need = batch * s;
        distinct += need.min(private);
        public_demand += need.saturating_sub(private);
    }
    distinct + public_demand.min(public_total)
}

/// Step count `s` is reachable iff nodes without private data (which cannot
/// duplicate) can be covered by the public pool.
fn feasible_at(s: u64, batches: &[(String, u64, u64)], public_total: u64) -> bool {
    let hard: u64 = batches
        .iter()
        .filter(|&&(_, _, private)| private == 0)
        .map(|&(_, batch, _)| batch * s)
        .sum();
    hard <= public_total
}

/// Builds the epoch plan for a tuned cluster over a dataset.
pub fn balance_epoch(tune: &TuneResult, data: &DatasetSpec) -> Result<PartitionPlan> {
    for node_id in data.private_per_node.keys() {
        if !tune.per_node.contains_key(node_id) {
            return Err(Error::UnknownNode {
                node_id: node_id.clone(),
                context: "dataset spec (no such node in the tune result)".into(),
            });
        }
    }

    // (node_id, batch, resident private), in node-id order.
    let batches: Vec<(String, u64, u64)> = tune
        .per_node
        .iter()
        .map(|(id, t)| (id.clone(), t.batch, data.private_on(id)))
        .collect();
    if batches.is_empty() {
        return Err(Error::InsufficientData {
            detail: "tune result contains no nodes".into(),
        });
    }

    if !feasible_at(1, &batches, data.public_total) {
        return Err(Error::InsufficientData {
            detail: format!(
                "public pool of {} cannot cover one step on nodes without private data",
                data.public_total
            ),
        });
    }

    // Upper bounds: the pool caps nodes that cannot duplicate; past
    // `bound` every distinct sample has been consumed.
    let hard_per_step: u64 = batches
        .iter()
        .filter(|&&(_, _, p)| p == 0)
        .map(|&(_, b, _)| b)
        .sum();
    let cap = data.public_total.checked_div(hard_per_step).unwrap_or(u64::MAX);
    let total_batch: u64 = batches.iter().map(|&(_, b, _)| b).sum();
    let total_private: u64 = batches.iter().map(|&(_, _, p)| p).sum();
    let mut bound = (data.public_total + total_private).div_ceil(total_batch).max(1);
    for &(_, b, p) in &batches {
        bound = bound.max(p.div_ceil(b));
    }
    let hi = bound.min(cap).max(1);

    // Smallest step count achieving the maximum distinct-sample intake
    // (distinct_at is non-decreasing in s).
    let target = distinct_at(hi, &batches, data.public_total);
    let (mut lo, mut hi_search) = (1u64, hi);
    while lo < hi_search {
        let mid = lo + (hi_search - lo) / 2;
        if distinct_at(mid, &batches, data.public_total) >= target {
            hi_search = mid;
        } else {
            lo = mid + 1;
        }
    }
    let epoch_steps = lo;

    // Allocate: private first, then the pool. Nodes without private data
    // draw their full need from the pool (they cannot duplicate); the rest
    // of the pool is split across remaining needs by largest remainder.
    let mut need: BTreeMap<&str, u64> = BTreeMap::new();
    let mut priv_used: BTreeMap<&str, u64> = BTreeMap::new();
    let mut public_share: BTreeMap<&str, u64> = BTreeMap::new();
    let mut pool = data.public_total;

    for (id, batch, private) in &batches {
        let n = batch * epoch_steps;
        need.insert(id, n);
        priv_used.insert(id, n.min(*private));
        public_share.insert(id, 0);
    }
    for (id, _, private) in &batches {
        if *private == 0 {
            let n = need[id.as_str()];
            debug_assert!(pool >= n, "feasibility bound violated");
            public_share.insert(id, n);
            pool -= n;
        }
    }

    let soft: Vec<(&str, u64)> = batches
        .iter()
        .filter(|&&(_, _, p)| p > 0)
        .map(|(id, _, _)| (id.as_str(), need[id.as_str()] - priv_used[id.as_str()]))
        .collect();
    let soft_total: u64 = soft.iter().map(|&(_, r)| r).sum();
    if soft_total <= pool {
        for &(id, r) in &soft {
            public_share.insert(id, r);
        }
    } else if pool > 0 {
        // quota_i = pool * residual_i / total; floors first, then the
        // leftover by largest fractional remainder (node id breaks ties).
        let mut leftover = pool;
        let mut fractions: Vec<(u128, &str)> = Vec::new();
        for &(id, r) in &soft {
            let exact = pool as u128 * r as u128;
            let share = (exact / soft_total as u128) as u64;
            public_share.insert(id, share);
            leftover -= share;
            fractions.push((exact % soft_total as u128, id));
        }
        fractions.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        for &(_, id) in fractions.iter().take(leftover as usize) {
            *public_share.get_mut(id).unwrap() += 1;
        }
    }

    // Lay out contiguous public id ranges in node-id order.
    let mut per_node = BTreeMap::new();
    let mut cursor = 0u64;
    for (id, _, _) in &batches {
        let p = priv_used[id.as_str()];
        let pub_n = public_share[id.as_str()];
        let dup = need[id.as_str()] - p - pub_n;
        per_node.insert(
            id.clone(),
            NodeAssignment {
                private: [0, p],
                public: [cursor, cursor + pub_n],
                duplicated: dup,
                steps_per_epoch: epoch_steps,
            },
        );
        cursor += pub_n;
    }

    Ok(PartitionPlan {
        epoch_steps,
        per_node,
    })
}

/// A broken plan invariant found by [`validate_plan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlanViolation {
    UnknownNode { node_id: String },
    MissingNode { node_id: String },
    TotalMismatch { node_id: String, expected: u64, got: u64 },
    StepsMismatch { node_id: String, expected: u64, got: u64 },
    PrivacyViolation { node_id: String, assigned: u64, resident: u64 },
    PublicOverdraw { assigned: u64, available: u64 },
    PublicRangeOverlap { a: String, b: String },
    PublicRangeOutOfBounds { node_id: String },
    DuplicationWithPublicRemaining { node_id: String },
    DuplicationWithoutPrivate { node_id: String },
    NoSteps,
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::UnknownNode { node_id } => {
                write!(f, "plan names node `{node_id}` absent from the tune result")
            }
            PlanViolation::MissingNode { node_id } => {
                write!(f, "tuned node `{node_id}` missing from the plan")
            }
            PlanViolation::TotalMismatch { node_id, expected, got } => write!(
                f,
                "node `{node_id}` holds {got} samples but batch x steps = {expected}"
            ),
            PlanViolation::StepsMismatch { node_id, expected, got } => write!(
                f,
                "node `{node_id}` runs {got} steps but the plan's epoch has {expected}"
            ),
            PlanViolation::PrivacyViolation { node_id, assigned, resident } => write!(
                f,
                "node `{node_id}` is assigned {assigned} private samples but only {resident} reside there"
            ),
            PlanViolation::PublicOverdraw { assigned, available } => {
                write!(f, "plan assigns {assigned} public samples but the pool has {available}")
            }
            PlanViolation::PublicRangeOverlap { a, b } => {
                write!(f, "public id ranges of `{a}` and `{b}` overlap")
            }
            PlanViolation::PublicRangeOutOfBounds { node_id } => {
                write!(f, "public id range of `{node_id}` exceeds the pool")
            }
            PlanViolation::DuplicationWithPublicRemaining { node_id } => write!(
                f,
                "node `{node_id}` duplicates private data while public samples remain unassigned"
            ),
            PlanViolation::DuplicationWithoutPrivate { node_id } => {
                write!(f, "node `{node_id}` duplicates private data it does not have")
            }
            PlanViolation::NoSteps => write!(f, "plan has zero epoch steps"),
        }
    }
}

/// Checks every [`PartitionPlan`] invariant; returns an empty list iff the
/// plan is sound. Violations are data, not errors.
pub fn validate_plan(plan: &PartitionPlan, tune: &TuneResult, data: &DatasetSpec) -> Vec<PlanViolation> {
    let mut violations = Vec::new();

    if plan.epoch_steps == 0 {
        violations.push(PlanViolation::NoSteps);
    }
    for node_id in tune.per_node.keys() {
        if !plan.per_node.contains_key(node_id) {
            violations.push(PlanViolation::MissingNode {
                node_id: node_id.clone(),
            });
        }
    }

    let mut public_assigned_total = 0u64;
    let mut ranges: Vec<(&str, u64, u64)> = Vec::new();

    for (node_id, a) in &plan.per_node {
        let tuned = match tune.per_node.get(node_id) {
            Some(t) => t,
            None => {
                violations.push(PlanViolation::UnknownNode {
                    node_id: node_id.clone(),
                });
                continue;
            }
        };
        if a.steps_per_epoch != plan.epoch_steps {
            violations.push(PlanViolation::StepsMismatch {
                node_id: node_id.clone(),
                expected: plan.epoch_steps,
                got: a.steps_per_epoch,
            });
        }
        let expected = tuned.batch * plan.epoch_steps;
        if a.total() != expected {
            violations.push(PlanViolation::TotalMismatch {
                node_id: node_id.clone(),
                expected,
                got: a.total(),
            });
        }
        let resident = data.private_on(node_id);
        if a.private_assigned() > resident {
            violations.push(PlanViolation::PrivacyViolation {
                node_id: node_id.clone(),
                assigned: a.private_assigned(),
                resident,
            });
        }
        if a.duplicated > 0 && a.private_assigned() == 0 {
            violations.push(PlanViolation::DuplicationWithoutPrivate {
                node_id: node_id.clone(),
            });
        }
        if a.public[1] > data.public_total {
            violations.push(PlanViolation::PublicRangeOutOfBounds {
                node_id: node_id.clone(),
            });
        }
        public_assigned_total += a.public_assigned();
        if a.public_assigned() > 0 {
            ranges.push((node_id, a.public[0], a.public[1]));
        }
    }

    if public_assigned_total > data.public_total {
        violations.push(PlanViolation::PublicOverdraw {
            assigned: public_assigned_total,
            available: data.public_total,
        });
    }

    ranges.sort_by_key(|&(_, lo, _)| lo);
    for w in ranges.windows(2) {
        if w[1].1 < w[0].2 {
            violations.push(PlanViolation::PublicRangeOverlap {
                a: w[0].0.to_string(),
                b: w[1].0.to_string(),
            });
        }
    }

    // Duplication is a last resort: it may appear only once the pool is
    // fully assigned.
    if public_assigned_total < data.public_total {
        for (node_id, a) in &plan.per_node {
            if a.duplicated > 0 {
                violations.push(PlanViolation::DuplicationWithPublicRemaining {
                    node_id: node_id.clone(),
                });
            }
        }
    }

    violations
}

/// Expands a plan into manifest rows `node_id,source,sample_id`.
///
/// Private and duplicated ids are node-scoped; public ids are global pool
/// ids. Duplicated rows cycle over the node's private range.
pub fn plan_manifest_csv(plan: &PartitionPlan) -> String {
    let mut out = String::from("node_id,source,sample_id\n");
    for (node_id, a) in &plan.per_node {
        for id in a.private[0]..a.private[1] {
            out.push_str(&format!("{node_id},private,{id}\n"));
        }
        for id in a.public[0]..a.public[1] {
            out.push_str(&format!("{node_id},public,{id}\n"));
        }
        let private_len = a.private_assigned();
        for k in 0..a.duplicated {
            let id = a.private[0] + (k % private_len.max(1));
            out.push_str(&format!("{node_id},dup,{id}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuner::NodeTune;

    fn tune_of(batches: &[(&str, u64)]) -> TuneResult {
        let mut per_node = BTreeMap::new();
        for &(id, b) in batches {
            per_node.insert(
                id.to_string(),
                NodeTune {
                    batch: b,
                    step_time_sec: 1.0,
                    img_per_sec: b as f64,
                },
            );
        }
        TuneResult {
            slow_node: batches[0].0.to_string(),
            margin_achieved: 0.0,
            per_node,
        }
    }

    fn data(public: u64, private: &[(&str, u64)]) -> DatasetSpec {
        DatasetSpec {
            public_total: public,
            private_per_node: private.iter().map(|&(id, n)| (id.to_string(), n)).collect(),
        }
    }

    #[test]
    fn eq1_direct_substitution() {
        assert_eq!(host_dataset_size(3000, 25, 315), 37800);
    }

    #[test]
    fn eq1_single_step_identity() {
        assert_eq!(host_dataset_size(25, 25, 315), 315);
        assert_eq!(host_dataset_size(7, 7, 99), 99);
    }

    #[test]
    fn eq1_drops_remainder() {
        // floor(3010 / 25) = 120 steps, times the host batch.
        assert_eq!(host_dataset_size(3010, 25, 315), 37800);
    }

    #[test]
    fn balance_public_only_cluster_matches_eq1() {
        let tune = tune_of(&[("host", 315), ("csd0", 25)]);
        let d = data(40_800, &[]);
        let plan = balance_epoch(&tune, &d).unwrap();
        assert_eq!(plan.epoch_steps, 120);
        let host = &plan.per_node["host"];
        let csd = &plan.per_node["csd0"];
        assert_eq!(host.public_assigned(), 37_800);
        assert_eq!(host.private_assigned(), 0);
        assert_eq!(csd.public_assigned(), 3_000);
        assert_eq!(csd.duplicated, 0);
        assert!(validate_plan(&plan, &tune, &d).is_empty());
    }

    #[test]
    fn balance_exact_private_fit() {
        let tune = tune_of(&[("csd0", 10)]);
        let d = data(0, &[("csd0", 100)]);
        let plan = balance_epoch(&tune, &d).unwrap();
        assert_eq!(plan.epoch_steps, 10);
        let a = &plan.per_node["csd0"];
        assert_eq!(a.private_assigned(), 100);
        assert_eq!(a.public_assigned(), 0);
        assert_eq!(a.duplicated, 0);
        assert!(validate_plan(&plan, &tune, &d).is_empty());
    }

    /// Brute-force oracle: the chosen step count is the smallest one
    /// maximizing distinct-sample intake over all reachable step counts.
    fn brute_force_steps(batches: &[(&str, u64)], d: &DatasetSpec, search_to: u64) -> u64 {
        let spec: Vec<(String, u64, u64)> = batches
            .iter()
            .map(|&(id, b)| (id.to_string(), b, d.private_on(id)))
            .collect();
        let mut best = (0u64, 0u64); // (distinct, steps)
        for s in 1..=search_to {
            if !feasible_at(s, &spec, d.public_total) {
                break;
            }
            let distinct = distinct_at(s, &spec, d.public_total);
            if distinct > best.0 {
                best = (distinct, s);
            }
        }
        best.1
    }

    #[test]
    fn balance_duplicates_smaller_private_set() {
        // csd0 holds 500 privates, csd1 only 100, no public data. The epoch
        // runs 20 steps so csd0's whole set is seen; csd1 pads with 400
        // cyclic duplicates.
        let tune = tune_of(&[("csd0", 25), ("csd1", 25)]);
        let d = data(0, &[("csd0", 500), ("csd1", 100)]);
        assert_eq!(brute_force_steps(&[("csd0", 25), ("csd1", 25)], &d, 40), 20);
        let plan = balance_epoch(&tune, &d).unwrap();
        assert_eq!(plan.epoch_steps, 20);
        let c1 = &plan.per_node["csd1"];
        assert_eq!(c1.private_assigned(), 100);
        assert_eq!(c1.duplicated, 400);
        let c0 = &plan.per_node["csd0"];
        assert_eq!(c0.private_assigned(), 500);
        assert_eq!(c0.duplicated, 0);
        assert!(validate_plan(&plan, &tune, &d).is_empty());
    }

    #[test]
    fn balance_matches_brute_force_on_mixed_supplies() {
        let cases: &[(Vec<(&str, u64)>, u64, Vec<(&str, u64)>)] = &[
            (vec![("host", 50), ("csd0", 10)], 700, vec![("csd0", 35)]),
            (vec![("host", 8), ("csd0", 4), ("csd1", 4)], 100, vec![("csd0", 9), ("csd1", 30)]),
            (vec![("csd0", 3), ("csd1", 5)], 11, vec![("csd0", 7), ("csd1", 2)]),
        ];
        for (batches, public, private) in cases {
            let tune = tune_of(batches);
            let d = data(*public, private);
            let plan = balance_epoch(&tune, &d).unwrap();
            let expect = brute_force_steps(batches, &d, 500);
            assert_eq!(plan.epoch_steps, expect, "batches {batches:?}");
            assert!(validate_plan(&plan, &tune, &d).is_empty(), "{batches:?}");
        }
    }

    #[test]
    fn balance_errors_when_pool_cannot_cover_one_step() {
        let tune = tune_of(&[("host", 315), ("csd0", 25)]);
        let d = data(100, &[]);
        assert!(matches!(
            balance_epoch(&tune, &d),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn balance_rejects_unknown_nodes_in_dataset() {
        let tune = tune_of(&[("host", 315)]);
        let d = data(1000, &[("ghost", 5)]);
        assert!(matches!(
            balance_epoch(&tune, &d),
            Err(Error::UnknownNode { .. })
        ));
    }

    #[test]
    fn validator_flags_cross_node_privacy() {
        let tune = tune_of(&[("host", 10), ("csd0", 10)]);
        let d = data(200, &[("csd0", 50)]);
        let mut plan = balance_epoch(&tune, &d).unwrap();
        // Inject: hand csd0's private data to the host.
        let steps = plan.epoch_steps;
        let host = plan.per_node.get_mut("host").unwrap();
        host.private = [0, 50];
        host.public = [host.public[0], host.public[1] - 50];
        let violations = validate_plan(&plan, &tune, &d);
        assert!(
            violations
                .iter()
                .any(|v| matches!(v, PlanViolation::PrivacyViolation { node_id, .. } if node_id == "host")),
            "{violations:?}"
        );
        let _ = steps;
    }

    #[test]
    fn validator_flags_total_mismatch() {
        let tune = tune_of(&[("csd0", 10)]);
        let d = data(0, &[("csd0", 100)]);
        let mut plan = balance_epoch(&tune, &d).unwrap();
        plan.per_node.get_mut("csd0").unwrap().duplicated += 3;
        let violations = validate_plan(&plan, &tune, &d);
        assert!(
            violations
                .iter()
                .any(|v| matches!(v, PlanViolation::TotalMismatch { got: 103, .. })),
            "{violations:?}"
        );
    }

    #[test]
    fn validator_flags_steps_mismatch_and_overdraw() {
        let tune = tune_of(&[("host", 10), ("csd0", 10)]);
        let d = data(200, &[("csd0", 50)]);
        let mut plan = balance_epoch(&tune, &d).unwrap();
        plan.per_node.get_mut("csd0").unwrap().steps_per_epoch += 1;
        let violations = validate_plan(&plan, &tune, &d);
        assert!(violations
            .iter()
            .any(|v| matches!(v, PlanViolation::StepsMismatch { .. })));

        let mut plan2 = balance_epoch(&tune, &d).unwrap();
        let steps = plan2.epoch_steps;
        for a in plan2.per_node.values_mut() {
            a.public = [0, steps * 10];
        }
        let violations = validate_plan(&plan2, &tune, &d);
        assert!(
            violations.iter().any(|v| matches!(
                v,
                PlanViolation::PublicRangeOverlap { .. } | PlanViolation::PublicOverdraw { .. }
            )),
            "{violations:?}"
        );
    }

    #[test]
    fn manifest_rows_cover_every_assignment() {
        let tune = tune_of(&[("csd0", 25), ("csd1", 25)]);
        let d = data(0, &[("csd0", 500), ("csd1", 100)]);
        let plan = balance_epoch(&tune, &d).unwrap();
        let csv = plan_manifest_csv(&plan);
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len() as u64, 2 * 25 * plan.epoch_steps);
        // Duplicated rows cycle over csd1's own private ids.
        assert!(rows.contains(&"csd1,dup,0"));
        assert!(!csv.contains("csd0,dup"));
    }

    #[test]
    fn equal_steps_ratio_property_eq1() {
        // For any two nodes the assigned/batch ratio is the common step count.
        let tune = tune_of(&[("host", 48), ("csd0", 7), ("csd1", 13)]);
        let d = data(10_000, &[("csd0", 35), ("csd1", 0)]);
        let plan = balance_epoch(&tune, &d).unwrap();
        for (id, a) in &plan.per_node {
            let batch = tune.per_node[id].batch;
            assert_eq!(a.total() % batch, 0);
            assert_eq!(a.total() / batch, plan.epoch_steps);
        }
        assert!(validate_plan(&plan, &tune, &d).is_empty());
    }
}
