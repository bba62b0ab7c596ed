//! Deterministic epoch simulation for synchronous ring-allreduce training.
//!
//! Every step, all participating nodes compute on their own batch, then
//! synchronize gradients over a ring. The round time is the slowest node's
//! compute time plus the ring cost; faster nodes stall for the difference.
//! Wall power comes from a calibrated per-component model, with the
//! conventional-SSD server as the baseline the energy savings are measured
//! against.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitioner::PartitionPlan;
use crate::profiles::{ClusterSpec, NetworkDescriptor, NodeClass};
use crate::tuner::TuneResult;

/// Ring-allreduce cost model.
///
/// `sync_time = alpha + 2(N-1)/N * payload * per_param_overhead / bandwidth`
/// with `sync_time(N=1) = 0`. The `2(N-1)/N` factor is the per-node traffic
/// of a reduce-scatter + allgather ring, which approaches 2x the payload and
/// is independent of the node count — the property that makes the ring
/// bandwidth-optimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncModel {
    /// Fixed per-round latency in seconds.
    pub alpha_sec: f64,
    pub effective_bandwidth_bytes_per_sec: f64,
    /// Framework overhead multiplier on the payload, calibrated; >= 1.
    pub per_param_overhead: f64,
}

impl SyncModel {
    pub fn new(alpha_sec: f64, bandwidth: f64, per_param_overhead: f64) -> Result<Self> {
        let model = SyncModel {
            alpha_sec,
            effective_bandwidth_bytes_per_sec: bandwidth,
            per_param_overhead,
        };
        model.validate()?;
        Ok(model)
    }

    /// A model with no synchronization cost at all.
    pub fn none() -> Self {
        SyncModel {
            alpha_sec: 0.0,
            effective_bandwidth_bytes_per_sec: f64::INFINITY,
            per_param_overhead: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_sec >= 0.0) {
            return Err(Error::invalid("sync model", "alpha_sec must be non-negative"));
        }
        if !(self.effective_bandwidth_bytes_per_sec > 0.0) {
            return Err(Error::invalid("sync model", "bandwidth must be positive"));
        }
        if !(self.per_param_overhead >= 1.0) {
            return Err(Error::invalid("sync model", "per_param_overhead must be >= 1"));
        }
        Ok(())
    }

    /// Per-node traffic fraction of the payload: `2(N-1)/N`.
    pub fn ring_factor(n_nodes: u64) -> f64 {
        if n_nodes <= 1 {
            0.0
        } else {
            2.0 * (n_nodes - 1) as f64 / n_nodes as f64
        }
    }

    /// Seconds one synchronization round takes with `n_nodes` participants.
    pub fn sync_time(&self, param_count: u64, bytes_per_param: u64, n_nodes: u64) -> f64 {
        if n_nodes <= 1 {
            return 0.0;
        }
        let payload = (param_count * bytes_per_param) as f64 * self.per_param_overhead;
        self.alpha_sec + Self::ring_factor(n_nodes) * payload / self.effective_bandwidth_bytes_per_sec
    }
}

/// Wall-power model parameters, calibrated against measured energy points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModelParams {
    pub host_active_watts: f64,
    pub csd_active_watts: f64,
    pub csd_idle_watts: f64,
    /// Idle draw of one conventional SSD in the baseline server.
    pub baseline_ssd_idle_watts: f64,
    /// Fans, PSU loss, board — everything that is not host or storage.
    pub chassis_overhead_watts: f64,
}

impl EnergyModelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.host_active_watts,
            self.csd_active_watts,
            self.csd_idle_watts,
            self.baseline_ssd_idle_watts,
            self.chassis_overhead_watts,
        ];
        if fields.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("energy model", "all watt fields must be non-negative"));
        }
        Ok(())
    }

    /// Seeds the power model from the cluster's declared node wattages.
    pub fn from_cluster(cluster: &ClusterSpec, chassis_overhead_watts: f64) -> Self {
        let (csd_active, csd_idle) = cluster
            .csds
            .first()
            .map(|c| (c.active_power_watts, c.idle_power_watts))
            .unwrap_or((0.0, 0.0));
        EnergyModelParams {
            host_active_watts: cluster.host.active_power_watts,
            csd_active_watts: csd_active,
            csd_idle_watts: csd_idle,
            baseline_ssd_idle_watts: cluster.baseline_storage_idle_watts,
            chassis_overhead_watts,
        }
    }

    /// Wall power of the training server with `active_csds` of
    /// `storage_slots` CSDs busy. With no CSD active this is the baseline
    /// server: same host, conventional SSDs in every slot.
    pub fn total_watts(&self, active_csds: u64, storage_slots: u64) -> f64 {
        if active_csds == 0 {
            self.baseline_watts(storage_slots)
        } else {
            self.chassis_overhead_watts
                + self.host_active_watts
                + active_csds as f64 * self.csd_active_watts
                + (storage_slots - active_csds) as f64 * self.csd_idle_watts
        }
    }

    /// Wall power of the displaced conventional-SSD server.
    pub fn baseline_watts(&self, storage_slots: u64) -> f64 {
        self.chassis_overhead_watts
            + self.host_active_watts
            + storage_slots as f64 * self.baseline_ssd_idle_watts
    }
}

/// Simulated outcome of one epoch on one cluster configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub network: String,
    pub n_csds: u64,
    pub batch_sizes: BTreeMap<String, u64>,
    pub epoch_steps: u64,
    pub round_time_sec: f64,
    pub sync_time_sec: f64,
    pub total_time_sec: f64,
    pub images_per_second_aggregate: f64,
    pub per_node_effective_speed: BTreeMap<String, f64>,
    pub stall_seconds_per_step: BTreeMap<String, f64>,
    pub speedup_vs_host: f64,
    pub total_watts: f64,
    pub baseline_watts: f64,
    pub energy_per_image_joules: f64,
    pub baseline_energy_per_image_joules: f64,
    pub energy_saving_vs_baseline: f64,
    pub flops_per_watt: f64,
}

impl EpochReport {
    /// One plot-ready CSV row; see [`report_csv_header`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.network,
            self.n_csds,
            self.images_per_second_aggregate,
            self.speedup_vs_host,
            self.energy_per_image_joules,
            self.energy_saving_vs_baseline * 100.0,
            self.flops_per_watt
        )
    }
}

pub fn report_csv_header() -> &'static str {
    "network,n_csds,img_per_sec,speedup,j_per_img,saving_pct,flops_per_watt"
}

/// Compute-side metrics shared by the simulator and the calibrator.
struct RoundMetrics {
    round_time: f64,
    sync_time: f64,
    max_compute: f64,
    /// node id -> (compute seconds, effective img/s)
    per_node: BTreeMap<String, (f64, f64)>,
    aggregate: f64,
}

fn round_metrics(
    cluster: &ClusterSpec,
    net: &NetworkDescriptor,
    tune: &TuneResult,
    sync: &SyncModel,
) -> Result<RoundMetrics> {
    let n_nodes = tune.per_node.len() as u64;
    let sync_time = sync.sync_time(net.param_count, net.bytes_per_param, n_nodes);

    let mut compute = BTreeMap::new();
    for (node_id, t) in &tune.per_node {
        let node = cluster
            .nodes()
            .find(|n| &n.node_id == node_id)
            .ok_or_else(|| Error::UnknownNode {
                node_id: node_id.clone(),
                context: "cluster spec".into(),
            })?;
        let curve = node.curve(&net.name)?;
        compute.insert(node_id.clone(), (curve.step_time(t.batch), curve.throughput_at(t.batch)));
    }
    let max_compute = compute.values().map(|&(c, _)| c).fold(0.0, f64::max);
    let round_time = max_compute + sync_time;

    let mut per_node = BTreeMap::new();
    let mut aggregate = 0.0;
    for (node_id, t) in &tune.per_node {
        let (c, thr) = compute[node_id];
        // b / (b / thr) == thr algebraically; evaluating it symbolically when
        // there is no stall and no sync keeps N=1 speedups exactly 1.
        let eff = if sync_time == 0.0 && c == round_time {
            thr
        } else {
            t.batch as f64 / round_time
        };
        per_node.insert(node_id.clone(), (c, eff));
        aggregate += eff;
    }

    Ok(RoundMetrics {
        round_time,
        sync_time,
        max_compute,
        per_node,
        aggregate,
    })
}

/// Simulates one epoch of synchronous training.
///
/// `cluster` is the full installed cluster; the nodes named by `tune`
/// participate, the remaining CSD slots idle. The plan supplies the step
/// count and must agree with the tune result.
pub fn simulate_epoch(
    cluster: &ClusterSpec,
    net: &NetworkDescriptor,
    tune: &TuneResult,
    plan: &PartitionPlan,
    sync: &SyncModel,
    energy: &EnergyModelParams,
) -> Result<EpochReport> {
    sync.validate()?;
    energy.validate()?;
    if plan.per_node.len() != tune.per_node.len()
        || !plan.per_node.keys().eq(tune.per_node.keys())
    {
        return Err(Error::InconsistentPlan {
            detail: "tune and plan name different node sets".into(),
        });
    }
    for (node_id, a) in &plan.per_node {
        let expected = tune.per_node[node_id].batch * plan.epoch_steps;
        if a.total() != expected {
            return Err(Error::InconsistentPlan {
                detail: format!(
                    "node `{node_id}` holds {} samples, batch x steps = {expected}",
                    a.total()
                ),
            });
        }
    }

    let metrics = round_metrics(cluster, net, tune, sync)?;
    let host_plateau = cluster.host.curve(&net.name)?.saturation_throughput;

    let active_csds = tune
        .per_node
        .keys()
        .filter(|id| {
            cluster
                .nodes()
                .find(|n| &&n.node_id == id)
                .map(|n| n.node_class == NodeClass::Csd)
                .unwrap_or(false)
        })
        .count() as u64;
    let storage_slots = cluster.csds.len() as u64;

    let total_watts = energy.total_watts(active_csds, storage_slots);
    let baseline_watts = energy.baseline_watts(storage_slots);
    if metrics.aggregate <= 0.0 {
        return Err(Error::ZeroThroughput);
    }
    let energy_per_image = total_watts / metrics.aggregate;
    let baseline_energy_per_image = baseline_watts / host_plateau;

    // Stall is the wait for the straggler's compute; the sync term cancels
    // symbolically so the straggler's own stall is exactly zero.
    let stall: BTreeMap<String, f64> = metrics
        .per_node
        .iter()
        .map(|(id, &(c, _))| (id.clone(), metrics.max_compute - c))
        .collect();

    Ok(EpochReport {
        network: net.name.clone(),
        n_csds: active_csds,
        batch_sizes: tune.per_node.iter().map(|(id, t)| (id.clone(), t.batch)).collect(),
        epoch_steps: plan.epoch_steps,
        round_time_sec: metrics.round_time,
        sync_time_sec: metrics.sync_time,
        total_time_sec: plan.epoch_steps as f64 * metrics.round_time,
        images_per_second_aggregate: metrics.aggregate,
        per_node_effective_speed: metrics.per_node.iter().map(|(id, &(_, e))| (id.clone(), e)).collect(),
        stall_seconds_per_step: stall,
        speedup_vs_host: metrics.aggregate / host_plateau,
        total_watts,
        baseline_watts,
        energy_per_image_joules: energy_per_image,
        baseline_energy_per_image_joules: baseline_energy_per_image,
        energy_saving_vs_baseline: 1.0 - energy_per_image / baseline_energy_per_image,
        flops_per_watt: net.flop_count as f64 * metrics.aggregate / total_watts,
    })
}

/// Tune -> partition -> simulate for a sequence of CSD counts.
///
/// `node_counts` must be ascending and within the cluster's CSD count. The
/// dataset is restricted per configuration to the nodes that participate.
pub fn speedup_curve(
    cluster: &ClusterSpec,
    net: &NetworkDescriptor,
    node_counts: &[u64],
    tune_config: &crate::tuner::TuneConfig,
    data: &crate::partitioner::DatasetSpec,
    sync: &SyncModel,
    energy: &EnergyModelParams,
) -> Result<Vec<(u64, EpochReport)>> {
    if !node_counts.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("sweep", "node counts must be strictly ascending"));
    }
    if let Some(&max) = node_counts.last() {
        if max > cluster.csds.len() as u64 {
            return Err(Error::invalid(
                "sweep",
                format!("cluster has {} CSDs, sweep asks for {max}", cluster.csds.len()),
            ));
        }
    }
    let mut out = Vec::with_capacity(node_counts.len());
    for &n in node_counts {
        let sub = cluster.with_csds(n as usize);
        let tune = crate::tuner::tune_cluster(&sub, net, tune_config)?;
        let sub_data = crate::partitioner::DatasetSpec {
            public_total: data.public_total,
            private_per_node: data
                .private_per_node
                .iter()
                .filter(|(id, _)| tune.per_node.contains_key(*id))
                .map(|(id, &v)| (id.clone(), v))
                .collect(),
        };
        let plan = crate::partitioner::balance_epoch(&tune, &sub_data)?;
        let report = simulate_epoch(cluster, net, &tune, &plan, sync, energy)?;
        out.push((n, report));
    }
    Ok(out)
}

/// A parameter the calibrator may adjust.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationParam {
    SyncAlphaSec,
    SyncBandwidth,
    SyncPerParamOverhead,
    HostActiveWatts,
    CsdActiveWatts,
    CsdIdleWatts,
    BaselineSsdIdleWatts,
    ChassisOverheadWatts,
}

impl CalibrationParam {
    /// Search box the coordinate descent stays within.
    fn bounds(self) -> (f64, f64) {
        match self {
            CalibrationParam::SyncAlphaSec => (0.0, 10.0),
            CalibrationParam::SyncBandwidth => (1e6, 1e12),
            CalibrationParam::SyncPerParamOverhead => (1.0, 1e4),
            _ => (0.0, 2000.0),
        }
    }

    fn get(self, sync: &SyncModel, energy: &EnergyModelParams) -> f64 {
        match self {
            CalibrationParam::SyncAlphaSec => sync.alpha_sec,
            CalibrationParam::SyncBandwidth => sync.effective_bandwidth_bytes_per_sec,
            CalibrationParam::SyncPerParamOverhead => sync.per_param_overhead,
            CalibrationParam::HostActiveWatts => energy.host_active_watts,
            CalibrationParam::CsdActiveWatts => energy.csd_active_watts,
            CalibrationParam::CsdIdleWatts => energy.csd_idle_watts,
            CalibrationParam::BaselineSsdIdleWatts => energy.baseline_ssd_idle_watts,
            CalibrationParam::ChassisOverheadWatts => energy.chassis_overhead_watts,
        }
    }

    fn set(self, value: f64, sync: &mut SyncModel, energy: &mut EnergyModelParams) {
        match self {
            CalibrationParam::SyncAlphaSec => sync.alpha_sec = value,
            CalibrationParam::SyncBandwidth => sync.effective_bandwidth_bytes_per_sec = value,
            CalibrationParam::SyncPerParamOverhead => sync.per_param_overhead = value,
            CalibrationParam::HostActiveWatts => energy.host_active_watts = value,
            CalibrationParam::CsdActiveWatts => energy.csd_active_watts = value,
            CalibrationParam::CsdIdleWatts => energy.csd_idle_watts = value,
            CalibrationParam::BaselineSsdIdleWatts => energy.baseline_ssd_idle_watts = value,
            CalibrationParam::ChassisOverheadWatts => energy.chassis_overhead_watts = value,
        }
    }
}

/// One observed value the calibrator fits to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub n_csds: u64,
    pub metric: TargetMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetric {
    EnergyPerImageJoules(f64),
    SpeedupVsHost(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResidual {
    pub n_csds: u64,
    pub metric: String,
    pub observed: f64,
    pub modeled: f64,
    pub relative_residual: f64,
}

/// Fitted parameters plus per-target relative residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub sync: SyncModel,
    pub energy: EnergyModelParams,
    pub residuals: Vec<TargetResidual>,
    pub objective: f64,
}

impl CalibrationFit {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.relative_residual.abs())
            .fold(0.0, f64::max)
    }
}

/// Least-squares fit of the named parameters to the targets by bounded
/// coordinate descent (coarse grid scan, then golden-section refinement per
/// coordinate). Fully deterministic for a fixed sweep budget.
pub fn calibrate(
    cluster: &ClusterSpec,
    net: &NetworkDescriptor,
    tune_config: &crate::tuner::TuneConfig,
    sync0: &SyncModel,
    energy0: &EnergyModelParams,
    targets: &[CalibrationTarget],
    free_params: &[CalibrationParam],
    sweeps: u32,
) -> Result<CalibrationFit> {
    if targets.is_empty() {
        return Err(Error::invalid("calibration", "no targets given"));
    }
    if targets.len() < free_params.len() {
        return Err(Error::UnderDetermined {
            targets: targets.len(),
            free_params: free_params.len(),
        });
    }

    // Tuning is independent of the calibrated parameters; do it once per
    // distinct configuration.
    let mut tunes: BTreeMap<u64, TuneResult> = BTreeMap::new();
    for t in targets {
        if let std::collections::btree_map::Entry::Vacant(e) = tunes.entry(t.n_csds) {
            let sub = cluster.with_csds(t.n_csds as usize);
            e.insert(crate::tuner::tune_cluster(&sub, net, tune_config)?);
        }
    }
    let host_plateau = cluster.host.curve(&net.name)?.saturation_throughput;
    let storage_slots = cluster.csds.len() as u64;

    let model_value = |t: &CalibrationTarget, sync: &SyncModel, energy: &EnergyModelParams| -> Result<(f64, f64)> {
        let tune = &tunes[&t.n_csds];
        let metrics = round_metrics(cluster, net, tune, sync)?;
        Ok(match t.metric {
            TargetMetric::SpeedupVsHost(observed) => (metrics.aggregate / host_plateau, observed),
            TargetMetric::EnergyPerImageJoules(observed) => {
                let watts = energy.total_watts(t.n_csds, storage_slots);
                (watts / metrics.aggregate, observed)
            }
        })
    };

    let objective = |sync: &SyncModel, energy: &EnergyModelParams| -> Result<f64> {
        let mut sum = 0.0;
        for t in targets {
            let (modeled, observed) = model_value(t, sync, energy)?;
            let rel = (modeled - observed) / observed;
            sum += rel * rel;
        }
        Ok(sum)
    };

    let mut sync = sync0.clone();
    let mut energy = energy0.clone();
    let mut best = objective(&sync, &energy)?;

    const GRID: usize = 33;
    const GOLDEN_ITERS: usize = 60;
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;

    for _ in 0..sweeps {
        for &param in free_params {
            let (lo, hi) = param.bounds();
            let eval = |v: f64, sync: &SyncModel, energy: &EnergyModelParams| -> f64 {
                let mut s = sync.clone();
                let mut e = energy.clone();
                param.set(v, &mut s, &mut e);
                objective(&s, &e).unwrap_or(f64::INFINITY)
            };

            // Coarse scan, keeping the incumbent in the running.
            let mut best_v = param.get(&sync, &energy);
            let mut best_f = eval(best_v, &sync, &energy);
            for i in 0..GRID {
                let v = lo + (hi - lo) * i as f64 / (GRID - 1) as f64;
                let f = eval(v, &sync, &energy);
                if f < best_f {
                    best_f = f;
                    best_v = v;
                }
            }

            // Golden-section refinement around the grid winner.
            let cell = (hi - lo) / (GRID - 1) as f64;
            let mut a = (best_v - cell).max(lo);
            let mut b = (best_v + cell).min(hi);
            let mut x1 = b - inv_phi * (b - a);
            let mut x2 = a + inv_phi * (b - a);
            let mut f1 = eval(x1, &sync, &energy);
            let mut f2 = eval(x2, &sync, &energy);
            for _ in 0..GOLDEN_ITERS {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - inv_phi * (b - a);
                    f1 = eval(x1, &sync, &energy);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + inv_phi * (b - a);
                    f2 = eval(x2, &sync, &energy);
                }
            }
            let (cand_v, cand_f) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
            if cand_f < best_f {
                best_f = cand_f;
                best_v = cand_v;
            }
            if best_f < best {
                param.set(best_v, &mut sync, &mut energy);
                best = best_f;
            }
        }
    }

    let mut residuals = Vec::with_capacity(targets.len());
    for t in targets {
        let (modeled, observed) = model_value(t, &sync, &energy)?;
        residuals.push(TargetResidual {
            n_csds: t.n_csds,
            metric: match t.metric {
                TargetMetric::EnergyPerImageJoules(_) => "j_per_img".into(),
                TargetMetric::SpeedupVsHost(_) => "speedup".into(),
            },
            observed,
            modeled,
            relative_residual: (modeled - observed) / observed,
        });
    }

    Ok(CalibrationFit {
        sync,
        energy,
        residuals,
        objective: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitioner::{balance_epoch, DatasetSpec};
    use crate::profiles::{fit_curve, LinkSpec, NodeProfile, ThroughputCurve};
    use crate::tuner::{tune_cluster, TuneConfig};
    use approx::assert_relative_eq;

    fn newport_curve() -> ThroughputCurve {
        fit_curve(&[(8, 2.2), (16, 3.0), (25, 3.08), (32, 3.08)]).unwrap()
    }

    fn host_curve() -> ThroughputCurve {
        fit_curve(&[(32, 27.0), (64, 30.5), (128, 30.9), (256, 31.05)]).unwrap()
    }

    fn node(id: &str, class: NodeClass, curve: ThroughputCurve) -> NodeProfile {
        let mut curves = BTreeMap::new();
        curves.insert("mobilenetv2".to_string(), curve);
        NodeProfile {
            node_id: id.into(),
            node_class: class,
            curves,
            dram_bytes: if class == NodeClass::Host { 32 << 30 } else { 6 << 30 },
            active_power_watts: if class == NodeClass::Host { 150.0 } else { 10.0 },
            idle_power_watts: 2.0,
        }
    }

    fn cluster(n_csds: usize) -> ClusterSpec {
        ClusterSpec {
            host: node("host", NodeClass::Host, host_curve()),
            csds: (0..n_csds)
                .map(|i| node(&format!("csd{i:02}"), NodeClass::Csd, newport_curve()))
                .collect(),
            link: LinkSpec {
                bandwidth_bytes_per_sec: 1e9,
                latency_sec: 0.0,
            },
            baseline_storage_idle_watts: 8.2,
        }
    }

    fn mobilenet() -> NetworkDescriptor {
        NetworkDescriptor {
            name: "mobilenetv2".into(),
            param_count: 3_470_000,
            flop_count: 7_160_000,
            mac_count: 56_000_000,
            bytes_per_param: 4,
            activation_bytes_per_sample: 10_000_000,
        }
    }

    fn dataset() -> DatasetSpec {
        DatasetSpec {
            public_total: 72_000,
            private_per_node: (0..24).map(|i| (format!("csd{i:02}"), 500)).collect(),
        }
    }

    fn energy() -> EnergyModelParams {
        EnergyModelParams {
            host_active_watts: 150.0,
            csd_active_watts: 10.0,
            csd_idle_watts: 2.0,
            baseline_ssd_idle_watts: 8.2,
            chassis_overhead_watts: 60.0,
        }
    }

    #[test]
    fn sync_time_is_zero_for_single_node() {
        let m = SyncModel::new(0.5, 1e9, 2.0).unwrap();
        assert_eq!(m.sync_time(3_470_000, 4, 1), 0.0);
    }

    #[test]
    fn sync_time_matches_hand_arithmetic() {
        // 2 * (24/25) * 13.88 MB / 1 GB/s
        let m = SyncModel::new(0.0, 1e9, 1.0).unwrap();
        let t = m.sync_time(3_470_000, 4, 25);
        assert_relative_eq!(t, 2.0 * (24.0 / 25.0) * 13_880_000.0 / 1e9, max_relative = 1e-12);
        assert_relative_eq!(t, 0.0266496, max_relative = 1e-6);
    }

    #[test]
    fn sync_time_is_linear_in_params() {
        let m = SyncModel::new(0.0, 1e9, 3.0).unwrap();
        let t1 = m.sync_time(1_000_000, 4, 8);
        let t2 = m.sync_time(2_000_000, 4, 8);
        assert_relative_eq!(t2, 2.0 * t1, max_relative = 1e-12);
    }

    #[test]
    fn ring_factor_saturates_below_two() {
        assert_eq!(SyncModel::ring_factor(1), 0.0);
        assert_relative_eq!(SyncModel::ring_factor(2), 1.0);
        assert_relative_eq!(SyncModel::ring_factor(4), 1.5);
        assert!(SyncModel::ring_factor(10_000) < 2.0);
    }

    fn simulate(n_csds: usize, sync: &SyncModel) -> EpochReport {
        let full = cluster(24);
        let sub = full.with_csds(n_csds);
        let tune = tune_cluster(&sub, &mobilenet(), &TuneConfig::default()).unwrap();
        let data = DatasetSpec {
            public_total: 72_000,
            private_per_node: dataset()
                .private_per_node
                .into_iter()
                .filter(|(id, _)| tune.per_node.contains_key(id))
                .collect(),
        };
        let plan = balance_epoch(&tune, &data).unwrap();
        simulate_epoch(&full, &mobilenet(), &tune, &plan, sync, &energy()).unwrap()
    }

    #[test]
    fn host_only_runs_at_plateau_with_unit_speedup() {
        let report = simulate(0, &SyncModel::none());
        assert_eq!(report.n_csds, 0);
        assert_eq!(report.images_per_second_aggregate, 31.05);
        assert_eq!(report.speedup_vs_host, 1.0);
        assert!(report.stall_seconds_per_step.values().all(|&s| s == 0.0));
        assert_eq!(report.sync_time_sec, 0.0);
    }

    #[test]
    fn two_identical_nodes_with_free_sync_double_throughput() {
        let c = ClusterSpec {
            host: node("host", NodeClass::Host, newport_curve()),
            csds: vec![node("csd00", NodeClass::Csd, newport_curve())],
            link: LinkSpec {
                bandwidth_bytes_per_sec: 1e9,
                latency_sec: 0.0,
            },
            baseline_storage_idle_watts: 8.2,
        };
        let tune = tune_cluster(&c, &mobilenet(), &TuneConfig::default()).unwrap();
        let data = DatasetSpec {
            public_total: 10_000,
            private_per_node: BTreeMap::new(),
        };
        let plan = balance_epoch(&tune, &data).unwrap();
        let report =
            simulate_epoch(&c, &mobilenet(), &tune, &plan, &SyncModel::none(), &energy()).unwrap();
        assert_eq!(report.speedup_vs_host, 2.0);
    }

    #[test]
    fn straggler_sets_the_round_and_stalls_are_nonnegative() {
        let sync = SyncModel::new(0.0, 1e9, 55.0).unwrap();
        let report = simulate(24, &sync);
        // The CSDs are the stragglers; their stall is zero, the host waits.
        assert_eq!(report.stall_seconds_per_step["csd00"], 0.0);
        assert!(report.stall_seconds_per_step["host"] > 0.0);
        assert!(report.stall_seconds_per_step.values().all(|&s| s >= 0.0));
        let max_compute: f64 = 25.0 / 3.08;
        assert_relative_eq!(report.round_time_sec, max_compute + report.sync_time_sec, max_relative = 1e-12);
    }

    #[test]
    fn effective_speeds_bounded_by_standalone_plateau() {
        let sync = SyncModel::new(0.001, 1e9, 55.0).unwrap();
        let report = simulate(24, &sync);
        for (id, &speed) in &report.per_node_effective_speed {
            let plateau = if id == "host" { 31.05 } else { 3.08 };
            assert!(speed <= plateau + 1e-12, "{id} at {speed} exceeds {plateau}");
        }
        let ideal = (31.05 + 24.0 * 3.08) / 31.05;
        assert!(report.speedup_vs_host <= ideal);
    }

    #[test]
    fn energy_identity_holds_exactly() {
        let sync = SyncModel::new(0.0, 1e9, 55.0).unwrap();
        let report = simulate(8, &sync);
        assert_eq!(
            report.energy_per_image_joules,
            report.total_watts / report.images_per_second_aggregate
        );
        // Doubling throughput at fixed power halves J/img by definition.
        assert_relative_eq!(
            report.total_watts / (2.0 * report.images_per_second_aggregate),
            report.energy_per_image_joules / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn flops_per_watt_is_linear_in_throughput() {
        let sync = SyncModel::new(0.0, 1e9, 55.0).unwrap();
        let report = simulate(8, &sync);
        let recompute = mobilenet().flop_count as f64 * report.images_per_second_aggregate
            / report.total_watts;
        assert_eq!(report.flops_per_watt, recompute);
    }

    #[test]
    fn simulation_is_deterministic() {
        let sync = SyncModel::new(0.0017, 1e9, 42.5).unwrap();
        let a = simulate(16, &sync);
        let b = simulate(16, &sync);
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn sweep_throughput_is_monotone_and_converges() {
        let full = cluster(24);
        let sync = SyncModel::new(0.0, 1e9, 55.0).unwrap();
        let counts: Vec<u64> = (1..=24).collect();
        let sweep = speedup_curve(
            &full,
            &mobilenet(),
            &counts,
            &TuneConfig::default(),
            &dataset(),
            &sync,
            &energy(),
        )
        .unwrap();
        let aggs: Vec<f64> = sweep.iter().map(|(_, r)| r.images_per_second_aggregate).collect();
        assert!(aggs.windows(2).all(|w| w[0] <= w[1]), "{aggs:?}");
        // Per-node speed settles: < 1% relative change per added node from 6 on.
        let csd_speed: Vec<f64> = sweep
            .iter()
            .map(|(_, r)| r.per_node_effective_speed["csd00"])
            .collect();
        for (i, w) in csd_speed.windows(2).enumerate() {
            let n_after = counts[i + 1];
            if n_after >= 6 {
                let change = (w[1] / w[0] - 1.0).abs();
                assert!(change < 0.01, "n={n_after}: change {change}");
            }
        }
    }

    #[test]
    fn sweep_rejects_unsorted_or_oversized_counts() {
        let full = cluster(4);
        let sync = SyncModel::none();
        assert!(speedup_curve(
            &full,
            &mobilenet(),
            &[4, 2],
            &TuneConfig::default(),
            &dataset(),
            &sync,
            &energy()
        )
        .is_err());
        assert!(speedup_curve(
            &full,
            &mobilenet(),
            &[2, 8],
            &TuneConfig::default(),
            &dataset(),
            &sync,
            &energy()
        )
        .is_err());
    }

    #[test]
    fn calibrate_rejects_underdetermined_fits() {
        let full = cluster(24);
        let err = calibrate(
            &full,
            &mobilenet(),
            &TuneConfig::default(),
            &SyncModel::none(),
            &energy(),
            &[CalibrationTarget {
                n_csds: 24,
                metric: TargetMetric::SpeedupVsHost(2.7),
            }],
            &[CalibrationParam::SyncPerParamOverhead, CalibrationParam::SyncAlphaSec],
            4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnderDetermined { targets: 1, free_params: 2 }));
    }

    #[test]
    fn calibrate_with_no_free_params_reports_residuals_identically() {
        let full = cluster(24);
        let sync = SyncModel::none();
        let e = energy();
        // Target computed from the model itself: residual must be zero.
        let tune = tune_cluster(&full, &mobilenet(), &TuneConfig::default()).unwrap();
        let agg: f64 = {
            let m = round_metrics(&full, &mobilenet(), &tune, &sync).unwrap();
            m.aggregate
        };
        let fit = calibrate(
            &full,
            &mobilenet(),
            &TuneConfig::default(),
            &sync,
            &e,
            &[CalibrationTarget {
                n_csds: 24,
                metric: TargetMetric::SpeedupVsHost(agg / 31.05),
            }],
            &[],
            4,
        )
        .unwrap();
        assert_eq!(fit.sync, sync);
        assert_eq!(fit.energy, e);
        assert!(fit.max_abs_residual() < 1e-12);
    }

    #[test]
    fn calibrate_hits_speedup_anchor() {
        let full = cluster(24);
        let fit = calibrate(
            &full,
            &mobilenet(),
            &TuneConfig::default(),
            &SyncModel::new(0.0, 1e9, 1.0).unwrap(),
            &energy(),
            &[CalibrationTarget {
                n_csds: 24,
                metric: TargetMetric::SpeedupVsHost(2.7),
            }],
            &[CalibrationParam::SyncPerParamOverhead],
            8,
        )
        .unwrap();
        assert!(fit.max_abs_residual() < 1e-6, "residual {}", fit.max_abs_residual());
        assert!(fit.sync.per_param_overhead > 1.0);
    }
}
