//! Effective-config assembly, override parsing, and the run manifest every
//! artifact embeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use stannis::minitrain::{LrSchedule, ScheduleMode};
use stannis::profiles::ClusterSpec;
use stannis::simengine::{EnergyModelParams, SyncModel};
use stannis::tuner::TuneConfig;

use crate::CliError;

/// Default chassis overhead when no calibration pins it.
pub const DEFAULT_CHASSIS_WATTS: f64 = 60.0;

/// Everything a run needs beyond its input files. Every field lands in the
/// output manifest so a rerun reproduces the artifact byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub tuner: TuneConfig,
    pub sync: SyncModel,
    pub energy: EnergyModelParams,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    pub averaging: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: LrSchedule {
                base_lr: 0.05,
                scale_factor: 1.0,
                warmup_steps: 0,
                mode: ScheduleMode::Constant,
            },
            averaging: "weighted".into(),
        }
    }
}

impl EffectiveConfig {
    /// Defaults derived from the cluster's link and declared node wattages.
    pub fn for_cluster(cluster: &ClusterSpec) -> Self {
        EffectiveConfig {
            tuner: TuneConfig::default(),
            sync: SyncModel {
                alpha_sec: cluster.link.latency_sec,
                effective_bandwidth_bytes_per_sec: cluster.link.bandwidth_bytes_per_sec,
                per_param_overhead: 1.0,
            },
            energy: EnergyModelParams::from_cluster(cluster, DEFAULT_CHASSIS_WATTS),
            train: TrainConfig::default(),
        }
    }

    pub fn standalone() -> Self {
        EffectiveConfig {
            tuner: TuneConfig::default(),
            sync: SyncModel::none(),
            energy: EnergyModelParams {
                host_active_watts: 0.0,
                csd_active_watts: 0.0,
                csd_idle_watts: 0.0,
                baseline_ssd_idle_watts: 0.0,
                chassis_overhead_watts: 0.0,
            },
            train: TrainConfig::default(),
        }
    }

    /// Applies one `dotted.key=value` override. Unknown keys are errors, not
    /// warnings.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad_value = |expected: &str| {
            CliError::validation(format!("override `{key}`: expected {expected}, got `{value}`"))
        };
        let f = || value.parse::<f64>().map_err(|_| bad_value("a number"));
        match key {
            "tuner.c" => self.tuner.c = f()?,
            "tuner.e" => self.tuner.e = f()?,
            "tuner.max_iterations" => {
                self.tuner.max_iterations =
                    value.parse().map_err(|_| bad_value("a positive integer"))?
            }
            "tuner.memory_cap_enforced" => {
                self.tuner.memory_cap_enforced =
                    value.parse().map_err(|_| bad_value("true or false"))?
            }
            "tuner.candidate_batches" => {
                let batches: Result<Vec<u64>, _> =
                    value.split(',').map(|v| v.trim().parse::<u64>()).collect();
                self.tuner.candidate_batches =
                    batches.map_err(|_| bad_value("a comma-separated list of integers"))?;
            }
            "sync.alpha_sec" => self.sync.alpha_sec = f()?,
            "sync.effective_bandwidth_bytes_per_sec" => {
                self.sync.effective_bandwidth_bytes_per_sec = f()?
            }
            "sync.per_param_overhead" => self.sync.per_param_overhead = f()?,
            "energy.host_active_watts" => self.energy.host_active_watts = f()?,
            "energy.csd_active_watts" => self.energy.csd_active_watts = f()?,
            "energy.csd_idle_watts" => self.energy.csd_idle_watts = f()?,
            "energy.baseline_ssd_idle_watts" => self.energy.baseline_ssd_idle_watts = f()?,
            "energy.chassis_overhead_watts" => self.energy.chassis_overhead_watts = f()?,
            "train.base_lr" => self.train.schedule.base_lr = f()?,
            "train.scale_factor" => self.train.schedule.scale_factor = f()?,
            "train.warmup_steps" => {
                self.train.schedule.warmup_steps =
                    value.parse().map_err(|_| bad_value("a non-negative integer"))?
            }
            "train.mode" => {
                self.train.schedule.mode = match value {
                    "constant" => ScheduleMode::Constant,
                    "linear_scaled" => ScheduleMode::LinearScaled,
                    "warmup_then_scaled" => ScheduleMode::WarmupThenScaled,
                    _ => return Err(bad_value("constant | linear_scaled | warmup_then_scaled")),
                }
            }
            "train.averaging" => {
                if value != "weighted" && value != "uniform" {
                    return Err(bad_value("weighted | uniform"));
                }
                self.train.averaging = value.to_string();
            }
            _ => {
                return Err(CliError::validation(format!(
                    "unknown override key `{key}` (see --help for the override namespace)"
                )))
            }
        }
        Ok(())
    }
}

/// Parses repeated `--override key=value` flags into a map, applying each.
pub fn apply_overrides(
    config: &mut EffectiveConfig,
    overrides: &[String],
) -> Result<BTreeMap<String, String>, CliError> {
    let mut applied = BTreeMap::new();
    for entry in overrides {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            CliError::validation(format!("override `{entry}` is not of the form key=value"))
        })?;
        config.apply_override(key, value)?;
        applied.insert(key.to_string(), value.to_string());
    }
    Ok(applied)
}

/// Provenance block embedded in every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub overrides: BTreeMap<String, String>,
    pub effective: serde_json::Value,
}

impl Manifest {
    pub fn new(
        subcommand: &str,
        inputs: &[(&str, &str)],
        seed: u64,
        overrides: BTreeMap<String, String>,
        effective: &EffectiveConfig,
    ) -> Self {
        Manifest {
            tool: "stannis".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            inputs: inputs
                .iter()
                .map(|&(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            seed,
            overrides,
            effective: json!(effective),
        }
    }
}

/// Output envelope: the manifest plus the actual result.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub manifest: Manifest,
    pub result: T,
}
