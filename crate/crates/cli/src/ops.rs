//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use stannis::minitrain::{
    evaluate_accuracy, synthetic_classification, train_distributed, train_single_node, Activation,
    Averaging, LossKind, MlpModel, WorkerState,
};
use stannis::partitioner::{balance_epoch, plan_manifest_csv, validate_plan, DatasetSpec, PartitionPlan};
use stannis::profiles::{load_benchmark, BenchmarkFormat, ClusterSpec, NetworkDescriptor};
use stannis::simengine::{
    calibrate, report_csv_header, simulate_epoch, speedup_curve, CalibrationFit, CalibrationParam,
    CalibrationTarget, EpochReport,
};
use stannis::tuner::{tune_cluster, TuneResult};

use crate::config::{apply_overrides, EffectiveConfig, Envelope, Manifest};
use crate::{CliError, Command};

pub fn run(command: Command, seed: u64, overrides: &[String]) -> Result<(), CliError> {
    match command {
        Command::BenchImport { input, format, output } => bench_import(&input, format.as_deref(), &output, seed, overrides),
        Command::Tune { cluster, network, output } => tune_cmd(&cluster, &network, &output, seed, overrides),
        Command::Partition { tune, data, output, manifest_csv } => {
            partition_cmd(&tune, &data, &output, manifest_csv.as_deref(), seed, overrides)
        }
        Command::Simulate {
            cluster,
            network,
            tune,
            plan,
            n_csds,
            data,
            calibration,
            output,
        } => simulate_cmd(
            &cluster,
            &network,
            tune.as_deref(),
            plan.as_deref(),
            n_csds,
            data.as_deref(),
            calibration.as_deref(),
            &output,
            seed,
            overrides,
        ),
        Command::Sweep {
            cluster,
            network,
            n_csds,
            data,
            calibration,
            output,
            csv,
        } => sweep_cmd(
            &cluster,
            &network,
            &n_csds,
            &data,
            calibration.as_deref(),
            &output,
            csv.as_deref(),
            seed,
            overrides,
        ),
        Command::Calibrate { cluster, network, targets, output } => {
            calibrate_cmd(&cluster, &network, &targets, &output, seed, overrides)
        }
        Command::VerifyTrain {
            workers,
            total_batch,
            steps,
            input_dim,
            hidden_dim,
            holdout,
            output,
            trace_csv,
        } => verify_train_cmd(
            workers,
            total_batch,
            steps,
            input_dim,
            hidden_dim,
            holdout,
            &output,
            trace_csv.as_deref(),
            seed,
            overrides,
        ),
        Command::Report { inputs, output, summary } => {
            report_cmd(&inputs, &output, summary.as_deref(), seed, overrides)
        }
    }
}

fn read_text(path: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::no_input(path, e))
}

fn read_json<T: DeserializeOwned>(path: &str) -> Result<T, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(e.to_string()).at(path))
}

/// Reads either a bare value or an envelope produced by another subcommand,
/// so pipeline stages compose without manual editing.
fn read_artifact<T: DeserializeOwned>(path: &str) -> Result<T, CliError> {
    let text = read_text(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::validation(e.to_string()).at(path))?;
    let inner = match value.get("result") {
        Some(result) if value.get("manifest").is_some() => result.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::validation(e.to_string()).at(path))
}

fn write_file(path: &str, content: &str) -> Result<(), CliError> {
    if let Some(parent) = Path::new(path).parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CliError::cant_write(path, e))?;
        }
    }
    fs::write(path, content).map_err(|e| CliError::cant_write(path, e))?;
    println!("wrote {path}");
    Ok(())
}

fn write_envelope<T: Serialize>(path: &str, manifest: Manifest, result: T) -> Result<(), CliError> {
    let envelope = Envelope { manifest, result };
    let mut text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| CliError::validation(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

fn load_cluster(path: &str) -> Result<ClusterSpec, CliError> {
    ClusterSpec::from_json_file(path).map_err(|e| match e {
        stannis::Error::Io { .. } => CliError::no_input(path, e),
        other => CliError::validation(other.to_string()).at(path),
    })
}

fn load_network(path: &str) -> Result<NetworkDescriptor, CliError> {
    NetworkDescriptor::from_json_file(path).map_err(|e| match e {
        stannis::Error::Io { .. } => CliError::no_input(path, e),
        other => CliError::validation(other.to_string()).at(path),
    })
}

/// Defaults from the cluster, then the pinned calibration, then CLI
/// overrides — later layers win.
fn effective_config(
    cluster: &ClusterSpec,
    calibration: Option<&str>,
    overrides: &[String],
) -> Result<(EffectiveConfig, BTreeMap<String, String>), CliError> {
    let mut config = EffectiveConfig::for_cluster(cluster);
    if let Some(path) = calibration {
        let fit: CalibrationFit = read_artifact(path)?;
        config.sync = fit.sync;
        config.energy = fit.energy;
    }
    let applied = apply_overrides(&mut config, overrides)?;
    Ok((config, applied))
}

fn bench_import(
    input: &str,
    format: Option<&str>,
    output: &str,
    seed: u64,
    overrides: &[String],
) -> Result<(), CliError> {
    let format = match format {
        Some("csv") => BenchmarkFormat::Csv,
        Some("json") => BenchmarkFormat::Json,
        Some(other) => {
            return Err(CliError::validation(format!(
                "unknown benchmark format `{other}` (expected csv or json)"
            )))
        }
        None if input.ends_with(".json") => BenchmarkFormat::Json,
        None => BenchmarkFormat::Csv,
    };
    let records = load_benchmark(input, format).map_err(|e| match e {
        stannis::Error::Io { .. } => CliError::no_input(input, e),
        other => CliError::validation(other.to_string()).at(input),
    })?;
    let mut config = EffectiveConfig::standalone();
    let applied = apply_overrides(&mut config, overrides)?;
    let manifest = Manifest::new("bench-import", &[("input", input)], seed, applied, &config);
    write_envelope(output, manifest, records)
}

fn tune_cmd(
    cluster_path: &str,
    network_path: &str,
    output: &str,
    seed: u64,
    overrides: &[String],
) -> Result<(), CliError> {
    let cluster = load_cluster(cluster_path)?;
    let network = load_network(network_path)?;
    let (config, applied) = effective_config(&cluster, None, overrides)?;
    let result = tune_cluster(&cluster, &network, &config.tuner)?;
    let manifest = Manifest::new(
        "tune",
        &[("cluster", cluster_path), ("network", network_path)],
        seed,
        applied,
        &config,
    );
    write_envelope(output, manifest, result)
}

fn partition_cmd(
    tune_path: &str,
    data_path: &str,
    output: &str,
    manifest_csv: Option<&str>,
    seed: u64,
    overrides: &[String],
) -> Result<(), CliError> {
    let tune: TuneResult = read_artifact(tune_path)?;
    let data: DatasetSpec = read_json(data_path)?;
    let plan = balance_epoch(&tune, &data)?;
    let violations = validate_plan(&plan, &tune, &data);
    if !violations.is_empty() {
        let detail: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::validation(format!(
            "generated plan failed validation: {}",
            detail.join("; ")
        )));
    }
    if let Some(csv_path) = manifest_csv {
        write_file(csv_path, &plan_manifest_csv(&plan))?;
    }
    let mut config = EffectiveConfig::standalone();
    let applied = apply_overrides(&mut config, overrides)?;
    let manifest = Manifest::new(
        "partition",
        &[("tune", tune_path), ("data", data_path)],
        seed,
        applied,
        &config,
    );
    write_envelope(output, manifest, plan)
}

#[allow(clippy::too_many_arguments)]
fn simulate_cmd(
    cluster_path: &str,
    network_path: &str,
    tune_path: Option<&str>,
    plan_path: Option<&str>,
    n_csds: Option<u64>,
    data_path: Option<&str>,
    calibration: Option<&str>,
    output: &str,
    seed: u64,
    overrides: &[String],
) -> Result<(), CliError> {
    let cluster = load_cluster(cluster_path)?;
    let network = load_network(network_path)?;
    let (config, applied) = effective_config(&cluster, calibration, overrides)?;

    let tune = match tune_path {
        Some(path) => read_artifact::<TuneResult>(path)?,
        None => {
            let n = n_csds.ok_or_else(|| {
                CliError::validation("simulate needs either --tune or --n-csds to tune in-process")
            })?;
            if n > cluster.csds.len() as u64 {
                return Err(CliError::validation(format!(
                    "cluster has {} CSDs, --n-csds asked for {n}",
                    cluster.csds.len()
                )));
            }
            tune_cluster(&cluster.with_csds(n as usize), &network, &config.tuner)?
        }
    };
    let plan = match plan_path {
        Some(path) => read_artifact::<PartitionPlan>(path)?,
        None => {
            let data: DatasetSpec = match data_path {
                Some(path) => read_json(path)?,
                None => {
                    return Err(CliError::validation(
                        "simulate needs either --plan or --data to partition in-process",
                    ))
                }
            };
            let restricted = DatasetSpec {
                public_total: data.public_total,
                private_per_node: data
                    .private_per_node
                    .into_iter()
                    .filter(|(id, _)| tune.per_node.contains_key(id))
                    .collect(),
            };
            balance_epoch(&tune, &restricted)?
        }
    };

    let report = simulate_epoch(&cluster, &network, &tune, &plan, &config.sync, &config.energy)?;
    let mut inputs = vec![("cluster", cluster_path), ("network", network_path)];
    if let Some(p) = tune_path {
        inputs.push(("tune", p));
    }
    if let Some(p) = plan_path {
        inputs.push(("plan", p));
    }
    if let Some(p) = data_path {
        inputs.push(("data", p));
    }
    if let Some(p) = calibration {
        inputs.push(("calibration", p));
    }
    let manifest = Manifest::new("simulate", &inputs, seed, applied, &config);
    write_envelope(output, manifest, report)
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    n_csds: u64,
    report: EpochReport,
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    cluster_path: &str,
    network_path: &str,
    n_csds: &str,
    data_path: &str,
    calibration: Option<&str>,
    output: &str,
    csv: Option<&str>,
    seed: u64,
    overrides: &[String],
) -> Result<(), CliError> {
    let cluster = load_cluster(cluster_path)?;
    let network = load_network(network_path)?;
    let (config, applied) = effective_config(&cluster, calibration, overrides)?;
    let data: DatasetSpec = read_json(data_path)?;
    let counts: Vec<u64> = n_csds
        .split(',')
        .map(|v| v.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::validation(format!("--n-csds `{n_csds}` is not a comma-separated list of integers")))?;

    let rows: Vec<SweepRow> = speedup_curve(
        &cluster,
        &network,
        &counts,
        &config.tuner,
        &data,
        &config.sync,
        &config.energy,
    )?
    .into_iter()
    .map(|(n_csds, report)| SweepRow { n_csds, report })
    .collect();

    if let Some(csv_path) = csv {
        let mut text = String::from(report_csv_header());
        text.push('\n');
        for row in &rows {
            text.push_str(&row.report.csv_row());
            text.push('\n');
        }
        write_file(csv_path, &text)?;
    }

    let mut inputs = vec![
        ("cluster", cluster_path),
        ("network", network_path),
        ("data", data_path),
    ];
    if let Some(p) = calibration {
        inputs.push(("calibration", p));
    }
    let manifest = Manifest::new("sweep", &inputs, seed, applied, &config);
    write_envelope(output, manifest, rows)
}

#[derive(Debug, Deserialize)]
struct TargetsFile {
    targets: Vec<CalibrationTarget>,
    #[serde(default)]
    free_params: Vec<CalibrationParam>,
    #[serde(default = "default_sweeps")]
    sweeps: u32,
}

fn default_sweeps() -> u32 {
    20
}

fn calibrate_cmd(
    cluster_path: &str,
    network_path: &str,
    targets_path: &str,
    output: &str,
    seed: u64,
    overrides: &[String],
) -> Result<(), CliError> {
    let cluster = load_cluster(cluster_path)?;
    let network = load_network(network_path)?;
    let (config, applied) = effective_config(&cluster, None, overrides)?;
    let targets: TargetsFile = read_json(targets_path)?;

    let fit = calibrate(
        &cluster,
        &network,
        &config.tuner,
        &config.sync,
        &config.energy,
        &targets.targets,
        &targets.free_params,
        targets.sweeps,
    )?;
    println!(
        "calibrated {} parameter(s) to {} target(s); max relative residual {:.3}%",
        targets.free_params.len(),
        targets.targets.len(),
        fit.max_abs_residual() * 100.0
    );

    let manifest = Manifest::new(
        "calibrate",
        &[
            ("cluster", cluster_path),
            ("network", network_path),
            ("targets", targets_path),
        ],
        seed,
        applied,
        &config,
    );
    write_envelope(output, manifest, fit)
}

/// Deterministic unequal batch split: weights 1..=n by largest remainder.
fn unequal_split(total: usize, workers: usize) -> Vec<usize> {
    let weight_sum: usize = (1..=workers).sum();
    let mut batches: Vec<usize> = (1..=workers).map(|w| total * w / weight_sum).collect();
    let mut leftover = total - batches.iter().sum::<usize>();
    for b in batches.iter_mut().rev() {
        if leftover == 0 {
            break;
        }
        *b += 1;
        leftover -= 1;
    }
    for b in batches.iter_mut() {
        *b = (*b).max(1);
    }
    batches
}

fn round_robin_shards(n_samples: usize, workers: usize) -> Vec<Vec<usize>> {
    let mut shards = vec![Vec::new(); workers];
    for i in 0..n_samples {
        shards[i % workers].push(i);
    }
    shards
}

#[allow(clippy::too_many_arguments)]
fn verify_train_cmd(
    workers: usize,
    total_batch: usize,
    steps: u64,
    input_dim: usize,
    hidden_dim: usize,
    holdout: usize,
    output: &str,
    trace_csv: Option<&str>,
    seed: u64,
    overrides: &[String],
) -> Result<(), CliError> {
    if workers == 0 || total_batch < workers {
        return Err(CliError::validation(
            "needs at least one worker and total_batch >= workers",
        ));
    }
    let mut config = EffectiveConfig::standalone();
    let applied = apply_overrides(&mut config, overrides)?;
    let schedule = config.train.schedule.clone();
    let averaging = match config.train.averaging.as_str() {
        "uniform" => Averaging::Uniform,
        _ => Averaging::BatchWeighted,
    };

    let n_train = (total_batch * 8).max(2048);
    let dataset = synthetic_classification(seed, n_train, input_dim);
    let holdout_set = synthetic_classification(seed + 1, holdout, input_dim);
    let model = MlpModel::init(
        &[input_dim, hidden_dim, 2],
        Activation::Tanh,
        LossKind::SoftmaxCrossEntropy,
        seed + 2,
    )
    .map_err(CliError::from)?;

    // Equal-total-batch comparison: k workers vs one node on the combined
    // per-step batch.
    let base = total_batch / workers;
    let mut batches = vec![base; workers];
    for b in batches.iter_mut().take(total_batch % workers) {
        *b += 1;
    }
    let shards = round_robin_shards(n_train, workers);
    let worker_states: Vec<WorkerState> = batches
        .iter()
        .zip(&shards)
        .enumerate()
        .map(|(i, (&batch_size, shard))| WorkerState {
            worker_id: format!("w{i}"),
            batch_size,
            shard: shard.clone(),
            model_replica: model.clone(),
        })
        .collect();
    let dist = train_distributed(&worker_states, &dataset, None, &schedule, steps, averaging)?;
    let reference: Vec<(usize, Vec<usize>)> = batches
        .iter()
        .zip(&shards)
        .map(|(&b, s)| (b, s.clone()))
        .collect();
    let single = train_single_node(&model, &reference, &dataset, &schedule, steps)?;

    let loss_multi = dist.loss_trace.last().map(|p| p.loss).unwrap_or(f64::NAN);
    let loss_single = single.loss_trace.last().map(|p| p.loss).unwrap_or(f64::NAN);
    let acc_multi = evaluate_accuracy(&dist.final_model, &holdout_set);
    let acc_single = evaluate_accuracy(&single.final_model, &holdout_set);
    let param_distance = dist
        .final_model
        .weights
        .max_relative_distance(&single.final_model.weights);

    // Uniform averaging with unequal batches: the drift is reported, not
    // bounded.
    let unequal = unequal_split(total_batch, workers);
    let unequal_workers: Vec<WorkerState> = unequal
        .iter()
        .zip(&shards)
        .enumerate()
        .map(|(i, (&batch_size, shard))| WorkerState {
            worker_id: format!("w{i}"),
            batch_size,
            shard: shard.clone(),
            model_replica: model.clone(),
        })
        .collect();
    let uniform_run = train_distributed(
        &unequal_workers,
        &dataset,
        None,
        &schedule,
        steps,
        Averaging::Uniform,
    )?;
    let unequal_reference: Vec<(usize, Vec<usize>)> = unequal
        .iter()
        .zip(&shards)
        .map(|(&b, s)| (b, s.clone()))
        .collect();
    let unequal_single = train_single_node(&model, &unequal_reference, &dataset, &schedule, steps)?;
    let uniform_loss = uniform_run.loss_trace.last().map(|p| p.loss).unwrap_or(f64::NAN);
    let uniform_single_loss = unequal_single.loss_trace.last().map(|p| p.loss).unwrap_or(f64::NAN);
    let uniform_distance = uniform_run
        .final_model
        .weights
        .max_relative_distance(&unequal_single.final_model.weights);

    if let Some(path) = trace_csv {
        write_file(path, &dist.trace_csv())?;
    }

    let result = json!({
        "equal_total_batch": {
            "workers": workers,
            "batch_split": batches,
            "steps": steps,
            "final_loss_distributed": loss_multi,
            "final_loss_single": loss_single,
            "relative_loss_diff": (loss_multi - loss_single).abs() / loss_single.abs().max(1e-12),
            "accuracy_distributed": acc_multi,
            "accuracy_single": acc_single,
            "max_param_relative_distance": param_distance,
            "averaging": config.train.averaging,
        },
        "uniform_averaging_unequal_batches": {
            "batch_split": unequal,
            "final_loss_distributed": uniform_loss,
            "final_loss_single": uniform_single_loss,
            "relative_loss_diff": (uniform_loss - uniform_single_loss).abs() / uniform_single_loss.abs().max(1e-12),
            "max_param_relative_distance": uniform_distance,
        },
        "dataset": { "train_samples": n_train, "holdout_samples": holdout, "input_dim": input_dim },
    });
    println!(
        "distributed vs single: param distance {param_distance:.3e}, loss {loss_multi:.6} vs {loss_single:.6}, accuracy {acc_multi:.3} vs {acc_single:.3}"
    );

    let manifest = Manifest::new("verify-train", &[], seed, applied, &config);
    write_envelope(output, manifest, result)
}

fn report_cmd(
    inputs: &str,
    output: &str,
    summary_path: Option<&str>,
    seed: u64,
    overrides: &[String],
) -> Result<(), CliError> {
    let paths: Vec<&str> = inputs.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if paths.is_empty() {
        return Err(CliError::validation("report needs at least one sweep artifact"));
    }
    let mut rows: Vec<SweepRow> = Vec::new();
    for path in &paths {
        let mut sweep: Vec<SweepRow> = read_artifact(path)?;
        rows.append(&mut sweep);
    }
    rows.sort_by(|a, b| {
        a.report
            .network
            .cmp(&b.report.network)
            .then(a.n_csds.cmp(&b.n_csds))
    });

    let mut csv = String::from(report_csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.report.csv_row());
        csv.push('\n');
    }
    write_file(output, &csv)?;

    if let Some(path) = summary_path {
        let mut networks: BTreeMap<String, Vec<&SweepRow>> = BTreeMap::new();
        for row in &rows {
            networks.entry(row.report.network.clone()).or_default().push(row);
        }
        let mut summary = String::new();
        for (network, rows) in &networks {
            let best_speedup = rows
                .iter()
                .max_by(|a, b| {
                    a.report
                        .speedup_vs_host
                        .partial_cmp(&b.report.speedup_vs_host)
                        .expect("finite speedups")
                })
                .expect("non-empty");
            let best_saving = rows
                .iter()
                .max_by(|a, b| {
                    a.report
                        .energy_saving_vs_baseline
                        .partial_cmp(&b.report.energy_saving_vs_baseline)
                        .expect("finite savings")
                })
                .expect("non-empty");
            summary.push_str(&format!(
                "{network}: max speedup {:.2}x at {} CSDs; max energy saving {:.1}% at {} CSDs",
                best_speedup.report.speedup_vs_host,
                best_speedup.n_csds,
                best_saving.report.energy_saving_vs_baseline * 100.0,
                best_saving.n_csds
            ));
            if let Some(n) = convergence_point(rows) {
                summary.push_str(&format!("; per-node speed converges from {n} CSDs"));
            }
            summary.push('\n');
        }
        write_file(path, &summary)?;
    }

    // CSV outputs stay pure rows (no manifest channel); overrides are still
    // validated so a typo cannot pass silently.
    let mut config = EffectiveConfig::standalone();
    apply_overrides(&mut config, overrides)?;
    let _ = seed;
    Ok(())
}

/// Smallest CSD count from which the mean CSD effective speed changes by
/// less than 1% per added node for the rest of the sweep.
fn convergence_point(rows: &[&SweepRow]) -> Option<u64> {
    let speeds: Vec<(u64, f64)> = rows
        .iter()
        .filter(|r| r.n_csds > 0)
        .map(|r| {
            let csd_speeds: Vec<f64> = r
                .report
                .per_node_effective_speed
                .iter()
                .filter(|(id, _)| *id != "host")
                .map(|(_, &v)| v)
                .collect();
            let mean = csd_speeds.iter().sum::<f64>() / csd_speeds.len().max(1) as f64;
            (r.n_csds, mean)
        })
        .collect();
    if speeds.len() < 2 {
        return None;
    }
    let mut converged_from = None;
    for w in speeds.windows(2) {
        let (a, sa) = w[0];
        let (b, sb) = w[1];
        let per_node_change = ((sb / sa) - 1.0).abs() / (b - a) as f64;
        if per_node_change < 0.01 {
            converged_from.get_or_insert(b);
        } else {
            converged_from = None;
        }
    }
    converged_from
}
