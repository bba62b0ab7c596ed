//! Per-node benchmark ingestion and throughput modeling.
//!
//! A node's training speed is an empirical map from batch size to images per
//! second. Measured points rise with batch size and then plateau once the
//! processing engine is fully utilized, so the fitted model is an isotonic
//! regression of the samples joined by piecewise-linear interpolation:
//! constant above the largest sampled batch, linear through the origin below
//! the smallest one.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative distance from the plateau throughput below which a sampled batch
/// counts as saturated.
pub const SATURATION_TOLERANCE: f64 = 0.02;

/// Static description of a neural network being trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDescriptor {
    pub name: String,
    /// Trainable parameter count.
    pub param_count: u64,
    /// Floating-point operations per sample (forward pass).
    pub flop_count: u64,
    /// Multiply-accumulate operations per sample.
    pub mac_count: u64,
    /// Width of one gradient element on the wire.
    pub bytes_per_param: u64,
    /// Working-set memory per sample, for the DRAM cap.
    pub activation_bytes_per_sample: u64,
}

impl NetworkDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("network", "name must be non-empty"));
        }
        if self.param_count == 0 || self.flop_count == 0 || self.mac_count == 0 {
            return Err(Error::invalid(
                "network",
                format!("param/flop/mac counts must be positive in `{}`", self.name),
            ));
        }
        if !matches!(self.bytes_per_param, 2 | 4 | 8) {
            return Err(Error::invalid(
                "network",
                format!(
                    "bytes_per_param must be 2, 4 or 8, got {} in `{}`",
                    self.bytes_per_param, self.name
                ),
            ));
        }
        if self.activation_bytes_per_sample == 0 {
            return Err(Error::invalid(
                "network",
                format!("activation_bytes_per_sample must be positive in `{}`", self.name),
            ));
        }
        Ok(())
    }

    /// Resident model footprint: weights + gradients + optimizer state.
    pub fn model_bytes(&self) -> u64 {
        3 * self.param_count * self.bytes_per_param
    }

    /// Gradient payload exchanged per synchronization round.
    pub fn gradient_bytes(&self) -> u64 {
        self.param_count * self.bytes_per_param
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let net: NetworkDescriptor = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        net.validate()?;
        Ok(net)
    }
}

/// One benchmark measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub node_id: String,
    pub network: String,
    pub batch_size: u64,
    pub images_per_sec: f64,
}

/// Benchmark file formats accepted by [`load_benchmark`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkFormat {
    Csv,
    Json,
}

/// Loads benchmark records from a CSV (`node_id,network,batch_size,images_per_sec`,
/// `#` comments) or a JSON array of record objects.
///
/// Records are returned in file order. Duplicate (node, network, batch)
/// triples and non-positive numeric fields are rejected.
pub fn load_benchmark(path: impl AsRef<Path>, format: BenchmarkFormat) -> Result<Vec<BenchmarkRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let records = match format {
        BenchmarkFormat::Csv => parse_benchmark_csv(&text, &path.display().to_string())?,
        BenchmarkFormat::Json => {
            let records: Vec<BenchmarkRecord> =
                serde_json::from_str(&text).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: e.line(),
                    message: e.to_string(),
                })?;
            records
        }
    };
    validate_benchmark_records(&records)?;
    Ok(records)
}

fn parse_benchmark_csv(text: &str, path: &str) -> Result<Vec<BenchmarkRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for row in reader.deserialize::<BenchmarkRecord>() {
        let record = row.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(0);
            Error::Parse {
                path: path.to_string(),
                line,
                message: e.to_string(),
            }
        })?;
        records.push(record);
    }
    Ok(records)
}

fn validate_benchmark_records(records: &[BenchmarkRecord]) -> Result<()> {
    let mut seen = BTreeMap::new();
    for (idx, r) in records.iter().enumerate() {
        let line = idx + 2; // header is line 1
        if r.batch_size == 0 {
            return Err(Error::NonPositiveValue {
                field: "batch_size".into(),
                line,
                value: r.batch_size.to_string(),
            });
        }
        if !(r.images_per_sec > 0.0) {
            return Err(Error::NonPositiveValue {
                field: "images_per_sec".into(),
                line,
                value: r.images_per_sec.to_string(),
            });
        }
        let key = (r.node_id.clone(), r.network.clone(), r.batch_size);
        if let Some(_first) = seen.insert(key, line) {
            return Err(Error::DuplicateRecord {
                node_id: r.node_id.clone(),
                network: r.network.clone(),
                batch_size: r.batch_size,
                line,
            });
        }
    }
    Ok(())
}

/// Serializes records back to the benchmark CSV format (round-trips
/// [`load_benchmark`]).
pub fn benchmark_to_csv(records: &[BenchmarkRecord]) -> String {
    let mut out = String::from("node_id,network,batch_size,images_per_sec\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.node_id, r.network, r.batch_size, r.images_per_sec
        ));
    }
    out
}

/// Saturating monotone throughput model fitted from benchmark samples.
///
/// Deserialization reads only the raw `samples` and refits, so curves in
/// config files cannot carry inconsistent saturation fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveSamples")]
pub struct ThroughputCurve {
    /// Isotonic-regressed samples, batch sizes strictly increasing.
    pub samples: Vec<(u64, f64)>,
    /// Plateau throughput (value at the largest sampled batch).
    pub saturation_throughput: f64,
    /// Smallest sampled batch within [`SATURATION_TOLERANCE`] of the plateau.
    pub saturation_batch: u64,
}

#[derive(Deserialize)]
struct CurveSamples {
    samples: Vec<(u64, f64)>,
}

impl TryFrom<CurveSamples> for ThroughputCurve {
    type Error = Error;

    fn try_from(raw: CurveSamples) -> Result<Self> {
        fit_curve(&raw.samples)
    }
}

/// Fits a [`ThroughputCurve`] through benchmark samples.
///
/// Samples are sorted by batch size, pooled into a non-decreasing sequence
/// (pool-adjacent-violators), and interpolated piecewise-linearly.
pub fn fit_curve(records: &[(u64, f64)]) -> Result<ThroughputCurve> {
    let mut sorted: Vec<(u64, f64)> = records.to_vec();
    sorted.sort_by_key(|&(b, _)| b);
    sorted.dedup_by_key(|&mut (b, _)| b);
    if sorted.len() < 2 {
        return Err(Error::TooFewSamples {
            distinct: sorted.len(),
        });
    }
    for &(b, t) in &sorted {
        if b == 0 || !(t > 0.0) {
            return Err(Error::invalid(
                "curve sample",
                format!("batch {b} with throughput {t}: both must be positive"),
            ));
        }
    }

    let regressed = isotonic(&sorted);
    let saturation_throughput = regressed.last().unwrap().1;
    let saturation_batch = regressed
        .iter()
        .find(|&&(_, t)| t >= saturation_throughput * (1.0 - SATURATION_TOLERANCE))
        .unwrap()
        .0;

    Ok(ThroughputCurve {
        samples: regressed,
        saturation_throughput,
        saturation_batch,
    })
}

/// Pool-adjacent-violators: replaces decreasing runs with their mean so the
/// sequence of throughputs is non-decreasing in batch size.
fn isotonic(samples: &[(u64, f64)]) -> Vec<(u64, f64)> {
    // (sum, count) blocks; merge while the last block's mean exceeds the new one's.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
    for &(_, t) in samples {
        let mut sum = t;
        let mut count = 1usize;
        while let Some(&(psum, pcount)) = blocks.last() {
            if psum / pcount as f64 > sum / count as f64 {
                sum += psum;
                count += pcount;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push((sum, count));
    }
    let mut out = Vec::with_capacity(samples.len());
    let mut idx = 0;
    for &(sum, count) in &blocks {
        let mean = sum / count as f64;
        for _ in 0..count {
            out.push((samples[idx].0, mean));
            idx += 1;
        }
    }
    out
}

impl ThroughputCurve {
    /// Images per second at `batch` on the fitted curve. `batch >= 1`.
    pub fn throughput_at(&self, batch: u64) -> f64 {
        assert!(batch >= 1, "batch size must be at least 1");
        let b = batch as f64;
        let first = self.samples[0];
        let last = *self.samples.last().unwrap();
        if batch <= first.0 {
            // Linear through the origin: one sample cannot run faster than
            // proportional scaling.
            return first.1 * b / first.0 as f64;
        }
        if batch >= last.0 {
            return self.saturation_throughput;
        }
        let hi = self.samples.partition_point(|&(sb, _)| sb < batch);
        let (b0, t0) = self.samples[hi - 1];
        let (b1, t1) = self.samples[hi];
        if batch == b0 {
            return t0;
        }
        t0 + (b - b0 as f64) * (t1 - t0) / (b1 - b0) as f64
    }

    /// Seconds to process one batch of `batch` samples.
    pub fn step_time(&self, batch: u64) -> f64 {
        batch as f64 / self.throughput_at(batch)
    }

    /// Lower bound on step time in the saturated regime: the step time at
    /// the saturation knee. Used to rank nodes by slowness.
    pub fn plateau_step_floor(&self) -> f64 {
        self.saturation_batch as f64 / self.saturation_throughput
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Host,
    Csd,
}

/// A processing node: the host CPU or one in-storage engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub node_id: String,
    #[serde(rename = "class")]
    pub node_class: NodeClass,
    /// Network name -> fitted throughput curve.
    pub curves: BTreeMap<String, ThroughputCurve>,
    /// DRAM available to training (the usable amount, not the board total).
    pub dram_bytes: u64,
    pub active_power_watts: f64,
    pub idle_power_watts: f64,
}

impl NodeProfile {
    pub fn validate(&self) -> Result<()> {
        if self.dram_bytes == 0 {
            return Err(Error::invalid(
                "node",
                format!("`{}` has zero DRAM", self.node_id),
            ));
        }
        if !(self.active_power_watts >= self.idle_power_watts && self.idle_power_watts >= 0.0) {
            return Err(Error::invalid(
                "node",
                format!(
                    "`{}` power bounds violated: active {} < idle {} (or negative)",
                    self.node_id, self.active_power_watts, self.idle_power_watts
                ),
            ));
        }
        Ok(())
    }

    pub fn curve(&self, network: &str) -> Result<&ThroughputCurve> {
        self.curves.get(network).ok_or_else(|| Error::MissingCurve {
            node_id: self.node_id.clone(),
            network: network.to_string(),
        })
    }
}

/// Allreduce link characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub bandwidth_bytes_per_sec: f64,
    pub latency_sec: f64,
}

/// A full cluster: one host plus its CSDs and the ring link between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub host: NodeProfile,
    pub csds: Vec<NodeProfile>,
    pub link: LinkSpec,
    /// Idle draw of one conventional SSD in the displaced baseline server.
    pub baseline_storage_idle_watts: f64,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        self.host.validate()?;
        for csd in &self.csds {
            csd.validate()?;
        }
        if !(self.link.bandwidth_bytes_per_sec > 0.0) {
            return Err(Error::invalid("cluster", "link bandwidth must be positive"));
        }
        if !(self.link.latency_sec >= 0.0) {
            return Err(Error::invalid("cluster", "link latency must be non-negative"));
        }
        if !(self.baseline_storage_idle_watts >= 0.0) {
            return Err(Error::invalid(
                "cluster",
                "baseline storage idle watts must be non-negative",
            ));
        }
        let mut ids: Vec<&str> = self.nodes().map(|n| n.node_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.csds.len() + 1 {
            return Err(Error::invalid("cluster", "node ids must be unique"));
        }
        Ok(())
    }

    /// All nodes, host first, CSDs in declaration order.
    pub fn nodes(&self) -> impl Iterator<Item = &NodeProfile> {
        std::iter::once(&self.host).chain(self.csds.iter())
    }

    /// The same cluster restricted to the first `n_csds` CSDs.
    pub fn with_csds(&self, n_csds: usize) -> ClusterSpec {
        ClusterSpec {
            host: self.host.clone(),
            csds: self.csds.iter().take(n_csds).cloned().collect(),
            link: self.link.clone(),
            baseline_storage_idle_watts: self.baseline_storage_idle_watts,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let spec: ClusterSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Largest batch that fits in `node`'s DRAM for `net`.
///
/// Footprint model: `model_bytes + batch * activation_bytes_per_sample`,
/// with `model_bytes = 3 * param_count * bytes_per_param` (weights,
/// gradients, optimizer state).
pub fn max_batch_for_memory(node: &NodeProfile, net: &NetworkDescriptor) -> Result<u64> {
    let model_bytes = net.model_bytes();
    if model_bytes > node.dram_bytes {
        return Err(Error::ModelDoesNotFit {
            node_id: node.node_id.clone(),
            model_bytes,
            dram_bytes: node.dram_bytes,
        });
    }
    let free = node.dram_bytes - model_bytes;
    let max_batch = free / net.activation_bytes_per_sample;
    if max_batch == 0 {
        return Err(Error::NoSampleFits {
            node_id: node.node_id.clone(),
            free_bytes: free,
            sample_bytes: net.activation_bytes_per_sample,
        });
    }
    Ok(max_batch)
}
