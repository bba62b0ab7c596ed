//! `stannis` — pipeline driver for heterogeneous in-storage training studies.
//!
//! Subcommands wire the library stages together: import benchmarks, tune
//! batch sizes, partition the dataset, simulate or sweep cluster
//! configurations, calibrate the cost models, and verify training
//! equivalence at desk scale. Every artifact embeds the full effective
//! configuration (defaults + overrides + seed), so rerunning a command
//! reproduces its output byte for byte.

mod config;
mod ops;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;

/// Exit 2: input failed validation.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit 64: command line usage error.
pub const EXIT_USAGE: u8 = 64;
/// Exit 66: an input file is missing or unreadable.
pub const EXIT_NOINPUT: u8 = 66;
/// Exit 73: an output file cannot be written.
pub const EXIT_CANTCREAT: u8 = 73;

/// Error carrying its exit code; printed as machine-readable JSON on stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
    pub location: Option<String>,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
            location: None,
        }
    }

    pub fn no_input(path: &str, err: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_NOINPUT,
            message: err.to_string(),
            location: Some(path.to_string()),
        }
    }

    pub fn cant_write(path: &str, err: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_CANTCREAT,
            message: err.to_string(),
            location: Some(path.to_string()),
        }
    }

    pub fn at(mut self, location: impl Into<String>) -> Self {
        self.location = Some(location.into());
        self
    }

    fn to_json(&self) -> String {
        let mut v = json!({ "code": self.code, "message": self.message });
        if let Some(loc) = &self.location {
            v["location"] = json!(loc);
        }
        v.to_string()
    }
}

impl From<stannis::Error> for CliError {
    fn from(err: stannis::Error) -> Self {
        CliError::validation(err.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "stannis",
    version,
    about = "Batch tuning, dataset partitioning, and epoch simulation for heterogeneous in-storage training clusters",
    after_help = "Override namespace (--override key=value, repeatable):\n  \
        tuner.c, tuner.e, tuner.max_iterations, tuner.memory_cap_enforced, tuner.candidate_batches\n  \
        sync.alpha_sec, sync.effective_bandwidth_bytes_per_sec, sync.per_param_overhead\n  \
        energy.host_active_watts, energy.csd_active_watts, energy.csd_idle_watts,\n  \
        energy.baseline_ssd_idle_watts, energy.chassis_overhead_watts\n  \
        train.base_lr, train.scale_factor, train.warmup_steps, train.mode, train.averaging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every randomized stage (data generation, model init).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Config override `key=value`; unknown keys are errors.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a benchmark file and normalize it to JSON records.
    BenchImport {
        /// Benchmark CSV (`node_id,network,batch_size,images_per_sec`) or JSON.
        #[arg(long)]
        input: String,
        /// Input format; inferred from the extension when omitted.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        output: String,
    },
    /// Pick per-node batch sizes equalizing step times across the cluster.
    Tune {
        #[arg(long)]
        cluster: String,
        #[arg(long)]
        network: String,
        #[arg(long)]
        output: String,
    },
    /// Assign dataset shards so all nodes run the same number of steps.
    Partition {
        /// Tune artifact produced by `stannis tune`.
        #[arg(long)]
        tune: String,
        /// Dataset spec: `{public_total, private_per_node}`.
        #[arg(long)]
        data: String,
        #[arg(long)]
        output: String,
        /// Also write the expanded per-sample manifest CSV here.
        #[arg(long)]
        manifest_csv: Option<String>,
    },
    /// Simulate one epoch on a cluster configuration.
    Simulate {
        #[arg(long)]
        cluster: String,
        #[arg(long)]
        network: String,
        /// Tune artifact; when omitted, tuning runs in-process (requires --n-csds).
        #[arg(long)]
        tune: Option<String>,
        /// Partition artifact; when omitted, partitioning runs in-process (requires --data).
        #[arg(long)]
        plan: Option<String>,
        /// Number of participating CSDs when tuning in-process.
        #[arg(long)]
        n_csds: Option<u64>,
        /// Dataset spec for in-process partitioning.
        #[arg(long)]
        data: Option<String>,
        /// Calibration artifact pinning sync and energy parameters.
        #[arg(long)]
        calibration: Option<String>,
        #[arg(long)]
        output: String,
    },
    /// Tune + partition + simulate across a list of CSD counts.
    Sweep {
        #[arg(long)]
        cluster: String,
        #[arg(long)]
        network: String,
        /// Comma-separated ascending CSD counts, e.g. 0,4,8,16,24.
        #[arg(long)]
        n_csds: String,
        #[arg(long)]
        data: String,
        #[arg(long)]
        calibration: Option<String>,
        #[arg(long)]
        output: String,
        /// Also write one plot-ready CSV row per configuration here.
        #[arg(long)]
        csv: Option<String>,
    },
    /// Fit sync/energy parameters to observed metric targets.
    Calibrate {
        #[arg(long)]
        cluster: String,
        #[arg(long)]
        network: String,
        /// Targets file: `{targets, free_params, sweeps}`.
        #[arg(long)]
        targets: String,
        #[arg(long)]
        output: String,
    },
    /// Desk-scale check that heterogeneous distributed SGD matches
    /// single-node training.
    VerifyTrain {
        #[arg(long, default_value_t = 6)]
        workers: usize,
        #[arg(long, default_value_t = 48)]
        total_batch: usize,
        #[arg(long, default_value_t = 500)]
        steps: u64,
        #[arg(long, default_value_t = 4)]
        input_dim: usize,
        #[arg(long, default_value_t = 8)]
        hidden_dim: usize,
        /// Held-out samples for the accuracy comparison.
        #[arg(long, default_value_t = 1000)]
        holdout: usize,
        #[arg(long)]
        output: String,
        /// Loss-trace CSV (`step,lr,worker_count,total_batch,loss`).
        #[arg(long)]
        trace_csv: Option<String>,
    },
    /// Merge sweep artifacts into one plot-ready CSV plus a text summary.
    Report {
        /// Sweep JSON artifacts, comma-separated.
        #[arg(long)]
        inputs: String,
        #[arg(long)]
        output: String,
        #[arg(long)]
        summary: Option<String>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    std::process::exit(0);
                }
                ErrorKind::InvalidSubcommand | ErrorKind::UnknownArgument => {
                    let message = err.render().to_string();
                    eprintln!("{}", json!({ "code": EXIT_USAGE, "message": message }));
                    std::process::exit(EXIT_USAGE as i32);
                }
                _ => {
                    let message = err.render().to_string();
                    eprintln!("{}", json!({ "code": EXIT_VALIDATION, "message": message }));
                    std::process::exit(EXIT_VALIDATION as i32);
                }
            }
        }
    };

    if let Err(err) = ops::run(cli.command, cli.seed, &cli.overrides) {
        eprintln!("{}", err.to_json());
        std::process::exit(err.code as i32);
    }
}
