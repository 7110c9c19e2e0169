// SPDX-License-Identifier: MIT OR Apache-2.0

//! `gcct`: sweep → discover → evaluate / curves / audit → export.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal invariant
//! violation. `GCC_THREADS` caps the worker pool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gcc_core::discovery::{DiscoveryConfig, FlowAnchor};
use gcc_core::threshold::PotConfig;
use gcc_core::{Aggregation, GccError};

#[derive(Debug, Parser)]
#[command(name = "gcct", version, about = "Granular concept circuit toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a dataset through the model once and write the activation index.
    Sweep(SweepArgs),
    /// Discover circuits for the selected queries.
    Discover(DiscoverArgs),
    /// Circuit / random / complement ablation comparison.
    Evaluate(EvaluateArgs),
    /// Edge deletion / insertion curves on one probe span.
    Curves(CurvesArgs),
    /// Rank circuits of misclassified queries by true-class logit gain.
    Audit(AuditArgs),
    /// Write Sankey, DOT or activation-mask artifacts for discovered circuits.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AggArg {
    Mean,
    Max,
}

impl From<AggArg> for Aggregation {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Mean => Aggregation::SpatialMean,
            AggArg::Max => Aggregation::SpatialMax,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AnchorArg {
    Source,
    Root,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum ExportFormat {
    Sankey,
    Dot,
    Masks,
}

#[derive(Debug, Args)]
struct Common {
    /// Model manifest (TOML); the weight blob sits next to it.
    #[arg(long)]
    model: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "gcc-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// Query dataset pack.
    #[arg(long)]
    queries: PathBuf,
    /// Comma-separated query positions in the pack (default: all).
    #[arg(long, value_delimiter = ',')]
    query_ids: Vec<usize>,
    /// Use only the first N queries.
    #[arg(long)]
    query_count: Option<usize>,
}

#[derive(Debug, Args)]
struct DiscoveryArgs {
    /// Activation index (default: <out>/index.bin).
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    root_fraction: f64,
    #[arg(long, default_value_t = 0.95)]
    pot_q0: f64,
    #[arg(long, default_value_t = 0.01)]
    pot_risk: f64,
    #[arg(long, default_value_t = 20)]
    sf_k: usize,
    #[arg(long, value_enum, default_value = "source")]
    sf_anchor: AnchorArg,
    /// Skip the tail fit and cut at the initial quantile.
    #[arg(long, conflicts_with = "threshold")]
    no_gpd: bool,
    /// Registered threshold strategy (pot, percentile, iqr).
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    max_nodes: usize,
}

impl DiscoveryArgs {
    fn config(&self, agg: Aggregation) -> DiscoveryConfig {
        let threshold = if self.no_gpd {
            "percentile".to_string()
        } else {
            self.threshold.clone().unwrap_or_else(|| "pot".into())
        };
        DiscoveryConfig {
            root_fraction: self.root_fraction,
            sf_k: self.sf_k,
            pot: PotConfig {
                q0: self.pot_q0,
                risk: self.pot_risk,
                ..PotConfig::default()
            },
            threshold,
            sf_anchor: match self.sf_anchor {
                AnchorArg::Source => FlowAnchor::Source,
                AnchorArg::Root => FlowAnchor::Root,
            },
            agg,
            max_nodes: self.max_nodes,
        }
    }
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset pack to index.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    agg: AggArg,
}

#[derive(Debug, Args)]
struct DiscoverArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    queries: QueryArgs,
    #[command(flatten)]
    discovery: DiscoveryArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    queries: QueryArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Registered metric (logit, accuracy).
    #[arg(long, default_value = "logit")]
    metric: String,
}

#[derive(Debug, Args)]
struct CurvesArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    queries: QueryArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Source probe layer of the span (default: the last span).
    #[arg(long)]
    span: Option<usize>,
    /// Registered edge orders to trace (s-ns, s-ns-all, random).
    #[arg(long, value_delimiter = ',', default_value = "s-ns,random")]
    orders: Vec<String>,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    queries: QueryArgs,
    /// Restrict circuits to the neurons of this probe span.
    #[arg(long)]
    span: Option<usize>,
    /// Audit every listed query, not only misclassified ones.
    #[arg(long)]
    all: bool,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    queries: QueryArgs,
    #[arg(long, value_enum)]
    format: ExportFormat,
    /// Activation index (default: <out>/index.bin).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Dataset the index was built from (masks only).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    exemplars: usize,
    /// Blur sigma in image pixels (default: 2 px per 64 px of image).
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    mask_quantile: f64,
}

/// A malformed invocation detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<GccError>() {
        Some(e) if e.is_internal() => 3,
        Some(GccError::UnknownStrategy { .. }) => 1,
        _ => 2,
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("GCC_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            UsageError(format!("GCC_THREADS must be a positive integer, got {v:?}"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| UsageError(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Sweep(a) => commands::sweep(&a),
        Command::Discover(a) => commands::discover(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Curves(a) => commands::curves(&a),
        Command::Audit(a) => commands::audit(&a),
        Command::Export(a) => commands::export(&a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
