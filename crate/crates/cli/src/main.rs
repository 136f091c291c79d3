mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{CliConfig, Overrides};

/// Protect chart images with an invisible location map, detect and localize
/// tampering, and explain what was changed.
#[derive(Debug, Parser)]
#[command(name = "chartseal", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Residual threshold for the tamper mask.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Weight of the image-fidelity loss.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Weight of the map-recovery loss.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Analysis backend URL. The token is read from CHARTSEAL_API_TOKEN.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Analysis backend request timeout in seconds.
    #[arg(long, global = true)]
    timeout: Option<u64>,
    /// Worker count for batch commands.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write it to the checkpoint path.
    Train {
        /// Directory of PNG/JPEG covers; synthetic charts when omitted.
        #[arg(long)]
        covers: Option<PathBuf>,
        /// Number of synthetic charts.
        #[arg(long, default_value_t = 32)]
        synthetic: usize,
        /// Synthetic chart side length.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Write `iter_NNNNNN.vzmk` snapshots here.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Per-iteration loss log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Embed the location map into an image.
    Protect { input: PathBuf, output: PathBuf },
    /// Apply tamper ops from a JSON array to an image.
    Tamper {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        ops: PathBuf,
        /// Also write the exact changed-pixel mask.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Localize tampering. Exit 0 when clean, 1 when regions are found.
    Detect {
        input: PathBuf,
        /// Overlay with a translucent fill inside each contour.
        #[arg(long)]
        spotlight: bool,
    },
    /// Explain detected regions with an analysis backend.
    Analyze {
        /// Suspect images; ignored with --corpus.
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Backend::Http)]
        backend: Backend,
        /// Generated corpus; analyzes every tampered image with regions
        /// taken from its truth mask.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Regions JSON for a single input instead of running detection.
        #[arg(long)]
        regions: Option<PathBuf>,
    },
    /// Generate a synthetic tampered-chart corpus.
    GenCorpus {
        output: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        ops_per_item: usize,
        /// Comma-separated op kinds; all when omitted.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Protect, replay tampering and detect over a corpus; writes a CSV.
    Evaluate {
        corpus: PathBuf,
        /// CSV path; per-item JSON goes next to it under `items/`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JPEG quality of the channel between protection and detection.
        #[arg(long)]
        jpeg: Option<u8>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Http,
    /// Offline mock labelling regions by position.
    Geometric,
    /// Offline mock answering from the corpus manifest.
    Truth,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let flags = Overrides {
        model_path: g.model.clone(),
        output_dir: g.output_dir.clone(),
        seed: g.seed,
        tau: g.tau,
        alpha: g.alpha,
        beta: g.beta,
        endpoint: g.endpoint.clone(),
        timeout_secs: g.timeout,
        jobs: g.jobs,
    };
    let result = CliConfig::load(g.config.as_deref(), &flags).and_then(|cfg| commands::run(cli.command, &cfg));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
