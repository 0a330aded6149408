//! Command-line front end: dataset generation, extractor pretraining,
//! autoencoder training, scoring, evaluation, heat maps, the descriptor
//! dimension sweep and the architecture dump.

mod commands;
mod data;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

const LONG_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (formats: PCV1, PSTW v1)");

#[derive(Parser)]
#[command(name = "pstae", version, long_version = LONG_VERSION)]
#[command(about = "Point-cloud video anomaly detection pipeline")]
struct Cli {
    /// TOML experiment configuration; defaults reproduce the reference
    /// recipe.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (train and test splits).
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the shallow feature extractor on labeled action clips.
    Pretrain {
        /// Output checkpoint for the frozen extractor weights.
        #[arg(long)]
        out: PathBuf,
        /// Optional real-data hook: directory of .pcv videos with .class
        /// sidecars (one integer class index per video). Without it, a
        /// synthetic action set is generated.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Optional JSON training report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the autoencoder on normal videos.
    Train {
        /// Directory of training videos (.pcv).
        #[arg(long)]
        data: PathBuf,
        /// Frozen extractor checkpoint.
        #[arg(long)]
        extractor: PathBuf,
        /// Output model checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON training report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score test videos; one CSV per video.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        extractor: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Scoring strategy (see `--method help` on error for the list).
        #[arg(long, default_value = "pstae")]
        method: String,
    },
    /// Aggregate score CSVs into an evaluation report with per-category
    /// AUROC and the background-subtraction baseline column.
    Eval {
        /// Directory of score CSVs.
        #[arg(long)]
        scores: PathBuf,
        /// Output JSON report.
        #[arg(long)]
        out: PathBuf,
        /// Test videos; enables the independently recomputed baseline
        /// column.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Video-id to category manifest; defaults to manifest.json inside
        /// --data.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Export per-anchor reconstruction-error heat maps as PLY files.
    Heatmap {
        /// A single .pcv video.
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        extractor: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain, train and score for every descriptor dimension in
    /// {4, 8, 16, 32}; emits one ROC file per dimension.
    SweepF {
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        test_data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the layer table and parameter counts as JSON.
    ArchDump {
        /// Descriptor dimension override.
        #[arg(long)]
        f: Option<usize>,
        /// Optional output file (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => match pstae::config::RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => return fail(&e.to_string()),
        },
        None => pstae::config::RunConfig::default(),
    };
    let result = match cli.command {
        Command::GenData { out } => commands::gen_data(&config, &out),
        Command::Pretrain { out, data, report } => {
            commands::pretrain(&config, &out, data.as_deref(), report.as_deref())
        }
        Command::Train { data, extractor, out, report } => {
            commands::train(&config, &data, &extractor, &out, report.as_deref())
        }
        Command::Score { data, extractor, model, out, method } => commands::score(
            &config,
            &data,
            extractor.as_deref(),
            model.as_deref(),
            &out,
            &method,
        ),
        Command::Eval { scores, out, data, manifest } => {
            commands::eval(&config, &scores, &out, data.as_deref(), manifest.as_deref())
        }
        Command::Heatmap { video, extractor, model, out } => {
            commands::heatmap(&config, &video, &extractor, &model, &out)
        }
        Command::SweepF { train_data, test_data, out } => {
            commands::sweep_f(&config, &train_data, &test_data, &out)
        }
        Command::ArchDump { f, out } => commands::arch_dump(&config, f, out.as_deref()),
    };
    if let Err(e) = result {
        fail(&format!("{e:#}"));
    }
}

/// Machine-readable failure: an error JSON on stderr and a nonzero exit.
fn fail(message: &str) {
    let payload = serde_json::json!({ "error": message });
    eprintln!("{payload}");
    std::process::exit(1);
}
