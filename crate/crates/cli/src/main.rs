//! Batch command-line front end for the survival-prediction toolkit.
//!
//! Subcommands: `generate`, `evaluate`, `stratify`, `importance`,
//! `attention`, `compare-groups`. Every run is deterministic given its flags
//! and seed; the seed resolves as `--seed` > config file > `CONCORD_SEED` >
//! 0, and a `--config file.toml` can preload any of the documented keys
//! (explicit flags always win).
//!
//! Exit codes: 0 success, 1 error, 2 degraded report (one or more folds
//! failed but at least three succeeded).

mod commands;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "concord",
    version,
    about = "Multimodal survival prediction: synthetic cohorts, nested cross-validation, hazard stratification, interpretability"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with known ground truth.
    Generate(GenerateArgs),
    /// Run 5-fold nested cross-validation for one model family.
    Evaluate(EvaluateArgs),
    /// Quartile hazard stratification with KM curves and a log-rank test.
    Stratify(StratifyArgs),
    /// Table of per-feature Cox coefficients across fold checkpoints.
    Importance(ImportanceArgs),
    /// Attention-rollout patch weights from a trained image model.
    Attention(AttentionArgs),
    /// Mann-Whitney comparison of cell fractions between risk groups.
    CompareGroups(CompareGroupsArgs),
}

/// Keys a `--config file.toml` may preload. Explicit flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub model: Option<String>,
    pub fusion: Option<String>,
    pub nonimage_kind: Option<String>,
    pub l1_grid: Option<Vec<f64>>,
    pub l2_grid: Option<Vec<f64>>,
    pub outer_folds: Option<usize>,
    pub inner_folds: Option<usize>,
    pub dense_epochs: Option<usize>,
    pub dense_lr: Option<f64>,
    pub image_epochs: Option<usize>,
    pub image_lr: Option<f64>,
    pub image_layers: Option<usize>,
    pub image_heads: Option<usize>,
    pub image_dim: Option<usize>,
    pub max_patches: Option<usize>,
    pub weight_decay: Option<f64>,
}

impl FileConfig {
    fn load(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

/// Seed resolution: flag > config file > CONCORD_SEED > 0.
pub fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> u64 {
    flag.or(file.seed)
        .or_else(|| std::env::var("CONCORD_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Number of patients.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Master seed (overrides config file and CONCORD_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for records.csv, features.csv, bags.ndjson,
    /// cells.csv, manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub p_binary: usize,
    #[arg(long, default_value_t = 2)]
    pub p_continuous: usize,
    /// True coefficients, comma-separated (binary features first). Default:
    /// 1.0 on the first binary, -0.5 on the first continuous, 0 elsewhere.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,
    /// Target censored fraction in [0, 0.9].
    #[arg(long, default_value_t = 0.3)]
    pub censoring: f64,
    /// Strength of the hidden image factor in the hazard; 0 removes all
    /// image signal.
    #[arg(long, default_value_t = 1.0)]
    pub image_signal: f64,
    #[arg(long, default_value_t = 8)]
    pub patches_min: usize,
    #[arg(long, default_value_t = 16)]
    pub patches_max: usize,
    /// Patch embedding dimension.
    #[arg(long, default_value_t = 16)]
    pub d_in: usize,
    #[arg(long, default_value_t = 1.5)]
    pub weibull_shape: f64,
    #[arg(long, default_value_t = 12.0)]
    pub weibull_scale: f64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Cohort directory (records.csv, features.csv, bags.ndjson[, cells.csv]).
    #[arg(long)]
    pub cohort: PathBuf,
    /// Model family: cox | mlp | snn | image | multimodal | random.
    #[arg(long)]
    pub model: Option<String>,
    /// Fusion scenario as `<nonimage>,<image>` with each early|late.
    #[arg(long)]
    pub fusion: Option<String>,
    /// Non-image architecture inside the multimodal model: cox | mlp | snn.
    #[arg(long)]
    pub nonimage_kind: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path (canonical JSON).
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// L1 grid, comma-separated; default by family.
    #[arg(long, value_delimiter = ',')]
    pub l1_grid: Option<Vec<f64>>,
    /// L2 grid, comma-separated; default by family.
    #[arg(long, value_delimiter = ',')]
    pub l2_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub outer_folds: Option<usize>,
    #[arg(long)]
    pub inner_folds: Option<usize>,
    #[arg(long)]
    pub dense_epochs: Option<usize>,
    #[arg(long)]
    pub dense_lr: Option<f64>,
    #[arg(long)]
    pub image_epochs: Option<usize>,
    #[arg(long)]
    pub image_lr: Option<f64>,
    #[arg(long)]
    pub image_layers: Option<usize>,
    #[arg(long)]
    pub image_heads: Option<usize>,
    /// Transformer model dimension (the patient embedding stays 32-d).
    #[arg(long)]
    pub image_dim: Option<usize>,
    /// Training-time cap on patches per bag.
    #[arg(long)]
    pub max_patches: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Directory for per-fold model checkpoints (fold_<k>.json).
    #[arg(long)]
    pub save_models: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct StratifyArgs {
    /// Evaluation report produced by `evaluate`.
    #[arg(long)]
    pub report: PathBuf,
    /// Cohort directory the report was computed from.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Output directory for km.csv, km.svg, stratification.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ImportanceArgs {
    /// Per-fold model checkpoints (cox or multimodal with a cox branch).
    #[arg(long, num_args = 1.., required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// CSV output path.
    #[arg(long, default_value = "importance.csv")]
    pub out: PathBuf,
    /// Optional JSON output path.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct AttentionArgs {
    /// Trained image or multimodal checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Bags file (bags.ndjson).
    #[arg(long)]
    pub bags: PathBuf,
    /// Restrict to one patient (required for --svg).
    #[arg(long)]
    pub patient: Option<String>,
    /// CSV output path (patient_id,patch_id,weight,x,y).
    #[arg(long, default_value = "attention.csv")]
    pub out: PathBuf,
    /// Coordinate-tagged SVG scatter for a single patient.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareGroupsArgs {
    /// Cell-fraction table (cells.csv).
    #[arg(long)]
    pub cells: PathBuf,
    /// Stratification document produced by `stratify`.
    #[arg(long)]
    pub stratification: PathBuf,
    /// Quartile treated as the high-risk group.
    #[arg(long, default_value_t = 4)]
    pub high: u8,
    /// Quartile treated as the low-risk group.
    #[arg(long, default_value_t = 1)]
    pub low: u8,
    /// CSV output path.
    #[arg(long, default_value = "cell_comparison.csv")]
    pub out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Stratify(args) => commands::stratify(args),
        Command::Importance(args) => commands::importance(args),
        Command::Attention(args) => commands::attention(args),
        Command::CompareGroups(args) => commands::compare_groups(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
