//! `maskqc`: dataset curation and experiment analysis for lesion
//! segmentation ground truths.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "maskqc", version, about)]
pub struct Cli {
    /// Worker threads for per-sample stages (default: number of processors).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Report format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// TOML file with default values; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    None,
    Opening,
    Convexhull,
}

impl From<KindArg> for maskqc::ConditioningKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::None => maskqc::ConditioningKind::None,
            KindArg::Opening => maskqc::ConditioningKind::Opening,
            KindArg::Convexhull => maskqc::ConditioningKind::ConvexHull,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Histogram of samples by number of masks.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average pairwise kappa of every multi-annotated sample under each
    /// conditioning.
    Agreement {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        se: SeArg,
    },
    /// Apply a conditioning to a mask file or every PNG in a directory.
    Condition {
        #[arg(long)]
        input: PathBuf,
        /// Output directory (or file, when the input is a file).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[command(flatten)]
        se: SeArg,
    },
    /// Keep samples whose unconditioned average kappa exceeds the threshold.
    Select {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded train/validation split of a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
        /// Directory receiving train.csv and validation.csv.
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write best_train.csv and best_validation.csv, filtered from
        /// the split halves at this agreement threshold.
        #[arg(long)]
        best_threshold: Option<f64>,
    },
    /// Best-of-annotations Jaccard of a prediction directory.
    Evaluate {
        /// Directory holding `<sample_id>.png` predictions.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Conditioning applied to the ground truths (never to predictions).
        #[arg(long, value_enum, default_value = "none")]
        kind: KindArg,
        /// Name recorded in the summary (default: manifest file stem).
        #[arg(long)]
        test_set: Option<String>,
        /// Per-sample CSV; the JSON summary goes beside it with a `.json`
        /// extension.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        se: SeArg,
    },
    /// Full factorial run table (outcome column left empty).
    Design {
        #[arg(long)]
        replicates: Option<usize>,
        #[command(flatten)]
        factors: FactorsArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Factorial ANOVA of a completed run table.
    Anova {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        max_order: Option<usize>,
        #[command(flatten)]
        factors: FactorsArg,
        /// ANOVA table (CSV, or JSON with `--format json`).
        #[arg(long)]
        out: PathBuf,
        /// Shares of the variation attributable to design-only terms.
        #[arg(long)]
        shares: Option<PathBuf>,
        /// Cell means of every pair of factors (interaction plot data).
        #[arg(long)]
        interactions: Option<PathBuf>,
    },
    /// Agreement, percentile table and distribution data in one bundle.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated percentiles.
        #[arg(long, value_delimiter = ',')]
        percentiles: Option<Vec<f64>>,
        #[arg(long)]
        bins: Option<usize>,
        /// Also draw the histograms and densities as SVG.
        #[arg(long)]
        svg: bool,
        #[command(flatten)]
        se: SeArg,
    },
}

#[derive(Debug, Args)]
pub struct SeArg {
    /// Side of the square structuring element (odd).
    #[arg(long = "se")]
    pub se: Option<u32>,
}

#[derive(Debug, Args)]
pub struct FactorsArg {
    /// TOML file with `[[factor]]` tables (name, levels, kind); defaults to
    /// the training-set/test-set/conditioning/model design.
    #[arg(long)]
    pub factors: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
