//! `wbdwi`: runs the WB-DWI bone-disease pipeline and its statistics from the
//! command line.
//!
//! Exit codes: 0 success, 2 validation error (arguments, config, inputs),
//! 3 stage failure.

mod commands;
mod tables;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use thiserror::Error;
use wbdwi_core::seg::Backend;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Stage(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Stage(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum BackendArg {
    Threshold,
    Cnn,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Threshold => Backend::Threshold,
            BackendArg::Cnn => Backend::Cnn,
        }
    }
}

#[derive(Debug, Args)]
pub struct Global {
    /// Pipeline config (JSON). Unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for bootstraps and phantom generation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Segmentation backend.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// WBW1 weights file for the cnn backend.
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "wbdwi", version, about = "Whole-body DWI bone disease quantification and response assessment")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline over a pre/post study pair; writes report.json, report.md,
    /// timings.json and lesion label maps.
    Pipeline { pre: PathBuf, post: PathBuf },
    /// One timepoint; writes a report fragment.
    Single { study: PathBuf },
    /// Monoexponential ADC fit; writes adc.nii, s0.nii, valid_mask.nii.
    FitAdc { study: PathBuf },
    /// Computed b900 with station equalization and canal scaling; writes
    /// b900_normalized.nii and normalization.json.
    Normalize { study: PathBuf },
    /// Lesion probability and binary mask; writes lesion_probability.nii,
    /// lesion_mask.nii and segmentation.json.
    Segment { study: PathBuf },
    /// Connected components and exclusion rules; writes lesions.nii and
    /// lesions.json.
    Postprocess {
        study: PathBuf,
        /// Binary lesion mask to use instead of running segmentation.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Per-region TDV and gADC biomarkers (printed, and written to
    /// biomarkers.json with --out).
    Quantify {
        study: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Response categories from deltas.
    #[command(long_about = "Response categories from deltas.

INPUT is a pipeline report.json, a JSON array of rows, or a CSV file (.csv).
CSV columns: optional id; then either delta_tdv_pct, delta_median_gadc_pct,
delta_roi_gt_1ml, delta_roi_gt_3ml, or the paired biomarkers tdv_pre,
tdv_post, median_gadc_pre, median_gadc_post, roi_gt_1ml_pre, roi_gt_1ml_post,
roi_gt_3ml_pre, roi_gt_3ml_post. JSON rows use the same keys. Blank or NA
percentages are undefined and give a Review outcome.")]
    Respond { input: PathBuf },
    /// Repeatability statistics from same-day repeat measurements.
    #[command(long_about = "Repeatability statistics from same-day repeat measurements.

CSV columns: optional subject, first, second.")]
    Repeatability { input: PathBuf },
    /// Diagnostic accuracy with Wilson intervals.
    #[command(long_about = "Diagnostic accuracy with Wilson intervals.

Either --counts TP,P,TN,N or a CSV with columns predicted and reference.
predicted takes benefit, no_benefit, indeterminate or an outcome name
(responder, stable, progression, review); reference takes benefit/no_benefit,
1/0, or an outcome name.")]
    Accuracy {
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_name = "TP,P,TN,N")]
        counts: Option<Vec<u64>>,
        /// Continuity-corrected Wilson intervals.
        #[arg(long)]
        continuity: bool,
    },
    /// Youden-optimal REC cutoffs with bootstrap intervals.
    #[command(long_about = "Youden-optimal REC cutoffs with bootstrap intervals.

CSV columns: the delta (or paired biomarker) columns accepted by respond, plus
reference (responder, stable or progression).")]
    OptimizeCutoffs {
        input: PathBuf,
        /// Bootstrap iterations (default from config).
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Synthetic studies from a phantom spec, or a cohort if the spec has a
    /// "plan" key.
    Phantom { spec: PathBuf },
    /// Markdown rendering of a report.json.
    ReportRender { report: PathBuf },
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = commands::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
