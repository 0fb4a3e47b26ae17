//! `illum`: estimate, correct and evaluate scene illuminants.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use illum_core::classic::{Eq4Config, Minkowski};
use illum_core::pipeline::{Method, Mode};
use illum_core::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "illum", version, about = "Illuminant estimation, correction and evaluation")]
pub struct Cli {
    /// Seed for every random choice (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML or JSON file with parameter overrides.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Trained CNN model file.
    #[arg(long)]
    pub cnn: Option<PathBuf>,
    /// Trained aggregator model file.
    #[arg(long)]
    pub aggregator: Option<PathBuf>,
    /// auto, force-single, force-multi or oracle.
    #[arg(long)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the illuminant of one image.
    Estimate {
        image: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
        /// Score with a single method instead of the pipeline (DN, GW, WP,
        /// SoG, gGW, GE1, GE2, cnn-median, cnn-svr, cnn-local).
        #[arg(long, conflicts_with = "custom")]
        method: Option<Method>,
        /// Custom statistical estimator: derivative order, Minkowski norm
        /// (a number or "inf") and smoothing scale, e.g. `1,inf,2`.
        #[arg(long, value_name = "N,P,SIGMA", value_parser = parse_custom)]
        custom: Option<Eq4Config>,
    },
    /// Estimate and remove the illuminant color cast.
    Correct {
        image: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long, conflicts_with = "custom")]
        method: Option<Method>,
        #[arg(long, value_name = "N,P,SIGMA", value_parser = parse_custom)]
        custom: Option<Eq4Config>,
        /// Leave the green channel unchanged.
        #[arg(long)]
        green_preserving: bool,
        /// Also write an 8-bit sRGB preview.
        #[arg(long)]
        preview: bool,
    },
    /// Decide whether an image is lit by one or several lights.
    Detect {
        image: PathBuf,
        #[arg(long)]
        cnn: Option<PathBuf>,
        /// Also write the density grid as a PFM.
        #[arg(long)]
        density: bool,
    },
    /// Train the patch CNN on one cross-validation run of a dataset.
    TrainCnn {
        #[arg(long)]
        data: PathBuf,
        /// Run 0, 1 or 2: trains on fold run+2, validates on fold run+1.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Fit the local-to-global regressor on CNN patch maps.
    TrainAggregator {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cnn: PathBuf,
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Render a synthetic single-illuminant dataset.
    GenScenes {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Relight a dataset with several lights per image.
    Relight {
        #[arg(long)]
        data: PathBuf,
        /// Lights per relit image.
        #[arg(long)]
        illuminants: Option<usize>,
        /// Share of images relit with a single light instead.
        #[arg(long)]
        single_fraction: Option<f64>,
    },
    /// Score methods against ground truth and write reports.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
        /// Comma-separated method names (default: every method the given
        /// models support).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        /// Evaluate only the test fold of this run.
        #[arg(long)]
        run: Option<usize>,
    },
    /// Find the patches that most excite a hidden unit.
    InspectActivations {
        #[arg(long)]
        cnn: PathBuf,
        #[arg(long)]
        unit: usize,
        #[arg(long, default_value_t = 9)]
        top: usize,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
}

fn parse_custom(s: &str) -> std::result::Result<Eq4Config, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [n, p, sigma] = parts[..] else {
        return Err(format!("expected N,P,SIGMA, got {s:?}"));
    };
    let n: u8 = n.parse().map_err(|_| format!("bad derivative order {n:?}"))?;
    let p: Minkowski = p.parse().map_err(|e: Error| e.to_string())?;
    let sigma: f64 = sigma.parse().map_err(|_| format!("bad sigma {sigma:?}"))?;
    Eq4Config::new(n, p, sigma).map_err(|e| e.to_string())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
