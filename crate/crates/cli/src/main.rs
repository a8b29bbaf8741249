//! `heights`: object heights from classified LiDAR and segmentation masks.
//!
//! ```text
//! heights run --masks masks.geojson --out results tile1.las tile2.las
//! heights dsm|dtm|ndsm --out results tile1.las
//! heights merge-masks --out results masks_10cm.geojson masks_20cm.geojson
//! heights run --masks masks_10cm.geojson --masks masks_30cm.geojson tile1.las
//! heights validate --masks masks.geojson tile1.las
//! ```

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use heights_core::pipeline;
use heights_core::{PipelineConfig, Units};

pub const MERGED_MASKS: &str = "merged_masks.geojson";

#[derive(Parser, Debug)]
#[command(name = "heights", version, about = "Per-object heights from classified aerial LiDAR")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key=value configuration file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Raster cell size in meters (default 0.2)
    #[arg(long, global = true, value_name = "METERS")]
    cell_size: Option<f64>,

    /// Height units in the table: meters or feet (default feet)
    #[arg(long, global = true)]
    units: Option<Units>,

    /// IoU at or above which overlapping masks of one label are merged (default 0.5)
    #[arg(long, global = true, value_name = "IOU")]
    iou_threshold: Option<f64>,

    /// Any other configuration key, e.g. --set fill=knn:4 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the whole pipeline and write every artifact
    Run {
        /// Mask file; repeat to ensemble several files
        #[arg(long, required = true)]
        masks: Vec<PathBuf>,
        /// LAS or "x y z class" text point files
        #[arg(required = true)]
        points: Vec<PathBuf>,
    },
    /// Write the object surface (dsm.asc)
    Dsm {
        #[arg(required = true)]
        points: Vec<PathBuf>,
    },
    /// Write the ground surface before and after infill (dtm.asc, dtm_filled.asc)
    Dtm {
        #[arg(required = true)]
        points: Vec<PathBuf>,
    },
    /// Write the normalized height surface (ndsm.asc)
    Ndsm {
        #[arg(required = true)]
        points: Vec<PathBuf>,
    },
    /// Deduplicate masks across files/resolutions
    MergeMasks {
        #[arg(required = true)]
        masks: Vec<PathBuf>,
    },
    /// Parse the inputs and print a JSON summary
    Validate {
        /// Mask file (repeatable)
        #[arg(long)]
        masks: Vec<PathBuf>,
        points: Vec<PathBuf>,
    },
}

fn effective_config(common: &Common) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &common.overrides {
        let (key, value) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
        config.set(key, value)?;
    }
    if let Some(v) = common.cell_size {
        config.cell_size = v;
    }
    if let Some(v) = common.units {
        config.units = v;
    }
    if let Some(v) = common.iou_threshold {
        config.iou_threshold = v;
    }
    config.validate()?;
    Ok(config)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("HEIGHTS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("HEIGHTS_THREADS must be a non-negative integer, got '{raw}'"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn check_inputs(paths: &[PathBuf], what: &str) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            bail!("{what} file not found: {}", p.display());
        }
    }
    Ok(())
}

fn print_written(out: &Path, names: &[&str]) {
    for name in names {
        println!("wrote {}", out.join(name).display());
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = effective_config(&cli.common)?;
    configure_threads()?;
    let out = &cli.common.out;
    match &cli.command {
        Command::Run { masks, points } => {
            check_inputs(masks, "masks")?;
            check_inputs(points, "point")?;
            let result = pipeline::run_pipeline(&config, points, masks, out)?;
            print_written(out, &result.report.artifacts);
            println!("{} objects, {} skipped", result.report.objects, result.report.skipped_objects.len());
        }
        Command::Dsm { points } => {
            check_inputs(points, "point")?;
            pipeline::run_dsm(&config, points, out)?;
            print_written(out, &[pipeline::DSM_ASC]);
        }
        Command::Dtm { points } => {
            check_inputs(points, "point")?;
            pipeline::run_dtm(&config, points, out)?;
            print_written(out, &[pipeline::DTM_ASC, pipeline::DTM_FILLED_ASC]);
        }
        Command::Ndsm { points } => {
            check_inputs(points, "point")?;
            pipeline::run_ndsm(&config, points, out)?;
            print_written(out, &[pipeline::NDSM_ASC]);
        }
        Command::MergeMasks { masks } => {
            check_inputs(masks, "masks")?;
            let path = out.join(MERGED_MASKS);
            let report = pipeline::run_merge_masks(&config, masks, &path)?;
            println!("wrote {}", path.display());
            println!(
                "{} masks loaded, {} rejected, {} merged away, {} kept",
                report.loaded,
                report.rejected.len(),
                report.suppressed.len(),
                report.kept
            );
        }
        Command::Validate { masks, points } => {
            if masks.is_empty() && points.is_empty() {
                bail!("nothing to validate: give point files and/or --masks");
            }
            let report = pipeline::validate_inputs(points, masks);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.is_ok() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
