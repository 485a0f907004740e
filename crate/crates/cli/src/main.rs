//! `crownfuse` command-line front end.

mod config;
mod failure;
mod formats;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Overrides;
use failure::Failure;
use run::{Context, EvalMode};

#[derive(Parser)]
#[command(
    name = "crownfuse",
    version,
    about = "Tree crown detection and detector-ensemble fusion"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Minimum fused score for accepted boxes.
    #[arg(long, global = true)]
    tau_a: Option<f64>,
    /// Contour size tolerance of the local check.
    #[arg(long, global = true)]
    tau_c: Option<f64>,
    /// Neighbor radius in pixels.
    #[arg(long, global = true)]
    tau_d: Option<f64>,
    #[arg(long, global = true)]
    n_neighbors: Option<usize>,
    /// IoU needed to join a fusion cluster.
    #[arg(long, global = true)]
    iou_cluster: Option<f64>,
    #[arg(long, global = true)]
    th_area: Option<usize>,
    #[arg(long, global = true)]
    th_dist: Option<f64>,
    /// Compute texture features tile by tile.
    #[arg(long, global = true)]
    tiling: bool,
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            out_dir: self.out_dir.clone(),
            tau_a: self.tau_a,
            tau_c: self.tau_c,
            tau_d: self.tau_d,
            n_neighbors: self.n_neighbors,
            iou_cluster: self.iou_cluster,
            th_area: self.th_area,
            th_dist: self.th_dist,
            tiling: self.tiling.then_some(true),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Image -> tree centers, candidate mask, labels and probability map.
    DetectTraditional {
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        image_id: Option<String>,
    },
    /// Detector box files -> one fused box file.
    Fuse {
        #[arg(long, num_args = 1..)]
        detections: Vec<PathBuf>,
    },
    /// Image + fused boxes + traditional result -> integrated centers.
    Integrate {
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        fused: Option<PathBuf>,
        /// Directory holding the detect-traditional output (default: out dir).
        #[arg(long)]
        traditional: Option<PathBuf>,
    },
    /// Results + ground truth -> detection-rate report.
    Evaluate {
        #[arg(long, num_args = 1..)]
        result: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        gt: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "points")]
        mode: EvalMode,
    },
    /// Synthetic scene, ground truth and simulated detector output.
    Synth,
    /// detect-traditional, fuse, integrate and (with --gt) evaluate.
    All {
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long, num_args = 1..)]
        detections: Vec<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = config::load(cli.global.config.as_deref(), std::env::vars(), &cli.global.overrides())?;
    let io = cfg.io.clone();
    let ctx = Context::new(cfg)?;
    let pick = |flag: Option<PathBuf>, fallback: &Option<PathBuf>| flag.or_else(|| fallback.clone());
    let pick_many = |flag: Vec<PathBuf>, fallback: &Vec<PathBuf>| if flag.is_empty() { fallback.clone() } else { flag };
    let image_id = |flag: Option<String>| flag.or_else(|| io.image_id.clone());

    match cli.command {
        Command::DetectTraditional { image, image_id: id } => {
            let image = pick(image, &io.image);
            let d = run::detect_traditional(&ctx, run::require(image.as_ref(), "image")?, image_id(id).as_deref())?;
            println!("{}: {} tree centers", d.image_id, d.out.seg.centers.len());
        }
        Command::Fuse { detections } => {
            let f = run::fuse_files(&ctx, &pick_many(detections, &io.detections))?;
            println!("{}: {} fused boxes", f.image_id, f.boxes.len());
        }
        Command::Integrate {
            image,
            fused,
            traditional,
        } => {
            let image = pick(image, &io.image);
            let fused = fused.unwrap_or_else(|| ctx.out_dir.join(run::FUSED));
            let dir = traditional.unwrap_or_else(|| ctx.out_dir.clone());
            let r = run::integrate_files(&ctx, run::require(image.as_ref(), "image")?, &fused, &dir)?;
            println!(
                "{}: {} integrated centers, {} segments dropped",
                r.image_id,
                r.centers.len(),
                r.dropped_segments
            );
        }
        Command::Evaluate { result, gt, mode } => {
            let result = if result.is_empty() {
                vec![ctx.out_dir.join(run::INTEGRATED)]
            } else {
                result
            };
            let gt = pick_many(gt, &io.gt.iter().cloned().collect());
            let report = run::evaluate_files(&ctx, &result, &gt, mode)?;
            print!("{report}");
        }
        Command::Synth => {
            let s = run::synth(&ctx)?;
            println!("{} crowns -> {}", s.crowns, s.image.display());
        }
        Command::All {
            image,
            image_id: id,
            detections,
            gt,
        } => {
            let image = pick(image, &io.image);
            let detections = pick_many(detections, &io.detections);
            let gt = pick(gt, &io.gt);
            let id = image_id(id);
            let out = run::all(
                &ctx,
                &run::AllInputs {
                    image: image.as_ref(),
                    image_id: id.as_deref(),
                    detections: &detections,
                    gt: gt.as_ref(),
                },
            )?;
            println!(
                "{}: {} traditional centers, {} integrated",
                out.integrated.image_id,
                out.centers,
                out.integrated.centers.len()
            );
            if let Some(report) = out.report {
                print!("{report}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.record());
            ExitCode::FAILURE
        }
    }
}
