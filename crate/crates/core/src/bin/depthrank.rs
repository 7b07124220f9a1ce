use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use depthrank::harness::{self, AblationAxis, PipelineConfig};
use depthrank::{io, Result};

#[derive(Parser)]
#[command(name = "depthrank", version, about = "Depth-ranking 3D pose lifting on synthetic skeletons")]
struct Cli {
    /// Pipeline config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic motion and render the train/val/test split.
    Synth,
    /// Add virtual-camera samples for world poses seen by a rig.
    Augment {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        /// Per-pair oracle accuracies for ranking flips.
        #[arg(long)]
        accuracy: Option<PathBuf>,
    },
    /// Train a model from dataset files or the configured synthetic split.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Evaluate a saved model on a dataset file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Geometric reconstruction from 2D joints, rankings and bone lengths.
    Reconstruct {
        #[arg(long)]
        pose2d: PathBuf,
        #[arg(long)]
        ranking: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        root_depth: f64,
    },
    /// Run the base configuration and the named ablation arms.
    Ablate {
        /// Comma-separated subset of no-rank, no-depthnet, no-augment, gt-rank.
        #[arg(long, default_value = "no-rank,no-depthnet,no-augment,gt-rank")]
        axes: String,
    },
    /// Train and evaluate the configured protocol and write its report.
    Report,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let cfg = match &cli.config {
        Some(path) => io::read_toml(path)?,
        None => PipelineConfig::default(),
    };
    let cfg = match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Synth => {
            let data = harness::synth_to_dir(&cfg, out)?;
            println!("train {} val {} test {}", data.train.len(), data.val.len(), data.test.len());
        }
        Command::Augment { poses, cameras, accuracy } => {
            let samples = harness::augment_files(&cfg, poses, cameras, accuracy.as_deref(), out)?;
            println!("{} augmented samples", samples.len());
        }
        Command::Train { train, val } => {
            let (_, outcome) = harness::train_to_dir(&cfg, train.as_deref(), val.as_deref(), out)?;
            if let Some(best) = outcome.history.get(outcome.best_epoch.saturating_sub(1)) {
                println!("best epoch {} val loss {}", best.epoch, best.val_loss);
            }
        }
        Command::Eval { model, dataset } => {
            let r = harness::eval_to_dir(&cfg, model, dataset, out)?;
            println!("MPJPE {:.2} mm, aligned {:.2} mm", r.mpjpe, r.pa_mpjpe);
        }
        Command::Reconstruct { pose2d, ranking, topology, root_depth } => {
            std::fs::create_dir_all(out)?;
            let recs = harness::reconstruct_files(pose2d, ranking, topology, *root_depth, &out.join("reconstruction.csv"))?;
            let clamped: usize = recs.iter().map(|r| r.clamped_joints().count()).sum();
            println!("{} poses, {clamped} clamped bones", recs.len());
        }
        Command::Ablate { axes } => {
            let axes: Vec<AblationAxis> = harness::parse_axes(axes)?;
            for r in harness::ablate_to_dir(&cfg, &axes, out)? {
                println!("{:<12} MPJPE {:.2} mm, aligned {:.2} mm", r.label, r.mpjpe, r.pa_mpjpe);
            }
        }
        Command::Report => {
            let r = harness::run_protocol(&cfg, "report")?;
            harness::write_report(out, &r)?;
            println!("{} MPJPE {:.2} mm, aligned {:.2} mm", r.protocol, r.mpjpe, r.pa_mpjpe);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
