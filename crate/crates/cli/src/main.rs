use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use volumetrack::pipeline::{
    self, BaselineOptions, RunConfig, TrainOptions, VerifierChoice, DETECTOR_FILE, RIG_FILE, VERIFIER_FILE,
};
use volumetrack::Error;

#[derive(Parser)]
#[command(name = "volumetrack", version, about = "Multi-person tracking and hand localization on occupancy volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene script into a synthetic dataset.
    Generate {
        script: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Overrides the script's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the person detector and verifier.
    Train {
        dataset: PathBuf,
        /// Model output directory.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frames sampled for training.
        #[arg(long, default_value_t = 60)]
        max_frames: usize,
    },
    /// Track people and localize their hands.
    Track {
        dataset: PathBuf,
        /// Results file (JSON lines).
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding detector.vtld and, optionally, verifier.vtlv;
        /// `--set verifier=oracle` keeps the ground-truth verifier.
        #[arg(long)]
        models: Option<PathBuf>,
        /// key=value override; repeatable, wins over the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Multi-view triangulation baseline from synthetic keypoints.
    Baseline {
        dataset: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Camera rig JSON; defaults to the dataset's rig.
        #[arg(long)]
        rig: Option<PathBuf>,
        /// Keypoint noise sigma, pixels.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Probability of one displaced view per hand.
        #[arg(long, default_value_t = 0.0)]
        outlier_rate: f64,
        #[arg(long, default_value_t = volumetrack::triangulation::DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score results against ground truth.
    Eval {
        results: PathBuf,
        gt: PathBuf,
        /// Output directory for metrics.csv, histogram.csv, tracking.json.
        #[arg(short, long)]
        out: PathBuf,
        /// Method label in metrics.csv.
        #[arg(long, default_value = "pipeline")]
        method: String,
        /// Also write histogram.svg.
        #[arg(long)]
        svg: bool,
        /// Result-to-ground-truth association gate, voxels.
        #[arg(long, default_value_t = 10.0)]
        gate: f64,
    },
}

fn run_config(config: Option<&Path>, models: Option<&Path>, overrides: &[String]) -> volumetrack::Result<RunConfig> {
    let mut c = match config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    // flags win over the file; `--set` is applied last
    if let Some(dir) = models {
        c.detector = Some(dir.join(DETECTOR_FILE));
        let v = dir.join(VERIFIER_FILE);
        if v.is_file() {
            c.verifier = VerifierChoice::Model(v);
        }
    }
    for kv in overrides {
        c.apply_override(kv)?;
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> volumetrack::Result<()> {
    pipeline::init_threads()?;
    match cli.command {
        Command::Generate { script, out, seed } => {
            let meta = pipeline::cmd_generate(&script, &out, seed)?;
            eprintln!("wrote {} frames to {}", meta.frames, out.display());
        }
        Command::Train {
            dataset,
            out,
            seed,
            max_frames,
        } => {
            let r = pipeline::cmd_train(
                &dataset,
                &out,
                &TrainOptions {
                    seed,
                    max_frames,
                    ..TrainOptions::default()
                },
            )?;
            eprintln!(
                "trained on {} samples from {} frames; delta {:.4}; held-out recall {}",
                r.samples,
                r.frames_used,
                r.delta,
                r.held_out_recall.map_or("n/a".into(), |x| format!("{x:.4}"))
            );
        }
        Command::Track {
            dataset,
            out,
            config,
            models,
            overrides,
        } => {
            let c = run_config(config.as_deref(), models.as_deref(), &overrides)?;
            let s = pipeline::cmd_track(&dataset, &c, &out)?;
            eprintln!(
                "{} frames, {} results, {:.1} frames/s, hands {:.2} ms median",
                s.frames, s.results, s.fps, s.hands_median_ms
            );
        }
        Command::Baseline {
            dataset,
            out,
            rig,
            noise,
            outlier_rate,
            tau,
            seed,
        } => {
            let rig = rig.unwrap_or_else(|| dataset.join(RIG_FILE));
            let opts = BaselineOptions {
                noise,
                outlier_rate,
                tau,
                seed,
                ..BaselineOptions::default()
            };
            if !(noise >= 0.0 && (0.0..=1.0).contains(&outlier_rate) && tau > 0.0) {
                return Err(Error::Config("noise ≥ 0, outlier-rate in [0, 1] and tau > 0 required".into()));
            }
            let n = pipeline::cmd_baseline_triangulate(&dataset, &rig, &opts, &out)?;
            eprintln!("{n} person results");
        }
        Command::Eval {
            results,
            gt,
            out,
            method,
            svg,
            gate,
        } => {
            let r = pipeline::cmd_eval(&results, &gt, &out, &method, svg, gate)?;
            for (hand, s) in &r.hands {
                eprintln!("{hand:>5}: mean {:.3} std {:.3} gross {:.4} n {}", s.mean, s.std, s.gross_rate, s.n);
            }
            eprintln!(
                "tracking: accuracy {:.4} recall {:.4} id switches {}",
                r.tracking.accuracy, r.tracking.recall, r.tracking.id_switches
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
