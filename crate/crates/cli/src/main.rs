use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use int3d_core::datapipe::{
    build_samples, derive_seed, gen_synthetic, load_model, read_heatmap, read_sample, scene_split, write_dataset_split,
    write_heatmap, write_sample, Clutter, SampleConfig, SynthConfig,
};
use int3d_core::harness::{evaluate, timing_probe, train, EvalOptions, Method, SrccTarget, TrainConfig};
use int3d_core::int3dnet::forward;
use int3d_core::pointcloud::{project_intention_to_image, CameraModel};
use int3d_core::{Error, Result};

/// Share of generated items placed in the scene-exclusive test split.
const TEST_FRACTION: f64 = 0.25;

#[derive(Parser)]
#[command(name = "int3d", version, about = "3D intention heatmaps from sparse head and hand motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with train/test splits.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        /// Reaching sessions per scene; each yields one sample per horizon.
        #[arg(long, default_value_t = 10)]
        samples_per_scene: usize,
        #[arg(long, default_value = "cluttered")]
        clutter: Clutter,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Points per sample.
        #[arg(long, default_value_t = 2048)]
        points: usize,
        #[arg(long, default_value = "500,1000,1500", value_delimiter = ',')]
        horizons: Vec<u32>,
        /// Motion frames per window.
        #[arg(long, default_value_t = 15)]
        frames: usize,
        /// Window frame rate in Hz.
        #[arg(long, default_value_t = 20.0)]
        rate: f64,
    },
    /// Train a model on `DATA/train.txt`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a method on `DATA/test.txt`.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "500,1000,1500", value_delimiter = ',')]
        horizons: Vec<u32>,
        /// TSV report; a JSON copy is written alongside.
        #[arg(long)]
        report: PathBuf,
        /// Correlate attention with the binary mask instead of the heatmap.
        #[arg(long)]
        srcc_mask: bool,
    },
    /// Write per-point logits for one sample.
    Predict {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bounding box of the thresholded heatmap in a camera image.
    Project {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        heatmap: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Forward-pass latency.
    Timing {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
    },
}

fn gen_synth(out: &Path, synth: &SynthConfig, samples: &SampleConfig, seed: u64) -> Result<()> {
    let sessions = gen_synthetic(synth, seed)?;
    let mut dirs = Vec::new();
    let mut scenes = Vec::new();
    for (i, s) in sessions.iter().enumerate() {
        for sample in build_samples(s, samples, derive_seed(seed, i as u64, 1))? {
            let rel = format!("samples/{}", sample.sample_id);
            write_sample(&sample, &out.join(&rel))?;
            dirs.push(rel);
            scenes.push(sample.scene_id.clone());
        }
    }
    let (train_idx, test_idx) = scene_split(&scenes, TEST_FRACTION, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| dirs[i].clone()).collect::<Vec<_>>();
    write_dataset_split(out, "train", &pick(&train_idx))?;
    write_dataset_split(out, "test", &pick(&test_idx))?;
    println!(
        "wrote {} samples from {} sessions: {} train, {} test",
        dirs.len(),
        sessions.len(),
        train_idx.len(),
        test_idx.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth { out, scenes, samples_per_scene, clutter, seed, points, horizons, frames, rate } => {
            let synth = SynthConfig { num_scenes: scenes, samples_per_scene, clutter, ..SynthConfig::default() };
            let samples = SampleConfig {
                num_points: points,
                num_frames: frames,
                frame_rate: rate,
                horizons_ms: horizons,
                ..SampleConfig::default()
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            gen_synth(&out, &synth, &samples, seed)
        }
        Command::Train { data, config, out } => {
            let cfg = TrainConfig::load(&config)?;
            let log = train(&data, &cfg, &out)?;
            if let Some(last) = log.epochs.last() {
                info!("final epoch {} loss {:.4}", last.epoch, last.loss.total);
            }
            println!("trained {} epochs, best epoch {}; wrote {}", log.epochs.len(), log.best_epoch, out.display());
            Ok(())
        }
        Command::Eval { data, method, ckpt, horizons, report, srcc_mask } => {
            let options = EvalOptions {
                srcc_target: if srcc_mask { SrccTarget::Mask } else { SrccTarget::Heatmap },
                ..EvalOptions::default()
            };
            let r = evaluate(&data, method, ckpt.as_deref(), &horizons, &options)?;
            let tsv = r.to_tsv();
            std::fs::write(&report, &tsv).map_err(|e| Error::Io { path: report.clone(), source: e })?;
            let json = report.with_extension("json");
            std::fs::write(&json, r.to_json()).map_err(|e| Error::Io { path: json.clone(), source: e })?;
            print!("{tsv}");
            Ok(())
        }
        Command::Predict { sample, ckpt, out } => {
            let (config, params) = load_model(&ckpt)?;
            let s = read_sample(&sample)?;
            let (heat, _) = forward(&s.cloud, &s.window, &params, &config)?;
            write_heatmap(&out, &heat.logits)?;
            println!("wrote {} logits to {}", heat.len(), out.display());
            Ok(())
        }
        Command::Project { sample, heatmap, camera, threshold } => {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Error::Argument(format!("threshold {threshold} outside [0, 1]")));
            }
            let s = read_sample(&sample)?;
            let logits = read_heatmap(&heatmap, s.cloud.len())?;
            let cam = CameraModel::load(&camera)?;
            match project_intention_to_image(&s.cloud, &logits, &cam, threshold)? {
                Some(b) => println!("{:.2} {:.2} {:.2} {:.2}", b.min_u, b.min_v, b.max_u, b.max_v),
                None => println!("none"),
            }
            Ok(())
        }
        Command::Timing { ckpt, sample, reps, warmup } => {
            let (config, params) = load_model(&ckpt)?;
            let s = read_sample(&sample)?;
            let t = timing_probe(&config, &params, &s, reps, warmup)?;
            println!(
                "{} runs after {} warm-up: mean {:.2} ms, std {:.2} ms, min {:.2} ms, max {:.2} ms",
                t.reps, t.warmup, t.mean_ms, t.std_ms, t.min_ms, t.max_ms
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
