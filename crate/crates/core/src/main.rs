use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use s2tnet::config::{RunManifest, TrainConfig};
use s2tnet::data::{
    build_scenes, normalize_scene, parse_trajectory_file, synth_dataset, write_records,
    AgentState, DatasetSplit, FrameRecords, Scene, SynthKind, WindowParams,
};
use s2tnet::evaluation::{evaluate, scene_metrics_csv, CvBaseline, Forecaster};
use s2tnet::model::{checkpoint, S2TNet};
use s2tnet::plot::scene_svg;
use s2tnet::training::train;
use s2tnet::{Error, Result};

#[derive(Parser)]
#[command(name = "s2tnet", about = "Spatio-temporal Transformer trajectory forecasting", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, e.g. --set d_model=16 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Ablation flags as comma-separated short columns,
    /// e.g. --ablation ss=off,tcn=on,te=sc,td=sc,hf=a,lm=w
    #[arg(long)]
    ablation: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        if let Some(ablation) = &self.ablation {
            for item in ablation.split(',').filter(|s| !s.is_empty()) {
                let (k, v) = item
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("ablation item {item:?} needs key=value")))?;
                cfg.apply(k.trim(), v.trim())?;
            }
        }
        for item in &self.sets {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set {item:?} needs key=value")))?;
            cfg.apply(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, loss curve, and manifest.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training trajectory file (overrides train_path from the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Validation trajectory file (overrides val_path).
        #[arg(long)]
        val: Option<PathBuf>,
        /// Run directory for artifacts.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (or the constant-velocity baseline) on a
    /// labeled dataset.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to load (omit with --baseline cv).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Baseline instead of a checkpoint: "cv".
        #[arg(long)]
        baseline: Option<String>,
        /// Trajectory file with ground-truth futures.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict futures for the last window of a scene file.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Baseline instead of a checkpoint: "cv".
        #[arg(long)]
        baseline: Option<String>,
        /// Scene trajectory file.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also emit an SVG plot per scene.
        #[arg(long)]
        plot: bool,
        /// Deployment mode: the file carries observations only.
        #[arg(long)]
        no_future: bool,
    },
    /// Generate synthetic scenes in the ingestion text format.
    Synth {
        /// constant_velocity | turn | crossing | stationary
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite and print per-layer errors.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
                Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load_split(path: &Path, params: &WindowParams) -> Result<DatasetSplit> {
    let parsed = parse_trajectory_file(path)?;
    let (split, _) = build_scenes(&parsed.frames, params)?;
    Ok(DatasetSplit { scenes: split.scenes.iter().map(|s| normalize_scene(s).0).collect() })
}

fn window_params(cfg: &TrainConfig, stride: usize) -> WindowParams {
    WindowParams {
        t_obs: cfg.model.t_obs,
        t_fut: cfg.model.t_obs + cfg.model.t_pred,
        stride,
        frame_interval: 0.5,
    }
}

/// Loads a model from a checkpoint, recovering the configuration from the
/// run manifest next to it when no explicit config was given.
fn load_model(cfg_args: &ConfigArgs, checkpoint_path: &Path) -> Result<S2TNet> {
    let cfg = if cfg_args.config.is_none() && cfg_args.sets.is_empty() && cfg_args.ablation.is_none()
    {
        let manifest = checkpoint_path
            .parent()
            .and_then(Path::parent)
            .map(|run| run.join("manifest.txt"))
            .filter(|p| p.exists());
        match manifest {
            Some(path) => TrainConfig::from_manifest(&path)?,
            None => cfg_args.resolve()?,
        }
    } else {
        cfg_args.resolve()?
    };
    let mut model = S2TNet::init(cfg.model.clone(), cfg.seed)?;
    checkpoint::load_params(checkpoint_path, &mut model.params)?;
    Ok(model)
}

fn pick_forecaster(
    cfg_args: &ConfigArgs,
    checkpoint: &Option<PathBuf>,
    baseline: &Option<String>,
    t_pred: usize,
) -> Result<Box<dyn Forecaster>> {
    match (baseline.as_deref(), checkpoint) {
        (Some("cv"), _) => Ok(Box::new(CvBaseline { t_pred })),
        (Some(other), _) => Err(Error::Config(format!(
            "unknown baseline {other:?} (available: cv)"
        ))),
        (None, Some(path)) => Ok(Box::new(load_model(cfg_args, path)?)),
        (None, None) => Err(Error::Config(
            "either --checkpoint or --baseline cv is required".into(),
        )),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { config, data, val, out } => {
            let mut cfg = config.resolve()?;
            if let Some(d) = data {
                cfg.train_path = Some(d);
            }
            if let Some(v) = val {
                cfg.val_path = Some(v);
            }
            let Some(train_path) = cfg.train_path.clone() else {
                return Err(Error::Config(
                    "no training data: pass --data or set train_path in the config".into(),
                ));
            };
            if !train_path.exists() {
                return Err(Error::Config(format!(
                    "training data not found: {}",
                    train_path.display()
                )));
            }
            let train_split = load_split(&train_path, &window_params(&cfg, cfg.stride_train))?;
            let val_split = match &cfg.val_path {
                Some(p) => load_split(p, &window_params(&cfg, cfg.stride_eval))?,
                None => load_split(&train_path, &window_params(&cfg, cfg.stride_eval))?,
            };
            let summary = train(&train_split, &val_split, &cfg, &out)?;
            println!(
                "trained {} steps, final loss {:.6}, checkpoint {}",
                summary.steps,
                summary.final_loss,
                summary.final_checkpoint.display()
            );
            if let Some(report) = summary.last_validation {
                print!("{}", report.table());
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Eval { config, checkpoint, baseline, data, out } => {
            let cfg = config.resolve()?;
            let forecaster = pick_forecaster(&config, &checkpoint, &baseline, cfg.model.t_pred)?;
            let split = load_split(&data, &window_params(&cfg, cfg.stride_eval))?;
            if split.scenes.is_empty() {
                return Err(Error::Data(format!(
                    "{}: no complete scenes to evaluate",
                    data.display()
                )));
            }
            let (report, rows) = evaluate(forecaster.as_ref(), &split)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("report.txt"), report.table())?;
            std::fs::write(out.join("report.csv"), report.csv())?;
            std::fs::write(out.join("per_scene.csv"), scene_metrics_csv(&rows))?;
            RunManifest { config: &cfg, checkpoint: checkpoint.as_deref() }.write(&out)?;
            print!("{}", report.table());
            Ok(ExitCode::SUCCESS)
        }

        Command::Predict { config, checkpoint, baseline, scene, out, plot, no_future } => {
            let cfg = config.resolve()?;
            let forecaster = pick_forecaster(&config, &checkpoint, &baseline, cfg.model.t_pred)?;
            let parsed = parse_trajectory_file(&scene)?;
            let normalized = last_window_scene(&parsed.frames, &cfg, no_future)?;
            let forecast = forecaster.forecast(&normalized)?;

            std::fs::create_dir_all(&out)?;
            let records = prediction_records(&normalized, &forecast);
            std::fs::write(out.join("prediction.txt"), write_records(&records))?;
            if plot {
                let svg = scene_svg(&normalized, Some(&forecast), !no_future);
                std::fs::write(out.join("scene.svg"), svg)?;
            }
            RunManifest { config: &cfg, checkpoint: checkpoint.as_deref() }.write(&out)?;
            println!(
                "predicted {} agents x {} steps -> {}",
                normalized.n,
                forecast.positions.shape()[0],
                out.join("prediction.txt").display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Synth { kind, count, seed, out } => {
            let Some(kind) = SynthKind::parse(&kind) else {
                let names: Vec<&str> = SynthKind::ALL.iter().map(|k| k.name()).collect();
                return Err(Error::Config(format!(
                    "unknown scene kind {kind:?} (available: {})",
                    names.join(", ")
                )));
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames = synth_dataset(kind, count, &mut rng);
            if let Some(dir) = out.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(&out, write_records(&frames))?;
            println!("wrote {count} {} scenes to {}", kind.name(), out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Gradcheck => {
            let suite = s2tnet::gradcheck::full_suite()?;
            let mut all_ok = true;
            for entry in &suite {
                let status = if entry.passed() { "pass" } else { "FAIL" };
                println!(
                    "{status}  {:<24} max rel err {:>12.3e}  (tolerance {:.0e})",
                    entry.name, entry.max_rel_err, entry.tolerance
                );
                all_ok &= entry.passed();
            }
            if all_ok {
                println!("gradcheck: all {} checks passed", suite.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("gradcheck: failures detected");
                Ok(ExitCode::from(1))
            }
        }
    }
}

/// Builds the scene to predict from the trailing frames of a file. With
/// labels, the last full observation+future window is used; in no-future
/// mode the final `t_obs` frames become the observation and the scene
/// carries no ground truth.
fn last_window_scene(frames: &[FrameRecords], cfg: &TrainConfig, no_future: bool) -> Result<Scene> {
    let t_obs = cfg.model.t_obs;
    if no_future {
        if frames.len() < t_obs {
            return Err(Error::Data(format!(
                "need at least {t_obs} observed frames, got {}",
                frames.len()
            )));
        }
        let tail = &frames[frames.len() - t_obs..];
        let params = WindowParams {
            t_obs,
            t_fut: t_obs + cfg.model.t_pred,
            stride: 1,
            frame_interval: 0.5,
        };
        // pad with empty future frames, then drop the future half again
        let mut padded = tail.to_vec();
        for k in 0..cfg.model.t_pred {
            padded.push(FrameRecords {
                frame_id: tail.last().unwrap().frame_id + 1 + k as i64,
                agents: Vec::<AgentState>::new(),
            });
        }
        let (split, _) = build_scenes(&padded, &params)?;
        let mut scene = split
            .scenes
            .into_iter()
            .next()
            .ok_or_else(|| Error::Data("no agents present at the final observed frame".into()))?;
        scene = normalize_scene(&scene).0;
        Ok(scene)
    } else {
        let t_total = t_obs + cfg.model.t_pred;
        if frames.len() < t_total {
            return Err(Error::Data(format!(
                "need {t_total} frames (observation + future), got {}; \
                 pass --no-future for observation-only input",
                frames.len()
            )));
        }
        let tail = &frames[frames.len() - t_total..];
        let params = WindowParams {
            t_obs,
            t_fut: t_total,
            stride: 1,
            frame_interval: 0.5,
        };
        let (split, _) = build_scenes(tail, &params)?;
        let scene = split
            .scenes
            .into_iter()
            .next()
            .ok_or_else(|| Error::Data("trailing frames do not form a valid window".into()))?;
        Ok(normalize_scene(&scene).0)
    }
}

/// Forecast rows in the ingestion text format, reusing each agent's last
/// observed shape and heading.
fn prediction_records(scene: &Scene, forecast: &s2tnet::model::Forecast) -> Vec<FrameRecords> {
    let t_pred = forecast.positions.shape()[0];
    let mut frames = Vec::with_capacity(t_pred);
    for s in 0..t_pred {
        let mut agents = Vec::with_capacity(scene.n);
        for (i, meta) in scene.agents.iter().enumerate() {
            agents.push(AgentState {
                agent_id: meta.agent_id,
                x: forecast.positions.at(&[s, i, 0]),
                y: forecast.positions.at(&[s, i, 1]),
                length: meta.length,
                width: meta.width,
                heading: meta.last_heading,
                category: meta.category,
            });
        }
        frames.push(FrameRecords {
            frame_id: scene.first_frame + (scene.t_obs + s) as i64,
            agents,
        });
    }
    frames
}
