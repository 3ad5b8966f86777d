use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result, bail};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use labelswitch::detector::{self, DetectorAdapter, SceneParams, ToyConfig, ToyDetector, TrainHyperparams};
use labelswitch::evaluation::{render_annotated, run_evaluation};
use labelswitch::io::dataset::frame_name;
use labelswitch::io::{self, FrameDataset, IngestOptions, Split};
use labelswitch::trainer::{self, AttackConfig, TrainState};

#[derive(Parser)]
#[command(name = "labelswitch", version, about = "Train and evaluate universal label-switch patches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::All => Split::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled synthetic traffic scenes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        seed: u64,
        /// TOML file with scene generator settings.
        #[arg(long)]
        scene_params: Option<PathBuf>,
        /// Frames in the training split; defaults to three quarters.
        #[arg(long)]
        train_count: Option<usize>,
    },
    /// Train the built-in grid detector on a labelled dataset.
    TrainDetector {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// TOML file with detector training settings.
        #[arg(long)]
        hparams: Option<PathBuf>,
    },
    /// Optimize a patch against one or more detectors.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Comma-separated detector checkpoints; falls back to `models` in
        /// the config.
        #[arg(long, value_delimiter = ',')]
        model: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Where checkpoints go; defaults to the patch path with a `.state`
        /// extension.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        /// Override any config key, e.g. `--set lr=0.03`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write a uniformly random patch.
    Baseline {
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure a patch on a frame set and write a JSON report.
    Eval {
        #[arg(long)]
        patch: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write attacked frames with detections drawn on them.
    Render {
        #[arg(long)]
        patch: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Extract frames from a video into a dataset directory.
    Ingest {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: usize,
        /// Resize every frame, e.g. `104x104`.
        #[arg(long, value_parser = parse_size)]
        resize: Option<(u32, u32)>,
        #[arg(long, default_value_t = 75)]
        train_percent: u32,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::TrainDetector { .. } => "train-detector",
            Command::Attack { .. } => "attack",
            Command::Baseline { .. } => "baseline",
            Command::Eval { .. } => "eval",
            Command::Render { .. } => "render",
            Command::Ingest { .. } => "ingest",
        }
    }
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w = w.parse().map_err(|e| format!("width: {e}"))?;
    let h = h.parse().map_err(|e| format!("height: {e}"))?;
    Ok((w, h))
}

fn load_attack_config(path: Option<&Path>, overrides: &[String]) -> Result<AttackConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
        None => String::new(),
    };
    let config = io::parse_config_with_overrides(&text, overrides);
    match path {
        Some(p) => config.with_context(|| format!("config {}", p.display())),
        None => Ok(config?),
    }
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<ToyDetector>> {
    paths
        .iter()
        .map(|p| detector::checkpoint::load(p).with_context(|| format!("loading detector {}", p.display())))
        .collect()
}

/// Writes the command's JSON summary to stdout. A reader that has gone away
/// (`| head`) is not an error.
fn print(value: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&value).expect("json values serialize");
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
        _ => Ok(()),
    }
}

fn synth(out: &Path, frames: usize, seed: u64, params: Option<&Path>, train_count: Option<usize>) -> Result<()> {
    let params = match params {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SceneParams>(&text)
                .map_err(|e| labelswitch::Error::Config(e.to_string()))
                .with_context(|| format!("scene params {}", p.display()))?
        }
        None => SceneParams::default(),
    };
    let scenes = detector::generate_scenes(frames, seed, &params)?;
    let train = train_count.unwrap_or(frames - frames / 4);
    let ds = FrameDataset::from_scenes(out, &scenes, train)?;
    let objects: usize = scenes.iter().map(|s| s.objects.len()).sum();
    print(json!({
        "frames": ds.len(),
        "train_count": ds.manifest.train_count,
        "objects": objects,
        "out": out,
    }))
}

fn train_detector(data: &Path, out: &Path, seed: u64, hparams: Option<&Path>) -> Result<()> {
    let mut hp = match hparams {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<TrainHyperparams>(&text)
                .map_err(|e| labelswitch::Error::Config(e.to_string()))
                .with_context(|| format!("hyperparameters {}", p.display()))?
        }
        None => TrainHyperparams::default(),
    };
    hp.seed = seed;
    let ds = FrameDataset::open(data)?;
    let train = ds.load_scenes(ds.indices(Split::Train))?;
    let holdout = ds.load_scenes(ds.indices(Split::Test))?;
    if holdout.is_empty() {
        bail!("dataset {} has no test frames to measure the detector on", data.display());
    }
    let config = ToyConfig {
        input_size: ds.manifest.width,
        ..ToyConfig::default()
    };
    if ds.manifest.width != ds.manifest.height {
        bail!("the built-in detector needs square frames, got {}x{}", ds.manifest.width, ds.manifest.height);
    }
    let (det, report) = detector::train_toy_detector(config, &train, &holdout, &hp)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    detector::checkpoint::save(&det, out)?;
    print(json!({ "model": out, "report": report }))
}

#[allow(clippy::too_many_arguments)]
fn attack(
    config: &Path,
    frames: &Path,
    models: &[PathBuf],
    out: &Path,
    resume: Option<&Path>,
    state_path: Option<&Path>,
    split: Split,
    overrides: Vec<String>,
) -> Result<()> {
    let config = load_attack_config(Some(config), &overrides)?;
    let model_paths: Vec<PathBuf> = if models.is_empty() {
        config.models.iter().map(PathBuf::from).collect()
    } else {
        models.to_vec()
    };
    if model_paths.is_empty() {
        bail!("no detector given: pass --model or set `models` in the config");
    }
    let dets = load_models(&model_paths)?;
    let adapters: Vec<&dyn DetectorAdapter> = dets.iter().map(|d| d as &dyn DetectorAdapter).collect();
    let ds = FrameDataset::open(frames)?;
    let images = ds.load_frames(ds.indices(split))?;

    let state = match resume {
        Some(p) => {
            let s = io::load_state(p).with_context(|| format!("resuming from {}", p.display()))?;
            if s.patch.size() != config.patch_size {
                bail!(
                    "state {} holds a {}-pixel patch, config asks for {}",
                    p.display(),
                    s.patch.size(),
                    config.patch_size
                );
            }
            s
        }
        None => TrainState::new(&config)?,
    };
    let state_path = state_path.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("state"));
    if let Some(dir) = state_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let every = config.checkpoint_every;
    let final_state = trainer::continue_training(state, &config, &images, &adapters, |s, r| {
        if s.iteration % 50 == 0 || s.iteration == config.iterations {
            eprintln!(
                "step {:>6}  loss {:.5}  tv {:.4}  patched {}  relevant {}",
                s.iteration, r.loss, r.tv, r.patched_objects, r.relevant_candidates
            );
        }
        if every > 0 && s.iteration % every == 0 {
            io::save_state(s, &state_path)?;
            io::save_patch(&s.patch, out)?;
        }
        Ok(())
    })?;
    io::save_state(&final_state, &state_path)?;
    let (png, sidecar) = io::save_patch(&final_state.patch, out)?;
    print(json!({
        "patch": png,
        "sidecar": sidecar,
        "state": state_path,
        "iterations": final_state.iteration,
        "stats": {
            "steps": final_state.stats.steps,
            "last": final_state.stats.last,
            "mean": final_state.stats.mean,
            "min": final_state.stats.min,
        },
    }))
}

fn eval(patch: &Path, frames: &Path, model: &Path, report: &Path, config: AttackConfig, split: Split) -> Result<()> {
    let patch = io::load_patch(patch)?;
    let det = load_models(std::slice::from_ref(&model.to_path_buf()))?.remove(0);
    let ds = FrameDataset::open(frames)?;
    let images = ds.load_frames(ds.indices(split))?;
    let r = run_evaluation(&patch, &images, &det, &config)?;
    io::save_report(&r, report)?;
    print(json!({
        "report": report,
        "total_patched_objects": r.total_patched_objects,
        "c_t_percent": r.c_t_percent,
        "double_detection_percent": r.double_detection_percent,
    }))
}

fn render(patch: &Path, frames: &Path, model: &Path, out: &Path, config: AttackConfig, split: Split) -> Result<()> {
    let patch = io::load_patch(patch)?;
    let det = load_models(std::slice::from_ref(&model.to_path_buf()))?.remove(0);
    let ds = FrameDataset::open(frames)?;
    let range = ds.indices(split);
    let names: Vec<String> = range.clone().map(frame_name).collect();
    let images = ds.load_frames(range)?;
    let written = render_annotated(&images, &names, &patch, &det, &config, out)?;
    print(json!({ "out": out, "frames": written.len() }))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            frames,
            seed,
            scene_params,
            train_count,
        } => synth(&out, frames, seed, scene_params.as_deref(), train_count),
        Command::TrainDetector {
            data,
            out,
            seed,
            hparams,
        } => train_detector(&data, &out, seed, hparams.as_deref()),
        Command::Attack {
            config,
            frames,
            model,
            out,
            resume,
            state,
            split,
            seed,
            iterations,
            mut set,
        } => {
            set.extend(seed.map(|s| format!("seed={s}")));
            set.extend(iterations.map(|n| format!("iterations={n}")));
            attack(&config, &frames, &model, &out, resume.as_deref(), state.as_deref(), split.into(), set)
        }
        Command::Baseline { size, seed, out } => {
            let patch = trainer::make_random_patch(size, seed)?;
            let (png, sidecar) = io::save_patch(&patch, &out)?;
            print(json!({ "patch": png, "sidecar": sidecar }))
        }
        Command::Eval {
            patch,
            frames,
            model,
            report,
            config,
            split,
            set,
        } => {
            let config = load_attack_config(config.as_deref(), &set)?;
            eval(&patch, &frames, &model, &report, config, split.into())
        }
        Command::Render {
            patch,
            frames,
            model,
            out,
            config,
            split,
            set,
        } => {
            let config = load_attack_config(config.as_deref(), &set)?;
            render(&patch, &frames, &model, &out, config, split.into())
        }
        Command::Ingest {
            video,
            out,
            stride,
            resize,
            train_percent,
        } => {
            let ds = io::ingest_video(
                &video,
                &out,
                IngestOptions {
                    stride,
                    resize,
                    train_percent,
                },
            )?;
            print(json!({
                "out": out,
                "frames": ds.len(),
                "train_count": ds.manifest.train_count,
                "width": ds.manifest.width,
                "height": ds.manifest.height,
            }))
        }
    }
}

/// One JSON object on stderr describing the failure.
fn error_json(command: &str, err: &anyhow::Error) -> serde_json::Value {
    let lib = err.chain().find_map(|e| e.downcast_ref::<labelswitch::Error>());
    json!({
        "error": {
            "command": command,
            "kind": lib.map_or("other", |e| e.kind()),
            "message": format!("{err:#}"),
            "path": lib.and_then(|e| e.path()),
            "frame": lib.and_then(|e| e.frame()),
            "chain": err.chain().map(|e| e.to_string()).collect::<Vec<_>>(),
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(name, &err));
            ExitCode::FAILURE
        }
    }
}
