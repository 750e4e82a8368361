use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use splatlight::checkpoint::{self, Checkpoint, CheckpointError};
use splatlight::config::{Config, ConfigError};
use splatlight::dataset::{self, DatasetError};
use splatlight::imageio::{self, ColorSpace, ImageIoError};
use splatlight::pipeline::{self, PipelineError};
use splatlight::service::{self, AppState, LoadedScene};
use splatlight::trajectory_json::{self, TrajectoryFileError};
use splatlight::view::{self, ViewError};
use splatlight_core::render::{render, render_debug, RenderOptions, UnknownDebugTerm};
use splatlight_core::trajectory::{relight_trajectory_with, TrajectoryOptions};
use tracing::info;

#[derive(Parser)]
#[command(name = "splatlight", version, about = "Relightable Gaussian splatting on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scene.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory for checkpoints, loss log and previews.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Resume from this training checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Schedule (H-K) or composition (A-F) to use instead of the config's.
        #[arg(long)]
        variant: Option<String>,
        /// Rescale schedule thresholds to the configured iteration count.
        #[arg(long)]
        scale_schedule: bool,
    },
    /// Render one view to a PNG.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Render request: a JSON file or an inline JSON object.
        #[arg(long)]
        view: String,
        #[arg(long, default_value = "render.png")]
        out: PathBuf,
        /// Comma-separated single-term maps to write next to the image
        /// (diffuse, specular, sss, shadow, visibility, transmittance or all).
        #[arg(long)]
        debug_terms: Option<String>,
    },
    /// Render a relighting sequence.
    Relight {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trajectory JSON; the default light/camera sweep when absent.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value = "runs/relight")]
        out: PathBuf,
        #[arg(long)]
        debug_terms: Option<String>,
        /// Image side of the default trajectory.
        #[arg(long, default_value_t = 128)]
        size: u32,
        #[arg(long, default_value_t = 6.0)]
        light_radius: f64,
        #[arg(long, default_value_t = 4.0)]
        camera_radius: f64,
        /// Also write the trajectory used to this file.
        #[arg(long)]
        save_trajectory: Option<PathBuf>,
    },
    /// Train several variants and write a metrics table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated compositions (A-F) and/or schedules (H-K).
        #[arg(long, default_value = "A,D")]
        variant: String,
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
        #[arg(long)]
        scale_schedule: bool,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Write the scores as JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve renders over HTTP.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Listen address; overrides `serve.addr`.
        #[arg(long, env = "SPLATLIGHT_ADDR")]
        addr: Option<String>,
    },
    /// Write a synthetic OLAT dataset and its ground-truth checkpoint.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data/synthetic")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    Ok(config)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn render_options(config: &Config) -> Result<RenderOptions> {
    Ok(config.render_options()?)
}

fn parse_terms(list: Option<&str>) -> Result<Vec<splatlight_core::render::DebugTerm>> {
    Ok(list.map(pipeline::parse_debug_terms).transpose()?.unwrap_or_default())
}

fn cmd_train(
    common: Common,
    out: PathBuf,
    resume: Option<PathBuf>,
    variant: Option<String>,
    scale: bool,
) -> Result<()> {
    let mut config = load_config(&common)?;
    if let Some(v) = variant {
        config = v.parse::<pipeline::AblationVariant>()?.apply(&config);
    }
    config.train.scale_schedule |= scale;
    // reject bad schedules before touching any data
    config.train_config()?;
    let data = pipeline::load_dataset(&config)?;
    let resume = resume.as_deref().map(load_checkpoint).transpose()?;
    info!(frames = data.train.len(), out = %out.display(), "training");
    let total = config.train.iterations;
    let run = pipeline::train(&config, &data, &out, resume, |iter, loss| {
        if iter % 100 == 0 || iter + 1 == total {
            info!(iter, loss, "step");
        }
    })?;
    println!(
        "trained {} iterations; final checkpoint {}",
        run.iterations,
        run.final_checkpoint.display()
    );
    Ok(())
}

fn read_view(arg: &str) -> Result<Vec<u8>> {
    if arg.trim_start().starts_with('{') {
        Ok(arg.as_bytes().to_vec())
    } else {
        fs::read(arg).with_context(|| format!("reading view {arg}"))
    }
}

fn cmd_render(common: Common, ck: PathBuf, view_arg: String, out: PathBuf, debug: Option<String>) -> Result<()> {
    let config = load_config(&common)?;
    let terms = parse_terms(debug.as_deref())?;
    let ck = load_checkpoint(&ck)?;
    let view = view::parse_request(&read_view(&view_arg)?)?.validate(u32::MAX)?;
    let opts = RenderOptions {
        mask: view.mask,
        ..render_options(&config)?
    };
    let img = match view.debug {
        Some(t) => render_debug(&ck.scene, &view.camera, view.light, &opts, t),
        None => render(&ck.scene, &view.camera, view.light, &opts).image,
    };
    imageio::write_png(&out, &img, ColorSpace::Srgb)?;
    println!("{}", out.display());
    for t in terms {
        let name = out.file_stem().unwrap_or_default().to_string_lossy();
        let p = out.with_file_name(format!("{name}_{}.png", t.name()));
        let img = render_debug(&ck.scene, &view.camera, view.light, &opts, t);
        imageio::write_png(&p, &img, ColorSpace::Srgb)?;
        println!("{}", p.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_relight(
    common: Common,
    ck: PathBuf,
    trajectory: Option<PathBuf>,
    out: PathBuf,
    debug: Option<String>,
    size: u32,
    light_radius: f64,
    camera_radius: f64,
    save: Option<PathBuf>,
) -> Result<()> {
    let config = load_config(&common)?;
    let ck = load_checkpoint(&ck)?;
    let terms = parse_terms(debug.as_deref())?;
    let traj = match trajectory {
        Some(p) => trajectory_json::load(&p)?,
        None => {
            if size == 0 || !(light_radius > 0.0 && camera_radius > 0.0) {
                bail!(view::ViewError::Malformed("size and radii must be positive".into()));
            }
            let center = ck
                .scene
                .bounds()
                .map(|(lo, hi)| [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])])
                .unwrap_or([0.0; 3]);
            relight_trajectory_with(
                center,
                light_radius,
                camera_radius,
                &TrajectoryOptions {
                    width: size,
                    height: size,
                    ..TrajectoryOptions::default()
                },
            )
        }
    };
    if let Some(p) = save {
        trajectory_json::save(&p, &traj)?;
    }
    let frames = pipeline::relight(&ck.scene, &traj, &render_options(&config)?, &terms);
    let paths = pipeline::write_relit(&out, &frames)?;
    println!("wrote {} frames to {}", paths.len(), out.display());
    Ok(())
}

fn cmd_ablate(common: Common, variants: String, out: PathBuf, scale: bool) -> Result<()> {
    let mut config = load_config(&common)?;
    config.train.scale_schedule |= scale;
    let variants = pipeline::parse_variants(&variants)?;
    if variants.is_empty() {
        bail!(PipelineError::UnknownVariant(String::new()));
    }
    for v in &variants {
        v.apply(&config).train_config()?;
    }
    let data = pipeline::load_dataset(&config)?;
    pipeline::create_dir(&out)?;
    let rows = pipeline::ablate(&config, &data, &variants, &out, |v, iter, loss| {
        if iter % 500 == 0 {
            info!(variant = v.label(), iter, loss, "step");
        }
    })?;
    let csv = pipeline::ablation_csv(&rows);
    let path = out.join("ablation.csv");
    fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    print!("{csv}");
    Ok(())
}

fn cmd_eval(common: Common, ck: PathBuf, split: String, out: Option<PathBuf>) -> Result<()> {
    let config = load_config(&common)?;
    let ck = load_checkpoint(&ck)?;
    let data = pipeline::load_dataset(&config)?;
    let (frames, deltas) = match split.as_str() {
        "train" => {
            let deltas = ck
                .training
                .as_ref()
                .filter(|t| t.refinement.len() == data.train.len())
                .map(|t| (0..t.refinement.len()).map(|i| t.refinement.deltas(i)).collect::<Vec<_>>());
            (&data.train, deltas)
        }
        "test" => (&data.test, None),
        other => bail!(ConfigError::Field {
            field: "--split".into(),
            message: format!("`{other}` is not `train` or `test`"),
        }),
    };
    if frames.is_empty() {
        bail!(PipelineError::EmptySplit(split));
    }
    let s = pipeline::evaluate(&ck.scene, frames, deltas.as_deref(), &render_options(&config)?);
    let json = serde_json::json!({ "split": split, "frames": s.frames, "psnr": s.psnr, "ssim": s.ssim });
    println!("{json}");
    if let Some(p) = out {
        fs::write(&p, json.to_string()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_serve(common: Common, ck: PathBuf, addr: Option<String>) -> Result<()> {
    let mut config = load_config(&common)?;
    if let Some(a) = addr {
        config.serve.addr = a;
    }
    let addr = config.serve_addr()?;
    let opts = render_options(&config)?;
    // fail fast on an unreadable or incompatible checkpoint
    let bytes = fs::read(&ck).with_context(|| format!("reading checkpoint {}", ck.display()))?;
    checkpoint::peek_header(&bytes)?;

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let state = AppState::loading(config.serve.clone(), opts);
        let loader = Arc::clone(&state);
        let load = tokio::task::spawn_blocking(move || -> Result<()> {
            let ck = checkpoint::decode(&bytes)?;
            loader.set_scene(LoadedScene {
                version: ck.version,
                scene: ck.scene,
            });
            Ok(())
        });
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        info!(%addr, "listening");
        let server = axum::serve(listener, service::router(state)).with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        });
        let (served, loaded) = tokio::join!(server, load);
        loaded??;
        served?;
        Ok(())
    })
}

fn cmd_synth(common: Common, out: PathBuf) -> Result<()> {
    let config = load_config(&common)?;
    let data = pipeline::synthetic_dataset(&config.synthetic_spec(), config.data.synthetic.test_frames);
    dataset::save_olat(&out, &config.data.train_split, &data.train, config.data.color)?;
    if !data.test.is_empty() {
        dataset::save_olat(&out, &config.data.test_split, &data.test, config.data.color)?;
    }
    let truth = out.join("truth.ckpt");
    checkpoint::save(&truth, &Checkpoint::scene_only(data.truth.expect("synthetic scene")))?;
    println!(
        "wrote {} train and {} test frames to {}; ground truth {}",
        data.train.len(),
        data.test.len(),
        out.display(),
        truth.display()
    );
    Ok(())
}

/// Machine-readable error class and process exit code.
fn category(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<UnknownDebugTerm>() {
            return ("config", 3);
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            match p {
                PipelineError::UnknownVariant(_) => return ("config", 3),
                PipelineError::EmptySplit(_) | PipelineError::FrameCount { .. } => return ("data", 4),
                PipelineError::NotResumable => return ("checkpoint", 5),
                PipelineError::Train(_) => return ("train", 6),
                PipelineError::Config(_) => return ("config", 3),
                PipelineError::Dataset(_) => return ("data", 4),
                PipelineError::Checkpoint(_) => return ("checkpoint", 5),
                PipelineError::Image(_) | PipelineError::Io { .. } => return ("io", 8),
            }
        }
        if cause.is::<DatasetError>() || cause.is::<TrajectoryFileError>() {
            return ("data", 4);
        }
        if cause.is::<CheckpointError>() {
            return ("checkpoint", 5);
        }
        if cause.is::<ViewError>() {
            return ("view", 7);
        }
        if cause.is::<ImageIoError>() || cause.is::<std::io::Error>() {
            return ("io", 8);
        }
    }
    ("internal", 1)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            out,
            checkpoint,
            variant,
            scale_schedule,
        } => cmd_train(common, out, checkpoint, variant, scale_schedule),
        Command::Render {
            common,
            checkpoint,
            view,
            out,
            debug_terms,
        } => cmd_render(common, checkpoint, view, out, debug_terms),
        Command::Relight {
            common,
            checkpoint,
            trajectory,
            out,
            debug_terms,
            size,
            light_radius,
            camera_radius,
            save_trajectory,
        } => cmd_relight(
            common,
            checkpoint,
            trajectory,
            out,
            debug_terms,
            size,
            light_radius,
            camera_radius,
            save_trajectory,
        ),
        Command::Ablate {
            common,
            variant,
            out,
            scale_schedule,
        } => cmd_ablate(common, variant, out, scale_schedule),
        Command::Eval {
            common,
            checkpoint,
            split,
            out,
        } => cmd_eval(common, checkpoint, split, out),
        Command::Serve {
            common,
            checkpoint,
            addr,
        } => cmd_serve(common, checkpoint, addr),
        Command::Synth { common, out } => cmd_synth(common, out),
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "splatlight=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (cat, code) = category(&e);
            eprintln!("error[{cat}]: {}", describe(&e));
            ExitCode::from(code)
        }
    }
}
