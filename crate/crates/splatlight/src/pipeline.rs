//! Training, evaluation, ablation and relighting drivers used by the CLI.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use splatlight_core::dataset::{make_synthetic, OlatFrame, SyntheticSpec};
use splatlight_core::image::Image;
use splatlight_core::metrics::{psnr, ssim};
use splatlight_core::render::{render_debug, render_with_deltas, DebugTerm, FrameDeltas, RenderOptions};
use splatlight_core::scene::{init_scene_with, GaussianScene, InitOptions};
use splatlight_core::schedule::{ActiveMask, Variant};
use splatlight_core::shading::Composition;
use splatlight_core::trainer::{effective_mask, TrainConfig, TrainError, Trainer};
use splatlight_core::trajectory::Trajectory;

use crate::checkpoint::{self, Checkpoint, CheckpointError};
use crate::config::{Config, ConfigError};
use crate::dataset::{self, DatasetError, LoadOptions};
use crate::imageio::{self, ColorSpace, ImageIoError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("checkpoint was trained on {checkpoint} frames but the dataset has {dataset}")]
    FrameCount { checkpoint: usize, dataset: usize },
    #[error("checkpoint has no training state to resume from")]
    NotResumable,
    #[error("unknown ablation variant `{0}` (expected A-F or H-K)")]
    UnknownVariant(String),
    #[error("dataset split `{0}` is empty")]
    EmptySplit(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Train and test frames.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<OlatFrame>,
    pub test: Vec<OlatFrame>,
    /// Ground-truth scene when the data is synthetic.
    pub truth: Option<GaussianScene>,
}

/// Synthetic data: `frames + test_frames` views of one scene, every
/// `total / test_frames`-th view held out.
pub fn synthetic_dataset(spec: &SyntheticSpec, test_frames: usize) -> Dataset {
    let total = spec.frames + test_frames;
    let syn = make_synthetic(&SyntheticSpec {
        frames: total,
        ..spec.clone()
    });
    let stride = total.checked_div(test_frames).unwrap_or(usize::MAX);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, f) in syn.frames.into_iter().enumerate() {
        if test.len() < test_frames && (i + 1) % stride == 0 {
            test.push(f);
        } else {
            train.push(f);
        }
    }
    Dataset {
        train,
        test,
        truth: Some(syn.scene),
    }
}

pub fn load_dataset(config: &Config) -> Result<Dataset, PipelineError> {
    let d = &config.data;
    let Some(dir) = &d.dir else {
        return Ok(synthetic_dataset(&config.synthetic_spec(), d.synthetic.test_frames));
    };
    let train = dataset::load_olat(
        dir,
        &LoadOptions {
            split: d.train_split.clone(),
            color: d.color,
        },
    )?;
    if train.is_empty() {
        return Err(PipelineError::EmptySplit(d.train_split.clone()));
    }
    let test = if dataset::transforms_path(dir, &d.test_split).is_some() {
        dataset::load_olat(
            dir,
            &LoadOptions {
                split: d.test_split.clone(),
                color: d.color,
            },
        )?
    } else {
        Vec::new()
    };
    Ok(Dataset {
        train,
        test,
        truth: None,
    })
}

pub fn fresh_scene(config: &Config) -> GaussianScene {
    let mut scene = init_scene_with(&InitOptions {
        count: config.model.gaussians,
        seed: config.seed,
        lobes: config.model.lobes,
        embedding_noise: config.model.embedding_noise,
    });
    let f0 = config.model.f0;
    scene.asg.f0_logit = (f0 / (1.0 - f0)).ln();
    scene
}

/// Trainer state restored from a training checkpoint.
pub fn resume_trainer(ck: Checkpoint, config: TrainConfig, frames: usize) -> Result<Trainer, PipelineError> {
    let t = ck.training.ok_or(PipelineError::NotResumable)?;
    if t.refinement.len() != frames {
        return Err(PipelineError::FrameCount {
            checkpoint: t.refinement.len(),
            dataset: frames,
        });
    }
    Ok(Trainer {
        scene: ck.scene,
        refinement: t.refinement,
        adam: t.adam,
        delta_optim: t.frame_adams,
        config,
        iter: t.iter,
    })
}

/// First iteration of every phase: 0 plus each iteration at which the
/// effective mask changes.
pub fn phase_boundaries(config: &TrainConfig) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev: Option<ActiveMask> = None;
    for iter in 0..config.schedule.total_iters {
        let m = effective_mask(config, iter);
        if prev != Some(m) {
            out.push(iter);
        }
        prev = Some(m);
    }
    out
}

fn describe_terms(m: &ActiveMask) -> String {
    let t = m.terms;
    let mut s = String::new();
    for (on, c) in [(t.diffuse, 'd'), (t.specular, 's'), (t.sss, 'c'), (t.shadow, 'h')] {
        if on {
            s.push(c);
        }
    }
    s
}

fn describe_frozen(m: &ActiveMask) -> String {
    m.frozen.iter().map(|b| b.name()).collect::<Vec<_>>().join("|")
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
    /// Iterations run by this call.
    pub iterations: u32,
    pub losses: Vec<f64>,
    pub final_checkpoint: PathBuf,
    pub trainer: Trainer,
}

/// Runs (or resumes) training, writing under `out`:
/// `loss.csv`, `checkpoints/iter_NNNNNN.ckpt` every `checkpoint_every`
/// iterations and at every phase boundary, `previews/iter_NNNNNN.png` at each
/// boundary, and `final.ckpt`.
pub fn train(
    config: &Config,
    data: &Dataset,
    out: &Path,
    resume: Option<Checkpoint>,
    mut progress: impl FnMut(u32, f64),
) -> Result<TrainOutput, PipelineError> {
    let tc = config.train_config()?;
    let frames = &data.train;
    if frames.is_empty() {
        return Err(PipelineError::EmptySplit(config.data.train_split.clone()));
    }
    let mut trainer = match resume {
        Some(ck) => resume_trainer(ck, tc.clone(), frames.len())?,
        None => Trainer::new(fresh_scene(config), frames.len(), tc.clone()),
    };
    let ck_dir = out.join("checkpoints");
    let preview_dir = out.join("previews");
    create_dir(&ck_dir)?;
    create_dir(&preview_dir)?;

    let log_path = out.join("loss.csv");
    let resuming = trainer.iter > 0 && log_path.is_file();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(resuming)
        .write(true)
        .truncate(!resuming)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let mut log = BufWriter::new(file);
    if !resuming {
        writeln!(log, "iter,frame,loss,terms,frozen").map_err(io_err(&log_path))?;
    }

    let boundaries = phase_boundaries(&tc);
    let preview_frame = &frames[0];
    let start = trainer.iter;
    let mut losses = Vec::new();
    while !trainer.is_done() {
        let iter = trainer.iter;
        if boundaries.contains(&iter) {
            save_snapshot(&trainer, &ck_dir, iter)?;
            let img = render_with_deltas(
                &trainer.scene,
                &preview_frame.camera,
                preview_frame.light,
                &trainer.refinement.deltas(0),
                &RenderOptions {
                    mask: effective_mask(&tc, iter).terms,
                    ..tc.render
                },
            )
            .image;
            imageio::write_png(&preview_dir.join(format!("iter_{iter:06}.png")), &img, ColorSpace::Srgb)?;
        }
        let r = trainer.step(frames)?;
        losses.push(r.loss);
        let mut line = String::new();
        let _ = write!(
            line,
            "{},{},{:e},{},{}",
            r.iter,
            frames[r.frame].id,
            r.loss,
            describe_terms(&r.mask),
            describe_frozen(&r.mask)
        );
        writeln!(log, "{line}").map_err(io_err(&log_path))?;
        progress(r.iter, r.loss);
        let done = r.iter + 1;
        if config.train.checkpoint_every > 0 && done % config.train.checkpoint_every == 0 && !trainer.is_done() {
            save_snapshot(&trainer, &ck_dir, done)?;
        }
    }
    log.flush().map_err(io_err(&log_path))?;
    let final_checkpoint = out.join("final.ckpt");
    checkpoint::save(&final_checkpoint, &Checkpoint::from_trainer(&trainer))?;
    Ok(TrainOutput {
        dir: out.to_owned(),
        iterations: trainer.iter - start,
        losses,
        final_checkpoint,
        trainer,
    })
}

fn save_snapshot(t: &Trainer, dir: &Path, iter: u32) -> Result<(), PipelineError> {
    checkpoint::save(&dir.join(format!("iter_{iter:06}.ckpt")), &Checkpoint::from_trainer(t))?;
    Ok(())
}

/// Mean PSNR and SSIM over a split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
    pub frames: usize,
}

/// Renders every frame (in parallel) and averages the metrics. `deltas`
/// supplies per-frame refinements for training frames.
pub fn evaluate(
    scene: &GaussianScene,
    frames: &[OlatFrame],
    deltas: Option<&[FrameDeltas]>,
    opts: &RenderOptions,
) -> Scores {
    let per: Vec<(f64, f64)> = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let d = deltas.map(|d| d[i]).unwrap_or_default();
            let img = render_with_deltas(scene, &f.camera, f.light, &d, opts).image;
            (
                psnr(&img, &f.image).expect("render matches frame size"),
                ssim(&img, &f.image).expect("render matches frame size"),
            )
        })
        .collect();
    let n = per.len().max(1) as f64;
    Scores {
        psnr: per.iter().map(|p| p.0).sum::<f64>() / n,
        ssim: per.iter().map(|p| p.1).sum::<f64>() / n,
        frames: per.len(),
    }
}

/// Refinements of a trainer as a per-frame list.
pub fn trainer_deltas(t: &Trainer) -> Vec<FrameDeltas> {
    (0..t.refinement.len()).map(|i| t.refinement.deltas(i)).collect()
}

/// One row of an ablation: a composition (A-F) or a schedule (H-K).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    Composition(Composition),
    Schedule(Variant),
}

impl AblationVariant {
    pub fn label(self) -> &'static str {
        match self {
            AblationVariant::Composition(c) => c.label(),
            AblationVariant::Schedule(v) => v.label(),
        }
    }

    pub fn kind(self) -> &'static str {
        match self {
            AblationVariant::Composition(_) => "composition",
            AblationVariant::Schedule(_) => "schedule",
        }
    }

    /// `config` with this variant applied.
    pub fn apply(self, config: &Config) -> Config {
        let mut c = config.clone();
        match self {
            AblationVariant::Composition(comp) => c.train.composition = comp.label().into(),
            AblationVariant::Schedule(v) => c.train.variant = v.label().into(),
        }
        c
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(c) = s.parse::<Composition>() {
            return Ok(AblationVariant::Composition(c));
        }
        s.parse::<Variant>()
            .map(AblationVariant::Schedule)
            .map_err(|_| PipelineError::UnknownVariant(s.to_owned()))
    }
}

pub fn parse_variants(list: &str) -> Result<Vec<AblationVariant>, PipelineError> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub split: &'static str,
    pub scores: Scores,
}

pub const ABLATION_HEADER: &str = "variant,kind,split,psnr,ssim,frames";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.4},{:.5},{}",
            r.variant.label(),
            r.variant.kind(),
            r.split,
            r.scores.psnr,
            r.scores.ssim,
            r.scores.frames
        );
    }
    s
}

/// Trains each variant from the same initialization and scores it on the
/// train and (when present) test splits. Each variant's run lands in
/// `out/<label>/`.
pub fn ablate(
    config: &Config,
    data: &Dataset,
    variants: &[AblationVariant],
    out: &Path,
    mut progress: impl FnMut(AblationVariant, u32, f64),
) -> Result<Vec<AblationRow>, PipelineError> {
    let mut rows = Vec::new();
    for &v in variants {
        let cfg = v.apply(config);
        let run = train(&cfg, data, &out.join(v.label()), None, |i, l| progress(v, i, l))?;
        let opts = cfg.render_options()?;
        let deltas = trainer_deltas(&run.trainer);
        rows.push(AblationRow {
            variant: v,
            split: "train",
            scores: evaluate(&run.trainer.scene, &data.train, Some(&deltas), &opts),
        });
        if !data.test.is_empty() {
            rows.push(AblationRow {
                variant: v,
                split: "test",
                scores: evaluate(&run.trainer.scene, &data.test, None, &opts),
            });
        }
    }
    Ok(rows)
}

/// One relit frame, plus the requested single-term maps.
pub struct RelitFrame {
    pub image: Image,
    pub debug: Vec<(DebugTerm, Image)>,
}

/// Renders every trajectory step in parallel; output order follows the steps.
pub fn relight(
    scene: &GaussianScene,
    trajectory: &Trajectory,
    opts: &RenderOptions,
    debug: &[DebugTerm],
) -> Vec<RelitFrame> {
    trajectory
        .steps
        .par_iter()
        .map(|s| RelitFrame {
            image: render_with_deltas(scene, &s.camera, s.light, &FrameDeltas::default(), opts).image,
            debug: debug
                .iter()
                .map(|&t| (t, render_debug(scene, &s.camera, s.light, opts, t)))
                .collect(),
        })
        .collect()
}

/// Writes `frame_NNNN.png` (and `<term>/frame_NNNN.png` for debug maps) under `out`.
pub fn write_relit(out: &Path, frames: &[RelitFrame]) -> Result<Vec<PathBuf>, PipelineError> {
    create_dir(out)?;
    let mut paths = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let p = out.join(format!("frame_{i:04}.png"));
        imageio::write_png(&p, &f.image, ColorSpace::Srgb)?;
        paths.push(p);
        for (t, img) in &f.debug {
            let dir = out.join(t.name());
            create_dir(&dir)?;
            imageio::write_png(&dir.join(format!("frame_{i:04}.png")), img, ColorSpace::Srgb)?;
        }
    }
    Ok(paths)
}

pub fn parse_debug_terms(list: &str) -> Result<Vec<DebugTerm>, splatlight_core::render::UnknownDebugTerm> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(DebugTerm::ALL.to_vec());
    }
    list.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect()
}
