//! Progressive training loop.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::OlatFrame;
use crate::optim::{Adam, LearningRates};
use crate::params::{BlockSet, ParamBlock};
use crate::render::{frame_loss, FrameDeltas, RenderOptions};
use crate::scene::GaussianScene;
use crate::schedule::{active_mask, term_blocks, ActiveMask, TrainSchedule};
use crate::shading::{TermMask, LOBE_STRIDE};

/// Per-frame camera and light corrections, all starting at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementState {
    pub cameras: Vec<[f64; 6]>,
    pub lights: Vec<[f64; 3]>,
}

impl RefinementState {
    pub fn new(frames: usize) -> Self {
        RefinementState {
            cameras: alloc::vec![[0.0; 6]; frames],
            lights: alloc::vec![[0.0; 3]; frames],
        }
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn deltas(&self, frame: usize) -> FrameDeltas {
        FrameDeltas {
            camera: self.cameras[frame],
            light: self.lights[frame],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub schedule: TrainSchedule,
    pub rates: LearningRates,
    /// Upper bound on the terms the schedule may switch on.
    pub composition: TermMask,
    pub render: RenderOptions,
    /// Weight of the optional D-SSIM term; 0 disables it.
    pub dssim_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: TrainSchedule::default(),
            rates: LearningRates::default(),
            composition: TermMask::FULL,
            render: RenderOptions::default(),
            dssim_weight: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at iteration {iter} on frame `{frame}`{}", describe_pixel(.pixel))]
    NonFiniteLoss {
        iter: u32,
        frame: String,
        loss: f64,
        /// First offending pixel: `(x, y, rendered rgb)`.
        pixel: Option<(u32, u32, [f64; 3])>,
    },
    #[error("frame index {index} out of range for {frames} frames")]
    FrameIndex { index: usize, frames: usize },
    #[error("no frames to train on")]
    NoFrames,
}

fn describe_pixel(p: &Option<(u32, u32, [f64; 3])>) -> String {
    match p {
        Some((x, y, c)) => alloc::format!(" (pixel ({x}, {y}) = {c:?})"),
        None => String::new(),
    }
}

/// Outcome of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub iter: u32,
    pub frame: usize,
    pub loss: f64,
    pub mask: ActiveMask,
    /// Blocks whose values changed.
    pub updated: BlockSet,
}

/// Terms and frozen blocks in effect at `iter` once the composition limit is applied.
pub fn effective_mask(config: &TrainConfig, iter: u32) -> ActiveMask {
    let mut m = active_mask(&config.schedule, iter);
    m.terms = m.terms.intersect(config.composition);
    m.frozen = m.frozen.union(term_blocks(m.terms));
    m
}

fn renormalize_quats(v: &mut [f64], stride: usize) {
    for chunk in v.chunks_exact_mut(stride) {
        let n = libm::sqrt(chunk[..4].iter().map(|x| x * x).sum::<f64>());
        if n > 1e-12 {
            chunk[..4].iter_mut().for_each(|x| *x /= n);
        } else {
            chunk[..4].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        }
    }
}

/// Renders `frame`, computes the loss, and applies one update to every block
/// that is neither frozen nor gradient-free. Camera and light deltas of the
/// frame are updated only while their refinement phase is on.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    scene: &mut GaussianScene,
    refinement: &mut RefinementState,
    delta_optim: &mut [Adam],
    adam: &mut Adam,
    frame_index: usize,
    frame: &OlatFrame,
    config: &TrainConfig,
    iter: u32,
) -> Result<StepReport, TrainError> {
    if frame_index >= refinement.len() {
        return Err(TrainError::FrameIndex {
            index: frame_index,
            frames: refinement.len(),
        });
    }
    let mask = effective_mask(config, iter);
    let opts = RenderOptions {
        mask: mask.terms,
        ..config.render
    };
    let out = frame_loss(
        scene,
        &frame.camera,
        frame.light,
        &frame.image,
        &refinement.deltas(frame_index),
        &opts,
        config.dssim_weight,
        mask.frozen,
    );
    if !out.loss.is_finite() {
        let pixel = out
            .render
            .data
            .chunks_exact(3)
            .position(|p| !p.iter().all(|v| v.is_finite()))
            .map(|i| {
                let (x, y) = (i as u32 % out.render.width, i as u32 / out.render.width);
                (x, y, out.render.pixel(x, y))
            });
        return Err(TrainError::NonFiniteLoss {
            iter,
            frame: frame.id.clone(),
            loss: out.loss,
            pixel,
        });
    }

    let total = config.schedule.total_iters;
    let mut updated = BlockSet::EMPTY;
    for (block, grad) in out.grads.blocks() {
        if mask.frozen.contains(block) {
            continue;
        }
        let lr = config.rates.for_block(block, iter, total);
        let changed = match block {
            ParamBlock::CameraDelta => {
                delta_optim[frame_index].step(block, &mut refinement.cameras[frame_index], grad, lr)
            }
            ParamBlock::LightDelta => {
                delta_optim[frame_index].step(block, &mut refinement.lights[frame_index], grad, lr)
            }
            _ => {
                let params = scene.block_mut(block).expect("scene block");
                adam.step(block, params, grad, lr)
            }
        };
        if changed {
            updated.insert(block);
        }
    }
    if updated.contains(ParamBlock::Rotation) {
        renormalize_quats(&mut scene.rotations, 4);
    }
    if updated.contains(ParamBlock::AsgLobes) {
        renormalize_quats(&mut scene.asg.lobes, LOBE_STRIDE);
    }
    Ok(StepReport {
        iter,
        frame: frame_index,
        loss: out.loss,
        mask,
        updated,
    })
}

/// Frame visited at `iter`: a fresh permutation of all frames every epoch,
/// derived only from `seed` and the epoch number.
pub fn frame_for_iter(seed: u64, frames: usize, iter: u32) -> usize {
    let epoch = iter as usize / frames;
    let mut order: Vec<usize> = (0..frames).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    order[iter as usize % frames]
}

/// Owns the mutable training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub scene: GaussianScene,
    pub refinement: RefinementState,
    pub adam: Adam,
    pub delta_optim: Vec<Adam>,
    pub config: TrainConfig,
    /// Next iteration to run.
    pub iter: u32,
}

impl Trainer {
    pub fn new(scene: GaussianScene, frames: usize, config: TrainConfig) -> Self {
        Trainer {
            scene,
            refinement: RefinementState::new(frames),
            adam: Adam::default(),
            delta_optim: alloc::vec![Adam::default(); frames],
            config,
            iter: 0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.config.schedule.total_iters
    }

    /// Runs one iteration on the scheduled frame.
    pub fn step(&mut self, frames: &[OlatFrame]) -> Result<StepReport, TrainError> {
        if frames.is_empty() {
            return Err(TrainError::NoFrames);
        }
        let index = frame_for_iter(self.config.seed, frames.len(), self.iter);
        let report = train_step(
            &mut self.scene,
            &mut self.refinement,
            &mut self.delta_optim,
            &mut self.adam,
            index,
            &frames[index],
            &self.config,
            self.iter,
        )?;
        self.iter += 1;
        Ok(report)
    }

    /// Runs until the schedule ends, calling `on_step` after each iteration.
    pub fn run(
        &mut self,
        frames: &[OlatFrame],
        mut on_step: impl FnMut(&Trainer, &StepReport),
    ) -> Result<(), TrainError> {
        while !self.is_done() {
            let r = self.step(frames)?;
            on_step(self, &r);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic, SyntheticSpec};
    use crate::render::render;
    use crate::scene::init_scene;
    use crate::schedule::Variant;

    fn tiny() -> crate::dataset::Synthetic {
        make_synthetic(&SyntheticSpec {
            gaussians: 12,
            frames: 4,
            image_size: 20,
            ..SyntheticSpec::default()
        })
    }

    #[test]
    fn fixed_point_gives_zero_loss_and_no_update() {
        let syn = tiny();
        let mut frames = syn.frames.clone();
        let config = TrainConfig {
            schedule: TrainSchedule::variant(Variant::H).with_total(10),
            ..TrainConfig::default()
        };
        // targets are the current renders of the scene being trained
        for f in &mut frames {
            f.image = render(&syn.scene, &f.camera, f.light, &config.render).image;
        }
        let mut t = Trainer::new(syn.scene.clone(), frames.len(), config);
        let r = t.step(&frames).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.updated.is_empty());
        assert_eq!(t.scene.positions, syn.scene.positions);
    }

    #[test]
    fn frozen_blocks_stay_bit_identical() {
        let syn = tiny();
        let config = TrainConfig {
            schedule: TrainSchedule::default().scaled_to(200),
            ..TrainConfig::default()
        };
        let s = config.schedule;
        let w = s.shadow_freeze.unwrap();
        let mut t = Trainer::new(init_scene(12, 3), syn.frames.len(), config);
        t.iter = w.start;
        let before = t.scene.shadow_net.params().to_vec();
        for _ in 0..3 {
            let r = t.step(&syn.frames).unwrap();
            assert!(r.mask.frozen.contains(ParamBlock::ShadowNet));
            assert!(!r.updated.contains(ParamBlock::ShadowNet));
        }
        assert_eq!(t.scene.shadow_net.params(), &before[..]);
    }

    #[test]
    fn epoch_visits_every_frame_once() {
        let mut seen: Vec<usize> = (0..7).map(|i| frame_for_iter(5, 7, 14 + i)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn composition_limit_removes_blocks_from_gradient_flow() {
        let mut config = TrainConfig {
            schedule: TrainSchedule::variant(Variant::H).with_total(10),
            ..TrainConfig::default()
        };
        config.composition.sss = false;
        let m = effective_mask(&config, 0);
        assert!(!m.terms.sss);
        assert!(m.frozen.contains(ParamBlock::SssNet));
        assert!(m.frozen.contains(ParamBlock::SssColor));
    }
}
