//! Frame rendering on the tape: per-Gaussian geometry and shading, batched
//! network evaluation, then rasterization.
//!
//! Inference runs exactly the same graph and simply never calls backward.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::autodiff::{Gradients, Tape, Var};
use crate::geometry::{self, Camera, Intrinsics, Projected, EARLY_STOP_T};
use crate::image::Image;
use crate::math::{quat_to_mat, Mat3, Vec3};
use crate::metrics::dssim_on_tape;
use crate::nn::mlp_on_tape;
use crate::params::{BlockSet, ParamBlock};
use crate::raster::{rasterize_on_tape, Bins, SplatMeta, SPLAT_STRIDE};
use crate::real::Real;
use crate::scene::{GaussianScene, EMBED_DIM};
use crate::shading::{self, BaseColors, TermMask, TermValues};
use crate::shadow::{self, residual_shadow, shadow_input, RaySampling, VisibilityRecord};
use crate::sss::{self, dipole_profile, sss_input, SssParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub mask: TermMask,
    pub background: [f64; 3],
    pub eta: f64,
    /// Use the textbook form of the virtual-source term.
    pub classical_dipole: bool,
    pub sampling: RaySampling,
    pub early_stop: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            mask: TermMask::FULL,
            background: [0.0; 3],
            eta: sss::ETA,
            classical_dipole: false,
            sampling: RaySampling::default(),
            early_stop: EARLY_STOP_T,
        }
    }
}

/// Single-term visualizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DebugTerm {
    /// `c_d · f_d`
    Diffuse,
    /// `c_s · f_s`
    Specular,
    /// `c_sss · f_sss`
    Scatter,
    /// Refined shadow factor `S` (gray).
    Shadow,
    /// Coarse visibility `v̂` per splat (gray).
    Visibility,
    /// Per-pixel ray transmittance `v_i` toward each splat (gray).
    Transmittance,
}

impl DebugTerm {
    pub const ALL: [DebugTerm; 6] = [
        DebugTerm::Diffuse,
        DebugTerm::Specular,
        DebugTerm::Scatter,
        DebugTerm::Shadow,
        DebugTerm::Visibility,
        DebugTerm::Transmittance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DebugTerm::Diffuse => "diffuse",
            DebugTerm::Specular => "specular",
            DebugTerm::Scatter => "sss",
            DebugTerm::Shadow => "shadow",
            DebugTerm::Visibility => "visibility",
            DebugTerm::Transmittance => "transmittance",
        }
    }
}

impl fmt::Display for DebugTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown debug term `{0}`")]
pub struct UnknownDebugTerm(pub String);

impl FromStr for DebugTerm {
    type Err = UnknownDebugTerm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DebugTerm::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| UnknownDebugTerm(s.into()))
    }
}

/// Learnable per-frame corrections: camera `[ω (3), τ (3)]` and a light offset.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameDeltas {
    pub camera: [f64; 6],
    pub light: [f64; 3],
}

/// Camera after applying `delta`: rotation `R_δ R₀`, translation `R_δ t₀ + τ`,
/// with `R_δ` from the quaternion `(1, ω/2)`.
pub fn refine_camera_with<S: Real>(base: &Camera, delta: &[S]) -> (Mat3<S>, Vec3<S>) {
    let like = delta[0];
    let rd = quat_to_mat([like.lift(1.0), delta[0] * 0.5, delta[1] * 0.5, delta[2] * 0.5]);
    let r = rd.mul(&Mat3::lift(like, base.rotation));
    let t = rd
        .mul_vec(Vec3::lift(like, base.translation))
        .add(Vec3::new(delta[3], delta[4], delta[5]));
    (r, t)
}

/// Plain-number version of [`refine_camera_with`].
pub fn refine_camera(base: &Camera, delta: &[f64; 6]) -> Camera {
    let (r, t) = refine_camera_with(base, delta);
    Camera {
        rotation: r.values(),
        translation: t.values(),
        ..base.clone()
    }
}

/// Everything recorded for one frame.
pub struct FrameGraph<'t> {
    /// Row-major interleaved RGB pixel nodes.
    pub pixels: Vec<Var<'t>>,
    pub visibility: VisibilityRecord,
    /// Scene index of each rasterized splat.
    pub splat_ids: Vec<u32>,
    pub camera: Camera,
    pub light: [f64; 3],
    splat_values: Vec<f64>,
    splat_depths: Vec<f64>,
    bins: Bins,
}

impl FrameGraph<'_> {
    pub fn image(&self) -> Image {
        Image::from_data(
            self.camera.width,
            self.camera.height,
            self.pixels.iter().map(|p| p.value()).collect(),
        )
    }

    pub fn visible(&self) -> usize {
        self.splat_ids.len()
    }
}

struct PendingSss {
    slot: usize,
}

/// Optional knobs of [`record_frame`].
#[derive(Clone, Copy, Debug, Default)]
pub struct FrameExtras<'a> {
    pub debug: Option<DebugTerm>,
    /// Coarse visibility per Gaussian to use instead of tracing shadow rays.
    pub fixed_visibility: Option<&'a [f64]>,
}

/// Records one frame of `scene` seen by `camera` under a point light at `light`.
///
/// Every scene block plus `CameraDelta` (6) and `LightDelta` (3) is registered
/// on the tape, so the resulting gradients cover all of them. With `debug` set,
/// each splat's color is replaced by the requested single term.
///
/// Shadow rays are not differentiated: the coarse visibility enters the graph
/// as a constant.
pub fn record_frame<'t>(
    tape: &'t Tape,
    scene: &GaussianScene,
    camera: &Camera,
    light: [f64; 3],
    deltas: &FrameDeltas,
    opts: &RenderOptions,
    extras: &FrameExtras<'_>,
) -> FrameGraph<'t> {
    let debug = extras.debug;
    let n = scene.len();
    let pos = tape.param_block(ParamBlock::Position, &scene.positions);
    let rot = tape.param_block(ParamBlock::Rotation, &scene.rotations);
    let log_scale = tape.param_block(ParamBlock::Scale, &scene.log_scales);
    let opac = tape.param_block(ParamBlock::Opacity, &scene.opacity_logits);
    let diff = tape.param_block(ParamBlock::DiffuseColor, &scene.diffuse_logits);
    let spec = tape.param_block(ParamBlock::SpecularColor, &scene.specular_logits);
    let scat = tape.param_block(ParamBlock::SssColor, &scene.scatter_logits);
    let embed = tape.param_block(ParamBlock::Embedding, &scene.embeddings);
    let lobes_raw = tape.param_block(ParamBlock::AsgLobes, &scene.asg.lobes);
    let lobe_w = tape.param_block(ParamBlock::AsgWeights, &scene.asg.log_weights);
    let f0_logit = tape.param_block(ParamBlock::Fresnel, &[scene.asg.f0_logit])[0];
    let cam_delta = tape.param_block(ParamBlock::CameraDelta, &deltas.camera);
    let light_delta = tape.param_block(ParamBlock::LightDelta, &deltas.light);

    let mask = opts.mask;
    let (rot_w2c, trans) = refine_camera_with(camera, &cam_delta);
    let cam_eff = Camera {
        rotation: rot_w2c.values(),
        translation: trans.values(),
        ..camera.clone()
    };
    let cam_center = rot_w2c.tr_mul_vec(trans).neg();
    let light_v = Vec3::new(light_delta[0] + light[0], light_delta[1] + light[1], light_delta[2] + light[2]);
    let light_eff = light_v.values();
    let k = Intrinsics::from(camera);

    let lobes: Vec<shading::AsgLobe<Var<'t>>> = if mask.specular || debug == Some(DebugTerm::Specular) {
        (0..scene.asg.len())
            .map(|j| {
                let p = &lobes_raw[j * shading::LOBE_STRIDE..(j + 1) * shading::LOBE_STRIDE];
                shading::decode_lobe([p[0], p[1], p[2], p[3]], p[4], p[5], lobe_w[j])
            })
            .collect()
    } else {
        Vec::new()
    };
    let f0 = f0_logit.sigmoid();

    let want_vis = mask.shadow || matches!(debug, Some(DebugTerm::Shadow | DebugTerm::Visibility));
    let occluders = if want_vis { shadow::occluders(&scene.gaussians()) } else { Vec::new() };

    let mut visibility = VisibilityRecord {
        coarse: alloc::vec![1.0; n],
        zero_density: alloc::vec![false; n],
        refined: alloc::vec![1.0; n],
    };

    let mut ids: Vec<u32> = Vec::new();
    let mut projected: Vec<Projected<Var<'t>>> = Vec::new();
    let mut opacities: Vec<Var<'t>> = Vec::new();
    let mut colors: Vec<BaseColors<Var<'t>>> = Vec::new();
    let mut terms: Vec<TermValues<Var<'t>>> = Vec::new();
    let mut sss_rows: Vec<Var<'t>> = Vec::new();
    let mut sss_slots: Vec<PendingSss> = Vec::new();
    let mut shadow_rows: Vec<Var<'t>> = Vec::new();
    let mut shadow_slots: Vec<PendingSss> = Vec::new();

    for i in 0..n {
        let x = Vec3::new(pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]);
        let q = [rot[4 * i], rot[4 * i + 1], rot[4 * i + 2], rot[4 * i + 3]];
        let s = [log_scale[3 * i].exp(), log_scale[3 * i + 1].exp(), log_scale[3 * i + 2].exp()];
        let cov = geometry::covariance_of(q, s);
        let Some(p) = geometry::project_with(x, &cov, &rot_w2c, trans, k) else {
            continue;
        };
        let pv = Projected {
            mean: p.mean.map(|v| v.value()),
            cov: p.cov.map(|v| v.value()),
            depth: p.depth.value(),
        };
        let radius = geometry::splat_radius(pv.cov);
        if shadow::footprint_span(pv.mean[0], radius, camera.width).is_none()
            || shadow::footprint_span(pv.mean[1], radius, camera.height).is_none()
        {
            continue;
        }
        let opacity = opac[i].sigmoid();
        let slot = ids.len();
        ids.push(i as u32);

        let wo = cam_center.sub(x).normalize();
        let wi = light_v.sub(x).normalize();
        let nrm = shading::normal(q, x, cam_center);
        let m = &embed[EMBED_DIM * i..EMBED_DIM * (i + 1)];
        let sig3 = |v: &[Var<'t>]| [v[3 * i].sigmoid(), v[3 * i + 1].sigmoid(), v[3 * i + 2].sigmoid()];
        colors.push(BaseColors {
            diffuse: sig3(&diff),
            specular: sig3(&spec),
            scatter: sig3(&scat),
        });

        let need = |on: bool, term: DebugTerm| on || debug == Some(term);
        let f_d = need(mask.diffuse, DebugTerm::Diffuse).then(|| shading::diffuse(nrm, wi));
        let f_s = need(mask.specular, DebugTerm::Specular).then(|| shading::specular(wo, wi, &lobes, f0));
        if need(mask.sss, DebugTerm::Scatter) {
            sss_input(x, wo, wi, nrm, m, &mut sss_rows);
            sss_slots.push(PendingSss { slot });
        }
        if want_vis {
            if let Some(fixed) = extras.fixed_visibility {
                visibility.coarse[i] = fixed[i];
            } else {
                let v = shadow::coarse_visibility_projected(
                    &pv,
                    opacity.value(),
                    i,
                    &occluders,
                    light_eff,
                    &cam_eff,
                    opts.sampling,
                );
                visibility.coarse[i] = v.value;
                visibility.zero_density[i] = v.zero_density;
            }
            shadow_input(x, wi, tape.constant(visibility.coarse[i]), m, &mut shadow_rows);
            shadow_slots.push(PendingSss { slot });
        }
        terms.push(TermValues {
            f_d,
            f_s,
            f_sss: None,
            shadow: None,
        });
        projected.push(p);
        opacities.push(opacity);
    }

    if !sss_slots.is_empty() {
        let out = mlp_on_tape(tape, &scene.sss_net, ParamBlock::SssNet, &sss_rows, sss_slots.len());
        for (r, pending) in sss_slots.iter().enumerate() {
            let p = SssParams::from_raw([out[3 * r], out[3 * r + 1], out[3 * r + 2]]);
            terms[pending.slot].f_sss = Some(dipole_profile(&p, opts.eta, opts.classical_dipole));
        }
    }
    if !shadow_slots.is_empty() {
        let out = mlp_on_tape(tape, &scene.shadow_net, ParamBlock::ShadowNet, &shadow_rows, shadow_slots.len());
        for (r, pending) in shadow_slots.iter().enumerate() {
            let id = ids[pending.slot] as usize;
            let s = residual_shadow(visibility.coarse[id], out[r]);
            visibility.refined[id] = s.value();
            terms[pending.slot].shadow = Some(s);
        }
    }

    let mut splats: Vec<Var<'t>> = Vec::with_capacity(ids.len() * SPLAT_STRIDE);
    let mut meta = Vec::with_capacity(ids.len());
    let mut means = Vec::with_capacity(ids.len());
    let zero = tape.constant(0.0);
    for (slot, p) in projected.iter().enumerate() {
        let [a, b, c] = p.cov;
        let inv_det = (a * c - b * b).recip();
        let t = &terms[slot];
        let rgb = match debug {
            None => {
                let active = TermValues {
                    f_d: t.f_d.filter(|_| mask.diffuse),
                    f_s: t.f_s.filter(|_| mask.specular),
                    f_sss: t.f_sss.filter(|_| mask.sss),
                    shadow: t.shadow.filter(|_| mask.shadow),
                };
                shading::shade(&colors[slot], &active, mask.shadow_on_sss)
            }
            Some(DebugTerm::Diffuse) => colors[slot].diffuse.map(|col| col * t.f_d.unwrap_or(zero)),
            Some(DebugTerm::Specular) => colors[slot].specular.map(|col| col * t.f_s.unwrap_or(zero)),
            Some(DebugTerm::Scatter) => colors[slot].scatter.map(|col| col * t.f_sss.unwrap_or(zero)),
            Some(DebugTerm::Shadow) => [t.shadow.unwrap_or(zero); 3],
            Some(DebugTerm::Visibility) | Some(DebugTerm::Transmittance) => {
                [tape.constant(visibility.coarse[ids[slot] as usize]); 3]
            }
        };
        splats.extend_from_slice(&[
            p.mean[0],
            p.mean[1],
            c * inv_det,
            -(b * inv_det),
            a * inv_det,
            opacities[slot],
            rgb[0],
            rgb[1],
            rgb[2],
        ]);
        let cov = p.cov.map(|v| v.value());
        meta.push(SplatMeta {
            radius: geometry::splat_radius(cov),
            depth: p.depth.value(),
        });
        means.push(p.mean.map(|v| v.value()));
    }
    let bins = Bins::with_means(&meta, &means, camera.width, camera.height, opts.background, opts.early_stop);
    let splat_values: Vec<f64> = splats.iter().map(|v| v.value()).collect();
    let pixels = rasterize_on_tape(tape, &splats, bins.clone());
    FrameGraph {
        pixels,
        visibility,
        splat_ids: ids,
        camera: cam_eff,
        light: light_eff,
        splat_values,
        splat_depths: meta.iter().map(|m| m.depth).collect(),
        bins,
    }
}

/// A finished inference render.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: Image,
    pub visibility: VisibilityRecord,
    pub visible: usize,
}

pub fn render(scene: &GaussianScene, camera: &Camera, light: [f64; 3], opts: &RenderOptions) -> Rendered {
    render_with_deltas(scene, camera, light, &FrameDeltas::default(), opts)
}

pub fn render_with_deltas(
    scene: &GaussianScene,
    camera: &Camera,
    light: [f64; 3],
    deltas: &FrameDeltas,
    opts: &RenderOptions,
) -> Rendered {
    let tape = Tape::new();
    let g = record_frame(&tape, scene, camera, light, deltas, opts, &FrameExtras::default());
    Rendered {
        image: g.image(),
        visible: g.visible(),
        visibility: g.visibility,
    }
}

/// Renders a single term as an image (see [`DebugTerm`]).
pub fn render_debug(
    scene: &GaussianScene,
    camera: &Camera,
    light: [f64; 3],
    opts: &RenderOptions,
    term: DebugTerm,
) -> Image {
    let tape = Tape::new();
    let g = record_frame(
        &tape,
        scene,
        camera,
        light,
        &FrameDeltas::default(),
        opts,
        &FrameExtras {
            debug: Some(term),
            ..FrameExtras::default()
        },
    );
    if term != DebugTerm::Transmittance {
        return g.image();
    }
    let occ = shadow::occluders(&scene.gaussians());
    let data = g.bins.render_with(&g.splat_values, |k, x, y| {
        let px = geometry::pixel_center(x, y);
        let target = g.camera.unproject(px[0], px[1], g.splat_depths[k as usize]);
        let id = g.splat_ids[k as usize] as usize;
        [shadow::ray_transmittance(g.light, target, &occ, Some(id)); 3]
    });
    Image::from_data(camera.width, camera.height, data)
}

/// Loss value, gradients and the rendered image of one training frame.
pub struct FrameLoss {
    pub loss: f64,
    pub grads: Gradients,
    pub render: Image,
    pub visibility: VisibilityRecord,
}

/// Mean absolute error over all pixels and channels, plus `dssim_weight · (1 − SSIM)`.
pub fn loss_on_tape<'t>(tape: &'t Tape, pixels: &[Var<'t>], target: &Image, dssim_weight: f64) -> Var<'t> {
    assert_eq!(pixels.len(), target.data.len(), "target image size");
    let mut sum = tape.constant(0.0);
    for (p, t) in pixels.iter().zip(&target.data) {
        sum = sum + (*p - *t).abs();
    }
    let mut loss = sum / target.data.len() as f64;
    if dssim_weight > 0.0 {
        loss = loss + dssim_on_tape(tape, pixels, target) * dssim_weight;
    }
    loss
}

/// Renders a frame and differentiates [`loss_on_tape`] against `target`.
#[allow(clippy::too_many_arguments)]
pub fn frame_loss(
    scene: &GaussianScene,
    camera: &Camera,
    light: [f64; 3],
    target: &Image,
    deltas: &FrameDeltas,
    opts: &RenderOptions,
    dssim_weight: f64,
    frozen: BlockSet,
) -> FrameLoss {
    let tape = Tape::new();
    let g = record_frame(&tape, scene, camera, light, deltas, opts, &FrameExtras::default());
    let loss = loss_on_tape(&tape, &g.pixels, target, dssim_weight);
    let grads = tape.backward(loss, frozen);
    FrameLoss {
        loss: loss.value(),
        grads,
        render: g.image(),
        visibility: g.visibility,
    }
}
