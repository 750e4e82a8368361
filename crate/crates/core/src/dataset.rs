//! OLAT frames and the synthetic scene generator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Camera, Gaussian};
use crate::image::Image;
use crate::nn::Mlp;
use crate::render::{render, RenderOptions};
use crate::scene::{quat_z_to, unit_vector, GaussianScene, EMBED_DIM};
use crate::shading::{AsgBank, Composition, DEFAULT_LOBES};
use crate::shadow::shadow_layer_sizes;
use crate::sss::sss_layer_sizes;

/// One-light-at-a-time observation.
#[derive(Clone, Debug, PartialEq)]
pub struct OlatFrame {
    pub id: String,
    pub image: Image,
    pub camera: Camera,
    /// World-space point-light position.
    pub light: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameError {
    #[error("frame `{id}`: image is {image_w}x{image_h} but camera is {cam_w}x{cam_h}")]
    Size {
        id: String,
        image_w: u32,
        image_h: u32,
        cam_w: u32,
        cam_h: u32,
    },
    #[error("frame `{id}`: light position is not finite")]
    Light { id: String },
}

impl OlatFrame {
    pub fn validate(&self) -> Result<(), FrameError> {
        if self.image.width != self.camera.width || self.image.height != self.camera.height {
            return Err(FrameError::Size {
                id: self.id.clone(),
                image_w: self.image.width,
                image_h: self.image.height,
                cam_w: self.camera.width,
                cam_h: self.camera.height,
            });
        }
        if !self.light.iter().all(|v| v.is_finite()) {
            return Err(FrameError::Light { id: self.id.clone() });
        }
        Ok(())
    }
}

/// Parameters of [`make_synthetic`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub gaussians: usize,
    pub frames: usize,
    pub image_size: u32,
    pub camera_radius: f64,
    pub light_radius: f64,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            gaussians: 100,
            frames: 48,
            image_size: 64,
            camera_radius: 4.0,
            light_radius: 6.0,
            fov_deg: 40.0,
        }
    }
}

/// Ground-truth scene plus its rendered frames.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub scene: GaussianScene,
    pub frames: Vec<OlatFrame>,
}

/// Fibonacci-sphere point `k` of `n`, biased toward the upper hemisphere
/// when `upper` is set.
fn sphere_point(k: usize, n: usize, upper: bool, jitter: f64) -> [f64; 3] {
    let golden = core::f64::consts::PI * (3.0 - libm::sqrt(5.0));
    let t = (k as f64 + 0.5) / n as f64;
    let z = if upper { 0.9 - 1.1 * t } else { 1.0 - 2.0 * t };
    let r = libm::sqrt((1.0 - z * z).max(0.0));
    let phi = golden * k as f64 + jitter;
    [r * libm::cos(phi), r * libm::sin(phi), z]
}

fn smooth_color(p: [f64; 3], phase: [f64; 3]) -> [f64; 3] {
    [
        0.5 + 0.35 * libm::sin(2.0 * p[0] + phase[0]),
        0.5 + 0.35 * libm::sin(2.0 * p[1] + phase[1]),
        0.5 + 0.35 * libm::sin(2.0 * p[2] + phase[2]),
    ]
}

/// Builds a random ground-truth scene and renders `frames` OLAT views of it with
/// the full composition. Cameras sit on a sphere of `camera_radius` looking at
/// the origin (z up); each frame has its own light on a sphere of `light_radius`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Synthetic {
    assert!(spec.frames >= 1, "need at least one frame");
    assert!(spec.gaussians >= 1, "need at least one Gaussian");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_5eed);
    let sss_net = Mlp::uniform(&sss_layer_sizes(), &mut rng).expect("static architecture");
    let mut shadow_net = Mlp::uniform(&shadow_layer_sizes(), &mut rng).expect("static architecture");
    shadow_net.scale_output_layer(0.1);
    let mut asg = AsgBank::spread(DEFAULT_LOBES, 12.0, 0.3);
    for v in asg.lobes.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let mut scene = GaussianScene::empty(asg, sss_net, shadow_net);

    let phase = [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)];
    let base = 0.5 * libm::sqrt(4.0 * core::f64::consts::PI / spec.gaussians as f64);
    for _ in 0..spec.gaussians {
        let dir = unit_vector(&mut rng);
        let radius = rng.random_range(0.85..1.0);
        let center = dir.map(|v| v * radius);
        let mut embedding = [0.0; EMBED_DIM];
        for e in &mut embedding {
            *e = rng.random_range(-0.5..0.5);
        }
        let diffuse = smooth_color(center, phase);
        scene.push(&Gaussian {
            center,
            rotation: quat_z_to(dir),
            scale: [
                base * rng.random_range(0.8..1.3),
                base * rng.random_range(0.8..1.3),
                base * rng.random_range(0.3..0.6),
            ],
            opacity: rng.random_range(0.7..0.95),
            diffuse,
            specular: [rng.random_range(0.3..0.8); 3],
            scatter: diffuse.map(|c| 0.5 * c + 0.2),
            embedding,
        });
    }

    let opts = RenderOptions {
        mask: Composition::D.mask(),
        ..RenderOptions::default()
    };
    let cam_jitter: f64 = rng.random_range(0.0..6.3);
    let light_jitter: f64 = rng.random_range(0.0..6.3);
    let mut frames = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let eye = sphere_point(k, spec.frames, true, cam_jitter).map(|v| v * spec.camera_radius);
        let light = sphere_point(k, spec.frames, false, light_jitter).map(|v| v * spec.light_radius);
        let up = if eye[0].abs() + eye[1].abs() < 1e-6 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let camera = Camera::look_at(eye, [0.0; 3], up, spec.image_size, spec.image_size, spec.fov_deg.to_radians());
        let image = render(&scene, &camera, light, &opts).image;
        frames.push(OlatFrame {
            id: format!("r_{k:03}"),
            image,
            camera,
            light,
        });
    }
    Synthetic { scene, frames }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            gaussians: 30,
            frames: 3,
            image_size: 24,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = make_synthetic(&small());
        let b = make_synthetic(&small());
        for (x, y) in a.frames.iter().zip(&b.frames) {
            assert_eq!(x.image.data, y.image.data);
        }
        let c = make_synthetic(&SyntheticSpec { seed: 1, ..small() });
        assert_ne!(a.frames[0].image.data, c.frames[0].image.data);
    }

    #[test]
    fn ground_truth_reproduces_its_frames() {
        let s = make_synthetic(&small());
        let opts = RenderOptions {
            mask: Composition::D.mask(),
            ..RenderOptions::default()
        };
        for f in &s.frames {
            f.validate().unwrap();
            let img = render(&s.scene, &f.camera, f.light, &opts).image;
            assert_eq!(psnr(&img, &f.image).unwrap(), f64::INFINITY);
        }
    }

    #[test]
    fn frames_are_not_blank() {
        let s = make_synthetic(&small());
        for f in &s.frames {
            let l = f.image.mean_luma();
            assert!(l > 0.01, "{} mean luma {l}", f.id);
        }
    }
}
