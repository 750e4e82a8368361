//! Scene storage: unconstrained per-Gaussian parameters in flat arrays plus the
//! shared shading assets.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::Gaussian;
use crate::math::{normalize3, quat_to_mat};
use crate::nn::{Mlp, MlpError};
use crate::params::ParamBlock;
use crate::real::{logit, sigmoid};
use crate::shading::{AsgBank, DEFAULT_LOBES};
use crate::shadow::shadow_layer_sizes;
use crate::sss::sss_layer_sizes;

pub const EMBED_DIM: usize = 6;
/// Default Gaussian count for a fresh scene.
pub const DEFAULT_COUNT: usize = 10_000;
/// Colors are kept this far from 0 and 1 when encoded as logits.
const COLOR_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("field `{field}` has {got} values, expected {expected}")]
    FieldLength {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{net} network has layers {got:?}, expected {expected:?}")]
    Architecture {
        net: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("ASG bank is inconsistent: {0} lobe values for {1} weights")]
    AsgBank(usize, usize),
    #[error("scene contains a non-finite value in `{0}`")]
    NonFinite(&'static str),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

/// All Gaussians of a scene plus the ASG bank and both networks.
///
/// Stored values are unconstrained: rotations are raw quaternions
/// (renormalized after each step), scales are logarithms, opacity and colors are
/// logits.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub diffuse_logits: Vec<f64>,
    pub specular_logits: Vec<f64>,
    pub scatter_logits: Vec<f64>,
    pub embeddings: Vec<f64>,
    pub asg: AsgBank,
    pub sss_net: Arc<Mlp>,
    pub shadow_net: Arc<Mlp>,
}

fn color_logit(c: f64) -> f64 {
    logit(c.clamp(COLOR_MARGIN, 1.0 - COLOR_MARGIN))
}

impl GaussianScene {
    /// Empty scene with the given shared assets.
    pub fn empty(asg: AsgBank, sss_net: Mlp, shadow_net: Mlp) -> Self {
        GaussianScene {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            diffuse_logits: Vec::new(),
            specular_logits: Vec::new(),
            scatter_logits: Vec::new(),
            embeddings: Vec::new(),
            asg,
            sss_net: Arc::new(sss_net),
            shadow_net: Arc::new(shadow_net),
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    /// Appends a decoded Gaussian.
    pub fn push(&mut self, g: &Gaussian) {
        self.positions.extend_from_slice(&g.center);
        self.rotations.extend_from_slice(&g.rotation);
        self.log_scales.extend(g.scale.iter().map(|s| libm::log(*s)));
        self.opacity_logits.push(color_logit(g.opacity));
        self.diffuse_logits.extend(g.diffuse.iter().map(|c| color_logit(*c)));
        self.specular_logits.extend(g.specular.iter().map(|c| color_logit(*c)));
        self.scatter_logits.extend(g.scatter.iter().map(|c| color_logit(*c)));
        self.embeddings.extend_from_slice(&g.embedding);
    }

    /// Decoded view of Gaussian `i`.
    pub fn gaussian(&self, i: usize) -> Gaussian {
        let v3 = |a: &[f64], f: fn(f64) -> f64| [f(a[3 * i]), f(a[3 * i + 1]), f(a[3 * i + 2])];
        let q = &self.rotations[4 * i..4 * i + 4];
        let n = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
        let mut embedding = [0.0; EMBED_DIM];
        embedding.copy_from_slice(&self.embeddings[EMBED_DIM * i..EMBED_DIM * (i + 1)]);
        Gaussian {
            center: v3(&self.positions, |v| v),
            rotation: [q[0] / n, q[1] / n, q[2] / n, q[3] / n],
            scale: v3(&self.log_scales, libm::exp),
            opacity: sigmoid(self.opacity_logits[i]),
            diffuse: v3(&self.diffuse_logits, sigmoid),
            specular: v3(&self.specular_logits, sigmoid),
            scatter: v3(&self.scatter_logits, sigmoid),
            embedding,
        }
    }

    pub fn gaussians(&self) -> Vec<Gaussian> {
        (0..self.len()).map(|i| self.gaussian(i)).collect()
    }

    pub fn center(&self, i: usize) -> [f64; 3] {
        [self.positions[3 * i], self.positions[3 * i + 1], self.positions[3 * i + 2]]
    }

    /// Axis-aligned bounds of the centers, `None` for an empty scene.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        if self.is_empty() {
            return None;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in self.positions.chunks_exact(3) {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }

    /// Raw values of a parameter block; `None` for blocks that live outside the
    /// scene (camera and light deltas).
    pub fn block(&self, b: ParamBlock) -> Option<&[f64]> {
        Some(match b {
            ParamBlock::Position => &self.positions,
            ParamBlock::Rotation => &self.rotations,
            ParamBlock::Scale => &self.log_scales,
            ParamBlock::Opacity => &self.opacity_logits,
            ParamBlock::DiffuseColor => &self.diffuse_logits,
            ParamBlock::SpecularColor => &self.specular_logits,
            ParamBlock::SssColor => &self.scatter_logits,
            ParamBlock::Embedding => &self.embeddings,
            ParamBlock::SssNet => self.sss_net.params(),
            ParamBlock::ShadowNet => self.shadow_net.params(),
            ParamBlock::AsgLobes => &self.asg.lobes,
            ParamBlock::AsgWeights => &self.asg.log_weights,
            ParamBlock::Fresnel => core::slice::from_ref(&self.asg.f0_logit),
            ParamBlock::CameraDelta | ParamBlock::LightDelta => return None,
        })
    }

    pub fn block_mut(&mut self, b: ParamBlock) -> Option<&mut [f64]> {
        Some(match b {
            ParamBlock::Position => &mut self.positions,
            ParamBlock::Rotation => &mut self.rotations,
            ParamBlock::Scale => &mut self.log_scales,
            ParamBlock::Opacity => &mut self.opacity_logits,
            ParamBlock::DiffuseColor => &mut self.diffuse_logits,
            ParamBlock::SpecularColor => &mut self.specular_logits,
            ParamBlock::SssColor => &mut self.scatter_logits,
            ParamBlock::Embedding => &mut self.embeddings,
            ParamBlock::SssNet => Arc::make_mut(&mut self.sss_net).params_mut(),
            ParamBlock::ShadowNet => Arc::make_mut(&mut self.shadow_net).params_mut(),
            ParamBlock::AsgLobes => &mut self.asg.lobes,
            ParamBlock::AsgWeights => &mut self.asg.log_weights,
            ParamBlock::Fresnel => core::slice::from_mut(&mut self.asg.f0_logit),
            ParamBlock::CameraDelta | ParamBlock::LightDelta => return None,
        })
    }

    /// Checks array lengths, network architectures and finiteness.
    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.len();
        let fields: [(&'static str, &[f64], usize); 7] = [
            ("positions", &self.positions, 3),
            ("rotations", &self.rotations, 4),
            ("log_scales", &self.log_scales, 3),
            ("diffuse_logits", &self.diffuse_logits, 3),
            ("specular_logits", &self.specular_logits, 3),
            ("scatter_logits", &self.scatter_logits, 3),
            ("embeddings", &self.embeddings, EMBED_DIM),
        ];
        for (field, v, k) in fields {
            if v.len() != n * k {
                return Err(SceneError::FieldLength {
                    field,
                    expected: n * k,
                    got: v.len(),
                });
            }
        }
        for (net, m, expected) in [
            ("scattering", &self.sss_net, sss_layer_sizes()),
            ("shadow", &self.shadow_net, shadow_layer_sizes()),
        ] {
            if m.sizes() != expected.as_slice() {
                return Err(SceneError::Architecture {
                    net,
                    expected,
                    got: m.sizes().to_vec(),
                });
            }
        }
        if self.asg.lobes.len() != self.asg.len() * crate::shading::LOBE_STRIDE {
            return Err(SceneError::AsgBank(self.asg.lobes.len(), self.asg.len()));
        }
        for b in ParamBlock::ALL {
            if let Some(v) = self.block(b) {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(SceneError::NonFinite(b.name()));
                }
            }
        }
        Ok(())
    }
}

/// Knobs for [`init_scene_with`].
#[derive(Clone, Debug, PartialEq)]
pub struct InitOptions {
    pub count: usize,
    pub seed: u64,
    /// Number of ASG lobes.
    pub lobes: usize,
    /// Standard deviation of the material-embedding noise.
    pub embedding_noise: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            count: DEFAULT_COUNT,
            seed: 0,
            lobes: DEFAULT_LOBES,
            embedding_noise: 0.01,
        }
    }
}

/// Isotropic scale that lets `n` splats roughly tile the unit sphere.
pub fn initial_scale(n: usize) -> f64 {
    0.5 * libm::sqrt(4.0 * core::f64::consts::PI / n as f64)
}

/// Fresh scene of `n` Gaussians on the unit sphere.
pub fn init_scene(n: usize, seed: u64) -> GaussianScene {
    init_scene_with(&InitOptions {
        count: n,
        seed,
        ..InitOptions::default()
    })
}

pub fn init_scene_with(opts: &InitOptions) -> GaussianScene {
    assert!(opts.count >= 1, "scene needs at least one Gaussian");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sss_net = Mlp::uniform(&sss_layer_sizes(), &mut rng).expect("static architecture");
    let mut shadow_net = Mlp::uniform(&shadow_layer_sizes(), &mut rng).expect("static architecture");
    shadow_net.zero_output_layer();
    let mut scene = GaussianScene::empty(AsgBank::spread(opts.lobes, 8.0, 0.2), sss_net, shadow_net);
    let scale = initial_scale(opts.count);
    for _ in 0..opts.count {
        let center = unit_vector(&mut rng);
        let mut embedding = [0.0; EMBED_DIM];
        for e in &mut embedding {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e = z * opts.embedding_noise;
        }
        scene.push(&Gaussian {
            center,
            rotation: quat_z_to(center),
            scale: [scale; 3],
            opacity: 0.5,
            diffuse: [0.5; 3],
            specular: [0.5; 3],
            scatter: [0.5; 3],
            embedding,
        });
    }
    scene
}

/// Uniform direction on the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-12 {
            return normalize3(v);
        }
    }
}

/// Unit quaternion rotating +z onto `dir`.
pub fn quat_z_to(dir: [f64; 3]) -> [f64; 4] {
    let d = normalize3(dir);
    if d[2] < -1.0 + 1e-12 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let w = 1.0 + d[2];
    let q = [w, -d[1], d[0], 0.0];
    let n = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
    let q = q.map(|v| v / n);
    debug_assert!({
        let z = quat_to_mat(q).col(2).values();
        (0..3).all(|k| libm::fabs(z[k] - d[k]) < 1e-9)
    });
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_lie_on_the_unit_sphere() {
        let s = init_scene(500, 3);
        for i in 0..s.len() {
            let c = s.center(i);
            let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
        s.validate().unwrap();
    }

    #[test]
    fn same_seed_same_scene() {
        assert_eq!(init_scene(50, 9), init_scene(50, 9));
        assert_ne!(init_scene(50, 9), init_scene(50, 10));
    }

    #[test]
    fn fresh_gaussians_are_gray_half_opaque_isotropic() {
        let s = init_scene(10, 1);
        let g = s.gaussian(4);
        assert_eq!(g.opacity, 0.5);
        assert_eq!(g.diffuse, [0.5; 3]);
        assert_eq!(g.scale[0], g.scale[1]);
        assert_eq!(g.scale[1], g.scale[2]);
        assert_eq!(InitOptions::default().count, 10_000);
    }

    #[test]
    fn normals_point_outward() {
        let s = init_scene(20, 2);
        for i in 0..s.len() {
            let g = s.gaussian(i);
            let z = quat_to_mat(g.rotation).col(2).values();
            let d = z[0] * g.center[0] + z[1] * g.center[1] + z[2] * g.center[2];
            assert!((d - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn push_round_trips_decoded_values() {
        let mut s = init_scene(1, 0);
        let mut g = Gaussian::isotropic([0.1, 0.2, 0.3], 0.05, 0.7);
        g.diffuse = [0.2, 0.4, 0.9];
        s.push(&g);
        let back = s.gaussian(1);
        assert!((back.opacity - 0.7).abs() < 1e-12);
        for k in 0..3 {
            assert!((back.diffuse[k] - g.diffuse[k]).abs() < 1e-12);
            assert!((back.scale[k] - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn validate_catches_length_and_architecture_errors() {
        let mut s = init_scene(3, 0);
        s.embeddings.pop();
        assert!(matches!(s.validate(), Err(SceneError::FieldLength { field: "embeddings", .. })));
        let mut s = init_scene(3, 0);
        s.shadow_net = Arc::new(Mlp::zeros(&[49, 8, 1]).unwrap());
        assert!(matches!(s.validate(), Err(SceneError::Architecture { .. })));
    }
}
