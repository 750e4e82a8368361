//! Four-term reflectance: `C = (c_d f_d + c_s f_s) · S + c_sss f_sss`.
//!
//! `f_d` is Lambertian, `f_s` is Schlick Fresnel times a mixture of global
//! anisotropic spherical Gaussians evaluated at the half vector, `S` comes from
//! [`crate::shadow`] and `f_sss` from [`crate::sss`].

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::math::{quat_to_mat, Vec3};
use crate::real::{logit, sigmoid, Real};

/// Half vectors shorter than this (before normalization) are treated as undefined.
pub const DEGENERATE_HALF: f64 = 1e-8;
pub const DEFAULT_LOBES: usize = 8;
pub const DEFAULT_F0: f64 = 0.04;

/// Which reflectance terms contribute, plus the shadow-on-scattering variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TermMask {
    pub diffuse: bool,
    pub specular: bool,
    pub sss: bool,
    pub shadow: bool,
    /// Apply the shadow factor to the scattering term as well.
    pub shadow_on_sss: bool,
}

impl TermMask {
    pub const FULL: TermMask = TermMask {
        diffuse: true,
        specular: true,
        sss: true,
        shadow: true,
        shadow_on_sss: false,
    };
    pub const NONE: TermMask = TermMask {
        diffuse: false,
        specular: false,
        sss: false,
        shadow: false,
        shadow_on_sss: false,
    };

    pub fn intersect(self, o: TermMask) -> TermMask {
        TermMask {
            diffuse: self.diffuse && o.diffuse,
            specular: self.specular && o.specular,
            sss: self.sss && o.sss,
            shadow: self.shadow && o.shadow,
            shadow_on_sss: self.shadow_on_sss || o.shadow_on_sss,
        }
    }
}

impl Default for TermMask {
    fn default() -> Self {
        TermMask::FULL
    }
}

/// Named reflectance compositions used in ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Composition {
    /// Diffuse only.
    A,
    /// Diffuse + specular.
    B,
    /// Diffuse + specular + scattering, no shadow.
    C,
    /// Everything.
    D,
    /// Everything except specular.
    E,
    /// Everything except scattering.
    F,
}

impl Composition {
    pub const ALL: [Composition; 6] = [
        Composition::A,
        Composition::B,
        Composition::C,
        Composition::D,
        Composition::E,
        Composition::F,
    ];

    pub fn mask(self) -> TermMask {
        let (specular, sss, shadow) = match self {
            Composition::A => (false, false, false),
            Composition::B => (true, false, false),
            Composition::C => (true, true, false),
            Composition::D => (true, true, true),
            Composition::E => (false, true, true),
            Composition::F => (true, false, true),
        };
        TermMask {
            diffuse: true,
            specular,
            sss,
            shadow,
            shadow_on_sss: false,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Composition::A => "A",
            Composition::B => "B",
            Composition::C => "C",
            Composition::D => "D",
            Composition::E => "E",
            Composition::F => "F",
        }
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown composition `{0}` (expected one of A-F)")]
pub struct UnknownComposition(pub alloc::string::String);

impl FromStr for Composition {
    type Err = UnknownComposition;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Composition::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownComposition(s.into()))
    }
}

/// Per-Gaussian, per-light quantities that feed the shading equation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadingSample {
    /// Gaussian center towards the light.
    pub wi: [f64; 3],
    /// Gaussian center towards the camera.
    pub wo: [f64; 3],
    pub normal: [f64; 3],
    pub half: [f64; 3],
    pub f_d: f64,
    pub f_s: f64,
    pub f_sss: f64,
    pub shadow: f64,
}

/// Global ASG mixture plus the scene-wide Fresnel base reflectance.
///
/// Storage is unconstrained: `lobes` holds, per lobe, a frame quaternion
/// `[w, x, y, z]` followed by `ln λ` and `ln μ`; `log_weights` holds `ln α_j`;
/// `f0_logit` is `logit(F₀)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AsgBank {
    pub lobes: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub f0_logit: f64,
}

pub const LOBE_STRIDE: usize = 6;

/// Decoded lobe.
#[derive(Clone, Copy, Debug)]
pub struct AsgLobe<S> {
    pub x_axis: Vec3<S>,
    pub y_axis: Vec3<S>,
    pub z_axis: Vec3<S>,
    pub lambda: S,
    pub mu: S,
    pub weight: S,
}

impl AsgBank {
    /// `n` lobes whose axes are spread over the sphere, unit bandwidths of
    /// `bandwidth`, equal weights of `weight`.
    pub fn spread(n: usize, bandwidth: f64, weight: f64) -> Self {
        let golden = core::f64::consts::PI * (3.0 - libm::sqrt(5.0));
        let mut lobes = Vec::with_capacity(n * LOBE_STRIDE);
        for j in 0..n {
            // Fibonacci sphere direction for the lobe axis
            let z = 1.0 - 2.0 * (j as f64 + 0.5) / n as f64;
            let r = libm::sqrt(libm::fmax(1.0 - z * z, 0.0));
            let phi = golden * j as f64;
            let axis = [r * libm::cos(phi), r * libm::sin(phi), z];
            let q = quat_rotating_z_to(axis, phi);
            lobes.extend_from_slice(&q);
            lobes.push(libm::log(bandwidth));
            lobes.push(libm::log(bandwidth * 0.5));
        }
        AsgBank {
            lobes,
            log_weights: alloc::vec![libm::log(weight); n],
            f0_logit: logit(DEFAULT_F0),
        }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn f0(&self) -> f64 {
        sigmoid(self.f0_logit)
    }

    pub fn lobe(&self, j: usize) -> AsgLobe<f64> {
        let p = &self.lobes[j * LOBE_STRIDE..(j + 1) * LOBE_STRIDE];
        decode_lobe([p[0], p[1], p[2], p[3]], p[4], p[5], self.log_weights[j])
    }

    pub fn decoded(&self) -> Vec<AsgLobe<f64>> {
        (0..self.len()).map(|j| self.lobe(j)).collect()
    }
}

/// Quaternion whose rotation maps +z onto `axis`, with an extra twist `twist` about it.
fn quat_rotating_z_to(axis: [f64; 3], twist: f64) -> [f64; 4] {
    let (ct, st) = (libm::cos(twist * 0.5), libm::sin(twist * 0.5));
    let twist_q = [ct, 0.0, 0.0, st];
    // shortest arc z -> axis
    let d = axis[2];
    let align = if d < -1.0 + 1e-12 {
        [0.0, 1.0, 0.0, 0.0]
    } else {
        let c = [-axis[1], axis[0], 0.0];
        let w = 1.0 + d;
        let n = libm::sqrt(w * w + c[0] * c[0] + c[1] * c[1]);
        [w / n, c[0] / n, c[1] / n, 0.0]
    };
    quat_mul(align, twist_q)
}

fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Lobe frame from its quaternion: `x`, `y` are the first two rotated axes.
pub fn decode_lobe<S: Real>(q: [S; 4], log_lambda: S, log_mu: S, log_weight: S) -> AsgLobe<S> {
    let r = quat_to_mat(q);
    AsgLobe {
        x_axis: r.col(0),
        y_axis: r.col(1),
        z_axis: r.col(2),
        lambda: log_lambda.exp(),
        mu: log_mu.exp(),
        weight: log_weight.exp(),
    }
}

/// Rotated local z axis, flipped to face the camera.
pub fn normal<S: Real>(q: [S; 4], center: Vec3<S>, camera_center: Vec3<S>) -> Vec3<S> {
    let z = quat_to_mat(q).col(2);
    let to_cam = camera_center.sub(center);
    if z.dot(to_cam).value() < 0.0 {
        z.neg()
    } else {
        z
    }
}

/// Lambertian `max(0, n·ωᵢ)`.
pub fn diffuse<S: Real>(n: Vec3<S>, wi: Vec3<S>) -> S {
    n.dot(wi).relu()
}

/// Schlick: `F₀ + (1 − F₀)(1 − ω_o·h)⁵`, cosine clamped to `[0, 1]`.
pub fn fresnel<S: Real>(wo: Vec3<S>, h: Vec3<S>, f0: S) -> S {
    let c = wo.dot(h).clamp(0.0, 1.0);
    let k = (-c + 1.0).powi(5);
    f0 + (-f0 + 1.0) * k
}

/// `exp(−λ (h·x)² − μ (h·y)²)`
pub fn asg_lobe<S: Real>(h: Vec3<S>, lobe: &AsgLobe<S>) -> S {
    let hx = h.dot(lobe.x_axis);
    let hy = h.dot(lobe.y_axis);
    (-(lobe.lambda * hx * hx) - lobe.mu * hy * hy).exp()
}

/// Half vector, or `None` when `ωᵢ ≈ −ω_o`.
pub fn half_vector<S: Real>(wo: Vec3<S>, wi: Vec3<S>) -> Option<Vec3<S>> {
    let s = wo.add(wi);
    if s.norm_sq().value() < DEGENERATE_HALF * DEGENERATE_HALF {
        None
    } else {
        Some(s.normalize())
    }
}

/// `F(ω_o, h) · Σ_j α_j G_j(h)`; zero for a degenerate half vector.
pub fn specular<S: Real>(wo: Vec3<S>, wi: Vec3<S>, lobes: &[AsgLobe<S>], f0: S) -> S {
    let Some(h) = half_vector(wo, wi) else {
        return f0.lift(0.0);
    };
    let f = fresnel(wo, h, f0);
    let mut d = f0.lift(0.0);
    for lobe in lobes {
        d = d + asg_lobe(h, lobe) * lobe.weight;
    }
    f * d
}

/// Base colors of one Gaussian.
#[derive(Clone, Copy, Debug)]
pub struct BaseColors<S> {
    pub diffuse: [S; 3],
    pub specular: [S; 3],
    pub scatter: [S; 3],
}

/// Term intensities of one Gaussian; `None` means the term is not evaluated.
#[derive(Clone, Copy, Debug)]
pub struct TermValues<S> {
    pub f_d: Option<S>,
    pub f_s: Option<S>,
    pub f_sss: Option<S>,
    pub shadow: Option<S>,
}

/// Combines the terms into an RGB color. Disabled terms contribute nothing and
/// a missing shadow factor means "unshadowed" (no multiplication at all).
pub fn shade<S: Real>(colors: &BaseColors<S>, t: &TermValues<S>, shadow_on_sss: bool) -> [S; 3] {
    let mut out: [Option<S>; 3] = [None; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut direct: Option<S> = None;
        if let Some(fd) = t.f_d {
            direct = Some(colors.diffuse[k] * fd);
        }
        if let Some(fs) = t.f_s {
            let v = colors.specular[k] * fs;
            direct = Some(match direct {
                Some(d) => d + v,
                None => v,
            });
        }
        let scatter = t.f_sss.map(|f| colors.scatter[k] * f);
        let combined = match (t.shadow, shadow_on_sss) {
            (Some(s), true) => sum_opt(direct, scatter).map(|v| v * s),
            (Some(s), false) => sum_opt(direct.map(|d| d * s), scatter),
            (None, _) => sum_opt(direct, scatter),
        };
        *o = combined;
    }
    let zero = colors.diffuse[0].lift(0.0);
    out.map(|v| v.unwrap_or(zero))
}

fn sum_opt<S: Real>(a: Option<S>, b: Option<S>) -> Option<S> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a + b),
        (a, None) => a,
        (None, b) => b,
    }
}

/// `shade` on plain numbers with every term present.
pub fn shade_sample(colors: &BaseColors<f64>, sample: &ShadingSample, mask: TermMask) -> [f64; 3] {
    let t = TermValues {
        f_d: mask.diffuse.then_some(sample.f_d),
        f_s: mask.specular.then_some(sample.f_s),
        f_sss: mask.sss.then_some(sample.f_sss),
        shadow: mask.shadow.then_some(sample.shadow),
    };
    shade(colors, &t, mask.shadow_on_sss)
}
