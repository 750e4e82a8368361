//! Two-stage shadowing: per-ray transmittance through the splats, a
//! density-weighted coarse visibility per receiver, and a small network that
//! refines it.

use alloc::vec::Vec;

use crate::geometry::{self, Camera, Gaussian, Projected};
use crate::math::{self, Vec3};
use crate::nn::{encoded_len, positional_encoding, Mlp};
use crate::real::{logit, Real};

/// Occluders whose closest approach is within this distance of the receiver are ignored.
pub const GUARD_BAND: f64 = 1e-3;
/// Upper bound on rays per receiver in stratified mode (an 8x8 grid).
pub const MAX_RAYS: usize = 64;
pub const SHADOW_LEVELS: usize = 3;
pub const SHADOW_HIDDEN: usize = 32;
/// `PE(x, 3) ⧺ PE(ω_i, 3) ⧺ v̂ ⧺ m`
pub const SHADOW_INPUT: usize = 2 * encoded_len(SHADOW_LEVELS) + 1 + 6;
/// Coarse visibility is clamped to this margin before taking its logit.
pub const LOGIT_MARGIN: f64 = 1e-4;

pub fn shadow_layer_sizes() -> Vec<usize> {
    alloc::vec![SHADOW_INPUT, SHADOW_HIDDEN, SHADOW_HIDDEN, 1]
}

/// A Gaussian seen as a light blocker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occluder {
    pub center: [f64; 3],
    /// Inverse covariance `R S⁻² Rᵀ`.
    pub precision: [[f64; 3]; 3],
    pub opacity: f64,
}

impl Occluder {
    pub fn from_gaussian(g: &Gaussian) -> Self {
        let r = g.rotation_matrix();
        let inv_var = g.scale.map(|s| 1.0 / (s * s));
        let mut p = [[0.0; 3]; 3];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| r[i][k] * inv_var[k] * r[j][k]).sum();
            }
        }
        Occluder {
            center: g.center,
            precision: p,
            opacity: g.opacity,
        }
    }
}

pub fn occluders(gaussians: &[Gaussian]) -> Vec<Occluder> {
    gaussians.iter().map(Occluder::from_gaussian).collect()
}

/// Effective alpha of `occ` along the segment `light → target`: opacity times the
/// density at the point of the line closest to the center in the Mahalanobis
/// metric. `None` when that point is not strictly between the light and the
/// guard band in front of the target.
pub fn occluder_alpha(light: [f64; 3], target: [f64; 3], occ: &Occluder) -> Option<f64> {
    let d = math::sub3(target, light);
    let len = math::norm3(d);
    let pd = math::mat_vec(&occ.precision, d);
    let dpd = math::dot3(d, pd);
    if !(dpd > 0.0) {
        return None;
    }
    let oc = math::sub3(occ.center, light);
    let t = math::dot3(oc, pd) / dpd;
    if t <= 0.0 || t * len >= len - GUARD_BAND {
        return None;
    }
    let delta = math::sub3(math::add3(light, math::scale3(d, t)), occ.center);
    let m2 = math::dot3(delta, math::mat_vec(&occ.precision, delta));
    Some(occ.opacity * libm::exp(-0.5 * m2))
}

/// `∏ (1 − α_k)` over the occluders crossed by the segment, skipping `exclude`.
pub fn ray_transmittance(
    light: [f64; 3],
    target: [f64; 3],
    occluders: &[Occluder],
    exclude: Option<usize>,
) -> f64 {
    let mut t = 1.0;
    for (k, occ) in occluders.iter().enumerate() {
        if Some(k) == exclude {
            continue;
        }
        if let Some(a) = occluder_alpha(light, target, occ) {
            t *= 1.0 - a;
        }
    }
    t
}

/// Which footprint pixels cast rays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RaySampling {
    /// Every covered pixel.
    Exact,
    /// At most `n×n` pixels on a regular grid over the clipped footprint box.
    Stratified(usize),
}

impl Default for RaySampling {
    fn default() -> Self {
        RaySampling::Stratified(8)
    }
}

/// Result of the coarse stage for one receiver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseVisibility {
    /// `Σ ρ_i v_i / Σ ρ_i`, in `[0, 1]`.
    pub value: f64,
    /// The receiver had no projected density (culled or off-screen); `value` is 1.
    pub zero_density: bool,
    pub rays: usize,
}

impl CoarseVisibility {
    fn unoccluded() -> Self {
        CoarseVisibility {
            value: 1.0,
            zero_density: true,
            rays: 0,
        }
    }
}

/// Inclusive pixel range `[lo, hi]` whose centers fall within `mean ± radius`,
/// clipped to `[0, extent)`. `None` when empty.
pub fn footprint_span(mean: f64, radius: f64, extent: u32) -> Option<(u32, u32)> {
    let lo = libm::ceil(mean - radius - 0.5);
    let hi = libm::floor(mean + radius - 0.5);
    let lo = if lo < 0.0 { 0.0 } else { lo };
    let hi = if hi > extent as f64 - 1.0 { extent as f64 - 1.0 } else { hi };
    if !(lo <= hi) {
        return None;
    }
    Some((lo as u32, hi as u32))
}

fn grid_indices(lo: u32, hi: u32, cells: usize) -> impl Iterator<Item = u32> {
    let count = (hi - lo + 1) as usize;
    let n = cells.min(count).max(1);
    (0..n).map(move |k| lo + ((k * count + count / 2) / n).min(count - 1) as u32)
}

/// Density-weighted visibility of receiver `index` (whose decoded form is `g`)
/// over its projected footprint in `cam`. Ray targets are the pixel back-projected
/// onto the camera-parallel plane through the receiver center.
pub fn coarse_visibility(
    g: &Gaussian,
    index: usize,
    occluders: &[Occluder],
    light: [f64; 3],
    cam: &Camera,
    sampling: RaySampling,
) -> CoarseVisibility {
    match geometry::project(g, cam) {
        Some(p) => coarse_visibility_projected(&p, g.opacity, index, occluders, light, cam, sampling),
        None => CoarseVisibility::unoccluded(),
    }
}

/// As [`coarse_visibility`] with the projection already at hand.
pub fn coarse_visibility_projected(
    p: &Projected<f64>,
    opacity: f64,
    index: usize,
    occluders: &[Occluder],
    light: [f64; 3],
    cam: &Camera,
    sampling: RaySampling,
) -> CoarseVisibility {
    let radius = geometry::splat_radius(p.cov);
    let (Some(xs), Some(ys)) = (
        footprint_span(p.mean[0], radius, cam.width),
        footprint_span(p.mean[1], radius, cam.height),
    ) else {
        return CoarseVisibility::unoccluded();
    };
    let mut num = 0.0;
    let mut den = 0.0;
    let mut rays = 0;
    let mut visit = |x: u32, y: u32| {
        let px = geometry::pixel_center(x, y);
        let rho = opacity * geometry::gaussian_weight(p.mean, p.cov, px);
        if rho <= 0.0 {
            return;
        }
        let target = cam.unproject(px[0], px[1], p.depth);
        num += rho * ray_transmittance(light, target, occluders, Some(index));
        den += rho;
        rays += 1;
    };
    let pixels = (xs.1 - xs.0 + 1) as usize * (ys.1 - ys.0 + 1) as usize;
    match sampling {
        RaySampling::Stratified(n) if pixels > n * n => {
            for y in grid_indices(ys.0, ys.1, n) {
                for x in grid_indices(xs.0, xs.1, n) {
                    visit(x, y);
                }
            }
        }
        _ => {
            for y in ys.0..=ys.1 {
                for x in xs.0..=xs.1 {
                    visit(x, y);
                }
            }
        }
    }
    if den <= 0.0 {
        return CoarseVisibility::unoccluded();
    }
    CoarseVisibility {
        value: (num / den).clamp(0.0, 1.0),
        zero_density: false,
        rays,
    }
}

/// Appends the refinement network input for one receiver.
pub fn shadow_input<S: Real>(x: Vec3<S>, wi: Vec3<S>, coarse: S, m: &[S], out: &mut Vec<S>) {
    positional_encoding(x.to_array(), SHADOW_LEVELS, out);
    positional_encoding(wi.to_array(), SHADOW_LEVELS, out);
    out.push(coarse);
    out.extend_from_slice(m);
}

/// `sigmoid(logit(v̂) + net_out)`: the network learns a correction in logit space,
/// so a zero output layer leaves the coarse estimate unchanged.
pub fn residual_shadow<S: Real>(coarse: f64, net_out: S) -> S {
    let base = logit(coarse.clamp(LOGIT_MARGIN, 1.0 - LOGIT_MARGIN));
    (net_out + base).sigmoid()
}

/// Refined shadow factor `S` for one receiver.
pub fn refine_shadow(net: &Mlp, x: [f64; 3], wi: [f64; 3], coarse: f64, m: &[f64; 6]) -> f64 {
    let mut input = Vec::with_capacity(SHADOW_INPUT);
    shadow_input(Vec3::from_array(x), Vec3::from_array(wi), coarse, m, &mut input);
    residual_shadow(coarse, net.forward(&input)[0])
}

/// Per-frame shadow bookkeeping, indexed by Gaussian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisibilityRecord {
    pub coarse: Vec<f64>,
    pub zero_density: Vec<bool>,
    pub refined: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blocker(center: [f64; 3], opacity: f64) -> Occluder {
        Occluder::from_gaussian(&Gaussian::isotropic(center, 0.1, opacity))
    }

    #[test]
    fn empty_scene_is_fully_lit() {
        assert_eq!(ray_transmittance([0.0, 0.0, 5.0], [0.0; 3], &[], None), 1.0);
    }

    #[test]
    fn single_and_triple_occluders() {
        let light = [0.0, 0.0, 5.0];
        let one = [blocker([0.0, 0.0, 2.0], 0.3)];
        assert!((ray_transmittance(light, [0.0; 3], &one, None) - 0.7).abs() < 1e-15);
        let three = [
            blocker([0.0, 0.0, 1.0], 0.5),
            blocker([0.0, 0.0, 2.0], 0.5),
            blocker([0.0, 0.0, 3.0], 0.5),
        ];
        assert!((ray_transmittance(light, [0.0; 3], &three, None) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn receiver_and_points_behind_are_ignored() {
        let light = [0.0, 0.0, 5.0];
        let occ = [blocker([0.0, 0.0, 0.0], 0.9), blocker([0.0, 0.0, -1.0], 0.9), blocker([0.0, 0.0, 6.0], 0.9)];
        assert_eq!(ray_transmittance(light, [0.0; 3], &occ, Some(0)), 1.0);
        // the receiver itself sits inside the guard band anyway
        assert_eq!(ray_transmittance(light, [0.0; 3], &occ, None), 1.0);
    }

    #[test]
    fn opaque_blocker_darkens_receiver() {
        let cam = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 32, 32, 40f64.to_radians());
        let receiver = Gaussian::isotropic([0.0; 3], 0.1, 0.8);
        let mut scene = alloc::vec![receiver.clone()];
        let light = [0.0, 0.0, 3.0];
        let free = coarse_visibility(&receiver, 0, &occluders(&scene), light, &cam, RaySampling::Exact);
        assert_eq!(free.value, 1.0);
        assert!(!free.zero_density);
        let mut wall = Gaussian::isotropic([0.0, 0.0, 1.5], 2.0, 1.0);
        wall.scale = [2.0, 2.0, 0.01];
        scene.push(wall);
        let dark = coarse_visibility(&receiver, 0, &occluders(&scene), light, &cam, RaySampling::Exact);
        assert!(dark.value < 0.02, "{}", dark.value);
    }

    #[test]
    fn transparent_receiver_reports_zero_density() {
        let cam = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 32, 32, 0.7);
        let g = Gaussian::isotropic([0.0; 3], 0.1, 0.0);
        let v = coarse_visibility(&g, 0, &[], [1.0; 3], &cam, RaySampling::Exact);
        assert_eq!(v, CoarseVisibility::unoccluded());
    }

    #[test]
    fn stratified_mode_caps_ray_count() {
        let cam = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 64, 64, 0.7);
        let g = Gaussian::isotropic([0.0; 3], 0.5, 0.9);
        let v = coarse_visibility(&g, 0, &[], [0.0, 3.0, 3.0], &cam, RaySampling::Stratified(8));
        assert!(v.rays <= MAX_RAYS && v.rays > 0);
        let e = coarse_visibility(&g, 0, &[], [0.0, 3.0, 3.0], &cam, RaySampling::Exact);
        assert!(e.rays > MAX_RAYS);
    }

    #[test]
    fn residual_initialization_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Mlp::uniform(&shadow_layer_sizes(), &mut rng).unwrap();
        net.zero_output_layer();
        for v in [0.0, 0.2, 0.5, 0.93, 1.0] {
            let s = refine_shadow(&net, [0.3, 0.1, -0.2], [0.0, 0.0, 1.0], v, &[0.1; 6]);
            assert!((s - v).abs() < 0.05 && (s - v).abs() <= LOGIT_MARGIN + 1e-12);
        }
        assert_eq!(SHADOW_INPUT, 49);
    }

    #[test]
    fn footprint_span_clips() {
        assert_eq!(footprint_span(5.0, 1.0, 100), Some((4, 5)));
        assert_eq!(footprint_span(-10.0, 1.0, 100), None);
        assert_eq!(footprint_span(0.5, 30.0, 8), Some((0, 7)));
    }
}
