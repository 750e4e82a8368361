//! Subsurface scattering: a neural field predicts per-Gaussian optical
//! parameters, which a dipole diffusion profile turns into an intensity.

use alloc::vec::Vec;

use crate::math::Vec3;
use crate::nn::{encoded_len, positional_encoding, Mlp};
use crate::real::Real;

/// Relative index of refraction.
pub const ETA: f64 = 1.3;
/// Frequency bands for the position and direction encodings.
pub const SSS_LEVELS: usize = 4;
pub const SSS_HIDDEN: usize = 256;
/// Linear layers in the scattering network.
pub const SSS_LAYERS: usize = 6;
/// `3·PE(·, 4)` plus the raw normal and the 6-d material embedding.
pub const SSS_INPUT: usize = 3 * encoded_len(SSS_LEVELS) + 3 + 6;

pub const SIGMA_RANGE: (f64, f64) = (0.05, 2.05);
pub const RADIUS_RANGE: (f64, f64) = (0.1, 3.1);

/// Layer widths of the scattering network: `90 → 256 ×5 → 3`.
pub fn sss_layer_sizes() -> Vec<usize> {
    let mut sizes = alloc::vec![SSS_INPUT];
    sizes.extend(core::iter::repeat_n(SSS_HIDDEN, SSS_LAYERS - 1));
    sizes.push(3);
    sizes
}

/// Scattering coefficient, absorption coefficient, surface separation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SssParams<S> {
    pub sigma_s: S,
    pub sigma_a: S,
    pub r: S,
}

impl<S: Real> SssParams<S> {
    /// Squashes raw network outputs into the admissible intervals.
    pub fn from_raw(raw: [S; 3]) -> Self {
        let span = |v: S, (lo, hi): (f64, f64)| v.sigmoid() * (hi - lo) + lo;
        SssParams {
            sigma_s: span(raw[0], SIGMA_RANGE),
            sigma_a: span(raw[1], SIGMA_RANGE),
            r: span(raw[2], RADIUS_RANGE),
        }
    }
}

impl SssParams<f64> {
    pub fn in_range(&self) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        inside(self.sigma_s, SIGMA_RANGE)
            && inside(self.sigma_a, SIGMA_RANGE)
            && inside(self.r, RADIUS_RANGE)
    }
}

/// Diffuse Fresnel reflectance `F_dr(η)` (rational fit).
pub fn fresnel_diffuse_reflectance(eta: f64) -> f64 {
    -1.440 / (eta * eta) + 0.710 / eta + 0.668 + 0.0636 * eta
}

/// Derived quantities of the dipole configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DipoleGeometry<S> {
    pub albedo: S,
    pub sigma_t: S,
    pub z_r: S,
    pub z_v: S,
    pub d_r: S,
    pub d_v: S,
    pub eta: f64,
}

impl<S: Real> DipoleGeometry<S> {
    pub fn new(p: &SssParams<S>, eta: f64) -> Self {
        let sigma_t = p.sigma_s + p.sigma_a;
        let albedo = p.sigma_s / sigma_t;
        let f_dr = fresnel_diffuse_reflectance(eta);
        let a = (1.0 + f_dr) / (1.0 - f_dr);
        let z_r = sigma_t.recip();
        let z_v = z_r * (1.0 + 4.0 * a / 3.0);
        let r2 = p.r * p.r;
        DipoleGeometry {
            albedo,
            sigma_t,
            z_r,
            z_v,
            d_r: (r2 + z_r * z_r).sqrt(),
            d_v: (r2 + z_v * z_v).sqrt(),
            eta,
        }
    }
}

/// Dipole profile
/// `α′/4π · ( z_r(σ_t d_r + 1) e^{−σ_t d_r}/d_r³ + z_r z_v (σ_t d_r + 1) e^{−σ_t d_v}/d_v³ )`.
///
/// With `classical` the second term uses `(σ_t d_v + 1)` instead, as in the
/// textbook dipole.
pub fn dipole_profile<S: Real>(p: &SssParams<S>, eta: f64, classical: bool) -> S {
    let g = DipoleGeometry::new(p, eta);
    let st = g.sigma_t;
    let lead_r = st * g.d_r + 1.0;
    let real = g.z_r * lead_r * (-(st * g.d_r)).exp() / g.d_r.powi(3);
    let lead_v = if classical { st * g.d_v + 1.0 } else { lead_r };
    let virt = g.z_r * g.z_v * lead_v * (-(st * g.d_v)).exp() / g.d_v.powi(3);
    g.albedo * (real + virt) / (4.0 * core::f64::consts::PI)
}

/// Appends the network input `PE(x) ⧺ PE(ω_o) ⧺ PE(ω_i) ⧺ n ⧺ m`.
pub fn sss_input<S: Real>(
    x: Vec3<S>,
    wo: Vec3<S>,
    wi: Vec3<S>,
    n: Vec3<S>,
    m: &[S],
    out: &mut Vec<S>,
) {
    debug_assert_eq!(m.len(), 6);
    positional_encoding(x.to_array(), SSS_LEVELS, out);
    positional_encoding(wo.to_array(), SSS_LEVELS, out);
    positional_encoding(wi.to_array(), SSS_LEVELS, out);
    out.extend_from_slice(&n.to_array());
    out.extend_from_slice(m);
}

/// Network prediction for one shading point.
pub fn predict_sss(
    net: &Mlp,
    x: [f64; 3],
    wo: [f64; 3],
    wi: [f64; 3],
    n: [f64; 3],
    m: &[f64; 6],
) -> SssParams<f64> {
    let mut input = Vec::with_capacity(SSS_INPUT);
    sss_input(
        Vec3::from_array(x),
        Vec3::from_array(wo),
        Vec3::from_array(wi),
        Vec3::from_array(n),
        m,
        &mut input,
    );
    let out = net.forward(&input);
    SssParams::from_raw([out[0], out[1], out[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(s: f64, a: f64, r: f64) -> SssParams<f64> {
        SssParams {
            sigma_s: s,
            sigma_a: a,
            r,
        }
    }

    #[test]
    fn input_width_is_ninety() {
        assert_eq!(SSS_INPUT, 90);
        assert_eq!(sss_layer_sizes(), [90, 256, 256, 256, 256, 256, 3]);
    }

    #[test]
    fn zero_network_gives_interval_midpoints() {
        let net = Mlp::zeros(&sss_layer_sizes()).unwrap();
        let p = predict_sss(&net, [0.1; 3], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], &[0.3; 6]);
        for (got, want) in [(p.sigma_s, 1.05), (p.sigma_a, 1.05), (p.r, 1.6)] {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn random_network_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::uniform(&sss_layer_sizes(), &mut rng).unwrap();
        net.scale_output_layer(50.0);
        for k in 0..20 {
            let t = k as f64 * 0.3;
            let p = predict_sss(&net, [t, -t, 0.5], [0.0, 0.0, 1.0], [t.cos(), t.sin(), 0.0], [0.0, 1.0, 0.0], &[t; 6]);
            assert!(p.in_range(), "{p:?}");
        }
    }

    #[test]
    fn equal_coefficients_give_half_albedo() {
        let g = DipoleGeometry::new(&params(0.7, 0.7, 1.0), ETA);
        assert_eq!(g.albedo, 0.5);
        assert!(g.z_v > g.z_r && g.z_r > 0.0);
    }

    #[test]
    fn golden_values() {
        let v = dipole_profile(&params(1.0, 0.1, 1.0), ETA, false);
        assert!((v - 0.015_073_138_106_226_696).abs() / v < 1e-12, "{v}");
        let c = dipole_profile(&params(1.0, 0.1, 1.0), ETA, true);
        assert!((c - 0.015_187_066_612_269_119).abs() / c < 1e-12, "{c}");
    }
}
