use proptest::prelude::*;

use splatlight_core::autodiff::Tape;
use splatlight_core::geometry::{self, composite, covariance, gaussian_weight, Contribution, Gaussian};
use splatlight_core::image::Image;
use splatlight_core::math::Vec3;
use splatlight_core::metrics::{psnr, ssim};
use splatlight_core::optim::Adam;
use splatlight_core::params::{BlockSet, ParamBlock};
use splatlight_core::real::Real;
use splatlight_core::shading::{shade, specular, AsgBank, BaseColors, TermValues};
use splatlight_core::shadow::{ray_transmittance, Occluder};
use splatlight_core::sss::{dipole_profile, SssParams, ETA, RADIUS_RANGE, SIGMA_RANGE};

fn contribution() -> impl Strategy<Value = Contribution> {
    (prop::array::uniform3(0.0..=1.0f64), 0.0..=1.0f64).prop_map(|(color, alpha)| Contribution {
        color,
        alpha,
        depth: 0.0,
    })
}

fn sorted(mut list: Vec<Contribution>) -> Vec<Contribution> {
    for (i, c) in list.iter_mut().enumerate() {
        c.depth = i as f64;
    }
    list
}

fn unit() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0..1.0f64)
        .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 0.01)
        .prop_map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.map(|x| x / n)
        })
}

fn vec3(v: [f64; 3]) -> Vec3<f64> {
    Vec3::new(v[0], v[1], v[2])
}

fn occluder() -> impl Strategy<Value = Occluder> {
    (prop::array::uniform3(-1.0..1.0f64), 0.05..0.6f64, 0.0..1.0f64)
        .prop_map(|(c, s, a)| Occluder::from_gaussian(&Gaussian::isotropic(c, s, a)))
}

proptest! {
    #[test]
    fn composite_is_bounded(list in prop::collection::vec(contribution(), 0..32)) {
        let list = sorted(list);
        let out = composite(&list, [0.0; 3]);
        let max = list.iter().flat_map(|c| c.color).fold(0.0, f64::max);
        prop_assert!(out.iter().all(|&v| v <= max + 1e-12));
        let mut t = 1.0;
        let mut weight = 0.0;
        for c in &list {
            weight += t * c.alpha;
            t *= 1.0 - c.alpha;
        }
        prop_assert!(weight <= 1.0 + 1e-12);
        prop_assert!((weight - (1.0 - t)).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_entries_change_nothing(
        list in prop::collection::vec(contribution(), 0..32),
        at in any::<prop::sample::Index>(),
        color in prop::array::uniform3(0.0..=1.0f64),
    ) {
        let base = sorted(list.clone());
        let mut with = list;
        let k = at.index(with.len() + 1);
        with.insert(k, Contribution { color, alpha: 0.0, depth: 0.0 });
        let with = sorted(with);
        prop_assert_eq!(composite(&base, [0.3; 3]), composite(&with, [0.3; 3]));
    }

    #[test]
    fn composite_matches_the_naive_sum(list in prop::collection::vec(contribution(), 0..=32)) {
        let list = sorted(list);
        let bg = [0.2, 0.5, 0.9];
        let mut want = [0.0; 3];
        for (i, c) in list.iter().enumerate() {
            let t: f64 = list[..i].iter().map(|p| 1.0 - p.alpha).product();
            for k in 0..3 {
                want[k] += t * c.alpha * c.color[k];
            }
        }
        let t_all: f64 = list.iter().map(|p| 1.0 - p.alpha).product();
        let got = composite(&list, bg);
        for k in 0..3 {
            prop_assert!((got[k] - (want[k] + t_all * bg[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_aligned_covariance_has_squared_scales(
        s in prop::array::uniform3(0.01..3.0f64),
        turn in 0usize..7,
    ) {
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let q = [
            [1.0, 0.0, 0.0, 0.0],
            [h, h, 0.0, 0.0],
            [h, 0.0, h, 0.0],
            [h, 0.0, 0.0, h],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.5, 0.5, 0.5, 0.5],
        ][turn];
        let mut g = Gaussian::isotropic([0.0; 3], 1.0, 0.5);
        g.rotation = q;
        g.scale = s;
        let c = covariance(&g);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    prop_assert!(c[i][j].abs() < 1e-10);
                }
            }
        }
        let mut diag = [c[0][0], c[1][1], c[2][2]];
        let mut want = s.map(|v| v * v);
        diag.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for k in 0..3 {
            prop_assert!((diag[k] - want[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_weight_peaks_at_the_mean_and_decays(
        a in 0.5..20.0f64, c in 0.5..20.0f64, rho in -0.9..0.9f64,
        dir in prop::array::uniform2(-1.0..1.0f64), r1 in 0.0..3.0f64, r2 in 0.0..3.0f64,
    ) {
        let b = rho * (a * c).sqrt();
        let cov = [a, b, c];
        let mean = [4.0, -2.0];
        prop_assert_eq!(gaussian_weight(mean, cov, mean), 1.0);
        let (near, far) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let at = |r: f64| gaussian_weight(mean, cov, [mean[0] + r * dir[0], mean[1] + r * dir[1]]);
        let (wn, wf) = (at(near), at(far));
        prop_assert!((0.0..=1.0).contains(&wn) && (0.0..=1.0).contains(&wf));
        prop_assert!(wf <= wn);
    }

    #[test]
    fn shading_is_affine_in_the_shadow_factor(
        cd in prop::array::uniform3(0.0..=1.0f64),
        cs in prop::array::uniform3(0.0..=1.0f64),
        cx in prop::array::uniform3(0.0..=1.0f64),
        fd in 0.0..1.0f64, fs in 0.0..5.0f64, fx in 0.0..2.0f64,
        s0 in 0.0..=1.0f64, s1 in 0.0..=1.0f64,
    ) {
        let colors = BaseColors { diffuse: cd, specular: cs, scatter: cx };
        let at = |s: f64| shade(&colors, &TermValues { f_d: Some(fd), f_s: Some(fs), f_sss: Some(fx), shadow: Some(s) }, false);
        let (y0, y1, z) = (at(s0), at(s1), at(0.0));
        for k in 0..3 {
            let slope = cd[k] * fd + cs[k] * fs;
            prop_assert!(slope >= 0.0);
            prop_assert!((y1[k] - y0[k] - slope * (s1 - s0)).abs() < 1e-12);
            prop_assert!((z[k] - cx[k] * fx).abs() < 1e-12);
        }
    }

    #[test]
    fn specular_is_reciprocal(wo in unit(), wi in unit(), n in 1usize..9, f0 in 0.0..=1.0f64) {
        let lobes = AsgBank::spread(n, 4.0, 0.3).decoded();
        let a = specular(vec3(wo), vec3(wi), &lobes, f0);
        let b = specular(vec3(wi), vec3(wo), &lobes, f0);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn dipole_is_positive_and_decays_with_distance(
        ss in SIGMA_RANGE.0..=SIGMA_RANGE.1,
        sa in SIGMA_RANGE.0..=SIGMA_RANGE.1,
        r0 in RADIUS_RANGE.0..RADIUS_RANGE.1,
        dr in 1e-3..0.5f64,
        classical in any::<bool>(),
    ) {
        let r1 = (r0 + dr).min(RADIUS_RANGE.1);
        prop_assume!(r1 > r0);
        let f = |r: f64| dipole_profile(&SssParams { sigma_s: ss, sigma_a: sa, r }, ETA, classical);
        let (a, b) = (f(r0), f(r1));
        prop_assert!(a.is_finite() && b.is_finite());
        prop_assert!(b > 0.0);
        prop_assert!(b < a);
    }

    #[test]
    fn adding_an_occluder_never_brightens_a_ray(
        scene in prop::collection::vec(occluder(), 0..12),
        extra in occluder(),
        light in prop::array::uniform3(2.0..4.0f64),
        target in prop::array::uniform3(-0.5..0.5f64),
    ) {
        let before = ray_transmittance(light, target, &scene, None);
        let mut more = scene;
        more.push(extra);
        let after = ray_transmittance(light, target, &more, None);
        prop_assert!((0.0..=1.0).contains(&after));
        prop_assert!(after <= before);
    }

    #[test]
    fn ray_transmittance_ignores_scene_order(
        scene in prop::collection::vec(occluder(), 0..12),
        light in prop::array::uniform3(2.0..4.0f64),
        target in prop::array::uniform3(-0.5..0.5f64),
    ) {
        let mut reversed = scene.clone();
        reversed.reverse();
        let a = ray_transmittance(light, target, &scene, None);
        let b = ray_transmittance(light, target, &reversed, None);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_symmetric(
        a in prop::collection::vec(0.0..=1.0f64, 3 * 16 * 16),
        b in prop::collection::vec(0.0..=1.0f64, 3 * 16 * 16),
    ) {
        let (a, b) = (Image::from_data(16, 16, a), Image::from_data(16, 16, b));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_a_sum_is_the_sum_of_gradients(x in prop::collection::vec(-2.0..2.0f64, 4)) {
        let grad = |which: u8| {
            let tape = Tape::new();
            let v: Vec<_> = x.iter().map(|&xi| tape.var(xi)).collect();
            let f = (v[0] * v[1]).sin() + v[2].exp() * v[3];
            let g = (v[0] + v[3]).sigmoid() * v[1] - v[2].powi(3);
            let out = match which {
                0 => f,
                1 => g,
                _ => f + g,
            };
            let grads = tape.backward(out, BlockSet::EMPTY);
            v.iter().map(|&vi| grads.wrt(vi)).collect::<Vec<_>>()
        };
        let (gf, gg, gs) = (grad(0), grad(1), grad(2));
        for i in 0..4 {
            prop_assert!((gs[i] - (gf[i] + gg[i])).abs() <= 1e-12 * (1.0 + gs[i].abs()));
        }
        prop_assert_eq!(grad(2), gs);
    }

    #[test]
    fn zero_gradient_steps_leave_parameters_alone(
        p in prop::collection::vec(-10.0..10.0f64, 1..20),
        lr in 1e-5..1.0f64,
    ) {
        let mut adam = Adam::default();
        let mut q = p.clone();
        let changed = adam.step(ParamBlock::Opacity, &mut q, &vec![0.0; p.len()], lr);
        prop_assert!(!changed);
        prop_assert_eq!(q, p);
    }
}

#[test]
fn project_keeps_gaussians_in_front_only() {
    let cam = geometry::Camera::look_at([0.0, -4.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0], 32, 32, 0.8);
    assert!(geometry::project(&Gaussian::isotropic([0.0; 3], 0.2, 0.5), &cam).is_some());
    assert!(geometry::project(&Gaussian::isotropic([0.0, -6.0, 0.0], 0.2, 0.5), &cam).is_none());
}
