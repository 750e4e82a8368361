//! PSNR and SSIM, plus a differentiable SSIM node for the optional D-SSIM loss.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{CustomOp, GradSink, Tape, Var};
use crate::image::{Image, ShapeMismatch};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio for values in `[0, 1]`. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ShapeMismatch> {
    a.check_same_shape(b)?;
    Ok(psnr_from_mse(mse(&a.data, &b.data)))
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        return f64::INFINITY;
    }
    -10.0 * libm::log10(mse)
}

/// Mean SSIM of the Rec. 601 luma planes.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, ShapeMismatch> {
    a.check_same_shape(b)?;
    Ok(ssim_plane(&a.luma(), &b.luma(), a.width as usize, a.height as usize))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = libm::exp(-0.5 * d * d / (SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Windowed first and second moments at every valid window position.
struct Moments {
    out_w: usize,
    out_h: usize,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    xx: Vec<f64>,
    yy: Vec<f64>,
    xy: Vec<f64>,
}

fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn moments(x: &[f64], y: &[f64], w: usize, h: usize) -> Moments {
    let k = gaussian_kernel();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    Moments {
        out_w: w + 1 - SSIM_WINDOW,
        out_h: h + 1 - SSIM_WINDOW,
        mu_x: filter_valid(x, w, h, &k),
        mu_y: filter_valid(y, w, h, &k),
        xx: filter_valid(&prod(x, x), w, h, &k),
        yy: filter_valid(&prod(y, y), w, h, &k),
        xy: filter_valid(&prod(x, y), w, h, &k),
    }
}

const C1: f64 = SSIM_K1 * SSIM_K1;
const C2: f64 = SSIM_K2 * SSIM_K2;

/// Per-window terms `(A1, A2, B1, B2)` with SSIM = A1·A2 / (B1·B2).
fn terms(m: &Moments, p: usize) -> [f64; 4] {
    let (mx, my) = (m.mu_x[p], m.mu_y[p]);
    let sxx = m.xx[p] - mx * mx;
    let syy = m.yy[p] - my * my;
    let sxy = m.xy[p] - mx * my;
    [2.0 * mx * my + C1, 2.0 * sxy + C2, mx * mx + my * my + C1, sxx + syy + C2]
}

/// Mean SSIM between two planes over all positions where the 11x11 window fits.
/// Planes smaller than the window fall back to a single global window.
pub fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return ssim_global(x, y);
    }
    let m = moments(x, y, w, h);
    let n = m.out_w * m.out_h;
    (0..n)
        .map(|p| {
            let [a1, a2, b1, b2] = terms(&m, p);
            a1 * a2 / (b1 * b2)
        })
        .sum::<f64>()
        / n as f64
}

fn ssim_global(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().max(1) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    let (sxx, syy, sxy) = (sxx / n, syy / n, sxy / n);
    (2.0 * mx * my + C1) * (2.0 * sxy + C2) / ((mx * mx + my * my + C1) * (sxx + syy + C2))
}

/// Gradient of [`ssim_plane`] with respect to `x`.
pub fn ssim_plane_grad(x: &[f64], y: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return g;
    }
    let k = gaussian_kernel();
    let m = moments(x, y, w, h);
    let n = (m.out_w * m.out_h) as f64;
    for py in 0..m.out_h {
        for px in 0..m.out_w {
            let p = py * m.out_w + px;
            let [a1, a2, b1, b2] = terms(&m, p);
            let s = a1 * a2 / (b1 * b2);
            let (mx, my) = (m.mu_x[p], m.mu_y[p]);
            // dS/dx_q = 2 w_q / (B1 B2) · [A2 μy + A1 (y_q − μy) − S (B2 μx + B1 (x_q − μx))]
            let scale = 2.0 / (b1 * b2 * n);
            let c0 = a2 * my - a1 * my - s * (b2 * mx - b1 * mx);
            for j in 0..SSIM_WINDOW {
                for i in 0..SSIM_WINDOW {
                    let q = (py + j) * w + px + i;
                    let wq = k[i] * k[j];
                    g[q] += scale * wq * (c0 + a1 * y[q] - s * b1 * x[q]);
                }
            }
        }
    }
    g
}

/// `1 − mean_c SSIM(render_c, target_c)` over the three color channels, as a tape node.
struct DssimOp {
    target: Image,
}

impl CustomOp for DssimOp {
    fn name(&self) -> &'static str {
        "dssim"
    }

    fn forward(&mut self, inputs: &[f64]) -> Vec<f64> {
        let (w, h) = (self.target.width as usize, self.target.height as usize);
        let mut total = 0.0;
        for c in 0..3 {
            let x: Vec<f64> = inputs.iter().skip(c).step_by(3).copied().collect();
            total += ssim_plane(&x, &self.target.channel(c), w, h);
        }
        vec![1.0 - total / 3.0]
    }

    fn backward(
        &self,
        inputs: &[f64],
        _outputs: &[f64],
        out_grad: &[f64],
        in_grad: &mut [f64],
        _sink: &mut GradSink<'_>,
    ) {
        let (w, h) = (self.target.width as usize, self.target.height as usize);
        for c in 0..3 {
            let x: Vec<f64> = inputs.iter().skip(c).step_by(3).copied().collect();
            let g = ssim_plane_grad(&x, &self.target.channel(c), w, h);
            for (p, gp) in g.into_iter().enumerate() {
                in_grad[3 * p + c] -= out_grad[0] * gp / 3.0;
            }
        }
    }
}

/// D-SSIM of interleaved RGB `pixels` against `target`.
pub fn dssim_on_tape<'t>(tape: &'t Tape, pixels: &[Var<'t>], target: &Image) -> Var<'t> {
    assert_eq!(pixels.len(), target.data.len());
    tape.custom(pixels, Box::new(DssimOp { target: target.clone() }))[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(w: u32, h: u32, seed: u32) -> Image {
        let mut s = seed | 1;
        Image::from_fn(w, h, |_, _| {
            let mut c = [0.0; 3];
            for v in &mut c {
                s ^= s << 13;
                s ^= s >> 17;
                s ^= s << 5;
                *v = (s % 1000) as f64 / 999.0;
            }
            c
        })
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(8, 8, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(8, 8, [0.25; 3]);
        let c = Image::filled(8, 8, [0.125; 3]);
        // MSE = 1/64 exactly
        assert_eq!(psnr(&b, &c).unwrap(), -10.0 * (1.0f64 / 64.0).log10());
        assert!(psnr(&a, &Image::new(4, 8)).is_err());
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let a = noise_image(24, 20, 7);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mut neg = a.clone();
        for v in &mut neg.data {
            *v = 1.0 - *v;
        }
        assert!(ssim(&a, &neg).unwrap() < 0.0);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = noise_image(20, 16, 3);
        let b = noise_image(20, 16, 5);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let (w, h) = (14, 13);
        let a = noise_image(w, h, 11).channel(0);
        let b = noise_image(w, h, 13).channel(1);
        let g = ssim_plane_grad(&a, &b, w as usize, h as usize);
        for q in [0, 17, 60, 100, 181] {
            let eps = 1e-6;
            let mut hi = a.clone();
            hi[q] += eps;
            let mut lo = a.clone();
            lo[q] -= eps;
            let fd = (ssim_plane(&hi, &b, w as usize, h as usize) - ssim_plane(&lo, &b, w as usize, h as usize)) / (2.0 * eps);
            assert!((fd - g[q]).abs() < 1e-8, "{q}: {fd} vs {}", g[q]);
        }
    }
}
