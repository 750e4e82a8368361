//! Tile-binned splat rasterizer with an analytic backward pass.
//!
//! Each splat is described by 9 numbers: pixel mean (2), inverse 2D covariance
//! `(A, B, C)` (3), opacity (1) and RGB color (3). Pixels are composited front to
//! back in a single global depth order; the backward pass recomputes each pixel's
//! blend list and walks it in reverse, so nothing per-pixel is kept between passes.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{CustomOp, GradSink, Tape, Var};
use crate::geometry::pixel_center;
use crate::shadow::footprint_span;

pub const TILE: u32 = 16;
pub const SPLAT_STRIDE: usize = 9;

/// Non-differentiable per-splat data: clipping radius (px) and sort depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatMeta {
    pub radius: f64,
    pub depth: f64,
}

/// Sorted and binned splats for one image.
#[derive(Clone, Debug)]
pub struct Bins {
    pub width: u32,
    pub height: u32,
    pub background: [f64; 3],
    pub stop: f64,
    tiles_x: u32,
    radii: Vec<f64>,
    /// Per tile, splat indices in front-to-back order.
    tiles: Vec<Vec<u32>>,
}

impl Bins {
    pub fn new(meta: &[SplatMeta], width: u32, height: u32, background: [f64; 3], stop: f64) -> Self {
        Self::build(meta, None, width, height, background, stop)
    }

    /// Builds bins from means so the footprint boxes are known.
    pub fn with_means(
        meta: &[SplatMeta],
        means: &[[f64; 2]],
        width: u32,
        height: u32,
        background: [f64; 3],
        stop: f64,
    ) -> Self {
        Self::build(meta, Some(means), width, height, background, stop)
    }

    fn build(
        meta: &[SplatMeta],
        means: Option<&[[f64; 2]]>,
        width: u32,
        height: u32,
        background: [f64; 3],
        stop: f64,
    ) -> Self {
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut order: Vec<u32> = (0..meta.len() as u32).collect();
        order.sort_by(|&a, &b| {
            meta[a as usize]
                .depth
                .total_cmp(&meta[b as usize].depth)
                .then(a.cmp(&b))
        });
        let mut tiles = vec![Vec::new(); (tiles_x * tiles_y) as usize];
        for &k in &order {
            let m = meta[k as usize];
            let (tx, ty) = match means {
                Some(means) => {
                    let c = means[k as usize];
                    let (Some(xs), Some(ys)) = (
                        footprint_span(c[0], m.radius, width),
                        footprint_span(c[1], m.radius, height),
                    ) else {
                        continue;
                    };
                    ((xs.0 / TILE, xs.1 / TILE), (ys.0 / TILE, ys.1 / TILE))
                }
                None => ((0, tiles_x - 1), (0, tiles_y - 1)),
            };
            for y in ty.0..=ty.1 {
                for x in tx.0..=tx.1 {
                    tiles[(y * tiles_x + x) as usize].push(k);
                }
            }
        }
        Bins {
            width,
            height,
            background,
            stop,
            tiles_x,
            radii: meta.iter().map(|m| m.radius).collect(),
            tiles,
        }
    }

    fn tile_of(&self, x: u32, y: u32) -> &[u32] {
        &self.tiles[((y / TILE) * self.tiles_x + x / TILE) as usize]
    }

    /// Visits the splats covering pixel `(x, y)` front to back, passing
    /// `(splat, alpha, transmittance before it, gaussian weight, offset)`.
    /// Returns the final transmittance.
    fn walk_pixel(
        &self,
        splats: &[f64],
        x: u32,
        y: u32,
        mut visit: impl FnMut(u32, f64, f64, f64, [f64; 2]),
    ) -> f64 {
        let px = pixel_center(x, y);
        let mut t = 1.0;
        for &k in self.tile_of(x, y) {
            let s = &splats[k as usize * SPLAT_STRIDE..(k as usize + 1) * SPLAT_STRIDE];
            let d = [px[0] - s[0], px[1] - s[1]];
            let r = self.radii[k as usize];
            if libm::fabs(d[0]) > r || libm::fabs(d[1]) > r {
                continue;
            }
            let q = s[2] * d[0] * d[0] + 2.0 * s[3] * d[0] * d[1] + s[4] * d[1] * d[1];
            let w = libm::exp(-0.5 * q);
            let alpha = s[5] * w;
            if alpha <= 0.0 {
                continue;
            }
            if t < self.stop {
                break;
            }
            visit(k, alpha, t, w, d);
            t *= 1.0 - alpha;
        }
        t
    }

    /// Composites with splat colors taken from `splats`. Output is row-major RGB.
    pub fn render(&self, splats: &[f64]) -> Vec<f64> {
        self.render_with(splats, |k, _, _| {
            let s = &splats[k as usize * SPLAT_STRIDE..];
            [s[6], s[7], s[8]]
        })
    }

    /// Composites with the color of splat `k` at pixel `(x, y)` given by `color`.
    pub fn render_with(
        &self,
        splats: &[f64],
        mut color: impl FnMut(u32, u32, u32) -> [f64; 3],
    ) -> Vec<f64> {
        let mut out = vec![0.0; (self.width * self.height * 3) as usize];
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = [0.0; 3];
                let t = self.walk_pixel(splats, x, y, |k, alpha, t, _, _| {
                    let c = color(k, x, y);
                    for (a, c) in acc.iter_mut().zip(c) {
                        *a += t * alpha * c;
                    }
                });
                let o = ((y * self.width + x) * 3) as usize;
                for c in 0..3 {
                    out[o + c] = acc[c] + t * self.background[c];
                }
            }
        }
        out
    }

    /// Accumulates `Jᵀ out_grad` into `in_grad` (same layout as `splats`).
    pub fn backward(&self, splats: &[f64], out_grad: &[f64], in_grad: &mut [f64]) {
        struct Hit {
            k: u32,
            alpha: f64,
            t: f64,
            w: f64,
            d: [f64; 2],
        }
        let mut hits: Vec<Hit> = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let o = ((y * self.width + x) * 3) as usize;
                let g = [out_grad[o], out_grad[o + 1], out_grad[o + 2]];
                if g == [0.0; 3] {
                    continue;
                }
                hits.clear();
                self.walk_pixel(splats, x, y, |k, alpha, t, w, d| {
                    hits.push(Hit { k, alpha, t, w, d })
                });
                // color seen just behind the current splat
                let mut behind = self.background;
                for h in hits.iter().rev() {
                    let base = h.k as usize * SPLAT_STRIDE;
                    let s = &splats[base..base + SPLAT_STRIDE];
                    let gi = &mut in_grad[base..base + SPLAT_STRIDE];
                    let blend = h.t * h.alpha;
                    let mut d_alpha = 0.0;
                    for c in 0..3 {
                        gi[6 + c] += g[c] * blend;
                        d_alpha += g[c] * h.t * (s[6 + c] - behind[c]);
                        behind[c] = h.alpha * s[6 + c] + (1.0 - h.alpha) * behind[c];
                    }
                    gi[5] += d_alpha * h.w;
                    let dq = -0.5 * d_alpha * h.alpha;
                    let [dx, dy] = h.d;
                    gi[2] += dq * dx * dx;
                    gi[3] += dq * 2.0 * dx * dy;
                    gi[4] += dq * dy * dy;
                    // d(dx)/d(mean_x) = -1
                    gi[0] -= dq * 2.0 * (s[2] * dx + s[3] * dy);
                    gi[1] -= dq * 2.0 * (s[3] * dx + s[4] * dy);
                }
            }
        }
    }
}

struct RasterOp {
    bins: Bins,
}

impl CustomOp for RasterOp {
    fn name(&self) -> &'static str {
        "rasterize"
    }

    fn forward(&mut self, inputs: &[f64]) -> Vec<f64> {
        self.bins.render(inputs)
    }

    fn backward(
        &self,
        inputs: &[f64],
        _outputs: &[f64],
        out_grad: &[f64],
        in_grad: &mut [f64],
        _sink: &mut GradSink<'_>,
    ) {
        self.bins.backward(inputs, out_grad, in_grad);
    }
}

/// Records rasterization of `splats` (9 vars per splat) as one tape node with
/// `3·width·height` outputs.
pub fn rasterize_on_tape<'t>(tape: &'t Tape, splats: &[Var<'t>], bins: Bins) -> Vec<Var<'t>> {
    assert_eq!(splats.len(), bins.radii.len() * SPLAT_STRIDE);
    tape.custom(splats, Box::new(RasterOp { bins }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{composite, splat_radius, Contribution};
    use crate::params::BlockSet;

    fn splat(mean: [f64; 2], cov: [f64; 3], opacity: f64, color: [f64; 3]) -> ([f64; 9], SplatMeta) {
        let conic = crate::geometry::invert_cov(cov);
        let s = [
            mean[0], mean[1], conic[0], conic[1], conic[2], opacity, color[0], color[1], color[2],
        ];
        (s, SplatMeta { radius: splat_radius(cov), depth: 0.0 })
    }

    fn scene() -> (Vec<f64>, Vec<SplatMeta>, Vec<[f64; 2]>) {
        let list = [
            ([10.0, 12.0], [9.0, 2.0, 6.0], 0.7, [1.0, 0.2, 0.1]),
            ([14.0, 9.0], [16.0, -3.0, 10.0], 0.5, [0.1, 0.9, 0.3]),
            ([20.0, 20.0], [30.0, 0.0, 30.0], 0.9, [0.2, 0.3, 1.0]),
        ];
        let mut splats = Vec::new();
        let mut meta = Vec::new();
        let mut means = Vec::new();
        for (i, (m, c, o, col)) in list.into_iter().enumerate() {
            let (s, mut mt) = splat(m, c, o, col);
            mt.depth = 1.0 + i as f64;
            splats.extend_from_slice(&s);
            meta.push(mt);
            means.push(m);
        }
        (splats, meta, means)
    }

    #[test]
    fn pixels_match_exact_compositing() {
        let (splats, meta, means) = scene();
        let bins = Bins::with_means(&meta, &means, 40, 36, [0.1, 0.1, 0.1], 0.0);
        let img = bins.render(&splats);
        for (x, y) in [(10, 12), (13, 10), (0, 0), (21, 19), (39, 35)] {
            let px = pixel_center(x, y);
            let mut list = Vec::new();
            for (k, m) in meta.iter().enumerate() {
                let s = &splats[k * 9..k * 9 + 9];
                let d = [px[0] - s[0], px[1] - s[1]];
                if d[0].abs() > m.radius || d[1].abs() > m.radius {
                    continue;
                }
                let q = s[2] * d[0] * d[0] + 2.0 * s[3] * d[0] * d[1] + s[4] * d[1] * d[1];
                list.push(Contribution {
                    color: [s[6], s[7], s[8]],
                    alpha: s[5] * (-0.5 * q).exp(),
                    depth: m.depth,
                });
            }
            let expect = composite(&list, [0.1, 0.1, 0.1]);
            let o = ((y * 40 + x) * 3) as usize;
            for c in 0..3 {
                assert!((img[o + c] - expect[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn binning_does_not_change_the_image() {
        let (splats, meta, means) = scene();
        let a = Bins::with_means(&meta, &means, 40, 36, [0.0; 3], 1e-4).render(&splats);
        let b = Bins::new(&meta, 40, 36, [0.0; 3], 1e-4).render(&splats);
        assert_eq!(a, b);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (splats, meta, means) = scene();
        let weights: Vec<f64> = (0..40 * 36 * 3).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = splats.iter().map(|&v| tape.var(v)).collect();
        let bins = Bins::with_means(&meta, &means, 40, 36, [0.2, 0.0, 0.1], 0.0);
        let px = rasterize_on_tape(&tape, &vars, bins.clone());
        let mut loss = tape.constant(0.0);
        for (p, w) in px.iter().zip(&weights) {
            loss = loss + *p * *w;
        }
        let g = tape.backward(loss, BlockSet::EMPTY);
        let f = |s: &[f64]| -> f64 { bins.render(s).iter().zip(&weights).map(|(a, b)| a * b).sum() };
        for (i, v) in vars.iter().enumerate() {
            let eps = 1e-6;
            let mut hi = splats.clone();
            hi[i] += eps;
            let mut lo = splats.clone();
            lo[i] -= eps;
            let fd = (f(&hi) - f(&lo)) / (2.0 * eps);
            let an = g.wrt(*v);
            assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1.0), "input {i}: fd {fd} vs {an}");
        }
    }
}
