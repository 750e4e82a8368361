//! Gaussian parameterization, camera model, EWA projection and front-to-back compositing.

use alloc::vec::Vec;

use crate::math::{self, quat_to_mat, Mat3, Vec3};
use crate::real::Real;

/// Diagonal floor added to every projected covariance (px²).
pub const COV2D_FLOOR: f64 = 0.3;
/// Compositing stops once the remaining transmittance drops below this.
pub const EARLY_STOP_T: f64 = 1e-4;
/// Gaussians closer than this to the camera plane are culled.
pub const NEAR_PLANE: f64 = 0.2;
/// Splats are evaluated inside a box of this many standard deviations.
pub const SPLAT_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("camera rotation is not orthonormal (deviation {0:.3e})")]
    NonOrthonormal(f64),
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    BadFocal { fx: f64, fy: f64 },
    #[error("image size must be non-zero")]
    EmptyImage,
    #[error("non-finite camera parameter")]
    NonFinite,
}

/// One decoded splat. Scene storage keeps the raw (log / pre-sigmoid) values;
/// this is the read view with every invariant applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub center: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// Per-axis standard deviations, all positive.
    pub scale: [f64; 3],
    pub opacity: f64,
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
    pub scatter: [f64; 3],
    pub embedding: [f64; 6],
}

impl Gaussian {
    /// A gray isotropic splat, handy in tests.
    pub fn isotropic(center: [f64; 3], sigma: f64, opacity: f64) -> Self {
        Gaussian {
            center,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [sigma; 3],
            opacity,
            diffuse: [0.5; 3],
            specular: [0.5; 3],
            scatter: [0.5; 3],
            embedding: [0.0; 6],
        }
    }

    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        quat_to_mat(self.rotation).values()
    }
}

/// Pinhole camera, OpenCV axes (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation.
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    /// Camera at `eye` looking at `target`, horizontal field of view `fov_x` (radians).
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        width: u32,
        height: u32,
        fov_x: f64,
    ) -> Self {
        let forward = math::normalize3(math::sub3(target, eye));
        let mut right = math::cross3(forward, up);
        if math::norm3(right) < 1e-9 {
            // Looking straight along `up`; pick any perpendicular.
            let alt = if libm::fabs(forward[0]) < 0.9 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            };
            right = math::cross3(forward, alt);
        }
        let right = math::normalize3(right);
        let down = math::cross3(forward, right);
        let rotation = [right, down, forward];
        let translation = math::scale3(math::mat_vec(&rotation, eye), -1.0);
        let fx = width as f64 / (2.0 * libm::tan(fov_x * 0.5));
        Camera {
            rotation,
            translation,
            fx,
            fy: fx,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
        }
    }

    /// Builds a camera from a camera-to-world matrix in the NeRF / OpenGL
    /// convention (x right, y up, camera looking down −z).
    pub fn from_c2w_opengl(
        c2w: &[[f64; 4]; 4],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Self {
        // columns of the c2w rotation are the camera axes in world space
        let mut r_c2w = [[0.0; 3]; 3];
        for (i, row) in r_c2w.iter_mut().enumerate() {
            row[0] = c2w[i][0];
            row[1] = -c2w[i][1];
            row[2] = -c2w[i][2];
        }
        let rotation = math::transpose(&r_c2w);
        let eye = [c2w[0][3], c2w[1][3], c2w[2][3]];
        let translation = math::scale3(math::mat_vec(&rotation, eye), -1.0);
        Camera {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    /// Inverse of [`Camera::from_c2w_opengl`].
    pub fn to_c2w_opengl(&self) -> [[f64; 4]; 4] {
        let r_c2w = math::transpose(&self.rotation);
        let eye = self.center();
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            m[i][0] = r_c2w[i][0];
            m[i][1] = -r_c2w[i][1];
            m[i][2] = -r_c2w[i][2];
            m[i][3] = eye[i];
        }
        m[3][3] = 1.0;
        m
    }

    /// Camera center in world space.
    pub fn center(&self) -> [f64; 3] {
        math::scale3(math::mat_tr_vec(&self.rotation, self.translation), -1.0)
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        math::add3(math::mat_vec(&self.rotation, p), self.translation)
    }

    /// World point seen at pixel coordinate `(u, v)` at camera depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let pc = [
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ];
        math::mat_tr_vec(&self.rotation, math::sub3(pc, self.translation))
    }

    /// Same pose, different resolution; intrinsics scale with the image.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    pub fn validate(&self, tolerance: f64) -> Result<(), GeometryError> {
        let finite = self
            .rotation
            .iter()
            .flatten()
            .chain(self.translation.iter())
            .chain([self.fx, self.fy, self.cx, self.cy].iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::NonFinite);
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::BadFocal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::EmptyImage);
        }
        let rrt = math::mat_mul(&self.rotation, &math::transpose(&self.rotation));
        let mut dev: f64 = 0.0;
        for (i, row) in rrt.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                dev = dev.max(libm::fabs(v - e));
            }
        }
        let det = det3(&self.rotation);
        dev = dev.max(libm::fabs(det - 1.0));
        if dev > tolerance {
            return Err(GeometryError::NonOrthonormal(dev));
        }
        Ok(())
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `R S Sᵀ Rᵀ` from a quaternion and per-axis standard deviations.
pub fn covariance_of<S: Real>(q: [S; 4], s: [S; 3]) -> Mat3<S> {
    let r = quat_to_mat(q);
    let mut m = r.m;
    for row in m.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * s[j];
        }
    }
    let m = Mat3::from_rows(m);
    m.mul(&m.transpose())
}

pub fn covariance(g: &Gaussian) -> [[f64; 3]; 3] {
    covariance_of(g.rotation, g.scale).values()
}

/// A Gaussian after projection: pixel-space mean, regularized 2x2 covariance
/// stored as `(a, b, c)` for `[[a, b], [b, c]]`, and camera-space depth.
#[derive(Clone, Copy, Debug)]
pub struct Projected<S> {
    pub mean: [S; 2],
    pub cov: [S; 3],
    pub depth: S,
}

/// Pinhole intrinsics.
#[derive(Clone, Copy, Debug)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl From<&Camera> for Intrinsics {
    fn from(c: &Camera) -> Self {
        Intrinsics {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
        }
    }
}

/// EWA projection `J W Σ Wᵀ Jᵀ` with the perspective Jacobian at the center.
/// Returns `None` when the center is not in front of the near plane.
pub fn project_with<S: Real>(
    center: Vec3<S>,
    cov: &Mat3<S>,
    rotation: &Mat3<S>,
    translation: Vec3<S>,
    k: Intrinsics,
) -> Option<Projected<S>> {
    let pc = rotation.mul_vec(center).add(translation);
    if pc.z.value() <= NEAR_PLANE {
        return None;
    }
    let inv_z = pc.z.recip();
    let inv_z2 = inv_z * inv_z;
    let mean = [pc.x * inv_z * k.fx + k.cx, pc.y * inv_z * k.fy + k.cy];
    // rows of J, the third column only depends on the camera-space position
    let zero = pc.z.lift(0.0);
    let j0 = Vec3::new(inv_z * k.fx, zero, -(pc.x * inv_z2) * k.fx);
    let j1 = Vec3::new(zero, inv_z * k.fy, -(pc.y * inv_z2) * k.fy);
    // T = J W (2x3)
    let t0 = rotation.tr_mul_vec(j0);
    let t1 = rotation.tr_mul_vec(j1);
    let st0 = cov.mul_vec(t0);
    let st1 = cov.mul_vec(t1);
    let a = t0.dot(st0) + COV2D_FLOOR;
    let b = t0.dot(st1);
    let c = t1.dot(st1) + COV2D_FLOOR;
    Some(Projected {
        mean,
        cov: [a, b, c],
        depth: pc.z,
    })
}

pub fn project(g: &Gaussian, cam: &Camera) -> Option<Projected<f64>> {
    let cov = covariance_of(g.rotation, g.scale);
    project_with(
        Vec3::from_array(g.center),
        &cov,
        &Mat3::from_rows(cam.rotation),
        Vec3::from_array(cam.translation),
        Intrinsics::from(cam),
    )
}

/// Half-width (px) of the square box outside which a splat is clipped.
pub fn splat_radius(cov: [f64; 3]) -> f64 {
    let [a, b, c] = cov;
    let mid = 0.5 * (a + c);
    let lambda_max = mid + libm::sqrt(libm::fmax(0.25 * (a - c) * (a - c) + b * b, 0.0));
    SPLAT_SIGMAS * libm::sqrt(lambda_max)
}

/// `1/det` and the inverse `(a, b, c)`.
#[inline]
pub fn invert_cov(cov: [f64; 3]) -> [f64; 3] {
    let [a, b, c] = cov;
    let inv_det = 1.0 / (a * c - b * b);
    [c * inv_det, -b * inv_det, a * inv_det]
}

/// Squared Mahalanobis distance `dᵀ Σ⁻¹ d`.
#[inline]
pub fn mahalanobis_sq(conic: [f64; 3], d: [f64; 2]) -> f64 {
    conic[0] * d[0] * d[0] + 2.0 * conic[1] * d[0] * d[1] + conic[2] * d[1] * d[1]
}

/// `exp(-½ dᵀ Σ⁻¹ d)` inside the 3σ box, 0 outside.
pub fn gaussian_weight(mean: [f64; 2], cov: [f64; 3], pixel: [f64; 2]) -> f64 {
    let d = [pixel[0] - mean[0], pixel[1] - mean[1]];
    let r = splat_radius(cov);
    if libm::fabs(d[0]) > r || libm::fabs(d[1]) > r {
        return 0.0;
    }
    libm::exp(-0.5 * mahalanobis_sq(invert_cov(cov), d))
}

/// Pixel-center coordinate of integer pixel `(x, y)`.
#[inline]
pub fn pixel_center(x: u32, y: u32) -> [f64; 2] {
    [x as f64 + 0.5, y as f64 + 0.5]
}

/// Per-pixel compositing state.
#[derive(Clone, Debug)]
pub struct CompositeBuffer {
    pub color: [f64; 3],
    /// Remaining transmittance.
    pub transmittance: f64,
    /// `(id, T_i·α_i)` in compositing order.
    pub contributions: Vec<(u32, f64)>,
}

impl Default for CompositeBuffer {
    fn default() -> Self {
        CompositeBuffer {
            color: [0.0; 3],
            transmittance: 1.0,
            contributions: Vec::new(),
        }
    }
}

impl CompositeBuffer {
    /// Blends one more (farther) contribution. Returns `false` once the pixel
    /// is saturated below `stop` and further input would be ignored.
    pub fn push(&mut self, id: u32, color: [f64; 3], alpha: f64, stop: f64) -> bool {
        if self.transmittance < stop {
            return false;
        }
        debug_assert!((0.0..=1.0).contains(&alpha), "alpha out of range: {alpha}");
        let w = self.transmittance * alpha;
        for (acc, c) in self.color.iter_mut().zip(color) {
            *acc += w * c;
        }
        self.transmittance *= 1.0 - alpha;
        self.contributions.push((id, w));
        true
    }

    pub fn resolve(&self, background: [f64; 3]) -> [f64; 3] {
        let t = self.transmittance;
        [
            self.color[0] + t * background[0],
            self.color[1] + t * background[1],
            self.color[2] + t * background[2],
        ]
    }
}

/// One entry of a depth-sorted compositing list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub color: [f64; 3],
    pub alpha: f64,
    pub depth: f64,
}

/// Exact front-to-back blending `Σ T_i α_i C_i + T_N · background`.
pub fn composite(contributions: &[Contribution], background: [f64; 3]) -> [f64; 3] {
    composite_with_stop(contributions, background, 0.0)
}

/// As [`composite`], but stops once transmittance drops below `stop`
/// (the renderer uses [`EARLY_STOP_T`]).
pub fn composite_with_stop(
    contributions: &[Contribution],
    background: [f64; 3],
    stop: f64,
) -> [f64; 3] {
    debug_assert!(
        contributions.windows(2).all(|w| w[0].depth <= w[1].depth),
        "contributions must be sorted front to back"
    );
    let mut buf = CompositeBuffer::default();
    for (i, c) in contributions.iter().enumerate() {
        if !buf.push(i as u32, c.color, c.alpha, stop) {
            break;
        }
    }
    buf.resolve(background)
}
