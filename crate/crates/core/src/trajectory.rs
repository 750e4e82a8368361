//! Light and camera sweeps for relighting videos.
//!
//! The default path has four segments around a fixed center (z up):
//! 1. the light sweeps 360° in 2.4° steps while the camera looks from azimuth 0°;
//! 2. the camera orbits to azimuth 180° in 2° steps, light held at 0°;
//! 3. the light sweeps another 360° around the back view;
//! 4. the camera returns to 0° in 2° steps, light held at 180°.

use alloc::vec::Vec;

use crate::geometry::Camera;

pub const LIGHT_STEP_DEG: f64 = 2.4;
pub const CAMERA_STEP_DEG: f64 = 2.0;
pub const LIGHT_STEPS: usize = 150;
pub const CAMERA_STEPS: usize = 90;
pub const TRAJECTORY_LEN: usize = 2 * LIGHT_STEPS + 2 * CAMERA_STEPS;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub camera: Camera,
    pub light: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("trajectory is empty")]
    Empty,
    #[error("step {step}: {source}")]
    Camera {
        step: usize,
        source: crate::geometry::GeometryError,
    },
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, tolerance: f64) -> Result<(), TrajectoryError> {
        if self.steps.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        for (step, s) in self.steps.iter().enumerate() {
            s.camera
                .validate(tolerance)
                .map_err(|source| TrajectoryError::Camera { step, source })?;
        }
        Ok(())
    }
}

/// Image and elevation settings for [`relight_trajectory_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryOptions {
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub light_elevation_deg: f64,
    pub camera_elevation_deg: f64,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions {
            width: 128,
            height: 128,
            fov_deg: 40.0,
            light_elevation_deg: 30.0,
            camera_elevation_deg: 15.0,
        }
    }
}

/// Point at `radius` from `center` with the given azimuth and elevation (degrees).
pub fn orbit_point(center: [f64; 3], radius: f64, azimuth_deg: f64, elevation_deg: f64) -> [f64; 3] {
    let (a, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let ce = libm::cos(e);
    [
        center[0] + radius * ce * libm::cos(a),
        center[1] + radius * ce * libm::sin(a),
        center[2] + radius * libm::sin(e),
    ]
}

pub fn relight_trajectory(center: [f64; 3], radius_light: f64, radius_cam: f64) -> Trajectory {
    relight_trajectory_with(center, radius_light, radius_cam, &TrajectoryOptions::default())
}

/// Camera and light azimuths (degrees) of every step on the default path.
pub fn trajectory_azimuths() -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(TRAJECTORY_LEN);
    for k in 0..LIGHT_STEPS {
        out.push((0.0, k as f64 * LIGHT_STEP_DEG));
    }
    for k in 0..CAMERA_STEPS {
        out.push(((k + 1) as f64 * CAMERA_STEP_DEG, 0.0));
    }
    for k in 0..LIGHT_STEPS {
        out.push((180.0, 180.0 + k as f64 * LIGHT_STEP_DEG));
    }
    for k in 0..CAMERA_STEPS {
        out.push((180.0 - (k + 1) as f64 * CAMERA_STEP_DEG, 180.0));
    }
    out
}

pub fn relight_trajectory_with(
    center: [f64; 3],
    radius_light: f64,
    radius_cam: f64,
    opts: &TrajectoryOptions,
) -> Trajectory {
    assert!(radius_light > 0.0 && radius_cam > 0.0, "radii must be positive");
    let steps = trajectory_azimuths()
        .into_iter()
        .map(|(cam_az, light_az)| {
            let eye = orbit_point(center, radius_cam, cam_az, opts.camera_elevation_deg);
            TrajectoryStep {
                camera: Camera::look_at(eye, center, [0.0, 0.0, 1.0], opts.width, opts.height, opts.fov_deg.to_radians()),
                light: orbit_point(center, radius_light, light_az, opts.light_elevation_deg),
            }
        })
        .collect();
    Trajectory { steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{norm3, sub3};

    #[test]
    fn default_path_has_480_steps() {
        let t = relight_trajectory([0.0; 3], 6.0, 4.0);
        assert_eq!(t.len(), 480);
        t.validate(1e-9).unwrap();
    }

    #[test]
    fn lights_stay_on_their_circle() {
        let c = [0.3, -0.2, 0.1];
        let t = relight_trajectory(c, 5.0, 3.0);
        for s in &t.steps {
            assert!((norm3(sub3(s.light, c)) - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn camera_returns_to_start() {
        let t = relight_trajectory([0.0; 3], 6.0, 4.0);
        assert_eq!(t.steps[0].camera, t.steps[479].camera);
    }

    #[test]
    fn static_camera_segments_only_move_the_light() {
        let t = relight_trajectory([0.0; 3], 6.0, 4.0);
        for seg in [&t.steps[0..150], &t.steps[240..390]] {
            assert!(seg.iter().all(|s| s.camera == seg[0].camera));
            assert!(seg.windows(2).all(|w| w[0].light != w[1].light));
        }
    }
}
