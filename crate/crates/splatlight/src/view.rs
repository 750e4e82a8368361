//! Render requests: one camera, one light, image size and term selection.
//! Shared by `splatlight render` and `POST /render`.
//!
//! ```json
//! {
//!   "camera": { "look_at": { "eye": [0, -4, 1], "target": [0, 0, 0], "up": [0, 0, 1] }, "fov_deg": 40 },
//!   "light": [3, -3, 4],
//!   "width": 128,
//!   "height": 128,
//!   "composition": "D",
//!   "debug": "shadow"
//! }
//! ```
//!
//! Instead of `look_at` the camera may give `"c2w"`: a 4×4 camera-to-world
//! matrix in the NeRF/OpenGL convention. `composition` is either a letter A-F
//! or an object `{ "diffuse": true, "specular": true, "sss": true, "shadow": true }`
//! (missing keys default to true). `debug` names a single term to visualize.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use splatlight_core::geometry::{Camera, GeometryError};
use splatlight_core::math::{cross3, norm3, sub3};
use splatlight_core::render::DebugTerm;
use splatlight_core::shading::{Composition, TermMask};

/// Largest deviation from orthonormality accepted for `c2w` rotations.
pub const POSE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookAt {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "z_up")]
    pub up: [f64; 3],
}

fn z_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_fov() -> f64 {
    40.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub look_at: Option<LookAt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2w: Option<[[f64; 4]; 4]>,
    /// Horizontal field of view in degrees.
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Named(String),
    Terms {
        #[serde(default = "yes")]
        diffuse: bool,
        #[serde(default = "yes")]
        specular: bool,
        #[serde(default = "yes")]
        sss: bool,
        #[serde(default = "yes")]
        shadow: bool,
    },
}

fn yes() -> bool {
    true
}

fn default_side() -> u32 {
    128
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub camera: CameraSpec,
    pub light: [f64; 3],
    #[serde(default = "default_side")]
    pub width: u32,
    #[serde(default = "default_side")]
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<MaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debug: Option<String>,
}

/// Why a request cannot be rendered.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ViewError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("image {width}x{height} exceeds the {max}-pixel side limit")]
    TooLarge { width: u32, height: u32, max: u32 },
    #[error("invalid camera pose: {0}")]
    Pose(String),
}

/// A validated request.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub light: [f64; 3],
    pub mask: TermMask,
    pub debug: Option<DebugTerm>,
}

pub fn parse_request(body: &[u8]) -> Result<RenderRequest, ViewError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ViewError::Malformed(e.to_string()))?;
    serde_json::from_value(value).map_err(|e| ViewError::Malformed(e.to_string()))
}

fn mask_of(spec: &Option<MaskSpec>) -> Result<TermMask, ViewError> {
    match spec {
        None => Ok(TermMask::FULL),
        Some(MaskSpec::Named(s)) => s
            .parse::<Composition>()
            .map(Composition::mask)
            .map_err(|e| ViewError::Malformed(e.to_string())),
        Some(MaskSpec::Terms {
            diffuse,
            specular,
            sss,
            shadow,
        }) => Ok(TermMask {
            diffuse: *diffuse,
            specular: *specular,
            sss: *sss,
            shadow: *shadow,
            shadow_on_sss: false,
        }),
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl RenderRequest {
    pub fn validate(&self, max_side: u32) -> Result<View, ViewError> {
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 {
            return Err(ViewError::Malformed("width and height must be positive".into()));
        }
        if w > max_side || h > max_side {
            return Err(ViewError::TooLarge {
                width: w,
                height: h,
                max: max_side,
            });
        }
        if !finite(&self.light) {
            return Err(ViewError::Malformed("light position must be finite".into()));
        }
        let fov = self.camera.fov_deg;
        if !(fov > 0.0 && fov < 180.0) {
            return Err(ViewError::Malformed(format!("fov_deg = {fov} must lie in (0, 180)")));
        }
        let fx = w as f64 / (2.0 * (0.5 * fov.to_radians()).tan());
        let camera = match (&self.camera.look_at, &self.camera.c2w) {
            (Some(la), None) => {
                if !finite(&la.eye) || !finite(&la.target) || !finite(&la.up) {
                    return Err(ViewError::Malformed("look_at vectors must be finite".into()));
                }
                let fwd = sub3(la.target, la.eye);
                if norm3(fwd) < 1e-9 {
                    return Err(ViewError::Pose("eye and target coincide".into()));
                }
                if norm3(la.up) < 1e-9 || norm3(cross3(fwd, la.up)) < 1e-9 * norm3(fwd) * norm3(la.up) {
                    return Err(ViewError::Pose("up vector is zero or parallel to the view direction".into()));
                }
                Camera::look_at(la.eye, la.target, la.up, w, h, fov.to_radians())
            }
            (None, Some(m)) => {
                if !finite(m.as_flattened()) {
                    return Err(ViewError::Malformed("c2w must be finite".into()));
                }
                Camera::from_c2w_opengl(m, fx, fx, 0.5 * w as f64, 0.5 * h as f64, w, h)
            }
            _ => {
                return Err(ViewError::Malformed(
                    "camera needs exactly one of `look_at` or `c2w`".into(),
                ))
            }
        };
        camera.validate(POSE_TOLERANCE).map_err(|e| match e {
            GeometryError::NonOrthonormal(_) => ViewError::Pose(e.to_string()),
            other => ViewError::Malformed(other.to_string()),
        })?;
        let debug = self
            .debug
            .as_deref()
            .map(str::parse::<DebugTerm>)
            .transpose()
            .map_err(|e| ViewError::Malformed(e.to_string()))?;
        Ok(View {
            camera,
            light: self.light,
            mask: mask_of(&self.composition)?,
            debug,
        })
    }
}
