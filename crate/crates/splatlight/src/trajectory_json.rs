//! JSON form of relighting trajectories.
//!
//! ```json
//! { "steps": [ { "camera": { "rotation": [[..],[..],[..]], "translation": [..],
//!                            "fx": 175.8, "fy": 175.8, "cx": 64, "cy": 64,
//!                            "width": 128, "height": 128 },
//!                "light": [5.19, 0.0, 3.0] } ] }
//! ```
//!
//! `rotation`/`translation` map world to camera coordinates (OpenCV axes).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splatlight_core::geometry::Camera;
use splatlight_core::trajectory::{Trajectory, TrajectoryError, TrajectoryStep};

/// Tolerance for the orthonormality check on load.
pub const POSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryFileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: TrajectoryError },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraJson {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&Camera> for CameraJson {
    fn from(c: &Camera) -> Self {
        CameraJson {
            rotation: c.rotation,
            translation: c.translation,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl From<&CameraJson> for Camera {
    fn from(c: &CameraJson) -> Self {
        Camera {
            rotation: c.rotation,
            translation: c.translation,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepJson {
    camera: CameraJson,
    light: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryJson {
    steps: Vec<StepJson>,
}

pub fn to_json(t: &Trajectory) -> String {
    let doc = TrajectoryJson {
        steps: t
            .steps
            .iter()
            .map(|s| StepJson {
                camera: (&s.camera).into(),
                light: s.light,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("trajectory serializes")
}

pub fn from_json(text: &str) -> Result<Trajectory, serde_json::Error> {
    let doc: TrajectoryJson = serde_json::from_str(text)?;
    Ok(Trajectory {
        steps: doc
            .steps
            .iter()
            .map(|s| TrajectoryStep {
                camera: (&s.camera).into(),
                light: s.light,
            })
            .collect(),
    })
}

pub fn save(path: &Path, t: &Trajectory) -> Result<(), TrajectoryFileError> {
    fs::write(path, to_json(t)).map_err(|source| TrajectoryFileError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads and validates a trajectory file.
pub fn load(path: &Path) -> Result<Trajectory, TrajectoryFileError> {
    let text = fs::read_to_string(path).map_err(|source| TrajectoryFileError::Io {
        path: path.to_owned(),
        source,
    })?;
    let t = from_json(&text).map_err(|source| TrajectoryFileError::Json {
        path: path.to_owned(),
        source,
    })?;
    t.validate(POSE_TOLERANCE).map_err(|source| TrajectoryFileError::Invalid {
        path: path.to_owned(),
        source,
    })?;
    Ok(t)
}
