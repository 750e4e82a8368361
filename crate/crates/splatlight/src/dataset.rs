//! OLAT datasets in the NeRF `transforms_*.json` layout, extended with a
//! per-frame point-light position.
//!
//! ```json
//! {
//!   "camera_angle_x": 0.6911,
//!   "frames": [
//!     { "file_path": "./train/r_000", "transform_matrix": [[...], ...], "pl_pos": [0.0, 0.0, 6.0] }
//!   ]
//! }
//! ```
//!
//! Poses are OpenGL camera-to-world matrices. Intrinsics come from `fl_x`/`fl_y`
//! (optionally `cx`/`cy`) or from `camera_angle_x`; the image size is read from
//! the image file. Image paths may omit the `.png` extension. The light key is
//! looked up in [`LIGHT_KEYS`] order.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use splatlight_core::dataset::OlatFrame;
use splatlight_core::geometry::Camera;

use crate::imageio::{self, ColorSpace, ImageIoError};

/// Accepted spellings of the per-frame light position, in lookup order.
pub const LIGHT_KEYS: [&str; 5] = ["pl_pos", "light_pos", "light_position", "lightPos", "point_light"];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("no transforms file for split `{split}` in {dir}")]
    NoTransforms { dir: PathBuf, split: String },
    #[error("frame `{frame}` has no light position (expected one of: {})", LIGHT_KEYS.join(", "))]
    MissingLight { frame: String },
    #[error("frame `{frame}`: light position must be three finite numbers")]
    BadLight { frame: String },
    #[error("frame `{frame}`: image {path} not found")]
    MissingImage { frame: String, path: PathBuf },
    #[error("frame `{frame}`: {source}")]
    Image { frame: String, source: ImageIoError },
    #[error("{path}: neither fl_x nor camera_angle_x is given")]
    NoIntrinsics { path: PathBuf },
    #[error("frame `{frame}`: image is {got_w}x{got_h}, transforms file says {want_w}x{want_h}")]
    Size {
        frame: String,
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera_angle_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<u32>,
    frames: Vec<FrameEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameEntry {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub split: String,
    pub color: ColorSpace,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            split: "train".into(),
            color: ColorSpace::Linear,
        }
    }
}

fn frame_name(file_path: &str) -> String {
    Path::new(file_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file_path.to_owned())
}

fn light_of(frame: &str, extra: &Map<String, Value>) -> Result<[f64; 3], DatasetError> {
    let value = LIGHT_KEYS
        .iter()
        .find_map(|k| extra.get(*k))
        .ok_or_else(|| DatasetError::MissingLight { frame: frame.into() })?;
    let bad = || DatasetError::BadLight { frame: frame.into() };
    let arr = value.as_array().filter(|a| a.len() == 3).ok_or_else(bad)?;
    let mut out = [0.0; 3];
    for (o, v) in out.iter_mut().zip(arr) {
        *o = v.as_f64().filter(|x| x.is_finite()).ok_or_else(bad)?;
    }
    Ok(out)
}

fn image_path(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

/// Path of the transforms file for `split`, falling back to `transforms.json`
/// for the training split.
pub fn transforms_path(dir: &Path, split: &str) -> Option<PathBuf> {
    let named = dir.join(format!("transforms_{split}.json"));
    if named.is_file() {
        return Some(named);
    }
    let plain = dir.join("transforms.json");
    (split == "train" && plain.is_file()).then_some(plain)
}

/// Loads every frame of one split. Images are decoded in parallel.
pub fn load_olat(dir: &Path, opts: &LoadOptions) -> Result<Vec<OlatFrame>, DatasetError> {
    let path = transforms_path(dir, &opts.split).ok_or_else(|| DatasetError::NoTransforms {
        dir: dir.to_owned(),
        split: opts.split.clone(),
    })?;
    let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io {
        path: path.clone(),
        source,
    })?;
    let file: TransformsFile = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.clone(),
        source,
    })?;
    if file.fl_x.is_none() && file.camera_angle_x.is_none() {
        return Err(DatasetError::NoIntrinsics { path });
    }

    file.frames
        .par_iter()
        .map(|entry| {
            let id = frame_name(&entry.file_path);
            let light = light_of(&id, &entry.extra)?;
            let img_path = image_path(dir, &entry.file_path);
            if !img_path.is_file() {
                return Err(DatasetError::MissingImage { frame: id, path: img_path });
            }
            let image = imageio::read_png(&img_path, opts.color).map_err(|source| DatasetError::Image {
                frame: id.clone(),
                source,
            })?;
            let (w, h) = (image.width, image.height);
            if let (Some(want_w), Some(want_h)) = (file.w, file.h) {
                if (want_w, want_h) != (w, h) {
                    return Err(DatasetError::Size {
                        frame: id,
                        want_w,
                        want_h,
                        got_w: w,
                        got_h: h,
                    });
                }
            }
            let fx = match (file.fl_x, file.camera_angle_x) {
                (Some(f), _) => f,
                (None, Some(angle)) => 0.5 * w as f64 / (0.5 * angle).tan(),
                (None, None) => unreachable!("checked above"),
            };
            let fy = file.fl_y.unwrap_or(fx);
            let cx = file.cx.unwrap_or(0.5 * w as f64);
            let cy = file.cy.unwrap_or(0.5 * h as f64);
            let camera = Camera::from_c2w_opengl(&entry.transform_matrix, fx, fy, cx, cy, w, h);
            Ok(OlatFrame {
                id,
                image,
                camera,
                light,
            })
        })
        .collect()
}

/// Writes `frames` as `transforms_{split}.json` plus one PNG per frame under
/// `{split}/`. All frames must share intrinsics.
pub fn save_olat(dir: &Path, split: &str, frames: &[OlatFrame], color: ColorSpace) -> Result<(), DatasetError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| DatasetError::Io { path, source }
    };
    let img_dir = dir.join(split);
    fs::create_dir_all(&img_dir).map_err(io(&img_dir))?;
    let first = frames.first().map(|f| &f.camera);
    let mut entries = Vec::with_capacity(frames.len());
    for f in frames {
        let rel = format!("./{split}/{}", f.id);
        imageio::write_png(&image_path(dir, &rel), &f.image, color).map_err(|source| DatasetError::Image {
            frame: f.id.clone(),
            source,
        })?;
        let mut extra = Map::new();
        extra.insert(LIGHT_KEYS[0].into(), serde_json::json!(f.light));
        entries.push(FrameEntry {
            file_path: rel,
            transform_matrix: f.camera.to_c2w_opengl(),
            extra,
        });
    }
    let file = TransformsFile {
        camera_angle_x: first.map(|c| 2.0 * (0.5 * c.width as f64 / c.fx).atan()),
        fl_x: first.map(|c| c.fx),
        fl_y: first.map(|c| c.fy),
        cx: first.map(|c| c.cx),
        cy: first.map(|c| c.cy),
        w: first.map(|c| c.width),
        h: first.map(|c| c.height),
        frames: entries,
    };
    let path = dir.join(format!("transforms_{split}.json"));
    let text = serde_json::to_string_pretty(&file).expect("transforms serialize");
    fs::write(&path, text).map_err(io(&path))
}
