//! 8-bit PNG encoding of linear float images.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use splatlight_core::image::Image;

/// How stored 8-bit values relate to the linear values used for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    /// Stored values are linear.
    #[default]
    Linear,
    /// Stored values are sRGB-encoded.
    Srgb,
}

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("cannot read image {path}: {source}")]
    Read {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("cannot write image {path}: {source}")]
    Write {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("cannot encode PNG: {0}")]
    Encode(image::ImageError),
    #[error("cannot decode PNG: {0}")]
    Decode(image::ImageError),
}

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn to_rgb8(img: &Image, color: ColorSpace) -> RgbImage {
    let bytes = img
        .data
        .iter()
        .map(|&v| {
            let v = v.clamp(0.0, 1.0);
            let v = match color {
                ColorSpace::Linear => v,
                ColorSpace::Srgb => linear_to_srgb(v),
            };
            (v * 255.0).round() as u8
        })
        .collect();
    RgbImage::from_raw(img.width, img.height, bytes).expect("buffer matches dimensions")
}

fn from_rgb8(rgb: &RgbImage, color: ColorSpace) -> Image {
    let data = rgb
        .as_raw()
        .iter()
        .map(|&b| {
            let v = b as f64 / 255.0;
            match color {
                ColorSpace::Linear => v,
                ColorSpace::Srgb => srgb_to_linear(v),
            }
        })
        .collect();
    Image::from_data(rgb.width(), rgb.height(), data)
}

pub fn encode_png(img: &Image, color: ColorSpace) -> Result<Vec<u8>, ImageIoError> {
    let mut out = Cursor::new(Vec::new());
    to_rgb8(img, color)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(ImageIoError::Encode)?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8], color: ColorSpace) -> Result<Image, ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(ImageIoError::Decode)?;
    Ok(from_rgb8(&img.to_rgb8(), color))
}

pub fn read_png(path: &Path, color: ColorSpace) -> Result<Image, ImageIoError> {
    let img = image::open(path).map_err(|source| ImageIoError::Read {
        path: path.to_owned(),
        source,
    })?;
    Ok(from_rgb8(&img.to_rgb8(), color))
}

pub fn write_png(path: &Path, img: &Image, color: ColorSpace) -> Result<(), ImageIoError> {
    to_rgb8(img, color)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| ImageIoError::Write {
            path: path.to_owned(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_curves_invert() {
        for i in 0..=100 {
            let v = i as f64 / 100.0;
            assert!((srgb_to_linear(linear_to_srgb(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn png_round_trip_is_exact_on_the_8_bit_grid() {
        let img = Image::from_fn(5, 3, |x, y| [x as f64 / 255.0, y as f64 / 255.0, 1.0]);
        let back = decode_png(&encode_png(&img, ColorSpace::Linear).unwrap(), ColorSpace::Linear).unwrap();
        assert_eq!(back, img);
    }
}
