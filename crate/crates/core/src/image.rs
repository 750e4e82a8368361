use alloc::vec;
use alloc::vec::Vec;

/// Linear RGB image, row-major, three interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("image is {got_w}x{got_h}, expected {want_w}x{want_h}")]
pub struct ShapeMismatch {
    pub want_w: u32,
    pub want_h: u32,
    pub got_w: u32,
    pub got_h: u32,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, color: [f64; 3]) -> Self {
        let mut data = vec![0.0; (width * height * 3) as usize];
        for px in data.chunks_exact_mut(3) {
            px.copy_from_slice(&color);
        }
        Image { width, height, data }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), (width * height * 3) as usize, "pixel buffer size");
        Image { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let o = ((y * self.width + x) * 3) as usize;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: [f64; 3]) {
        let o = ((y * self.width + x) * 3) as usize;
        self.data[o..o + 3].copy_from_slice(&c);
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<(), ShapeMismatch> {
        if self.width != other.width || self.height != other.height {
            return Err(ShapeMismatch {
                want_w: self.width,
                want_h: self.height,
                got_w: other.width,
                got_h: other.height,
            });
        }
        Ok(())
    }

    /// Rec. 601 luma per pixel.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn mean_luma(&self) -> f64 {
        let l = self.luma();
        l.iter().sum::<f64>() / l.len().max(1) as f64
    }

    /// One channel as a plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}
