use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::SceneError;

/// RGB image in `[0,1]`, row-major. As a texture, texel `(i, j)` has its
/// center at uv `((j + 0.5) / width, (i + 0.5) / height)`, so row 0 sits at
/// v near 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// 8-bit quantization, rounding half up.
pub fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn quantize16(v: f32) -> u16 {
    (f64::from(v.clamp(0.0, 1.0)) * 65535.0 + 0.5).floor() as u16
}

impl TextureImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for i in 0..height {
            for j in 0..width {
                img.set(i, j, f(i, j));
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f32; 3] {
        let k = (i * self.width + j) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: [f32; 3]) {
        let k = (i * self.width + j) * 3;
        self.data[k..k + 3].copy_from_slice(&c);
    }

    /// Bilinear lookup on texel centers with clamp-to-edge.
    pub fn sample_bilinear(&self, uv: [f64; 2]) -> [f32; 3] {
        let x = (uv[0] * self.width as f64 - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (uv[1] * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (j0, i0) = (x.floor() as usize, y.floor() as usize);
        let (j1, i1) = ((j0 + 1).min(self.width - 1), (i0 + 1).min(self.height - 1));
        let (fx, fy) = ((x - j0 as f64) as f32, (y - i0 as f64) as f32);
        let (a, b, c, d) = (self.get(i0, j0), self.get(i0, j1), self.get(i1, j0), self.get(i1, j1));
        std::array::from_fn(|k| {
            (1.0 - fy) * ((1.0 - fx) * a[k] + fx * b[k]) + fy * ((1.0 - fx) * c[k] + fx * d[k])
        })
    }

    pub fn sample_nearest(&self, uv: [f64; 2]) -> [f32; 3] {
        let j = ((uv[0] * self.width as f64).floor() as isize).clamp(0, self.width as isize - 1) as usize;
        let i = ((uv[1] * self.height as f64).floor() as isize).clamp(0, self.height as isize - 1) as usize;
        self.get(i, j)
    }

    /// 2×2 box filter; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Self {
        Self::from_fn(self.width / 2, self.height / 2, |i, j| {
            let px = [self.get(2 * i, 2 * j), self.get(2 * i, 2 * j + 1), self.get(2 * i + 1, 2 * j), self.get(2 * i + 1, 2 * j + 1)];
            std::array::from_fn(|k| 0.25 * (px[0][k] + px[1][k] + px[2][k] + px[3][k]))
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), SceneError> {
        let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(self.width as u32, self.height as u32, |x, y| {
            Rgb(self.get(y as usize, x as usize).map(quantize8))
        });
        buf.save(path).map_err(|e| SceneError::Image(e.to_string()))
    }

    pub fn save_png16(&self, path: &Path) -> Result<(), SceneError> {
        let buf = ImageBuffer::<Rgb<u16>, _>::from_fn(self.width as u32, self.height as u32, |x, y| {
            Rgb(self.get(y as usize, x as usize).map(quantize16))
        });
        buf.save(path).map_err(|e| SceneError::Image(e.to_string()))
    }

    /// Load any PNG the `image` crate understands, converting to RGB.
    pub fn load_png(path: &Path) -> Result<Self, SceneError> {
        let img = image::open(path).map_err(|e| SceneError::Image(format!("{}: {e}", path.display())))?;
        let rgb = img.to_rgb32f();
        Ok(Self { width: rgb.width() as usize, height: rgb.height() as usize, data: rgb.into_raw() })
    }
}

/// Write a boolean mask as 8-bit grayscale (255 = set).
pub fn save_mask_png(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<(), SceneError> {
    let buf = ImageBuffer::<Luma<u8>, _>::from_fn(width as u32, height as u32, |x, y| {
        Luma([if mask[y as usize * width + x as usize] { 255 } else { 0 }])
    });
    buf.save(path).map_err(|e| SceneError::Image(e.to_string()))
}

pub fn load_mask_png(path: &Path) -> Result<(Vec<bool>, usize, usize), SceneError> {
    let img = image::open(path).map_err(|e| SceneError::Image(format!("{}: {e}", path.display())))?;
    let g = img.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    Ok((g.into_raw().into_iter().map(|v| v >= 128).collect(), w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_rounds_up() {
        assert_eq!(quantize8(0.5), 128);
        assert_eq!(quantize8(0.0), 0);
        assert_eq!(quantize8(1.0), 255);
        assert_eq!(quantize8(1.5), 255);
    }

    #[test]
    fn bilinear_hits_texel_centers() {
        let img = TextureImage::from_fn(4, 3, |i, j| [i as f32, j as f32, 0.0]);
        for i in 0..3 {
            for j in 0..4 {
                let uv = [(j as f64 + 0.5) / 4.0, (i as f64 + 0.5) / 3.0];
                assert_eq!(img.sample_bilinear(uv), img.get(i, j));
                assert_eq!(img.sample_nearest(uv), img.get(i, j));
            }
        }
        let mid = img.sample_bilinear([0.25, 0.5]);
        assert!((mid[1] - 0.5).abs() < 1e-6 && (mid[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = TextureImage::from_fn(5, 3, |i, j| [i as f32 / 2.0, j as f32 / 4.0, 0.5]);
        img.save_png(&path).unwrap();
        let back = TextureImage::load_png(&path).unwrap();
        assert_eq!((back.width, back.height), (5, 3));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
