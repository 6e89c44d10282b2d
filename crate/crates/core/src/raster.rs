//! Floating-point RGB(A) images in `[0, 1]`, stored row-major.

use std::path::Path;

use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            width > 0 && height > 0,
            Validation,
            "image dimensions must be positive, got {width}x{height}"
        );
        ensure!(
            data.len() == width * height * 3,
            Validation,
            "expected {} RGB values for {width}x{height}, got {}",
            width * height * 3,
            data.len()
        );
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// All channel values finite and inside `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// 8-bit quantization, `round(255·c)` after clamping to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&c| quantize(c)).collect()
    }

    /// Snaps every value onto the 8-bit lattice `k / 255`.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&c| quantize(c) as f32 / 255.0).collect(),
        }
    }

    /// Box-filter downsampling by an integer factor. Dimensions must be
    /// divisible by `factor`.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        ensure!(factor >= 1, Validation, "downsample factor must be >= 1");
        ensure!(
            self.width % factor == 0 && self.height % factor == 0,
            Validation,
            "{}x{} is not divisible by downsample factor {factor}",
            self.width,
            self.height
        );
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f32;
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
                    }
                }
                data.extend(acc.iter().map(|a| a * norm));
            }
        }
        Self::new(w, h, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_owned(),
                source,
            })
    }
}

/// An image with straight (non-premultiplied) alpha.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbaImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbaImage {
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| match source {
                image::ImageError::IoError(e) => Error::io(path, e),
                source => Error::Image {
                    path: path.to_owned(),
                    source,
                },
            })?
            .to_rgba8();
        let (width, height) = (img.width() as usize, img.height() as usize);
        Ok(Self {
            width,
            height,
            data: img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.data.iter().map(|&c| quantize(c)).collect();
        let buf = image::RgbaImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::Validation("RGBA buffer length mismatch".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_owned(),
                source,
            })
    }

    /// Blends over a solid background: `α·rgb + (1 − α)·background`.
    pub fn composite(&self, background: [f32; 3]) -> RgbImage {
        let data = self
            .data
            .chunks_exact(4)
            .flat_map(|px| {
                let a = px[3];
                [0, 1, 2].map(|c| a * px[c] + (1.0 - a) * background[c])
            })
            .collect();
        RgbImage::new(self.width, self.height, data).expect("dimensions preserved")
    }
}

fn quantize(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}
