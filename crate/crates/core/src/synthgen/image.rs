use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Grayscale raster with intensities in `[0, 1]`; ink is bright.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn invert(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 1.0 - *v);
    }

    /// Copies `src` with its top-left corner at `(top, left)`, clipping.
    pub fn blit_max(&mut self, src: &GrayImage, top: isize, left: isize) {
        for y in 0..src.height {
            let ty = top + y as isize;
            if ty < 0 || ty >= self.height as isize {
                continue;
            }
            for x in 0..src.width {
                let tx = left + x as isize;
                if tx < 0 || tx >= self.width as isize {
                    continue;
                }
                let (ty, tx) = (ty as usize, tx as usize);
                let v = self.get(ty, tx).max(src.get(y, x));
                self.set(ty, tx, v);
            }
        }
    }

    fn to_buffer(&self) -> ImageBuffer<Luma<f32>, Vec<f32>> {
        ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size matches dimensions")
    }

    pub fn resize(&self, height: usize, width: usize) -> GrayImage {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let out = imageops::resize(&self.to_buffer(), width as u32, height as u32, FilterType::Triangle);
        let data = out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        GrayImage { height, width, data }
    }

    /// Scales to fit inside `height x width` keeping the aspect ratio, then
    /// pads with background: vertically centred, left aligned.
    pub fn resize_pad(&self, height: usize, width: usize) -> GrayImage {
        if self.height == 0 || self.width == 0 {
            return GrayImage::new(height, width);
        }
        let scale = (height as f64 / self.height as f64).min(width as f64 / self.width as f64);
        let nh = ((self.height as f64 * scale).round() as usize).clamp(1, height);
        let nw = ((self.width as f64 * scale).round() as usize).clamp(1, width);
        let scaled = self.resize(nh, nw);
        let mut out = GrayImage::new(height, width);
        out.blit_max(&scaled, ((height - nh) / 2) as isize, 0);
        out
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("dimensions match")
    }

    pub fn from_luma8(img: &image::GrayImage) -> GrayImage {
        GrayImage {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GrayImage> {
        let img = image::open(path)?.into_luma8();
        Ok(Self::from_luma8(&img))
    }

    pub(crate) fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update((self.height as u64).to_le_bytes());
        hasher.update((self.width as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
    }
}
