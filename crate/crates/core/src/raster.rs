//! Single-channel floating point rasters.
//!
//! Pixel `(c, r)` covers the square `[c, c+1) x [r, r+1)` in continuous image
//! coordinates, so its center sits at `(c + 0.5, r + 0.5)`. Keypoints,
//! homographies and mask warping all use this convention.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::dataio::DataError;

/// Grayscale image with intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "raster buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(c, r));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize) -> f32 {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, value: f32) {
        self.data[r * self.width + c] = value;
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect();
        Self::new(w as usize, h as usize, data)
    }

    /// Quantizes to 8 bits, clamping to `[0, 1]` first.
    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |c, r| {
            let v = self.get(c as usize, r as usize).clamp(0.0, 1.0);
            Luma([(v * 255.0).round() as u8])
        })
    }

    /// Loads any image format the `image` crate understands and converts it
    /// to grayscale.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let img = image::open(path).map_err(|e| DataError::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::from_gray8(&img.to_luma8()))
    }

    /// Writes the raster as a binary PGM.
    pub fn save_pgm(&self, path: &Path) -> Result<(), DataError> {
        crate::dataio::write_pgm(&self.to_gray8(), path)
    }

    /// Resamples to the given size with a triangle filter.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf = image::ImageBuffer::<Luma<f32>, Vec<f32>>::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.clone(),
        )
        .expect("buffer size checked at construction");
        let out = image::imageops::resize(
            &buf,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        Self::new(width, height, out.into_raw())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray8_quantization_round_trips_exact_levels() {
        let r = GrayRaster::from_fn(4, 3, |c, r| ((c + 4 * r) as f32 * 20.0) / 255.0);
        let back = GrayRaster::from_gray8(&r.to_gray8());
        for (a, b) in r.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_keeps_constant_images_constant() {
        let r = GrayRaster::filled(40, 30, 0.25).resized(20, 15);
        assert_eq!((r.width(), r.height()), (20, 15));
        assert!(r.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}
