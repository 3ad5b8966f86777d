//! Float RGB frames and the square adversarial patch.

use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Planar (channel-major) RGB frame with channels in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        let plane = width * height;
        for (chunk, v) in img.data.chunks_mut(plane.max(1)).zip(rgb) {
            chunk.fill(v);
        }
        img
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::InvalidArgument(format!(
                "planar buffer of {} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn set_rgb(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.set(c, y, x, v);
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([
                quantize(self.get(0, y, x)),
                quantize(self.get(1, y, x)),
                quantize(self.get(2, y, x)),
            ])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(w, h);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, px.0[c] as f64 / 255.0);
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Image::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}

/// `round(clamp(v, 0, 1) * 255)` with halves rounded up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Square trainable patch, row-major interleaved RGB, channels in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    size: usize,
    pixels: Vec<f32>,
}

impl Patch {
    pub fn filled(size: usize, value: f32) -> Self {
        Patch {
            size,
            pixels: vec![value.clamp(0.0, 1.0); size * size * 3],
        }
    }

    pub fn from_pixels(size: usize, pixels: Vec<f32>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size * 3 {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {size}x{size} RGB patch",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("patch channels must lie in [0,1]".into()));
        }
        Ok(Patch { size, pixels })
    }

    /// Every channel i.i.d. uniform on `[0,1)`.
    pub fn random(size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("patch size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..size * size * 3).map(|_| rng.random::<f32>()).collect();
        Ok(Patch { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.size + x) * 3 + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[self.index(y, x, c)]
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }

    /// Stores `values` clamped to `[0,1]` and rounded to `f32`.
    pub fn assign_clamped(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.pixels.len());
        for (p, &v) in self.pixels.iter_mut().zip(values) {
            *p = (v.clamp(0.0, 1.0)) as f32;
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.size as u32, self.size as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([0, 1, 2].map(|c| quantize(self.get(y, x, c) as f64)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn random_patch_is_deterministic_and_in_range() {
        let a = Patch::random(16, 3).unwrap();
        let b = Patch::random(16, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert_ne!(a, Patch::random(16, 4).unwrap());
        assert!(Patch::random(0, 1).is_err());
    }

    #[test]
    fn rgb8_round_trip_of_exact_levels() {
        let mut img = Image::new(3, 2);
        img.set_rgb(1, 2, [1.0, 0.0, 51.0 / 255.0]);
        let back = Image::from_rgb8(&img.to_rgb8());
        assert_eq!(back, img);
    }

    #[test]
    fn from_pixels_rejects_bad_input() {
        assert!(Patch::from_pixels(2, vec![0.5; 11]).is_err());
        assert!(Patch::from_pixels(1, vec![0.5, 1.5, 0.0]).is_err());
        assert!(Patch::from_pixels(1, vec![0.5, 1.0, 0.0]).is_ok());
    }
}
