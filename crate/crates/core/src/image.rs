//! RGB raster in `[0, 1]` and its pinned PNG encoding.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// `height x width x 3` image, row-major with interleaved RGB channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::BadImage(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::BadImage(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::BadImage(format!("value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::new(img.height() as usize, img.width() as usize, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// Decodes any PNG (gray, RGBA, 16-bit, ...) into RGB.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::BadImage(e.to_string()))?;
        Self::from_rgb8(&img.to_rgb8())
    }

    /// 8-bit RGB, non-interlaced, fixed compression and filter settings, so
    /// equal images always encode to equal bytes.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let rgb = self.to_rgb8();
        encode_png(rgb.as_raw(), rgb.width(), rgb.height(), ExtendedColorType::Rgb8)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_png_bytes(&std::fs::read(path)?)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes())?;
        Ok(())
    }
}

pub(crate) fn encode_png(raw: &[u8], width: u32, height: u32, color: ExtendedColorType) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(raw, width, height, color)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(Image::new(1, 1, vec![0.0, f32::NAN, 1.0]).is_err());
        assert!(Image::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn png_round_trip_of_8bit_values() {
        let img = Image::from_fn(3, 5, |y, x| {
            [(y * 40) as f32 / 255.0, (x * 50) as f32 / 255.0, 1.0]
        })
        .unwrap();
        let bytes = img.to_png_bytes();
        assert_eq!(Image::from_png_bytes(&bytes).unwrap(), img);
        assert_eq!(bytes, img.to_png_bytes());
    }

    #[test]
    fn corrupt_png_is_bad_image() {
        let err = Image::from_png_bytes(b"not a png").unwrap_err();
        assert_eq!(err.name(), "BadImage");
    }
}
