//! Grayscale image representation, file I/O, resampling, patch extraction
//! and the PSNR/SSIM quality metrics.

mod metrics;
mod patches;
mod resample;

use std::path::Path;

use crate::error::{Error, Result};

pub use metrics::{psnr, ssim, ssim_with, ssim_with_grad, SsimWindow, PSNR_CAP_DB, SSIM_C1, SSIM_C2};
pub use patches::{extract_corpus_patches, extract_patches, CropMode, PatchRecipe};
pub use resample::{resample, ResampleMethod, Resampler};

/// A single-channel raster of real intensities, row-major.
///
/// Loaders and the codec bridge produce values in `[0, 1]`; network outputs
/// may leave that range and are only clamped when exported.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "{} samples do not fill a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    /// Mean squared error against `other`.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.ensure_same_dims(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width}@({top},{left}) outside {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |y, x| self.get(top + y, left + x)))
    }

    /// Rotates counter-clockwise by `quarter_turns` × 90°.
    pub fn rotate90(&self, quarter_turns: usize) -> Image {
        let (h, w) = self.dims();
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => Image::from_fn(w, h, |y, x| self.get(x, w - 1 - y)),
            2 => Image::from_fn(h, w, |y, x| self.get(h - 1 - y, w - 1 - x)),
            _ => Image::from_fn(w, h, |y, x| self.get(h - 1 - x, y)),
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.height, self.width, |y, x| self.get(self.height - 1 - y, x))
    }

    /// Clamps to `[0, 1]` and maps to 8 bits, rounding half away from zero.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_sample(v)).collect()
    }

    pub fn from_u8(height: usize, width: usize, samples: &[u8]) -> Result<Image> {
        Image::new(
            height,
            width,
            samples.iter().map(|&v| f64::from(v) / 255.0).collect(),
        )
    }

    /// Writes an 8-bit grayscale file; the format follows the extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .expect("buffer matches dimensions");
        buf.save(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::InvalidArgument(format!("cannot write {}: {other}", path.display())),
        })
    }
}

impl AsRef<Image> for Image {
    fn as_ref(&self) -> &Image {
        self
    }
}

#[inline]
pub(crate) fn quantize_sample(v: f64) -> u8 {
    // f64::round rounds half away from zero.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a raster as grayscale intensities in `[0, 1]`.
///
/// Color inputs are converted to luma with the BT.601 weights before
/// normalization.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let dynamic = reader.decode().map_err(|e| Error::Undecodable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(luma_from_dynamic(&dynamic))
}

pub(crate) fn luma_from_dynamic(dynamic: &image::DynamicImage) -> Image {
    use image::ColorType;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    match dynamic.color() {
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16 => {
            let gray = dynamic.to_luma8();
            Image::from_u8(h, w, gray.as_raw()).expect("decoder dimensions are consistent")
        }
        _ => {
            let rgb = dynamic.to_rgb8();
            let data = rgb
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0.map(f64::from);
                    (0.299 * r + 0.587 * g + 0.114 * b).round() / 255.0
                })
                .collect();
            Image::new(h, w, data).expect("decoder dimensions are consistent")
        }
    }
}

/// Lists the raster files (png, bmp, pgm/pnm, jpg) in a directory, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(
            ext.as_deref(),
            Some("png" | "bmp" | "pgm" | "pnm" | "ppm" | "jpg" | "jpeg")
        ) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}
