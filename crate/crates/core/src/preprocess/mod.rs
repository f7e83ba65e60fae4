//! Page preprocessing: Otsu binarization, a box-filtered ink-probability
//! map, and probability-weighted sampling of fixed-size patches.

mod inkmap;
mod otsu;
mod patches;

pub use inkmap::{ink_probability_map, InkProbabilityMap};
pub use otsu::{between_class_score, binarize_otsu, otsu_threshold, BinaryImage};
pub use patches::{extract_page_patches, normalize_patch, sample_patches, PagePatch, PatchExtractionConfig};

use crate::error::{Error, Result};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::imageops::FilterType;
use image::ImageEncoder;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

/// 8-bit grayscale raster, row-major; 0 is black ink, 255 white paper.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::shape(format!("{width}x{height} image cannot hold {} pixels", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::shape(format!("crop {w}x{h}+{x0}+{y0} leaves a {}x{} image", self.width, self.height)));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Self::new(w, h, pixels)
    }

    /// Bilinear resampling to `side × side`.
    pub fn resize(&self, side: usize) -> Self {
        if self.width == side && self.height == side {
            return self.clone();
        }
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("pixel count checked at construction");
        let out = image::imageops::resize(&buf, side as u32, side as u32, FilterType::Triangle);
        Self { width: side, height: side, pixels: out.into_raw() }
    }

    /// Fraction of pixels darker than mid-gray.
    pub fn ink_fraction(&self) -> f64 {
        self.pixels.iter().filter(|&&p| p < 128).count() as f64 / self.pixels.len() as f64
    }

    /// Reads any grayscale-convertible PGM or PNG file.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        Self::new(w as usize, h as usize, luma.into_raw())
    }

    /// Writes a binary (P5) PGM.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let enc = PnmEncoder::new(BufWriter::new(file)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
        enc.write_image(&self.pixels, self.width as u32, self.height as u32, image::ExtendedColorType::L8)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }
}
