//! Grayscale images, file formats, synthetic scenes and accuracy scoring.

mod accuracy;
mod io;
mod labels;
mod synth;

pub use accuracy::{accuracy, AccuracyReport, MAX_MATCH_CLASSES};
pub use io::{load, load_with_format, save, save_with_format, ImageFormat};
pub use labels::{label_intensity, load_labels, save_labels, LabelMap};
pub use synth::{evenly_spaced_means, generate, NoiseSpec, Pattern, SyntheticSpec};

use crate::error::{Error, Result};

/// 8-bit grayscale image stored row-major, with optional per-pixel class
/// labels (1-based) when the ground truth is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    ground_truth: Option<Vec<usize>>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::arg(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            ground_truth: None,
        })
    }

    pub fn with_ground_truth(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.pixels.len() {
            return Err(Error::arg(format!(
                "ground truth has {} labels for {} pixels",
                labels.len(),
                self.pixels.len()
            )));
        }
        if labels.contains(&0) {
            return Err(Error::arg("ground-truth labels are 1-based"));
        }
        self.ground_truth = Some(labels);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn ground_truth(&self) -> Option<&[usize]> {
        self.ground_truth.as_deref()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn intensities(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| p as f64)
    }

    pub fn distinct_intensities(&self) -> usize {
        let mut seen = [false; 256];
        for &p in &self.pixels {
            seen[p as usize] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}
