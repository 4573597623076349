//! Synthetic test scenes with known ground truth.

use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};
use crate::rng::Prng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Square tiles of side `tile`; tile `k` in row-major order gets class
    /// `k mod Q + 1`. Tiles on the right and bottom edges may be partial.
    Checkerboard { tile: usize },
    /// A bright target disc next to a dark shadow disc on a mid-gray
    /// background. Requires three classes: shadow (1), background (2), target (3).
    BlobScene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Additive: `clamp(round(mean + N(0, sigma)))`.
    Gaussian { sigma: f64 },
    /// Multiplicative speckle: `clamp(round(mean * w / E[w]))`, `w ~ Weibull(scale, shape)`.
    Weibull { scale: f64, shape: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub pattern: Pattern,
    pub class_means: Vec<f64>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Checkerboard with `q` means evenly spread over `0..=255`.
    pub fn checkerboard(width: usize, height: usize, tile: usize, q: usize, sigma: f64, seed: u64) -> Self {
        Self {
            width,
            height,
            pattern: Pattern::Checkerboard { tile },
            class_means: evenly_spaced_means(q),
            noise: NoiseSpec::Gaussian { sigma },
            seed,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.n_classes();
        if self.width == 0 || self.height == 0 {
            return Err(Error::arg("synthetic image dimensions must be positive"));
        }
        if q < 1 {
            return Err(Error::arg("at least one class mean is required"));
        }
        for (i, a) in self.class_means.iter().enumerate() {
            if !(0.0..=255.0).contains(a) {
                return Err(Error::arg(format!("class mean {a} outside 0..=255")));
            }
            if self.class_means[..i].contains(a) {
                return Err(Error::arg(format!("class mean {a} is repeated")));
            }
        }
        match self.pattern {
            Pattern::Checkerboard { tile } => {
                if tile == 0 || tile > self.width || tile > self.height {
                    return Err(Error::arg(format!(
                        "tile {tile} does not fit a {}x{} image",
                        self.width, self.height
                    )));
                }
            }
            Pattern::BlobScene => {
                if q != 3 {
                    return Err(Error::arg("the blob scene has exactly 3 classes"));
                }
            }
        }
        match self.noise {
            NoiseSpec::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::arg(format!("noise sigma must be >= 0, got {sigma}")))
            }
            NoiseSpec::Weibull { scale, shape } if !(scale > 0.0 && shape > 0.0) => {
                Err(Error::arg("Weibull speckle needs positive scale and shape"))
            }
            _ => Ok(()),
        }
    }
}

/// `round(255 * (q-1) / (Q-1))` for `q = 1..=Q`.
pub fn evenly_spaced_means(q: usize) -> Vec<f64> {
    if q == 1 {
        return vec![128.0];
    }
    (0..q).map(|i| (255.0 * i as f64 / (q - 1) as f64).round()).collect()
}

fn ground_truth(spec: &SyntheticSpec) -> Vec<usize> {
    let (w, h) = (spec.width, spec.height);
    let q = spec.n_classes();
    match spec.pattern {
        Pattern::Checkerboard { tile } => {
            let tiles_per_row = w.div_ceil(tile);
            (0..h)
                .flat_map(|y| (0..w).map(move |x| ((y / tile) * tiles_per_row + x / tile) % q + 1))
                .collect()
        }
        Pattern::BlobScene => {
            let (wf, hf) = (w as f64, h as f64);
            let r = wf.min(hf);
            let target = (0.40 * wf, 0.5 * hf, 0.18 * r);
            let shadow = (0.64 * wf, 0.5 * hf, 0.15 * r);
            let inside = |c: (f64, f64, f64), x: f64, y: f64| (x - c.0).powi(2) + (y - c.1).powi(2) <= c.2 * c.2;
            (0..h)
                .flat_map(|y| {
                    (0..w).map(move |x| {
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        if inside(target, px, py) {
                            3
                        } else if inside(shadow, px, py) {
                            1
                        } else {
                            2
                        }
                    })
                })
                .collect()
        }
    }
}

/// Renders `spec`. Pixels are visited in row-major order and each consumes
/// one noise draw from the stream seeded by `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<GrayImage> {
    spec.validate()?;
    let truth = ground_truth(spec);
    let mut rng = Prng::new(spec.seed);
    let weibull_mean = match spec.noise {
        NoiseSpec::Weibull { scale, shape } => scale * libm::tgamma(1.0 + 1.0 / shape),
        NoiseSpec::Gaussian { .. } => 1.0,
    };
    let pixels = truth
        .iter()
        .map(|&c| {
            let mean = spec.class_means[c - 1];
            let v = match spec.noise {
                NoiseSpec::Gaussian { sigma } => mean + sigma * rng.standard_normal(),
                NoiseSpec::Weibull { scale, shape } => mean * rng.weibull(scale, shape) / weibull_mean,
            };
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(spec.width, spec.height, pixels)?.with_ground_truth(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_checkerboard() {
        let spec = SyntheticSpec {
            width: 4,
            height: 4,
            pattern: Pattern::Checkerboard { tile: 2 },
            class_means: vec![0.0, 255.0],
            noise: NoiseSpec::Gaussian { sigma: 0.0 },
            seed: 1,
        };
        let img = generate(&spec).unwrap();
        #[rustfmt::skip]
        let expected_truth = vec![
            1, 1, 2, 2,
            1, 1, 2, 2,
            1, 1, 2, 2,
            1, 1, 2, 2,
        ];
        // Two tiles per row and two classes: row-major cycling repeats per row.
        assert_eq!(img.ground_truth().unwrap(), &expected_truth[..]);
        for (p, t) in img.pixels().iter().zip(&expected_truth) {
            assert_eq!(*p, if *t == 1 { 0 } else { 255 });
        }

        let odd = SyntheticSpec { width: 6, height: 4, ..spec };
        let img = generate(&odd).unwrap();
        assert_eq!(&img.ground_truth().unwrap()[..6], &[1, 1, 2, 2, 1, 1]);
        assert_eq!(&img.ground_truth().unwrap()[12..18], &[2, 2, 1, 1, 2, 2]);
    }

    #[test]
    fn tile_too_large() {
        let spec = SyntheticSpec::checkerboard(4, 4, 5, 2, 0.0, 0);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn gaussian_noise_level() {
        let spec = SyntheticSpec::checkerboard(40, 40, 8, 4, 25.0, 2024);
        let img = generate(&spec).unwrap();
        let truth = img.ground_truth().unwrap();
        // Interior classes are not affected by clamping.
        for class in [2usize, 3] {
            let xs: Vec<f64> = img
                .intensities()
                .zip(truth)
                .filter(|(_, &t)| t == class)
                .map(|(x, _)| x)
                .collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            assert!((sd - 25.0).abs() <= 0.15 * 25.0, "class {class} sd {sd}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticSpec::checkerboard(16, 16, 4, 3, 30.0, 9);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SyntheticSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().pixels(), generate(&other).unwrap().pixels());
    }

    #[test]
    fn class_sizes_within_one_tile() {
        for (w, h, tile, q) in [(40, 40, 8, 4), (20, 20, 4, 4), (8, 8, 3, 2), (30, 20, 5, 3)] {
            let img = generate(&SyntheticSpec::checkerboard(w, h, tile, q, 0.0, 0)).unwrap();
            let mut counts = vec![0usize; q];
            for &t in img.ground_truth().unwrap() {
                counts[t - 1] += 1;
            }
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            assert!(spread <= tile * tile, "{counts:?}");
        }
    }

    #[test]
    fn weibull_speckle_concentrates_for_large_shape() {
        let spec = SyntheticSpec {
            width: 30,
            height: 30,
            pattern: Pattern::BlobScene,
            class_means: vec![10.0, 60.0, 200.0],
            noise: NoiseSpec::Weibull { scale: 1.0, shape: 500.0 },
            seed: 4,
        };
        let img = generate(&spec).unwrap();
        for (p, &t) in img.pixels().iter().zip(img.ground_truth().unwrap()) {
            let mean = spec.class_means[t - 1];
            assert!((*p as f64 - mean).abs() <= 0.02 * mean + 1.0, "{p} vs {mean}");
        }
        let mut counts = [0usize; 3];
        for &t in img.ground_truth().unwrap() {
            counts[t - 1] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn spec_validation() {
        let mut spec = SyntheticSpec::checkerboard(8, 8, 2, 2, 1.0, 0);
        spec.class_means = vec![5.0, 5.0];
        assert!(spec.validate().is_err());
        spec.class_means = vec![5.0, 300.0];
        assert!(spec.validate().is_err());
        let blob = SyntheticSpec { pattern: Pattern::BlobScene, ..SyntheticSpec::checkerboard(8, 8, 2, 2, 1.0, 0) };
        assert!(blob.validate().is_err());
    }
}
