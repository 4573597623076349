//! Label images: class `q` of `Q` is stored as intensity
//! `round((q-1) * 255 / (Q-1))`, with a JSON sidecar `{"q": Q, "map": [...]}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io, GrayImage};
use crate::error::{Error, Result};
use crate::mrf::Labeling;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub q: usize,
    pub map: Vec<u8>,
}

impl LabelMap {
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::arg("label maps need at least one class"));
        }
        Ok(Self {
            q,
            map: (1..=q).map(|c| label_intensity(c, q)).collect(),
        })
    }

    fn class_of(&self, intensity: u8) -> Option<usize> {
        self.map.iter().position(|&m| m == intensity).map(|i| i + 1)
    }

    pub fn sidecar_path(image_path: &Path) -> PathBuf {
        image_path.with_extension("json")
    }
}

pub fn label_intensity(class: usize, q: usize) -> u8 {
    if q <= 1 {
        return 0;
    }
    ((class - 1) as f64 * 255.0 / (q - 1) as f64).round() as u8
}

/// Renders `labeling` as a PGM (or PNG, by extension) plus its JSON sidecar.
/// With `show_violations`, pixels whose one-hot block was invalid are drawn
/// at 128 +/- 16 in a checker pattern instead of their repaired class.
pub fn save_labels(
    labeling: &Labeling,
    width: usize,
    height: usize,
    q: usize,
    path: impl AsRef<Path>,
    show_violations: bool,
) -> Result<()> {
    let path = path.as_ref();
    let map = LabelMap::new(q)?;
    if labeling.labels.len() != width * height {
        return Err(Error::arg(format!(
            "labeling has {} pixels, image is {width}x{height}",
            labeling.labels.len()
        )));
    }
    let mut pixels = Vec::with_capacity(width * height);
    for &l in &labeling.labels {
        if l == 0 || l > q {
            return Err(Error::arg(format!("label {l} outside 1..={q}")));
        }
        pixels.push(map.map[l - 1]);
    }
    if show_violations {
        for &i in &labeling.violations {
            let (x, y) = (i % width, i / width);
            pixels[i] = if (x + y) % 2 == 0 { 144 } else { 112 };
        }
    }
    let img = GrayImage::new(width, height, pixels)?;
    io::save(&img, path)?;
    std::fs::write(LabelMap::sidecar_path(path), serde_json::to_vec(&map)?)?;
    Ok(())
}

/// Reads a label image. Uses the JSON sidecar when present, otherwise treats
/// the sorted distinct intensities as classes `1..=Q`.
pub fn load_labels(path: impl AsRef<Path>) -> Result<(Vec<usize>, LabelMap)> {
    let path = path.as_ref();
    let img = io::load(path)?;
    let sidecar = LabelMap::sidecar_path(path);
    let map = if sidecar.exists() {
        let map: LabelMap = serde_json::from_slice(&std::fs::read(&sidecar)?)?;
        if map.map.len() != map.q {
            return Err(Error::Model(format!(
                "{}: map lists {} intensities for q = {}",
                sidecar.display(),
                map.map.len(),
                map.q
            )));
        }
        map
    } else {
        let mut seen: Vec<u8> = img.pixels().to_vec();
        seen.sort_unstable();
        seen.dedup();
        LabelMap {
            q: seen.len(),
            map: seen,
        }
    };
    let labels = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            map.class_of(p).ok_or_else(|| {
                Error::Model(format!(
                    "{}: pixel {i} has intensity {p}, not in the label map",
                    path.display()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((labels, map))
}
