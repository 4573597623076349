//! Run configuration: clap flags layered over an optional JSON file.
//!
//! Every option is optional in both places. A flag wins over the file, the
//! file wins over the built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use qseg_core::anneal::DEFAULT_SWEEPS;
use qseg_core::em::{
    default_lambda_p, EmConfig, InitStrategy, SamplerSettings, DEFAULT_DELTA, DEFAULT_FINAL_MULTIPLIER,
    DEFAULT_MAX_EPOCHS, DEFAULT_SAMPLES,
};
use qseg_core::imaging::{evenly_spaced_means, NoiseSpec, Pattern, SyntheticSpec};
use qseg_core::mrf::{Connectivity, Scheme};
use qseg_core::noise::{NoiseKind, NoiseModel};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub instance: InstanceArgs,
    #[serde(default)]
    pub em: EmArgs,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternArg {
    Checkerboard,
    Blob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Gaussian,
    Weibull,
}

impl From<KindArg> for NoiseKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Gaussian => NoiseKind::Gaussian,
            KindArg::Weibull => NoiseKind::Weibull,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeArg {
    Binary,
    OneHot,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Binary => Scheme::Binary,
            SchemeArg::OneHot => Scheme::OneHot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitArg {
    Kmeans,
    Threshold,
    Explicit,
}

/// Synthetic instance options (`generate` and `sweep`).
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceArgs {
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, value_enum)]
    pub pattern: Option<PatternArg>,
    /// Checkerboard tile side in pixels.
    #[arg(long)]
    pub tile: Option<usize>,
    /// Per-class mean intensities, comma separated. Defaults to evenly spaced.
    #[arg(long, value_delimiter = ',')]
    pub means: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub noise: Option<KindArg>,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Scale of the multiplicative Weibull speckle.
    #[arg(long)]
    pub speckle_scale: Option<f64>,
    /// Shape of the multiplicative Weibull speckle.
    #[arg(long)]
    pub speckle_shape: Option<f64>,
}

macro_rules! layer {
    ($flags:expr, $file:expr, [$($f:ident),* $(,)?]) => {{
        let (a, b) = ($flags, $file);
        Self { $($f: a.$f.clone().or_else(|| b.$f.clone()),)* }
    }};
}

impl InstanceArgs {
    pub fn layered(&self, file: &InstanceArgs) -> Self {
        layer!(self, file, [width, height, pattern, tile, means, noise, sigma, speckle_scale, speckle_shape])
    }

    /// The synthetic spec for `q` classes.
    pub fn spec(&self, q: usize, seed: u64) -> CliResult<SyntheticSpec> {
        let pattern = match self.pattern.unwrap_or(PatternArg::Checkerboard) {
            PatternArg::Checkerboard => Pattern::Checkerboard { tile: self.tile.unwrap_or(8) },
            PatternArg::Blob => Pattern::BlobScene,
        };
        let class_means = match &self.means {
            Some(m) => {
                if m.len() != q {
                    return Err(CliError::usage(format!("{} class means given for q = {q}", m.len())));
                }
                m.clone()
            }
            None => evenly_spaced_means(q),
        };
        let noise = match self.noise.unwrap_or(KindArg::Gaussian) {
            KindArg::Gaussian => NoiseSpec::Gaussian { sigma: self.sigma.unwrap_or(25.0) },
            KindArg::Weibull => NoiseSpec::Weibull {
                scale: self.speckle_scale.unwrap_or(1.0),
                shape: self.speckle_shape.unwrap_or(4.0),
            },
        };
        let spec = SyntheticSpec {
            width: self.width.unwrap_or(40),
            height: self.height.unwrap_or(40),
            pattern,
            class_means,
            noise,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Segmentation options (`segment`, `sweep`, `dump-qubo`).
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmArgs {
    /// Number of classes.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Per-class noise distribution.
    #[arg(long, value_enum)]
    pub model: Option<KindArg>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Threshold init: intensities at or below this are shadow.
    #[arg(long)]
    pub shadow_max: Option<f64>,
    /// Threshold init: intensities at or above this are target.
    #[arg(long)]
    pub target_min: Option<f64>,
    /// JSON noise model used by `--init explicit`.
    #[arg(long)]
    pub init_model: Option<PathBuf>,
    #[arg(long)]
    pub lambda_p: Option<f64>,
    #[arg(long)]
    pub lambda_oh: Option<f64>,
    /// Use constraint multipliers that provably enforce the encoding.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sound_weights: Option<bool>,
    /// Samples per E-step.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sweeps per anneal.
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long, requires = "beta_end")]
    pub beta_start: Option<f64>,
    #[arg(long, requires = "beta_start")]
    pub beta_end: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Convergence threshold on the energy change between epochs.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Sample budget multiplier of the final E-step.
    #[arg(long)]
    pub final_multiplier: Option<usize>,
    /// Pixel neighborhood: 4 or 8.
    #[arg(long)]
    pub connectivity: Option<u8>,
    /// Relabel pixels with invalid one-hot blocks from their neighbors.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub repair: Option<bool>,
}

impl EmArgs {
    pub fn layered(&self, file: &EmArgs) -> Self {
        layer!(
            self,
            file,
            [
                q,
                scheme,
                model,
                init,
                shadow_max,
                target_min,
                init_model,
                lambda_p,
                lambda_oh,
                sound_weights,
                samples,
                sweeps,
                beta_start,
                beta_end,
                max_epochs,
                delta,
                final_multiplier,
                connectivity,
                repair,
            ]
        )
    }

    pub fn em_config(&self, seed: u64) -> CliResult<EmConfig> {
        let q = self.q.unwrap_or(2);
        let kind: NoiseKind = self.model.unwrap_or(KindArg::Gaussian).into();
        let init = match self.init.unwrap_or(InitArg::Kmeans) {
            InitArg::Kmeans => InitStrategy::Kmeans,
            InitArg::Threshold => InitStrategy::Threshold {
                shadow_max: self.shadow_max.unwrap_or(7.0),
                target_min: self.target_min.unwrap_or(20.0),
            },
            InitArg::Explicit => {
                let path = self
                    .init_model
                    .as_ref()
                    .ok_or_else(|| CliError::usage("--init explicit needs --init-model <json>"))?;
                let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                let model: NoiseModel =
                    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                InitStrategy::Explicit(model)
            }
        };
        if self.init_model.is_some() && self.init != Some(InitArg::Explicit) {
            return Err(CliError::usage("--init-model requires --init explicit"));
        }
        let connectivity = match self.connectivity.unwrap_or(4) {
            4 => Connectivity::Four,
            8 => Connectivity::Eight,
            c => return Err(CliError::usage(format!("connectivity must be 4 or 8, got {c}"))),
        };
        let beta_range = match (self.beta_start, self.beta_end) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => return Err(CliError::usage("--beta-start and --beta-end go together")),
        };
        if let Some((a, b)) = beta_range {
            if !(a > 0.0 && a < b && b.is_finite()) {
                return Err(CliError::usage(format!("invalid beta range {a} -> {b}")));
            }
        }
        let cfg = EmConfig {
            q,
            max_epochs: self.max_epochs.unwrap_or(DEFAULT_MAX_EPOCHS),
            delta: self.delta.unwrap_or(DEFAULT_DELTA),
            sampler: SamplerSettings {
                n_samples: self.samples.unwrap_or(DEFAULT_SAMPLES),
                n_sweeps: self.sweeps.unwrap_or(DEFAULT_SWEEPS),
                beta_range,
            },
            final_samples_multiplier: self.final_multiplier.unwrap_or(DEFAULT_FINAL_MULTIPLIER),
            lambda_p: self.lambda_p.unwrap_or_else(|| default_lambda_p(q)),
            lambda_oh: self.lambda_oh,
            sound_weights: self.sound_weights.unwrap_or(false),
            init,
            kind,
            scheme: self.scheme.unwrap_or(SchemeArg::OneHot).into(),
            connectivity,
            repair: self.repair.unwrap_or(true),
            seed,
            keep_labelings: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LambdaP,
    LambdaOh,
    Sweeps,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LambdaP => "lambda_p",
            SweepAxis::LambdaOh => "lambda_oh",
            SweepAxis::Sweeps => "sweeps",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Option<SweepAxis>,
    pub values: Option<Vec<f64>>,
    pub repeats: Option<usize>,
}

/// Expands `start:stop:step` (inclusive, with a small tolerance on the end).
pub fn parse_range(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| CliError::usage(format!("bad number {p:?} in range {s:?}"))))
        .collect::<CliResult<_>>()?;
    let [start, stop, step] = nums[..] else {
        return Err(CliError::usage(format!("range {s:?} is not start:stop:step")));
    };
    if !(step > 0.0) || stop < start {
        return Err(CliError::usage(format!("range {s:?} needs step > 0 and stop >= start")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if count > 10_000 {
        return Err(CliError::usage(format!("range {s:?} has too many points")));
    }
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}
