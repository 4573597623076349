//! Expectation-maximization over noise parameters with annealed E-steps.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::anneal::{default_schedule, sample, AnnealSchedule, Interpolation, SamplerConfig, DEFAULT_SWEEPS};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::mrf::{
    auto_weights, build, decode, repair_nearest, sound_weights, ClassCosts, Connectivity, Labeling, MrfWeights, NeighborSystem,
    Scheme,
};
use crate::noise::{mle_update, ClassParams, NoiseKind, NoiseModel, SIGMA_FLOOR};
use crate::qubo::{Qubo, Sample};
use crate::rng::{derive_seed, Prng};

pub const DEFAULT_MAX_EPOCHS: usize = 30;
pub const DEFAULT_DELTA: f64 = 5.0;
pub const DEFAULT_SAMPLES: usize = 100;
pub const DEFAULT_FINAL_MULTIPLIER: usize = 10;
pub const KMEANS_MAX_ITER: usize = 100;

const KMEANS_STREAM: u64 = u64::MAX;
const FINAL_STREAM: u64 = u64::MAX - 1;

/// Pairwise weight used when none is given.
pub fn default_lambda_p(q: usize) -> f64 {
    match q {
        3 => 0.6,
        4 => 0.5,
        5 => 0.35,
        _ => 0.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Kmeans,
    Threshold { shadow_max: f64, target_min: f64 },
    Explicit(NoiseModel),
}

impl InitStrategy {
    pub fn threshold() -> Self {
        InitStrategy::Threshold { shadow_max: 7.0, target_min: 20.0 }
    }
}

/// Sampler budget per E-step. The temperature range is derived from each
/// QUBO unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    pub n_samples: usize,
    pub n_sweeps: usize,
    #[serde(default)]
    pub beta_range: Option<(f64, f64)>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { n_samples: DEFAULT_SAMPLES, n_sweeps: DEFAULT_SWEEPS, beta_range: None }
    }
}

impl SamplerSettings {
    pub fn config_for(&self, q: &Qubo, n_samples: usize, seed: u64) -> Result<SamplerConfig> {
        let schedule = match self.beta_range {
            Some((lo, hi)) => AnnealSchedule::new(self.n_sweeps, lo, hi, Interpolation::Geometric)?,
            None => default_schedule(q).with_sweeps(self.n_sweeps)?,
        };
        Ok(SamplerConfig { n_samples, schedule, seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    pub q: usize,
    pub max_epochs: usize,
    pub delta: f64,
    pub sampler: SamplerSettings,
    pub final_samples_multiplier: usize,
    pub lambda_p: f64,
    /// Overrides the derived one-hot multiplier.
    #[serde(default)]
    pub lambda_oh: Option<f64>,
    /// Use [`sound_weights`] instead of [`auto_weights`] for the constraint multipliers.
    #[serde(default)]
    pub sound_weights: bool,
    pub init: InitStrategy,
    pub kind: NoiseKind,
    pub scheme: Scheme,
    pub connectivity: Connectivity,
    /// Relabel violated pixels from their neighbors before the M-step.
    pub repair: bool,
    pub seed: u64,
    /// Store the labeling of every epoch in the trace.
    #[serde(default)]
    pub keep_labelings: bool,
}

impl EmConfig {
    pub fn new(q: usize) -> Self {
        Self {
            q,
            max_epochs: DEFAULT_MAX_EPOCHS,
            delta: DEFAULT_DELTA,
            sampler: SamplerSettings::default(),
            final_samples_multiplier: DEFAULT_FINAL_MULTIPLIER,
            lambda_p: default_lambda_p(q),
            lambda_oh: None,
            sound_weights: false,
            init: InitStrategy::Kmeans,
            kind: NoiseKind::Gaussian,
            scheme: Scheme::OneHot,
            connectivity: Connectivity::Four,
            repair: true,
            seed: 0,
            keep_labelings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::arg(format!("at least 2 classes are required, got {}", self.q)));
        }
        if self.max_epochs == 0 {
            return Err(Error::arg("max_epochs must be at least 1"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::arg(format!("delta must be positive, got {}", self.delta)));
        }
        if self.sampler.n_samples == 0 || self.sampler.n_sweeps == 0 {
            return Err(Error::arg("the sampler needs at least one sample and one sweep"));
        }
        if self.final_samples_multiplier == 0 {
            return Err(Error::arg("final_samples_multiplier must be at least 1"));
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return Err(Error::arg(format!("lambda_p must be finite and >= 0, got {}", self.lambda_p)));
        }
        if let Some(l) = self.lambda_oh {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::arg(format!("lambda_oh must be positive, got {l}")));
            }
        }
        if self.scheme == Scheme::Binary && self.q != 2 {
            return Err(Error::arg(format!("the binary scheme requires q = 2, got {}", self.q)));
        }
        if self.scheme == Scheme::Binary && self.lambda_oh.is_some() {
            return Err(Error::arg("lambda_oh only applies to the one_hot scheme"));
        }
        match &self.init {
            InitStrategy::Threshold { shadow_max, target_min } => {
                if self.q != 3 {
                    return Err(Error::arg("threshold initialization produces exactly 3 classes"));
                }
                if !(shadow_max < target_min) {
                    return Err(Error::arg("threshold initialization needs shadow_max < target_min"));
                }
            }
            InitStrategy::Explicit(m) => {
                m.validate()?;
                if m.n_classes() != self.q {
                    return Err(Error::arg(format!("initial model has {} classes, q is {}", m.n_classes(), self.q)));
                }
                if m.kind() != self.kind {
                    return Err(Error::arg("initial model family differs from the configured noise model"));
                }
            }
            InitStrategy::Kmeans => {}
        }
        Ok(())
    }

    pub fn weights(&self, nbrs: &NeighborSystem) -> MrfWeights {
        let mut w = if self.sound_weights {
            sound_weights(nbrs, self.q, self.lambda_p)
        } else {
            auto_weights(nbrs.n_pixels(), self.q, self.lambda_p)
        };
        if let Some(l) = self.lambda_oh {
            w.lambda_oh = l;
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Parameters used for this E-step.
    pub params: NoiseModel,
    /// Best sampled energy under those parameters.
    pub best_energy: f64,
    /// The same assignment scored with the re-estimated parameters.
    pub next_energy: f64,
    pub delta: f64,
    pub violations: usize,
    /// Classes whose parameters the M-step changed; empty ones carry over.
    pub updated: Vec<bool>,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalStep {
    pub params: NoiseModel,
    pub n_samples: usize,
    pub best_energy: f64,
    pub violations: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub initial: NoiseModel,
    pub weights: MrfWeights,
    pub records: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub converged: bool,
    pub final_step: FinalStep,
    /// Final labels after repair; `violations` lists pixels that needed it.
    pub labeling: Labeling,
    pub init_ms: f64,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

struct Problem {
    qubo: Qubo,
    layout: crate::mrf::VarLayout,
}

fn compile(img: &GrayImage, model: &NoiseModel, nbrs: &NeighborSystem, cfg: &EmConfig, w: &MrfWeights) -> Result<Problem> {
    let costs = ClassCosts::from_model(model, img)?;
    let (qubo, layout) = build(cfg.scheme, &costs, nbrs, w)?;
    Ok(Problem { qubo, layout })
}

fn e_step(p: &Problem, settings: &SamplerSettings, n_samples: usize, seed: u64) -> Result<Sample> {
    let sc = settings.config_for(&p.qubo, n_samples, seed)?;
    Ok(sample(&p.qubo, &sc)?.best().clone())
}

fn labeling_of(best: &Sample, p: &Problem, nbrs: &NeighborSystem, cfg: &EmConfig) -> Result<Labeling> {
    let raw = decode(&best.bits, &p.layout)?;
    Ok(if cfg.repair { repair_nearest(&raw, nbrs, cfg.q) } else { raw })
}

/// Initial parameters as configured.
pub fn initialize(img: &GrayImage, cfg: &EmConfig) -> Result<NoiseModel> {
    match &cfg.init {
        InitStrategy::Kmeans => init_kmeans(img, cfg.q, cfg.kind, derive_seed(cfg.seed, KMEANS_STREAM)),
        InitStrategy::Threshold { shadow_max, target_min } => init_threshold(img, *shadow_max, *target_min, cfg.kind),
        InitStrategy::Explicit(m) => Ok(m.clone()),
    }
}

/// Runs EM to convergence (`delta` between successive parameter sets scored
/// on the same labeling) or `max_epochs`, then one larger E-step.
pub fn run_em(img: &GrayImage, cfg: &EmConfig) -> Result<EmTrace> {
    cfg.validate()?;
    let t0 = Instant::now();
    let initial = initialize(img, cfg)?;
    let init_ms = ms_since(t0);
    let nbrs = NeighborSystem::for_image(img, cfg.connectivity);
    let w = cfg.weights(&nbrs);

    let mut theta = initial.clone();
    let mut records = Vec::new();
    let mut converged = false;
    for t in 0..cfg.max_epochs {
        let start = Instant::now();
        let problem = compile(img, &theta, &nbrs, cfg, &w)?;
        let best = e_step(&problem, &cfg.sampler, cfg.sampler.n_samples, derive_seed(cfg.seed, t as u64))?;
        let labeling = labeling_of(&best, &problem, &nbrs, cfg)?;
        let (next, updated) = theta.refit(img, &labeling.labels)?;
        let next_energy = compile(img, &next, &nbrs, cfg, &w)?.qubo.energy(&best.bits)?;
        let delta = (next_energy - best.energy).abs();
        records.push(EpochRecord {
            epoch: t + 1,
            params: theta,
            best_energy: best.energy,
            next_energy,
            delta,
            violations: labeling.violations.len(),
            updated,
            wall_ms: ms_since(start),
            labels: cfg.keep_labelings.then(|| labeling.labels.clone()),
        });
        theta = next;
        if delta < cfg.delta {
            converged = true;
            break;
        }
    }

    let start = Instant::now();
    let n_final = cfg.sampler.n_samples * cfg.final_samples_multiplier;
    let problem = compile(img, &theta, &nbrs, cfg, &w)?;
    let best = e_step(&problem, &cfg.sampler, n_final, derive_seed(cfg.seed, FINAL_STREAM))?;
    let labeling = labeling_of(&best, &problem, &nbrs, cfg)?;
    let final_step = FinalStep {
        params: theta,
        n_samples: n_final,
        best_energy: best.energy,
        violations: labeling.violations.len(),
        wall_ms: ms_since(start),
    };
    Ok(EmTrace {
        initial,
        weights: w,
        epochs_run: records.len(),
        records,
        converged,
        final_step,
        labeling,
        init_ms,
    })
}

/// One-dimensional k-means on the intensities (k-means++ seeding).
///
/// Gaussian models get the sorted centers as means and the pooled
/// within-cluster standard deviation (floored at 0.5) for every class.
/// Weibull models fit each cluster separately.
pub fn init_kmeans(img: &GrayImage, q: usize, kind: NoiseKind, seed: u64) -> Result<NoiseModel> {
    if q < 1 {
        return Err(Error::Initialization("k-means needs at least one cluster".into()));
    }
    let distinct = img.distinct_intensities();
    if distinct < q {
        return Err(Error::Initialization(format!(
            "image has {distinct} distinct intensities, cannot form {q} clusters"
        )));
    }
    let xs: Vec<f64> = img.intensities().collect();
    let (centers, assign) = kmeans_1d(&xs, q, seed);

    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
    match kind {
        NoiseKind::Gaussian => {
            let sse: f64 = xs.iter().zip(&assign).map(|(x, &a)| (x - centers[a]).powi(2)).sum();
            let sigma = (sse / xs.len() as f64).sqrt().max(SIGMA_FLOOR);
            NoiseModel::gaussian(order.iter().map(|&c| crate::noise::Gaussian::new(centers[c], sigma)).collect())
        }
        NoiseKind::Weibull => {
            let params = order
                .iter()
                .map(|&c| {
                    let members: Vec<f64> = xs.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(x, _)| *x).collect();
                    mle_update(kind, &members)
                        .map_err(|e| Error::Initialization(format!("cluster at {:.1}: {e}", centers[c])))
                })
                .collect::<Result<Vec<ClassParams>>>()?;
            NoiseModel::from_params(&params)
        }
    }
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    for c in 1..centers.len() {
        if (x - centers[c]).abs() < (x - centers[best]).abs() {
            best = c;
        }
    }
    best
}

fn kmeans_1d(xs: &[f64], k: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = Prng::new(seed);
    let mut centers = vec![xs[rng.below(xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.uniform() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("enough distinct values");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = xs[pick];
        centers.push(c);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - c).powi(2));
        }
    }

    let mut assign: Vec<usize> = xs.iter().map(|&x| nearest(&centers, x)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &a) in xs.iter().zip(&assign) {
            sums[a] += x;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            }
        }
        let next: Vec<usize> = xs.iter().map(|&x| nearest(&centers, x)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (centers, assign)
}

/// Three-class start for SAR scenes: shadow `x <= shadow_max`, target
/// `x >= target_min`, background in between, each bucket fitted separately.
pub fn init_threshold(img: &GrayImage, shadow_max: f64, target_min: f64, kind: NoiseKind) -> Result<NoiseModel> {
    if !(shadow_max < target_min) {
        return Err(Error::arg("shadow_max must be below target_min"));
    }
    let mut buckets: [Vec<f64>; 3] = Default::default();
    for x in img.intensities() {
        let b = if x <= shadow_max {
            0
        } else if x >= target_min {
            2
        } else {
            1
        };
        buckets[b].push(x);
    }
    let names = ["shadow", "background", "target"];
    let params = buckets
        .iter()
        .zip(names)
        .map(|(xs, name)| {
            if xs.is_empty() {
                return Err(Error::Initialization(format!("no pixels fall in the {name} class")));
            }
            mle_update(kind, xs)
        })
        .collect::<Result<Vec<_>>>()?;
    NoiseModel::from_params(&params)
}
