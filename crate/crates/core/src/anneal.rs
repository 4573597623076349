//! Multi-restart simulated annealing over a [`Qubo`].
//!
//! Each sample is an independent Metropolis anneal with single-bit flips
//! from a uniformly random start. Local fields are kept up to date
//! incrementally, so a flip costs O(degree). Sample `k` draws from its own
//! stream derived from `(seed, k)`, which makes the result independent of how
//! the samples are scheduled across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::{Adjacency, Qubo, Sample, SampleSet};
use crate::rng::Prng;

pub const DEFAULT_SWEEPS: usize = 1000;
const FALLBACK_BETA: (f64, f64) = (0.1, 10.0);
const BETA_CAP: f64 = 1e6;
const MIN_DELTA_FLOOR: f64 = 1e-6;
/// `exp(-x)` with x above this is below the resolution of a 53-bit uniform.
const REJECT_EXPONENT: f64 = 36.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Geometric,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    n_sweeps: usize,
    beta_start: f64,
    beta_end: f64,
    interpolation: Interpolation,
}

impl AnnealSchedule {
    pub fn new(
        n_sweeps: usize,
        beta_start: f64,
        beta_end: f64,
        interpolation: Interpolation,
    ) -> Result<Self> {
        if n_sweeps == 0 {
            return Err(Error::arg("an anneal needs at least one sweep"));
        }
        if !(beta_start > 0.0 && beta_start.is_finite() && beta_end.is_finite()) {
            return Err(Error::arg(format!(
                "inverse temperatures must be positive and finite, got {beta_start} -> {beta_end}"
            )));
        }
        if beta_start >= beta_end {
            return Err(Error::arg(format!(
                "beta_start ({beta_start}) must be below beta_end ({beta_end})"
            )));
        }
        Ok(Self {
            n_sweeps,
            beta_start,
            beta_end,
            interpolation,
        })
    }

    pub fn n_sweeps(&self) -> usize {
        self.n_sweeps
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn with_sweeps(self, n_sweeps: usize) -> Result<Self> {
        Self::new(n_sweeps, self.beta_start, self.beta_end, self.interpolation)
    }

    /// Inverse temperature used during sweep `s` (0-based). The first sweep
    /// runs at `beta_start` and the last at `beta_end`.
    pub fn beta_at(&self, s: usize) -> f64 {
        if self.n_sweeps == 1 {
            return self.beta_end;
        }
        let t = s as f64 / (self.n_sweeps - 1) as f64;
        match self.interpolation {
            Interpolation::Geometric => {
                self.beta_start * (self.beta_end / self.beta_start).powf(t)
            }
            Interpolation::Linear => self.beta_start + (self.beta_end - self.beta_start) * t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub schedule: AnnealSchedule,
    pub seed: u64,
}

/// Beta range scaled to the coefficients of `q`.
///
/// The hot end is `1 / dE_max`, where `dE_max` is the largest local-field
/// bound `|h_i| + sum_j |J_ij|` over all variables: at that temperature any
/// single flip is accepted with probability at least `1/e`. The cold end is
/// `1 / max(dE_min, 1e-6)` capped at `1e6`, where `dE_min` is the smallest
/// nonzero coupling magnitude (zero when there are no couplings). An all-zero
/// problem gets the fixed range `0.1 -> 10`. If the cold end would not exceed
/// the hot end it is pushed to `100 * beta_start`.
pub fn default_schedule(q: &Qubo) -> AnnealSchedule {
    let mut bounds = vec![0.0f64; q.n_vars()];
    for (&i, &c) in q.linear() {
        bounds[i] += c.abs();
    }
    let mut min_coupling = f64::INFINITY;
    for (&(i, j), &c) in q.quadratic() {
        bounds[i] += c.abs();
        bounds[j] += c.abs();
        if c != 0.0 {
            min_coupling = min_coupling.min(c.abs());
        }
    }
    let max_bound = bounds.iter().copied().fold(0.0, f64::max);
    let (beta_start, beta_end) = if max_bound == 0.0 {
        FALLBACK_BETA
    } else {
        let min_delta = if min_coupling.is_finite() {
            min_coupling
        } else {
            0.0
        };
        let hot = 1.0 / max_bound;
        let mut cold = (1.0 / min_delta.max(MIN_DELTA_FLOOR)).min(BETA_CAP);
        if cold <= hot {
            cold = hot * 100.0;
        }
        (hot, cold)
    };
    AnnealSchedule {
        n_sweeps: DEFAULT_SWEEPS,
        beta_start,
        beta_end,
        interpolation: Interpolation::Geometric,
    }
}

/// Draws `cfg.n_samples` annealed samples from `q`.
pub fn sample(q: &Qubo, cfg: &SamplerConfig) -> Result<SampleSet> {
    if q.n_vars() == 0 {
        return Err(Error::arg("cannot sample a problem without variables"));
    }
    if cfg.n_samples == 0 {
        return Err(Error::arg("n_samples must be at least 1"));
    }
    let rows = PackedRows::new(&q.adjacency());
    let betas: Vec<f64> = (0..cfg.schedule.n_sweeps)
        .map(|s| cfg.schedule.beta_at(s))
        .collect();
    let samples: Vec<Sample> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = Prng::stream(cfg.seed, k as u64);
            let bits = anneal_once(&rows, &betas, &mut rng);
            let energy = q.energy_unchecked(&bits);
            Sample { bits, energy }
        })
        .collect();
    SampleSet::new(samples, cfg.seed)
}

#[derive(Clone, Copy)]
struct Coupling {
    j: u32,
    w: f64,
}

/// Adjacency with each row's couplings stored contiguously.
struct PackedRows {
    linear: Vec<f64>,
    starts: Vec<usize>,
    couplings: Vec<Coupling>,
}

impl PackedRows {
    fn new(adj: &Adjacency) -> Self {
        Self {
            linear: adj.linear.clone(),
            starts: adj.starts.clone(),
            couplings: adj
                .neighbors
                .iter()
                .zip(&adj.weights)
                .map(|(&j, &w)| Coupling { j, w })
                .collect(),
        }
    }

    fn row(&self, i: usize) -> &[Coupling] {
        &self.couplings[self.starts[i]..self.starts[i + 1]]
    }
}

/// `exp(x)` for `x` in `[-REJECT_EXPONENT, 0]`, relative error below 1e-8.
#[inline]
fn exp_neg(x: f64) -> f64 {
    const ROUND: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let t = x * std::f64::consts::LOG2_E;
    let k = (t + ROUND) - ROUND;
    let y = (t - k) * std::f64::consts::LN_2;
    let p = 1.0
        + y * (1.0
            + y * (1.0 / 2.0
                + y * (1.0 / 6.0
                    + y * (1.0 / 24.0 + y * (1.0 / 120.0 + y * (1.0 / 720.0 + y * (1.0 / 5040.0)))))));
    p * f64::from_bits(((k as i64 + 1023) as u64) << 52)
}

fn anneal_once(rows: &PackedRows, betas: &[f64], rng: &mut Prng) -> Vec<u8> {
    let n = rows.linear.len();
    let mut state: Vec<u8> = (0..n).map(|_| rng.bit()).collect();
    let mut field = rows.linear.clone();
    for i in 0..n {
        if state[i] == 1 {
            for c in rows.row(i) {
                field[c.j as usize] += c.w;
            }
        }
    }
    for &beta in betas {
        let reject_above = REJECT_EXPONENT / beta;
        for i in 0..n {
            let s = state[i];
            let delta = if s == 0 { field[i] } else { -field[i] };
            let accept = delta <= 0.0
                || (delta < reject_above && rng.uniform() < exp_neg(-beta * delta));
            if accept {
                state[i] = s ^ 1;
                let sign = if s == 0 { 1.0 } else { -1.0 };
                for c in rows.row(i) {
                    // SAFETY: neighbor indices come from a Qubo with n vars.
                    unsafe { *field.get_unchecked_mut(c.j as usize) += sign * c.w };
                }
            }
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubo::brute_force_solve;

    fn cfg(q: &Qubo, n_samples: usize, n_sweeps: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_samples,
            schedule: default_schedule(q).with_sweeps(n_sweeps).unwrap(),
            seed,
        }
    }

    #[test]
    fn exp_neg_accuracy() {
        let mut x = 0.0;
        while x >= -REJECT_EXPONENT {
            let (a, b) = (exp_neg(x), x.exp());
            assert!(((a - b) / b).abs() < 1e-8, "{x}: {a} vs {b}");
            x -= 0.0137;
        }
        assert_eq!(exp_neg(0.0), 1.0);
    }

    #[test]
    fn single_variable_is_solved() {
        let mut q = Qubo::new(1);
        q.add_linear(0, -1.0).unwrap();
        let set = sample(&q, &cfg(&q, 10, 10, 3)).unwrap();
        assert_eq!(set.best().bits, vec![1]);
        assert_eq!(set.best().energy, -1.0);
    }

    #[test]
    fn sample_count_and_energy_consistency() {
        let mut q = Qubo::new(6);
        for i in 0..6 {
            q.add_linear(i, (i as f64) - 2.5).unwrap();
            if i > 0 {
                q.add_quadratic(i - 1, i, 1.5).unwrap();
            }
        }
        let set = sample(&q, &cfg(&q, 100, 20, 9)).unwrap();
        assert_eq!(set.len(), 100);
        for s in set.samples() {
            assert_eq!(q.energy(&s.bits).unwrap(), s.energy);
        }
        assert_eq!(set.rng_seed(), 9);
    }

    #[test]
    fn deterministic_under_seed() {
        let mut q = Qubo::new(8);
        for i in 0..8 {
            q.add_linear(i, if i % 2 == 0 { -1.0 } else { 0.5 }).unwrap();
            for j in (i + 1)..8 {
                q.add_quadratic(i, j, ((i * j) % 3) as f64 - 1.0).unwrap();
            }
        }
        let a = sample(&q, &cfg(&q, 16, 50, 42)).unwrap();
        let b = sample(&q, &cfg(&q, 16, 50, 42)).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = sample(&q, &cfg(&q, 16, 50, 43)).unwrap();
        assert_ne!(a.samples(), c.samples());
        // Sample k does not depend on how many samples were requested.
        let prefix = sample(&q, &cfg(&q, 4, 50, 42)).unwrap();
        assert_eq!(prefix.samples(), &a.samples()[..4]);
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let mut q = Qubo::new(10);
        for i in 0..10 {
            q.add_linear(i, -0.3 * i as f64).unwrap();
            q.add_quadratic(i, (i + 3) % 10, 0.7).unwrap();
        }
        let c = cfg(&q, 12, 30, 5);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let parallel = pool.install(|| sample(&q, &c)).unwrap();
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sample(&q, &c))
            .unwrap();
        assert_eq!(parallel.samples(), serial.samples());
    }

    #[test]
    fn default_schedule_examples() {
        let zero = Qubo::new(3);
        let s = default_schedule(&zero);
        assert_eq!(
            (s.beta_start(), s.beta_end(), s.interpolation(), s.n_sweeps()),
            (0.1, 10.0, Interpolation::Geometric, 1000)
        );

        let mut single = Qubo::new(1);
        single.add_linear(0, -1.0).unwrap();
        let s = default_schedule(&single);
        assert_eq!(s.beta_start(), 1.0);
        assert_eq!(s.beta_end(), 1e6);

        let mut coupled = Qubo::new(2);
        coupled.add_quadratic(0, 1, 2.0).unwrap();
        let s = default_schedule(&coupled);
        assert!(s.beta_start() < s.beta_end());
    }

    #[test]
    fn schedule_validation_and_endpoints() {
        assert!(AnnealSchedule::new(0, 0.1, 1.0, Interpolation::Linear).is_err());
        assert!(AnnealSchedule::new(10, 1.0, 1.0, Interpolation::Linear).is_err());
        assert!(AnnealSchedule::new(10, -1.0, 1.0, Interpolation::Linear).is_err());
        let s = AnnealSchedule::new(5, 0.5, 8.0, Interpolation::Geometric).unwrap();
        assert_eq!(s.beta_at(0), 0.5);
        assert!((s.beta_at(4) - 8.0).abs() < 1e-12);
        assert!((s.beta_at(2) - 2.0).abs() < 1e-12);
        let l = AnnealSchedule::new(3, 1.0, 3.0, Interpolation::Linear).unwrap();
        assert_eq!(l.beta_at(1), 2.0);
    }

    #[test]
    fn argument_validation() {
        let q = Qubo::new(0);
        let s = AnnealSchedule::new(1, 0.1, 1.0, Interpolation::Linear).unwrap();
        let c = SamplerConfig { n_samples: 1, schedule: s, seed: 0 };
        assert!(sample(&q, &c).is_err());
        let q = Qubo::new(1);
        let c = SamplerConfig { n_samples: 0, schedule: s, seed: 0 };
        assert!(sample(&q, &c).is_err());
    }

    #[test]
    fn never_beats_the_exhaustive_minimum() {
        let mut rng = Prng::new(77);
        for _ in 0..20 {
            let n = 9;
            let mut q = Qubo::new(n);
            for i in 0..n {
                q.add_linear(i, rng.standard_normal()).unwrap();
                for j in (i + 1)..n {
                    if rng.uniform() < 0.5 {
                        q.add_quadratic(i, j, rng.standard_normal()).unwrap();
                    }
                }
            }
            let exact = brute_force_solve(&q).unwrap().best().energy;
            let set = sample(&q, &cfg(&q, 10, 200, rng.next_u64())).unwrap();
            for s in set.samples() {
                assert!(s.energy >= exact - 1e-9);
            }
        }
    }
}
