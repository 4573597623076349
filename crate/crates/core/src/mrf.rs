//! Potts MRF segmentation energies and their QUBO encodings.
//!
//! Two encodings are provided. The binary one uses one bit per pixel
//! (`1` = object, class 2) plus two ancillas standing for the object and
//! background labels. The one-hot encoding uses `Q` bits per pixel plus one
//! ancilla `alpha`, with a penalty for blocks that are not one-hot.
//!
//! Unary terms are written as cuts between a pixel bit and an ancilla, each
//! cut earning `log p`. Both builders add the constant `-sum_i sum_q log p_iq`
//! so that a valid assignment evaluates to its MRF energy minus the constraint
//! constants (`lambda_a` for binary, `N * lambda_oh + lambda_a` for one-hot).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::noise::NoiseModel;
use crate::qubo::Qubo;

/// Probabilities are clamped to this before taking logs.
pub const PROB_FLOOR: f64 = 1e-10;
/// Multiplier applied to the strict lower bounds in [`auto_weights`].
pub const SAFETY_FACTOR: f64 = 1.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl std::str::FromStr for Connectivity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" | "four" => Ok(Connectivity::Four),
            "8" | "eight" => Ok(Connectivity::Eight),
            _ => Err(Error::arg(format!("unknown connectivity {s:?}, expected 4 or 8"))),
        }
    }
}

/// Undirected pixel adjacency of a `width x height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSystem {
    width: usize,
    height: usize,
    connectivity: Connectivity,
    edges: Vec<(usize, usize)>,
    starts: Vec<usize>,
    adjacent: Vec<usize>,
}

impl NeighborSystem {
    pub fn new(width: usize, height: usize, connectivity: Connectivity) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("neighbor system needs a non-empty grid"));
        }
        let idx = |x: usize, y: usize| y * width + x;
        let mut edges = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let i = idx(x, y);
                if x + 1 < width {
                    edges.push((i, idx(x + 1, y)));
                }
                if y + 1 < height {
                    edges.push((i, idx(x, y + 1)));
                }
                if connectivity == Connectivity::Eight && y + 1 < height {
                    if x + 1 < width {
                        edges.push((i, idx(x + 1, y + 1)));
                    }
                    if x > 0 {
                        edges.push((i, idx(x - 1, y + 1)));
                    }
                }
            }
        }
        let n = width * height;
        let mut degree = vec![0usize; n];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut starts = Vec::with_capacity(n + 1);
        starts.push(0);
        for d in &degree {
            starts.push(starts.last().unwrap() + d);
        }
        let mut fill = starts[..n].to_vec();
        let mut adjacent = vec![0usize; starts[n]];
        for &(i, j) in &edges {
            adjacent[fill[i]] = j;
            fill[i] += 1;
            adjacent[fill[j]] = i;
            fill[j] += 1;
        }
        for i in 0..n {
            adjacent[starts[i]..starts[i + 1]].sort_unstable();
        }
        Ok(Self { width, height, connectivity, edges, starts, adjacent })
    }

    pub fn for_image(img: &GrayImage, connectivity: Connectivity) -> Self {
        Self::new(img.width(), img.height(), connectivity).expect("images are never empty")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacent[self.starts[i]..self.starts[i + 1]]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_pixels()).map(|i| self.neighbors(i).len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrfWeights {
    pub lambda_p: f64,
    pub lambda_a: f64,
    pub lambda_oh: f64,
}

/// Lower bound on the ancilla multiplier: `-N (Q-1) ln(1/Q)`, which is
/// `-N ln(1/2)` for the binary scheme.
pub fn ancilla_bound(n: usize, q: usize) -> f64 {
    -(n as f64) * (q as f64 - 1.0) * (1.0 / q as f64).ln()
}

/// Multipliers `1.05x` above the ancilla bound, with
/// `lambda_oh = max(1.05 * lambda_p / 2, 1)`.
pub fn auto_weights(n: usize, q: usize, lambda_p: f64) -> MrfWeights {
    MrfWeights {
        lambda_p,
        lambda_a: SAFETY_FACTOR * ancilla_bound(n, q),
        lambda_oh: (SAFETY_FACTOR * lambda_p / 2.0).max(1.0),
    }
}

/// Multipliers that provably make every ground state satisfy the constraints
/// on the grid `nbrs`.
///
/// An all-off block is improved by switching on its most likely class when
/// `lambda_oh > ln Q + d * lambda_p / 2` (`d` the maximum degree), since the
/// unary cost of that class is at most `ln Q` and each neighbor's Hamming
/// distance grows by at most one; blocks with two or more hot bits need only
/// `lambda_oh > d * lambda_p / 2`. States with a wrong ancilla have energy at
/// least `-N lambda_oh` (zero for binary), so the ancilla multiplier must
/// exceed the minimal MRF energy, which is at most `N ln Q + lambda_p |E|`.
/// Both are taken `1.05x` and never below [`auto_weights`].
pub fn sound_weights(nbrs: &NeighborSystem, q: usize, lambda_p: f64) -> MrfWeights {
    let n = nbrs.n_pixels();
    let base = auto_weights(n, q, lambda_p);
    let ln_q = (q as f64).ln();
    let mrf_bound = n as f64 * ln_q + lambda_p * nbrs.edges().len() as f64;
    MrfWeights {
        lambda_p,
        lambda_a: base.lambda_a.max(SAFETY_FACTOR * mrf_bound),
        lambda_oh: base
            .lambda_oh
            .max(SAFETY_FACTOR * (ln_q + nbrs.max_degree() as f64 * lambda_p / 2.0)),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Binary,
    #[default]
    OneHot,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Scheme::Binary),
            "one_hot" | "one-hot" | "onehot" => Ok(Scheme::OneHot),
            _ => Err(Error::arg(format!("unknown scheme {s:?}, expected binary or one_hot"))),
        }
    }
}

/// How QUBO variables map onto pixels and classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarLayout {
    pub scheme: Scheme,
    pub n: usize,
    pub q: usize,
    pub n_vars: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ancilla_a: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ancilla_b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ancilla_alpha: Option<usize>,
}

impl VarLayout {
    pub fn binary(n: usize) -> Self {
        Self {
            scheme: Scheme::Binary,
            n,
            q: 2,
            n_vars: n + 2,
            ancilla_a: Some(n),
            ancilla_b: Some(n + 1),
            ancilla_alpha: None,
        }
    }

    pub fn one_hot(n: usize, q: usize) -> Self {
        Self {
            scheme: Scheme::OneHot,
            n,
            q,
            n_vars: n * q + 1,
            ancilla_a: None,
            ancilla_b: None,
            ancilla_alpha: Some(n * q),
        }
    }

    /// Bit of pixel `i` (0-based) and class `class` (1-based) in the one-hot scheme.
    pub fn index(&self, i: usize, class: usize) -> usize {
        debug_assert!(i < self.n && (1..=self.q).contains(&class));
        i * self.q + (class - 1)
    }

    /// Whether the ancillas hold their required values.
    pub fn ancillas_ok(&self, bits: &[u8]) -> bool {
        match self.scheme {
            Scheme::Binary => bits[self.n] == 1 && bits[self.n + 1] == 0,
            Scheme::OneHot => bits[self.n * self.q] == 1,
        }
    }

    /// The valid assignment representing `labels` (1-based classes).
    pub fn encode(&self, labels: &[usize]) -> Result<Vec<u8>> {
        if labels.len() != self.n {
            return Err(Error::arg(format!("expected {} labels, got {}", self.n, labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > self.q) {
            return Err(Error::arg(format!("label {bad} outside 1..={}", self.q)));
        }
        let mut bits = vec![0u8; self.n_vars];
        match self.scheme {
            Scheme::Binary => {
                for (b, &l) in bits.iter_mut().zip(labels) {
                    *b = (l == 2) as u8;
                }
                bits[self.n] = 1;
            }
            Scheme::OneHot => {
                for (i, &l) in labels.iter().enumerate() {
                    bits[self.index(i, l)] = 1;
                }
                bits[self.n * self.q] = 1;
            }
        }
        Ok(bits)
    }
}

/// Per-pixel class labels (1-based) and the pixels whose one-hot block was invalid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeling {
    pub labels: Vec<usize>,
    pub violations: Vec<usize>,
}

impl Labeling {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels, violations: Vec::new() }
    }

    pub fn violation_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.violations.len() as f64 / self.labels.len() as f64
        }
    }
}

/// Per-pixel class log-probabilities, normalized over classes and floored at
/// `ln(PROB_FLOOR)`. Stored row-major: pixel `i`, class `q` at `i * Q + q - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCosts {
    n: usize,
    q: usize,
    log_p: Vec<f64>,
}

impl ClassCosts {
    /// Class posteriors of every pixel under `model` with a flat prior.
    ///
    /// Normalization is done in log space so that pixels far from every
    /// class still get meaningful relative probabilities. For Weibull
    /// models, zero intensities are shifted to `0.5` as in the fit.
    pub fn from_model(model: &NoiseModel, img: &GrayImage) -> Result<Self> {
        let q = model.n_classes();
        let mut log_p = Vec::with_capacity(img.len() * q);
        let mut row = vec![0.0; q];
        for (i, x) in img.intensities().enumerate() {
            let x = model.support_shift(x);
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = model.log_likelihood(x, c + 1)?;
            }
            normalize_log_row(&mut row).ok_or_else(|| {
                Error::Model(format!("pixel {i} (intensity {x}) has zero likelihood under every class"))
            })?;
            log_p.extend(row.iter().map(|&l| l.max(PROB_FLOOR.ln())));
        }
        Ok(Self { n: img.len(), q, log_p })
    }

    /// From raw per-pixel class likelihoods (row-major, `Q` per pixel),
    /// normalized per pixel.
    pub fn from_probabilities(probs: &[f64], q: usize) -> Result<Self> {
        Self::check_shape(probs, q)?;
        let mut log_p = Vec::with_capacity(probs.len());
        for (i, row) in probs.chunks(q).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Model(format!("pixel {i} has an invalid probability in {row:?}")));
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::Model(format!("pixel {i} has probability 0 for every class")));
            }
            log_p.extend(row.iter().map(|p| (p / total).max(PROB_FLOOR).ln()));
        }
        Ok(Self { n: probs.len() / q, q, log_p })
    }

    /// From probabilities used as given (floored, not normalized).
    pub fn from_unnormalized(probs: &[f64], q: usize) -> Result<Self> {
        Self::check_shape(probs, q)?;
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Model(format!("invalid probability {p}")));
        }
        Ok(Self {
            n: probs.len() / q,
            q,
            log_p: probs.iter().map(|p| p.max(PROB_FLOOR).ln()).collect(),
        })
    }

    fn check_shape(probs: &[f64], q: usize) -> Result<()> {
        if q < 1 || probs.is_empty() || !probs.len().is_multiple_of(q) {
            return Err(Error::arg(format!("{} probabilities do not form rows of {q} classes", probs.len())));
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.n
    }

    pub fn n_classes(&self) -> usize {
        self.q
    }

    /// `log p(x_i | class)`, class 1-based.
    pub fn log_p(&self, i: usize, class: usize) -> f64 {
        self.log_p[i * self.q + class - 1]
    }

    /// The unary cost `-log p(x_i | class)`.
    pub fn cost(&self, i: usize, class: usize) -> f64 {
        -self.log_p(i, class)
    }

    /// Labels minimizing the unary costs alone (lowest class on ties).
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.log_p
            .chunks(self.q)
            .map(|row| {
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best + 1
            })
            .collect()
    }

    fn total_log_p(&self) -> f64 {
        self.log_p.iter().sum()
    }
}

fn normalize_log_row(row: &mut [f64]) -> Option<()> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    for l in row.iter_mut() {
        *l -= lse;
    }
    Some(())
}

fn check_grid(costs: &ClassCosts, nbrs: &NeighborSystem) -> Result<()> {
    if costs.n_pixels() != nbrs.n_pixels() {
        return Err(Error::arg(format!(
            "{} pixels of costs but a neighbor system over {}",
            costs.n_pixels(),
            nbrs.n_pixels()
        )));
    }
    Ok(())
}

fn check_weights(w: &MrfWeights) -> Result<()> {
    if !(w.lambda_p >= 0.0 && w.lambda_p.is_finite()) {
        return Err(Error::arg(format!("lambda_p must be finite and >= 0, got {}", w.lambda_p)));
    }
    if !w.lambda_a.is_finite() || !w.lambda_oh.is_finite() {
        return Err(Error::arg("constraint multipliers must be finite"));
    }
    Ok(())
}

/// Adds `c * delta(z_i, z_j) = c * (z_i + z_j - 2 z_i z_j)`.
fn add_cut(q: &mut Qubo, i: usize, j: usize, c: f64) -> Result<()> {
    q.add_linear(i, c)?;
    q.add_linear(j, c)?;
    q.add_quadratic(i, j, -2.0 * c)
}

/// Binary encoding: `H_U + lambda_p H_P + lambda_a (z_b - z_a)`.
pub fn build_binary(costs: &ClassCosts, nbrs: &NeighborSystem, w: &MrfWeights) -> Result<(Qubo, VarLayout)> {
    if costs.n_classes() != 2 {
        return Err(Error::arg(format!(
            "the binary scheme needs exactly 2 classes, got {}",
            costs.n_classes()
        )));
    }
    check_grid(costs, nbrs)?;
    check_weights(w)?;
    let n = costs.n_pixels();
    let layout = VarLayout::binary(n);
    let (a, b) = (n, n + 1);
    let mut q = Qubo::new(layout.n_vars);
    for i in 0..n {
        // Cutting the edge to `a` labels the pixel background and earns
        // log p(object); cutting the edge to `b` earns log p(background).
        add_cut(&mut q, i, a, costs.log_p(i, 2))?;
        add_cut(&mut q, i, b, costs.log_p(i, 1))?;
    }
    if w.lambda_p != 0.0 {
        for &(i, j) in nbrs.edges() {
            add_cut(&mut q, i, j, w.lambda_p)?;
        }
    }
    q.add_linear(b, w.lambda_a)?;
    q.add_linear(a, -w.lambda_a)?;
    q.add_offset(-costs.total_log_p());
    Ok((q, layout))
}

/// One-hot encoding:
/// `H_U' + lambda_p H_P' + lambda_oh H_OH - lambda_a z_alpha`.
pub fn build_qclass(costs: &ClassCosts, nbrs: &NeighborSystem, w: &MrfWeights) -> Result<(Qubo, VarLayout)> {
    let nq = costs.n_classes();
    if nq < 2 {
        return Err(Error::arg(format!("the one-hot scheme needs at least 2 classes, got {nq}")));
    }
    check_grid(costs, nbrs)?;
    check_weights(w)?;
    let n = costs.n_pixels();
    let layout = VarLayout::one_hot(n, nq);
    let alpha = layout.n_vars - 1;
    let mut q = Qubo::new(layout.n_vars);
    for i in 0..n {
        for c in 1..=nq {
            let v = layout.index(i, c);
            add_cut(&mut q, v, alpha, costs.log_p(i, c))?;
            q.add_linear(v, -w.lambda_oh)?;
            for r in c + 1..=nq {
                q.add_quadratic(v, layout.index(i, r), 2.0 * w.lambda_oh)?;
            }
        }
    }
    if w.lambda_p != 0.0 {
        for &(i, j) in nbrs.edges() {
            for c in 1..=nq {
                add_cut(&mut q, layout.index(i, c), layout.index(j, c), w.lambda_p / 2.0)?;
            }
        }
    }
    q.add_linear(alpha, -w.lambda_a)?;
    q.add_offset(-costs.total_log_p());
    Ok((q, layout))
}

/// Dispatches on `scheme`.
pub fn build(scheme: Scheme, costs: &ClassCosts, nbrs: &NeighborSystem, w: &MrfWeights) -> Result<(Qubo, VarLayout)> {
    match scheme {
        Scheme::Binary => build_binary(costs, nbrs, w),
        Scheme::OneHot => build_qclass(costs, nbrs, w),
    }
}

/// The constant separating QUBO energy of a valid assignment from its MRF energy.
pub fn constraint_offset(layout: &VarLayout, w: &MrfWeights) -> f64 {
    match layout.scheme {
        Scheme::Binary => -w.lambda_a,
        Scheme::OneHot => -(layout.n as f64) * w.lambda_oh - w.lambda_a,
    }
}

/// Reads labels off an assignment. Invalid one-hot blocks take their lowest
/// hot class, or class 1 when no bit is set, and are listed as violations.
pub fn decode(bits: &[u8], layout: &VarLayout) -> Result<Labeling> {
    if bits.len() != layout.n_vars {
        return Err(Error::arg(format!(
            "assignment has {} bits, layout expects {}",
            bits.len(),
            layout.n_vars
        )));
    }
    match layout.scheme {
        Scheme::Binary => Ok(Labeling::new(bits[..layout.n].iter().map(|&b| b as usize + 1).collect())),
        Scheme::OneHot => {
            let mut labels = Vec::with_capacity(layout.n);
            let mut violations = Vec::new();
            for (i, block) in bits[..layout.n * layout.q].chunks(layout.q).enumerate() {
                let hot = block.iter().filter(|&&b| b != 0).count();
                let first = block.iter().position(|&b| b != 0).map_or(1, |c| c + 1);
                if hot != 1 {
                    violations.push(i);
                }
                labels.push(first);
            }
            Ok(Labeling { labels, violations })
        }
    }
}

/// Relabels violated pixels with the majority label of their non-violated
/// neighbors (ties to the lowest class, class 1 when none). The violation
/// list is kept.
pub fn repair_nearest(labeling: &Labeling, nbrs: &NeighborSystem, q: usize) -> Labeling {
    let mut out = labeling.clone();
    if labeling.violations.is_empty() {
        return out;
    }
    let mut violated = vec![false; labeling.labels.len()];
    for &i in &labeling.violations {
        violated[i] = true;
    }
    let mut votes = vec![0usize; q + 1];
    for &i in &labeling.violations {
        votes.iter_mut().for_each(|v| *v = 0);
        for &j in nbrs.neighbors(i) {
            if !violated[j] {
                votes[labeling.labels[j]] += 1;
            }
        }
        let mut best = 1;
        for c in 2..=q {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        out.labels[i] = best;
    }
    out
}

/// `sum_i -log p(x_i | l_i) + lambda_p * #cut edges`.
pub fn mrf_energy(labels: &[usize], costs: &ClassCosts, nbrs: &NeighborSystem, lambda_p: f64) -> f64 {
    let unary: f64 = labels.iter().enumerate().map(|(i, &l)| costs.cost(i, l)).sum();
    let cuts = nbrs.edges().iter().filter(|&&(i, j)| labels[i] != labels[j]).count();
    unary + lambda_p * cuts as f64
}
