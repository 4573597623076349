//! Per-class intensity likelihoods and their maximum-likelihood fits.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::mrf::PROB_FLOOR;

/// Minimum standard deviation returned by the Gaussian fit.
pub const SIGMA_FLOOR: f64 = 0.5;
/// Zero intensities are replaced by this before Weibull fitting and scoring.
pub const WEIBULL_ZERO_SHIFT: f64 = 0.5;
pub const NEWTON_TOLERANCE: f64 = 1e-8;
pub const NEWTON_MAX_ITER: usize = 200;
pub const SHAPE_SEARCH_RANGE: (f64, f64) = (0.05, 50.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Weibull,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "weibull" => Ok(NoiseKind::Weibull),
            _ => Err(Error::arg(format!("unknown noise model {s:?}, expected gaussian or weibull"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mu: f64,
    pub sigma: f64,
}

impl Gaussian {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * PI).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weibull {
    #[serde(rename = "lambda")]
    pub scale: f64,
    #[serde(rename = "k")]
    pub shape: f64,
}

impl Weibull {
    pub fn new(scale: f64, shape: f64) -> Self {
        Self { scale, shape }
    }

    /// `(k/l) (x/l)^(k-1) exp(-(x/l)^k)` for `x > 0`, else 0.
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.log_pdf(x).exp()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (l, k) = (self.scale, self.shape);
        let t = x / l;
        k.ln() - l.ln() + (k - 1.0) * t.ln() - t.powf(k)
    }

    pub fn mean(&self) -> f64 {
        self.scale * libm::tgamma(1.0 + 1.0 / self.shape)
    }
}

/// Parameters of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassParams {
    Gaussian(Gaussian),
    Weibull(Weibull),
}

impl ClassParams {
    pub fn kind(&self) -> NoiseKind {
        match self {
            ClassParams::Gaussian(_) => NoiseKind::Gaussian,
            ClassParams::Weibull(_) => NoiseKind::Weibull,
        }
    }

    /// Location used to order classes: the mean of the distribution.
    pub fn mean(&self) -> f64 {
        match self {
            ClassParams::Gaussian(g) => g.mu,
            ClassParams::Weibull(w) => w.mean(),
        }
    }
}

/// One distribution per class, all of the same family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum NoiseModel {
    Gaussian(Vec<Gaussian>),
    Weibull(Vec<Weibull>),
}

impl NoiseModel {
    pub fn gaussian(params: Vec<Gaussian>) -> Result<Self> {
        let m = NoiseModel::Gaussian(params);
        m.validate()?;
        Ok(m)
    }

    pub fn weibull(params: Vec<Weibull>) -> Result<Self> {
        let m = NoiseModel::Weibull(params);
        m.validate()?;
        Ok(m)
    }

    pub fn from_params(params: &[ClassParams]) -> Result<Self> {
        let kind = params.first().map(ClassParams::kind).ok_or_else(|| Error::Model("no classes".into()))?;
        let m = match kind {
            NoiseKind::Gaussian => NoiseModel::Gaussian(
                params
                    .iter()
                    .map(|p| match p {
                        ClassParams::Gaussian(g) => Ok(*g),
                        _ => Err(Error::Model("mixed distribution families".into())),
                    })
                    .collect::<Result<_>>()?,
            ),
            NoiseKind::Weibull => NoiseModel::Weibull(
                params
                    .iter()
                    .map(|p| match p {
                        ClassParams::Weibull(w) => Ok(*w),
                        _ => Err(Error::Model("mixed distribution families".into())),
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes() == 0 {
            return Err(Error::Model("a noise model needs at least one class".into()));
        }
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match self {
            NoiseModel::Gaussian(ps) => {
                for (q, p) in ps.iter().enumerate() {
                    if !p.mu.is_finite() || !ok(p.sigma) {
                        return Err(Error::Model(format!("class {}: invalid Gaussian {:?}", q + 1, p)));
                    }
                }
            }
            NoiseModel::Weibull(ps) => {
                for (q, p) in ps.iter().enumerate() {
                    if !ok(p.scale) || !ok(p.shape) {
                        return Err(Error::Model(format!("class {}: invalid Weibull {:?}", q + 1, p)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseModel::Gaussian(_) => NoiseKind::Gaussian,
            NoiseModel::Weibull(_) => NoiseKind::Weibull,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            NoiseModel::Gaussian(p) => p.len(),
            NoiseModel::Weibull(p) => p.len(),
        }
    }

    pub fn params(&self) -> Vec<ClassParams> {
        match self {
            NoiseModel::Gaussian(p) => p.iter().copied().map(ClassParams::Gaussian).collect(),
            NoiseModel::Weibull(p) => p.iter().copied().map(ClassParams::Weibull).collect(),
        }
    }

    pub fn class(&self, q: usize) -> Result<ClassParams> {
        if q == 0 || q > self.n_classes() {
            return Err(Error::arg(format!("class {q} outside 1..={}", self.n_classes())));
        }
        Ok(self.params()[q - 1])
    }

    fn check_class(&self, q: usize) -> Result<()> {
        if q == 0 || q > self.n_classes() {
            return Err(Error::arg(format!("class {q} outside 1..={}", self.n_classes())));
        }
        Ok(())
    }

    /// `p(x | q)` with `q` 1-based.
    pub fn likelihood(&self, x: f64, q: usize) -> Result<f64> {
        self.check_class(q)?;
        Ok(match self {
            NoiseModel::Gaussian(p) => p[q - 1].pdf(x),
            NoiseModel::Weibull(p) => p[q - 1].pdf(x),
        })
    }

    /// `ln p(x | q)`, computed directly so far tails do not underflow.
    pub fn log_likelihood(&self, x: f64, q: usize) -> Result<f64> {
        self.check_class(q)?;
        Ok(match self {
            NoiseModel::Gaussian(p) => p[q - 1].log_pdf(x),
            NoiseModel::Weibull(p) => p[q - 1].log_pdf(x),
        })
    }

    /// Maps an intensity onto the support used for fitting (`0 -> 0.5` for Weibull).
    pub fn support_shift(&self, x: f64) -> f64 {
        match self {
            NoiseModel::Weibull(_) if x <= 0.0 => WEIBULL_ZERO_SHIFT,
            _ => x,
        }
    }

    /// Re-fits each class on the pixels labelled with it. Classes with no
    /// pixels keep their parameters; the returned flags mark updated classes.
    pub fn refit(&self, img: &GrayImage, labels: &[usize]) -> Result<(NoiseModel, Vec<bool>)> {
        if labels.len() != img.len() {
            return Err(Error::arg("labels and image differ in length"));
        }
        let q = self.n_classes();
        let mut buckets = vec![Vec::new(); q];
        for (x, &l) in img.intensities().zip(labels) {
            if l == 0 || l > q {
                return Err(Error::arg(format!("label {l} outside 1..={q}")));
            }
            buckets[l - 1].push(x);
        }
        let mut params = self.params();
        let mut updated = vec![false; q];
        for (c, xs) in buckets.iter().enumerate() {
            match mle_update(self.kind(), xs) {
                Ok(p) => {
                    params[c] = p;
                    updated[c] = true;
                }
                Err(Error::Estimation(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok((NoiseModel::from_params(&params)?, updated))
    }
}

/// Row-major `N x Q` table of `-ln max(p(x_i | q), 1e-10)`.
pub fn neg_log_likelihood_table(model: &NoiseModel, img: &GrayImage) -> Vec<f64> {
    let q = model.n_classes();
    let cap = -PROB_FLOOR.ln();
    let mut out = Vec::with_capacity(img.len() * q);
    for x in img.intensities() {
        for c in 1..=q {
            let ll = model.log_likelihood(x, c).expect("class in range");
            out.push((-ll).min(cap));
        }
    }
    out
}

/// Maximum-likelihood parameters of one class.
pub fn mle_update(kind: NoiseKind, pixels: &[f64]) -> Result<ClassParams> {
    match kind {
        NoiseKind::Gaussian => fit_gaussian(pixels).map(ClassParams::Gaussian),
        NoiseKind::Weibull => fit_weibull(pixels).map(|f| ClassParams::Weibull(f.params)),
    }
}

/// Sample mean and population standard deviation, the latter floored at 0.5.
pub fn fit_gaussian(pixels: &[f64]) -> Result<Gaussian> {
    if pixels.is_empty() {
        return Err(Error::Estimation("cannot fit a Gaussian to no pixels".into()));
    }
    let n = pixels.len() as f64;
    let mu = pixels.iter().sum::<f64>() / n;
    let var = pixels.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    Ok(Gaussian::new(mu, var.sqrt().max(SIGMA_FLOOR)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullFit {
    pub params: Weibull,
    /// Shape equation residual at the returned shape.
    pub residual: f64,
    pub iterations: usize,
    /// False when Newton failed and the bounded search was used.
    pub newton: bool,
}

/// Sufficient statistics of the shape equation on data rescaled by its maximum.
struct ShapeEquation {
    logs: Vec<f64>,
    mean_log: f64,
    log_max: f64,
}

impl ShapeEquation {
    fn new(pixels: &[f64]) -> Self {
        let xs: Vec<f64> = pixels.iter().map(|&x| if x <= 0.0 { WEIBULL_ZERO_SHIFT } else { x }).collect();
        let max = xs.iter().copied().fold(f64::MIN, f64::max);
        let log_max = max.ln();
        let logs: Vec<f64> = xs.iter().map(|x| x.ln() - log_max).collect();
        let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;
        Self { logs, mean_log, log_max }
    }

    /// `(sum y^k, sum y^k ln y, sum y^k ln^2 y)` for the rescaled data `y`.
    fn moments(&self, k: f64) -> (f64, f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &self.logs {
            let p = (k * l).exp();
            s0 += p;
            s1 += p * l;
            s2 += p * l * l;
        }
        (s0, s1, s2)
    }

    fn residual(&self, k: f64) -> f64 {
        let (s0, s1, _) = self.moments(k);
        s1 / s0 - 1.0 / k - self.mean_log
    }

    fn residual_and_slope(&self, k: f64) -> (f64, f64) {
        let (s0, s1, s2) = self.moments(k);
        let r = s1 / s0 - 1.0 / k - self.mean_log;
        let d = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k);
        (r, d)
    }

    /// Log-likelihood with the scale profiled out, up to a constant.
    fn profile(&self, k: f64) -> f64 {
        let n = self.logs.len() as f64;
        let (s0, _, _) = self.moments(k);
        n * k.ln() - n * (s0 / n).ln() + (k - 1.0) * n * self.mean_log
    }

    fn scale(&self, k: f64) -> f64 {
        let (s0, _, _) = self.moments(k);
        (self.log_max + (s0 / self.logs.len() as f64).ln() / k).exp()
    }
}

/// Weibull maximum likelihood. The shape solves
/// `sum x^k ln x / sum x^k - 1/k - mean(ln x) = 0` by Newton from `k = 1`;
/// if that fails a golden-section search maximizes the profile likelihood
/// over `k in [0.05, 50]`. Zero intensities are shifted to 0.5.
pub fn fit_weibull(pixels: &[f64]) -> Result<WeibullFit> {
    if pixels.is_empty() {
        return Err(Error::Estimation("cannot fit a Weibull to no pixels".into()));
    }
    if pixels.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Estimation("Weibull data must be finite and non-negative".into()));
    }
    let eq = ShapeEquation::new(pixels);
    let (lo, hi) = SHAPE_SEARCH_RANGE;

    let mut k = 1.0;
    for it in 1..=NEWTON_MAX_ITER {
        let (r, d) = eq.residual_and_slope(k);
        if !(r.is_finite() && d.is_finite()) || d <= 0.0 {
            break;
        }
        let mut next = k - r / d;
        if next <= 0.0 {
            next = k / 2.0;
        }
        k = next;
        if !(k.is_finite() && k <= 4.0 * hi) {
            break;
        }
        let r = eq.residual(k);
        if r.abs() < NEWTON_TOLERANCE {
            return Ok(WeibullFit {
                params: Weibull::new(eq.scale(k), k),
                residual: r,
                iterations: it,
                newton: true,
            });
        }
    }

    let k = golden_max(|k| eq.profile(k), lo, hi, 1e-10);
    Ok(WeibullFit {
        params: Weibull::new(eq.scale(k), k),
        residual: eq.residual(k),
        iterations: NEWTON_MAX_ITER,
        newton: false,
    })
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol * (1.0 + a.abs()) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use proptest::prelude::*;

    #[test]
    fn density_values() {
        let g = NoiseModel::gaussian(vec![Gaussian::new(0.0, 1.0)]).unwrap();
        assert!((g.likelihood(0.0, 1).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        let w = NoiseModel::weibull(vec![Weibull::new(1.0, 1.0), Weibull::new(3.0, 2.5)]).unwrap();
        assert!((w.likelihood(1.0, 1).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(w.likelihood(0.0, 1).unwrap(), 0.0);
        assert_eq!(w.likelihood(0.0, 2).unwrap(), 0.0);
        assert!(w.likelihood(1.0, 3).is_err());
        assert!(w.likelihood(1.0, 0).is_err());
    }

    #[test]
    fn table_entries() {
        let model = NoiseModel::gaussian(vec![
            Gaussian::new(10.0, 2.0),
            Gaussian::new(100.0, 1.0),
            Gaussian::new(255.0, 0.5),
        ])
        .unwrap();
        let img = GrayImage::new(2, 2, vec![10, 11, 12, 13]).unwrap();
        let t = neg_log_likelihood_table(&model, &img);
        assert_eq!(t.len(), 12);
        assert!((t[0] - (2.0 * (2.0 * PI).sqrt()).ln()).abs() < 1e-12);
        assert!((t[2] - 23.025_850_929_940_457).abs() < 1e-9);
        assert!(t.iter().all(|&v| v <= -PROB_FLOOR.ln()));
    }

    #[test]
    fn gaussian_fit_examples() {
        assert_eq!(fit_gaussian(&[10.0, 10.0, 10.0]).unwrap(), Gaussian::new(10.0, 0.5));
        assert_eq!(fit_gaussian(&[0.0, 10.0]).unwrap(), Gaussian::new(5.0, 5.0));
        assert!(matches!(fit_gaussian(&[]), Err(Error::Estimation(_))));
    }

    fn weibull_draws(seed: u64, n: usize, scale: f64, shape: f64) -> Vec<f64> {
        let mut rng = Prng::new(seed);
        (0..n).map(|_| rng.weibull(scale, shape)).collect()
    }

    fn weibull_loglik(xs: &[f64], w: Weibull) -> f64 {
        xs.iter().map(|&x| w.log_pdf(x)).sum()
    }

    #[test]
    fn weibull_recovery() {
        let xs = weibull_draws(12345, 10_000, 2.0, 1.5);
        let fit = fit_weibull(&xs).unwrap();
        assert!(fit.newton);
        assert!(fit.residual.abs() < 1e-6);
        assert!((fit.params.scale - 2.0).abs() < 0.1, "{:?}", fit);
        assert!((fit.params.shape - 1.5).abs() < 0.075, "{:?}", fit);
    }

    #[test]
    fn weibull_fit_is_local_maximum() {
        let xs = weibull_draws(99, 2_000, 40.0, 3.0);
        let fit = fit_weibull(&xs).unwrap();
        let best = weibull_loglik(&xs, fit.params);
        let mut rng = Prng::new(5);
        for _ in 0..100 {
            let s = fit.params.scale * (0.9 + 0.2 * rng.uniform());
            let k = fit.params.shape * (0.9 + 0.2 * rng.uniform());
            assert!(weibull_loglik(&xs, Weibull::new(s, k)) <= best + 1e-9);
        }
    }

    #[test]
    fn weibull_degenerate_and_zero_data() {
        let flat = fit_weibull(&[7.0; 20]).unwrap();
        assert!(!flat.newton);
        assert!((flat.params.shape - 50.0).abs() < 1e-6);
        assert!((flat.params.scale - 7.0).abs() < 0.1);
        let with_zero = fit_weibull(&[0.0, 1.0, 2.0, 3.0, 5.0]).unwrap();
        assert!(with_zero.params.scale > 0.0 && with_zero.params.shape > 0.0);
        assert!(fit_weibull(&[]).is_err());
    }

    fn trapezoid(f: impl Fn(f64) -> f64, grid: &[f64]) -> f64 {
        grid.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (f(w[0]) + f(w[1]))).sum()
    }

    #[test]
    fn densities_integrate_to_one() {
        let top = 255.0 * 4.0;
        let uniform: Vec<f64> = (0..=200_000).map(|i| top * i as f64 / 200_000.0).collect();
        for (mu, sigma) in [(0.0, 0.5), (128.0, 0.5), (60.0, 25.0), (200.0, 80.0)] {
            let g = Gaussian::new(mu, sigma);
            // A half-mass Gaussian at the origin is not a density on [0, inf).
            let expected = if mu == 0.0 { 0.5 } else { 1.0 };
            let s = trapezoid(|x| g.pdf(x), &uniform);
            assert!((s - expected).abs() < 0.02 * expected, "{mu} {sigma}: {s}");
        }
        // Geometric grid to resolve the singularity at 0 for k < 1.
        let geometric: Vec<f64> = (0..=200_000).map(|i| 1e-12 * (top / 1e-12f64).powf(i as f64 / 200_000.0)).collect();
        for (scale, shape) in [(0.01, 0.2), (2.0, 0.5), (2.0, 1.5), (40.0, 3.0), (100.0, 20.0), (150.0, 1.0)] {
            let w = Weibull::new(scale, shape);
            let s = trapezoid(|x| w.pdf(x), &geometric);
            assert!((s - 1.0).abs() < 0.02, "{scale} {shape}: {s}");
        }
    }

    #[test]
    fn json_shape() {
        let m = NoiseModel::gaussian(vec![Gaussian::new(1.0, 2.0)]).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"kind":"gaussian","params":[{"mu":1.0,"sigma":2.0}]}"#);
        let w: NoiseModel = serde_json::from_str(r#"{"kind":"weibull","params":[{"lambda":2.0,"k":1.5}]}"#).unwrap();
        assert_eq!(w, NoiseModel::Weibull(vec![Weibull::new(2.0, 1.5)]));
        assert!(serde_json::from_str::<NoiseModel>(r#"{"kind":"weibull","params":[{"mu":2.0,"sigma":1.5}]}"#).is_err());
    }

    #[test]
    fn refit_keeps_empty_classes() {
        let m = NoiseModel::gaussian(vec![Gaussian::new(0.0, 1.0), Gaussian::new(50.0, 3.0), Gaussian::new(99.0, 1.0)]).unwrap();
        let img = GrayImage::new(4, 1, vec![0, 2, 100, 104]).unwrap();
        let (next, updated) = m.refit(&img, &[1, 1, 3, 3]).unwrap();
        assert_eq!(updated, vec![true, false, true]);
        assert_eq!(next.class(2).unwrap(), ClassParams::Gaussian(Gaussian::new(50.0, 3.0)));
        assert_eq!(next.class(3).unwrap(), ClassParams::Gaussian(Gaussian::new(102.0, 2.0)));
    }

    proptest! {
        #[test]
        fn gaussian_fit_matches_closed_form(xs in proptest::collection::vec(0.0f64..255.0, 1..200)) {
            let g = fit_gaussian(&xs).unwrap();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(SIGMA_FLOOR);
            prop_assert!((g.mu - mean).abs() <= 1e-12 * mean.abs().max(1.0));
            prop_assert!((g.sigma - sd).abs() <= 1e-12 * sd);
        }

        #[test]
        fn weibull_residual_small(seed in any::<u64>(), scale in 1.0f64..200.0, shape in 0.3f64..15.0) {
            let xs = weibull_draws(seed, 300, scale, shape);
            let fit = fit_weibull(&xs).unwrap();
            prop_assert!(fit.residual.abs() < 1e-6, "{:?}", fit);
        }
    }
}
