//! Commands behind the `qseg` binary.

pub mod config;
pub mod error;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qseg_core::em::{run_em, EmConfig, EmTrace};
use qseg_core::imaging::{self, accuracy, generate, load_labels, save_labels, AccuracyReport, GrayImage};
use qseg_core::mrf::{build, ClassCosts, Labeling, NeighborSystem, Scheme, VarLayout};
use qseg_core::noise::NoiseModel;
use qseg_core::qubo::Qubo;
use qseg_core::rng::derive_seed;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{EmArgs, InstanceArgs, RunConfig, SweepAxis};
pub use error::{CliError, CliResult};

/// `image.pgm` -> `image_truth.pgm`.
pub fn truth_path(image: &Path) -> PathBuf {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = image.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "pgm".into());
    image.with_file_name(format!("{stem}_truth.{ext}"))
}

/// `labels.pgm` -> `labels.trace.json`.
pub fn trace_path(labels: &Path) -> PathBuf {
    labels.with_extension("trace.json")
}

/// `problem.qubo` -> `problem.layout.json`.
pub fn layout_path(qubo: &Path) -> PathBuf {
    qubo.with_extension("layout.json")
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_image(path: &Path) -> CliResult<GrayImage> {
    imaging::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn console(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> CliResult<()> {
    out.write_fmt(line).and_then(|_| out.write_all(b"\n")).map_err(|e| CliError::internal(e.to_string()))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { console($out, format_args!($($arg)*)) };
}

pub struct GenerateOpts {
    pub q: usize,
    pub instance: InstanceArgs,
    pub out: PathBuf,
    pub truth: Option<PathBuf>,
    pub seed: u64,
}

/// Writes a synthetic image and its ground-truth label image.
pub fn cmd_generate(opts: &GenerateOpts, out: &mut dyn Write) -> CliResult<()> {
    let spec = opts.instance.spec(opts.q, opts.seed)?;
    let img = generate(&spec)?;
    imaging::save(&img, &opts.out).map_err(|e| CliError::from(e).context(opts.out.display()))?;
    let truth_file = opts.truth.clone().unwrap_or_else(|| truth_path(&opts.out));
    let truth = Labeling::new(img.ground_truth().expect("synthetic images carry truth").to_vec());
    save_labels(&truth, img.width(), img.height(), opts.q, &truth_file, false)
        .map_err(|e| CliError::from(e).context(truth_file.display()))?;
    say!(out, "wrote {} ({}x{}, {} classes, seed {})", opts.out.display(), img.width(), img.height(), opts.q, opts.seed)?;
    say!(out, "wrote {}", truth_file.display())
}

pub struct SegmentOpts {
    pub input: PathBuf,
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
    pub show_violations: bool,
    pub dump_qubo: Option<PathBuf>,
    pub em: EmConfig,
}

fn compile(img: &GrayImage, model: &NoiseModel, em: &EmConfig, nbrs: &NeighborSystem) -> CliResult<(Qubo, VarLayout)> {
    let costs = ClassCosts::from_model(model, img)?;
    Ok(build(em.scheme, &costs, nbrs, &em.weights(nbrs))?)
}

fn dump(qubo: &Qubo, layout: &VarLayout, path: &Path) -> CliResult<()> {
    let err = |e: std::io::Error| CliError::data(format!("{}: {e}", path.display()));
    let file = std::fs::File::create(path).map_err(err)?;
    qubo.write_to(std::io::BufWriter::new(file))?;
    write_json(&layout_path(path), layout)
}

/// Runs EM on an image; writes the label image, its sidecar and the trace.
pub fn cmd_segment(opts: &SegmentOpts, out: &mut dyn Write) -> CliResult<EmTrace> {
    opts.em.validate()?;
    let t0 = Instant::now();
    let img = load_image(&opts.input)?;
    let load_ms = t0.elapsed().as_secs_f64() * 1e3;
    let trace = run_em(&img, &opts.em)?;
    save_labels(&trace.labeling, img.width(), img.height(), opts.em.q, &opts.out, opts.show_violations)
        .map_err(|e| CliError::from(e).context(opts.out.display()))?;
    let trace_file = opts.trace.clone().unwrap_or_else(|| trace_path(&opts.out));
    write_json(&trace_file, &trace)?;
    if let Some(path) = &opts.dump_qubo {
        let nbrs = NeighborSystem::for_image(&img, opts.em.connectivity);
        let (qubo, layout) = compile(&img, &trace.final_step.params, &opts.em, &nbrs)?;
        dump(&qubo, &layout, path)?;
    }

    let n = img.len();
    let scheme = match opts.em.scheme {
        Scheme::Binary => "binary",
        Scheme::OneHot => "one_hot",
    };
    say!(out, "image     {} ({}x{}, {} pixels)", opts.input.display(), img.width(), img.height(), n)?;
    say!(
        out,
        "model     q={} scheme={scheme} lambda_p={} lambda_oh={:.4} lambda_a={:.4}",
        opts.em.q,
        trace.weights.lambda_p,
        trace.weights.lambda_oh,
        trace.weights.lambda_a
    )?;
    say!(out, "load      {load_ms:.1} ms")?;
    say!(out, "init      {:.1} ms", trace.init_ms)?;
    for r in &trace.records {
        say!(
            out,
            "epoch {:>3} energy {:.6} delta {:.6} violations {} ({:.1} ms)",
            r.epoch,
            r.best_energy,
            r.delta,
            r.violations,
            r.wall_ms
        )?;
    }
    say!(
        out,
        "final     energy {:.6} violations {} samples {} ({:.1} ms)",
        trace.final_step.best_energy,
        trace.final_step.violations,
        trace.final_step.n_samples,
        trace.final_step.wall_ms
    )?;
    say!(
        out,
        "epochs    {} ({})",
        trace.epochs_run,
        if trace.converged { "converged" } else { "epoch limit reached" }
    )?;
    say!(out, "wrote     {} and {}", opts.out.display(), trace_file.display())?;
    if let Some(p) = &opts.dump_qubo {
        say!(out, "wrote     {} and {}", p.display(), layout_path(p).display())?;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub mapping: Vec<(usize, Option<usize>)>,
}

impl From<AccuracyReport> for EvaluationReport {
    fn from(r: AccuracyReport) -> Self {
        Self { accuracy: r.accuracy, correct: r.correct, total: r.total, mapping: r.mapping }
    }
}

/// Scores a label image against a ground-truth label image.
pub fn cmd_evaluate(pred: &Path, truth: &Path, json: Option<&Path>, out: &mut dyn Write) -> CliResult<EvaluationReport> {
    let (p, _) = load_labels(pred).map_err(|e| CliError::from(e).context(pred.display()))?;
    let (t, _) = load_labels(truth).map_err(|e| CliError::from(e).context(truth.display()))?;
    if p.len() != t.len() {
        return Err(CliError::data(format!("prediction has {} pixels, truth has {}", p.len(), t.len())));
    }
    let report: EvaluationReport = accuracy(&p, &t)?.into();
    say!(out, "accuracy {:.6} ({} of {} pixels)", report.accuracy, report.correct, report.total)?;
    for (pl, tl) in &report.mapping {
        match tl {
            Some(tl) => say!(out, "  predicted {pl} -> truth {tl}")?,
            None => say!(out, "  predicted {pl} -> unmatched")?,
        }
    }
    if let Some(path) = json {
        write_json(path, &report)?;
    }
    Ok(report)
}

pub struct SweepOpts {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub repeats: usize,
    pub instance: InstanceArgs,
    pub em: EmConfig,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub repeat: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub violation_fraction: f64,
    pub best_energy: f64,
    pub wall_ms: f64,
}

fn with_axis(base: &EmConfig, axis: SweepAxis, value: f64) -> CliResult<EmConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::LambdaP => cfg.lambda_p = value,
        SweepAxis::LambdaOh => {
            if cfg.scheme != Scheme::OneHot {
                return Err(CliError::usage("a lambda_oh sweep needs the one_hot scheme"));
            }
            cfg.lambda_oh = Some(value);
        }
        SweepAxis::Sweeps => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(CliError::usage(format!("sweep counts must be positive integers, got {value}")));
            }
            cfg.sampler.n_sweeps = value as usize;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Seed of repeat `r`, shared by every axis value so runs are paired.
pub fn repeat_seed(base: u64, r: usize) -> u64 {
    derive_seed(base, r as u64)
}

/// One synthetic instance and one EM run per (value, repeat) pair.
pub fn run_sweep(opts: &SweepOpts) -> CliResult<Vec<SweepRow>> {
    if opts.repeats == 0 {
        return Err(CliError::usage("repeats must be at least 1"));
    }
    if opts.values.is_empty() {
        return Err(CliError::usage("the sweep needs at least one value"));
    }
    let configs: Vec<EmConfig> = opts.values.iter().map(|&v| with_axis(&opts.em, opts.axis, v)).collect::<CliResult<_>>()?;
    opts.instance.spec(opts.em.q, 0)?;
    let jobs: Vec<(usize, usize)> =
        (0..opts.values.len()).flat_map(|v| (0..opts.repeats).map(move |r| (v, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CliError::internal(e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(v, r)| {
                let seed = repeat_seed(opts.seed, r);
                let start = Instant::now();
                let img = generate(&opts.instance.spec(opts.em.q, seed)?)?;
                let mut cfg = configs[v].clone();
                cfg.seed = seed;
                let trace = run_em(&img, &cfg)?;
                let acc = accuracy(&trace.labeling.labels, img.ground_truth().expect("synthetic truth"))?;
                Ok(SweepRow {
                    axis_value: opts.values[v],
                    repeat: r,
                    seed,
                    accuracy: acc.accuracy,
                    violation_fraction: trace.final_step.violations as f64 / img.len() as f64,
                    best_energy: trace.final_step.best_energy,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                })
            })
            .collect()
    })
}

pub fn write_sweep_csv(rows: &[SweepRow], w: impl Write) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(|e| CliError::data(e.to_string()))
}

/// Per-value means of a sweep, in input order.
pub fn sweep_means(rows: &[SweepRow]) -> Vec<(f64, f64, f64)> {
    let mut out: Vec<(f64, f64, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|m| m.0 == r.axis_value) {
            Some(m) => {
                m.1 += r.accuracy;
                m.2 += r.violation_fraction;
                m.3 += 1;
            }
            None => out.push((r.axis_value, r.accuracy, r.violation_fraction, 1)),
        }
    }
    out.into_iter().map(|(v, a, f, n)| (v, a / n as f64, f / n as f64)).collect()
}

pub fn cmd_sweep(opts: &SweepOpts, csv_out: Option<&Path>, out: &mut dyn Write) -> CliResult<Vec<SweepRow>> {
    let rows = run_sweep(opts)?;
    match csv_out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            write_sweep_csv(&rows, file)?;
            for (v, acc, viol) in sweep_means(&rows) {
                say!(out, "{}={v} mean accuracy {acc:.4} mean violation fraction {viol:.4}", opts.axis.name())?;
            }
            say!(out, "wrote {} ({} rows)", path.display(), rows.len())?;
        }
        None => write_sweep_csv(&rows, out)?,
    }
    Ok(rows)
}

pub struct DumpOpts {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Noise parameters; the configured initialization is used when absent.
    pub params: Option<PathBuf>,
    pub em: EmConfig,
}

/// Writes the QUBO of an image under given or initial parameters.
pub fn cmd_dump_qubo(opts: &DumpOpts, out: &mut dyn Write) -> CliResult<()> {
    opts.em.validate()?;
    let img = load_image(&opts.input)?;
    let model = match &opts.params {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            let m: NoiseModel = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            m.validate()?;
            if m.n_classes() != opts.em.q {
                return Err(CliError::usage(format!("parameters have {} classes, q is {}", m.n_classes(), opts.em.q)));
            }
            m
        }
        None => qseg_core::em::initialize(&img, &opts.em)?,
    };
    let nbrs = NeighborSystem::for_image(&img, opts.em.connectivity);
    let (qubo, layout) = compile(&img, &model, &opts.em, &nbrs)?;
    dump(&qubo, &layout, &opts.out)?;
    say!(
        out,
        "wrote {} ({} variables, {} linear, {} quadratic) and {}",
        opts.out.display(),
        qubo.n_vars(),
        qubo.linear().len(),
        qubo.quadratic().len(),
        layout_path(&opts.out).display()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_paths() {
        assert_eq!(truth_path(Path::new("a/img.png")), PathBuf::from("a/img_truth.png"));
        assert_eq!(trace_path(Path::new("out/l.pgm")), PathBuf::from("out/l.trace.json"));
        assert_eq!(layout_path(Path::new("p.qubo")), PathBuf::from("p.layout.json"));
    }

    #[test]
    fn sweep_axis_validation() {
        let mut em = EmConfig::new(2);
        em.scheme = Scheme::Binary;
        assert!(with_axis(&em, SweepAxis::LambdaOh, 1.0).is_err());
        assert!(with_axis(&EmConfig::new(2), SweepAxis::Sweeps, 2.5).is_err());
        assert_eq!(with_axis(&EmConfig::new(2), SweepAxis::Sweeps, 10.0).unwrap().sampler.n_sweeps, 10);
    }

    #[test]
    fn means_by_value() {
        let row = |v: f64, a: f64| SweepRow {
            axis_value: v,
            repeat: 0,
            seed: 0,
            accuracy: a,
            violation_fraction: 0.0,
            best_energy: 0.0,
            wall_ms: 0.0,
        };
        let m = sweep_means(&[row(1.0, 0.5), row(2.0, 1.0), row(1.0, 0.7)]);
        assert_eq!(m.len(), 2);
        assert!((m[0].1 - 0.6).abs() < 1e-12);
    }
}
