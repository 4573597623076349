use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qseg::config::{parse_range, EmArgs, InstanceArgs, RunConfig, SweepAxis};
use qseg::error::{CliError, CliResult, EXIT_USAGE};
use qseg::{cmd_dump_qubo, cmd_evaluate, cmd_generate, cmd_segment, cmd_sweep, DumpOpts, GenerateOpts, SegmentOpts, SweepOpts};

#[derive(Parser)]
#[command(name = "qseg", version, about = "Image segmentation as QUBO sampling inside EM")]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image and its ground-truth labels.
    Generate {
        /// Number of classes.
        #[arg(long)]
        q: Option<usize>,
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long)]
        out: PathBuf,
        /// Truth label image (default: `<stem>_truth.<ext>` next to the output).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Segment an image with EM.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        em: EmArgs,
        /// Label image to write.
        #[arg(long)]
        out: PathBuf,
        /// Trace JSON (default: `<out stem>.trace.json`).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Mark pixels with invalid encodings in the label image.
        #[arg(long)]
        show_violations: bool,
        /// Also write the final QUBO here.
        #[arg(long)]
        dump_qubo: Option<PathBuf>,
    },
    /// Score predicted labels against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Repeat generate+segment over a grid of one parameter.
    Sweep {
        #[arg(long, value_enum)]
        axis: Option<SweepAxis>,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', conflicts_with = "range")]
        values: Option<Vec<f64>>,
        /// Axis values as start:stop:step.
        #[arg(long)]
        range: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        em: EmArgs,
        /// CSV output (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the QUBO of an image under initial or given parameters.
    DumpQubo {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        em: EmArgs,
        /// Noise model JSON; the configured initialization otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let jobs = cli.jobs.or(file.jobs).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::internal(e.to_string()))?;
    match cli.command {
        Command::Generate { q, instance, out: path, truth } => {
            let opts = GenerateOpts {
                q: q.or(file.em.q).unwrap_or(2),
                instance: instance.layered(&file.instance),
                out: path,
                truth,
                seed,
            };
            cmd_generate(&opts, out)
        }
        Command::Segment { input, em, out: path, trace, show_violations, dump_qubo } => {
            let em = em.layered(&file.em).em_config(seed)?;
            cmd_segment(&SegmentOpts { input, out: path, trace, show_violations, dump_qubo, em }, out).map(|_| ())
        }
        Command::Evaluate { pred, truth, json } => cmd_evaluate(&pred, &truth, json.as_deref(), out).map(|_| ()),
        Command::Sweep { axis, values, range, repeats, instance, em, out: path } => {
            let axis = axis.or(file.sweep.axis).ok_or_else(|| CliError::usage("sweep needs --axis"))?;
            let values = match (values, range) {
                (Some(v), _) => v,
                (None, Some(r)) => parse_range(&r)?,
                (None, None) => file.sweep.values.clone().ok_or_else(|| CliError::usage("sweep needs --values or --range"))?,
            };
            let opts = SweepOpts {
                axis,
                values,
                repeats: repeats.or(file.sweep.repeats).unwrap_or(5),
                instance: instance.layered(&file.instance),
                em: em.layered(&file.em).em_config(seed)?,
                seed,
                jobs,
            };
            cmd_sweep(&opts, path.as_deref(), out).map(|_| ())
        }
        Command::DumpQubo { input, em, params, out: path } => {
            let em = em.layered(&file.em).em_config(seed)?;
            cmd_dump_qubo(&DumpOpts { input, out: path, params, em }, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("qseg: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
