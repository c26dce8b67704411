use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use convtensor::altmin::{run_altmin, AltMinConfig};
use convtensor::decompose::{fit_lambda, run, AlsConfig, Mode};
use convtensor::formats::{
    format_f64, read_cumulant, read_filters, read_vector, write_cumulant, write_filters, write_vector, SampleReader,
    SampleWriter,
};
use convtensor::metrics::{filter_recovery_error, reconstruction_error};
use convtensor::synth::{make_ground_truth_with_support, sample_range};
use convtensor::{ActivationSpec, CumulantUnfolding, Error as CoreError, FilterBank, MomentAccumulator};
use log::info;

use crate::bench::{run_bench, STREAM_CHUNK};
use crate::config::{read_kv_file, render_kv, BenchSpec, Manifest};
use crate::error::{usage, CliError, CliResult};

pub const TRACE_HEADER: &str = "iter,wall_ms,recon_err,recovery_err,objective";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| {
        CliError::Core(CoreError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long = "L")]
    pub l: usize,
    #[arg(long = "N")]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `poisson[:mean]` or `bernexp:p[:scale]`.
    #[arg(long, default_value = "poisson:1")]
    pub activation: String,
    /// Zero every filter coefficient at index >= support.
    #[arg(long)]
    pub support: Option<usize>,
    /// Also write the activations as `activations.ctx` (rows of length nL).
    #[arg(long)]
    pub keep_activations: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `truth.csv`, `samples.ctx` and `manifest.txt` into `--out`.
pub fn gen(args: &GenArgs) -> CliResult<()> {
    if args.count == 0 {
        return Err(usage("--N must be at least 1"));
    }
    let activation: ActivationSpec = args.activation.parse()?;
    let gt = make_ground_truth_with_support(args.n, args.l, args.seed, activation, args.support)?;
    create_dir(&args.out)?;
    write_filters(&args.out.join("truth.csv"), &gt.bank)?;
    let mut writer = SampleWriter::create(&args.out.join("samples.ctx"), args.n, args.count)?;
    let mut w_writer = if args.keep_activations {
        Some(SampleWriter::create(
            &args.out.join("activations.ctx"),
            args.n * args.l,
            args.count,
        )?)
    } else {
        None
    };
    let mut start = 0;
    while start < args.count {
        let count = STREAM_CHUNK.min(args.count - start);
        let chunk = sample_range(&gt, args.seed, start as u64, count, args.keep_activations);
        writer.write(chunk.as_slice())?;
        if let (Some(w), Some(acts)) = (w_writer.as_mut(), chunk.activations()) {
            w.write(acts)?;
        }
        start += count;
    }
    writer.finish()?;
    if let Some(w) = w_writer {
        w.finish()?;
    }
    let manifest = Manifest {
        n: args.n,
        l: args.l,
        count: args.count,
        seed: args.seed,
        activation,
        support: args.support,
    };
    write_text(&args.out.join("manifest.txt"), &render_kv(&manifest.to_map()))?;
    info!("wrote {} samples to {}", args.count, args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct CumulantArgs {
    /// Sample files; repeat to pool several files in one pass.
    #[arg(long, required = true, num_args = 1..)]
    pub samples: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Accumulates moments over every file in one streamed pass.
pub fn accumulate_files(paths: &[PathBuf]) -> CliResult<CumulantUnfolding> {
    let mut acc: Option<MomentAccumulator> = None;
    let mut buffer = Vec::new();
    for path in paths {
        let mut reader = SampleReader::open(path)?;
        let n = reader.n();
        let acc = acc.get_or_insert_with(|| MomentAccumulator::new(n));
        if acc.n() != n {
            return Err(usage(format!(
                "{} has n = {n}, earlier files have n = {}",
                path.display(),
                acc.n()
            )));
        }
        // Chunks are carried across files so block boundaries match a
        // single concatenated file.
        while let Some(chunk) = reader.next_chunk(STREAM_CHUNK)? {
            buffer.extend_from_slice(&chunk);
            let full = buffer.len() / (STREAM_CHUNK * n) * STREAM_CHUNK * n;
            if full > 0 {
                acc.accumulate_batch(&buffer[..full])?;
                buffer.drain(..full);
            }
        }
    }
    let mut acc = acc.ok_or_else(|| usage("no sample files given"))?;
    if !buffer.is_empty() {
        acc.accumulate_batch(&buffer)?;
    }
    Ok(acc.finalize()?)
}

pub fn cumulant(args: &CumulantArgs) -> CliResult<()> {
    let cum = accumulate_files(&args.samples)?;
    write_cumulant(&args.out, &cum)?;
    info!("passes=1 files={} n={}", args.samples.len(), cum.n());
    println!("passes=1");
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    /// CT decomposition; `--mode` picks joint or deflation.
    Ct,
    CtJoint,
    CtDeflation,
    Altmin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Joint,
    Deflation,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long, value_enum, default_value = "ct")]
    pub algorithm: AlgorithmArg,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Cumulant file (CT only).
    #[arg(long)]
    pub cumulant: Option<PathBuf>,
    /// Sample file; CT computes the cumulant from it first.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long = "L")]
    pub l: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1)]
    pub deflation_passes: usize,
    #[arg(long)]
    pub step_f: Option<f64>,
    #[arg(long)]
    pub step_w: Option<f64>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// Ground-truth filters; enables the recovery_err column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output directory for filters.csv, lambda.csv and trace.csv.
    #[arg(long)]
    pub out: PathBuf,
}

struct Trace {
    text: String,
}

impl Trace {
    fn new() -> Self {
        Self {
            text: format!("{TRACE_HEADER}\n"),
        }
    }

    fn push(&mut self, iter: usize, wall_ms: f64, recon: f64, recovery: Option<f64>, objective: f64) {
        let _ = writeln!(
            self.text,
            "{iter},{},{},{},{}",
            format_f64(wall_ms),
            format_f64(recon),
            recovery.map(format_f64).unwrap_or_default(),
            format_f64(objective)
        );
    }
}

fn recovery(bank: &FilterBank, truth: Option<&FilterBank>) -> CliResult<Option<f64>> {
    truth
        .map(|t| filter_recovery_error(bank, t).map(|(e, _)| e))
        .transpose()
        .map_err(Into::into)
}

pub fn decompose(args: &DecomposeArgs) -> CliResult<()> {
    let truth = args.truth.as_deref().map(read_filters).transpose()?;
    if let Some(t) = &truth {
        if t.len() != args.l {
            return Err(usage(format!("--truth has {} filters, --L is {}", t.len(), args.l)));
        }
    }
    create_dir(&args.out)?;
    let mut trace = Trace::new();
    let (filters, lambda) = match args.algorithm {
        AlgorithmArg::Altmin => {
            if args.mode.is_some() || args.cumulant.is_some() {
                return Err(usage("altmin takes --samples and no --mode or --cumulant"));
            }
            let path = args.samples.as_deref().ok_or_else(|| usage("altmin needs --samples"))?;
            let (n, x) = convtensor::formats::read_samples(path)?;
            let defaults = AltMinConfig::default();
            let cfg = AltMinConfig {
                step_size_f: args.step_f.unwrap_or(defaults.step_size_f),
                step_size_w: args.step_w.unwrap_or(defaults.step_size_w),
                inner_steps: args.inner_steps.unwrap_or(defaults.inner_steps),
                max_outer_iters: args.max_iters.unwrap_or(defaults.max_outer_iters),
                seed: args.seed,
                tol: args.tol.unwrap_or(defaults.tol),
                max_wall_ms: None,
            };
            let out = run_altmin(&x, n, args.l, &cfg)?;
            let count = x.len() / n;
            let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for row in &out.trace {
                let recon = (row.loss * count as f64).sqrt() / x_norm;
                trace.push(
                    row.iter,
                    row.wall_ms,
                    recon,
                    recovery(&row.filters, truth.as_ref())?,
                    row.loss,
                );
            }
            if out.diverged {
                log::warn!("altmin diverged; writing the best state seen");
            }
            // altmin has no cumulant weights; report unit weights
            (out.filters, vec![1.0; n * args.l])
        }
        ct => {
            if args.step_f.is_some() || args.step_w.is_some() || args.inner_steps.is_some() {
                return Err(usage("--step-f, --step-w and --inner-steps apply to altmin only"));
            }
            let mode = match (ct, args.mode) {
                (AlgorithmArg::CtJoint, Some(ModeArg::Deflation))
                | (AlgorithmArg::CtDeflation, Some(ModeArg::Joint)) => {
                    return Err(usage("--mode contradicts --algorithm"));
                }
                (AlgorithmArg::CtDeflation, _) | (_, Some(ModeArg::Deflation)) => Mode::Deflation,
                _ => Mode::Joint,
            };
            let cum = match (&args.cumulant, &args.samples) {
                (Some(c), None) => read_cumulant(c)?,
                (None, Some(s)) => accumulate_files(std::slice::from_ref(s))?,
                _ => return Err(usage("CT needs exactly one of --cumulant or --samples")),
            };
            let defaults = AlsConfig::default();
            let cfg = AlsConfig {
                max_iters: args.max_iters.unwrap_or(defaults.max_iters),
                tol_filter_change: args.tol.unwrap_or(defaults.tol_filter_change),
                ridge: args.ridge,
                seed: args.seed,
                mode,
                deflation_passes: args.deflation_passes,
                restarts: args.restarts,
                max_wall_ms: None,
            };
            let out = run(&cum, args.l, &cfg)?;
            // rows of losing restarts are left out so the last row is the
            // returned estimate
            for (iter, row) in out.path().enumerate() {
                let recon = reconstruction_error(&cum, &row.filters, &row.lambda)?;
                trace.push(
                    iter,
                    row.wall_ms,
                    recon,
                    recovery(&row.filters, truth.as_ref())?,
                    row.objective,
                );
            }
            (out.filters, out.lambda)
        }
    };
    write_filters(&args.out.join("filters.csv"), &filters)?;
    write_vector(&args.out.join("lambda.csv"), &lambda)?;
    write_text(&args.out.join("trace.csv"), &trace.text)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub cumulant: PathBuf,
    #[arg(long)]
    pub filters: PathBuf,
    /// Weights (nL values); fitted by least squares when omitted.
    #[arg(long)]
    pub lambda: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

/// Prints `key=value` metric lines.
pub fn eval(args: &EvalArgs) -> CliResult<String> {
    let cum = read_cumulant(&args.cumulant)?;
    let bank = read_filters(&args.filters)?;
    if bank.n() != cum.n() {
        return Err(usage(format!(
            "filters have n = {}, cumulant has n = {}",
            bank.n(),
            cum.n()
        )));
    }
    let lambda = match &args.lambda {
        Some(p) => read_vector(p)?,
        None => fit_lambda(&cum, &bank)?,
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "recon_err={}",
        format_f64(reconstruction_error(&cum, &bank, &lambda)?)
    );
    if let Some(t) = &args.truth {
        let truth = read_filters(t)?;
        let (err, align) = filter_recovery_error(&bank, &truth)?;
        let _ = writeln!(out, "recovery_err={}", format_f64(err));
        let _ = writeln!(out, "recovery_err_max={}", format_f64(align.max()));
        let join = |v: Vec<String>| v.join(" ");
        let _ = writeln!(
            out,
            "permutation={}",
            join(align.permutation.iter().map(|p| p.to_string()).collect())
        );
        let _ = writeln!(
            out,
            "shifts={}",
            join(align.shifts.iter().map(|s| s.to_string()).collect())
        );
        let _ = writeln!(
            out,
            "signs={}",
            join(align.signs.iter().map(|s| s.to_string()).collect())
        );
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// key = value spec file; flags below override its values.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated list.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long = "L")]
    pub l: Option<String>,
    #[arg(long = "N")]
    pub count: Option<String>,
    #[arg(long)]
    pub activation: Option<String>,
    /// Comma-separated subset of ct-joint, ct-deflation, altmin.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub max_iters: Option<String>,
    #[arg(long)]
    pub tol: Option<String>,
    #[arg(long)]
    pub ridge: Option<String>,
    #[arg(long)]
    pub restarts: Option<String>,
    #[arg(long)]
    pub budget_ms: Option<String>,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn bench_spec(args: &BenchArgs) -> CliResult<BenchSpec> {
    let mut map = match &args.spec {
        Some(p) => read_kv_file(p)?,
        None => Default::default(),
    };
    let flags = [
        ("n", &args.n),
        ("L", &args.l),
        ("N", &args.count),
        ("activation", &args.activation),
        ("algorithms", &args.algorithm),
        ("seeds", &args.seed),
        ("max_iters", &args.max_iters),
        ("tol", &args.tol),
        ("ridge", &args.ridge),
        ("restarts", &args.restarts),
        ("budget_ms", &args.budget_ms),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            if key == "algorithms" {
                map.remove("algorithm");
            }
            if key == "seeds" {
                map.remove("seed");
            }
            map.insert(key.to_string(), v.clone());
        }
    }
    BenchSpec::from_map(&map)
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    let spec = bench_spec(args)?;
    let clock = Instant::now();
    let records = run_bench(&spec, args.jobs, &args.out)?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    info!(
        "bench finished: {} runs, {failed} failed, {:.1} s",
        records.len(),
        clock.elapsed().as_secs_f64()
    );
    println!("runs={} failed={failed}", records.len());
    Ok(())
}
