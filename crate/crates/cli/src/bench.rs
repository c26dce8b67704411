//! Benchmark grid runner and its CSV/plot outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::mpsc;
use std::time::Instant;

use convtensor::altmin::run_altmin;
use convtensor::decompose::run;
use convtensor::formats::format_f64;
use convtensor::metrics::{filter_recovery_error, reconstruction_error};
use convtensor::synth::{make_ground_truth, sample, GroundTruth, SampleStream};
use convtensor::{CumulantUnfolding, MomentAccumulator};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{Algorithm, BenchSpec};
use crate::error::{CliError, CliResult};

/// Samples generated per chunk when streaming into the accumulator; a
/// multiple of the accumulation block so results do not depend on it.
pub const STREAM_CHUNK: usize = 16 * 1024;

pub const RESULTS_HEADER: &str = "cell,n,L,N,algorithm,seed,iter,wall_ms,recon_err,recovery_err,objective,status";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub l: usize,
    pub count: usize,
    pub algorithm: Algorithm,
}

/// Cells in grid order: `n`, then `L`, then `N`, then algorithm.
pub fn cells(spec: &BenchSpec) -> Vec<Cell> {
    let mut out = Vec::new();
    for &n in &spec.ns {
        for &l in &spec.ls {
            for &count in &spec.counts {
                for &algorithm in &spec.algorithms {
                    out.push(Cell {
                        index: out.len(),
                        n,
                        l,
                        count,
                        algorithm,
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    /// For CT this includes the cumulant pass.
    pub wall_ms: f64,
    pub recon_err: f64,
    pub recovery_err: f64,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub cell: Cell,
    pub seed: u64,
    pub trace: Vec<TracePoint>,
    /// `ok`, `unconverged`, `diverged` or `error: ...`.
    pub status: String,
    /// Accumulation time; zero for altmin.
    pub cumulant_ms: f64,
    pub solve_ms: f64,
    pub iters: usize,
}

impl RunRecord {
    fn failed(cell: Cell, seed: u64, err: impl std::fmt::Display) -> Self {
        Self {
            cell,
            seed,
            trace: Vec::new(),
            status: format!("error: {err}").replace([',', '\n'], ";"),
            cumulant_ms: 0.0,
            solve_ms: 0.0,
            iters: 0,
        }
    }

    pub fn total_ms(&self) -> f64 {
        self.cumulant_ms + self.solve_ms
    }

    pub fn iter_ms(&self) -> f64 {
        if self.iters == 0 {
            f64::NAN
        } else {
            self.solve_ms / self.iters as f64
        }
    }

    pub fn is_ok(&self) -> bool {
        !self.status.starts_with("error")
    }

    pub fn final_point(&self) -> Option<&TracePoint> {
        self.trace.last()
    }

    /// Recovery error of the last trace point at or before `ms`.
    pub fn recovery_at(&self, ms: f64) -> Option<f64> {
        self.trace
            .iter()
            .take_while(|p| p.wall_ms <= ms)
            .last()
            .map(|p| p.recovery_err)
    }

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        let c = &self.cell;
        let prefix = format!(
            "{},{},{},{},{},{}",
            c.index,
            c.n,
            c.l,
            c.count,
            c.algorithm.name(),
            self.seed
        );
        if self.trace.is_empty() {
            let _ = writeln!(out, "{prefix},,,,,,{}", self.status);
        }
        for p in &self.trace {
            let _ = writeln!(
                out,
                "{prefix},{},{},{},{},{},{}",
                p.iter,
                format_f64(p.wall_ms),
                format_f64(p.recon_err),
                format_f64(p.recovery_err),
                format_f64(p.objective),
                self.status
            );
        }
        out
    }
}

/// Streams `count` samples into the accumulator, timing only the
/// accumulation itself.
pub fn streamed_cumulant(gt: &GroundTruth, count: usize, seed: u64) -> convtensor::Result<(CumulantUnfolding, f64)> {
    let mut acc = MomentAccumulator::new(gt.n());
    let mut ms = 0.0;
    for chunk in SampleStream::new(gt, count, seed, STREAM_CHUNK) {
        let clock = Instant::now();
        acc.accumulate_batch(chunk.as_slice())?;
        ms += clock.elapsed().as_secs_f64() * 1e3;
    }
    let clock = Instant::now();
    let cum = acc.finalize()?;
    ms += clock.elapsed().as_secs_f64() * 1e3;
    Ok((cum, ms))
}

fn run_ct(spec: &BenchSpec, cell: Cell, seed: u64, gt: &GroundTruth) -> convtensor::Result<RunRecord> {
    let (cum, cumulant_ms) = streamed_cumulant(gt, cell.count, seed)?;
    let cfg = spec.als_for(cell.algorithm, seed);
    let clock = Instant::now();
    let out = run(&cum, cell.l, &cfg)?;
    let solve_ms = clock.elapsed().as_secs_f64() * 1e3;
    let mut trace = Vec::with_capacity(out.trace.len());
    for (iter, row) in out.path().enumerate() {
        trace.push(TracePoint {
            iter,
            wall_ms: cumulant_ms + row.wall_ms,
            recon_err: reconstruction_error(&cum, &row.filters, &row.lambda)?,
            recovery_err: filter_recovery_error(&row.filters, &gt.bank)?.0,
            objective: row.objective,
        });
    }
    let iters = out.trace.iter().filter(|r| r.iter > 0).count();
    Ok(RunRecord {
        cell,
        seed,
        trace,
        status: if out.converged { "ok" } else { "unconverged" }.into(),
        cumulant_ms,
        solve_ms,
        iters,
    })
}

fn run_alt(spec: &BenchSpec, cell: Cell, seed: u64, gt: &GroundTruth) -> convtensor::Result<RunRecord> {
    let data = sample(gt, cell.count, seed, false)?;
    let x = data.as_slice();
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let cfg = spec.altmin_for(seed);
    let clock = Instant::now();
    let out = run_altmin(x, cell.n, cell.l, &cfg)?;
    let solve_ms = clock.elapsed().as_secs_f64() * 1e3;
    let mut trace = Vec::with_capacity(out.trace.len());
    for row in &out.trace {
        trace.push(TracePoint {
            iter: row.iter,
            wall_ms: row.wall_ms,
            recon_err: (row.loss * cell.count as f64).sqrt() / x_norm,
            recovery_err: filter_recovery_error(&row.filters, &gt.bank)?.0,
            objective: row.loss,
        });
    }
    Ok(RunRecord {
        cell,
        seed,
        iters: out.trace.len() - 1,
        trace,
        status: if out.diverged { "diverged" } else { "ok" }.into(),
        cumulant_ms: 0.0,
        solve_ms,
    })
}

/// One `(cell, seed)` run. Failures are captured in the record's status.
pub fn run_one(spec: &BenchSpec, cell: Cell, seed: u64) -> RunRecord {
    let result = make_ground_truth(cell.n, cell.l, seed, spec.activation).and_then(|gt| {
        if cell.algorithm.is_ct() {
            run_ct(spec, cell, seed, &gt)
        } else {
            run_alt(spec, cell, seed, &gt)
        }
    });
    result.unwrap_or_else(|e| {
        warn!("cell {} seed {seed} failed: {e}", cell.index);
        RunRecord::failed(cell, seed, e)
    })
}

/// Runs every `(cell, seed)` pair on a pool of `jobs` threads. Records reach
/// `sink` in grid order, from a single consumer that reorders completions.
pub fn run_grid(
    spec: &BenchSpec,
    jobs: usize,
    mut sink: impl FnMut(&RunRecord) -> CliResult<()> + Send,
) -> CliResult<Vec<RunRecord>> {
    spec.validate()?;
    let work: Vec<(Cell, u64)> = cells(spec)
        .into_iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot build a pool of {jobs} threads: {e}")))?;
    let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
    std::thread::scope(|scope| {
        let writer = scope.spawn(move || -> CliResult<Vec<RunRecord>> {
            let mut pending = BTreeMap::new();
            let mut done = Vec::new();
            for (i, rec) in rx {
                pending.insert(i, rec);
                while let Some(rec) = pending.remove(&done.len()) {
                    sink(&rec)?;
                    done.push(rec);
                }
            }
            Ok(done)
        });
        pool.install(|| {
            work.par_iter().enumerate().for_each_with(tx, |tx, (i, &(cell, seed))| {
                let rec = run_one(spec, cell, seed);
                info!(
                    "cell {} ({} n={} L={} N={}) seed {seed}: {}",
                    cell.index,
                    cell.algorithm.name(),
                    cell.n,
                    cell.l,
                    cell.count,
                    rec.status
                );
                // the receiver only hangs up after a sink error, which is
                // reported below
                let _ = tx.send((i, rec));
            });
        });
        writer.join().expect("writer thread panicked")
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format_f64(v)
    }
}

pub const SUMMARY_HEADER: &str =
    "cell,n,L,N,algorithm,runs,failed,recovery_err,recon_err,wall_ms,cumulant_ms,solve_ms,iter_ms,iters";

/// Per-cell medians over seeds, failed runs excluded.
pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for group in by_cell(records) {
        let c = group[0].cell;
        let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.is_ok()).collect();
        let col = |f: &dyn Fn(&RunRecord) -> f64| fmt_opt(median(&ok.iter().map(|r| f(r)).collect::<Vec<_>>()));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.index,
            c.n,
            c.l,
            c.count,
            c.algorithm.name(),
            group.len(),
            group.len() - ok.len(),
            col(&|r| r.final_point().map_or(f64::NAN, |p| p.recovery_err)),
            col(&|r| r.final_point().map_or(f64::NAN, |p| p.recon_err)),
            col(&|r| r.total_ms()),
            col(&|r| r.cumulant_ms),
            col(&|r| r.solve_ms),
            col(&|r| r.iter_ms()),
            col(&|r| r.iters as f64),
        );
    }
    out
}

fn by_cell(records: &[RunRecord]) -> Vec<Vec<&RunRecord>> {
    let mut groups: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.cell.index).or_default().push(r);
    }
    groups.into_values().collect()
}

/// Error against wall-clock time, one row per trace point.
pub fn fig_error_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("algorithm,n,L,N,seed,iter,wall_ms,recovery_err,recon_err\n");
    for r in records {
        let c = &r.cell;
        for p in &r.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.algorithm.name(),
                c.n,
                c.l,
                c.count,
                r.seed,
                p.iter,
                format_f64(p.wall_ms),
                format_f64(p.recovery_err),
                format_f64(p.recon_err)
            );
        }
    }
    out
}

/// Median runtimes with the chosen grid axis varying. `total_ms` includes
/// the cumulant pass for CT, `solve_ms` excludes it.
fn fig_runtime_csv(records: &[RunRecord], axis: &str) -> String {
    let mut out = format!("algorithm,n,L,N,{axis},total_ms,solve_ms,iter_ms\n");
    for group in by_cell(records) {
        let c = group[0].cell;
        let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.is_ok()).collect();
        let med = |f: &dyn Fn(&RunRecord) -> f64| fmt_opt(median(&ok.iter().map(|r| f(r)).collect::<Vec<_>>()));
        let x = if axis == "L" { c.l } else { c.count };
        let _ = writeln!(
            out,
            "{},{},{},{},{x},{},{},{}",
            c.algorithm.name(),
            c.n,
            c.l,
            c.count,
            med(&|r| r.total_ms()),
            med(&|r| r.solve_ms),
            med(&|r| r.iter_ms())
        );
    }
    out
}

pub fn fig_runtime_vs_l_csv(records: &[RunRecord]) -> String {
    fig_runtime_csv(records, "L")
}

pub fn fig_runtime_vs_n_csv(records: &[RunRecord]) -> String {
    fig_runtime_csv(records, "samples")
}

pub const PLOT_SCRIPT: &str = r#"# gnuplot script for the benchmark outputs in this directory
set datafile separator ","
set terminal pngcairo size 900,600
set key autotitle columnhead

set output "fig_error.png"
set logscale y
set xlabel "wall clock (ms)"
set ylabel "filter recovery error"
plot for [alg in "ct-joint ct-deflation altmin"] "fig_error.csv" \
    using (strcol(1) eq alg ? $7 : 1/0):8 with points title alg

set output "fig_runtime_vs_L.png"
set xlabel "number of filters L"
set ylabel "median runtime (ms)"
plot for [alg in "ct-joint ct-deflation altmin"] "fig_runtime_vs_L.csv" \
    using (strcol(1) eq alg ? $5 : 1/0):6 with linespoints title alg." (total)", \
     for [alg in "ct-joint ct-deflation"] "fig_runtime_vs_L.csv" \
    using (strcol(1) eq alg ? $5 : 1/0):7 with linespoints title alg." (no cumulant)"

set output "fig_runtime_vs_N.png"
set logscale x
set xlabel "number of samples N"
plot for [alg in "ct-joint ct-deflation altmin"] "fig_runtime_vs_N.csv" \
    using (strcol(1) eq alg ? $5 : 1/0):6 with linespoints title alg." (total)", \
     for [alg in "ct-joint ct-deflation"] "fig_runtime_vs_N.csv" \
    using (strcol(1) eq alg ? $5 : 1/0):7 with linespoints title alg." (no cumulant)"
"#;

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| {
        CliError::Core(convtensor::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

/// Runs the grid and writes `results.csv`, `summary.csv`, the figure data
/// and `plot.gp` into `out`. Results are appended as runs finish.
pub fn run_bench(spec: &BenchSpec, jobs: usize, out: &Path) -> CliResult<Vec<RunRecord>> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|source| {
        CliError::Core(convtensor::Error::Io {
            path: out.to_path_buf(),
            source,
        })
    })?;
    let results_path = out.join("results.csv");
    let io = |source| {
        CliError::Core(convtensor::Error::Io {
            path: results_path.clone(),
            source,
        })
    };
    let mut results = std::io::BufWriter::new(fs::File::create(&results_path).map_err(io)?);
    use std::io::Write as _;
    writeln!(results, "{RESULTS_HEADER}").map_err(io)?;
    let records = run_grid(spec, jobs, |rec| {
        results.write_all(rec.csv_rows().as_bytes()).map_err(io)
    })?;
    results.flush().map_err(io)?;
    write(&out.join("summary.csv"), &summary_csv(&records))?;
    write(&out.join("fig_error.csv"), &fig_error_csv(&records))?;
    write(&out.join("fig_runtime_vs_L.csv"), &fig_runtime_vs_l_csv(&records))?;
    write(&out.join("fig_runtime_vs_N.csv"), &fig_runtime_vs_n_csv(&records))?;
    write(&out.join("plot.gp"), PLOT_SCRIPT)?;
    Ok(records)
}
