//! Benchmark harness: runs a grid of (instance × resolution × mode) solves,
//! records one row per run, and aggregates medians per mode and resolution.
//!
//! Instances are either synthetic generator names (`classic`, `shapes`) or
//! explicit histogram pairs. Runs within a benchmark execute in parallel up
//! to a job limit; a failing instance is recorded and the run continues.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDims, Histogram2D, ReducedLP};
use crate::io as hio;
use crate::oracle::{self, DenseOTProblem, ORACLE_CAP};
use crate::solver::{self, SolverConfig, SolverMode};

/// Largest resolution a bench spec may request (memory guard).
pub const RESOLUTION_CAP: usize = 512;

/// One benchmark instance: a generator family expanded per resolution and
/// seed, or an explicit pair of histogram specs solved as-is.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Instance {
    Generator(String),
    Pair { left: String, right: String },
}

/// One solver configuration to compare.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSpec {
    pub mode: SolverMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub instances: Vec<Instance>,
    /// Grid sizes for generator instances (grids are square, `r`×`r`).
    #[serde(default)]
    pub resolutions: Vec<usize>,
    pub modes: Vec<ModeSpec>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub output: PathBuf,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iters() -> usize {
    200_000
}

/// One row of the report: a single (instance, mode) solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: String,
    pub resolution: usize,
    pub mode: SolverMode,
    pub sigma: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub kkt_res: f64,
    pub distance: f64,
    /// Relative objective gap vs the exact oracle; present when the grid has
    /// at most [`ORACLE_CAP`] bins.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feaserr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Median iterations / wall time over one (mode, resolution) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: SolverMode,
    pub resolution: usize,
    pub runs: usize,
    pub median_iterations: f64,
    pub median_wall_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: BenchSpec,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

struct Job {
    id: String,
    resolution: usize,
    mu1: Histogram2D,
    mu2: Histogram2D,
    mode: ModeSpec,
}

fn expand_jobs(spec: &BenchSpec) -> Result<Vec<Job>> {
    for &r in &spec.resolutions {
        if r == 0 || r > RESOLUTION_CAP {
            return Err(Error::InvalidConfig(format!(
                "resolution {r} outside 1..={RESOLUTION_CAP}"
            )));
        }
    }
    if spec.modes.is_empty() {
        return Err(Error::InvalidConfig("bench spec lists no modes".into()));
    }
    let mut pairs: Vec<(String, usize, Histogram2D, Histogram2D)> = Vec::new();
    for inst in &spec.instances {
        match inst {
            Instance::Generator(kind) => {
                if spec.resolutions.is_empty() || spec.seeds.is_empty() {
                    return Err(Error::InvalidConfig(
                        "generator instances need resolutions and seeds".into(),
                    ));
                }
                for &r in &spec.resolutions {
                    let dims = GridDims::new(r, r)?;
                    for &seed in &spec.seeds {
                        let (a, b) = match kind.as_str() {
                            "classic" => hio::classic_pair(dims, seed)?,
                            "shapes" => hio::shapes_pair(dims, seed)?,
                            other => {
                                return Err(Error::InvalidConfig(format!(
                                    "unknown generator '{other}' (expect classic or shapes)"
                                )))
                            }
                        };
                        pairs.push((format!("{kind}-{r}x{r}-s{seed}"), r, a, b));
                    }
                }
            }
            Instance::Pair { left, right } => {
                let a = hio::load_histogram(left)?;
                let b = hio::load_histogram(right)?;
                let r = a.dims().m.max(a.dims().n);
                pairs.push((format!("{left}|{right}"), r, a, b));
            }
        }
    }
    let mut jobs = Vec::new();
    for (id, r, a, b) in pairs {
        for mode in &spec.modes {
            jobs.push(Job {
                id: id.clone(),
                resolution: r,
                mu1: a.clone(),
                mu2: b.clone(),
                mode: mode.clone(),
            });
        }
    }
    Ok(jobs)
}

fn run_job(job: &Job, tol: f64, max_iters: usize) -> RunRecord {
    let mut record = RunRecord {
        instance: job.id.clone(),
        resolution: job.resolution,
        mode: job.mode.mode,
        sigma: f64::NAN,
        iterations: 0,
        wall_time: 0.0,
        kkt_res: f64::NAN,
        distance: f64::NAN,
        gap: None,
        feaserr: None,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let lp = ReducedLP::new(&job.mu1, &job.mu2)?;
        let cfg = SolverConfig {
            sigma: job.mode.sigma,
            tol,
            max_iters,
            mode: job.mode.mode,
            rho: job.mode.rho.unwrap_or(1.7),
            ..SolverConfig::default()
        };
        let start = Instant::now();
        let (report, state) = solver::solve(&lp, &cfg)?;
        record.wall_time = start.elapsed().as_secs_f64();
        record.sigma = report.sigma;
        record.iterations = report.iterations;
        record.kkt_res = report.kkt_res;
        record.distance = report.distance;
        if lp.dims.num_bins() <= ORACLE_CAP {
            let problem = DenseOTProblem::new(&job.mu1, &job.mu2)?;
            let (_, flows) = oracle::exact_reduced_flows(&problem)?;
            let x_ref = flows.to_concat();
            let (gap, feaserr) = solver::metrics(&state.x, &lp, &x_ref)?;
            record.gap = Some(gap);
            record.feaserr = Some(feaserr);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        record.error = Some(e.to_string());
    }
    record
}

/// Honors the `HOT_THREADS` env cap on top of the requested job count.
pub fn effective_jobs(requested: usize) -> usize {
    let cap = std::env::var("HOT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(usize::MAX);
    requested.max(1).min(cap)
}

/// Runs the whole grid with at most `jobs` solves in flight.
pub fn run_bench(spec: &BenchSpec, jobs: usize) -> Result<BenchReport> {
    let work = expand_jobs(spec)?;
    let njobs = effective_jobs(jobs).min(work.len().max(1));
    let queue = Mutex::new(work.iter().enumerate().collect::<Vec<_>>());
    let results = Mutex::new(vec![None; work.len()]);
    std::thread::scope(|scope| {
        for _ in 0..njobs {
            scope.spawn(|| loop {
                let item = queue.lock().unwrap().pop();
                let Some((idx, job)) = item else { break };
                let record = run_job(job, spec.tol, spec.max_iters);
                results.lock().unwrap()[idx] = Some(record);
            });
        }
    });
    let records: Vec<RunRecord> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job produces a record"))
        .collect();
    let aggregates = aggregate(&records);
    Ok(BenchReport {
        spec: spec.clone(),
        records,
        aggregates,
    })
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut cells: Vec<(SolverMode, usize)> = records
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| (r.mode, r.resolution))
        .collect();
    cells.sort_by_key(|&(m, r)| (m as usize, r));
    cells.dedup();
    cells
        .into_iter()
        .map(|(mode, resolution)| {
            let mut iters: Vec<f64> = Vec::new();
            let mut times: Vec<f64> = Vec::new();
            for r in records {
                if r.mode == mode && r.resolution == resolution && r.error.is_none() {
                    iters.push(r.iterations as f64);
                    times.push(r.wall_time);
                }
            }
            Aggregate {
                mode,
                resolution,
                runs: iters.len(),
                median_iterations: median(&mut iters),
                median_wall_time: median(&mut times),
            }
        })
        .collect()
}

/// Per-record CSV, one row per run.
pub fn write_records_csv<W: Write>(mut out: W, records: &[RunRecord]) -> Result<()> {
    writeln!(
        out,
        "instance,resolution,mode,sigma,iterations,wall_time,kkt_res,distance,gap,feaserr,error"
    )?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.16e},{:.16e},{},{},{}",
            r.instance,
            r.resolution,
            r.mode,
            r.sigma,
            r.iterations,
            r.wall_time,
            r.kkt_res,
            r.distance,
            opt(r.gap),
            opt(r.feaserr),
            r.error.clone().unwrap_or_default()
        )?;
    }
    Ok(())
}

/// Writes `records.csv` and `report.json` under the spec's output directory.
pub fn write_report(report: &BenchReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records_csv(
        BufWriter::new(File::create(dir.join("records.csv"))?),
        &report.records,
    )?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
    std::fs::write(dir.join("report.json"), json)?;
    Ok(())
}
