//! `hot` — transport distances between 2D histograms.
//!
//! Machine-readable JSON goes to stdout; log lines go to stderr. Exit codes:
//! 0 converged, 1 input/config error, 2 iteration limit, 3 plan repair
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hot::{
    bench, color, grid, io as hio, plan,
    solver::{self, SolverMode, Termination},
    Error, Result, SolverConfig,
};

#[derive(Parser)]
#[command(name = "hot", about = "Optimal transport distances on 2D grids", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SolverFlags {
    /// Penalty parameter (default: data-scaled).
    #[arg(long)]
    sigma: Option<f64>,
    /// Relative KKT stopping tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
    /// Iteration rule: halpern or admm.
    #[arg(long, default_value = "halpern")]
    mode: SolverMode,
    /// Relaxation factor for admm mode.
    #[arg(long, default_value_t = 1.7)]
    rho: f64,
    /// Write a per-iteration trace CSV to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl SolverFlags {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            sigma: self.sigma,
            tol: self.tol,
            max_iters: self.max_iters,
            mode: self.mode,
            rho: self.rho,
            // amortize the residual check; it costs about half a step
            check_every: 25,
            trace: self.trace.is_some(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Transport distance between two histograms.
    Distance {
        /// Histogram: .csv, .pgm/.png, or synth: spec.
        img1: String,
        img2: String,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Solve and export the sparse transport plan.
    Plan {
        img1: String,
        img2: String,
        /// Output path for the plan triplets.
        #[arg(long)]
        out: PathBuf,
        /// Write the binary triplet format instead of CSV.
        #[arg(long)]
        binary: bool,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Color transfer between two RGB images.
    Transfer {
        src: String,
        tgt: String,
        out: PathBuf,
        /// Chroma bins per axis.
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Run a benchmark spec (JSON) and write CSV + JSON reports.
    Bench {
        spec: PathBuf,
        /// Parallel solves (capped by HOT_THREADS).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn solve_pair(
    img1: &str,
    img2: &str,
    flags: &SolverFlags,
) -> Result<(grid::ReducedLP, solver::SolveReport, solver::PrimalDualState)> {
    let mu1 = hio::load_histogram(img1)?;
    let mu2 = hio::load_histogram(img2)?;
    let lp = grid::ReducedLP::new(&mu1, &mu2)?;
    eprintln!(
        "hot: {}x{} grid, {} variables, mode {}",
        lp.dims.m,
        lp.dims.n,
        lp.dims.num_vars(),
        flags.mode
    );
    let (report, state) = solver::solve(&lp, &flags.config())?;
    if let (Some(path), Some(trace)) = (&flags.trace, &report.trace) {
        hio::write_trace_file(path, trace)?;
        eprintln!("hot: trace written to {}", path.display());
    }
    Ok((lp, report, state))
}

fn exit_for(term: Termination) -> ExitCode {
    match term {
        Termination::Tolerance => ExitCode::SUCCESS,
        Termination::MaxIters => ExitCode::from(2),
    }
}

fn cmd_distance(img1: &str, img2: &str, flags: &SolverFlags) -> Result<ExitCode> {
    let (_, report, _) = solve_pair(img1, img2, flags)?;
    println!(
        "{}",
        json!({
            "distance": report.distance,
            "iterations": report.iterations,
            "kkt_res": report.kkt_res,
            "sigma": report.sigma,
            "wall_time": report.wall_time,
            "terminated_by": report.terminated_by,
        })
    );
    Ok(exit_for(report.terminated_by))
}

fn cmd_plan(
    img1: &str,
    img2: &str,
    out: &PathBuf,
    binary: bool,
    flags: &SolverFlags,
) -> Result<ExitCode> {
    let (lp, report, state) = solve_pair(img1, img2, flags)?;
    let flows = grid::FlowPair::from_concat(lp.dims, &state.x)?;
    // relative stopping test: absolute violations scale with the denominators
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = 1.0 + norm(&state.x) + norm(&state.z);
    let tol = report.kkt_res.max(flags.tol) * scale;
    let (clean, repair) = plan::sanitize_flows(&flows, lp.dims, tol)?;
    let sparse = plan::recover_plan(&clean, lp.dims, 100.0 * tol)?;
    let file = std::io::BufWriter::new(std::fs::File::create(out)?);
    if binary {
        plan::write_plan_binary(&sparse, file)?;
    } else {
        plan::write_plan_csv(&sparse, file)?;
    }
    let cost = plan::plan_cost(&sparse);
    let row = sparse.row_marginals();
    let col = sparse.col_marginals();
    let resid = |marg: &[f64], hist: &[f64]| -> f64 {
        marg.iter()
            .zip(hist)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let mu1 = hio::load_histogram(img1)?;
    let mu2 = hio::load_histogram(img2)?;
    println!(
        "{}",
        json!({
            "plan_cost": cost,
            "entries": sparse.entries.len(),
            "row_marginal_resid": resid(&row, mu1.mass()),
            "col_marginal_resid": resid(&col, mu2.mass()),
            "repair_magnitude": repair.magnitude(),
            "iterations": report.iterations,
            "kkt_res": report.kkt_res,
            "out": out,
        })
    );
    Ok(exit_for(report.terminated_by))
}

fn cmd_transfer(
    src: &str,
    tgt: &str,
    out: &PathBuf,
    bins: usize,
    flags: &SolverFlags,
) -> Result<ExitCode> {
    let src_img = hio::load_rgb(src)?;
    let tgt_img = hio::load_rgb(tgt)?;
    eprintln!(
        "hot: transfer {}x{} <- {}x{}, {bins}x{bins} chroma bins",
        src_img.width(),
        src_img.height(),
        tgt_img.width(),
        tgt_img.height()
    );
    let start = std::time::Instant::now();
    let result = color::transfer(&src_img, &tgt_img, bins, bins, &flags.config())?;
    result.save(out)?;
    println!(
        "{}",
        json!({
            "out": out,
            "bins": bins,
            "wall_time": start.elapsed().as_secs_f64(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(spec_path: &PathBuf, jobs: usize) -> Result<ExitCode> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec: bench::BenchSpec =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("bench spec: {e}")))?;
    eprintln!("hot: bench with {} parallel solves", bench::effective_jobs(jobs));
    let report = bench::run_bench(&spec, jobs)?;
    bench::write_report(&report, &spec.output)?;
    for record in report.records.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "hot: instance {} ({}) failed: {}",
            record.instance,
            record.mode,
            record.error.as_deref().unwrap_or("")
        );
    }
    println!(
        "{}",
        json!({
            "records": report.records.len(),
            "failures": report.records.iter().filter(|r| r.error.is_some()).count(),
            "aggregates": report.aggregates,
            "output": spec.output,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Distance { img1, img2, flags } => cmd_distance(img1, img2, flags),
        Command::Plan {
            img1,
            img2,
            out,
            binary,
            flags,
        } => cmd_plan(img1, img2, out, *binary, flags),
        Command::Transfer {
            src,
            tgt,
            out,
            bins,
            flags,
        } => cmd_transfer(src, tgt, out, *bins, flags),
        Command::Bench { spec, jobs } => cmd_bench(spec, *jobs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("hot: error: {e}");
            match e {
                Error::RepairTooLarge { .. } | Error::FlowImbalance { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
