use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use gradpush::graph::verify_b_strong_connectivity;
use gradpush::harness::bound::{theorem1_bound_report, BoundInputs};
use gradpush::harness::fit::rate_fit;
use gradpush::harness::run::{write_summary_csv, Experiment};
use gradpush::harness::trace::{emit_csv, read_csv, Metric};
use gradpush::harness::{ExperimentConfig, HarnessError};
use gradpush::spectral::spectral_constants;

#[derive(Parser)]
#[command(
    name = "gradpush",
    version,
    about = "Stochastic gradient-push simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write trace.csv, summary.csv and manifest.toml.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Check B-strong connectivity of the configured graph and print its constants.
    VerifyGraph {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "B")]
        b: usize,
        #[arg(long)]
        horizon: usize,
        /// Run whose graph sequence is checked.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Compare a trace with the evaluated error bound.
    Bound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long = "D")]
        d: f64,
        /// Steps at which to compare (default: 10, 50 and horizon - 1).
        #[arg(long, value_delimiter = ',')]
        tau: Vec<usize>,
        /// Connectivity window (default: the generator's own).
        #[arg(long = "B")]
        b: Option<usize>,
    },
    /// Log-log slope of a metric's Monte Carlo mean.
    Fit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
        #[arg(long)]
        node: Option<usize>,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    p: f64,
    tracked_nodes: &'a [usize],
    minimizer: &'a [f64],
    diverged_runs: Vec<usize>,
    config: &'a ExperimentConfig,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, HarnessError> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            runs,
            horizon,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.runs = runs.unwrap_or(cfg.runs);
            cfg.horizon = horizon.unwrap_or(cfg.horizon);
            let out = out
                .or_else(|| cfg.output.as_ref().map(|p| cfg.resolve(p)))
                .unwrap_or_else(|| PathBuf::from("gradpush-out"));
            run(&cfg, &out)
        }
        Command::VerifyGraph {
            config,
            b,
            horizon,
            run,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let experiment = Experiment::prepare(&cfg)?;
            let seq = experiment.graph_for_run(run)?;
            let check = verify_b_strong_connectivity(&seq, b, horizon)?;
            println!("windows_checked = {}", check.windows_checked);
            if let Some(w) = check.first_failure {
                println!("strongly_connected = false");
                println!("first_failing_window = {w}");
                return Ok(1);
            }
            println!("strongly_connected = true");
            match spectral_constants(&seq, b, horizon) {
                Ok(c) => println!(
                    "delta = {:e}\nlambda = {:.17}\nmethod = {:?}",
                    c.delta, c.lambda, c.method
                ),
                Err(e) => println!("constants unavailable: {e}"),
            }
            Ok(0)
        }
        Command::Bound {
            config,
            trace,
            d,
            tau,
            b,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let experiment = Experiment::prepare(&cfg)?;
            let traces = read_csv(&trace)?;
            let seq = experiment.graph_for_run(0)?;
            let b = b
                .or_else(|| seq.connectivity_by_construction())
                .ok_or_else(|| HarnessError::Config("--B is required for this graph".into()))?;
            let constants = spectral_constants(&seq, b, cfg.horizon)?;
            let inputs = BoundInputs::from_objective(
                &experiment.objective,
                d,
                experiment.schedule.p(),
                constants,
            );
            let mut taus = if tau.is_empty() {
                vec![10, 50, cfg.horizon - 1]
            } else {
                tau
            };
            taus.retain(|&t| t <= cfg.horizon);
            taus.sort_unstable();
            taus.dedup();
            let report = theorem1_bound_report(&traces, &inputs, &taus)?;
            println!(
                "D = {}  L = {}  max_B = {}  p = {}  delta = {:e}  lambda = {}  q2 = {}  x0_l1 = {}",
                inputs.radius,
                inputs.total_gradient_bound(),
                inputs.perturbation_bounds().into_iter().fold(0.0, f64::max),
                inputs.p,
                constants.delta,
                constants.lambda,
                inputs.squared_sample_bound(),
                report.x0_l1_sum,
            );
            println!("tau,node,lhs_mean,lhs_se,lhs_mean_plus_2se,rhs_initial,rhs_consensus,rhs_optimization,rhs_total,holds");
            for row in &report.rows {
                println!(
                    "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                    row.tau,
                    row.worst_node,
                    row.lhs_mean,
                    row.lhs_se,
                    row.lhs_conservative(),
                    row.rhs.initial,
                    row.rhs.consensus,
                    row.rhs.optimization,
                    row.rhs.total(),
                    row.holds()
                );
            }
            Ok(if report.all_hold() { 0 } else { 1 })
        }
        Command::Fit {
            trace,
            metric,
            from,
            to,
            node,
        } => {
            let metric: Metric = metric
                .parse()
                .map_err(|_| HarnessError::Config(format!("metric: unknown name `{metric}`")))?;
            let traces = read_csv(&trace)?;
            let fit = rate_fit(&traces, metric, from, to, node)?;
            println!(
                "slope = {}\nslope_se = {}\nintercept = {}\npoints = {}",
                fit.slope, fit.slope_se, fit.intercept, fit.points
            );
            Ok(0)
        }
    }
}

fn run(cfg: &ExperimentConfig, out: &Path) -> Result<u8, HarnessError> {
    let experiment = Experiment::prepare(cfg)?;
    let output = experiment.run()?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    emit_csv(&output.traces, &out.join("trace.csv"))?;

    let summary = out.join("summary.csv");
    let file = File::create(&summary).map_err(|e| HarnessError::io(&summary, e))?;
    write_summary_csv(&output.traces, BufWriter::new(file))
        .map_err(|e| HarnessError::io(&summary, e))?;

    let diverged = output.diverged_runs();
    let manifest = Manifest {
        p: output.p,
        tracked_nodes: &output.tracked_nodes,
        minimizer: &output.minimizer,
        diverged_runs: diverged.clone(),
        config: cfg,
    };
    let text =
        toml::to_string(&manifest).map_err(|e| HarnessError::Config(format!("manifest: {e}")))?;
    let path = out.join("manifest.toml");
    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;

    println!("wrote {} runs to {}", output.traces.len(), out.display());
    if diverged.is_empty() {
        Ok(0)
    } else {
        eprintln!("diverged runs: {diverged:?}");
        Ok(2)
    }
}
