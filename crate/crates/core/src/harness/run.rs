//! Monte Carlo execution of a configured experiment.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::{
    ExperimentConfig, GraphConfig, InitialConfig, ObjectiveConfig, ScheduleConfig,
};
use super::trace::{format_value, Metric, MetricFamily, RunTrace};
use super::HarnessError;
use crate::graph::{
    generate_alternating_stars, generate_cycle_plus_random, DirectedGraph, GraphSequence,
};
use crate::objectives::{
    quadratic_estimation_preset, random_quadratic_preset, ridge_l1, NetworkObjective, NoiseModel,
};
use crate::optimizer::{
    conservative_p_from_min, min_consensus, sgp_step, theorem1_schedule, NetworkOracle,
    OptimizerError, OptimizerState, StepSchedule,
};
use crate::pushsum::{consensus_residual, stacked_l1};
use crate::rng::{derive_seed, substream, Domain};

/// A validated configuration with everything that is shared across runs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub objective: NetworkObjective,
    pub schedule: StepSchedule,
    pub tracked_nodes: Vec<usize>,
    metrics: HashSet<MetricFamily>,
    edge_list: Option<GraphSequence>,
}

/// Everything a batch produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub traces: Vec<RunTrace>,
    pub tracked_nodes: Vec<usize>,
    pub p: f64,
    pub minimizer: Vec<f64>,
}

impl ExperimentOutput {
    pub fn diverged_runs(&self) -> Vec<usize> {
        self.traces
            .iter()
            .filter(|t| t.diverged_at.is_some())
            .map(|t| t.run)
            .collect()
    }
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let n = config.n;
        let objective_seed = derive_seed(config.seed, &[Domain::Objective as u64]);
        let (bound, law) = config.objective.noise();
        let noise = NoiseModel::new(bound, law)?;
        let objective = match &config.objective {
            ObjectiveConfig::QuadraticEstimation { theta_hat, .. } => {
                quadratic_estimation_preset(n, objective_seed, *theta_hat)?.network
            }
            ObjectiveConfig::RandomQuadratic { dim, .. } => {
                random_quadratic_preset(n, *dim, objective_seed)?
            }
            ObjectiveConfig::RidgeL1 { dim, mu, .. } => {
                NetworkObjective::new(vec![ridge_l1(*mu, *dim)?; n])?
            }
        }
        .with_noise(noise);

        let edge_list = match &config.graph {
            GraphConfig::EdgeList { path } => {
                let path = config.resolve(path);
                let text =
                    std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                Some(GraphSequence::from_edge_list(&text, n)?)
            }
            _ => None,
        };

        let metrics: HashSet<MetricFamily> = match &config.metrics.enabled {
            Some(names) => names
                .iter()
                .filter_map(|s| MetricFamily::from_name(s))
                .collect(),
            None => MetricFamily::ALL.into_iter().collect(),
        };

        let tracked_nodes = if config.metrics.tracked_nodes >= n {
            (0..n).collect()
        } else {
            let mut rng = substream(config.seed, Domain::NodeSample, 0, 0);
            let mut picked =
                rand::seq::index::sample(&mut rng, n, config.metrics.tracked_nodes).into_vec();
            picked.sort_unstable();
            picked
        };

        let mut experiment = Self {
            config: config.clone(),
            objective,
            schedule: StepSchedule::new(1.0)?,
            tracked_nodes,
            metrics,
            edge_list,
        };
        experiment.schedule = experiment.build_schedule()?;
        Ok(experiment)
    }

    fn build_schedule(&self) -> Result<StepSchedule, HarnessError> {
        Ok(match &self.config.schedule {
            ScheduleConfig::Theorem1 => theorem1_schedule(&self.objective.mus())?,
            ScheduleConfig::Explicit { p } => StepSchedule::new(*p)?,
            ScheduleConfig::ConservativeMin { rounds } => {
                let seq = self.graph_for_run(0)?;
                let n = self.config.n;
                let b = seq.connectivity_by_construction().unwrap_or(n);
                let rounds = rounds.unwrap_or(n * b);
                let values = min_consensus(&self.objective.mus(), &seq, rounds);
                conservative_p_from_min(&values, n).map_err(|e| match e {
                    OptimizerError::ConsensusNotConverged { .. } => HarnessError::Config(format!(
                        "schedule.rounds: min-consensus did not converge in {rounds} rounds"
                    )),
                    other => other.into(),
                })?
            }
        })
    }

    /// Graph sequence used by run `run`; random generators get a per-run seed.
    pub fn graph_for_run(&self, run: usize) -> Result<GraphSequence, HarnessError> {
        let n = self.config.n;
        let seq = match &self.config.graph {
            GraphConfig::DirectedCycle => GraphSequence::fixed(DirectedGraph::directed_cycle(n)?)?,
            GraphConfig::Complete => GraphSequence::fixed(DirectedGraph::complete(n)?)?,
            GraphConfig::CyclePlusRandom => generate_cycle_plus_random(
                n,
                derive_seed(self.config.seed, &[Domain::Graph as u64, run as u64]),
            )?,
            GraphConfig::AlternatingStars { hub_a, hub_b } => {
                generate_alternating_stars(n, *hub_a, *hub_b)?
            }
            GraphConfig::EdgeList { .. } => self.edge_list.clone().expect("loaded in prepare"),
        };
        Ok(seq)
    }

    pub fn initial_state(&self, run: usize) -> DMatrix<f64> {
        let (n, d) = (self.config.n, self.objective.dim());
        match self.config.initial {
            InitialConfig::Zeros => DMatrix::zeros(n, d),
            InitialConfig::Gaussian => {
                let mut rng = substream(self.config.seed, Domain::InitialState, run as u64, 0);
                DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal))
            }
        }
    }

    fn enabled(&self, family: MetricFamily) -> bool {
        self.metrics.contains(&family)
    }

    /// Steps one run for the configured horizon, recording enabled metrics.
    pub fn run_one(&self, run: usize) -> Result<RunTrace, HarnessError> {
        let seq = self.graph_for_run(run)?;
        let oracle = NetworkOracle {
            objective: &self.objective,
            seed: derive_seed(
                self.config.seed,
                &[Domain::GradientNoise as u64, run as u64],
            ),
        };
        let mut state = OptimizerState::new(self.initial_state(run));
        let mut trace = RunTrace::new(run);
        if self.enabled(MetricFamily::X0L1) {
            trace.push(0, None, Metric::X0L1, stacked_l1(&state.pushsum.x));
        }
        if self.enabled(MetricFamily::MaxIterateNorm) {
            trace.push(
                0,
                None,
                Metric::MaxIterateNorm,
                max_row_norm(&state.pushsum.z),
            );
        }
        for t in 1..=self.config.horizon {
            let a = seq.mixing_at(t - 1);
            match sgp_step(&mut state, &a, &oracle, &self.schedule) {
                Ok(report) => {
                    self.record_step(&mut trace, &state, stacked_l1(&report.perturbation));
                }
                Err(OptimizerError::Diverged { t, .. }) => {
                    trace.push(t, None, Metric::Diverged, 1.0);
                    trace.diverged_at = Some(t);
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(trace)
    }

    fn record_step(&self, trace: &mut RunTrace, state: &OptimizerState, perturbation_l1: f64) {
        let t = state.t();
        let z_star = self.objective.minimizer();
        let scalar = self.objective.dim() == 1;
        if self.enabled(MetricFamily::ConsensusResidual) {
            trace.push(
                t,
                None,
                Metric::ConsensusResidual,
                consensus_residual(&state.pushsum),
            );
        }
        if self.enabled(MetricFamily::MaxIterateNorm) {
            trace.push(
                t,
                None,
                Metric::MaxIterateNorm,
                max_row_norm(&state.pushsum.z),
            );
        }
        if self.enabled(MetricFamily::PerturbationL1) {
            trace.push(t, None, Metric::PerturbationL1, perturbation_l1);
        }
        let spread = if self.enabled(MetricFamily::Theorem1Lhs) {
            self.objective
                .mus()
                .iter()
                .enumerate()
                .map(|(j, mu)| mu * (state.zhat_row(j) - z_star).norm_squared())
                .sum::<f64>()
        } else {
            0.0
        };
        for &i in &self.tracked_nodes {
            let node = Some(i);
            let z = state.z_row(i);
            let zhat = state.zhat_row(i);
            if scalar && self.enabled(MetricFamily::LnErrZhat) {
                trace.push(t, node, Metric::LnErrZhat, (zhat[0] - z_star[0]).abs().ln());
            }
            if scalar && self.enabled(MetricFamily::LnErrZ) {
                trace.push(t, node, Metric::LnErrZ, (z[0] - z_star[0]).abs().ln());
            }
            if self.enabled(MetricFamily::DistZ) {
                trace.push(t, node, Metric::DistZ, (&z - z_star).norm());
            }
            if self.enabled(MetricFamily::DistZhat) {
                trace.push(t, node, Metric::DistZhat, (&zhat - z_star).norm());
            }
            let gap = self.objective.gap(&zhat);
            if self.enabled(MetricFamily::GapZhat) {
                trace.push(t, node, Metric::GapZhat, gap);
            }
            if self.enabled(MetricFamily::Theorem1Lhs) {
                trace.push(t, node, Metric::Theorem1Lhs, gap + spread);
            }
            if self.enabled(MetricFamily::Zhat) {
                for (k, v) in zhat.iter().enumerate() {
                    trace.push(t, node, Metric::Zhat(k as u16), *v);
                }
            }
        }
    }

    /// Runs every Monte Carlo replicate (in parallel) and returns them in run order.
    pub fn run(&self) -> Result<ExperimentOutput, HarnessError> {
        let traces = (0..self.config.runs)
            .into_par_iter()
            .map(|run| self.run_one(run))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExperimentOutput {
            traces,
            tracked_nodes: self.tracked_nodes.clone(),
            p: self.schedule.p(),
            minimizer: self.objective.minimizer().iter().copied().collect(),
        })
    }
}

fn max_row_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// Validates `cfg` and executes all of its runs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    Experiment::prepare(cfg)?.run()
}

/// Monte Carlo mean and standard error of one metric per `(t, node)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub node: Option<usize>,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

/// Arithmetic mean over runs of `metric` at every `(t, node)`.
pub fn aggregate(traces: &[RunTrace], metric: Metric) -> Vec<SummaryRow> {
    let mut groups: std::collections::BTreeMap<(usize, Option<usize>), Vec<f64>> =
        Default::default();
    for tr in traces {
        for r in tr.series(metric, None) {
            groups.entry((r.t, r.node)).or_default().push(r.value);
        }
    }
    groups
        .into_iter()
        .map(|((t, node), values)| {
            let (mean, se) = mean_and_se(&values);
            SummaryRow {
                t,
                node,
                mean,
                se,
                count: values.len(),
            }
        })
        .collect()
}

/// Writes `t,node,metric,mean,se,count` for every metric in `traces`.
pub fn write_summary_csv<W: std::io::Write>(
    traces: &[RunTrace],
    mut out: W,
) -> std::io::Result<()> {
    let mut metrics: Vec<Metric> = Vec::new();
    for tr in traces {
        for r in &tr.records {
            if !metrics.contains(&r.metric) {
                metrics.push(r.metric);
            }
        }
    }
    metrics.sort_by(|a, b| a.name().cmp(&b.name()));
    let mut rows: Vec<(usize, Option<usize>, Metric, SummaryRow)> = metrics
        .into_iter()
        .flat_map(|m| {
            aggregate(traces, m)
                .into_iter()
                .map(move |row| (row.t, row.node, m, row))
        })
        .collect();
    rows.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then_with(|| a.2.name().cmp(&b.2.name()))
    });
    writeln!(out, "t,node,metric,mean,se,count")?;
    for (t, node, metric, row) in rows {
        let node = node.map(|i| i.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{t},{node},{metric},{},{},{}",
            format_value(row.mean),
            format_value(row.se),
            row.count
        )?;
    }
    Ok(())
}

/// Sample mean and standard error of the mean (zero for one sample).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Zhat row of node `i` recovered from persisted `zhat_k` records.
pub fn persisted_zhat(trace: &RunTrace, t: usize, node: usize, dim: usize) -> Option<DVector<f64>> {
    let coords: Option<Vec<f64>> = (0..dim)
        .map(|k| trace.value(t, Some(node), Metric::Zhat(k as u16)))
        .collect();
    coords.map(DVector::from_vec)
}
