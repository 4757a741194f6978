//! Stochastic gradient-push: push-sum mixing followed by a local noisy
//! gradient step at every node, plus the `t`-weighted running average
//! `zhat_i(t) = sum_{s<=t} (s-1) z_i(s) / S(t)` with `S(t) = t(t-1)/2`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{GraphSequence, MixingMatrix};
use crate::objectives::{GradientSample, NetworkObjective};
use crate::pushsum::{PushSumError, PushSumState};
use crate::rng::{substream, Domain};

/// Any coordinate beyond this magnitude aborts the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Relative slack added to the conservative step constant.
pub const CONSERVATIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    PushSum(#[from] PushSumError),
    #[error("iterates diverged at step {t} (node {node})")]
    Diverged { t: usize, node: usize },
    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),
    #[error("min-consensus has not converged: values range over [{min}, {max}]")]
    ConsensusNotConverged { min: f64, max: f64 },
    #[error("weighted averaging is defined for t >= 1")]
    ZeroStep,
    #[error("oracle dimension {got} does not match state dimension {expected}")]
    OracleDimension { expected: usize, got: usize },
}

/// `alpha(t) = p / t` for `t >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    p: f64,
}

impl StepSchedule {
    pub fn new(p: f64) -> Result<Self, OptimizerError> {
        if !(p.is_finite() && p > 0.0) {
            return Err(OptimizerError::InvalidSchedule(format!(
                "p must be positive and finite, got {p}"
            )));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// # Panics
    /// At `t = 0`, where the schedule is undefined.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t >= 1, "step sizes start at t = 1");
        self.p / t as f64
    }
}

/// Smallest `p` with `p * mean(mu) >= 4`, i.e. `p = 4n / sum(mu)`.
pub fn theorem1_schedule(mus: &[f64]) -> Result<StepSchedule, OptimizerError> {
    if mus.is_empty() {
        return Err(OptimizerError::InvalidSchedule("no moduli given".into()));
    }
    if let Some(bad) = mus.iter().find(|&&m| !(m > 0.0)) {
        return Err(OptimizerError::InvalidSchedule(format!(
            "modulus {bad} is not positive"
        )));
    }
    StepSchedule::new(4.0 * mus.len() as f64 / mus.iter().sum::<f64>())
}

/// Each round every node replaces its value by the minimum over its
/// in-neighbours at that step (itself included). Round `r` uses `G(r)`.
pub fn min_consensus(values: &[f64], seq: &GraphSequence, steps: usize) -> Vec<f64> {
    assert_eq!(values.len(), seq.n(), "one value per node");
    let mut current = values.to_vec();
    for round in 0..steps {
        let g = seq.graph_at(round);
        current = (0..g.n())
            .map(|i| {
                g.in_neighbors(i)
                    .iter()
                    .map(|&j| current[j])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
    }
    current
}

/// `p = 4n / min(mu) * (1 + 1e-9)`, so that `p * min(mu) / n > 4` strictly.
/// Expects the output of a converged [`min_consensus`].
pub fn conservative_p_from_min(
    consensus: &[f64],
    n: usize,
) -> Result<StepSchedule, OptimizerError> {
    let min = consensus.iter().copied().fold(f64::INFINITY, f64::min);
    let max = consensus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if consensus.is_empty() || min != max {
        return Err(OptimizerError::ConsensusNotConverged { min, max });
    }
    if !(min > 0.0) {
        return Err(OptimizerError::InvalidSchedule(format!(
            "minimum modulus {min} is not positive"
        )));
    }
    StepSchedule::new(4.0 * n as f64 / min * (1.0 + CONSERVATIVE_SLACK))
}

/// `S(t) = t(t-1)/2`.
pub fn averaging_weight(t: usize) -> f64 {
    let t = t as f64;
    t * (t - 1.0) / 2.0
}

/// `zhat(t+1) = (t z(t+1) + S(t) zhat(t)) / S(t+1)`.
pub fn update_weighted_average(
    zhat: &DVector<f64>,
    z_new: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>, OptimizerError> {
    if t == 0 {
        return Err(OptimizerError::ZeroStep);
    }
    Ok((z_new * t as f64 + zhat * averaging_weight(t)) / averaging_weight(t + 1))
}

/// Source of per-node gradient samples.
pub trait GradientOracle: Sync {
    fn dim(&self) -> usize;

    /// Sample for `node` at `point` during step `t`; repeated calls with
    /// the same arguments return the same sample.
    fn sample(&self, node: usize, point: &DVector<f64>, t: usize) -> GradientSample;
}

/// Noisy gradients of a [`NetworkObjective`], with the noise of `(node, t)`
/// drawn from its own substream of `seed`.
#[derive(Debug, Clone, Copy)]
pub struct NetworkOracle<'a> {
    pub objective: &'a NetworkObjective,
    pub seed: u64,
}

impl GradientOracle for NetworkOracle<'_> {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn sample(&self, node: usize, point: &DVector<f64>, t: usize) -> GradientSample {
        let spec = self.objective.node(node);
        if spec.noise.bound == 0.0 {
            let true_grad = spec.gradient(point);
            let noise = DVector::zeros(point.len());
            return GradientSample {
                value: true_grad.clone(),
                true_grad,
                noise,
            };
        }
        let mut rng = substream(self.seed, Domain::GradientNoise, node as u64, t as u64);
        self.objective.sample_gradient(node, point, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub pushsum: PushSumState,
    /// Row `i` holds `zhat_i(max(t, 1))`.
    pub zhat: DMatrix<f64>,
}

impl OptimizerState {
    /// `y(0) = 1`, `z(0) = x(0)` and `zhat(1) = z(0)`.
    pub fn new(x0: DMatrix<f64>) -> Self {
        let pushsum = PushSumState::new(x0);
        let zhat = pushsum.z.clone();
        Self { pushsum, zhat }
    }

    pub fn t(&self) -> usize {
        self.pushsum.t
    }

    pub fn n(&self) -> usize {
        self.pushsum.n()
    }

    pub fn dim(&self) -> usize {
        self.pushsum.dim()
    }

    /// `S(max(t, 1))`, the normaliser of the current average.
    pub fn averaging_weight(&self) -> f64 {
        averaging_weight(self.t().max(1))
    }

    pub fn z_row(&self, i: usize) -> DVector<f64> {
        self.pushsum.z.row(i).transpose()
    }

    pub fn zhat_row(&self, i: usize) -> DVector<f64> {
        self.zhat.row(i).transpose()
    }
}

/// What one [`sgp_step`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Step index after the update.
    pub t: usize,
    pub alpha: f64,
    /// Sampled gradients `g_i(t)`, one row per node.
    pub gradients: DMatrix<f64>,
    /// Gradient noise, one row per node.
    pub noise: DMatrix<f64>,
    /// Applied perturbation `-alpha(t) g_i(t)`.
    pub perturbation: DMatrix<f64>,
}

/// Advances `state` from `t` to `t + 1`:
/// `w = A x`, `y = A y`, `z = w / y`, `x = w - alpha(t+1) g(z)`, then the
/// weighted average. Every node's oracle is queried exactly once.
pub fn sgp_step<O: GradientOracle + ?Sized>(
    state: &mut OptimizerState,
    a: &MixingMatrix,
    oracle: &O,
    schedule: &StepSchedule,
) -> Result<StepReport, OptimizerError> {
    let (n, d) = (state.n(), state.dim());
    if oracle.dim() != d {
        return Err(OptimizerError::OracleDimension {
            expected: d,
            got: oracle.dim(),
        });
    }
    state.pushsum.mix(a)?;
    let t = state.pushsum.t;
    let alpha = schedule.alpha(t);

    let mut gradients = DMatrix::zeros(n, d);
    let mut noise = DMatrix::zeros(n, d);
    for i in 0..n {
        let sample = oracle.sample(i, &state.z_row(i), t);
        gradients.set_row(i, &sample.value.transpose());
        noise.set_row(i, &sample.noise.transpose());
    }
    let perturbation = &gradients * -alpha;
    state.pushsum.perturb(&perturbation)?;
    check_finite(&state.pushsum, t)?;

    if t >= 2 {
        let prev = t - 1;
        state.zhat = (&state.pushsum.z * prev as f64 + &state.zhat * averaging_weight(prev))
            / averaging_weight(t);
    }
    Ok(StepReport {
        t,
        alpha,
        gradients,
        noise,
        perturbation,
    })
}

fn check_finite(state: &PushSumState, t: usize) -> Result<(), OptimizerError> {
    let bad = |m: &DMatrix<f64>| {
        m.row_iter()
            .position(|row| row.iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD)))
    };
    match bad(&state.x).or_else(|| bad(&state.z)) {
        Some(node) => Err(OptimizerError::Diverged { t, node }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_mixing_matrix, DirectedGraph};
    use crate::objectives::EstimationPreset;

    struct Zero(usize);

    impl GradientOracle for Zero {
        fn dim(&self) -> usize {
            self.0
        }
        fn sample(&self, _: usize, point: &DVector<f64>, _: usize) -> GradientSample {
            let z = DVector::zeros(point.len());
            GradientSample {
                value: z.clone(),
                true_grad: z.clone(),
                noise: z,
            }
        }
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(theorem1_schedule(&[4.0]).unwrap().p(), 1.0);
        assert_eq!(theorem1_schedule(&[1.0; 7]).unwrap().p(), 4.0);
        let s = theorem1_schedule(&[4.0]).unwrap();
        assert_eq!(s.alpha(1), 1.0);
        assert_eq!(s.alpha(4), 0.25);
        assert!(theorem1_schedule(&[1.0, 0.0]).is_err());
        assert!(theorem1_schedule(&[1.0, -2.0]).is_err());
        assert!(StepSchedule::new(f64::INFINITY).is_err());
    }

    #[test]
    fn estimation_schedule_matches_weight_formula() {
        let preset =
            EstimationPreset::from_parts(vec![0.2, 0.9, 0.4], vec![0.0, 1.0, 2.0]).unwrap();
        let p = theorem1_schedule(&preset.network.mus()).unwrap().p();
        let expected = 2.0 * 3.0 / (0.2 + 0.9 + 0.4);
        assert!((p - expected).abs() < 1e-14);
    }

    #[test]
    fn min_consensus_examples() {
        let cycle = GraphSequence::fixed(DirectedGraph::directed_cycle(3).unwrap()).unwrap();
        assert_eq!(min_consensus(&[2.0, 2.0, 2.0], &cycle, 4), vec![2.0; 3]);
        assert_eq!(min_consensus(&[3.0, 1.0, 2.0], &cycle, 3), vec![1.0; 3]);
        let ring = GraphSequence::fixed(DirectedGraph::directed_cycle(6).unwrap()).unwrap();
        let values = [5.0, 4.0, 9.0, 0.5, 7.0, 3.0];
        assert_eq!(min_consensus(&values, &ring, 6), vec![0.5; 6]);
        assert_ne!(min_consensus(&values, &ring, 1), vec![0.5; 6]);
    }

    #[test]
    fn conservative_schedule() {
        let s = conservative_p_from_min(&[4.0], 1).unwrap();
        assert!((s.p() - 1.0).abs() < 1e-8 && s.p() * 4.0 > 4.0);
        let s = conservative_p_from_min(&[2.0; 10], 10).unwrap();
        assert!((s.p() - 20.0).abs() < 1e-6 && s.p() * 2.0 / 10.0 > 4.0);
        // with equal moduli the min rule is n times stricter than the mean rule
        let equal = [0.7; 5];
        let cons = conservative_p_from_min(&equal, 5).unwrap().p();
        let plain = theorem1_schedule(&equal).unwrap().p();
        assert!((cons / (5.0 * plain) - 1.0).abs() <= 2e-9);
        let single = conservative_p_from_min(&[0.7], 1).unwrap().p();
        assert!((single / theorem1_schedule(&[0.7]).unwrap().p() - 1.0).abs() <= 2e-9);
        assert!(matches!(
            conservative_p_from_min(&[1.0, 2.0], 2),
            Err(OptimizerError::ConsensusNotConverged { .. })
        ));
    }

    #[test]
    fn weighted_average_examples() {
        let z2 = DVector::from_column_slice(&[4.0, -1.0]);
        let zhat1 = DVector::from_column_slice(&[100.0, 100.0]);
        assert_eq!(update_weighted_average(&zhat1, &z2, 1).unwrap(), z2);
        let z3 = DVector::from_column_slice(&[1.0, 2.0]);
        let zhat3 = update_weighted_average(&z2, &z3, 2).unwrap();
        let expected = (&z3 * 2.0 + &z2) / 3.0;
        assert!((zhat3 - expected).amax() < 1e-15);
        assert_eq!(
            update_weighted_average(&z2, &z3, 0).unwrap_err(),
            OptimizerError::ZeroStep
        );
        let v = DVector::from_column_slice(&[0.3]);
        let mut zhat = v.clone();
        for t in 1..50 {
            zhat = update_weighted_average(&zhat, &v, t).unwrap();
            assert!((zhat[0] - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_step_is_plain_pushsum() {
        let a = build_mixing_matrix(
            DirectedGraph::from_edges(3, [(0, 1), (1, 2), (2, 0), (0, 2)]).unwrap(),
        )
        .unwrap();
        let x0 = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -3.0, 0.5, 4.0, 0.0]);
        let mut opt = OptimizerState::new(x0.clone());
        let mut plain = PushSumState::new(x0);
        let schedule = StepSchedule::new(2.0).unwrap();
        for _ in 0..10 {
            sgp_step(&mut opt, &a, &Zero(2), &schedule).unwrap();
            crate::pushsum::pushsum_step(&mut plain, &a, &DMatrix::zeros(3, 2)).unwrap();
            assert_eq!(opt.pushsum, plain);
        }
    }

    #[test]
    fn single_node_is_gradient_descent() {
        // f(z) = mu/2 (z - a)^2 as weighted_scalar(mu/2, a)
        let (mu, target) = (4.0, 1.5);
        let preset = EstimationPreset::from_parts(vec![mu / 2.0], vec![target]).unwrap();
        let oracle = NetworkOracle {
            objective: &preset.network,
            seed: 0,
        };
        let schedule = theorem1_schedule(&preset.network.mus()).unwrap();
        let a = build_mixing_matrix(DirectedGraph::from_edges(1, []).unwrap()).unwrap();
        let mut state = OptimizerState::new(DMatrix::from_element(1, 1, -3.0));
        let mut reference = -3.0;
        for t in 1..=200 {
            sgp_step(&mut state, &a, &oracle, &schedule).unwrap();
            reference -= schedule.alpha(t) * mu * (reference - target);
            assert!((state.pushsum.x[(0, 0)] - reference).abs() < 1e-12);
        }
        assert!((state.pushsum.z[(0, 0)] - target).abs() < 1e-9);
    }

    #[test]
    fn two_node_complete_graph_reaches_weighted_mean() {
        let preset = EstimationPreset::from_parts(vec![0.25, 0.75], vec![-2.0, 2.0]).unwrap();
        let theta = (0.25 * -2.0 + 0.75 * 2.0) / 1.0;
        let oracle = NetworkOracle {
            objective: &preset.network,
            seed: 0,
        };
        let schedule = theorem1_schedule(&preset.network.mus()).unwrap();
        let a = build_mixing_matrix(DirectedGraph::complete(2).unwrap()).unwrap();
        let mut state = OptimizerState::new(DMatrix::from_column_slice(2, 1, &[5.0, -1.0]));
        for _ in 0..200 {
            sgp_step(&mut state, &a, &oracle, &schedule).unwrap();
        }
        assert!(state.pushsum.z.iter().all(|z| (z - theta).abs() < 1e-6));
        assert!(state.zhat.iter().all(|z| (z - theta).abs() < 1e-3));
    }

    #[test]
    fn divergence_guard_fires() {
        let preset = EstimationPreset::from_parts(vec![1.0], vec![0.0]).unwrap();
        let oracle = NetworkOracle {
            objective: &preset.network,
            seed: 0,
        };
        // alpha * mu far above 2 makes every step expand the error
        let schedule = StepSchedule::new(1e4).unwrap();
        let a = build_mixing_matrix(DirectedGraph::from_edges(1, []).unwrap()).unwrap();
        let mut state = OptimizerState::new(DMatrix::from_element(1, 1, 1.0));
        let err = (0..100)
            .find_map(|_| sgp_step(&mut state, &a, &oracle, &schedule).err())
            .expect("must diverge");
        assert!(matches!(err, OptimizerError::Diverged { node: 0, .. }));
    }
}
