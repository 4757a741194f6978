//! Perturbed push-sum over column-stochastic mixing, for vector node values.
//!
//! Each step mixes values and weights, `w = A x` and `y = A y`, forms the
//! ratio estimates `z_i = w_i / y_i`, and then sets `x = w + eps` for an
//! externally supplied perturbation `eps`. The scalar protocol is `d = 1`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::MixingMatrix;
use crate::spectral::SpectralConstants;

/// Smallest weight accepted before the ratio estimates are considered lost.
pub const WEIGHT_UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum PushSumError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    Dimension {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("weight of node {node} underflowed to {value:e}")]
    WeightUnderflow { node: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushSumState {
    /// Node values, one row per node.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Output of the most recent mixing step (`x` itself before any step).
    pub w: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub t: usize,
}

impl PushSumState {
    /// Starts from `x(0)` with unit weights, so `z(0) = x(0)`.
    pub fn new(x0: DMatrix<f64>) -> Self {
        let n = x0.nrows();
        Self {
            y: DVector::from_element(n, 1.0),
            w: x0.clone(),
            z: x0.clone(),
            x: x0,
            t: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// First half of a step: `w <- A x`, `y <- A y`, `z <- w / y`, `t += 1`.
    /// `x` is left untouched until [`PushSumState::perturb`].
    pub fn mix(&mut self, a: &MixingMatrix) -> Result<(), PushSumError> {
        if a.n() != self.n() {
            return Err(PushSumError::Dimension {
                expected: (self.n(), self.dim()),
                got: (a.n(), self.dim()),
            });
        }
        let w = a.apply(&self.x);
        let y = a.apply_vector(&self.y);
        if let Some((node, &value)) = y
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= WEIGHT_UNDERFLOW))
        {
            return Err(PushSumError::WeightUnderflow { node, value });
        }
        let mut z = w.clone();
        for (i, mut row) in z.row_iter_mut().enumerate() {
            row /= y[i];
        }
        self.w = w;
        self.y = y;
        self.z = z;
        self.t += 1;
        Ok(())
    }

    /// Second half of a step: `x <- w + eps`.
    pub fn perturb(&mut self, eps: &DMatrix<f64>) -> Result<(), PushSumError> {
        if eps.shape() != self.w.shape() {
            return Err(PushSumError::Dimension {
                expected: self.w.shape(),
                got: eps.shape(),
            });
        }
        self.x = &self.w + eps;
        Ok(())
    }

    /// Average of the node values that fed the latest mixing step.
    ///
    /// Column stochasticity makes `sum_i w_i(t+1) = sum_i x_i(t)`.
    pub fn mixed_average(&self) -> DVector<f64> {
        self.w.row_sum().transpose() / self.n() as f64
    }

    pub fn x_average(&self) -> DVector<f64> {
        self.x.row_sum().transpose() / self.n() as f64
    }
}

/// One perturbed push-sum step.
pub fn pushsum_step(
    state: &mut PushSumState,
    a: &MixingMatrix,
    perturbation: &DMatrix<f64>,
) -> Result<(), PushSumError> {
    if perturbation.shape() != state.x.shape() {
        return Err(PushSumError::Dimension {
            expected: state.x.shape(),
            got: perturbation.shape(),
        });
    }
    state.mix(a)?;
    state.perturb(perturbation)
}

/// `max_i || z_i(t) - (1/n) sum_j x_j(t-1) ||`, the distance of every ratio
/// estimate from the network average it is tracking.
///
/// Before any step this compares `z(0) = x(0)` with the average of `x(0)`.
pub fn consensus_residual(state: &PushSumState) -> f64 {
    let avg = state.mixed_average();
    state
        .z
        .row_iter()
        .map(|row| (row.transpose() - &avg).norm())
        .fold(0.0, f64::max)
}

/// Entrywise 1-norm of a stack of node vectors, `sum_j ||v_j||_1`.
pub fn stacked_l1(v: &DMatrix<f64>) -> f64 {
    v.iter().map(|e| e.abs()).sum()
}

/// `(8/delta) (lambda^t ||x(0)||_1 + sum_{s=1..t} lambda^(t-s) ||eps(s)||_1)`.
///
/// `perturb_l1_history[s - 1]` holds `||eps(s)||_1`; entries beyond `t` are ignored.
///
/// # Panics
/// If `t == 0` or the history has fewer than `t` entries.
pub fn lemma1_bound(
    x0_l1: f64,
    perturb_l1_history: &[f64],
    constants: &SpectralConstants,
    t: usize,
) -> f64 {
    assert!(t >= 1, "the disagreement bound starts at t = 1");
    assert!(perturb_l1_history.len() >= t, "need {t} perturbation norms");
    let lambda = constants.lambda;
    let accumulated = perturb_l1_history[..t]
        .iter()
        .fold(0.0, |acc, &e| lambda * acc + e);
    8.0 / constants.delta * (lambda.powi(t as i32) * x0_l1 + accumulated)
}

/// Cumulative disagreement bound when perturbations decay like `D/t` in expectation:
/// `(8/delta) lambda/(1-lambda) sum_j ||x_j(0)||_1 + (8/delta) D n/(1-lambda) (1 + ln tau)`.
pub fn corollary2_cumulative_bound(
    x0_l1_sum: f64,
    d: f64,
    n: usize,
    constants: &SpectralConstants,
    tau: usize,
) -> f64 {
    assert!(tau >= 1, "tau starts at 1");
    let SpectralConstants { delta, lambda, .. } = *constants;
    8.0 / delta * lambda / (1.0 - lambda) * x0_l1_sum
        + 8.0 / delta * d * n as f64 / (1.0 - lambda) * (1.0 + (tau as f64).ln())
}

/// Running evaluation of the disagreement bound as perturbations arrive.
#[derive(Debug, Clone)]
pub struct DisagreementBound {
    constants: SpectralConstants,
    x0_l1: f64,
    accumulated: f64,
    lambda_pow: f64,
    values: Vec<f64>,
}

impl DisagreementBound {
    pub fn new(x0_l1: f64, constants: SpectralConstants) -> Self {
        Self {
            constants,
            x0_l1,
            accumulated: 0.0,
            lambda_pow: 1.0,
            values: Vec::new(),
        }
    }

    /// Records `||eps(t)||_1` for the next `t` and returns the bound at that `t`.
    pub fn push(&mut self, perturb_l1: f64) -> f64 {
        let lambda = self.constants.lambda;
        self.accumulated = lambda * self.accumulated + perturb_l1;
        self.lambda_pow *= lambda;
        let value = 8.0 / self.constants.delta * (self.lambda_pow * self.x0_l1 + self.accumulated);
        self.values.push(value);
        value
    }

    /// Bound values for `t = 1, 2, ...`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn ln_latest(&self) -> Option<f64> {
        self.values.last().map(|v| v.ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_mixing_matrix, DirectedGraph};
    use crate::spectral::ConstantsMethod;

    fn col(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    fn constants(delta: f64, lambda: f64) -> SpectralConstants {
        SpectralConstants {
            delta,
            lambda,
            method: ConstantsMethod::GeneralBound,
        }
    }

    #[test]
    fn single_node_keeps_its_value() {
        let a = build_mixing_matrix(DirectedGraph::from_edges(1, []).unwrap()).unwrap();
        let mut s = PushSumState::new(col(&[2.5]));
        for _ in 0..5 {
            pushsum_step(&mut s, &a, &col(&[0.0])).unwrap();
            assert_eq!(s.z[(0, 0)], 2.5);
        }
    }

    #[test]
    fn consensus_is_a_fixed_point() {
        let a = build_mixing_matrix(
            DirectedGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap(),
        )
        .unwrap();
        let mut s = PushSumState::new(DMatrix::from_element(4, 2, -1.25));
        let zero = DMatrix::zeros(4, 2);
        for _ in 0..20 {
            pushsum_step(&mut s, &a, &zero).unwrap();
            assert!(s.z.iter().all(|&v| (v + 1.25).abs() < 1e-14));
            assert!(consensus_residual(&s) < 1e-14);
        }
    }

    #[test]
    fn three_cycle_first_step_residual() {
        // hand computation: A = (I + P)/2 with P the 3-cycle shift
        // w = (1.5, 1.5, 0), y = (1, 1, 1), z = w, average = 1
        let a = build_mixing_matrix(DirectedGraph::directed_cycle(3).unwrap()).unwrap();
        let mut s = PushSumState::new(col(&[3.0, 0.0, 0.0]));
        pushsum_step(&mut s, &a, &col(&[0.0; 3])).unwrap();
        assert_eq!(s.z.as_slice(), &[1.5, 1.5, 0.0]);
        assert_eq!(consensus_residual(&s), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = build_mixing_matrix(DirectedGraph::directed_cycle(3).unwrap()).unwrap();
        let mut s = PushSumState::new(col(&[1.0, 2.0, 3.0]));
        assert!(matches!(
            pushsum_step(&mut s, &a, &DMatrix::zeros(3, 2)),
            Err(PushSumError::Dimension { .. })
        ));
        let mut small = PushSumState::new(col(&[1.0, 2.0]));
        assert!(small.mix(&a).is_err());
    }

    #[test]
    fn lemma1_bound_examples() {
        let c = constants(1.0, 0.5);
        assert_eq!(lemma1_bound(0.0, &[0.0; 4], &c, 4), 0.0);
        assert_eq!(lemma1_bound(1.0, &[0.0; 3], &c, 3), 1.0);
        let (x0, e, t) = (2.0, 0.3, 12);
        let closed = 8.0 * (0.5f64.powi(t) * x0 + e * (1.0 - 0.5f64.powi(t)) / 0.5);
        let direct = lemma1_bound(x0, &vec![e; t as usize], &c, t as usize);
        assert!((closed - direct).abs() < 1e-12 * closed);
    }

    #[test]
    fn running_bound_matches_direct_evaluation() {
        let c = constants(0.2, 0.9);
        let history = [0.5, 0.0, 1.5, 0.25, 3.0];
        let mut running = DisagreementBound::new(4.0, c);
        for (t, &e) in history.iter().enumerate() {
            let value = running.push(e);
            let direct = lemma1_bound(4.0, &history, &c, t + 1);
            assert!((value - direct).abs() <= 1e-12 * direct);
        }
        assert_eq!(running.values().len(), history.len());
        assert!(running.ln_latest().unwrap().is_finite());
    }

    #[test]
    fn corollary2_examples() {
        let c = constants(1.0, 0.5);
        assert_eq!(corollary2_cumulative_bound(0.0, 0.0, 5, &c, 10), 0.0);
        // 8 * 1 * 1 + 8 * 1 * 2 / (1 - 1/2) * (1 + 0)
        assert_eq!(corollary2_cumulative_bound(1.0, 1.0, 2, &c, 1), 40.0);
        // the log term grows by 8 D n / (delta (1 - lambda)) per e-fold of tau
        let k = 8.0 * 1.0 * 2.0 / 0.5;
        let lo = corollary2_cumulative_bound(1.0, 1.0, 2, &c, 10);
        let hi = corollary2_cumulative_bound(1.0, 1.0, 2, &c, 100);
        assert!((hi - lo - k * 10f64.ln()).abs() < 1e-12 * hi);
    }
}
