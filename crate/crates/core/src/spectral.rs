//! Consensus constants `delta` (lower bound on push-sum weights) and
//! `lambda` (geometric contraction factor) for a graph sequence.

use std::sync::Arc;

use nalgebra::DVector;

use crate::graph::{
    verify_b_strong_connectivity, DirectedGraph, GraphError, GraphSequence, MixingMatrix,
};

/// Largest size for which sigma_2 is taken from a full SVD.
pub const FULL_SVD_LIMIT: usize = 512;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantsMethod {
    /// Worst-case closed forms in `n` and `B`.
    GeneralBound,
    /// Regular graphs, the `(1 - 1/(4n^3))^(1/B)` branch was the smaller one.
    RegularBound,
    /// Regular graphs, the measured `max_t sigma_2(A(t))` was the smaller one.
    EmpiricalSigma2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConstants {
    pub delta: f64,
    pub lambda: f64,
    pub method: ConstantsMethod,
}

impl SpectralConstants {
    /// Worst-case constants `delta = n^(-nB)`, `lambda = (1 - n^(-nB))^(1/(nB))`.
    pub fn general(n: usize, b: usize) -> Result<Self, GraphError> {
        let nb = (n * b) as f64;
        let delta = (-nb * (n as f64).ln()).exp();
        let lambda = ((-delta).ln_1p() / nb).exp();
        if delta <= 0.0 || (n > 1 && lambda >= 1.0) {
            return Err(GraphError::ConstantsUnderflow { n, b });
        }
        Ok(Self {
            delta,
            lambda,
            method: ConstantsMethod::GeneralBound,
        })
    }

    /// Regular-graph constants given the largest observed `sigma_2`.
    pub fn regular(n: usize, b: usize, max_sigma2: f64) -> Self {
        let bound = (1.0 - 1.0 / (4.0 * (n as f64).powi(3))).powf(1.0 / b as f64);
        let (lambda, method) = if max_sigma2 < bound {
            (max_sigma2, ConstantsMethod::EmpiricalSigma2)
        } else {
            (bound, ConstantsMethod::RegularBound)
        };
        Self {
            delta: 1.0,
            lambda,
            method,
        }
    }
}

/// Second-largest singular value of a mixing matrix.
///
/// Full SVD up to [`FULL_SVD_LIMIT`] nodes. Above that, power iteration on
/// `M^T M` with `M = A - (1/n) 1 1^T`, which equals `sigma_2(A)` when `A`
/// is doubly stochastic (the regular case, the only one that consults it).
pub fn second_singular_value(a: &MixingMatrix) -> Result<f64, GraphError> {
    let n = a.n();
    if n == 1 {
        return Ok(0.0);
    }
    if n <= FULL_SVD_LIMIT {
        let svd = a
            .to_dense()
            .try_svd(false, false, f64::EPSILON, 0)
            .ok_or(GraphError::SvdNonConvergence)?;
        let mut values: Vec<f64> = svd.singular_values.iter().copied().collect();
        values.sort_by(|p, q| q.total_cmp(p));
        return Ok(values[1]);
    }
    deflated_power_iteration(a)
}

fn deflated_power_iteration(a: &MixingMatrix) -> Result<f64, GraphError> {
    let n = a.n();
    let transpose = a.to_dense().transpose();
    let center = |v: &mut DVector<f64>| {
        let mean = v.mean();
        v.add_scalar_mut(-mean);
    };
    // M v = A v - mean(v) 1, M^T u = A^T u - mean(u) 1 for doubly stochastic A
    let mut v = DVector::from_fn(n, |i, _| ((i * 7919) % 104_729) as f64 / 104_729.0 - 0.5);
    center(&mut v);
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut u = a.apply_vector(&v);
        center(&mut u);
        let mut next = &transpose * &u;
        center(&mut next);
        let len = next.norm();
        if len == 0.0 {
            return Ok(0.0);
        }
        let sigma = len.sqrt();
        next /= len;
        if (sigma - estimate).abs() <= POWER_TOL * sigma.max(1.0) {
            return Ok(sigma);
        }
        estimate = sigma;
        v = next;
    }
    Err(GraphError::SvdNonConvergence)
}

/// Constants for `seq` over `[0, horizon)`.
///
/// Uses the regular-graph refinement when every `G(t)` in the horizon is
/// regular, otherwise the worst-case closed forms.
pub fn spectral_constants(
    seq: &GraphSequence,
    b: usize,
    horizon: usize,
) -> Result<SpectralConstants, GraphError> {
    let check = verify_b_strong_connectivity(seq, b, horizon)?;
    if let Some(window) = check.first_failure {
        return Err(GraphError::WindowNotConnected { window });
    }
    let n = seq.n();
    if !seq.is_regular_over(horizon) {
        return SpectralConstants::general(n, b);
    }
    let mut max_sigma2: f64 = 0.0;
    let mut seen: Vec<Arc<DirectedGraph>> = Vec::new();
    for t in 0..horizon {
        let g = seq.graph_at(t);
        if seen.iter().any(|h| Arc::ptr_eq(h, &g) || **h == *g) {
            continue;
        }
        let sigma2 = second_singular_value(&seq.mixing_at(t))?;
        max_sigma2 = max_sigma2.max(sigma2);
        seen.push(g);
    }
    Ok(SpectralConstants::regular(n, b, max_sigma2))
}
