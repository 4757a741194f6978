//! Per-node strongly convex objectives and their noisy gradient oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, Domain};

/// Eigenvalue floor below which a matrix is not treated as positive definite.
pub const SPD_TOLERANCE: f64 = 1e-10;
/// Smallest admissible estimation weight; smaller draws are resampled.
pub const ESTIMATION_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("network must contain at least one node")]
    EmptyNetwork,
    #[error("strong convexity modulus must be positive, got {0}")]
    NonPositiveModulus(f64),
    #[error("noise bound must be finite and non-negative, got {0}")]
    InvalidNoiseBound(f64),
}

/// `f(z) = 1/2 z^T Q z - b^T z + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl Quadratic {
    pub fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.q * z)) - self.b.dot(z) + self.c
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.q * z - &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveKind {
    Quadratic(Quadratic),
    /// `mu/2 ||z||^2 + |z_1|`, non-differentiable on `z_1 = 0`, where the
    /// subgradient with zero first component is returned.
    RidgeL1 {
        mu: f64,
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    /// Uniform on the Euclidean ball of radius `c` (uniform on `[-c, c]` in 1-D).
    #[default]
    UniformBall,
    /// Isotropic Gaussian with per-coordinate deviation `c / (2 sqrt(d))`,
    /// redrawn until it lands inside the ball of radius `c`.
    TruncatedGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    pub bound: f64,
    pub law: NoiseLaw,
}

impl NoiseModel {
    pub fn new(bound: f64, law: NoiseLaw) -> Result<Self, ObjectiveError> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(ObjectiveError::InvalidNoiseBound(bound));
        }
        Ok(Self { bound, law })
    }

    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> DVector<f64> {
        if self.bound == 0.0 {
            return DVector::zeros(dim);
        }
        let c = self.bound;
        let mut noise = match self.law {
            NoiseLaw::UniformBall => uniform_in_ball(dim, c, rng),
            NoiseLaw::TruncatedGaussian => {
                let sigma = c / (2.0 * (dim as f64).sqrt());
                loop {
                    let v =
                        DVector::from_fn(dim, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
                    if v.norm() <= c {
                        break v;
                    }
                }
            }
        };
        // rounding in the normalisation can overshoot by an ulp
        while noise.norm() > c {
            noise *= 1.0 - 2.0 * f64::EPSILON;
        }
        noise
    }
}

/// A point drawn uniformly from the Euclidean ball of the given radius.
pub fn uniform_in_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let direction = loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            break v / norm;
        }
    };
    let u: f64 = rng.random();
    direction * (radius * u.powf(1.0 / dim as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Strong convexity modulus.
    pub mu: f64,
    /// Gradient Lipschitz constant, when the gradient is Lipschitz.
    pub lipschitz: Option<f64>,
    pub noise: NoiseModel,
    pub minimizer: Option<DVector<f64>>,
}

/// Noisy gradient draw together with its exact parts.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub value: DVector<f64>,
    pub true_grad: DVector<f64>,
    pub noise: DVector<f64>,
}

impl ObjectiveSpec {
    pub fn dim(&self) -> usize {
        match &self.kind {
            ObjectiveKind::Quadratic(quad) => quad.b.len(),
            ObjectiveKind::RidgeL1 { dim, .. } => *dim,
        }
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic(quad) => quad.value(z),
            ObjectiveKind::RidgeL1 { mu, .. } => 0.5 * mu * z.norm_squared() + z[0].abs(),
        }
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ObjectiveKind::Quadratic(quad) => quad.gradient(z),
            ObjectiveKind::RidgeL1 { mu, .. } => {
                let mut g = z * *mu;
                if z[0] != 0.0 {
                    g[0] += z[0].signum();
                }
                g
            }
        }
    }

    /// Upper bound on the gradient norm over the ball of radius `radius`
    /// around the origin.
    pub fn gradient_bound_on_ball(&self, radius: f64) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic(quad) => {
                let spectral_norm = self.lipschitz.unwrap_or_else(|| quad.q.norm());
                spectral_norm * radius + quad.b.norm()
            }
            ObjectiveKind::RidgeL1 { mu, .. } => mu * radius + 1.0,
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }
}

/// `f(z) = 1/2 z^T Q z - b^T z + c` for symmetric positive definite `Q`.
pub fn general_quadratic(
    q: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
) -> Result<ObjectiveSpec, ObjectiveError> {
    let d = b.len();
    if q.shape() != (d, d) {
        return Err(ObjectiveError::Dimension(format!(
            "Q is {:?} but b has length {d}",
            q.shape()
        )));
    }
    let scale = q.amax().max(1.0);
    if (&q - q.transpose()).amax() > 1e-12 * scale {
        return Err(ObjectiveError::NotSymmetric);
    }
    let eig = q.symmetric_eigenvalues();
    let (mu, lipschitz) = (eig.min(), eig.max());
    if mu <= SPD_TOLERANCE {
        return Err(ObjectiveError::NotPositiveDefinite(mu));
    }
    let minimizer = q
        .clone()
        .cholesky()
        .ok_or(ObjectiveError::NotPositiveDefinite(mu))?
        .solve(&b);
    Ok(ObjectiveSpec {
        kind: ObjectiveKind::Quadratic(Quadratic { q, b, c }),
        mu,
        lipschitz: Some(lipschitz),
        noise: NoiseModel::default(),
        minimizer: Some(minimizer),
    })
}

/// Scalar `weight * (theta - target)^2`, with modulus and Lipschitz constant `2 weight`.
pub fn weighted_scalar(weight: f64, target: f64) -> Result<ObjectiveSpec, ObjectiveError> {
    if !(weight > 0.0) {
        return Err(ObjectiveError::NonPositiveModulus(2.0 * weight));
    }
    let quad = Quadratic {
        q: DMatrix::from_element(1, 1, 2.0 * weight),
        b: DVector::from_element(1, 2.0 * weight * target),
        c: weight * target * target,
    };
    Ok(ObjectiveSpec {
        kind: ObjectiveKind::Quadratic(quad),
        mu: 2.0 * weight,
        lipschitz: Some(2.0 * weight),
        noise: NoiseModel::default(),
        minimizer: Some(DVector::from_element(1, target)),
    })
}

/// The non-smooth fixture `mu/2 ||z||^2 + |z_1|`, minimised at the origin.
pub fn ridge_l1(mu: f64, dim: usize) -> Result<ObjectiveSpec, ObjectiveError> {
    if !(mu > 0.0) {
        return Err(ObjectiveError::NonPositiveModulus(mu));
    }
    if dim == 0 {
        return Err(ObjectiveError::Dimension(
            "dimension must be positive".into(),
        ));
    }
    Ok(ObjectiveSpec {
        kind: ObjectiveKind::RidgeL1 { mu, dim },
        mu,
        lipschitz: None,
        noise: NoiseModel::default(),
        minimizer: Some(DVector::zeros(dim)),
    })
}

/// Draws `grad f(u) + N` with `E[N] = 0` and `||N|| <= c` surely.
pub fn noisy_gradient<R: Rng + ?Sized>(
    spec: &ObjectiveSpec,
    u: &DVector<f64>,
    rng: &mut R,
) -> GradientSample {
    let true_grad = spec.gradient(u);
    let noise = spec.noise.sample(u.len(), rng);
    GradientSample {
        value: &true_grad + &noise,
        true_grad,
        noise,
    }
}

/// `F(z) = sum_i f_i(z)` written as a quadratic plus `l1_first * |z_1|`.
#[derive(Debug, Clone, PartialEq)]
struct Aggregate {
    quad: Quadratic,
    l1_first: f64,
}

impl Aggregate {
    fn value(&self, z: &DVector<f64>) -> f64 {
        self.quad.value(z) + self.l1_first * z[0].abs()
    }

    // Solves the three sign cases of z_1 exactly; one satisfies the
    // optimality conditions by strict convexity.
    fn minimize(&self) -> Result<DVector<f64>, ObjectiveError> {
        let chol = self
            .quad
            .q
            .clone()
            .cholesky()
            .ok_or(ObjectiveError::NotPositiveDefinite(0.0))?;
        let k = self.l1_first;
        if k == 0.0 {
            return Ok(chol.solve(&self.quad.b));
        }
        let d = self.quad.b.len();
        let mut on_kink = DVector::zeros(d);
        if d > 1 {
            let rest_q = self.quad.q.view((1, 1), (d - 1, d - 1)).clone_owned();
            let rest_b = self.quad.b.rows(1, d - 1).clone_owned();
            let rest = rest_q
                .cholesky()
                .ok_or(ObjectiveError::NotPositiveDefinite(0.0))?
                .solve(&rest_b);
            on_kink.rows_mut(1, d - 1).copy_from(&rest);
        }
        if self.quad.gradient(&on_kink)[0].abs() <= k {
            return Ok(on_kink);
        }
        for sign in [1.0, -1.0] {
            let mut rhs = self.quad.b.clone();
            rhs[0] -= k * sign;
            let candidate = chol.solve(&rhs);
            if candidate[0] * sign > 0.0 {
                return Ok(candidate);
            }
        }
        Ok(on_kink)
    }
}

/// The network problem `F = sum_i f_i` with its exact minimiser.
#[derive(Debug, Clone)]
pub struct NetworkObjective {
    nodes: Vec<ObjectiveSpec>,
    aggregate: Aggregate,
    minimizer: DVector<f64>,
    optimal_value: f64,
}

impl NetworkObjective {
    pub fn new(nodes: Vec<ObjectiveSpec>) -> Result<Self, ObjectiveError> {
        let d = nodes.first().ok_or(ObjectiveError::EmptyNetwork)?.dim();
        let mut quad = Quadratic {
            q: DMatrix::zeros(d, d),
            b: DVector::zeros(d),
            c: 0.0,
        };
        let mut l1_first = 0.0;
        for (i, spec) in nodes.iter().enumerate() {
            if spec.dim() != d {
                return Err(ObjectiveError::Dimension(format!(
                    "node {i} has dimension {} but node 0 has {d}",
                    spec.dim()
                )));
            }
            if !(spec.mu > 0.0) {
                return Err(ObjectiveError::NonPositiveModulus(spec.mu));
            }
            match &spec.kind {
                ObjectiveKind::Quadratic(q) => {
                    quad.q += &q.q;
                    quad.b += &q.b;
                    quad.c += q.c;
                }
                ObjectiveKind::RidgeL1 { mu, .. } => {
                    for k in 0..d {
                        quad.q[(k, k)] += mu;
                    }
                    l1_first += 1.0;
                }
            }
        }
        let aggregate = Aggregate { quad, l1_first };
        let minimizer = aggregate.minimize()?;
        let optimal_value = aggregate.value(&minimizer);
        Ok(Self {
            nodes,
            aggregate,
            minimizer,
            optimal_value,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.minimizer.len()
    }

    pub fn nodes(&self) -> &[ObjectiveSpec] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &ObjectiveSpec {
        &self.nodes[i]
    }

    pub fn minimizer(&self) -> &DVector<f64> {
        &self.minimizer
    }

    pub fn optimal_value(&self) -> f64 {
        self.optimal_value
    }

    pub fn mus(&self) -> Vec<f64> {
        self.nodes.iter().map(|s| s.mu).collect()
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        self.aggregate.value(z)
    }

    /// `sum_i grad f_i(z)`.
    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        self.nodes
            .iter()
            .fold(DVector::zeros(z.len()), |acc, spec| acc + spec.gradient(z))
    }

    /// `F(z) - F(z*)`, evaluated as `1/2 (z - z*)^T Q (z - z*)` when `F` is
    /// a pure quadratic so small gaps do not cancel against `F(z*)`.
    pub fn gap(&self, z: &DVector<f64>) -> f64 {
        if self.aggregate.l1_first == 0.0 {
            let e = z - &self.minimizer;
            0.5 * e.dot(&(&self.aggregate.quad.q * &e))
        } else {
            self.value(z) - self.optimal_value
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        for spec in &mut self.nodes {
            spec.noise = noise;
        }
        self
    }

    /// Noisy gradient of node `i` at `u`.
    pub fn sample_gradient<R: Rng + ?Sized>(
        &self,
        i: usize,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> GradientSample {
        noisy_gradient(&self.nodes[i], u, rng)
    }
}

/// Scalar estimation problem `sum_i p_i (theta - u_i)^2`.
#[derive(Debug, Clone)]
pub struct EstimationPreset {
    pub network: NetworkObjective,
    /// Inverse noise variances `p_i`.
    pub weights: Vec<f64>,
    /// Measurements `u_i`.
    pub targets: Vec<f64>,
}

impl EstimationPreset {
    pub fn from_parts(weights: Vec<f64>, targets: Vec<f64>) -> Result<Self, ObjectiveError> {
        if weights.len() != targets.len() {
            return Err(ObjectiveError::Dimension(format!(
                "{} weights but {} targets",
                weights.len(),
                targets.len()
            )));
        }
        let nodes = weights
            .iter()
            .zip(&targets)
            .map(|(&p, &u)| weighted_scalar(p, u))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            network: NetworkObjective::new(nodes)?,
            weights,
            targets,
        })
    }

    /// `theta* = sum p_i u_i / sum p_i`, computed directly from the weights.
    pub fn weighted_mean(&self) -> f64 {
        let num: f64 = self
            .weights
            .iter()
            .zip(&self.targets)
            .map(|(p, u)| p * u)
            .sum();
        num / self.weights.iter().sum::<f64>()
    }
}

/// Each node measures `u_i = theta_hat + w_i` with `w_i ~ N(0, 1/p_i)` and
/// `p_i ~ Uniform(0, 1)`; draws below [`ESTIMATION_WEIGHT_FLOOR`] are redrawn.
pub fn quadratic_estimation_preset(
    n: usize,
    seed: u64,
    theta_hat: f64,
) -> Result<EstimationPreset, ObjectiveError> {
    if n == 0 {
        return Err(ObjectiveError::EmptyNetwork);
    }
    let mut rng = substream(seed, Domain::Objective, 0, 0);
    let mut weights = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let p = loop {
            let p: f64 = rng.random();
            if p >= ESTIMATION_WEIGHT_FLOOR {
                break p;
            }
        };
        let noise = Normal::new(0.0, 1.0 / p.sqrt()).expect("positive deviation");
        weights.push(p);
        targets.push(theta_hat + noise.sample(&mut rng));
    }
    EstimationPreset::from_parts(weights, targets)
}

/// Random SPD quadratics in `R^d`: `Q_i = R diag(e) R^T` with eigenvalues
/// `e ~ Uniform(0.5, 2)` and a random rotation `R`, and `b_i ~ N(0, I)`.
pub fn random_quadratic_preset(
    n: usize,
    dim: usize,
    seed: u64,
) -> Result<NetworkObjective, ObjectiveError> {
    if n == 0 {
        return Err(ObjectiveError::EmptyNetwork);
    }
    if dim == 0 {
        return Err(ObjectiveError::Dimension(
            "dimension must be positive".into(),
        ));
    }
    let mut rng = substream(seed, Domain::Objective, 1, 0);
    let nodes = (0..n)
        .map(|_| {
            let gaussian = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let rotation = gaussian.qr().q();
            let eig = DVector::from_fn(dim, |_, _| rng.random_range(0.5..2.0));
            let q = &rotation * DMatrix::from_diagonal(&eig) * rotation.transpose();
            let q = (&q + q.transpose()) * 0.5;
            let b = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            general_quadratic(q, b, 0.0)
        })
        .collect::<Result<Vec<_>, _>>()?;
    NetworkObjective::new(nodes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    StrongConvexity,
    Lipschitz,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// Negative slack, or the relative gradient error for finite differences.
    pub amount: f64,
}

/// Slacks of the strong convexity and Lipschitz inequalities at one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCheck {
    /// `f(x) - f(y) - g(y)^T (x - y) - mu/2 ||x - y||^2`.
    pub strong_convexity_slack: f64,
    /// `M ||x - y|| - ||g(x) - g(y)||`, when `M` is known.
    pub lipschitz_slack: Option<f64>,
    /// Rounding allowance for this pair.
    pub tolerance: f64,
}

pub fn check_pair(spec: &ObjectiveSpec, x: &DVector<f64>, y: &DVector<f64>) -> PairCheck {
    let (fx, fy) = (spec.value(x), spec.value(y));
    let (gx, gy) = (spec.gradient(x), spec.gradient(y));
    let diff = x - y;
    let strong_convexity_slack = fx - fy - gy.dot(&diff) - 0.5 * spec.mu * diff.norm_squared();
    let lipschitz_slack = spec.lipschitz.map(|m| m * diff.norm() - (&gx - &gy).norm());
    let tolerance = 1e-9 * (1.0 + fx.abs() + fy.abs());
    PairCheck {
        strong_convexity_slack,
        lipschitz_slack,
        tolerance,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub trials: usize,
    pub worst_strong_convexity_slack: f64,
    pub worst_lipschitz_slack: Option<f64>,
    pub worst_gradient_error: f64,
    pub violations: Vec<Violation>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const FD_STEP: f64 = 1e-6;
const FD_TOLERANCE: f64 = 1e-5;

/// Samples `trials` point pairs in the ball of radius `radius` and checks
/// strong convexity with `spec.mu`, the Lipschitz bound with `spec.lipschitz`
/// (when set) and the analytic gradient against central differences.
pub fn certify_assumptions<R: Rng + ?Sized>(
    spec: &ObjectiveSpec,
    trials: usize,
    radius: f64,
    rng: &mut R,
) -> AssumptionReport {
    let d = spec.dim();
    let mut report = AssumptionReport {
        trials,
        worst_strong_convexity_slack: f64::INFINITY,
        worst_lipschitz_slack: spec.lipschitz.map(|_| f64::INFINITY),
        worst_gradient_error: 0.0,
        violations: Vec::new(),
    };
    for _ in 0..trials {
        let x = uniform_in_ball(d, radius, rng);
        let y = uniform_in_ball(d, radius, rng);
        let check = check_pair(spec, &x, &y);
        report.worst_strong_convexity_slack = report
            .worst_strong_convexity_slack
            .min(check.strong_convexity_slack);
        if check.strong_convexity_slack < -check.tolerance {
            report.violations.push(Violation {
                kind: ViolationKind::StrongConvexity,
                x: x.clone(),
                y: y.clone(),
                amount: check.strong_convexity_slack,
            });
        }
        if let (Some(slack), Some(worst)) =
            (check.lipschitz_slack, report.worst_lipschitz_slack.as_mut())
        {
            *worst = worst.min(slack);
            if slack < -check.tolerance {
                report.violations.push(Violation {
                    kind: ViolationKind::Lipschitz,
                    x: x.clone(),
                    y: y.clone(),
                    amount: slack,
                });
            }
        }

        let grad = spec.gradient(&x);
        let mut worst_here: f64 = 0.0;
        for k in 0..d {
            let mut fwd = x.clone();
            let mut back = x.clone();
            fwd[k] += FD_STEP;
            back[k] -= FD_STEP;
            let numeric = (spec.value(&fwd) - spec.value(&back)) / (2.0 * FD_STEP);
            worst_here = worst_here.max((numeric - grad[k]).abs() / grad[k].abs().max(1.0));
        }
        report.worst_gradient_error = report.worst_gradient_error.max(worst_here);
        if worst_here > FD_TOLERANCE {
            report.violations.push(Violation {
                kind: ViolationKind::FiniteDifference,
                x: x.clone(),
                y: x,
                amount: worst_here,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(values: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(values)
    }

    #[test]
    fn identity_quadratic() {
        let spec = general_quadratic(DMatrix::identity(3, 3), DVector::zeros(3), 0.0).unwrap();
        assert_eq!(spec.minimizer, Some(DVector::zeros(3)));
        assert!((spec.mu - 1.0).abs() < 1e-14 && (spec.lipschitz.unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_quadratic_minimizer() {
        let spec = general_quadratic(DMatrix::from_diagonal(&v(&[1.0, 4.0])), v(&[1.0, 4.0]), 0.0)
            .unwrap();
        let z = spec.minimizer.clone().unwrap();
        assert!((z - v(&[1.0, 1.0])).amax() < 1e-14);
        assert!((spec.mu - 1.0).abs() < 1e-14);
        assert!((spec.lipschitz.unwrap() - 4.0).abs() < 1e-14);
        // moving one unit along e1 raises f by Q_11 / 2
        let z = spec.minimizer.clone().unwrap();
        let bumped = &z + v(&[1.0, 0.0]);
        assert!((spec.value(&bumped) - spec.value(&z) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn non_spd_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            general_quadratic(q, DVector::zeros(2), 0.0),
            Err(ObjectiveError::NotPositiveDefinite(_))
        ));
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(
            general_quadratic(q, DVector::zeros(2), 0.0).unwrap_err(),
            ObjectiveError::NotSymmetric
        );
        let q = DMatrix::from_diagonal(&v(&[1.0, 1e-12]));
        assert!(general_quadratic(q, DVector::zeros(2), 0.0).is_err());
    }

    #[test]
    fn estimation_minimizers() {
        let single = EstimationPreset::from_parts(vec![0.3], vec![1.7]).unwrap();
        assert!((single.network.minimizer()[0] - 1.7).abs() < 1e-15);
        let sym = EstimationPreset::from_parts(vec![1.0, 1.0], vec![0.0, 2.0]).unwrap();
        assert!((sym.network.minimizer()[0] - 1.0).abs() < 1e-15);
        let skew = EstimationPreset::from_parts(vec![1.0, 3.0], vec![0.0, 4.0]).unwrap();
        assert!((skew.network.minimizer()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn estimation_preset_draws() {
        let preset = quadratic_estimation_preset(200, 5, 2.0).unwrap();
        assert!(preset
            .weights
            .iter()
            .all(|&p| (ESTIMATION_WEIGHT_FLOOR..1.0).contains(&p)));
        let theta = preset.network.minimizer()[0];
        assert!((theta - preset.weighted_mean()).abs() < 1e-12 * theta.abs().max(1.0));
        let grad = preset.network.gradient(preset.network.minimizer());
        assert!(grad[0].abs() < 1e-10);
        for (spec, p) in preset.network.nodes().iter().zip(&preset.weights) {
            assert_eq!(spec.mu, 2.0 * p);
            assert_eq!(spec.lipschitz, Some(2.0 * p));
        }
        let again = quadratic_estimation_preset(200, 5, 2.0).unwrap();
        assert_eq!(again.targets, preset.targets);
    }

    #[test]
    fn ridge_l1_network_minimizer() {
        // two ridge terms and a pull towards (3, 1): minimise
        // (z1-3)^2/2 + (z2-1)^2/2 + ||z||^2 + 2|z1| => z1 = (3-2)/3, z2 = 1/3
        let pull = general_quadratic(DMatrix::identity(2, 2), v(&[3.0, 1.0]), 0.0).unwrap();
        let net = NetworkObjective::new(vec![
            pull,
            ridge_l1(1.0, 2).unwrap(),
            ridge_l1(1.0, 2).unwrap(),
        ])
        .unwrap();
        assert!((net.minimizer() - v(&[1.0 / 3.0, 1.0 / 3.0])).amax() < 1e-14);
        // a weak pull stays on the kink
        let weak = general_quadratic(DMatrix::identity(1, 1), v(&[0.5]), 0.0).unwrap();
        let net = NetworkObjective::new(vec![weak, ridge_l1(2.0, 1).unwrap()]).unwrap();
        assert_eq!(net.minimizer()[0], 0.0);
        assert!(net.gap(&v(&[0.1])) > 0.0);
    }

    #[test]
    fn gap_is_zero_at_optimum_and_matches_values() {
        let net = random_quadratic_preset(4, 3, 9).unwrap();
        assert_eq!(net.gap(net.minimizer()), 0.0);
        assert!(net.gradient(net.minimizer()).amax() < 1e-10);
        let z = net.minimizer() + v(&[0.3, -0.2, 0.5]);
        let direct = net.value(&z) - net.optimal_value();
        assert!((net.gap(&z) - direct).abs() < 1e-10);
    }

    #[test]
    fn noiseless_sample_is_exact() {
        let spec = weighted_scalar(0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = noisy_gradient(&spec, &v(&[3.0]), &mut rng);
        assert_eq!(s.value, v(&[2.0]));
        assert_eq!(s.noise, v(&[0.0]));
    }

    #[test]
    fn noise_respects_hard_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for law in [NoiseLaw::UniformBall, NoiseLaw::TruncatedGaussian] {
            for dim in [1, 2, 5] {
                let model = NoiseModel::new(0.7, law).unwrap();
                for _ in 0..2000 {
                    assert!(model.sample(dim, &mut rng).norm() <= 0.7);
                }
            }
        }
        assert!(NoiseModel::new(-1.0, NoiseLaw::UniformBall).is_err());
        assert!(NoiseModel::new(f64::NAN, NoiseLaw::UniformBall).is_err());
    }

    #[test]
    fn certify_identity_quadratic() {
        let spec = general_quadratic(DMatrix::identity(2, 2), DVector::zeros(2), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = certify_assumptions(&spec, 200, 5.0, &mut rng);
        assert!(report.passed(), "{report:?}");
        assert!(report.worst_strong_convexity_slack.abs() < 1e-12);
    }

    #[test]
    fn overstated_modulus_is_flagged() {
        let mut spec =
            general_quadratic(DMatrix::from_diagonal(&v(&[1.0, 4.0])), v(&[1.0, 4.0]), 0.0)
                .unwrap();
        spec.mu *= 2.0;
        // along the eigenvector e1 the curvature is exactly 1 < 2
        let check = check_pair(&spec, &v(&[2.0, 0.0]), &v(&[0.0, 0.0]));
        assert!(check.strong_convexity_slack < -check.tolerance);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let report = certify_assumptions(&spec, 200, 3.0, &mut rng);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::StrongConvexity));
    }

    #[test]
    fn estimation_gradients_match_finite_differences() {
        let preset = quadratic_estimation_preset(20, 8, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in preset.network.nodes() {
            let report = certify_assumptions(spec, 20, 10.0, &mut rng);
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn gradient_bound_covers_sampled_points() {
        let net = random_quadratic_preset(3, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for spec in net.nodes().iter().chain([&ridge_l1(0.5, 2).unwrap()]) {
            let bound = spec.gradient_bound_on_ball(4.0);
            for _ in 0..500 {
                let z = uniform_in_ball(2, 4.0, &mut rng);
                assert!(spec.gradient(&z).norm() <= bound);
            }
        }
    }
}
