//! Evaluates the `O((ln tau)/tau)` error bound for the weighted averages and
//! compares it with Monte Carlo estimates of the bounded quantity
//! `F(zhat_i(tau)) - F(z*) + sum_j mu_j ||zhat_j(tau) - z*||^2`.

use super::run::mean_and_se;
use super::trace::{Metric, RunTrace};
use super::HarnessError;
use crate::objectives::NetworkObjective;
use crate::spectral::SpectralConstants;

/// Problem constants entering the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Radius `D` assumed to contain every `z_i(t)`.
    pub radius: f64,
    /// `L_j`: gradient norm bound of node `j` on the radius-`D` ball.
    pub gradient_bounds: Vec<f64>,
    /// `c_j`: gradient noise bound of node `j`.
    pub noise_bounds: Vec<f64>,
    pub mus: Vec<f64>,
    pub p: f64,
    pub dim: usize,
    pub constants: SpectralConstants,
}

impl BoundInputs {
    pub fn from_objective(
        objective: &NetworkObjective,
        radius: f64,
        p: f64,
        constants: SpectralConstants,
    ) -> Self {
        Self {
            radius,
            gradient_bounds: objective
                .nodes()
                .iter()
                .map(|s| s.gradient_bound_on_ball(radius))
                .collect(),
            noise_bounds: objective.nodes().iter().map(|s| s.noise.bound).collect(),
            mus: objective.mus(),
            p,
            dim: objective.dim(),
            constants,
        }
    }

    pub fn n(&self) -> usize {
        self.mus.len()
    }

    /// `L = sum_j L_j`.
    pub fn total_gradient_bound(&self) -> f64 {
        self.gradient_bounds.iter().sum()
    }

    /// `B_j = sqrt(d) (L_j + c_j)`.
    pub fn perturbation_bounds(&self) -> Vec<f64> {
        let scale = (self.dim as f64).sqrt();
        self.gradient_bounds
            .iter()
            .zip(&self.noise_bounds)
            .map(|(l, c)| scale * (l + c))
            .collect()
    }

    /// `sum_j (L_j + c_j)^2`.
    pub fn squared_sample_bound(&self) -> f64 {
        self.gradient_bounds
            .iter()
            .zip(&self.noise_bounds)
            .map(|(l, c)| (l + c).powi(2))
            .sum()
    }
}

/// The three right-hand-side terms at one `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    /// Decay of the initial disagreement.
    pub initial: f64,
    /// Disagreement injected by the gradient steps, `~ ln(tau)/tau`.
    pub consensus: f64,
    /// Stochastic optimisation error, `~ 1/tau`.
    pub optimization: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.initial + self.consensus + self.optimization
    }
}

/// Right-hand side at `tau >= 2` given `sum_j ||x_j(0)||_1`.
pub fn theorem1_rhs(inputs: &BoundInputs, x0_l1_sum: f64, tau: usize) -> BoundTerms {
    assert!(tau >= 2, "the bound is stated for tau >= 2");
    let SpectralConstants { delta, lambda, .. } = inputs.constants;
    let tau_f = tau as f64;
    let l = inputs.total_gradient_bound();
    let n = inputs.n() as f64;
    let max_b = inputs.perturbation_bounds().into_iter().fold(0.0, f64::max);
    let p = inputs.p;
    BoundTerms {
        initial: 80.0 * l / (tau_f * delta) * lambda / (1.0 - lambda) * x0_l1_sum,
        consensus: 80.0 * p * l * n * max_b / (tau_f * delta * (1.0 - lambda))
            * (1.0 + (tau_f - 1.0).ln()),
        optimization: p / tau_f * inputs.squared_sample_bound(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub tau: usize,
    /// Node with the largest conservative estimate.
    pub worst_node: usize,
    pub lhs_mean: f64,
    pub lhs_se: f64,
    pub runs: usize,
    pub rhs: BoundTerms,
}

impl BoundRow {
    /// `mean + 2 SE`.
    pub fn lhs_conservative(&self) -> f64 {
        self.lhs_mean + 2.0 * self.lhs_se
    }

    pub fn holds(&self) -> bool {
        self.lhs_conservative() <= self.rhs.total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub x0_l1_sum: f64,
    pub measured_max_norm: f64,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(BoundRow::holds)
    }
}

/// Compares Monte Carlo estimates from `traces` with the bound at each `tau`.
///
/// `sum_j ||x_j(0)||_1` is the largest recorded over the runs. Fails when
/// the radius is smaller than the largest recorded iterate norm, since the
/// bound would then be evaluated with unsound constants.
pub fn theorem1_bound_report(
    traces: &[RunTrace],
    inputs: &BoundInputs,
    tau_list: &[usize],
) -> Result<BoundReport, HarnessError> {
    let max_of = |metric: Metric| {
        traces
            .iter()
            .flat_map(|tr| tr.series(metric, None))
            .map(|r| r.value)
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            })
    };
    let measured_max_norm = max_of(Metric::MaxIterateNorm)
        .ok_or_else(|| HarnessError::Trace("trace has no max_iterate_norm records".into()))?;
    if inputs.radius < measured_max_norm {
        return Err(HarnessError::Config(format!(
            "D = {} is below the measured max iterate norm {measured_max_norm}",
            inputs.radius
        )));
    }
    let x0_l1_sum = max_of(Metric::X0L1)
        .ok_or_else(|| HarnessError::Trace("trace has no x0_l1 records".into()))?;

    let mut rows = Vec::with_capacity(tau_list.len());
    for &tau in tau_list {
        if tau < 2 {
            return Err(HarnessError::Config(format!(
                "tau must be at least 2, got {tau}"
            )));
        }
        let mut per_node: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for tr in traces {
            for r in tr.series(Metric::Theorem1Lhs, None).filter(|r| r.t == tau) {
                if let Some(node) = r.node {
                    per_node.entry(node).or_default().push(r.value);
                }
            }
        }
        let worst = per_node
            .into_iter()
            .map(|(node, values)| {
                let (mean, se) = mean_and_se(&values);
                (node, mean, se, values.len())
            })
            .max_by(|a, b| (a.1 + 2.0 * a.2).total_cmp(&(b.1 + 2.0 * b.2)))
            .ok_or_else(|| HarnessError::Trace(format!("no theorem1_lhs records at t = {tau}")))?;
        rows.push(BoundRow {
            tau,
            worst_node: worst.0,
            lhs_mean: worst.1,
            lhs_se: worst.2,
            runs: worst.3,
            rhs: theorem1_rhs(inputs, x0_l1_sum, tau),
        });
    }
    Ok(BoundReport {
        inputs: inputs.clone(),
        x0_l1_sum,
        measured_max_norm,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fit::fit_power_law;
    use crate::spectral::ConstantsMethod;

    fn inputs(lambda: f64) -> BoundInputs {
        BoundInputs {
            radius: 2.0,
            gradient_bounds: vec![1.0, 2.0],
            noise_bounds: vec![0.5, 0.0],
            mus: vec![1.0, 1.0],
            p: 4.0,
            dim: 1,
            constants: SpectralConstants {
                delta: 1.0,
                lambda,
                method: ConstantsMethod::EmpiricalSigma2,
            },
        }
    }

    #[test]
    fn terms_by_hand() {
        // L = 3, n = 2, max B = 2, sum (L+c)^2 = 2.25 + 4
        let t = theorem1_rhs(&inputs(0.5), 1.0, 2);
        assert!((t.initial - 80.0 * 3.0 / 2.0 * 1.0).abs() < 1e-12);
        assert!((t.consensus - 80.0 * 4.0 * 3.0 * 2.0 * 2.0 / (2.0 * 0.5)).abs() < 1e-9);
        assert!((t.optimization - 4.0 / 2.0 * 6.25).abs() < 1e-12);
        assert_eq!(t.total(), t.initial + t.consensus + t.optimization);
    }

    #[test]
    fn complete_graph_drops_initial_term() {
        let t = theorem1_rhs(&inputs(0.0), 10.0, 50);
        assert_eq!(t.initial, 0.0);
        assert!(t.consensus > 0.0);
    }

    fn log_grid() -> Vec<f64> {
        (0..=40)
            .map(|k| 10f64.powf(2.0 + k as f64 * 0.05).round())
            .collect()
    }

    fn rhs_slope(inp: &BoundInputs) -> f64 {
        let taus = log_grid();
        let values: Vec<f64> = taus
            .iter()
            .map(|&t| theorem1_rhs(inp, 0.0, t as usize).total())
            .collect();
        fit_power_law(&taus, &values).unwrap().slope
    }

    #[test]
    fn rhs_decays_like_log_over_tau() {
        // With typical constants the ln(tau)/tau term dominates by a factor
        // of at least 80, so the slope is that of (1 + ln(tau - 1))/tau.
        let taus = log_grid();
        let reference: Vec<f64> = taus.iter().map(|t| (1.0 + (t - 1.0).ln()) / t).collect();
        let expected = fit_power_law(&taus, &reference).unwrap().slope;
        let slope = rhs_slope(&inputs(0.5));
        assert!(
            (slope - expected).abs() < 5e-3,
            "slope {slope} vs {expected}"
        );
        assert!(slope < -0.85 && slope > -1.0);
        // Noise-dominated constants push the fit toward the 1/tau term.
        let mut noisy = inputs(0.0);
        noisy.noise_bounds = vec![1e4, 1e4];
        let slope = rhs_slope(&noisy);
        assert!((-1.05..=-0.9).contains(&slope), "slope {slope}");
    }

    #[test]
    fn refuses_radius_below_measured_norm() {
        let mut tr = RunTrace::new(0);
        tr.push(0, None, Metric::MaxIterateNorm, 3.0);
        tr.push(0, None, Metric::X0L1, 1.0);
        tr.push(5, Some(0), Metric::Theorem1Lhs, 0.1);
        let err = theorem1_bound_report(&[tr.clone()], &inputs(0.5), &[5]).unwrap_err();
        assert!(err.to_string().contains("max iterate norm"));
        let mut ok = inputs(0.5);
        ok.radius = 3.0;
        let report = theorem1_bound_report(&[tr], &ok, &[5]).unwrap();
        assert!(report.all_hold());
        assert_eq!(report.rows[0].worst_node, 0);
        assert_eq!(report.x0_l1_sum, 1.0);
    }
}
