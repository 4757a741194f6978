//! Log-log least-squares fits of convergence curves.

use super::run::mean_and_se;
use super::trace::{Metric, RunTrace};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub points: usize,
}

/// Ordinary least squares of `ln(value)` on `ln(t)`.
pub fn fit_power_law(ts: &[f64], values: &[f64]) -> Result<RateFit, HarnessError> {
    if ts.len() != values.len() || ts.len() < 3 {
        return Err(HarnessError::Fit(format!(
            "need at least 3 paired points, got {}",
            ts.len().min(values.len())
        )));
    }
    if let Some((t, v)) = ts
        .iter()
        .zip(values)
        .find(|(t, v)| !(**t > 0.0 && **v > 0.0))
    {
        return Err(HarnessError::Fit(format!(
            "non-positive value {v} at t = {t}"
        )));
    }
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / m;
    let y_mean = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    if sxx == 0.0 {
        return Err(HarnessError::Fit("all points share one t".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let slope_se = (ssr / (m - 2.0) / sxx).sqrt();
    Ok(RateFit {
        slope,
        intercept,
        slope_se,
        points: xs.len(),
    })
}

/// `(t, value)` pairs of `metric` in `[from, to]`, averaged over the
/// selected node (or over all recorded nodes when `node` is `None`).
fn curve(
    trace: &RunTrace,
    metric: Metric,
    from: usize,
    to: usize,
    node: Option<usize>,
) -> (Vec<f64>, Vec<f64>) {
    let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for r in trace
        .series(metric, node)
        .filter(|r| (from..=to).contains(&r.t))
    {
        let e = sums.entry(r.t).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(t, (s, c))| (t as f64, s / c as f64))
        .unzip()
}

/// Fits the Monte Carlo mean of `metric` over the window `[from, to]`.
pub fn rate_fit(
    traces: &[RunTrace],
    metric: Metric,
    from: usize,
    to: usize,
    node: Option<usize>,
) -> Result<RateFit, HarnessError> {
    let mut acc: std::collections::BTreeMap<u64, (f64, usize)> = Default::default();
    for tr in traces {
        let (ts, vs) = curve(tr, metric, from, to, node);
        for (t, v) in ts.into_iter().zip(vs) {
            let e = acc.entry(t as u64).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let (ts, vs): (Vec<f64>, Vec<f64>) = acc
        .into_iter()
        .map(|(t, (s, c))| (t as f64, s / c as f64))
        .unzip();
    if ts.is_empty() {
        return Err(HarnessError::Fit(format!(
            "no `{metric}` records in [{from}, {to}]"
        )));
    }
    fit_power_law(&ts, &vs)
}

/// Slope fitted separately in every run.
pub fn per_run_fits(
    traces: &[RunTrace],
    metric: Metric,
    from: usize,
    to: usize,
    node: Option<usize>,
) -> Result<Vec<RateFit>, HarnessError> {
    traces
        .iter()
        .map(|tr| {
            let (ts, vs) = curve(tr, metric, from, to, node);
            fit_power_law(&ts, &vs)
        })
        .collect()
}

/// Monte Carlo mean and standard error of the per-run slopes.
pub fn slope_mean_and_se(fits: &[RateFit]) -> (f64, f64) {
    mean_and_se(&fits.iter().map(|f| f.slope).collect::<Vec<_>>())
}
