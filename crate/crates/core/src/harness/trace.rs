//! Time-indexed run metrics and their CSV form.
//!
//! The CSV has the header `run,t,node,metric,value`, one row per record,
//! sorted by `(run, t, node, metric)`. Network-wide metrics leave `node`
//! empty and sort before per-node rows. Values carry 17 significant digits
//! so a parse and re-emit reproduces the file byte for byte.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use super::HarnessError;

pub const CSV_HEADER: &str = "run,t,node,metric,value";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// `ln |zhat_i(t) - theta*|` (scalar problems).
    LnErrZhat,
    /// `ln |z_i(t) - theta*|` (scalar problems).
    LnErrZ,
    /// `||z_i(t) - z*||`.
    DistZ,
    /// `||zhat_i(t) - z*||`.
    DistZhat,
    /// `F(zhat_i(t)) - F(z*)`.
    GapZhat,
    /// `F(zhat_i(t)) - F(z*) + sum_j mu_j ||zhat_j(t) - z*||^2`.
    Theorem1Lhs,
    /// Coordinate `k` of `zhat_i(t)`.
    Zhat(u16),
    /// `max_i ||z_i(t) - mean_j x_j(t-1)||`.
    ConsensusResidual,
    /// `max_i ||z_i(t)||`.
    MaxIterateNorm,
    /// `sum_j ||alpha(t) g_j(t)||_1`.
    PerturbationL1,
    /// `sum_j ||x_j(0)||_1`, recorded at `t = 0`.
    X0L1,
    /// Set to 1 at the step where the divergence guard fired.
    Diverged,
}

/// Groups of metrics that can be toggled in the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricFamily {
    LnErrZhat,
    LnErrZ,
    DistZ,
    DistZhat,
    GapZhat,
    Theorem1Lhs,
    Zhat,
    ConsensusResidual,
    MaxIterateNorm,
    PerturbationL1,
    X0L1,
}

impl MetricFamily {
    pub const ALL: [MetricFamily; 11] = [
        Self::LnErrZhat,
        Self::LnErrZ,
        Self::DistZ,
        Self::DistZhat,
        Self::GapZhat,
        Self::Theorem1Lhs,
        Self::Zhat,
        Self::ConsensusResidual,
        Self::MaxIterateNorm,
        Self::PerturbationL1,
        Self::X0L1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::LnErrZhat => "ln_err_zhat",
            Self::LnErrZ => "ln_err_z",
            Self::DistZ => "dist_z",
            Self::DistZhat => "dist_zhat",
            Self::GapZhat => "gap_zhat",
            Self::Theorem1Lhs => "theorem1_lhs",
            Self::Zhat => "zhat",
            Self::ConsensusResidual => "consensus_residual",
            Self::MaxIterateNorm => "max_iterate_norm",
            Self::PerturbationL1 => "perturbation_l1",
            Self::X0L1 => "x0_l1",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl Metric {
    pub fn name(&self) -> Cow<'static, str> {
        match self {
            Self::LnErrZhat => "ln_err_zhat".into(),
            Self::LnErrZ => "ln_err_z".into(),
            Self::DistZ => "dist_z".into(),
            Self::DistZhat => "dist_zhat".into(),
            Self::GapZhat => "gap_zhat".into(),
            Self::Theorem1Lhs => "theorem1_lhs".into(),
            Self::Zhat(k) => format!("zhat_{k}").into(),
            Self::ConsensusResidual => "consensus_residual".into(),
            Self::MaxIterateNorm => "max_iterate_norm".into(),
            Self::PerturbationL1 => "perturbation_l1".into(),
            Self::X0L1 => "x0_l1".into(),
            Self::Diverged => "diverged".into(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Metric {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(k) = s.strip_prefix("zhat_") {
            return k
                .parse()
                .map(Metric::Zhat)
                .map_err(|_| HarnessError::Config(format!("unknown metric `{s}`")));
        }
        if s == "diverged" {
            return Ok(Metric::Diverged);
        }
        let family = MetricFamily::from_name(s)
            .filter(|f| *f != MetricFamily::Zhat)
            .ok_or_else(|| HarnessError::Config(format!("unknown metric `{s}`")))?;
        Ok(match family {
            MetricFamily::LnErrZhat => Self::LnErrZhat,
            MetricFamily::LnErrZ => Self::LnErrZ,
            MetricFamily::DistZ => Self::DistZ,
            MetricFamily::DistZhat => Self::DistZhat,
            MetricFamily::GapZhat => Self::GapZhat,
            MetricFamily::Theorem1Lhs => Self::Theorem1Lhs,
            MetricFamily::ConsensusResidual => Self::ConsensusResidual,
            MetricFamily::MaxIterateNorm => Self::MaxIterateNorm,
            MetricFamily::PerturbationL1 => Self::PerturbationL1,
            MetricFamily::X0L1 => Self::X0L1,
            MetricFamily::Zhat => unreachable!(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: usize,
    /// `None` for network-wide metrics.
    pub node: Option<usize>,
    pub metric: Metric,
    pub value: f64,
}

/// Metrics of one Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub run: usize,
    pub records: Vec<Record>,
    /// Step at which the divergence guard fired, if it did.
    pub diverged_at: Option<usize>,
}

impl RunTrace {
    pub fn new(run: usize) -> Self {
        Self {
            run,
            records: Vec::new(),
            diverged_at: None,
        }
    }

    pub fn push(&mut self, t: usize, node: Option<usize>, metric: Metric, value: f64) {
        self.records.push(Record {
            t,
            node,
            metric,
            value,
        });
    }

    /// Records of `metric`, optionally restricted to one node.
    pub fn series(
        &self,
        metric: Metric,
        node: Option<usize>,
    ) -> impl Iterator<Item = &Record> + '_ {
        self.records
            .iter()
            .filter(move |r| r.metric == metric && (node.is_none() || r.node == node))
    }

    pub fn value(&self, t: usize, node: Option<usize>, metric: Metric) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.t == t && r.node == node && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn max_t(&self) -> usize {
        self.records.iter().map(|r| r.t).max().unwrap_or(0)
    }
}

fn record_order(run_a: usize, a: &Record, run_b: usize, b: &Record) -> Ordering {
    run_a
        .cmp(&run_b)
        .then(a.t.cmp(&b.t))
        .then(a.node.cmp(&b.node))
        .then_with(|| a.metric.name().cmp(&b.metric.name()))
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the traces as CSV to any writer.
pub fn write_csv<W: Write>(traces: &[RunTrace], mut out: W) -> std::io::Result<()> {
    let mut rows: Vec<(usize, &Record)> = traces
        .iter()
        .flat_map(|tr| tr.records.iter().map(move |r| (tr.run, r)))
        .collect();
    rows.sort_by(|(ra, a), (rb, b)| record_order(*ra, a, *rb, b));
    writeln!(out, "{CSV_HEADER}")?;
    for (run, r) in rows {
        let node = r.node.map(|n| n.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{run},{},{node},{},{}",
            r.t,
            r.metric,
            format_value(r.value)
        )?;
    }
    out.flush()
}

/// Writes the traces as CSV to `path`.
pub fn emit_csv(traces: &[RunTrace], path: &Path) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_csv(traces, std::io::BufWriter::new(file)).map_err(|e| HarnessError::io(path, e))
}

/// Parses CSV produced by [`write_csv`] back into per-run traces.
pub fn parse_csv(text: &str) -> Result<Vec<RunTrace>, HarnessError> {
    let bad = |line: usize, msg: String| HarnessError::Trace(format!("line {line}: {msg}"));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(bad(1, format!("expected header `{CSV_HEADER}`")));
    }
    let mut traces: Vec<RunTrace> = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| bad(line, e.to_string()))?;
        if row.len() != 5 {
            return Err(bad(line, format!("expected 5 fields, found {}", row.len())));
        }
        let int = |k: usize| -> Result<usize, HarnessError> {
            row[k]
                .parse()
                .map_err(|_| bad(line, format!("`{}` is not an integer", &row[k])))
        };
        let run = int(0)?;
        let t = int(1)?;
        let node = if row[2].is_empty() {
            None
        } else {
            Some(int(2)?)
        };
        let metric: Metric = row[3]
            .parse()
            .map_err(|_| bad(line, format!("unknown metric `{}`", &row[3])))?;
        let value: f64 = row[4]
            .parse()
            .map_err(|_| bad(line, format!("`{}` is not a number", &row[4])))?;
        let trace = match traces.iter_mut().position(|tr| tr.run == run) {
            Some(pos) => &mut traces[pos],
            None => {
                traces.push(RunTrace::new(run));
                traces.last_mut().expect("just pushed")
            }
        };
        if metric == Metric::Diverged {
            trace.diverged_at = Some(t);
        }
        trace.push(t, node, metric, value);
    }
    traces.sort_by_key(|tr| tr.run);
    Ok(traces)
}

pub fn read_csv(path: &Path) -> Result<Vec<RunTrace>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_csv(&text)
}
