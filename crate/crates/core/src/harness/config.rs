//! TOML experiment configuration.
//!
//! ```toml
//! n = 1000
//! horizon = 200
//! runs = 25
//! seed = 1
//!
//! [graph]
//! kind = "cycle_plus_random"
//!
//! [objective]
//! kind = "quadratic_estimation"
//! theta_hat = 0.0
//!
//! [schedule]
//! rule = "theorem1"
//! ```
//!
//! Unknown keys are rejected. See the README for every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::objectives::NoiseLaw;

fn default_runs() -> usize {
    1
}

fn default_tracked() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of nodes.
    pub n: usize,
    /// Number of optimizer steps `T`.
    pub horizon: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Output directory for `run`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub graph: GraphConfig,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphConfig {
    DirectedCycle,
    Complete,
    CyclePlusRandom,
    AlternatingStars {
        #[serde(default)]
        hub_a: usize,
        #[serde(default = "one")]
        hub_b: usize,
    },
    /// `t src dst` lines, repeated periodically.
    EdgeList {
        path: PathBuf,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// `sum_i p_i (theta - u_i)^2` with random weights and measurements.
    QuadraticEstimation {
        #[serde(default)]
        theta_hat: f64,
        #[serde(default)]
        noise_bound: f64,
        #[serde(default)]
        noise_law: NoiseLaw,
    },
    /// Random SPD quadratics in `dim` dimensions.
    RandomQuadratic {
        dim: usize,
        #[serde(default)]
        noise_bound: f64,
        #[serde(default)]
        noise_law: NoiseLaw,
    },
    /// `mu/2 ||z||^2 + |z_1|` at every node.
    RidgeL1 {
        dim: usize,
        mu: f64,
        #[serde(default)]
        noise_bound: f64,
        #[serde(default)]
        noise_law: NoiseLaw,
    },
}

impl ObjectiveConfig {
    pub fn noise(&self) -> (f64, NoiseLaw) {
        match *self {
            Self::QuadraticEstimation {
                noise_bound,
                noise_law,
                ..
            }
            | Self::RandomQuadratic {
                noise_bound,
                noise_law,
                ..
            }
            | Self::RidgeL1 {
                noise_bound,
                noise_law,
                ..
            } => (noise_bound, noise_law),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// `p = 4n / sum(mu)`.
    #[default]
    Theorem1,
    /// `p` from a min-consensus over the graph; `rounds` defaults to `n B`.
    ConservativeMin {
        #[serde(default)]
        rounds: Option<usize>,
    },
    Explicit {
        p: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialConfig {
    /// Independent standard Gaussian coordinates.
    #[default]
    Gaussian,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Metric families to record; all when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<Vec<String>>,
    /// Nodes sampled for per-node metrics (all nodes when `n` is not larger).
    #[serde(default = "default_tracked")]
    pub tracked_nodes: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            enabled: None,
            tracked_nodes: default_tracked(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |field: &str, msg: String| Err(HarnessError::Config(format!("{field}: {msg}")));
        if self.n == 0 {
            return fail("n", "must be at least 1".into());
        }
        if self.horizon < 2 {
            return fail(
                "horizon",
                format!("must be at least 2, got {}", self.horizon),
            );
        }
        if self.runs == 0 {
            return fail("runs", "must be at least 1".into());
        }
        match &self.graph {
            GraphConfig::CyclePlusRandom if self.n < 2 => {
                return fail("graph.kind", "cycle_plus_random needs n >= 2".into());
            }
            GraphConfig::AlternatingStars { hub_a, hub_b } => {
                if hub_a == hub_b {
                    return fail("graph.hub_b", "hubs must differ".into());
                }
                if *hub_a >= self.n || *hub_b >= self.n {
                    return fail("graph.hub_a", format!("hubs must be below n = {}", self.n));
                }
            }
            _ => {}
        }
        let (bound, _) = self.objective.noise();
        if !(bound.is_finite() && bound >= 0.0) {
            return fail(
                "objective.noise_bound",
                format!("must be finite and >= 0, got {bound}"),
            );
        }
        match self.objective {
            ObjectiveConfig::RandomQuadratic { dim: 0, .. }
            | ObjectiveConfig::RidgeL1 { dim: 0, .. } => {
                return fail("objective.dim", "must be at least 1".into());
            }
            ObjectiveConfig::RidgeL1 { mu, .. } if !(mu > 0.0) => {
                return fail("objective.mu", format!("must be positive, got {mu}"));
            }
            _ => {}
        }
        if let ScheduleConfig::Explicit { p } = self.schedule {
            if !(p.is_finite() && p > 0.0) {
                return fail("schedule.p", format!("must be positive, got {p}"));
            }
        }
        if let Some(enabled) = &self.metrics.enabled {
            for name in enabled {
                if super::trace::MetricFamily::from_name(name).is_none() {
                    return fail("metrics.enabled", format!("unknown metric `{name}`"));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
