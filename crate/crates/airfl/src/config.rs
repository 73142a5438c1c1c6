//! Experiment configuration: a TOML tree with validated cross-field rules.
//!
//! Powers are written in dBm at the config boundary and converted once to a
//! linear milliwatt scale (`0 dBm -> 1.0`); all internal math is linear.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Aggregation scheme. Every scheme is the full pipeline with specific
/// stages replaced by their naive counterparts; reductions are asserted
/// structurally in tests via the per-round path trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Full pipeline: sequential clustering, optimized weights, cosine filter.
    Fedsac,
    /// Noise-free, attack-free, truncation-free benchmark with uniform weights.
    Ideal,
    /// Cosine filter bypassed; planning unchanged.
    NonRobust,
    /// Random clustering and uniform weights; filter and exclusion intact.
    RandomClustering,
    /// Sequential clustering with uniform weights; filter and exclusion intact.
    NoAdaptiveWeighting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Synthetic strongly-convex quadratic with closed-form constants.
    Quadratic,
    /// Linear softmax classifier on a synthetic feature task.
    Linear,
    /// 28x28 10-class image task (IDX files or built-in synthetic corpus).
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    SignFlip,
    GaussianNoise,
    LabelFlip,
}

/// "auto" or an explicit number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Auto(AutoTag),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl AutoOr {
    pub fn value_or(self, auto: f64) -> f64 {
        match self {
            AutoOr::Auto(_) => auto,
            AutoOr::Value(v) => v,
        }
    }
    pub fn is_auto(self) -> bool {
        matches!(self, AutoOr::Auto(_))
    }
}

fn default_rounds() -> u64 {
    200
}
fn default_eval_every() -> u64 {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Extra seed for the additive-noise streams; defaults to `seed`. Used by
    /// bound-witness runs that vary noise while the fading trace stays fixed.
    #[serde(default)]
    pub noise_seed: Option<u64>,
    pub scheme: Scheme,
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    /// Terminate after floor(budget / clusters) rounds when set: each round
    /// consumes one resource block per cluster.
    #[serde(default)]
    pub resource_budget: Option<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    pub fleet: FleetConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub weighting: WeightingConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    /// Total devices K.
    pub devices: usize,
    /// Clusters N per round; must divide `devices`.
    pub clusters: usize,
    /// Byzantine device count M (the first M indices of a seeded shuffle).
    #[serde(default)]
    pub byzantine: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Parameter dimension for `quadratic`; feature dimension for `linear`.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Train/test sizes for supervised tasks.
    #[serde(default)]
    pub train: Option<usize>,
    #[serde(default)]
    pub test: Option<usize>,
    #[serde(default)]
    pub batch: Option<usize>,
    /// Labels per device for the non-IID split (supervised tasks).
    #[serde(default)]
    pub labels_per_device: Option<usize>,
    /// Fraction of the training set held out as the server's root split.
    #[serde(default)]
    pub root_fraction: Option<f64>,
    /// Optional directory holding IDX image/label files; otherwise the
    /// deterministic synthetic corpus is generated in memory.
    #[serde(default)]
    pub idx_dir: Option<String>,
    /// Heterogeneity of the quadratic task: per-device gradient offset norm.
    #[serde(default)]
    pub hetero: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Truncation threshold on |h|.
    pub gamma_th: f64,
    /// Transmit power budget in dBm.
    pub p_max_dbm: f64,
    /// Additive noise power (linear, same scale as 1 mW = 0 dBm).
    pub sigma2: f64,
    /// Path-loss exponent: beta = d^(-exponent).
    pub pathloss_exp: f64,
    /// Device distance range in meters, sampled once per experiment.
    pub dist_range: [f64; 2],
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            gamma_th: 0.2,
            p_max_dbm: 0.0,
            sigma2: 1e-6,
            pathloss_exp: 1.1,
            dist_range: [150.0, 500.0],
        }
    }
}

impl ChannelConfig {
    /// Linear power budget, milliwatt scale.
    pub fn p_max(&self) -> f64 {
        10f64.powf(self.p_max_dbm / 10.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Gaussian attack parameters.
    #[serde(default = "one")]
    pub mean: f64,
    #[serde(default = "one")]
    pub std: f64,
    /// Byzantine devices transmit at full power, skipping the honest scaling.
    #[serde(default = "tru")]
    pub bypass_scaling: bool,
}

fn one() -> f64 {
    1.0
}
fn tru() -> bool {
    true
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            mean: 1.0,
            std: 1.0,
            bypass_scaling: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    /// Cosine-similarity survival threshold (boundary survives).
    pub rho: f64,
    /// Initialization rounds with uniform weights and random clustering.
    pub m0: u64,
    /// Exclusion penalty; "auto" selects it from init-phase statistics.
    pub absence_penalty: AutoOr,
    /// Assumed probability that a Byzantine-free cluster is excluded.
    pub q_hat: f64,
    /// Fairness target b; "auto" means 0.5 / K^2.
    pub fairness_b: AutoOr,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            rho: 0.0,
            m0: 10,
            absence_penalty: AutoOr::Auto(AutoTag::Auto),
            q_hat: 0.0,
            fairness_b: AutoOr::Auto(AutoTag::Auto),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingConfig {
    /// Contribution-vs-fairness tradeoff V.
    pub v: f64,
    /// Penalty schedule of the successive convexification loop.
    pub tau0: f64,
    pub mu_pen: f64,
    pub tau_max: f64,
    /// Slack tolerance for accepting an iterate as binary-feasible.
    pub chi: f64,
    /// Inner QP KKT tolerance.
    pub qp_tol: f64,
    /// Outer iteration cap; exceeding it flags the round as degraded.
    pub max_iters: usize,
    /// Dump each inner QP as plain text into this directory.
    #[serde(default)]
    pub dump_qp_dir: Option<String>,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig {
            v: 1e5,
            tau0: 1.0,
            mu_pen: 3.0,
            tau_max: 1e6,
            chi: 1e-4,
            qp_tol: 1e-7,
            max_iters: 100,
            dump_qp_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Learning rate; must satisfy eta < 1/L for contribution scores.
    pub eta: f64,
    /// Gradient clipping bound G; honest transmissions satisfy ||g|| <= G.
    pub g_bound: f64,
    /// Per-device deviation bound; "auto" estimates it at initialization.
    #[serde(default = "auto")]
    pub delta: AutoOr,
}

fn auto() -> AutoOr {
    AutoOr::Auto(AutoTag::Auto)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for metrics.csv / summary.json / checkpoint.json.
    #[serde(default)]
    pub dir: Option<String>,
    /// Write a state checkpoint every round.
    #[serde(default)]
    pub checkpoint: bool,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        let k = self.fleet.devices;
        let n = self.fleet.clusters;
        if k == 0 || n == 0 {
            return err("devices and clusters must be positive".into());
        }
        if k % n != 0 {
            return err(format!("clusters ({n}) must divide devices ({k})"));
        }
        if self.fleet.byzantine >= k {
            return err(format!(
                "byzantine count ({}) must be below devices ({k})",
                self.fleet.byzantine
            ));
        }
        if self.channel.gamma_th < 0.0 {
            return err("gamma_th must be non-negative".into());
        }
        if self.channel.sigma2 < 0.0 {
            return err("sigma2 must be non-negative".into());
        }
        if self.channel.dist_range[0] > self.channel.dist_range[1]
            || self.channel.dist_range[0] <= 0.0
        {
            return err("dist_range must be 0 < lo <= hi".into());
        }
        if self.training.eta <= 0.0 {
            return err("eta must be positive".into());
        }
        if self.training.g_bound <= 0.0 {
            return err("g_bound must be positive".into());
        }
        if self.defense.q_hat < 0.0 || self.defense.q_hat >= 1.0 {
            return err("q_hat must lie in [0, 1)".into());
        }
        if self.eval_every == 0 {
            return err("eval_every must be positive".into());
        }
        if let Some(f) = self.task.root_fraction {
            if !(0.0..1.0).contains(&f) {
                return err("root_fraction must lie in [0, 1)".into());
            }
        }
        Ok(())
    }

    /// Cluster size.
    pub fn cluster_size(&self) -> usize {
        self.fleet.devices / self.fleet.clusters
    }

    /// Rounds after applying the resource budget (one block per cluster per round).
    pub fn effective_rounds(&self) -> u64 {
        match self.resource_budget {
            Some(budget) => (budget / self.fleet.clusters as u64).min(self.rounds),
            None => self.rounds,
        }
    }

    /// Fairness target with the auto default 0.5 / K^2.
    pub fn fairness_b(&self) -> f64 {
        let k = self.fleet.devices as f64;
        self.defense.fairness_b.value_or(0.5 / (k * k))
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed.unwrap_or(self.seed)
    }
}
