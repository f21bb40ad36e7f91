use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{plaquette_dim, DataKind, DataSpec};
use crate::error::{Error, Result};
use crate::model::Activation;
use crate::optim::AdamConfig;
use crate::parameterization::{dims_for, BaseRates, Dims, OptimizerKind, ScalingRegime};

pub const SCHEMA_VERSION: u32 = 1;

/// A full experiment: one regime, one model family, a scale ladder and an
/// `η₀` grid. Parsed from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub regime: ScalingRegime,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataSpec,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub activation: Activation,
    #[serde(default)]
    pub centered: bool,
    #[serde(default = "yes")]
    pub trainable_biases: bool,
    /// Standard deviation of the Gaussian bias initialization.
    #[serde(default = "one")]
    pub bias_init_std: f64,
    #[serde(default = "one")]
    pub s1_0: f64,
    #[serde(default = "one")]
    pub s2_0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Bias learning rates; `η₀` when absent.
    #[serde(default)]
    pub eta_b0: Option<f64>,
    #[serde(default)]
    pub eta_c0: Option<f64>,
    #[serde(default)]
    pub override_softmax_sgd: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    Off,
    Epoch,
    Step,
}

/// `2^min, 2^(min+1), …, 2^max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Log2Range {
    pub min: i32,
    pub max: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `N` values (proportional), `K` values (K-only), or plaquette blocks
    /// for proportional MNIST runs.
    pub scales: Vec<usize>,
    /// Explicit grid; overrides `eta0_log2`.
    #[serde(default)]
    pub eta0: Option<Vec<f64>>,
    #[serde(default = "default_log2")]
    pub eta0_log2: Log2Range,
    pub epochs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_cadence")]
    pub diagnostics: Cadence,
    /// Record diagnostics every this many epochs (or steps).
    #[serde(default = "one_usize")]
    pub diagnostics_every: usize,
    /// Include the update decomposition in SGD diagnostics.
    #[serde(default = "yes")]
    pub decomposition: bool,
    /// Projected wall-clock cap for the budget warning.
    #[serde(default)]
    pub budget_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_log2() -> Log2Range {
    Log2Range { min: -12, max: 2 }
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_cadence() -> Cadence {
    Cadence::Epoch
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating, so callers can apply overrides first.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::read(path)?;
        cfg.validate().map_err(|e| with_path(e, path))?;
        Ok(cfg)
    }

    /// Reads and parses a file without validating.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| with_path(e, path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let s = &self.sweep;
        if s.epochs == 0 {
            return fail("sweep.epochs must be at least 1");
        }
        if s.scales.is_empty() {
            return fail("sweep.scales must not be empty");
        }
        if s.scales.contains(&0) {
            return fail("sweep.scales entries must be positive");
        }
        if s.seeds.is_empty() {
            return fail("sweep.seeds must not be empty");
        }
        if s.diagnostics_every == 0 {
            return fail("sweep.diagnostics_every must be at least 1");
        }
        let grid = self.eta_grid();
        if grid.is_empty() {
            return fail("the eta0 grid is empty");
        }
        if grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return fail("eta0 values must be positive and finite");
        }
        if !(self.data.noise_std >= 0.0 && self.data.noise_std.is_finite()) {
            return fail("data.noise_std must be non-negative");
        }
        if !(self.model.bias_init_std >= 0.0 && self.model.bias_init_std.is_finite()) {
            return fail("model.bias_init_std must be non-negative");
        }
        if !(self.model.s1_0 > 0.0 && self.model.s2_0 > 0.0) {
            return fail("model.s1_0 and model.s2_0 must be positive");
        }
        match self.regime {
            ScalingRegime::Proportional { kappa, rho, beta } => {
                if !(kappa > 0.0 && rho > 0.0 && beta > 0.0 && beta <= 1.0) {
                    return fail("proportional regime needs kappa, rho > 0 and 0 < beta <= 1");
                }
            }
            ScalingRegime::KOnly { n, p, beta } => {
                if n == 0 || p == 0 || !(beta > 0.0 && beta <= 1.0) {
                    return fail("k_only regime needs n, p >= 1 and 0 < beta <= 1");
                }
                if let DataKind::Mnist { block, .. } = self.data.kind {
                    match block {
                        Some(j) if plaquette_dim(j) == n => {}
                        _ => return fail("k_only MNIST runs need data.block with plaquette dimension equal to regime.n"),
                    }
                }
            }
        }
        if let DataKind::Mnist { .. } = self.data.kind {
            let bad = self.is_block_ladder() && s.scales.iter().any(|&j| j > crate::data::MNIST_SIDE);
            if bad {
                return fail("plaquette blocks must lie in 1..=28");
            }
        }
        crate::parameterization::rule(
            &self.regime,
            &self.model.activation,
            self.optimizer.kind,
            self.optimizer.override_softmax_sgd,
        )?;
        Ok(())
    }

    pub fn eta_grid(&self) -> Vec<f64> {
        match &self.sweep.eta0 {
            Some(v) => v.clone(),
            None => {
                let r = self.sweep.eta0_log2;
                (r.min..=r.max).map(|e| 2f64.powi(e)).collect()
            }
        }
    }

    /// Proportional MNIST sweeps read the ladder as plaquette blocks.
    pub fn is_block_ladder(&self) -> bool {
        matches!(self.data.kind, DataKind::Mnist { .. })
            && matches!(self.regime, ScalingRegime::Proportional { .. })
    }

    /// Dimensions of one ladder entry. `available` caps `P` at the dataset
    /// size, with `B` recomputed from the clamped `P`.
    pub fn dims(&self, scale: usize, available: Option<usize>) -> Dims {
        let ladder = if self.is_block_ladder() { plaquette_dim(scale) } else { scale };
        let mut d = dims_for(&self.regime, ladder);
        if let Some(cap) = available {
            if d.p > cap {
                let beta = d.b as f64 / d.p as f64;
                d.p = cap;
                d.b = ((beta * cap as f64).round() as usize).clamp(1, cap);
            }
        }
        d
    }

    pub fn base_rates(&self, eta0: f64) -> BaseRates {
        BaseRates {
            eta0,
            eta_b0: self.optimizer.eta_b0,
            eta_c0: self.optimizer.eta_c0,
            s1_0: self.model.s1_0,
            s2_0: self.model.s2_0,
        }
    }

    /// Number of `(scale, η₀, seed)` cells.
    pub fn cell_count(&self) -> usize {
        self.sweep.scales.len() * self.eta_grid().len() * self.sweep.seeds.len()
    }
}

/// Floating-point throughput assumed by [`estimate_seconds`].
pub const DEFAULT_FLOPS: f64 = 4e9;

/// Projected wall time of a full sweep: about ten `N·K·B` products per
/// step, `⌈P/B⌉` steps per epoch, summed over cells, divided by the thread
/// count.
pub fn estimate_seconds(cfg: &ExperimentConfig, flops: f64, threads: usize) -> f64 {
    let per_scale: f64 = cfg
        .sweep
        .scales
        .iter()
        .map(|&s| {
            let d = cfg.dims(s, None);
            let steps = d.p.div_ceil(d.b) as f64;
            10.0 * 2.0 * (d.n * d.k * d.b) as f64 * steps * cfg.sweep.epochs as f64
        })
        .sum();
    let cells = (cfg.eta_grid().len() * cfg.sweep.seeds.len()) as f64;
    per_scale * cells / flops / threads.max(1) as f64
}

/// `Some(message)` when the projection exceeds the configured cap.
pub fn budget_warning(cfg: &ExperimentConfig, threads: usize) -> Option<String> {
    let cap = cfg.sweep.budget_seconds?;
    let est = estimate_seconds(cfg, DEFAULT_FLOPS, threads);
    (est > cap).then(|| {
        format!("projected run time {est:.0} s exceeds the configured budget of {cap:.0} s")
    })
}
