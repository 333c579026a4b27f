//! TOML run configuration with every default embedded.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constraints::{ConstraintSpec, Metric, DEFAULT_EPSILON};
use crate::construct::{ConstructConfig, Mechanism};
use crate::data::{CsvSchema, GroupStats, SplitFractions, SynthSpec};
use crate::region::{GridConfig, GuardConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config encoding: {0}")]
    Emit(#[from] toml::ser::Error),
    #[error("invalid config value `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Single scored CSV split into train / post / test.
    pub input: Option<PathBuf>,
    /// Pre-split post-processing CSV (used with `test_path` instead of `input`).
    pub post_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub score_col: String,
    pub group_col: String,
    pub label_col: String,
    pub split: SplitFractions,
}

impl Default for DataSection {
    fn default() -> Self {
        let schema = CsvSchema::default();
        Self {
            input: None,
            post_path: None,
            test_path: None,
            score_col: schema.score_col,
            group_col: schema.group_col,
            label_col: schema.label_col,
            split: SplitFractions::default(),
        }
    }
}

impl DataSection {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            score_col: self.score_col.clone(),
            group_col: self.group_col.clone(),
            label_col: self.label_col.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveConstraint {
    pub metric: Metric,
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintsSection {
    pub active: Vec<ActiveConstraint>,
}

impl ConstraintsSection {
    pub fn specs(&self, stats: &GroupStats) -> Result<Vec<ConstraintSpec>, crate::constraints::ConstraintError> {
        self.active
            .iter()
            .map(|c| ConstraintSpec::builtin(c.metric, stats, c.delta, c.epsilon))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSection {
    pub single_points: usize,
    pub multi_points: usize,
    pub tau_alpha: f64,
    pub alpha_cap: f64,
    pub max_doublings: usize,
}

impl Default for RegionSection {
    fn default() -> Self {
        let (g, r) = (GridConfig::default(), GuardConfig::default());
        Self {
            single_points: g.single_points,
            multi_points: g.multi_points,
            tau_alpha: r.tau_alpha,
            alpha_cap: r.alpha_cap,
            max_doublings: r.max_doublings,
        }
    }
}

impl RegionSection {
    pub fn grid(&self) -> GridConfig {
        GridConfig {
            single_points: self.single_points,
            multi_points: self.multi_points,
        }
    }

    pub fn guard(&self) -> GuardConfig {
        GuardConfig {
            tau_alpha: self.tau_alpha,
            alpha_cap: self.alpha_cap,
            max_doublings: self.max_doublings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub hull_csv: bool,
    pub grid_csv: bool,
    /// Plain-text dump of the inner LP at the chosen grid point.
    pub dump_lp: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            hull_csv: false,
            grid_csv: false,
            dump_lp: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub constraints: ConstraintsSection,
    pub region: RegionSection,
    pub construct: ConstructConfig,
    pub output: OutputSection,
    pub synth: Option<SynthSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Effective configuration as TOML.
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Hex SHA-256 of the effective TOML with the `[output]` section reset,
    /// so where files land does not change the identity of what is in them.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let computational = RunConfig {
            output: OutputSection::default(),
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(computational.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.data
            .split
            .validate()
            .map_err(|e| invalid("data.split", e.to_string()))?;
        if self.data.input.is_none() && (self.data.post_path.is_some() != self.data.test_path.is_some()) {
            return Err(invalid("data.post_path", "post_path and test_path must be given together"));
        }
        for (i, c) in self.constraints.active.iter().enumerate() {
            let key = format!("constraints.active[{i}]");
            if c.metric == Metric::Custom {
                return Err(invalid(&key, "custom metrics are library-only"));
            }
            if !(0.0..=1.0).contains(&c.delta) {
                return Err(invalid(&key, format!("delta {} outside [0, 1]", c.delta)));
            }
            if !(c.epsilon > 0.0) {
                return Err(invalid(&key, format!("epsilon {} must be positive", c.epsilon)));
            }
        }
        let r = &self.region;
        if r.single_points == 0 || r.multi_points == 0 {
            return Err(invalid("region", "grid sizes must be at least 1"));
        }
        if !(r.tau_alpha > 0.0) {
            return Err(invalid("region.tau_alpha", "must be positive"));
        }
        if !(r.alpha_cap >= 1.0) {
            return Err(invalid("region.alpha_cap", "must be at least 1"));
        }
        let c = &self.construct;
        if !(c.snap_xi >= 0.0) {
            return Err(invalid("construct.snap_xi", "must be non-negative"));
        }
        if c.coarse_points < 2 {
            return Err(invalid("construct.coarse_points", "must be at least 2"));
        }
        if !(c.golden_tol > 0.0) {
            return Err(invalid("construct.golden_tol", "must be positive"));
        }
        Ok(())
    }

    pub fn with_mechanism(mut self, m: Mechanism) -> Self {
        self.construct.mechanism = m;
        self
    }
}
