//! Run configuration. Files are TOML restricted to dotted keys, for example
//! `agent.batch_size = 16`. Unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::BacktestConfig;
use crate::market_data::DEFAULT_GROUP_SIZE;
use crate::rl::AgentConfig;
use crate::state::StateConfig;
use crate::strategies::ArbrThresholds;
use crate::synth::GeneratorSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("no data source: set data.path or generator.kind")]
    MissingData,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// CSV of 1-minute bars.
    pub path: Option<PathBuf>,
    pub group_size: usize,
    /// Leading share of groups used for training; the rest is held out.
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: None, group_size: DEFAULT_GROUP_SIZE, train_fraction: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacdConfig {
    pub fast: usize,
    pub slow: usize,
    pub signal: usize,
}

impl Default for MacdConfig {
    fn default() -> Self {
        Self { fast: 12, slow: 26, signal: 9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Also train the feedforward ablation.
    pub train_dense: bool,
    /// Number of trailing states replayed from a zero carry at each decision;
    /// 0 carries the recurrent state across the whole series.
    pub context: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { train_dense: true, context: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub generator: Option<GeneratorSpec>,
    pub state: StateConfig,
    pub arbr: ArbrThresholds,
    pub macd: MacdConfig,
    pub agent: AgentConfig,
    pub backtest: BacktestConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.agent.validate().map_err(|e| invalid(e.to_string()))?;
        self.arbr.validate().map_err(|e| invalid(e.to_string()))?;
        if let Some(g) = &self.generator {
            g.validate().map_err(|e| invalid(format!("generator: {e}")))?;
        }
        if self.data.group_size == 0 {
            return Err(invalid("data.group_size must be at least 1".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(invalid("data.train_fraction must be in (0, 1)".into()));
        }
        if self.state.z_window < 2 || self.state.arbr_window == 0 {
            return Err(invalid("state.z_window must be at least 2 and state.arbr_window at least 1".into()));
        }
        if self.backtest.lot_size == 0 || self.backtest.fee_rate.is_sign_negative() {
            return Err(invalid("backtest.lot_size must be positive and backtest.fee_rate non-negative".into()));
        }
        if self.macd.fast == 0 || self.macd.fast >= self.macd.slow || self.macd.signal == 0 {
            return Err(invalid("macd periods must satisfy 0 < fast < slow and signal > 0".into()));
        }
        Ok(())
    }

    /// The resolved configuration as sorted `section.key = value` lines.
    pub fn to_flat_toml(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => out.push(format!("{prefix} = {leaf}")),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
