//! Per-group agent state: z-scored log returns, z-scored indicators, AR, BR.

use serde::{Deserialize, Serialize};

use crate::indicators::{
    ar_indicator, br_indicator, log_returns, zscore, IndicatorSeries, IndicatorStream, DEFAULT_ARBR_WINDOW,
    DEFAULT_RETURN_LAGS, INDICATOR_COUNT, INDICATOR_NAMES, SUITE_LOOKBACK,
};
use crate::market_data::{ohlcv_series, GroupBar, Ohlcv};

pub const DEFAULT_Z_WINDOW: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    pub return_lags: usize,
    pub z_window: usize,
    pub arbr_window: usize,
    pub use_indicators: bool,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self {
            return_lags: DEFAULT_RETURN_LAGS,
            z_window: DEFAULT_Z_WINDOW,
            arbr_window: DEFAULT_ARBR_WINDOW,
            use_indicators: true,
        }
    }
}

impl StateConfig {
    fn indicator_count(&self) -> usize {
        if self.use_indicators {
            INDICATOR_COUNT
        } else {
            0
        }
    }
}

/// Length of the feature vector: lags + indicators + AR + BR.
pub fn state_dimension(config: &StateConfig) -> usize {
    config.return_lags + config.indicator_count() + 2
}

/// Smallest group index at which a state can be valid.
///
/// Each return feature is the return's z-score against the `z_window`
/// returns ending at it, so the oldest lag needs `z_window + lags - 1`
/// returns. Each indicator feature needs `z_window` defined indicator values.
/// BR needs `arbr_window + 1` bars.
pub fn warmup_length(config: &StateConfig) -> usize {
    let returns = config.z_window + config.return_lags - 1;
    let indicators = if config.use_indicators { SUITE_LOOKBACK + config.z_window - 1 } else { 0 };
    returns.max(indicators).max(config.arbr_window)
}

/// Column names in feature order.
pub fn feature_names(config: &StateConfig) -> Vec<String> {
    let mut names: Vec<String> = (1..=config.return_lags).map(|k| format!("logret_{k}")).collect();
    if config.use_indicators {
        names.extend(INDICATOR_NAMES.iter().map(|n| n.to_string()));
    }
    names.push("ar".into());
    names.push("br".into());
    names
}

#[derive(Debug, Clone, PartialEq)]
pub struct StockState {
    /// `[logret_1..logret_L, indicator_1..indicator_20, ar/100, br/100]`,
    /// returns oldest first. Zero-filled where undefined.
    pub features: Vec<f64>,
    pub group_index: usize,
    pub valid: bool,
}

/// Precomputed series shared by every state of one group series. Groups can
/// also be appended one at a time with [`StateBuilder::push`].
pub struct StateBuilder {
    config: StateConfig,
    bars: Vec<Ohlcv<f64>>,
    closes: Vec<f64>,
    indicators: Option<IndicatorSeries<f64>>,
    stream: IndicatorStream<f64>,
}

impl StateBuilder {
    pub fn new(groups: &[GroupBar], config: &StateConfig) -> Self {
        let bars = ohlcv_series::<f64>(groups);
        Self::from_ohlcv(bars, config)
    }

    pub fn from_ohlcv(bars: Vec<Ohlcv<f64>>, config: &StateConfig) -> Self {
        let mut builder = Self::empty(config);
        for bar in bars {
            builder.push(bar);
        }
        builder
    }

    pub fn empty(config: &StateConfig) -> Self {
        Self {
            config: config.clone(),
            bars: Vec::new(),
            closes: Vec::new(),
            indicators: config.use_indicators.then(IndicatorSeries::default),
            stream: IndicatorStream::new(),
        }
    }

    pub fn bars(&self) -> &[Ohlcv<f64>] {
        &self.bars
    }

    pub fn config(&self) -> &StateConfig {
        &self.config
    }

    /// Appends the next group.
    pub fn push(&mut self, bar: Ohlcv<f64>) {
        if let Some(series) = self.indicators.as_mut() {
            series.push(self.stream.push(&bar));
        }
        self.closes.push(bar.close);
        self.bars.push(bar);
    }

    /// State of the most recently pushed group.
    pub fn latest(&self) -> Option<StockState> {
        self.bars.len().checked_sub(1).map(|t| self.state(t))
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    /// Rolling z-score of the return ending at group `g`.
    fn return_feature(&self, g: usize) -> Option<f64> {
        let z = self.config.z_window;
        let returns = log_returns(&self.closes[..=g], z).ok()?;
        zscore(&returns, z).ok().map(|(values, _)| values[z - 1])
    }

    fn indicator_feature(&self, index: usize, at: usize) -> Option<f64> {
        let z = self.config.z_window;
        let column = self.indicators.as_ref()?.column(index, (at + 1).checked_sub(z)?, at)?;
        zscore(&column, z).ok().map(|(values, _)| values[z - 1])
    }

    pub fn state(&self, at: usize) -> StockState {
        let cfg = &self.config;
        let mut valid = at >= warmup_length(cfg) && at < self.bars.len();
        let mut features = Vec::with_capacity(state_dimension(cfg));
        let at = at.min(self.bars.len().saturating_sub(1));

        for lag in 0..cfg.return_lags {
            let g = (at + 1 + lag).checked_sub(cfg.return_lags);
            match g.and_then(|g| self.return_feature(g)) {
                Some(v) => features.push(v),
                None => {
                    valid = false;
                    features.push(0.0);
                }
            }
        }
        if cfg.use_indicators {
            for index in 0..INDICATOR_COUNT {
                match self.indicator_feature(index, at) {
                    Some(v) => features.push(v),
                    None => {
                        valid = false;
                        features.push(0.0);
                    }
                }
            }
        }
        let history = &self.bars[..=at];
        for value in [ar_indicator(history, cfg.arbr_window), br_indicator(history, cfg.arbr_window)] {
            match value.ok().flatten() {
                Some(v) => features.push(v / 100.0),
                None => {
                    valid = false;
                    features.push(0.0);
                }
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            valid = false;
            features.iter_mut().filter(|v| !v.is_finite()).for_each(|v| *v = 0.0);
        }
        StockState { features, group_index: at, valid }
    }

    pub fn all_states(&self) -> Vec<StockState> {
        (0..self.bars.len()).map(|t| self.state(t)).collect()
    }
}

/// State at group `at`. Insufficient history yields `valid = false`.
pub fn build_state(groups: &[GroupBar], at: usize, config: &StateConfig) -> StockState {
    let end = (at + 1).min(groups.len());
    StateBuilder::new(&groups[..end], config).state(at)
}

pub fn build_states(groups: &[GroupBar], config: &StateConfig) -> Vec<StockState> {
    StateBuilder::new(groups, config).all_states()
}
