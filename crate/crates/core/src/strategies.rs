//! Trading signals: the ARBR rule, the network's greedy signal, their
//! fusion, and baseline strategies.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{BacktestResult, Strategy};
use crate::indicators::{ArBrValue, Ema, DEFAULT_ARBR_WINDOW};
use crate::market_data::{GroupBar, Ohlcv};
use crate::nn::{HiddenState, NetError, QNet};
use crate::rl::{greedy_action, Action, AgentError};
use crate::state::{StateBuilder, StateConfig, StockState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("state at group {0} is not valid")]
    InvalidState(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient history: need {needed} groups, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArbrThresholds {
    pub ar_buy: f64,
    pub ar_sell: f64,
    pub br_buy: f64,
    pub br_sell: f64,
}

impl Default for ArbrThresholds {
    fn default() -> Self {
        Self { ar_buy: 50.0, ar_sell: 150.0, br_buy: 50.0, br_sell: 300.0 }
    }
}

impl ArbrThresholds {
    pub fn validate(&self) -> Result<(), StrategyError> {
        if self.ar_buy < self.ar_sell && self.br_buy < self.br_sell {
            Ok(())
        } else {
            Err(StrategyError::InvalidThresholds("buy thresholds must be below sell thresholds".into()))
        }
    }
}

/// Buy when both AR and BR are below their buy bands, Sell when either is
/// above its sell band, Hold otherwise or when either value is absent.
pub fn arbr_signal(value: &ArBrValue<f64>, thresholds: &ArbrThresholds) -> Action {
    let (Some(ar), Some(br)) = (value.ar, value.br) else {
        return Action::Hold;
    };
    if ar > thresholds.ar_sell || br > thresholds.br_sell {
        Action::Sell
    } else if ar < thresholds.ar_buy && br < thresholds.br_buy {
        Action::Buy
    } else {
        Action::Hold
    }
}

/// Greedy network action for a valid state, with the advanced carry.
pub fn drqn_signal(
    net: &QNet<f64>,
    hidden: &HiddenState<f64>,
    state: &StockState,
) -> Result<(Action, HiddenState<f64>), StrategyError> {
    if !state.valid {
        return Err(StrategyError::InvalidState(state.group_index));
    }
    let (q, next) = net.step(&state.features, hidden)?;
    Ok((greedy_action(&q)?, next))
}

/// `s1` when both signals agree, Hold otherwise.
pub fn fuse(s1: Action, s2: Action) -> Action {
    if s1 == s2 {
        s1
    } else {
        Action::Hold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeSignal {
    pub group_index: usize,
    pub ar: Option<f64>,
    pub br: Option<f64>,
    pub s1: Action,
    pub s2: Action,
    pub fused: Action,
}

/// Buys at the first group and holds.
#[derive(Debug, Clone, Default)]
pub struct BuyAndHold;

impl Strategy for BuyAndHold {
    fn name(&self) -> &str {
        "buy_and_hold"
    }

    fn decide(&mut self, history: &[GroupBar]) -> Action {
        if history.len() == 1 {
            Action::Buy
        } else {
            Action::Hold
        }
    }
}

pub fn baseline_buy_hold(groups: &[GroupBar]) -> Result<Vec<Action>, StrategyError> {
    if groups.is_empty() {
        return Err(StrategyError::EmptyInput);
    }
    Ok(crate::backtest::strategy_actions(&mut BuyAndHold, groups))
}

#[derive(Debug, Clone, Default)]
pub struct AllHold;

impl Strategy for AllHold {
    fn name(&self) -> &str {
        "all_hold"
    }

    fn decide(&mut self, _history: &[GroupBar]) -> Action {
        Action::Hold
    }
}

/// Appends groups not yet seen to a float view of the history.
#[derive(Debug, Clone, Default)]
struct HistoryView {
    bars: Vec<Ohlcv<f64>>,
}

impl HistoryView {
    fn sync(&mut self, history: &[GroupBar]) -> usize {
        if history.len() < self.bars.len() {
            self.bars.clear();
        }
        for g in &history[self.bars.len()..] {
            self.bars.push(g.ohlcv());
        }
        self.bars.len()
    }
}

/// Differences below this fraction of the close count as zero, so float
/// residue in flat markets never registers as a crossing.
const MACD_FLAT: f64 = 1e-12;

/// Buy when the MACD line crosses above its signal line, Sell when it
/// crosses below.
#[derive(Debug, Clone)]
pub struct MacdCrossover {
    fast: usize,
    slow: usize,
    signal: usize,
    closes_seen: usize,
    fast_ema: Ema<f64>,
    slow_ema: Ema<f64>,
    signal_ema: Ema<f64>,
    prev_diff: Option<f64>,
}

impl MacdCrossover {
    pub fn new(fast: usize, slow: usize, signal: usize) -> Self {
        Self {
            fast,
            slow,
            signal,
            closes_seen: 0,
            fast_ema: Ema::new(fast),
            slow_ema: Ema::new(slow),
            signal_ema: Ema::new(signal),
            prev_diff: None,
        }
    }

    /// Groups needed before the first possible crossing.
    pub fn warmup(&self) -> usize {
        self.slow.max(self.fast) + self.signal
    }

    fn step(&mut self, close: f64) -> Action {
        self.closes_seen += 1;
        let fast = self.fast_ema.push(close);
        let slow = self.slow_ema.push(close);
        let Some(line) = fast.zip(slow).map(|(f, s)| f - s) else {
            return Action::Hold;
        };
        let Some(signal) = self.signal_ema.push(line) else {
            return Action::Hold;
        };
        let raw = line - signal;
        let diff = if raw.abs() <= MACD_FLAT * close { 0.0 } else { raw };
        let action = match self.prev_diff {
            Some(prev) if prev <= 0.0 && diff > 0.0 => Action::Buy,
            Some(prev) if prev >= 0.0 && diff < 0.0 => Action::Sell,
            _ => Action::Hold,
        };
        self.prev_diff = Some(diff);
        action
    }
}

impl Default for MacdCrossover {
    fn default() -> Self {
        Self::new(12, 26, 9)
    }
}

impl Strategy for MacdCrossover {
    fn name(&self) -> &str {
        "macd"
    }

    fn decide(&mut self, history: &[GroupBar]) -> Action {
        if history.len() < self.closes_seen {
            *self = Self::new(self.fast, self.slow, self.signal);
        }
        let mut action = Action::Hold;
        for g in &history[self.closes_seen..] {
            action = self.step(g.ohlcv::<f64>().close);
        }
        action
    }
}

pub fn baseline_macd(
    groups: &[GroupBar],
    fast: usize,
    slow: usize,
    signal: usize,
) -> Result<Vec<Action>, StrategyError> {
    let mut strategy = MacdCrossover::new(fast, slow, signal);
    if groups.len() < strategy.warmup() {
        return Err(StrategyError::InsufficientHistory { needed: strategy.warmup(), available: groups.len() });
    }
    Ok(crate::backtest::strategy_actions(&mut strategy, groups))
}

/// The ARBR threshold rule on its own.
#[derive(Debug, Clone)]
pub struct ArbrRule {
    pub thresholds: ArbrThresholds,
    pub window: usize,
    view: HistoryView,
}

impl ArbrRule {
    pub fn new(thresholds: ArbrThresholds, window: usize) -> Self {
        Self { thresholds, window, view: HistoryView::default() }
    }
}

impl Default for ArbrRule {
    fn default() -> Self {
        Self::new(ArbrThresholds::default(), DEFAULT_ARBR_WINDOW)
    }
}

impl Strategy for ArbrRule {
    fn name(&self) -> &str {
        "arbr_rule"
    }

    fn decide(&mut self, history: &[GroupBar]) -> Action {
        let n = self.view.sync(history);
        arbr_signal(&ArBrValue::at(&self.view.bars, n - 1, self.window), &self.thresholds)
    }
}

/// Network-driven strategy. With thresholds set, the network signal is
/// fused with the ARBR rule; without, the network trades alone.
pub struct NetStrategy {
    name: String,
    net: QNet<f64>,
    builder: StateBuilder,
    hidden: HiddenState<f64>,
    fusion: Option<ArbrThresholds>,
    thresholds: ArbrThresholds,
    trace: Vec<TradeSignal>,
    context: usize,
    recent: VecDeque<Vec<f64>>,
}

impl NetStrategy {
    pub fn new(
        name: &str,
        net: QNet<f64>,
        state: &StateConfig,
        thresholds: ArbrThresholds,
        fused: bool,
    ) -> Self {
        Self {
            name: name.to_string(),
            hidden: net.zero_hidden(),
            net,
            builder: StateBuilder::empty(state),
            fusion: fused.then(|| thresholds.clone()),
            thresholds,
            trace: Vec::new(),
            context: 0,
            recent: VecDeque::new(),
        }
    }

    /// With `context > 0`, each decision replays the last `context` valid
    /// states from a zero carry instead of carrying the recurrent state
    /// across the whole history.
    pub fn with_context(mut self, context: usize) -> Self {
        self.context = context;
        self
    }

    pub fn trace(&self) -> &[TradeSignal] {
        &self.trace
    }

    fn reset(&mut self) {
        self.builder = StateBuilder::empty(self.builder.config());
        self.hidden = self.net.zero_hidden();
        self.trace.clear();
        self.recent.clear();
    }

    fn network_signal(&mut self, state: &StockState) -> Result<Action, StrategyError> {
        if self.context == 0 {
            let (action, next) = drqn_signal(&self.net, &self.hidden, state)?;
            self.hidden = next;
            return Ok(action);
        }
        if !state.valid {
            return Err(StrategyError::InvalidState(state.group_index));
        }
        if self.recent.len() == self.context {
            self.recent.pop_front();
        }
        self.recent.push_back(state.features.clone());
        let window: Vec<&[f64]> = self.recent.iter().map(Vec::as_slice).collect();
        let pass = self.net.forward(&window, &self.net.zero_hidden(), false)?;
        Ok(greedy_action(pass.q.last().expect("non-empty window"))?)
    }

    fn step(&mut self) -> Action {
        let state = self.builder.latest().expect("non-empty history");
        let at = state.group_index;
        let arbr = ArBrValue::at(self.builder.bars(), at, self.builder.config().arbr_window);
        let s1 = arbr_signal(&arbr, &self.thresholds);
        // invalid states and non-finite outputs both mean no signal
        let s2 = self.network_signal(&state).unwrap_or(Action::Hold);
        let fused = fuse(s1, s2);
        self.trace.push(TradeSignal { group_index: at, ar: arbr.ar, br: arbr.br, s1, s2, fused });
        if self.fusion.is_some() {
            fused
        } else {
            s2
        }
    }
}

impl Strategy for NetStrategy {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, history: &[GroupBar]) -> Action {
        if history.len() <= self.builder.len() {
            self.reset();
        }
        let mut action = Action::Hold;
        for g in &history[self.builder.len()..] {
            self.builder.push(g.ohlcv());
            action = self.step();
        }
        action
    }
}

pub const TRACE_HEADER: &str = "group_index,ar,br,s1,s2,fused,executed,position,price";

/// Joins a signal trace with the backtest that executed it. Actions are
/// written as their numeric codes; absent AR/BR values are left empty.
pub fn write_signal_trace<W: Write>(
    trace: &[TradeSignal],
    result: &BacktestResult,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut fills = result.fills.iter().peekable();
    for (sig, point) in trace.iter().zip(&result.points) {
        let executed = match fills.peek() {
            Some(f) if f.group_index == point.group_index => fills.next().map_or(0, |f| f.side.code()),
            _ => 0,
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            sig.group_index,
            opt(sig.ar),
            opt(sig.br),
            sig.s1.code(),
            sig.s2.code(),
            sig.fused.code(),
            executed,
            point.position,
            point.price
        )?;
    }
    Ok(())
}
