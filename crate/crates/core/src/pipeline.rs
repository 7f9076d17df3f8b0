//! End-to-end run: load data, build states, train, evaluate on the held-out
//! tail. Everything is a pure function of the config.

use std::fs::File;
use std::io::BufReader;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backtest::{run_backtest, strategy_actions, BacktestError, BacktestResult, Strategy};
use crate::config::{ConfigError, RunConfig};
use crate::market_data::{group_bars, parse_ohlcv_csv, validate_series, Bar, DataError, GroupBar};
use crate::nn::QNet;
use crate::rl::{Agent, AgentConfig, AgentError, ModelKind, TrainingLog};
use crate::state::{build_states, state_dimension, StockState};
use crate::strategies::{ArbrRule, BuyAndHold, MacdCrossover, NetStrategy, TradeSignal};
use crate::synth::generate;

pub const FUSED: &str = "arbr_drqn";
pub const UNFUSED: &str = "drqn";
pub const DENSE: &str = "dqn";

const TRAIN_STREAM: u64 = 0x7472_6169_6e5f_726e;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error("{0}")]
    Runtime(String),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub bars: Vec<Bar>,
    pub groups: Vec<GroupBar>,
    pub states: Vec<StockState>,
    /// First held-out group.
    pub split: usize,
}

impl Dataset {
    pub fn train_groups(&self) -> &[GroupBar] {
        &self.groups[..self.split]
    }

    pub fn test_groups(&self) -> &[GroupBar] {
        &self.groups[self.split..]
    }
}

/// 1-minute bars from `data.path` if set, else from the generator.
pub fn load_bars(cfg: &RunConfig) -> Result<Vec<Bar>, PipelineError> {
    let bars = if let Some(path) = &cfg.data.path {
        let file = File::open(path).map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())))?;
        parse_ohlcv_csv(BufReader::new(file))?
    } else if let Some(spec) = &cfg.generator {
        generate(spec).map_err(|e| ConfigError::Invalid(format!("generator: {e}")))?
    } else {
        return Err(ConfigError::MissingData.into());
    };
    let report = validate_series(&bars);
    if let Some(v) = report.violations.first() {
        let n = report.violations.len();
        return Err(DataError::Invalid(format!("bar {} has invalid {} ({n} violations)", v.index, v.field)).into());
    }
    Ok(bars)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    let bars = load_bars(cfg)?;
    let groups = group_bars(&bars, cfg.data.group_size)?.groups;
    let states = build_states(&groups, &cfg.state);
    let split = ((groups.len() as f64) * cfg.data.train_fraction).floor() as usize;
    if split == 0 || split >= groups.len() {
        return Err(DataError::Invalid(format!("{} groups cannot be split at {}", groups.len(), cfg.data.train_fraction)).into());
    }
    if !states[..split].iter().any(|s| s.valid) {
        return Err(DataError::Invalid(format!("no valid training state in the first {split} groups")).into());
    }
    Ok(Dataset { bars, groups, states, split })
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub name: &'static str,
    pub agent: Agent,
    pub log: TrainingLog,
}

fn train_one(cfg: &RunConfig, ds: &Dataset, agent_cfg: &AgentConfig, name: &'static str, stream: u64) -> Result<TrainedModel, PipelineError> {
    let seed = cfg.seed ^ stream;
    let mut agent = Agent::new(state_dimension(&cfg.state), agent_cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TRAIN_STREAM);
    let log = agent.train(&ds.states[..ds.split], ds.train_groups(), &cfg.backtest, &mut rng)?;
    Ok(TrainedModel { name, agent, log })
}

/// Trains the recurrent agent and, when enabled, the feedforward ablation.
pub fn train_models(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<TrainedModel>, PipelineError> {
    let mut lstm = cfg.agent.clone();
    lstm.model = ModelKind::Lstm;
    let mut models = vec![train_one(cfg, ds, &lstm, UNFUSED, 0)?];
    if cfg.eval.train_dense {
        let mut dense = cfg.agent.clone();
        dense.model = ModelKind::Mlp;
        models.push(train_one(cfg, ds, &dense, DENSE, 1)?);
    }
    Ok(models)
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub result: BacktestResult,
    /// Signal trace over the evaluated groups, for network strategies.
    pub trace: Option<Vec<TradeSignal>>,
}

impl StrategyRun {
    pub fn name(&self) -> &str {
        &self.result.report.strategy
    }
}

fn held_out<S: Strategy + ?Sized>(strategy: &mut S, ds: &Dataset, cfg: &RunConfig) -> Result<BacktestResult, PipelineError> {
    let actions = strategy_actions(strategy, &ds.groups);
    Ok(run_backtest(strategy.name(), &actions[ds.split..], ds.test_groups(), &cfg.backtest)?)
}

fn net_run(name: &str, net: &QNet<f64>, fused: bool, ds: &Dataset, cfg: &RunConfig) -> Result<StrategyRun, PipelineError> {
    let mut s = NetStrategy::new(name, net.clone(), &cfg.state, cfg.arbr.clone(), fused).with_context(cfg.eval.context);
    let result = held_out(&mut s, ds, cfg)?;
    Ok(StrategyRun { result, trace: Some(s.trace()[ds.split..].to_vec()) })
}

/// Backtests every strategy on the held-out groups. Strategies see the whole
/// history up to each decision, including the training period. `nets` pairs
/// a model name with its network; the recurrent one (`drqn`) also drives the
/// fused strategy.
pub fn evaluate(cfg: &RunConfig, ds: &Dataset, nets: &[(&str, QNet<f64>)]) -> Result<Vec<StrategyRun>, PipelineError> {
    let mut runs = Vec::new();
    for (name, net) in nets {
        if *name == UNFUSED {
            runs.push(net_run(FUSED, net, true, ds, cfg)?);
        }
        runs.push(net_run(name, net, false, ds, cfg)?);
    }
    let mut baselines: Vec<Box<dyn Strategy>> = vec![
        Box::new(ArbrRule::new(cfg.arbr.clone(), cfg.state.arbr_window)),
        Box::new(MacdCrossover::new(cfg.macd.fast, cfg.macd.slow, cfg.macd.signal)),
    ];
    for s in &mut baselines {
        runs.push(StrategyRun { result: held_out(s.as_mut(), ds, cfg)?, trace: None });
    }
    let bh = strategy_actions(&mut BuyAndHold, ds.test_groups());
    runs.push(StrategyRun {
        result: run_backtest(BuyAndHold.name(), &bh, ds.test_groups(), &cfg.backtest)?,
        trace: None,
    });
    Ok(runs)
}

/// Trains and evaluates in one process.
pub fn run(cfg: &RunConfig) -> Result<(Dataset, Vec<TrainedModel>, Vec<StrategyRun>), PipelineError> {
    let ds = load_dataset(cfg)?;
    let models = train_models(cfg, &ds)?;
    let nets: Vec<(&str, QNet<f64>)> = models.iter().map(|m| (m.name, m.agent.online.clone())).collect();
    let runs = evaluate(cfg, &ds, &nets)?;
    Ok((ds, models, runs))
}
