use std::io::Write;

use rand::Rng;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::replay::{ReplayBuffer, Transition, DEFAULT_REPLAY_CAPACITY};
use super::{reward, select_action, td_target, Action, AgentError, RewardMode};
use crate::backtest::{BacktestConfig, Portfolio};
use crate::market_data::GroupBar;
use crate::nn::{Checkpoint, LstmQNetwork, MlpQNetwork, Optimizer, OptimizerKind, QNet, QValues, ACTION_COUNT};
use crate::state::StockState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Lstm,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    Huber,
}

/// Scaling applied to transition rewards before they enter the TD target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardNormalization {
    /// Rewards as a percentage of one lot's notional at the mean training price.
    #[default]
    NotionalPercent,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub model: ModelKind,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub hidden: usize,
    pub seq_len: usize,
    pub burn_in: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub target_sync_interval: u64,
    pub replay_capacity: usize,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub reward_mode: RewardMode,
    pub reward_normalization: RewardNormalization,
    /// Passes over the training series.
    pub episodes: usize,
    /// Environment steps per gradient update.
    pub train_every: usize,
    pub max_train_steps: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Lstm,
            batch_size: 16,
            learning_rate: 0.00025,
            gamma: 0.001,
            hidden: 32,
            seq_len: 16,
            burn_in: 4,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_steps: 50_000,
            target_sync_interval: 100,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            optimizer: OptimizerKind::Adam,
            loss: LossKind::Mse,
            reward_mode: RewardMode::PositionAware,
            reward_normalization: RewardNormalization::NotionalPercent,
            episodes: 20,
            train_every: 1,
            max_train_steps: 50_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.burn_in >= self.seq_len {
            return bad("burn_in must be smaller than seq_len");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.hidden == 0 || self.train_every == 0 || self.replay_capacity == 0 || self.target_sync_interval == 0 {
            return bad("hidden, train_every, replay_capacity and target_sync_interval must be positive");
        }
        let eps = 0.0..=1.0;
        if !eps.contains(&self.epsilon_start) || !eps.contains(&self.epsilon_end) {
            return bad("epsilon bounds must be in [0, 1]");
        }
        Ok(())
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule { start: self.epsilon_start, end: self.epsilon_end, decay_steps: self.epsilon_decay_steps }
    }
}

/// Linear decay from `start` to `end` over `decay_steps` environment steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

pub const METRICS_HEADER: &str = "step,loss,epsilon,buffer_size,cumulative_reward";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub step: u64,
    pub loss: f64,
    pub epsilon: f64,
    pub buffer_size: usize,
    /// Sum of transition rewards over the most recent episode.
    pub cumulative_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub records: Vec<TrainingRecord>,
    pub episodes: Vec<EpisodeStats>,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{},{}", r.step, r.loss, r.epsilon, r.buffer_size, r.cumulative_reward)?;
        }
        Ok(())
    }

    /// Mean loss over the first and last `k` records.
    pub fn loss_trend(&self, k: usize) -> Option<(f64, f64)> {
        let n = self.records.len();
        if n < 2 * k || k == 0 {
            return None;
        }
        let mean = |rs: &[TrainingRecord]| rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64;
        Some((mean(&self.records[..k]), mean(&self.records[n - k..])))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeStats {
    pub transitions: usize,
    pub trades: usize,
    pub fees: Decimal,
    pub total_reward: f64,
    pub final_equity: Decimal,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub online: QNet<f64>,
    pub target: QNet<f64>,
    pub optimizer: Optimizer<f64>,
    pub replay: ReplayBuffer,
    pub train_steps: u64,
    pub env_steps: u64,
    /// Multiplier applied to stored rewards inside TD targets.
    pub reward_scale: f64,
}

impl Agent {
    pub fn new(input_dim: usize, config: &AgentConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let online = match config.model {
            ModelKind::Lstm => QNet::Recurrent(LstmQNetwork::init(input_dim, config.hidden, seed)),
            ModelKind::Mlp => QNet::Feedforward(MlpQNetwork::init(input_dim, config.hidden, seed)),
        };
        Ok(Self::with_net(online, config))
    }

    pub fn with_net(online: QNet<f64>, config: &AgentConfig) -> Self {
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, online.params());
        Self {
            config: config.clone(),
            target: online.clone(),
            online,
            optimizer,
            replay: ReplayBuffer::new(config.replay_capacity),
            train_steps: 0,
            env_steps: 0,
            reward_scale: 1.0,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint, config: &AgentConfig) -> Self {
        let mut agent = Self::with_net(ckpt.net, config);
        agent.optimizer = ckpt.optimizer;
        agent.train_steps = ckpt.train_step;
        agent
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { net: self.online.clone(), optimizer: self.optimizer.clone(), train_step: self.train_steps }
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon().at(self.env_steps)
    }

    /// One gradient update on a batch of windows. Returns the mean loss over
    /// the non-burn-in steps.
    pub fn train_step(&mut self, batch: &[Vec<Transition>]) -> Result<f64, AgentError> {
        let (len, burn_in) = (self.config.seq_len, self.config.burn_in);
        if batch.is_empty() {
            return Err(AgentError::NotEnoughData("empty batch".into()));
        }
        if let Some(w) = batch.iter().find(|w| w.len() != len) {
            return Err(AgentError::InvalidConfig(format!("window length {} != seq_len {len}", w.len())));
        }
        let count = (batch.len() * (len - burn_in)) as f64;
        let h0 = self.online.zero_hidden();
        let mut grads = self.online.params().zeros_like();
        let mut loss = 0.0;
        for window in batch {
            let xs: Vec<&[f64]> = window.iter().map(|t| t.state.features.as_slice()).collect();
            let pass = self.online.forward(&xs, &h0, true)?;
            // Target net sees s_0 then every next state, so its output at
            // t + 1 has the same warm-up as the online output at t.
            let next: Vec<&[f64]> =
                std::iter::once(xs[0]).chain(window.iter().map(|t| t.next_state.features.as_slice())).collect();
            let targets = self.target.forward(&next, &h0, false)?;
            let mut dq: Vec<QValues<f64>> = vec![[0.0; ACTION_COUNT]; len];
            for t in burn_in..len {
                let tr = &window[t];
                let y = td_target(tr.reward * self.reward_scale, self.config.gamma, &targets.q[t + 1], tr.terminal);
                let a = tr.action.index();
                let d = pass.q[t][a] - y;
                let (l, g) = match self.config.loss {
                    LossKind::Mse => (d * d, 2.0 * d),
                    LossKind::Huber if d.abs() <= 1.0 => (0.5 * d * d, d),
                    LossKind::Huber => (d.abs() - 0.5, d.signum()),
                };
                loss += l;
                dq[t][a] = g / count;
            }
            let g = self.online.backward(&pass, &dq)?;
            grads.add_scaled(&g, 1.0);
        }
        self.optimizer.apply(self.online.params_mut(), &grads)?;
        self.train_steps += 1;
        if self.train_steps % self.config.target_sync_interval == 0 {
            self.target = self.online.clone();
        }
        Ok(loss / count)
    }

    /// Sets the reward scale from the configured normalization.
    pub fn calibrate_rewards(&mut self, groups: &[GroupBar], backtest: &BacktestConfig) {
        self.reward_scale = match self.config.reward_normalization {
            RewardNormalization::None => 1.0,
            RewardNormalization::NotionalPercent => {
                let prices: Vec<f64> = groups.iter().filter_map(|g| g.close.to_f64()).collect();
                let mean = prices.iter().sum::<f64>() / prices.len().max(1) as f64;
                let lot = match self.config.reward_mode {
                    RewardMode::PositionAware => f64::from(backtest.lot_size),
                    RewardMode::PaperLiteral => 1.0,
                };
                if mean > 0.0 {
                    100.0 / (lot * mean)
                } else {
                    1.0
                }
            }
        };
    }

    /// Runs `episodes` exploratory passes over the series, training from
    /// replay after each pass.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        states: &[StockState],
        groups: &[GroupBar],
        backtest: &BacktestConfig,
        rng: &mut R,
    ) -> Result<TrainingLog, AgentError> {
        self.calibrate_rewards(groups, backtest);
        let mut log = TrainingLog::default();
        let (batch, len) = (self.config.batch_size, self.config.seq_len);
        for _ in 0..self.config.episodes {
            if self.train_steps >= self.config.max_train_steps {
                break;
            }
            let (transitions, stats) = run_episode(self, states, groups, backtest, rng, true)?;
            let updates = transitions.len() / self.config.train_every;
            for t in transitions {
                self.replay.push(t);
            }
            self.replay.end_run();
            for _ in 0..updates {
                if self.train_steps >= self.config.max_train_steps || self.replay.window_count(len) < batch {
                    break;
                }
                let sample = self.replay.sample_sequences(batch, len, rng)?;
                let loss = self.train_step(&sample)?;
                log.records.push(TrainingRecord {
                    step: self.train_steps,
                    loss,
                    epsilon: self.epsilon(),
                    buffer_size: self.replay.len(),
                    cumulative_reward: stats.total_reward,
                });
            }
            log.episodes.push(stats);
        }
        Ok(log)
    }
}

/// One pass over the series. The recurrent carry advances across every valid
/// state; invalid states force Hold and produce no transition. With
/// `explore` the epsilon schedule applies and the step counter advances,
/// otherwise actions are greedy.
pub fn run_episode<R: Rng + ?Sized>(
    agent: &mut Agent,
    states: &[StockState],
    groups: &[GroupBar],
    backtest: &BacktestConfig,
    rng: &mut R,
    explore: bool,
) -> Result<(Vec<Transition>, EpisodeStats), AgentError> {
    if states.len() != groups.len() {
        return Err(AgentError::Alignment(states.len(), groups.len()));
    }
    let mut portfolio = Portfolio::new(backtest);
    let lot = f64::from(backtest.lot_size);
    let mut hidden = agent.online.zero_hidden();
    let mut transitions = Vec::new();
    let n = states.len();
    for t in 0..n {
        let state = &states[t];
        let group = &groups[t];
        let action = if state.valid {
            let (q, next_hidden) = agent.online.step(&state.features, &hidden)?;
            hidden = next_hidden;
            let epsilon = if explore { agent.epsilon() } else { 0.0 };
            if explore {
                agent.env_steps += 1;
            }
            select_action(&q, epsilon, rng)?
        } else {
            Action::Hold
        };
        let fill = portfolio.apply_fill(action, group.close, group.group_index, group.timestamp, backtest)?;
        if t + 1 < n && state.valid && states[t + 1].valid {
            let fee = fill.map_or(0.0, |f| f.fee.to_f64().unwrap_or(0.0));
            let (p0, p1) = (group.close.to_f64().unwrap_or(0.0), groups[t + 1].close.to_f64().unwrap_or(0.0));
            let r = reward(p1, p0, f64::from(portfolio.position) * lot, fee, agent.config.reward_mode);
            transitions.push(Transition {
                state: state.clone(),
                action,
                reward: r,
                next_state: states[t + 1].clone(),
                terminal: t + 2 == n,
            });
        }
    }
    let last_price = groups.last().map_or(Decimal::ZERO, |g| g.close);
    let stats = EpisodeStats {
        transitions: transitions.len(),
        trades: portfolio.trades.len(),
        fees: portfolio.fees_paid,
        total_reward: transitions.iter().map(|t| t.reward).sum(),
        final_equity: portfolio.equity(last_price),
    };
    Ok((transitions, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::GroupBar;
    use crate::nn::Params;
    use crate::rl::QTable;
    use chrono::{TimeZone, Utc};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn groups(n: usize) -> Vec<GroupBar> {
        (0..n)
            .map(|g| {
                let c = Decimal::from(10) + Decimal::new((g % 7) as i64, 1);
                GroupBar {
                    timestamp: Utc.timestamp_opt(1_700_000_000 + 1800 * g as i64, 0).unwrap(),
                    open: c,
                    high: c,
                    low: c,
                    close: c,
                    volume: Decimal::ONE,
                    group_index: g,
                    member_count: 30,
                }
            })
            .collect()
    }

    fn states(mask: &[bool]) -> Vec<StockState> {
        mask.iter()
            .enumerate()
            .map(|(g, v)| StockState { features: vec![(g as f64 * 0.7).sin(), 1.0], group_index: g, valid: *v })
            .collect()
    }

    fn hold_net() -> QNet<f64> {
        let mut net = LstmQNetwork::zeros(2, 4);
        net.params.tensors[4].data = vec![0.0, 1.0, 0.0];
        QNet::Recurrent(net)
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        for bad in [
            AgentConfig { gamma: 1.5, ..Default::default() },
            AgentConfig { batch_size: 0, ..Default::default() },
            AgentConfig { burn_in: 16, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(AgentError::InvalidConfig(_))));
        }
    }

    #[test]
    fn epsilon_schedule() {
        let e = AgentConfig::default().epsilon();
        assert_eq!(e.at(0), 1.0);
        assert!((e.at(25_000) - 0.55).abs() < 1e-12);
        assert_eq!(e.at(50_000), 0.1);
        assert_eq!(e.at(90_000), 0.1);
    }

    #[test]
    fn all_invalid_states_give_nothing() {
        let mut agent = Agent::new(2, &AgentConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = groups(20);
        let (tr, stats) =
            run_episode(&mut agent, &states(&[false; 20]), &g, &BacktestConfig::default(), &mut rng, true).unwrap();
        assert!(tr.is_empty());
        assert_eq!(stats.trades, 0);
        assert_eq!(stats.final_equity, Decimal::from(100_000));
        assert_eq!(agent.env_steps, 0);
    }

    #[test]
    fn greedy_hold_net_never_trades() {
        let mut agent = Agent::with_net(hold_net(), &AgentConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = groups(50);
        let (tr, stats) =
            run_episode(&mut agent, &states(&[true; 50]), &g, &BacktestConfig::default(), &mut rng, false).unwrap();
        assert_eq!(stats.trades, 0);
        assert_eq!(stats.fees, Decimal::ZERO);
        assert!(tr.iter().all(|t| t.action == Action::Hold && t.reward == 0.0));
    }

    #[test]
    fn transition_count_matches_valid_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..80);
            let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
            let expected = mask.windows(2).filter(|w| w[0] && w[1]).count();
            let mut agent = Agent::new(2, &AgentConfig { hidden: 3, ..Default::default() }, 2).unwrap();
            let g = groups(n);
            let (tr, _) = run_episode(&mut agent, &states(&mask), &g, &BacktestConfig::default(), &mut rng, true).unwrap();
            assert_eq!(tr.len(), expected);
            assert!(tr.iter().all(|t| t.state.valid && t.next_state.valid && t.reward.is_finite()));
            assert_eq!(tr.iter().filter(|t| t.terminal).count(), usize::from(mask[n - 1] && mask[n - 2]));
        }
    }

    #[test]
    fn misaligned_inputs() {
        let mut agent = Agent::new(2, &AgentConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = run_episode(&mut agent, &states(&[true; 3]), &groups(4), &BacktestConfig::default(), &mut rng, true);
        assert_eq!(r.unwrap_err(), AgentError::Alignment(3, 4));
    }

    fn zero_batch(cfg: &AgentConfig) -> Vec<Vec<Transition>> {
        let s = |g: usize| StockState { features: vec![0.5, -0.5], group_index: g, valid: true };
        vec![
            (0..cfg.seq_len)
                .map(|g| Transition { state: s(g), action: Action::Buy, reward: 0.0, next_state: s(g + 1), terminal: false })
                .collect();
            cfg.batch_size
        ]
    }

    #[test]
    fn zero_network_zero_rewards_is_fixed_point() {
        let cfg = AgentConfig { gamma: 0.0, ..Default::default() };
        let mut agent = Agent::with_net(QNet::Recurrent(LstmQNetwork::zeros(2, 4)), &cfg);
        let before: Params<f64> = agent.online.params().clone();
        let loss = agent.train_step(&zero_batch(&cfg)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(agent.online.params(), &before);
    }

    #[test]
    fn target_network_syncs_on_interval() {
        let cfg = AgentConfig { target_sync_interval: 3, learning_rate: 0.01, batch_size: 2, seq_len: 4, burn_in: 1, ..Default::default() };
        let mut agent = Agent::new(2, &cfg, 9).unwrap();
        let mut batch = zero_batch(&cfg);
        batch.iter_mut().flatten().for_each(|t| t.reward = 1.0);
        let initial = agent.target.clone();
        for step in 1..=3 {
            let loss = agent.train_step(&batch).unwrap();
            assert!(loss >= 0.0);
            if step < 3 {
                assert_eq!(agent.target, initial);
                assert_ne!(agent.online, initial);
            }
        }
        assert_eq!(agent.target, agent.online);
    }

    /// Three-state cycle s0 -> s1 -> s2 -> s0 whatever the action, with a
    /// fixed reward table.
    fn cyclic_mdp_batch(rng: &mut ChaCha8Rng, rewards: &[[f64; 3]; 3], len: usize) -> Vec<Transition> {
        let one_hot = |s: usize, g: usize| {
            let mut f = vec![0.0; 3];
            f[s] = 1.0;
            StockState { features: f, group_index: g, valid: true }
        };
        (0..len)
            .map(|g| {
                let s = g % 3;
                let a = Action::ALL[rng.random_range(0..3)];
                Transition {
                    state: one_hot(s, g),
                    action: a,
                    reward: rewards[s][a.index()],
                    next_state: one_hot((s + 1) % 3, g + 1),
                    terminal: false,
                }
            })
            .collect()
    }

    #[test]
    fn learns_cyclic_mdp() {
        let rewards = [[1.0, 0.0, -1.0], [-0.5, 0.2, 0.5], [0.0, 0.3, -0.2]];
        let gamma = 0.5;
        // tabular fixed point
        let mut table = QTable::<f64>::zeros(3, 3);
        for _ in 0..500 {
            for s in 0..3 {
                for a in 0..3 {
                    table.update(s, a, rewards[s][a], (s + 1) % 3, 1.0, gamma).unwrap();
                }
            }
        }
        let cfg = AgentConfig {
            gamma,
            learning_rate: 0.005,
            hidden: 8,
            seq_len: 8,
            burn_in: 2,
            target_sync_interval: 50,
            ..Default::default()
        };
        let mut agent = Agent::new(3, &cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for t in cyclic_mdp_batch(&mut rng, &rewards, 600) {
            agent.replay.push(t);
        }
        let mut losses = Vec::new();
        for _ in 0..2000 {
            let batch = agent.replay.sample_sequences(cfg.batch_size, cfg.seq_len, &mut rng).unwrap();
            losses.push(agent.train_step(&batch).unwrap());
        }
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(tail < 0.1 * head, "loss {head} -> {tail}");
        let mut hidden = agent.online.zero_hidden();
        for g in 0..12 {
            let mut x = vec![0.0; 3];
            x[g % 3] = 1.0;
            let (q, h) = agent.online.step(&x, &hidden).unwrap();
            hidden = h;
            if g >= cfg.burn_in {
                for a in 0..3 {
                    assert!((q[a] - table.get(g % 3, a)).abs() < 0.15, "state {} action {a}: {} vs {}", g % 3, q[a], table.get(g % 3, a));
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = AgentConfig { episodes: 3, hidden: 4, batch_size: 4, seq_len: 6, burn_in: 2, ..Default::default() };
        let g = groups(60);
        let s = states(&[true; 60]);
        let run = || {
            let mut agent = Agent::new(2, &cfg, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let log = agent.train(&s, &g, &BacktestConfig::default(), &mut rng).unwrap();
            (log, agent.online)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(!a.0.records.is_empty());
        let mut csv = Vec::new();
        a.0.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with(METRICS_HEADER));
    }
}
