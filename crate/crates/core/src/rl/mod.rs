//! Q-learning machinery: actions, rewards, TD targets, exploration, sequence
//! replay and the recurrent training loop.

mod agent;
mod replay;
mod tabular;

pub use agent::{
    run_episode, Agent, AgentConfig, EpisodeStats, EpsilonSchedule, LossKind, ModelKind, RewardNormalization,
    TrainingLog, TrainingRecord, METRICS_HEADER,
};
pub use replay::{ReplayBuffer, Transition, DEFAULT_REPLAY_CAPACITY};
pub use tabular::QTable;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{NetError, QValues};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("unknown state {0}")]
    UnknownState(usize),
    #[error("unknown action {0}")]
    UnknownAction(usize),
    #[error("non-finite Q-value")]
    NonFiniteQ,
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    #[error("alignment: {0} states but {1} prices")]
    Alignment(usize, usize),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Backtest(#[from] crate::backtest::BacktestError),
}

/// Trading action. Discriminants are the numeric codes 1, 0, -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(i8)]
pub enum Action {
    Buy = 1,
    Hold = 0,
    Sell = -1,
}

impl Action {
    /// Network output order.
    pub const ALL: [Action; 3] = [Action::Buy, Action::Hold, Action::Sell];

    pub fn code(self) -> i8 {
        self as i8
    }

    pub fn from_code(code: i8) -> Option<Self> {
        match code {
            1 => Some(Action::Buy),
            0 => Some(Action::Hold),
            -1 => Some(Action::Sell),
            _ => None,
        }
    }

    /// Index into a Q-value vector.
    pub fn index(self) -> usize {
        match self {
            Action::Buy => 0,
            Action::Hold => 1,
            Action::Sell => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn opposes(self, other: Action) -> bool {
        matches!((self, other), (Action::Buy, Action::Sell) | (Action::Sell, Action::Buy))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Buy => "buy",
            Action::Hold => "hold",
            Action::Sell => "sell",
        })
    }
}

/// `r` for terminal transitions, else `r + gamma * max(q_next)`.
pub fn td_target<T: Scalar>(r: T, gamma: T, q_next: &QValues<T>, terminal: bool) -> T {
    if terminal {
        return r;
    }
    let best = q_next.iter().copied().fold(T::neg_infinity(), T::max);
    r + gamma * best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Price change only, independent of the action taken.
    PaperLiteral,
    /// Mark-to-market change of the held position net of fees.
    #[default]
    PositionAware,
}

/// Per-step reward. `position` is a signed share count.
pub fn reward(p_t: f64, p_prev: f64, position: f64, fee_paid: f64, mode: RewardMode) -> f64 {
    match mode {
        RewardMode::PaperLiteral => p_t - p_prev,
        RewardMode::PositionAware => position * (p_t - p_prev) - fee_paid,
    }
}

pub fn cumulative_return(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

/// Greedy action; ties go to Hold, then Buy.
pub fn greedy_action<T: Scalar>(q: &QValues<T>) -> Result<Action, AgentError> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::NonFiniteQ);
    }
    let mut best = Action::Hold;
    for candidate in [Action::Buy, Action::Sell] {
        if q[candidate.index()] > q[best.index()] {
            best = candidate;
        }
    }
    Ok(best)
}

/// Epsilon-greedy selection. Always draws one uniform variate for the
/// explore decision so the RNG stream does not depend on the Q-values.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    q: &QValues<T>,
    epsilon: f64,
    rng: &mut R,
) -> Result<Action, AgentError> {
    let greedy = greedy_action(q)?;
    if rng.random::<f64>() < epsilon {
        Ok(Action::ALL[rng.random_range(0..Action::ALL.len())])
    } else {
        Ok(greedy)
    }
}
