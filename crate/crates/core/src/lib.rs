//! Recurrent Q-learning trading harness with ARBR sentiment signal fusion.

pub mod artifacts;
pub mod backtest;
pub mod config;
pub mod indicators;
pub mod market_data;
pub mod nn;
pub mod pipeline;
pub mod rl;
pub mod state;
pub mod strategies;
pub mod synth;
mod scalar;

pub use scalar::Scalar;

pub type QNetwork = nn::LstmQNetwork<f64>;
pub type DenseQNetwork = nn::MlpQNetwork<f64>;
pub type Ohlcv = market_data::Ohlcv<f64>;
pub type ArBrValue = indicators::ArBrValue<f64>;
pub type IndicatorVector = indicators::IndicatorVector<f64>;
