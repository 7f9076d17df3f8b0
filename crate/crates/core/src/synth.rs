//! Seeded synthetic 1-minute bar generators.
//!
//! * `sine_trend`: log-price follows a slow sinusoid plus linear trend.
//! * `regime_switch`: log-price follows a piecewise-linear trend whose slope
//!   alternates sign every `switch_period` minutes. The last
//!   `pattern_length` minutes of each regime carry one-sided wicks (long
//!   lower wicks before an upturn, long upper wicks before a downturn).
//! * `random_walk`: driftless log-normal random walk.
//!
//! Closes in `sine_trend` and `regime_switch` are the deterministic curve
//! times `exp(noise * z)` with independent `z`; the noise does not
//! accumulate.

use std::f64::consts::PI;

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::market_data::{fixed_from_f64, Bar};

/// 2020-01-01T00:00:00Z
pub const DEFAULT_START: i64 = 1_577_836_800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    SineTrend,
    RegimeSwitch,
    RandomWalk,
}

/// Fields left out of a serialized spec take the defaults of its `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PartialSpec")]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Number of 1-minute bars.
    pub length: usize,
    pub seed: u64,
    /// Standard deviation of the per-minute log-price noise.
    pub noise: f64,
    pub start_price: f64,
    /// Epoch seconds of the first bar.
    pub start_time: i64,
    /// Maximum wick as a fraction of price.
    pub wick: f64,
    /// Standard deviation of the open-vs-previous-close log gap.
    pub gap: f64,
    pub base_volume: f64,
    /// Sinusoid period in minutes.
    pub period: usize,
    /// Sinusoid amplitude in log-price.
    pub amplitude: f64,
    /// Log-price drift per minute. Signed for `sine_trend`; the regime
    /// magnitude for `regime_switch`.
    pub drift: f64,
    pub switch_period: usize,
    pub pattern_length: usize,
    /// Maximum one-sided wick inside a pattern, as a fraction of price.
    pub pattern_strength: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSpec {
    #[serde(default)]
    kind: GeneratorKind,
    length: Option<usize>,
    seed: Option<u64>,
    noise: Option<f64>,
    start_price: Option<f64>,
    start_time: Option<i64>,
    wick: Option<f64>,
    gap: Option<f64>,
    base_volume: Option<f64>,
    period: Option<usize>,
    amplitude: Option<f64>,
    drift: Option<f64>,
    switch_period: Option<usize>,
    pattern_length: Option<usize>,
    pattern_strength: Option<f64>,
}

impl From<PartialSpec> for GeneratorSpec {
    fn from(p: PartialSpec) -> Self {
        let base = GeneratorSpec::for_kind(p.kind);
        Self {
            kind: p.kind,
            length: p.length.unwrap_or(base.length),
            seed: p.seed.unwrap_or(base.seed),
            noise: p.noise.unwrap_or(base.noise),
            start_price: p.start_price.unwrap_or(base.start_price),
            start_time: p.start_time.unwrap_or(base.start_time),
            wick: p.wick.unwrap_or(base.wick),
            gap: p.gap.unwrap_or(base.gap),
            base_volume: p.base_volume.unwrap_or(base.base_volume),
            period: p.period.unwrap_or(base.period),
            amplitude: p.amplitude.unwrap_or(base.amplitude),
            drift: p.drift.unwrap_or(base.drift),
            switch_period: p.switch_period.unwrap_or(base.switch_period),
            pattern_length: p.pattern_length.unwrap_or(base.pattern_length),
            pattern_strength: p.pattern_strength.unwrap_or(base.pattern_strength),
        }
    }
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::SineTrend,
            length: 20_000,
            seed: 0,
            noise: 0.0,
            start_price: 20.0,
            start_time: DEFAULT_START,
            wick: 0.001,
            gap: 0.0002,
            base_volume: 1000.0,
            period: 1200,
            amplitude: 0.05,
            drift: 0.0,
            switch_period: 900,
            pattern_length: 150,
            pattern_strength: 0.04,
        }
    }
}

impl GeneratorSpec {
    /// Defaults tuned for the regime-switching series.
    pub fn regime_switch(length: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::RegimeSwitch,
            length,
            seed,
            noise: 0.003,
            wick: 0.006,
            gap: 0.0005,
            drift: 0.0002,
            ..Default::default()
        }
    }

    /// Defaults of `kind` with the default length and seed 0.
    pub fn for_kind(kind: GeneratorKind) -> Self {
        let length = Self::default().length;
        match kind {
            GeneratorKind::SineTrend => Self::sine_trend(length, 0),
            GeneratorKind::RegimeSwitch => Self::regime_switch(length, 0),
            GeneratorKind::RandomWalk => Self::random_walk(length, 0),
        }
    }

    pub fn sine_trend(length: usize, seed: u64) -> Self {
        Self { kind: GeneratorKind::SineTrend, length, seed, ..Default::default() }
    }

    pub fn random_walk(length: usize, seed: u64) -> Self {
        Self { kind: GeneratorKind::RandomWalk, length, seed, noise: 0.001, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("start_price", self.start_price),
            ("base_volume", self.base_volume + 1.0),
            ("period", self.period as f64),
            ("switch_period", self.switch_period as f64),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(format!("{name} must be positive"));
        }
        let non_negative = [
            ("noise", self.noise),
            ("wick", self.wick),
            ("gap", self.gap),
            ("pattern_strength", self.pattern_strength),
            ("amplitude", self.amplitude.abs()),
            ("drift", self.drift.abs()),
        ];
        if let Some((name, _)) = non_negative.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(format!("{name} must be finite and non-negative"));
        }
        if self.wick >= 1.0 || self.pattern_strength >= 1.0 {
            return Err("wick fractions must be below 1".into());
        }
        if self.pattern_length > self.switch_period {
            return Err("pattern_length cannot exceed switch_period".into());
        }
        if self.length == 0 {
            return Err("length must be at least 1".into());
        }
        Ok(())
    }

    /// Sign of the regime drift at minute `t` (regimes start downward).
    pub fn regime_sign(&self, t: usize) -> f64 {
        if (t / self.switch_period) % 2 == 0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Deterministic log-price curve at minute `t`, relative to the start.
    pub fn trend(&self, t: usize) -> f64 {
        match self.kind {
            GeneratorKind::SineTrend => {
                self.drift * t as f64 + self.amplitude * (2.0 * PI * t as f64 / self.period as f64).sin()
            }
            GeneratorKind::RegimeSwitch => {
                let p = self.switch_period;
                let full = t / p;
                // full regimes alternate -1, +1, ...: pairs cancel
                let completed = if full % 2 == 1 { -(p as f64) } else { 0.0 };
                let partial = self.regime_sign(t) * (t % p) as f64;
                self.drift * (completed + partial)
            }
            GeneratorKind::RandomWalk => 0.0,
        }
    }

    fn timestamp(&self, t: usize) -> DateTime<Utc> {
        Utc.timestamp_opt(self.start_time + 60 * t as i64, 0).single().expect("valid timestamp")
    }
}

fn fixed(v: f64) -> Decimal {
    fixed_from_f64(v).expect("finite generated price")
}

/// Generates `spec.length` bars. Identical specs give identical series.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<Bar>, String> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let mut draws = Vec::with_capacity(spec.length);
    // Draw every variate up front so each bar consumes a fixed count.
    for _ in 0..spec.length {
        draws.push([normal(), normal()]);
    }
    let mut uniforms = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let log0 = spec.start_price.ln();
    let mut walk = log0;
    let mut prev_close = spec.start_price;
    let mut bars = Vec::with_capacity(spec.length);
    for (t, [z_close, z_gap]) in draws.into_iter().enumerate() {
        let close = match spec.kind {
            GeneratorKind::RandomWalk => {
                walk += spec.noise * z_close;
                walk.exp()
            }
            _ => (log0 + spec.trend(t) + spec.noise * z_close).exp(),
        };
        let open = if t == 0 { close } else { prev_close * (spec.gap * z_gap).exp() };
        let (u_up, u_down, u_vol): (f64, f64, f64) = (uniforms.random(), uniforms.random(), uniforms.random());
        let (mut up, mut down) = (spec.wick * u_up, spec.wick * u_down);
        if spec.kind == GeneratorKind::RegimeSwitch
            && t % spec.switch_period >= spec.switch_period - spec.pattern_length
        {
            if spec.regime_sign(t) < 0.0 {
                // upturn ahead: oversold shape
                down = spec.pattern_strength * u_down;
                up *= 0.1;
            } else {
                up = spec.pattern_strength * u_up;
                down *= 0.1;
            }
        }
        let open_d = fixed(open);
        let close_d = fixed(close);
        let high_d = fixed(open.max(close) * (1.0 + up)).max(open_d.max(close_d));
        let low_d = fixed(open.min(close) * (1.0 - down)).min(open_d.min(close_d));
        let volume = Decimal::from((spec.base_volume * (0.5 + u_vol)).round() as i64);
        bars.push(Bar { timestamp: spec.timestamp(t), open: open_d, high: high_d, low: low_d, close: close_d, volume });
        prev_close = close;
    }
    Ok(bars)
}
