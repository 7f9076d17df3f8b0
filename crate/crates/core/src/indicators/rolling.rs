//! Single-pass evaluation of the indicator suite over a whole series.

use std::collections::VecDeque;

use super::suite::{
    mfi_from, position_in_range, rsi_from, true_range, typical_price, IndicatorVector, INDICATOR_COUNT,
    MACD_FAST, MACD_SIGNAL, MACD_SLOW, SUITE_LOOKBACK,
};
use crate::market_data::Ohlcv;
use crate::Scalar;

/// Fixed-length window with a compensated running sum.
struct RollingSum<T> {
    len: usize,
    items: VecDeque<T>,
    sum: T,
    comp: T,
}

impl<T: Scalar> RollingSum<T> {
    fn new(len: usize) -> Self {
        Self { len, items: VecDeque::with_capacity(len + 1), sum: T::zero(), comp: T::zero() }
    }

    fn add(&mut self, x: T) {
        // Neumaier summation
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn push(&mut self, x: T) {
        self.items.push_back(x);
        self.add(x);
        if self.items.len() > self.len {
            let old = self.items.pop_front().expect("window is non-empty");
            self.add(-old);
        }
    }

    fn full(&self) -> bool {
        self.items.len() == self.len
    }

    fn total(&self) -> T {
        self.sum + self.comp
    }

    fn mean(&self) -> T {
        self.total() / T::of_usize(self.len)
    }
}

/// Sliding-window extreme via a monotonic deque of (index, value).
struct RollingExtreme<T> {
    len: usize,
    want_max: bool,
    deque: VecDeque<(usize, T)>,
}

impl<T: Scalar> RollingExtreme<T> {
    fn new(len: usize, want_max: bool) -> Self {
        Self { len, want_max, deque: VecDeque::new() }
    }

    fn push(&mut self, index: usize, x: T) {
        while let Some(&(_, back)) = self.deque.back() {
            let dominated = if self.want_max { back <= x } else { back >= x };
            if !dominated {
                break;
            }
            self.deque.pop_back();
        }
        self.deque.push_back((index, x));
        while self.deque.front().is_some_and(|&(i, _)| i + self.len <= index) {
            self.deque.pop_front();
        }
    }

    fn value(&self) -> T {
        self.deque.front().expect("extreme of a non-empty window").1
    }
}

/// Seeded EMA fed one value at a time.
#[derive(Debug, Clone)]
pub(crate) struct Ema<T> {
    alpha: T,
    seed: Vec<T>,
    period: usize,
    value: Option<T>,
}

impl<T: Scalar> Ema<T> {
    pub(crate) fn new(period: usize) -> Self {
        Self { alpha: T::of(2.0) / T::of_usize(period + 1), seed: Vec::with_capacity(period), period, value: None }
    }

    pub(crate) fn push(&mut self, x: T) -> Option<T> {
        self.value = match self.value {
            Some(prev) => Some(self.alpha * x + (T::one() - self.alpha) * prev),
            None => {
                self.seed.push(x);
                (self.seed.len() == self.period)
                    .then(|| self.seed.iter().copied().fold(T::zero(), |s, v| s + v) / T::of_usize(self.period))
            }
        };
        self.value
    }
}

/// Incremental evaluation of the indicator suite: feed one bar at a time.
pub struct IndicatorStream<T> {
    t: usize,
    prev: Option<Ohlcv<T>>,
    closes: VecDeque<T>,
    sma5: RollingSum<T>,
    sma10: RollingSum<T>,
    sma20: RollingSum<T>,
    sq20: RollingSum<T>,
    close_max20: RollingExtreme<T>,
    close_min20: RollingExtreme<T>,
    ema_fast: Ema<T>,
    ema_slow: Ema<T>,
    signal_ema: Ema<T>,
    gains: RollingSum<T>,
    losses: RollingSum<T>,
    pos_flow: RollingSum<T>,
    neg_flow: RollingSum<T>,
    high14: RollingExtreme<T>,
    low14: RollingExtreme<T>,
    stoch_k3: RollingSum<T>,
    tr14: RollingSum<T>,
    obv10: RollingSum<T>,
    vol5: RollingSum<T>,
}

impl<T: Scalar> Default for IndicatorStream<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> IndicatorStream<T> {
    pub fn new() -> Self {
        Self {
            t: 0,
            prev: None,
            closes: VecDeque::with_capacity(12),
            sma5: RollingSum::new(5),
            sma10: RollingSum::new(10),
            sma20: RollingSum::new(20),
            sq20: RollingSum::new(20),
            close_max20: RollingExtreme::new(20, true),
            close_min20: RollingExtreme::new(20, false),
            ema_fast: Ema::new(MACD_FAST),
            ema_slow: Ema::new(MACD_SLOW),
            signal_ema: Ema::new(MACD_SIGNAL),
            gains: RollingSum::new(14),
            losses: RollingSum::new(14),
            pos_flow: RollingSum::new(14),
            neg_flow: RollingSum::new(14),
            high14: RollingExtreme::new(14, true),
            low14: RollingExtreme::new(14, false),
            stoch_k3: RollingSum::new(3),
            tr14: RollingSum::new(14),
            obv10: RollingSum::new(10),
            vol5: RollingSum::new(5),
        }
    }

    /// Consumes the next bar and returns the suite at that bar, or `None`
    /// during the first [`SUITE_LOOKBACK`] bars.
    pub fn push(&mut self, bar: &Ohlcv<T>) -> Option<IndicatorVector<T>> {
        let t = self.t;
        self.t += 1;
        let hundred = T::of(100.0);
        let close = bar.close;
        self.closes.push_back(close);
        if self.closes.len() > 11 {
            self.closes.pop_front();
        }
        self.sma5.push(close);
        self.sma10.push(close);
        self.sma20.push(close);
        self.sq20.push(close * close);
        self.close_max20.push(t, close);
        self.close_min20.push(t, close);
        let fast = self.ema_fast.push(close);
        let slow = self.ema_slow.push(close);
        let macd = fast.zip(slow).map(|(f, s)| f - s);
        let signal = match macd {
            Some(m) => self.signal_ema.push(m),
            None => None,
        };
        self.high14.push(t, bar.high);
        self.low14.push(t, bar.low);
        self.vol5.push(bar.volume);
        if let Some(prev) = self.prev.replace(*bar) {
            let d = close - prev.close;
            self.gains.push(d.max(T::zero()));
            self.losses.push((-d).max(T::zero()));
            let (tp0, tp1) = (typical_price(&prev), typical_price(bar));
            let flow = tp1 * bar.volume;
            self.pos_flow.push(if tp1 > tp0 { flow } else { T::zero() });
            self.neg_flow.push(if tp1 < tp0 { flow } else { T::zero() });
            self.tr14.push(true_range(bar, prev.close));
            let direction = if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            self.obv10.push(direction * bar.volume);
        }
        let extremes = (t >= 13).then(|| (self.high14.value(), self.low14.value()));
        if let Some((hh, ll)) = extremes {
            self.stoch_k3.push(hundred * position_in_range(close, ll, hh));
        }
        if t < SUITE_LOOKBACK {
            return None;
        }
        let (hh, ll) = extremes.expect("past lookback");
        let (macd, signal) = (macd.expect("past lookback"), signal.expect("past lookback"));
        let (ema12, ema26) = (fast.expect("past lookback"), slow.expect("past lookback"));
        debug_assert!(self.sma20.full() && self.gains.full() && self.stoch_k3.full());

        let mid = self.sma20.mean();
        let sd = if self.close_max20.value() == self.close_min20.value() {
            T::zero()
        } else {
            (self.sq20.mean() - mid * mid).max(T::zero()).sqrt()
        };
        let (upper, lower) = (mid + T::of(2.0) * sd, mid - T::of(2.0) * sd);
        let past10 = self.closes[0];
        let vol_sma = self.vol5.mean();
        let williams = if hh > ll { -hundred * (hh - close) / (hh - ll) } else { T::of(-50.0) };
        let values: [T; INDICATOR_COUNT] = [
            self.sma5.mean() / close,
            self.sma10.mean() / close,
            mid / close,
            ema12 / close,
            ema26 / close,
            macd / close,
            signal / close,
            (macd - signal) / close,
            rsi_from(self.gains.total() / T::of(14.0), self.losses.total() / T::of(14.0)),
            mfi_from(self.pos_flow.total(), self.neg_flow.total()),
            (close - past10) / close,
            (close / past10 - T::one()) * hundred,
            position_in_range(close, lower, upper),
            (upper - lower) / mid,
            hundred * position_in_range(close, ll, hh),
            self.stoch_k3.mean(),
            self.tr14.mean() / close,
            self.obv10.total(),
            if vol_sma > T::zero() { bar.volume / vol_sma } else { T::one() },
            williams,
        ];
        Some(IndicatorVector { values })
    }
}

/// Indicator values for every group of a series, computed in one pass with
/// rolling windows. Entry `t` is `None` before [`SUITE_LOOKBACK`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndicatorSeries<T> {
    rows: Vec<Option<IndicatorVector<T>>>,
}

impl<T: Scalar> IndicatorSeries<T> {
    pub fn compute(bars: &[Ohlcv<T>]) -> Self {
        let mut stream = IndicatorStream::new();
        Self { rows: bars.iter().map(|b| stream.push(b)).collect() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Option<IndicatorVector<T>>) {
        self.rows.push(row);
    }

    pub fn get(&self, t: usize) -> Option<&IndicatorVector<T>> {
        self.rows.get(t).and_then(Option::as_ref)
    }

    /// Values of one indicator column for groups `from..=to`, if all defined.
    pub fn column(&self, index: usize, from: usize, to: usize) -> Option<Vec<T>> {
        (from..=to).map(|t| self.get(t).map(|v| v.values[index])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::indicator_suite;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(n: usize, seed: u64) -> Vec<Ohlcv<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut close: f64 = 50.0;
        (0..n)
            .map(|_| {
                let open = close;
                close = (close * (1.0 + rng.random_range(-0.02..0.02))).max(1.0);
                let high = open.max(close) * (1.0 + rng.random_range(0.0..0.01));
                let low = open.min(close) * (1.0 - rng.random_range(0.0..0.01));
                let volume = if rng.random_bool(0.05) { 0.0 } else { rng.random_range(100.0..5000.0) };
                Ohlcv::new(open, high, low, close, volume)
            })
            .collect()
    }

    fn close_enough(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn rolling_matches_naive_on_random_series() {
        let bars = random_series(10_000, 7);
        let series = IndicatorSeries::compute(&bars);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checks: Vec<usize> = (SUITE_LOOKBACK..SUITE_LOOKBACK + 50).collect();
        checks.extend((0..150).map(|_| rng.random_range(SUITE_LOOKBACK..bars.len())));
        checks.push(bars.len() - 1);
        for t in checks {
            let naive = indicator_suite(&bars, t).unwrap();
            let fast = series.get(t).unwrap();
            for (k, (a, b)) in naive.values.iter().zip(fast.values.iter()).enumerate() {
                assert!(close_enough(*a, *b), "t={t} {}: naive {a} rolling {b}", super::super::INDICATOR_NAMES[k]);
            }
        }
    }

    #[test]
    fn undefined_before_lookback() {
        let series = IndicatorSeries::compute(&random_series(40, 1));
        assert!(series.get(SUITE_LOOKBACK - 1).is_none());
        assert!(series.get(SUITE_LOOKBACK).is_some());
        assert_eq!(series.len(), 40);
    }

    #[test]
    fn flat_series_uses_conventions() {
        let bars = vec![Ohlcv::new(10.05, 10.05, 10.05, 10.05, 0.0); 60];
        let series = IndicatorSeries::compute(&bars);
        let v = series.get(59).unwrap();
        assert_eq!(v.get("bb_pct_b_20"), Some(0.5));
        assert_eq!(v.get("rsi_14"), Some(50.0));
        assert_eq!(v.get("mfi_14"), Some(50.0));
        assert_eq!(v.get("williams_r_14"), Some(-50.0));
        assert_eq!(v.get("volume_ratio_5"), Some(1.0));
        assert_eq!(v.get("bb_width_20"), Some(0.0));
    }
}
