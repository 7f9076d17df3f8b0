//! The fixed 20-indicator technical suite, evaluated directly over windows.

use super::{require, IndicatorError};
use crate::market_data::Ohlcv;
use crate::Scalar;

pub const INDICATOR_COUNT: usize = 20;

/// Column order of [`IndicatorVector`]. This order is the network input layout.
pub const INDICATOR_NAMES: [&str; INDICATOR_COUNT] = [
    "sma_5",
    "sma_10",
    "sma_20",
    "ema_12",
    "ema_26",
    "macd_line",
    "macd_signal",
    "macd_hist",
    "rsi_14",
    "mfi_14",
    "momentum_10",
    "roc_10",
    "bb_pct_b_20",
    "bb_width_20",
    "stoch_k_14",
    "stoch_d_3",
    "atr_14",
    "obv_delta_10",
    "volume_ratio_5",
    "williams_r_14",
];

/// First group index at which every indicator is defined (MACD signal:
/// 26-bar EMA seed plus a 9-value signal seed).
pub const SUITE_LOOKBACK: usize = 33;

pub(crate) const MACD_FAST: usize = 12;
pub(crate) const MACD_SLOW: usize = 26;
pub(crate) const MACD_SIGNAL: usize = 9;

/// Raw indicator values in [`INDICATOR_NAMES`] order.
///
/// SMA/EMA/MACD values, ATR and momentum are divided by the current close.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorVector<T> {
    pub values: [T; INDICATOR_COUNT],
}

impl<T: Scalar> IndicatorVector<T> {
    pub fn names() -> &'static [&'static str; INDICATOR_COUNT] {
        &INDICATOR_NAMES
    }

    pub fn get(&self, name: &str) -> Option<T> {
        INDICATOR_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

fn mean<T: Scalar>(xs: impl Iterator<Item = T>) -> T {
    let (sum, n) = xs.fold((T::zero(), 0usize), |(s, n), x| (s + x, n + 1));
    sum / T::of_usize(n)
}

/// Simple moving average of the trailing `period` values.
pub fn sma<T: Scalar>(values: &[T], period: usize) -> Result<T, IndicatorError> {
    if period == 0 {
        return Err(IndicatorError::InvalidWindow { min: 1 });
    }
    require(period, values.len())?;
    Ok(mean(values[values.len() - period..].iter().copied()))
}

/// EMA seeded with the simple mean of its first `period` inputs. Element `k`
/// of the result is the EMA at input index `period - 1 + k`.
pub(crate) fn ema_series<T: Scalar>(xs: &[T], period: usize) -> Vec<T> {
    let alpha = T::of(2.0) / T::of_usize(period + 1);
    let seed = mean(xs[..period].iter().copied());
    let mut out = Vec::with_capacity(xs.len() + 1 - period);
    out.push(seed);
    for x in &xs[period..] {
        let prev = out[out.len() - 1];
        out.push(alpha * *x + (T::one() - alpha) * prev);
    }
    out
}

pub(crate) fn ema_last<T: Scalar>(xs: &[T], period: usize) -> T {
    *ema_series(xs, period).last().expect("at least one EMA value")
}

/// RSI from simple average gain and loss over the window of closes.
pub(crate) fn rsi_from<T: Scalar>(gain: T, loss: T) -> T {
    let hundred = T::of(100.0);
    if gain == T::zero() && loss == T::zero() {
        T::of(50.0)
    } else if loss == T::zero() {
        hundred
    } else {
        hundred - hundred / (T::one() + gain / loss)
    }
}

pub(crate) fn mfi_from<T: Scalar>(pos: T, neg: T) -> T {
    let hundred = T::of(100.0);
    if pos + neg == T::zero() {
        T::of(50.0)
    } else if neg == T::zero() {
        hundred
    } else {
        hundred - hundred / (T::one() + pos / neg)
    }
}

/// `(close - low) / (high - low)`, or 0.5 when the range is empty.
pub(crate) fn position_in_range<T: Scalar>(close: T, low: T, high: T) -> T {
    if high > low {
        (close - low) / (high - low)
    } else {
        T::of(0.5)
    }
}

pub(crate) fn typical_price<T: Scalar>(b: &Ohlcv<T>) -> T {
    (b.high + b.low + b.close) / T::of(3.0)
}

pub(crate) fn true_range<T: Scalar>(b: &Ohlcv<T>, prev_close: T) -> T {
    (b.high - b.low).max((b.high - prev_close).abs()).max((b.low - prev_close).abs())
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Evaluates the suite at group `at` by recomputing every indicator from its
/// window (EMAs from the start of the series). Bars after `at` are ignored.
pub fn indicator_suite<T: Scalar>(bars: &[Ohlcv<T>], at: usize) -> Result<IndicatorVector<T>, IndicatorError> {
    require(SUITE_LOOKBACK + 1, at + 1)?;
    require(at + 1, bars.len())?;
    let h = &bars[..=at];
    let closes: Vec<T> = h.iter().map(|b| b.close).collect();
    let close = closes[at];
    let hundred = T::of(100.0);
    let tail = |n: usize| &closes[closes.len() - n..];
    let bars_tail = |n: usize| &h[h.len() - n..];

    let sma = |n: usize| sma(&closes, n).expect("lookback checked");
    let fast = ema_series(&closes, MACD_FAST);
    let slow = ema_series(&closes, MACD_SLOW);
    // align the fast EMA with the slow one, which starts later
    let macd_series: Vec<T> = fast[MACD_SLOW - MACD_FAST..].iter().zip(&slow).map(|(f, s)| *f - *s).collect();
    let (ema12, ema26) = (fast[fast.len() - 1], slow[slow.len() - 1]);
    let macd = ema12 - ema26;
    let signal = ema_last(&macd_series, MACD_SIGNAL);

    let (gain, loss) = tail(15).windows(2).fold((T::zero(), T::zero()), |(g, l), w| {
        let d = w[1] - w[0];
        (g + d.max(T::zero()), l + (-d).max(T::zero()))
    });
    let rsi = rsi_from(gain / T::of(14.0), loss / T::of(14.0));

    let (pos, neg) = bars_tail(15).windows(2).fold((T::zero(), T::zero()), |(p, n), w| {
        let (tp0, tp1) = (typical_price(&w[0]), typical_price(&w[1]));
        let flow = tp1 * w[1].volume;
        if tp1 > tp0 {
            (p + flow, n)
        } else if tp1 < tp0 {
            (p, n + flow)
        } else {
            (p, n)
        }
    });
    let mfi = mfi_from(pos, neg);

    let past10 = closes[at - 10];
    let momentum = (close - past10) / close;
    let roc = (close / past10 - T::one()) * hundred;

    let mid = sma(20);
    let flat = tail(20).iter().all(|x| *x == close);
    let sd = if flat { T::zero() } else { mean(tail(20).iter().map(|x| (*x - mid) * (*x - mid))).sqrt() };
    let (upper, lower) = (mid + T::of(2.0) * sd, mid - T::of(2.0) * sd);
    let pct_b = position_in_range(close, lower, upper);
    let width = (upper - lower) / mid;

    let stoch_k_at = |t: usize| {
        let w = &h[t + 1 - 14..=t];
        let hh = w.iter().map(|b| b.high).fold(T::neg_infinity(), T::max);
        let ll = w.iter().map(|b| b.low).fold(T::infinity(), T::min);
        (hundred * position_in_range(h[t].close, ll, hh), hh, ll)
    };
    let (stoch_k, hh, ll) = stoch_k_at(at);
    let stoch_d = mean((at - 2..=at).map(|t| stoch_k_at(t).0));
    let williams = if hh > ll { -hundred * (hh - close) / (hh - ll) } else { T::of(-50.0) };

    let atr = mean(bars_tail(15).windows(2).map(|w| true_range(&w[1], w[0].close)));

    let obv_delta: T = bars_tail(11).windows(2).map(|w| sign(w[1].close - w[0].close) * w[1].volume).sum();
    let vol_sma = mean(bars_tail(5).iter().map(|b| b.volume));
    let vol_ratio = if vol_sma > T::zero() { h[at].volume / vol_sma } else { T::one() };

    Ok(IndicatorVector {
        values: [
            sma(5) / close,
            sma(10) / close,
            mid / close,
            ema12 / close,
            ema26 / close,
            macd / close,
            signal / close,
            (macd - signal) / close,
            rsi,
            mfi,
            momentum,
            roc,
            pct_b,
            width,
            stoch_k,
            stoch_d,
            atr / close,
            obv_delta,
            vol_ratio,
            williams,
        ],
    })
}
