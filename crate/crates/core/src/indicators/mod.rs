//! Sentiment (AR/BR), log-return, z-score and technical indicator features.
//!
//! Everything here is a pure function of a trailing window: the value at
//! group `t` never reads bars after `t`.

mod rolling;
mod suite;

pub use rolling::{IndicatorSeries, IndicatorStream};
pub(crate) use rolling::Ema;
pub use suite::{indicator_suite, sma, IndicatorVector, INDICATOR_COUNT, INDICATOR_NAMES, SUITE_LOOKBACK};

use thiserror::Error;

use crate::market_data::Ohlcv;
use crate::Scalar;

/// Default AR/BR window, in group bars.
pub const DEFAULT_ARBR_WINDOW: usize = 26;

/// Default number of log-return features.
pub const DEFAULT_RETURN_LAGS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndicatorError {
    #[error("insufficient history: need {needed}, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("non-positive price at index {index}")]
    NonPositivePrice { index: usize },
    #[error("window must be at least {min}")]
    InvalidWindow { min: usize },
}

fn require(needed: usize, available: usize) -> Result<(), IndicatorError> {
    if available < needed {
        Err(IndicatorError::InsufficientHistory { needed, available })
    } else {
        Ok(())
    }
}

/// The `count` most recent log returns `ln(close[g] / close[g-1])`, oldest first.
pub fn log_returns<T: Scalar>(closes: &[T], count: usize) -> Result<Vec<T>, IndicatorError> {
    require(count + 1, closes.len())?;
    let start = closes.len() - count - 1;
    let tail = &closes[start..];
    if let Some(i) = tail.iter().position(|c| !(*c > T::zero())) {
        return Err(IndicatorError::NonPositivePrice { index: start + i });
    }
    Ok(tail.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Population mean and standard deviation of a z-score window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScoreParams<T> {
    pub mean: T,
    pub std: T,
    pub window: usize,
}

/// Normalizes the trailing `window` values by their own population mean and
/// standard deviation. A zero standard deviation maps every value to 0; a
/// spread at floating-point rounding level counts as zero.
pub fn zscore<T: Scalar>(series: &[T], window: usize) -> Result<(Vec<T>, ZScoreParams<T>), IndicatorError> {
    if window < 2 {
        return Err(IndicatorError::InvalidWindow { min: 2 });
    }
    require(window, series.len())?;
    let tail = &series[series.len() - window..];
    let n = T::of_usize(window);
    let mean = tail.iter().copied().sum::<T>() / n;
    let var = tail.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / n;
    let scale = tail.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let std = if var.sqrt() <= T::of(1e3) * T::epsilon() * scale { T::zero() } else { var.sqrt() };
    let params = ZScoreParams { mean, std, window };
    let out = if std > T::zero() {
        tail.iter().map(|x| (*x - mean) / std).collect()
    } else {
        vec![T::zero(); window]
    };
    Ok((out, params))
}

/// Popularity index: `100 * sum(high - open) / sum(open - low)` over the
/// trailing `n` bars. `None` when the denominator is not positive.
pub fn ar_indicator<T: Scalar>(bars: &[Ohlcv<T>], n: usize) -> Result<Option<T>, IndicatorError> {
    if n == 0 {
        return Err(IndicatorError::InvalidWindow { min: 1 });
    }
    require(n, bars.len())?;
    let window = &bars[bars.len() - n..];
    let num: T = window.iter().map(|b| b.high - b.open).sum();
    let den: T = window.iter().map(|b| b.open - b.low).sum();
    Ok(ratio_x100(num, den))
}

/// Willingness index: `100 * sum(high - prev_close) / sum(prev_close - low)`
/// over the trailing `n` bars, each term floored at zero. Needs `n + 1` bars.
pub fn br_indicator<T: Scalar>(bars: &[Ohlcv<T>], n: usize) -> Result<Option<T>, IndicatorError> {
    if n == 0 {
        return Err(IndicatorError::InvalidWindow { min: 1 });
    }
    require(n + 1, bars.len())?;
    let window = &bars[bars.len() - n - 1..];
    let (num, den) = window.windows(2).fold((T::zero(), T::zero()), |(num, den), w| {
        let prev_close = w[0].close;
        (num + (w[1].high - prev_close).max(T::zero()), den + (prev_close - w[1].low).max(T::zero()))
    });
    Ok(ratio_x100(num, den))
}

fn ratio_x100<T: Scalar>(num: T, den: T) -> Option<T> {
    (den > T::zero()).then(|| num / den * T::of(100.0))
}

/// AR/BR pair at one group. Each side is absent when undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArBrValue<T> {
    pub ar: Option<T>,
    pub br: Option<T>,
    pub window: usize,
}

impl<T: Scalar> ArBrValue<T> {
    pub fn absent(window: usize) -> Self {
        Self { ar: None, br: None, window }
    }

    /// AR/BR using bars `0..=at`. Incomplete windows yield absent values.
    pub fn at(bars: &[Ohlcv<T>], at: usize, window: usize) -> Self {
        if bars.is_empty() {
            return Self::absent(window);
        }
        let history = &bars[..=at.min(bars.len() - 1)];
        Self {
            ar: ar_indicator(history, window).ok().flatten(),
            br: br_indicator(history, window).ok().flatten(),
            window,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.ar.is_some() && self.br.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(o: f64, h: f64, l: f64, c: f64) -> Ohlcv<f64> {
        Ohlcv::new(o, h, l, c, 1.0)
    }

    #[test]
    fn log_return_of_five_percent() {
        let r = log_returns(&[100.0, 105.0], 1).unwrap();
        assert!((r[0] - 0.048790164169432_f64).abs() < 1e-12);
    }

    #[test]
    fn log_returns_of_constant_series() {
        assert_eq!(log_returns(&[10.0, 10.0, 10.0], 2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn log_returns_errors() {
        assert_eq!(log_returns(&[10.0, 0.0, 10.0], 2), Err(IndicatorError::NonPositivePrice { index: 1 }));
        assert_eq!(
            log_returns(&[10.0, 11.0], 2),
            Err(IndicatorError::InsufficientHistory { needed: 3, available: 2 })
        );
    }

    #[test]
    fn log_returns_take_most_recent_oldest_first() {
        let closes = [1.0, 2.0, 4.0, 12.0];
        let r = log_returns(&closes, 2).unwrap();
        assert_eq!(r, vec![2.0f64.ln(), 3.0f64.ln()]);
    }

    #[test]
    fn zscore_of_one_two_three() {
        let (z, p) = zscore(&[1.0, 2.0, 3.0], 3).unwrap();
        // mean 2, population sigma sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        assert_eq!(p.mean, 2.0);
        assert!((p.std - s).abs() < 1e-15);
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in z.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_flat_and_short() {
        let (z, p) = zscore(&[5.0, 5.0, 5.0, 5.0], 4).unwrap();
        assert_eq!(z, vec![0.0; 4]);
        assert_eq!(p.std, 0.0);
        assert_eq!(
            zscore(&[1.0, 2.0], 3).unwrap_err(),
            IndicatorError::InsufficientHistory { needed: 3, available: 2 }
        );
        assert_eq!(zscore(&[1.0, 2.0], 1).unwrap_err(), IndicatorError::InvalidWindow { min: 2 });
    }

    #[test]
    fn zscore_of_inexact_constant_is_zero() {
        // 0.1 is not representable, so the mean is off by a few ulps
        let (z, p) = zscore(&[0.1; 64], 64).unwrap();
        assert_eq!(p.std, 0.0);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zscore_uses_trailing_window_only() {
        let (z, p) = zscore(&[1000.0, 1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(p.mean, 2.0);
        assert_eq!(z.len(), 3);
    }

    #[test]
    fn ar_two_bars() {
        let bars = [bar(10.0, 12.0, 9.0, 11.0), bar(11.0, 13.0, 10.0, 12.0)];
        assert_eq!(ar_indicator(&bars, 2).unwrap(), Some(200.0));
    }

    #[test]
    fn ar_edge_cases() {
        let open_high = [bar(10.0, 10.0, 9.0, 9.5), bar(9.5, 9.5, 9.0, 9.2)];
        assert_eq!(ar_indicator(&open_high, 2).unwrap(), Some(0.0));
        let open_low = [bar(10.0, 11.0, 10.0, 10.5), bar(10.5, 11.0, 10.5, 10.7)];
        assert_eq!(ar_indicator(&open_low, 2).unwrap(), None);
        assert!(matches!(ar_indicator(&open_low, 3), Err(IndicatorError::InsufficientHistory { .. })));
    }

    #[test]
    fn br_two_bars() {
        // prev closes 10 and 11 against (h, l) = (12, 9) and (13, 10)
        let bars = [bar(9.0, 10.0, 9.0, 10.0), bar(10.0, 12.0, 9.0, 11.0), bar(11.0, 13.0, 10.0, 12.0)];
        assert_eq!(br_indicator(&bars, 2).unwrap(), Some(200.0));
    }

    #[test]
    fn br_edge_cases() {
        let bars = [bar(10.0, 10.0, 9.0, 10.0), bar(10.0, 10.0, 9.5, 9.8), bar(9.8, 9.8, 9.0, 9.5)];
        assert_eq!(br_indicator(&bars, 2).unwrap(), Some(0.0));
        assert_eq!(
            br_indicator(&bars[1..], 2),
            Err(IndicatorError::InsufficientHistory { needed: 3, available: 2 })
        );
    }

    #[test]
    fn br_floors_negative_terms() {
        // second bar gaps down entirely below the previous close
        let bars = [bar(10.0, 10.0, 10.0, 10.0), bar(8.0, 9.0, 7.0, 8.0), bar(8.0, 9.0, 7.0, 8.5)];
        // terms: (max(0, 9-10), 10-7) = (0, 3); (9-8, 8-7) = (1, 1)
        assert_eq!(br_indicator(&bars, 2).unwrap(), Some(25.0));
    }

    #[test]
    fn arbr_at_marks_incomplete_windows_absent() {
        let bars: Vec<_> = (0..5).map(|i| bar(10.0 + i as f64, 11.0 + i as f64, 9.0 + i as f64, 10.5 + i as f64)).collect();
        let v = ArBrValue::at(&bars, 1, 2);
        assert!(v.ar.is_some());
        assert!(v.br.is_none());
        assert!(ArBrValue::at(&bars, 2, 2).is_complete());
    }
}
