//! Ingestion, validation and positional grouping of 1-minute OHLCV bars.
//!
//! Prices and volumes are held as fixed-point decimals with four fractional
//! digits. Numeric code reads them through [`Ohlcv`], a plain float view.

use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, SubsecRound, TimeZone, Utc};
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::{Decimal, RoundingStrategy};
use serde::Serialize;
use thiserror::Error;

use crate::Scalar;

/// Fractional digits kept for prices and volumes.
pub const PRICE_DECIMALS: u32 = 4;

/// Default number of 1-minute bars per group.
pub const DEFAULT_GROUP_SIZE: usize = 30;

pub const BAR_HEADER: &str = "timestamp,open,high,low,close,volume";
pub const GROUP_HEADER: &str = "timestamp,open,high,low,close,volume,group_index,member_count";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("timestamp at line {line} does not increase")]
    NonMonotonicTimestamp { line: usize },
    #[error("invalid {field} at line {line}")]
    InvalidPrice { line: usize, field: &'static str },
    #[error("empty input")]
    EmptyInput,
    #[error("group_size must be at least 1")]
    InvalidGroupSize,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("unusable data: {0}")]
    Invalid(String),
}

/// Rounds to the ingestion precision (banker's rounding).
pub fn to_fixed(value: Decimal) -> Decimal {
    value
        .round_dp_with_strategy(PRICE_DECIMALS, RoundingStrategy::MidpointNearestEven)
        .normalize()
}

/// Converts a float to a fixed-point price. Returns `None` for non-finite input.
pub fn fixed_from_f64(value: f64) -> Option<Decimal> {
    Decimal::from_f64_retain(value).map(to_fixed)
}

/// A raw 1-minute OHLCV record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bar {
    pub timestamp: DateTime<Utc>,
    pub open: Decimal,
    pub high: Decimal,
    pub low: Decimal,
    pub close: Decimal,
    pub volume: Decimal,
}

impl Bar {
    /// Returns the first field that breaks the OHLC invariants, if any.
    pub fn invariant_violation(&self) -> Option<&'static str> {
        let fields = [("open", self.open), ("high", self.high), ("low", self.low), ("close", self.close)];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v <= Decimal::ZERO) {
            return Some(name);
        }
        if self.high < self.low || self.high < self.open.max(self.close) {
            return Some("high");
        }
        if self.low > self.open.min(self.close) {
            return Some("low");
        }
        if self.volume < Decimal::ZERO {
            return Some("volume");
        }
        None
    }

    pub fn ohlcv<T: Scalar>(&self) -> Ohlcv<T> {
        Ohlcv::from_decimals(self.open, self.high, self.low, self.close, self.volume)
    }
}

/// Aggregate of `member_count` consecutive bars.
///
/// `timestamp` is the timestamp of the last member, i.e. the instant at which
/// the group close becomes known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupBar {
    pub timestamp: DateTime<Utc>,
    pub open: Decimal,
    pub high: Decimal,
    pub low: Decimal,
    pub close: Decimal,
    pub volume: Decimal,
    pub group_index: usize,
    pub member_count: usize,
}

impl GroupBar {
    pub fn ohlcv<T: Scalar>(&self) -> Ohlcv<T> {
        Ohlcv::from_decimals(self.open, self.high, self.low, self.close, self.volume)
    }
}

/// Float view of a bar used by the indicator and state code.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ohlcv<T> {
    pub open: T,
    pub high: T,
    pub low: T,
    pub close: T,
    pub volume: T,
}

impl<T: Scalar> Ohlcv<T> {
    pub fn new(open: T, high: T, low: T, close: T, volume: T) -> Self {
        Self { open, high, low, close, volume }
    }

    fn from_decimals(open: Decimal, high: Decimal, low: Decimal, close: Decimal, volume: Decimal) -> Self {
        let f = |d: Decimal| T::of(d.to_f64().expect("decimal price fits in f64"));
        Self::new(f(open), f(high), f(low), f(close), f(volume))
    }

    /// Multiplies all prices by `k`, leaving volume unchanged.
    pub fn scale_prices(&self, k: T) -> Self {
        Self::new(self.open * k, self.high * k, self.low * k, self.close * k, self.volume)
    }
}

/// Float views of a group series.
pub fn ohlcv_series<T: Scalar>(groups: &[GroupBar]) -> Vec<Ohlcv<T>> {
    groups.iter().map(GroupBar::ohlcv).collect()
}

/// Output of [`group_bars`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grouped {
    pub groups: Vec<GroupBar>,
    /// True when the last group has fewer than `group_size` members.
    pub partial_tail: bool,
}

/// Merges consecutive runs of `group_size` bars. Grouping is positional:
/// session and overnight boundaries are not considered.
pub fn group_bars(bars: &[Bar], group_size: usize) -> Result<Grouped, DataError> {
    if group_size == 0 {
        return Err(DataError::InvalidGroupSize);
    }
    if bars.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let groups: Vec<GroupBar> = bars
        .chunks(group_size)
        .enumerate()
        .map(|(group_index, members)| {
            let first = &members[0];
            let last = &members[members.len() - 1];
            GroupBar {
                timestamp: last.timestamp,
                open: first.open,
                high: members.iter().map(|b| b.high).max().expect("non-empty chunk"),
                low: members.iter().map(|b| b.low).min().expect("non-empty chunk"),
                close: last.close,
                volume: members.iter().map(|b| b.volume).sum(),
                group_index,
                member_count: members.len(),
            }
        })
        .collect();
    let partial_tail = bars.len() % group_size != 0;
    Ok(Grouped { groups, partial_tail })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub field: &'static str,
}

/// Findings of [`validate_series`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub bar_count: usize,
    /// Intra-day steps longer than one minute.
    pub gap_count: usize,
    pub duplicate_count: usize,
    /// Steps where the timestamp goes backwards.
    pub out_of_order_count: usize,
    /// Bars whose open differs from the previous close (informational).
    pub open_gap_count: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.gap_count == 0 && self.duplicate_count == 0 && self.out_of_order_count == 0 && self.violations.is_empty()
    }
}

pub fn validate_series(bars: &[Bar]) -> ValidationReport {
    let mut report = ValidationReport { bar_count: bars.len(), ..Default::default() };
    for (index, bar) in bars.iter().enumerate() {
        if let Some(field) = bar.invariant_violation() {
            report.violations.push(Violation { index, field });
        }
    }
    for pair in bars.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let dt = (cur.timestamp - prev.timestamp).num_seconds();
        if dt == 0 {
            report.duplicate_count += 1;
        } else if dt < 0 {
            report.out_of_order_count += 1;
        } else if dt > 60 && prev.timestamp.date_naive() == cur.timestamp.date_naive() {
            report.gap_count += 1;
        }
        if cur.open != prev.close {
            report.open_gap_count += 1;
        }
    }
    report
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    if let Ok(secs) = raw.parse::<i64>() {
        return Utc.timestamp_opt(secs, 0).single();
    }
    if let Ok(ts) = DateTime::parse_from_rfc3339(raw) {
        return Some(ts.with_timezone(&Utc).trunc_subsecs(0));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|naive| Utc.from_utc_datetime(&naive).trunc_subsecs(0))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn parse_decimal(raw: &str, line: usize, field: &'static str) -> Result<Decimal, DataError> {
    let value = Decimal::from_str(raw)
        .or_else(|_| Decimal::from_scientific(raw))
        .map_err(|_| DataError::MalformedRow { line, reason: format!("{field} is not a number") })?;
    Ok(to_fixed(value))
}

fn check_header(found: Option<&str>, expected: &str) -> Result<(), DataError> {
    match found {
        Some(h) if h.trim().trim_start_matches('\u{feff}') == expected => Ok(()),
        Some(h) => Err(DataError::MalformedRow { line: 1, reason: format!("unexpected header `{}`", h.trim()) }),
        None => Err(DataError::EmptyInput),
    }
}

fn parse_bar_fields(fields: &[&str], line: usize) -> Result<Bar, DataError> {
    let timestamp = parse_timestamp(fields[0])
        .ok_or_else(|| DataError::MalformedRow { line, reason: "bad timestamp".into() })?;
    let bar = Bar {
        timestamp,
        open: parse_decimal(fields[1], line, "open")?,
        high: parse_decimal(fields[2], line, "high")?,
        low: parse_decimal(fields[3], line, "low")?,
        close: parse_decimal(fields[4], line, "close")?,
        volume: parse_decimal(fields[5], line, "volume")?,
    };
    if let Some(field) = bar.invariant_violation() {
        return Err(DataError::InvalidPrice { line, field });
    }
    Ok(bar)
}

/// Reads `timestamp,open,high,low,close,volume` CSV. Timestamps may be
/// ISO-8601 or integer epoch seconds and must strictly increase.
pub fn parse_ohlcv_csv<R: BufRead>(source: R) -> Result<Vec<Bar>, DataError> {
    let mut lines = source.lines();
    let header = lines.next().transpose()?;
    check_header(header.as_deref(), BAR_HEADER)?;
    let mut bars: Vec<Bar> = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line = i + 2;
        let raw = raw?;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(DataError::MalformedRow { line, reason: format!("expected 6 fields, found {}", fields.len()) });
        }
        let bar = parse_bar_fields(&fields, line)?;
        if bars.last().is_some_and(|prev| prev.timestamp >= bar.timestamp) {
            return Err(DataError::NonMonotonicTimestamp { line });
        }
        bars.push(bar);
    }
    Ok(bars)
}

/// Reads the group CSV written by [`write_group_csv`].
pub fn parse_group_csv<R: BufRead>(source: R) -> Result<Vec<GroupBar>, DataError> {
    let mut lines = source.lines();
    let header = lines.next().transpose()?;
    check_header(header.as_deref(), GROUP_HEADER)?;
    let mut groups: Vec<GroupBar> = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line = i + 2;
        let raw = raw?;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(DataError::MalformedRow { line, reason: format!("expected 8 fields, found {}", fields.len()) });
        }
        let bar = parse_bar_fields(&fields[..6], line)?;
        let count = |s: &str| {
            s.parse::<usize>().map_err(|_| DataError::MalformedRow { line, reason: "bad count".into() })
        };
        if groups.last().is_some_and(|prev| prev.timestamp >= bar.timestamp) {
            return Err(DataError::NonMonotonicTimestamp { line });
        }
        groups.push(GroupBar {
            timestamp: bar.timestamp,
            open: bar.open,
            high: bar.high,
            low: bar.low,
            close: bar.close,
            volume: bar.volume,
            group_index: count(fields[6])?,
            member_count: count(fields[7])?,
        });
    }
    Ok(groups)
}

pub fn write_bars_csv<W: Write>(bars: &[Bar], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{BAR_HEADER}")?;
    for b in bars {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            format_timestamp(&b.timestamp),
            b.open.normalize(),
            b.high.normalize(),
            b.low.normalize(),
            b.close.normalize(),
            b.volume.normalize()
        )?;
    }
    Ok(())
}

pub fn write_group_csv<W: Write>(groups: &[GroupBar], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{GROUP_HEADER}")?;
    for g in groups {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            format_timestamp(&g.timestamp),
            g.open.normalize(),
            g.high.normalize(),
            g.low.normalize(),
            g.close.normalize(),
            g.volume.normalize(),
            g.group_index,
            g.member_count
        )?;
    }
    Ok(())
}
