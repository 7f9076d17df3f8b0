//! Execution and accounting. Actions fill at the group close; cash, fees and
//! equity are exact decimals.

use std::io::Write;

use chrono::{DateTime, Utc};
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{format_timestamp, GroupBar};
use crate::rl::Action;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("insufficient cash: need {needed}, have {available}")]
    InsufficientCash { needed: Decimal, available: Decimal },
    #[error("price must be positive, got {0}")]
    NonPositivePrice(Decimal),
    #[error("alignment: {actions} actions for {groups} groups")]
    Alignment { actions: usize, groups: usize },
    #[error("reports cover different data ranges")]
    MismatchedRange,
    #[error("at least two reports are needed, got {0}")]
    TooFewReports(usize),
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub initial_cash: Decimal,
    /// Shares per lot.
    pub lot_size: u32,
    /// Fee as a fraction of traded notional.
    pub fee_rate: Decimal,
    pub allow_short: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            initial_cash: Decimal::from(100_000),
            lot_size: 100,
            fee_rate: Decimal::new(1, 3),
            allow_short: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fill {
    pub group_index: usize,
    pub timestamp: DateTime<Utc>,
    pub side: Action,
    pub price: Decimal,
    pub notional: Decimal,
    pub fee: Decimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub cash: Decimal,
    /// Signed lot count.
    pub position: i32,
    pub lot_size: Decimal,
    pub fees_paid: Decimal,
    pub traded_notional: Decimal,
    pub trades: Vec<Fill>,
}

impl Portfolio {
    pub fn new(config: &BacktestConfig) -> Self {
        Self {
            cash: config.initial_cash,
            position: 0,
            lot_size: Decimal::from(config.lot_size),
            fees_paid: Decimal::ZERO,
            traded_notional: Decimal::ZERO,
            trades: Vec::new(),
        }
    }

    pub fn equity(&self, price: Decimal) -> Decimal {
        self.cash + Decimal::from(self.position) * self.lot_size * price
    }

    /// Position after `action` would be applied, or `None` for a no-op.
    pub fn target_position(&self, action: Action, allow_short: bool) -> Option<i32> {
        let floor = if allow_short { -1 } else { 0 };
        match action {
            Action::Hold => None,
            Action::Buy if self.position < 1 => Some(self.position + 1),
            Action::Sell if self.position > floor => Some(self.position - 1),
            _ => None,
        }
    }

    /// Executes one lot at `price`. Disallowed transitions are no-ops and
    /// return `Ok(None)`.
    pub fn apply_fill(
        &mut self,
        action: Action,
        price: Decimal,
        group_index: usize,
        timestamp: DateTime<Utc>,
        config: &BacktestConfig,
    ) -> Result<Option<Fill>, BacktestError> {
        if price <= Decimal::ZERO {
            return Err(BacktestError::NonPositivePrice(price));
        }
        let Some(target) = self.target_position(action, config.allow_short) else {
            return Ok(None);
        };
        let notional = price * self.lot_size;
        let fee = notional * config.fee_rate;
        let cash = match action {
            Action::Buy => self.cash - notional - fee,
            _ => self.cash + notional - fee,
        };
        if cash < Decimal::ZERO {
            return Err(BacktestError::InsufficientCash { needed: self.cash - cash, available: self.cash });
        }
        self.cash = cash;
        self.position = target;
        self.fees_paid += fee;
        self.traded_notional += notional;
        let fill = Fill { group_index, timestamp, side: action, price, notional, fee };
        self.trades.push(fill.clone());
        Ok(Some(fill))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquityPoint {
    pub group_index: usize,
    pub timestamp: DateTime<Utc>,
    pub price: Decimal,
    pub equity: Decimal,
    pub position: i32,
    /// Mark-to-market change since the previous group, net of this group's fee.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub accumulated_income: Decimal,
    pub trade_count: usize,
    pub fee_total: Decimal,
    pub max_drawdown: f64,
    pub final_equity: Decimal,
    pub initial_cash: Decimal,
    pub group_count: usize,
    pub first_group: usize,
    pub last_group: usize,
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub points: Vec<EquityPoint>,
    pub fills: Vec<Fill>,
    pub report: RunReport,
}

/// Executes `actions[g]` at the close of `groups[g]`.
pub fn run_backtest(
    strategy: &str,
    actions: &[Action],
    groups: &[GroupBar],
    config: &BacktestConfig,
) -> Result<BacktestResult, BacktestError> {
    if actions.len() != groups.len() {
        return Err(BacktestError::Alignment { actions: actions.len(), groups: groups.len() });
    }
    let (first, last) = match (groups.first(), groups.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(BacktestError::EmptyInput),
    };
    let mut portfolio = Portfolio::new(config);
    let mut points = Vec::with_capacity(groups.len());
    let mut prev_equity = config.initial_cash;
    let mut peak = config.initial_cash;
    let mut max_drawdown = 0.0_f64;
    for (action, group) in actions.iter().zip(groups) {
        portfolio.apply_fill(*action, group.close, group.group_index, group.timestamp, config)?;
        let equity = portfolio.equity(group.close);
        peak = peak.max(equity);
        if peak > Decimal::ZERO {
            let dd = ((peak - equity) / peak).to_f64().unwrap_or(0.0);
            max_drawdown = max_drawdown.max(dd);
        }
        points.push(EquityPoint {
            group_index: group.group_index,
            timestamp: group.timestamp,
            price: group.close,
            equity,
            position: portfolio.position,
            reward: (equity - prev_equity).to_f64().unwrap_or(f64::NAN),
        });
        prev_equity = equity;
    }
    let final_equity = prev_equity;
    let report = RunReport {
        strategy: strategy.to_string(),
        accumulated_income: final_equity - config.initial_cash,
        trade_count: portfolio.trades.len(),
        fee_total: portfolio.fees_paid,
        max_drawdown,
        final_equity,
        initial_cash: config.initial_cash,
        group_count: groups.len(),
        first_group: first.group_index,
        last_group: last.group_index,
        start: format_timestamp(&first.timestamp),
        end: format_timestamp(&last.timestamp),
    };
    Ok(BacktestResult { points, fills: portfolio.trades, report })
}

/// A trading rule fed one group at a time. `history` ends at the group being
/// decided; later groups are never visible.
pub trait Strategy {
    fn name(&self) -> &str;
    fn decide(&mut self, history: &[GroupBar]) -> Action;
}

/// Collects a strategy's actions by replaying the series group by group.
pub fn strategy_actions<S: Strategy + ?Sized>(strategy: &mut S, groups: &[GroupBar]) -> Vec<Action> {
    (0..groups.len()).map(|g| strategy.decide(&groups[..=g])).collect()
}

pub fn run_strategy<S: Strategy + ?Sized>(
    strategy: &mut S,
    groups: &[GroupBar],
    config: &BacktestConfig,
) -> Result<BacktestResult, BacktestError> {
    let actions = strategy_actions(strategy, groups);
    run_backtest(strategy.name(), &actions, groups, config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub strategy: String,
    pub accumulated_income: Decimal,
    pub trade_count: usize,
    pub fee_total: Decimal,
    pub max_drawdown: f64,
    pub final_equity: Decimal,
}

pub const RANKING_HEADER: &str = "rank,strategy,accumulated_income,trade_count,fee_total,max_drawdown,final_equity";

/// Ranks reports by accumulated income, highest first. Ties keep input order.
pub fn compare_runs(reports: &[RunReport]) -> Result<Vec<RankRow>, BacktestError> {
    if reports.len() < 2 {
        return Err(BacktestError::TooFewReports(reports.len()));
    }
    let r0 = &reports[0];
    let same = |r: &RunReport| {
        (r.first_group, r.last_group, r.group_count, &r.start, &r.end)
            == (r0.first_group, r0.last_group, r0.group_count, &r0.start, &r0.end)
    };
    if !reports.iter().all(same) {
        return Err(BacktestError::MismatchedRange);
    }
    let mut sorted: Vec<&RunReport> = reports.iter().collect();
    sorted.sort_by(|a, b| b.accumulated_income.cmp(&a.accumulated_income));
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| RankRow {
            rank: i + 1,
            strategy: r.strategy.clone(),
            accumulated_income: r.accumulated_income,
            trade_count: r.trade_count,
            fee_total: r.fee_total,
            max_drawdown: r.max_drawdown,
            final_equity: r.final_equity,
        })
        .collect())
}

pub fn write_ranking_csv<W: Write>(rows: &[RankRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RANKING_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.rank, r.strategy, r.accumulated_income, r.trade_count, r.fee_total, r.max_drawdown, r.final_equity
        )?;
    }
    Ok(())
}

pub const EQUITY_HEADER: &str = "group_index,timestamp,price,equity,position,reward";
pub const FILLS_HEADER: &str = "timestamp,side,price,notional,fee";

pub fn write_equity_csv<W: Write>(points: &[EquityPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{EQUITY_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.group_index,
            format_timestamp(&p.timestamp),
            p.price,
            p.equity,
            p.position,
            p.reward
        )?;
    }
    Ok(())
}

pub fn write_fills_csv<W: Write>(fills: &[Fill], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{FILLS_HEADER}")?;
    for f in fills {
        writeln!(out, "{},{},{},{},{}", format_timestamp(&f.timestamp), f.side, f.price, f.notional, f.fee)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::GroupBar;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dec(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    fn ts(g: usize) -> DateTime<Utc> {
        Utc.timestamp_opt(1_600_000_000 + 1800 * g as i64, 0).unwrap()
    }

    fn groups(closes: &[&str]) -> Vec<GroupBar> {
        closes
            .iter()
            .enumerate()
            .map(|(g, c)| {
                let c = dec(c);
                GroupBar {
                    timestamp: ts(g),
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

    #[test]
    fn buy_fill_example() {
        let cfg = BacktestConfig::default();
        let mut p = Portfolio::new(&cfg);
        let fill = p.apply_fill(Action::Buy, dec("10.00"), 0, ts(0), &cfg).unwrap().unwrap();
        assert_eq!(fill.notional, dec("1000"));
        assert_eq!(fill.fee, dec("1"));
        assert_eq!(p.cash, dec("98999"));
        assert_eq!(p.position, 1);
        assert_eq!(p.apply_fill(Action::Buy, dec("10.00"), 1, ts(1), &cfg).unwrap(), None);
        assert_eq!(p.fees_paid, dec("1"));
    }

    #[test]
    fn round_trip_costs_two_fees() {
        let cfg = BacktestConfig::default();
        let mut p = Portfolio::new(&cfg);
        p.apply_fill(Action::Buy, dec("10.00"), 0, ts(0), &cfg).unwrap();
        p.apply_fill(Action::Sell, dec("10.00"), 1, ts(1), &cfg).unwrap();
        assert_eq!(cfg.initial_cash - p.cash, dec("2"));
        assert_eq!(p.position, 0);
        assert_eq!(p.apply_fill(Action::Sell, dec("10.00"), 2, ts(2), &cfg).unwrap(), None);
    }

    #[test]
    fn shorting_flag() {
        let cfg = BacktestConfig { allow_short: true, ..Default::default() };
        let mut p = Portfolio::new(&cfg);
        p.apply_fill(Action::Sell, dec("20"), 0, ts(0), &cfg).unwrap().unwrap();
        assert_eq!(p.position, -1);
        assert_eq!(p.apply_fill(Action::Sell, dec("20"), 1, ts(1), &cfg).unwrap(), None);
        assert_eq!(p.equity(dec("20")), cfg.initial_cash - dec("2"));
        p.apply_fill(Action::Buy, dec("19"), 2, ts(2), &cfg).unwrap().unwrap();
        assert_eq!(p.position, 0);
    }

    #[test]
    fn insufficient_cash() {
        let cfg = BacktestConfig { initial_cash: dec("500"), ..Default::default() };
        let mut p = Portfolio::new(&cfg);
        let err = p.apply_fill(Action::Buy, dec("10"), 0, ts(0), &cfg).unwrap_err();
        assert!(matches!(err, BacktestError::InsufficientCash { .. }));
        assert_eq!(p.cash, dec("500"));
        assert!(matches!(
            p.apply_fill(Action::Buy, Decimal::ZERO, 0, ts(0), &cfg),
            Err(BacktestError::NonPositivePrice(_))
        ));
    }

    #[test]
    fn all_hold_is_flat() {
        let g = groups(&["10", "12", "9", "11"]);
        let res = run_backtest("hold", &[Action::Hold; 4], &g, &BacktestConfig::default()).unwrap();
        assert!(res.points.iter().all(|p| p.equity == dec("100000")));
        assert_eq!(res.report.trade_count, 0);
        assert_eq!(res.report.accumulated_income, Decimal::ZERO);
    }

    #[test]
    fn buy_and_hold_two_groups() {
        let g = groups(&["10", "11"]);
        let res = run_backtest("bh", &[Action::Buy, Action::Hold], &g, &BacktestConfig::default()).unwrap();
        assert_eq!(res.report.final_equity, dec("100099"));
        assert_eq!(res.report.accumulated_income, dec("99"));
        assert_eq!(res.points[0].reward, -1.0);
        assert_eq!(res.points[1].reward, 100.0);
    }

    #[test]
    fn alignment_error() {
        let g = groups(&["10", "11"]);
        assert!(matches!(
            run_backtest("x", &[Action::Hold], &g, &BacktestConfig::default()),
            Err(BacktestError::Alignment { actions: 1, groups: 2 })
        ));
    }

    #[test]
    fn drawdown() {
        let g = groups(&["10", "20", "10", "15"]);
        let actions = [Action::Buy, Action::Hold, Action::Hold, Action::Hold];
        let res = run_backtest("bh", &actions, &g, &BacktestConfig::default()).unwrap();
        // peak 100999, trough 99999
        let expected = 1000.0 / 100_999.0;
        assert!((res.report.max_drawdown - expected).abs() < 1e-12);
    }

    #[test]
    fn ranking_is_stable_and_sorted() {
        let g = groups(&["10", "11", "12"]);
        let cfg = BacktestConfig::default();
        let hold = run_backtest("hold", &[Action::Hold; 3], &g, &cfg).unwrap().report;
        let bh = run_backtest("bh", &[Action::Buy, Action::Hold, Action::Hold], &g, &cfg).unwrap().report;
        let rows = compare_runs(&[hold.clone(), bh.clone()]).unwrap();
        assert_eq!(rows[0].strategy, "bh");
        let mut twin = hold.clone();
        twin.strategy = "hold2".into();
        let rows = compare_runs(&[hold.clone(), twin]).unwrap();
        assert_eq!((rows[0].strategy.as_str(), rows[1].strategy.as_str()), ("hold", "hold2"));
        assert_eq!(compare_runs(&[hold.clone()]), Err(BacktestError::TooFewReports(1)));
        let other = run_backtest("x", &[Action::Hold; 2], &g[..2], &cfg).unwrap().report;
        assert_eq!(compare_runs(&[hold, other]), Err(BacktestError::MismatchedRange));
    }

    #[test]
    fn csv_outputs() {
        let g = groups(&["10", "11"]);
        let res = run_backtest("bh", &[Action::Buy, Action::Hold], &g, &BacktestConfig::default()).unwrap();
        let mut eq = Vec::new();
        write_equity_csv(&res.points, &mut eq).unwrap();
        let text = String::from_utf8(eq).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(EQUITY_HEADER));
        let mut fills = Vec::new();
        write_fills_csv(&res.fills, &mut fills).unwrap();
        assert_eq!(String::from_utf8(fills).unwrap().lines().nth(1).unwrap(), "2020-09-13T12:26:40Z,buy,10,1000,1.000");
    }

    fn random_prices(rng: &mut ChaCha8Rng, n: usize) -> Vec<Decimal> {
        let mut p = Decimal::from(10);
        (0..n)
            .map(|_| {
                let step = Decimal::new(rng.random_range(-5..=5), 2);
                p = (p + step).max(Decimal::new(100, 2));
                p
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn accounting_identity_under_random_actions(seed in 0u64..10_000, short in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = BacktestConfig { allow_short: short, ..Default::default() };
            let prices = random_prices(&mut rng, 500);
            let mut p = Portfolio::new(&cfg);
            let mut notional = Decimal::ZERO;
            for (g, price) in prices.iter().enumerate() {
                let a = Action::ALL[rng.random_range(0..3)];
                if let Some(f) = p.apply_fill(a, *price, g, ts(g), &cfg).unwrap() {
                    notional += f.notional;
                }
                let replay: Decimal = cfg.initial_cash
                    + p.trades.iter().map(|f| match f.side {
                        Action::Buy => -f.notional - f.fee,
                        _ => f.notional - f.fee,
                    }).sum::<Decimal>();
                prop_assert_eq!(p.cash, replay);
                let pos: i32 = p.trades.iter().map(|f| f.side.code() as i32).sum();
                prop_assert_eq!(p.position, pos);
                let allowed = if short { -1..=1 } else { 0..=1 };
                prop_assert!(allowed.contains(&p.position));
                prop_assert_eq!(p.fees_paid, notional * dec("0.001"));
            }
        }
    }
}
