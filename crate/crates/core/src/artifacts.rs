//! Run-directory layout and the files each subcommand reads and writes.
//!
//! ```text
//! <run>/config.toml                  resolved configuration
//! <run>/bars.csv                     synth, ingest
//! <run>/groups.csv                   ingest, backtest
//! <run>/<model>.ckpt                 train
//! <run>/<model>_metrics.csv          train
//! <run>/report.json                  backtest, primary strategy
//! <run>/ranking.{csv,json}           backtest, compare
//! <run>/strategies/<name>/{equity.csv,fills.csv,report.json,trace.csv}
//! <run>/plot/{arbr,price,markers,equity}.csv
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use thiserror::Error;

use crate::backtest::{compare_runs, write_equity_csv, write_fills_csv, write_ranking_csv, BacktestError, RankRow, RunReport};
use crate::config::RunConfig;
use crate::indicators::{ArBrValue, IndicatorSeries, INDICATOR_NAMES};
use crate::market_data::{format_timestamp, ohlcv_series, parse_group_csv, write_group_csv, GroupBar};
use crate::nn::{Checkpoint, NetError, QNet};
use crate::pipeline::{StrategyRun, TrainedModel, DENSE, FUSED, UNFUSED};
use crate::state::{feature_names, StateConfig, StockState};
use crate::strategies::write_signal_trace;

pub const CONFIG_FILE: &str = "config.toml";
pub const BARS_FILE: &str = "bars.csv";
pub const GROUPS_FILE: &str = "groups.csv";
pub const REPORT_FILE: &str = "report.json";
pub const STRATEGIES_DIR: &str = "strategies";
pub const PLOT_DIR: &str = "plot";
pub const PRIMARY_STRATEGY: &str = FUSED;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("missing run artifact {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_path_buf(), source }
}

fn malformed(path: &Path, message: impl Into<String>) -> ArtifactError {
    ArtifactError::Malformed { path: path.to_path_buf(), message: message.into() }
}

/// Writes `path` through `f`, creating parent directories.
pub fn write_file<F>(path: &Path, f: F) -> Result<(), ArtifactError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    f(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>, ArtifactError> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ArtifactError::Missing(path.to_path_buf())),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_file(path, |out| writeln!(out, "{text}"))
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> Result<(), ArtifactError> {
    let text = cfg.to_flat_toml();
    write_file(&dir.join(CONFIG_FILE), |out| out.write_all(text.as_bytes()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per group: index, AR, BR, then the indicator suite. Undefined
/// values are left empty.
pub fn write_indicators_csv<W: Write>(groups: &[GroupBar], arbr_window: usize, mut out: W) -> std::io::Result<()> {
    writeln!(out, "group_index,ar,br,{}", INDICATOR_NAMES.join(","))?;
    let bars = ohlcv_series::<f64>(groups);
    let suite = IndicatorSeries::compute(&bars);
    for g in 0..bars.len() {
        let arbr = ArBrValue::at(&bars, g, arbr_window);
        let cols: Vec<String> = match suite.get(g) {
            Some(v) => v.values.iter().map(f64::to_string).collect(),
            None => vec![String::new(); INDICATOR_NAMES.len()],
        };
        writeln!(out, "{g},{},{},{}", opt(arbr.ar), opt(arbr.br), cols.join(","))?;
    }
    Ok(())
}

pub fn write_states_csv<W: Write>(states: &[StockState], cfg: &StateConfig, mut out: W) -> std::io::Result<()> {
    writeln!(out, "group_index,{},valid", feature_names(cfg).join(","))?;
    for s in states {
        let cols: Vec<String> = s.features.iter().map(f64::to_string).collect();
        writeln!(out, "{},{},{}", s.group_index, cols.join(","), u8::from(s.valid))?;
    }
    Ok(())
}

pub fn checkpoint_path(dir: &Path, model: &str) -> PathBuf {
    dir.join(format!("{model}.ckpt"))
}

pub fn save_models(dir: &Path, models: &[TrainedModel]) -> Result<(), ArtifactError> {
    for m in models {
        let ckpt = m.agent.checkpoint();
        write_file(&checkpoint_path(dir, m.name), |out| ckpt.write(out).map_err(std::io::Error::other))?;
        write_file(&dir.join(format!("{}_metrics.csv", m.name)), |out| m.log.write_csv(out))?;
    }
    Ok(())
}

/// Networks saved by `train`. The recurrent model is required; the
/// feedforward one is loaded when present.
pub fn load_nets(dir: &Path) -> Result<Vec<(&'static str, QNet<f64>)>, ArtifactError> {
    let mut nets = Vec::new();
    for (name, required) in [(UNFUSED, true), (DENSE, false)] {
        let path = checkpoint_path(dir, name);
        if !required && !path.exists() {
            continue;
        }
        let ckpt = Checkpoint::read(open(&path)?).map_err(|e| malformed(&path, e.to_string()))?;
        nets.push((name, ckpt.net));
    }
    Ok(nets)
}

/// Writes every strategy's outputs, the run ranking and the primary report.
pub fn write_backtest(dir: &Path, groups: &[GroupBar], runs: &[StrategyRun]) -> Result<Vec<RankRow>, ArtifactError> {
    write_file(&dir.join(GROUPS_FILE), |out| write_group_csv(groups, out))?;
    for run in runs {
        let sdir = dir.join(STRATEGIES_DIR).join(run.name());
        let r = &run.result;
        write_file(&sdir.join("equity.csv"), |out| write_equity_csv(&r.points, out))?;
        write_file(&sdir.join("fills.csv"), |out| write_fills_csv(&r.fills, out))?;
        write_json(&sdir.join(REPORT_FILE), &r.report)?;
        if let Some(trace) = &run.trace {
            write_file(&sdir.join("trace.csv"), |out| write_signal_trace(trace, r, out))?;
        }
    }
    let primary = runs
        .iter()
        .find(|r| r.name() == PRIMARY_STRATEGY)
        .or_else(|| runs.first())
        .ok_or_else(|| ArtifactError::Missing(dir.join(STRATEGIES_DIR)))?;
    write_json(&dir.join(REPORT_FILE), &primary.result.report)?;
    let reports: Vec<RunReport> = runs.iter().map(|r| r.result.report.clone()).collect();
    write_ranking(dir, &reports)
}

fn write_ranking(dir: &Path, reports: &[RunReport]) -> Result<Vec<RankRow>, ArtifactError> {
    let rows = compare_runs(reports)?;
    write_file(&dir.join("ranking.csv"), |out| write_ranking_csv(&rows, out))?;
    write_json(&dir.join("ranking.json"), &rows)?;
    Ok(rows)
}

pub fn read_report(path: &Path) -> Result<RunReport, ArtifactError> {
    serde_json::from_reader(open(path)?).map_err(|e| malformed(path, e.to_string()))
}

/// Ranks the primary report of each run directory. Strategies are labelled
/// `<run dir name>/<strategy>`.
pub fn compare_dirs(runs: &[PathBuf], out: &Path) -> Result<Vec<RankRow>, ArtifactError> {
    let mut reports = Vec::with_capacity(runs.len());
    for dir in runs {
        let mut report = read_report(&dir.join(REPORT_FILE))?;
        let label = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        report.strategy = format!("{label}/{}", report.strategy);
        reports.push(report);
    }
    write_ranking(out, &reports)
}

#[derive(Debug, Clone, PartialEq)]
struct EquityRow {
    group_index: usize,
    timestamp: String,
    price: Decimal,
    equity: Decimal,
    position: i8,
}

fn read_equity(path: &Path) -> Result<Vec<EquityRow>, ArtifactError> {
    let mut rows = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if i == 0 {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || malformed(path, format!("line {}", i + 1));
        if f.len() != 6 {
            return Err(bad());
        }
        rows.push(EquityRow {
            group_index: f[0].parse().map_err(|_| bad())?,
            timestamp: f[1].to_string(),
            price: f[2].parse().map_err(|_| bad())?,
            equity: f[3].parse().map_err(|_| bad())?,
            position: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Files written by [`plot_data`], relative to the run directory.
pub const PLOT_FILES: [&str; 4] = ["plot/arbr.csv", "plot/price.csv", "plot/markers.csv", "plot/equity.csv"];

/// Plot-ready series for a completed backtest: AR/BR and prices over the
/// evaluated groups, executed trades of the primary strategy, and every
/// strategy's equity curve in long format.
pub fn plot_data(dir: &Path, arbr_window: usize) -> Result<(), ArtifactError> {
    let report = read_report(&dir.join(REPORT_FILE))?;
    let groups_path = dir.join(GROUPS_FILE);
    let groups = parse_group_csv(open(&groups_path)?).map_err(|e| malformed(&groups_path, e.to_string()))?;
    if report.last_group >= groups.len() || report.first_group > report.last_group {
        return Err(malformed(&groups_path, "does not cover the reported range"));
    }
    let range = report.first_group..=report.last_group;
    let bars = ohlcv_series::<f64>(&groups);

    let mut names: Vec<String> = Vec::new();
    let sdir = dir.join(STRATEGIES_DIR);
    for entry in fs::read_dir(&sdir).map_err(|_| ArtifactError::Missing(sdir.clone()))? {
        let entry = entry.map_err(io_err(&sdir))?;
        if entry.path().join("equity.csv").exists() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    let mut curves = Vec::with_capacity(names.len());
    for name in &names {
        curves.push((name.as_str(), read_equity(&sdir.join(name).join("equity.csv"))?));
    }
    let primary = curves
        .iter()
        .find(|(n, _)| *n == report.strategy)
        .ok_or_else(|| ArtifactError::Missing(sdir.join(&report.strategy).join("equity.csv")))?;

    let plot = dir.join(PLOT_DIR);
    write_file(&plot.join("arbr.csv"), |out| {
        writeln!(out, "group_index,timestamp,ar,br")?;
        for g in range.clone() {
            let v = ArBrValue::at(&bars, g, arbr_window);
            writeln!(out, "{g},{},{},{}", format_timestamp(&groups[g].timestamp), opt(v.ar), opt(v.br))?;
        }
        Ok(())
    })?;
    write_file(&plot.join("price.csv"), |out| {
        writeln!(out, "group_index,timestamp,close")?;
        for g in range.clone() {
            writeln!(out, "{g},{},{}", format_timestamp(&groups[g].timestamp), groups[g].close)?;
        }
        Ok(())
    })?;
    write_file(&plot.join("markers.csv"), |out| {
        writeln!(out, "group_index,timestamp,side,price,position")?;
        let mut prev = 0i8;
        for row in &primary.1 {
            if row.position != prev {
                let side = if row.position > prev { "buy" } else { "sell" };
                writeln!(out, "{},{},{side},{},{}", row.group_index, row.timestamp, row.price, row.position)?;
            }
            prev = row.position;
        }
        Ok(())
    })?;
    write_file(&plot.join("equity.csv"), |out| {
        writeln!(out, "strategy,group_index,timestamp,equity")?;
        for (name, rows) in &curves {
            for row in rows {
                writeln!(out, "{name},{},{},{}", row.group_index, row.timestamp, row.equity)?;
            }
        }
        Ok(())
    })
}
