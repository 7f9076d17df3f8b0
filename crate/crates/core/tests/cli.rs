use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drqn_arbr::artifacts::PLOT_FILES;
use drqn_arbr::backtest::RunReport;
use drqn_arbr::config::RunConfig;
use drqn_arbr::pipeline;

const SMALL: &str = "seed = 2\n\
generator.kind = \"regime_switch\"\n\
generator.length = 9000\n\
generator.seed = 8\n\
agent.episodes = 3\n\
agent.max_train_steps = 40\n\
agent.epsilon_decay_steps = 400\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drqn-arbr"))
}

fn run(args: &[&str], config: Option<&Path>, out: Option<&Path>) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    if let Some(o) = out {
        cmd.arg("--out").arg(o);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str], config: &Path, out: &Path) {
    let o = run(args, Some(config), Some(out));
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn single_error_line(o: &Output, kind: &str) {
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{kind}]: ")), "{err}");
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

fn full_run(config: &Path, out: &Path) {
    for cmd in ["train", "backtest", "plot-data"] {
        ok(&[cmd], config, out);
    }
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth"], &cfg, &a);
    ok(&["synth"], &cfg, &b);
    for file in ["bars.csv", "config.toml"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
    }
    assert_eq!(lines(&a.join("bars.csv")).len(), 9001);
    let resolved = RunConfig::load(&a.join("config.toml")).unwrap();
    assert_eq!(resolved, RunConfig::parse(SMALL).unwrap());
}

#[test]
fn error_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");

    let o = run(&["train"], None, Some(&out));
    assert_eq!(o.status.code(), Some(3));
    single_error_line(&o, "config");

    let bad = write_config(tmp.path(), "agent.batch = 4\n");
    let o = run(&["train"], Some(&bad), Some(&out));
    assert_eq!(o.status.code(), Some(3));
    single_error_line(&o, "config");

    let csv = tmp.path().join("bars.csv");
    fs::write(&csv, "timestamp,open,high,low,close,volume\n2020-01-01T00:00:00Z,1,2,oops,1,1\n").unwrap();
    let o = bin().args(["ingest", "--data"]).arg(&csv).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(4));
    single_error_line(&o, "data");

    let o = run(&["frobnicate"], None, Some(&out));
    assert_eq!(o.status.code(), Some(2));
    single_error_line(&o, "usage");

    let o = run(&["train"], None, None);
    assert_eq!(o.status.code(), Some(2));
    single_error_line(&o, "usage");

    let cfg = write_config(tmp.path(), SMALL);
    let o = run(&["backtest"], Some(&cfg), Some(&tmp.path().join("empty")));
    assert_eq!(o.status.code(), Some(1));
    single_error_line(&o, "runtime");
}

#[test]
fn ingest_indicators_and_states() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let gen = tmp.path().join("gen");
    ok(&["synth"], &cfg, &gen);
    let data = gen.join("bars.csv");
    let out = tmp.path().join("ing");
    let o = bin().args(["ingest", "--data"]).arg(&data).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&out.join("groups.csv")).len(), 301);
    assert_eq!(fs::read(out.join("bars.csv")).unwrap(), fs::read(&data).unwrap());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["bar_count"], 9000);

    ok(&["indicators"], &cfg, &out);
    let ind = lines(&out.join("indicators.csv"));
    assert_eq!(ind.len(), 301);
    assert!(ind[0].starts_with("group_index,ar,br,"));
    assert!(ind.iter().all(|l| l.split(',').count() == 23));

    ok(&["states"], &cfg, &out);
    let states = lines(&out.join("states.csv"));
    assert_eq!(states.len(), 301);
    assert!(states.iter().all(|l| l.split(',').count() == 32));
    assert!(states[1].ends_with(",0"));
    assert!(states[300].ends_with(",1"));
}

#[test]
fn checkpoint_round_trip_matches_in_process_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    ok(&["train"], &cfg_path, &out);
    ok(&["backtest"], &cfg_path, &out);

    let cfg = RunConfig::parse(SMALL).unwrap();
    let (_, models, runs) = pipeline::run(&cfg).unwrap();
    assert_eq!(models.len(), 2);
    assert_eq!(runs.len(), 6);
    for r in &runs {
        let file = out.join("strategies").join(r.name()).join("report.json");
        let saved: RunReport = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
        assert_eq!(saved, r.result.report, "{}", r.name());
        let mut equity = Vec::new();
        drqn_arbr::backtest::write_equity_csv(&r.result.points, &mut equity).unwrap();
        assert_eq!(fs::read(file.with_file_name("equity.csv")).unwrap(), equity);
    }
    let metrics = lines(&out.join("drqn_metrics.csv"));
    assert_eq!(metrics.len(), 41);
}

#[test]
fn plot_data_schema_and_markers() {
    let tmp = tempfile::tempdir().unwrap();
    let trained = SMALL
        .replace("length = 9000", "length = 12000")
        .replace("episodes = 3", "episodes = 100")
        .replace("max_train_steps = 40", "max_train_steps = 600")
        .replace("decay_steps = 400", "decay_steps = 600");
    let cfg = write_config(tmp.path(), &trained);
    let out = tmp.path().join("run");
    full_run(&cfg, &out);

    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.strategy, "arbr_drqn");
    let n = report.group_count;
    for f in PLOT_FILES {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(lines(&out.join("plot/arbr.csv")).len(), n + 1);
    assert_eq!(lines(&out.join("plot/price.csv")).len(), n + 1);
    let strategies = fs::read_dir(out.join("strategies")).unwrap().count();
    assert_eq!(strategies, 6);
    assert_eq!(lines(&out.join("plot/equity.csv")).len(), n * strategies + 1);

    let sdir = out.join("strategies").join("arbr_drqn");
    let fills = lines(&sdir.join("fills.csv"));
    let executed: BTreeSet<String> = fills[1..].iter().map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",")).collect();
    assert!(fills.len() > 1, "primary strategy made no trades");
    let markers = lines(&out.join("plot/markers.csv"));
    assert_eq!(markers.len(), fills.len());
    let marked: BTreeSet<String> = markers[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{},{}", f[1], f[2])
        })
        .collect();
    assert_eq!(marked, executed);
    let trace = lines(&sdir.join("trace.csv"));
    let traded: BTreeSet<&str> =
        trace[1..].iter().filter(|l| l.split(',').nth(6) != Some("0")).map(|l| l.split(',').next().unwrap()).collect();
    for m in &markers[1..] {
        assert!(traded.contains(m.split(',').next().unwrap()), "{m}");
    }
}

#[test]
fn zero_trade_run_has_empty_marker_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}arbr.ar_buy = 0.0\narbr.br_buy = 0.0\neval.train_dense = false\n"));
    let out = tmp.path().join("run");
    full_run(&cfg, &out);
    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.trade_count, 0);
    assert_eq!(lines(&out.join("plot/markers.csv")), vec!["group_index,timestamp,side,price,position"]);
}

#[test]
fn compare_four_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let base = format!("{SMALL}eval.train_dense = false\n").replace("seed = 2\n", "");
    let mut dirs = Vec::new();
    for seed in 0..4 {
        let cfg = write_config(tmp.path(), &format!("seed = {seed}\n{base}"));
        let dir = tmp.path().join(format!("run{seed}"));
        ok(&["train"], &cfg, &dir);
        ok(&["backtest"], &cfg, &dir);
        dirs.push(dir);
    }
    let out = tmp.path().join("cmp");
    let o = bin().arg("compare").args(&dirs).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(&out.join("ranking.csv"));
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0], drqn_arbr::backtest::RANKING_HEADER);
    let labels: BTreeSet<String> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().to_string()).collect();
    let expected: BTreeSet<String> = (0..4).map(|s| format!("run{s}/arbr_drqn")).collect();
    assert_eq!(labels, expected);
    let incomes: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(incomes.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn shipped_configs_parse() {
    for text in [include_str!("../../../configs/regime.toml"), include_str!("../../../configs/sine.toml")] {
        let cfg = RunConfig::parse(text).unwrap();
        assert!(cfg.generator.is_some());
        assert_eq!(RunConfig::parse(&cfg.to_flat_toml()).unwrap(), cfg);
    }
}
