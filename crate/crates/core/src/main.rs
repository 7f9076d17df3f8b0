use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use drqn_arbr::artifacts::{self, ArtifactError, BARS_FILE, GROUPS_FILE};
use drqn_arbr::config::{ConfigError, RunConfig};
use drqn_arbr::market_data::{group_bars, parse_ohlcv_csv, validate_series, write_bars_csv, write_group_csv, DataError};
use drqn_arbr::pipeline::{self, PipelineError};
use drqn_arbr::synth::generate;

#[derive(Parser)]
#[command(name = "drqn-arbr", version, about = "Recurrent Q-learning trading harness with ARBR signal fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (dotted-key TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` and `generator.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output (run) directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// CSV of 1-minute bars; overrides `data.path`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and group a bar CSV.
    Ingest,
    /// Generate a synthetic bar series from `generator.*`.
    Synth,
    /// Emit AR, BR and the indicator suite per group.
    Indicators,
    /// Emit the state matrix per group.
    States,
    /// Train the agents on the leading share of the data.
    Train,
    /// Backtest every strategy on the held-out groups using saved checkpoints.
    Backtest,
    /// Rank the primary reports of several run directories.
    Compare { runs: Vec<PathBuf> },
    /// Emit plot-ready series for a completed run.
    PlotData,
}

enum Failure {
    Usage(String),
    Config(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Config(_) => 3,
            Failure::Data(_) => 4,
            Failure::Runtime(_) => 1,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Config(m) => ("config", m),
            Failure::Data(m) => ("data", m),
            Failure::Runtime(m) => ("runtime", m),
        };
        format!("error[{kind}]: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ArtifactError> for Failure {
    fn from(e: ArtifactError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(e) => e.into(),
            PipelineError::Data(e) => e.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        if let Some(g) = cfg.generator.as_mut() {
            g.seed = seed;
        }
    }
    if let Some(data) = &cli.data {
        cfg.data.path = Some(data.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    cli.out.as_deref().ok_or_else(|| Failure::Usage("--out is required".into()))
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let out = out_dir(cli)?;
    if let Command::Compare { runs } = &cli.command {
        if runs.len() < 2 {
            return Err(Failure::Usage("compare needs at least two run directories".into()));
        }
        let cfg = resolve(cli)?;
        artifacts::compare_dirs(runs, out)?;
        artifacts::write_config(out, &cfg)?;
        return Ok(());
    }
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Ingest => {
            let path = cfg.data.path.as_ref().ok_or(ConfigError::MissingData)?;
            let file = File::open(path).map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())))?;
            let bars = parse_ohlcv_csv(BufReader::new(file))?;
            let report = validate_series(&bars);
            let text = serde_json::to_string_pretty(&report).expect("serializable");
            artifacts::write_file(&out.join("validation.json"), |w| std::io::Write::write_all(w, format!("{text}\n").as_bytes()))?;
            if !report.is_clean() {
                return Err(Failure::Data(format!("{} bar invariant violations", report.violations.len())));
            }
            let groups = group_bars(&bars, cfg.data.group_size)?.groups;
            artifacts::write_file(&out.join(BARS_FILE), |w| write_bars_csv(&bars, w))?;
            artifacts::write_file(&out.join(GROUPS_FILE), |w| write_group_csv(&groups, w))?;
        }
        Command::Synth => {
            let spec = cfg.generator.as_ref().ok_or_else(|| Failure::Config("synth needs generator.kind".into()))?;
            let bars = generate(spec).map_err(Failure::Config)?;
            artifacts::write_file(&out.join(BARS_FILE), |w| write_bars_csv(&bars, w))?;
        }
        Command::Indicators => {
            let ds = pipeline::load_dataset(&cfg)?;
            artifacts::write_file(&out.join("indicators.csv"), |w| {
                artifacts::write_indicators_csv(&ds.groups, cfg.state.arbr_window, w)
            })?;
        }
        Command::States => {
            let ds = pipeline::load_dataset(&cfg)?;
            artifacts::write_file(&out.join("states.csv"), |w| artifacts::write_states_csv(&ds.states, &cfg.state, w))?;
        }
        Command::Train => {
            let ds = pipeline::load_dataset(&cfg)?;
            let models = pipeline::train_models(&cfg, &ds)?;
            artifacts::save_models(out, &models)?;
        }
        Command::Backtest => {
            let ds = pipeline::load_dataset(&cfg)?;
            let nets = artifacts::load_nets(out)?;
            let runs = pipeline::evaluate(&cfg, &ds, &nets)?;
            artifacts::write_backtest(out, &ds.groups, &runs)?;
        }
        Command::PlotData => artifacts::plot_data(out, cfg.state.arbr_window)?,
        Command::Compare { .. } => unreachable!("handled above"),
    }
    artifacts::write_config(out, &cfg)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            let failure = Failure::Usage(first);
            eprintln!("{}", failure.line());
            return ExitCode::from(failure.code());
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.line());
            ExitCode::from(failure.code())
        }
    }
}
