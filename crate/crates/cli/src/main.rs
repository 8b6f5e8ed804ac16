//! `pipetrack`: simulate, fit, evaluate, replay and serve from one binary.
//!
//! Exit codes: 0 on success, 2 for usage errors and missing input files,
//! 1 for any other failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pipetrack_core::Technique;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "pipetrack", version, about = "RFID pipe tracking: simulation, ranging, evaluation and the live service")]
struct Cli {
    /// Log filter, e.g. `info` or `pipetrack_tracking=debug`.
    #[arg(long, global = true, env = "PIPETRACK_LOG_LEVEL", default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a built-in scenario as JSON.
    Scenario(ScenarioArgs),
    /// Run a scenario; write the sample stream and the ground truth.
    Simulate(SimulateArgs),
    /// Generate a ranging sweep (distance,rss CSV) from a path-loss model.
    Sweep(SweepArgs),
    /// Fit a path-loss model to a ranging sweep.
    Fit(FitArgs),
    /// Score combining pipelines against ground truth.
    Eval(EvalArgs),
    /// Play a sample log back to stdout or a TCP feed.
    Replay(ReplayArgs),
    /// Run the tracking service.
    Serve(ServeArgs),
    /// Rewrite a sample log without malformed or old records.
    Compact(CompactArgs),
}

/// A scenario file or a built-in preset.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct ScenarioSource {
    /// Scenario JSON file.
    #[arg(long, env = "PIPETRACK_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Built-in scenario: workshop, crossing, passive-bench or active-bench.
    #[arg(long, env = "PIPETRACK_PRESET")]
    preset: Option<String>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long, env = "PIPETRACK_PRESET")]
    preset: String,
    #[arg(long, env = "PIPETRACK_SEED", default_value_t = 7)]
    seed: u64,
    /// Destination file; stdout when absent.
    #[arg(long, env = "PIPETRACK_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Seconds of simulated time; defaults to the end of the last trajectory.
    #[arg(long, env = "PIPETRACK_DURATION")]
    duration: Option<f64>,
    /// Overrides the scenario seed.
    #[arg(long, env = "PIPETRACK_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "PIPETRACK_EPOCH_MS")]
    epoch_ms: Option<i64>,
    /// Output directory for samples.jsonl and truth.jsonl.
    #[arg(long, env = "PIPETRACK_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Model record to sample from; overrides --rss-d0, --n and --sigma.
    #[arg(long, env = "PIPETRACK_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, env = "PIPETRACK_RSS_D0", default_value_t = -54.5, allow_negative_numbers = true)]
    rss_d0: f64,
    #[arg(long, env = "PIPETRACK_N", default_value_t = 1.8638)]
    n: f64,
    #[arg(long, env = "PIPETRACK_SIGMA", default_value_t = 3.0)]
    sigma: f64,
    /// First station, meters.
    #[arg(long, env = "PIPETRACK_FROM", default_value_t = 1.0)]
    from: f64,
    /// Last station, meters.
    #[arg(long, env = "PIPETRACK_TO", default_value_t = 12.0)]
    to: f64,
    #[arg(long, env = "PIPETRACK_STEP", default_value_t = 1.0)]
    step: f64,
    /// Readings per station.
    #[arg(long, env = "PIPETRACK_PER_STATION", default_value_t = 100)]
    per_station: usize,
    #[arg(long, env = "PIPETRACK_SEED", default_value_t = 7)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long, env = "PIPETRACK_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Ranging CSV with distance,rss rows.
    #[arg(long, env = "PIPETRACK_SAMPLES")]
    samples: PathBuf,
    /// Reference distance, meters.
    #[arg(long, env = "PIPETRACK_D0", default_value_t = 1.0)]
    d0: f64,
    /// Where to write the fitted model record.
    #[arg(long, env = "PIPETRACK_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Filtering {
    On,
    Off,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CalibrationArg {
    /// Invert ranges with each tag class's own model.
    Class,
    /// Fit a model per pipeline to its combined output.
    Fitted,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Sample log (one record per line).
    #[arg(long, env = "PIPETRACK_SAMPLES")]
    samples: PathBuf,
    /// Ground-truth stream (one record per line).
    #[arg(long, env = "PIPETRACK_TRUTH")]
    truth: PathBuf,
    /// Techniques to score; all five when absent.
    #[arg(long, env = "PIPETRACK_TECHNIQUE", value_delimiter = ',', value_parser = parse_technique)]
    technique: Vec<Technique>,
    /// Antenna subset sizes.
    #[arg(long, env = "PIPETRACK_ANTENNAS", value_delimiter = ',', default_value = "2,4")]
    antennas: Vec<usize>,
    #[arg(long, env = "PIPETRACK_FILTERED", value_enum, default_value_t = Filtering::Both)]
    filtered: Filtering,
    /// Extra rows restricted to true distances up to each limit, meters.
    #[arg(long, env = "PIPETRACK_RANGES", value_delimiter = ',')]
    ranges: Vec<f64>,
    #[arg(long, env = "PIPETRACK_CALIBRATION", value_enum, default_value_t = CalibrationArg::Class)]
    calibration: CalibrationArg,
    /// Model record used for ranging instead of the tag-class models.
    #[arg(long, env = "PIPETRACK_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, env = "PIPETRACK_EPOCH_MS")]
    epoch_ms: Option<i64>,
    /// CSV destination; stdout when absent.
    #[arg(long, env = "PIPETRACK_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long, env = "PIPETRACK_LOG")]
    log: PathBuf,
    /// Playback speed multiplier; `inf` for no pacing.
    #[arg(long, env = "PIPETRACK_SPEED", default_value = "inf", value_parser = parse_speed)]
    speed: f64,
    /// TCP sample feed to send to, e.g. 127.0.0.1:7070; stdout when absent.
    #[arg(long, env = "PIPETRACK_TO")]
    to: Option<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Service configuration JSON.
    #[arg(long, env = "PIPETRACK_CONFIG")]
    config: PathBuf,
    /// HTTP port; overrides the config.
    #[arg(long, env = "PIPETRACK_PORT")]
    port: Option<u16>,
    /// TCP sample feed port; overrides the config.
    #[arg(long, env = "PIPETRACK_INGEST_PORT")]
    ingest_port: Option<u16>,
    /// Sample log to feed into the service.
    #[arg(long, env = "PIPETRACK_REPLAY")]
    replay: Option<PathBuf>,
    /// Replay speed multiplier; `inf` for no pacing.
    #[arg(long, env = "PIPETRACK_SPEED", default_value = "1", value_parser = parse_speed)]
    speed: f64,
    /// Model record; overrides the config.
    #[arg(long, env = "PIPETRACK_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, env = "PIPETRACK_TECHNIQUE", value_parser = parse_technique)]
    technique: Option<Technique>,
    #[arg(long, env = "PIPETRACK_EPOCH_MS")]
    epoch_ms: Option<i64>,
}

#[derive(Debug, Args)]
struct CompactArgs {
    #[arg(long, env = "PIPETRACK_LOG")]
    log: PathBuf,
    /// Drop records older than this time, ms.
    #[arg(long, env = "PIPETRACK_KEEP_FROM")]
    keep_from: Option<i64>,
}

fn parse_technique(s: &str) -> Result<Technique, String> {
    s.parse::<Technique>().map_err(|e| e.to_string())
}

fn parse_speed(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("speed must be positive, got {s}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = EnvFilter::try_new(&cli.log_level).unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let result = match cli.command {
        Command::Scenario(a) => commands::scenario(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Replay(a) => commands::replay(a),
        Command::Serve(a) => commands::serve(a),
        Command::Compact(a) => commands::compact(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
