use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use pipetrack_core::channel::{mse, read_ranging_csv, write_ranging_csv};
use pipetrack_core::ingest::{self, ReplaySpeed};
use pipetrack_core::sim::{self, presets, Calibration, EvalConfig, Scenario, TruthRecord};
use pipetrack_core::{fit_model, PathLossModel, PipelineSpec, Technique};
use pipetrack_tracking::{build_tracker, start, ServiceConfig};

use crate::{
    CalibrationArg, CompactArgs, EvalArgs, FitArgs, Filtering, ReplayArgs, ScenarioArgs, ScenarioSource, ServeArgs,
    SimulateArgs, SweepArgs,
};

/// Failures that exit with status 2: bad arguments and missing inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("no such file: {}", path.display())))
    }
}

fn load_model(path: &Path) -> Result<PathLossModel> {
    require_file(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PathLossModel::from_record(&text).with_context(|| format!("model record {}", path.display()))
}

fn load_scenario(source: &ScenarioSource, seed: Option<u64>) -> Result<Scenario> {
    let mut scenario = match (&source.scenario, &source.preset) {
        (Some(path), _) => {
            require_file(path)?;
            Scenario::load(path).with_context(|| format!("scenario {}", path.display()))?
        }
        (None, Some(name)) => preset(name, seed.unwrap_or(7))?,
        (None, None) => return Err(usage("one of --scenario or --preset is required")),
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn preset(name: &str, seed: u64) -> Result<Scenario> {
    presets::by_name(name, seed)
        .ok_or_else(|| usage(format!("unknown preset `{name}` (expected one of {})", presets::NAMES.join(", "))))
}

/// Writes to `path`, or stdout when absent.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn scenario(a: ScenarioArgs) -> Result<()> {
    let s = preset(&a.preset, a.seed)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "{}", s.to_json())?;
    out.flush()?;
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut scenario = load_scenario(&a.source, a.seed)?;
    if let Some(e) = a.epoch_ms {
        scenario.epoch_ms = e;
    }
    let duration_ms = match a.duration {
        Some(d) if !(d.is_finite() && d >= 0.0) => return Err(usage(format!("--duration must be >= 0, got {d}"))),
        Some(d) => (d * 1000.0).round() as i64,
        None => scenario.natural_duration(),
    };
    let run = sim::run(&scenario, duration_ms)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let samples_path = a.out.join("samples.jsonl");
    let truth_path = a.out.join("truth.jsonl");
    let file = File::create(&samples_path).with_context(|| format!("creating {}", samples_path.display()))?;
    ingest::write_records(BufWriter::new(file), &run.samples)?;
    let file = File::create(&truth_path).with_context(|| format!("creating {}", truth_path.display()))?;
    let mut w = BufWriter::new(file);
    for r in &run.truth {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    println!("tags: {}", scenario.tags.len());
    println!("epochs: {}", run.stats.epochs);
    println!("samples: {}", run.stats.samples);
    println!("dropout rate: {:.4}", run.stats.dropout_rate());
    println!("wrote {} and {}", samples_path.display(), truth_path.display());
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => PathLossModel::new(a.rss_d0, a.n).with_sigma(a.sigma),
    };
    if !(a.step > 0.0 && a.from > 0.0 && a.to >= a.from) {
        return Err(usage("stations need 0 < --from <= --to and --step > 0"));
    }
    let count = ((a.to - a.from) / a.step + 1e-9).floor() as usize + 1;
    let distances: Vec<f64> = (0..count).map(|k| a.from + k as f64 * a.step).collect();
    let samples = sim::ranging_sweep(&model, &distances, a.per_station, a.seed)?;
    write_ranging_csv(output(a.out.as_deref())?, &samples)?;
    Ok(())
}

pub fn fit(a: FitArgs) -> Result<()> {
    require_file(&a.samples)?;
    let file = File::open(&a.samples).with_context(|| format!("opening {}", a.samples.display()))?;
    let samples = read_ranging_csv(io::BufReader::new(file)).with_context(|| format!("reading {}", a.samples.display()))?;
    let model = fit_model(&samples, a.d0)?;
    let residual = mse(&model, &samples)?;
    println!("n: {:.4}", model.n);
    println!("rss_d0: {:.4}", model.rss_d0);
    println!("sigma: {:.4}", model.sigma);
    println!("mse: {residual:.4}");
    if let Some(out) = &a.out {
        fs::write(out, model.to_record()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    require_file(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut scenario = load_scenario(&a.source, None)?;
    require_file(&a.samples)?;
    let scan = ingest::read_log(&a.samples).with_context(|| format!("reading {}", a.samples.display()))?;
    if !scan.skipped.is_empty() {
        tracing::warn!(count = scan.skipped.len(), "malformed sample records skipped");
    }
    let truth = read_truth(&a.truth)?;
    if let Some(p) = &a.model {
        let model = load_model(p)?;
        for class in &mut scenario.tag_classes {
            class.model = model;
        }
    }

    let techniques = if a.technique.is_empty() { Technique::ALL.to_vec() } else { a.technique };
    if a.antennas.contains(&0) {
        return Err(usage("--antennas entries must be positive"));
    }
    let pipelines: Vec<PipelineSpec> = PipelineSpec::matrix(&techniques, &a.antennas)
        .into_iter()
        .filter(|p| match a.filtered {
            Filtering::On => p.filtered,
            Filtering::Off => !p.filtered,
            Filtering::Both => true,
        })
        .collect();
    let cfg = EvalConfig {
        pipelines,
        range_limits: a.ranges,
        calibration: match a.calibration {
            CalibrationArg::Class => Calibration::ClassModel,
            CalibrationArg::Fitted => Calibration::Fitted,
        },
        epoch_ms: a.epoch_ms,
        ..Default::default()
    };
    let report = sim::evaluate(&scenario, &scan.samples, &truth, &cfg)?;
    let mut out = output(a.out.as_deref())?;
    out.write_all(report.to_csv().as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn replay(a: ReplayArgs) -> Result<()> {
    require_file(&a.log)?;
    let samples = ingest::replay(&a.log, ReplaySpeed::from_factor(a.speed))
        .with_context(|| format!("reading {}", a.log.display()))?;
    let paced = a.speed.is_finite();
    let (mut out, target): (Box<dyn Write>, String) = match &a.to {
        Some(addr) => {
            let stream = std::net::TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
            (Box::new(BufWriter::new(stream)), addr.clone())
        }
        None => (Box::new(BufWriter::new(io::stdout().lock())), "stdout".into()),
    };
    let mut sent = 0u64;
    for s in samples {
        writeln!(out, "{}", s.to_line()).with_context(|| format!("writing to {target}"))?;
        if paced {
            out.flush()?;
        }
        sent += 1;
    }
    out.flush()?;
    tracing::info!(sent, %target, "replay finished");
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    require_file(&a.config)?;
    let mut cfg = ServiceConfig::load(&a.config).with_context(|| format!("config {}", a.config.display()))?;
    if let Some(port) = a.port {
        cfg.ports.http = port;
    }
    if let Some(port) = a.ingest_port {
        cfg.ports.ingest = Some(port);
    }
    if let Some(p) = &a.model {
        cfg.model = load_model(p)?;
    }
    if let Some(t) = a.technique {
        cfg.technique = t;
    }
    if let Some(e) = a.epoch_ms {
        cfg.epoch_ms = e;
    }
    cfg.validate()?;
    let source = match &a.replay {
        Some(path) => {
            require_file(path)?;
            Some(
                ingest::replay(path, ReplaySpeed::from_factor(a.speed))
                    .with_context(|| format!("reading {}", path.display()))?,
            )
        }
        None => None,
    };

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let tracker = build_tracker(&cfg)?;
        let running = start(&cfg, tracker, source).await?;
        println!("listening on http://{}", running.addr());
        if let Some(feed) = running.ingest_addr() {
            println!("sample feed on tcp://{feed}");
        }
        io::stdout().flush()?;
        shutdown_signal().await;
        tracing::info!("shutting down");
        match tokio::time::timeout(Duration::from_secs(5), running.stop()).await {
            Ok(r) => r?,
            Err(_) => bail!("server did not stop within 5 s"),
        }
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        if let Err(e) = tokio::signal::ctrl_c().await {
            tracing::error!("cannot listen for ctrl-c: {e}");
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                tracing::error!("cannot listen for SIGTERM: {e}");
                std::future::pending::<()>().await;
            }
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

pub fn compact(a: CompactArgs) -> Result<()> {
    require_file(&a.log)?;
    let stats = ingest::compact(&a.log, a.keep_from).with_context(|| format!("compacting {}", a.log.display()))?;
    println!("kept: {}", stats.kept);
    println!("malformed: {}", stats.malformed);
    println!("expired: {}", stats.expired);
    Ok(())
}

