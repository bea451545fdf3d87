use std::fs::{self, File};
use std::io::{BufReader, ErrorKind, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use swarmlink::metrics::{reaction_correctness, MetricsReport, ReactionCurve, DEFAULT_BIN_MS, DEFAULT_HORIZON_MS};
use swarmlink::scenario::{load_scenario, preset, preset_dir, PRESETS};
use swarmlink::sim::run_scenario_seeded;
use swarmlink::tactile::{encode_pattern, PatternId};
use swarmlink::trace::read_events;
use swarmlink::{HandTrace, Scenario, TraceLog};
use swarmlink_server::{serve, Mode, ServerConfig, Session};

#[derive(Parser)]
#[command(name = "sim", version, about = "Hand-guided drone swarm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headlessly and write trace.csv and events.jsonl.
    Run {
        /// Scenario file or preset name.
        scenario: String,
        /// Hand trace CSV (t,x,y,z); defaults to the scenario's own.
        #[arg(long)]
        hand_trace: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Ticks to simulate; defaults to the scenario duration or trace span.
        #[arg(long)]
        ticks: Option<u64>,
        /// Named obstacle layout to activate.
        #[arg(long)]
        layout: Option<String>,
        /// Disable obstacle avoidance.
        #[arg(long)]
        no_apf: bool,
        /// Recorded in the trace header; the simulator is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute run metrics for a trace and print a JSON report.
    Metrics {
        trace: PathBuf,
        /// Event log; defaults to events.jsonl next to the trace.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Write the reaction-correctness curve as CSV.
        #[arg(long)]
        curve_out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HORIZON_MS)]
        horizon_ms: f64,
        #[arg(long, default_value_t = DEFAULT_BIN_MS)]
        bin_ms: f64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a live session over websocket.
    Serve {
        scenario: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Visual)]
        mode: ModeArg,
        /// Broadcast a state frame every N ticks.
        #[arg(long, default_value_t = 2)]
        decimation: u32,
        #[arg(long)]
        layout: Option<String>,
    },
    /// Print tactile pattern timelines.
    Patterns {
        /// Pattern id (EI, ED, RI, RD, CI, CD, R, L, CR, CL, ER, EL); all when omitted.
        #[arg(long)]
        emit: Option<String>,
        #[arg(long, value_enum, default_value_t = PatternFormat::Json)]
        format: PatternFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Visual,
    Blind,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternFormat {
    Json,
    Device,
}

/// Writes to stdout; a closed pipe ends output quietly.
fn write_stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

/// A scenario argument is a path if one exists, else a preset name.
fn resolve_scenario(arg: &str) -> Result<(Scenario, PathBuf)> {
    let path = Path::new(arg);
    if path.exists() {
        let s = load_scenario(path).with_context(|| format!("loading {arg}"))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        return Ok((s, base));
    }
    if PRESETS.contains(&arg) {
        return Ok((preset(arg)?, preset_dir()));
    }
    bail!("`{arg}` is neither a scenario file nor a preset ({})", PRESETS.join(", "))
}

fn read_trace(path: &Path) -> Result<TraceLog> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TraceLog::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn cmd_run(
    scenario: &str,
    hand_trace: Option<PathBuf>,
    out: &Path,
    ticks: Option<u64>,
    layout: Option<String>,
    no_apf: bool,
    seed: Option<u64>,
) -> Result<()> {
    let (mut scenario, base) = resolve_scenario(scenario)?;
    if let Some(name) = layout {
        scenario = scenario.with_layout(&name)?;
    }
    if no_apf {
        scenario.apf.enabled = false;
    }
    let hand_path = hand_trace.or_else(|| scenario.hand_trace_path(&base));
    let hand = match &hand_path {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            HandTrace::read(f).with_context(|| format!("reading {}", p.display()))?
        }
        None => HandTrace::empty(),
    };
    let trace = run_scenario_seeded(&scenario, &hand, ticks, seed)?;
    fs::create_dir_all(out)?;
    trace.write_csv(File::create(out.join("trace.csv"))?)?;
    trace.write_events(File::create(out.join("events.jsonl"))?)?;
    eprintln!(
        "{}: {} ticks, {} events -> {}",
        scenario.name,
        trace.rows.len(),
        trace.events.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct FullReport {
    #[serde(flatten)]
    report: MetricsReport,
    reaction_curve: Option<ReactionCurve>,
}

fn cmd_metrics(
    trace_path: &Path,
    events: Option<PathBuf>,
    curve_out: Option<PathBuf>,
    horizon_ms: f64,
    bin_ms: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let trace = read_trace(trace_path)?;
    let report = MetricsReport::new(&trace)?;
    let events_path = events.or_else(|| {
        let p = trace_path.with_file_name("events.jsonl");
        p.exists().then_some(p)
    });
    let curve = match events_path {
        Some(p) => {
            let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
            let events = read_events(BufReader::new(f))?;
            Some(reaction_correctness(&trace, &events, horizon_ms, bin_ms))
        }
        None => None,
    };
    if let (Some(path), Some(c)) = (&curve_out, &curve) {
        fs::write(path, c.to_csv())?;
    } else if curve_out.is_some() {
        bail!("--curve-out needs an event log");
    }
    let text = serde_json::to_string_pretty(&FullReport {
        report,
        reaction_curve: curve,
    })?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => write_stdout(&(text + "\n"))?,
    }
    Ok(())
}

async fn cmd_serve(scenario: &str, host: &str, port: u16, mode: ModeArg, decimation: u32, layout: Option<String>) -> Result<()> {
    let (mut scenario, _) = resolve_scenario(scenario)?;
    if let Some(name) = layout {
        scenario = scenario.with_layout(&name)?;
    }
    let mode = match mode {
        ModeArg::Visual => Mode::Visual,
        ModeArg::Blind => Mode::Blind,
    };
    let session = Session::new(scenario, mode)?.with_decimation(decimation);
    let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host/port")?;
    let handle = serve(
        session,
        ServerConfig {
            addr,
            ..ServerConfig::default()
        },
    )
    .await?;
    eprintln!("listening on ws://{}/ws", handle.local_addr());
    tokio::signal::ctrl_c().await?;
    if let Some((trace, _)) = handle.shutdown().await {
        eprintln!("session ended after {} ticks", trace.rows.len());
    }
    Ok(())
}

fn cmd_patterns(emit: Option<String>, format: PatternFormat) -> Result<()> {
    let ids: Vec<PatternId> = match emit {
        Some(id) => vec![id.parse()?],
        None => PatternId::ALL.to_vec(),
    };
    for id in ids {
        let p = encode_pattern(id);
        match format {
            PatternFormat::Json => write_stdout(&(serde_json::to_string(&p)? + "\n"))?,
            PatternFormat::Device => write_stdout(&p.to_device_lines())?,
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run {
            scenario,
            hand_trace,
            out,
            ticks,
            layout,
            no_apf,
            seed,
        } => cmd_run(&scenario, hand_trace, &out, ticks, layout, no_apf, seed),
        Command::Metrics {
            trace,
            events,
            curve_out,
            horizon_ms,
            bin_ms,
            out,
        } => cmd_metrics(&trace, events, curve_out, horizon_ms, bin_ms, out),
        Command::Serve {
            scenario,
            port,
            host,
            mode,
            decimation,
            layout,
        } => tokio::runtime::Runtime::new()?.block_on(cmd_serve(&scenario, &host, port, mode, decimation, layout)),
        Command::Patterns { emit, format } => cmd_patterns(emit, format),
    }
}
